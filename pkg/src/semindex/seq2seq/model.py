"""Encoder-decoder identifier generator with per-position decoder parameters.

The encoder is a standard transformer over word tokens. Decoding step ``i``
has its own decoder block (cross-attention to the encoder states, causal
self-attention over the identifier prefix) and its own adaptor block that
reads only the prefix and emits the classification weight matrix for that
step, so the same identifier token can mean different things at different
depths and under different prefixes.

Step logits are ``E_i @ W_i`` where ``E_i`` is the decoder state at the last
prefix position and ``W_i = Linear(E'_i)`` reshaped to (hidden, semid_vocab).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import (
    EmptyBatch,
    InvalidSemId,
    NonFiniteLoss,
    PositionOutOfRange,
    PrefixLengthMismatch,
    TokenOutOfRange,
)
from . import layers as L

PAD_ID = 0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    k: int                      # branch labels 0..k-1
    max_semid_len: int          # tokens incl. root symbol and END
    hidden: int = 64
    enc_layers: int = 2
    heads: int = 4
    max_query_len: int = 64
    dropout: float = 0.1
    adaptor_hidden: int = 32
    ffn_mult: int = 4

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if self.max_semid_len < 2:
            raise ValueError("max_semid_len must be >= 2")

    @property
    def semid_vocab(self) -> int:
        # branch labels, END, and a pad slot for batched targets
        return self.k + 2

    @property
    def end_id(self) -> int:
        return self.k

    @property
    def n_positions(self) -> int:
        return self.max_semid_len - 1


@dataclass
class EncodedQuery:
    """Encoder output for one query: per-position states and the pooled vector."""

    x: np.ndarray          # (T, hidden)
    f_t: np.ndarray        # (hidden,) mean over non-padding positions
    mask: np.ndarray       # (T,) bool, True at real tokens
    degenerate: bool       # True when the query had no real tokens


def _trunc_normal(rng, shape, sigma=0.02):
    return np.clip(rng.normal(0.0, sigma, size=shape), -2 * sigma, 2 * sigma)


def _init_attn(params, prefix, rng, h):
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = _trunc_normal(rng, (h, h))
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.{name}"] = np.zeros(h)


def _init_ln(params, prefix, h):
    params[f"{prefix}.g"] = np.ones(h)
    params[f"{prefix}.b"] = np.zeros(h)


def _init_ffn(params, prefix, rng, h, mult):
    params[f"{prefix}.w1"] = _trunc_normal(rng, (h, mult * h))
    params[f"{prefix}.b1"] = np.zeros(mult * h)
    params[f"{prefix}.w2"] = _trunc_normal(rng, (mult * h, h))
    params[f"{prefix}.b2"] = np.zeros(h)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    h = cfg.hidden
    p: dict[str, np.ndarray] = {}
    p["enc.tok_emb"] = _trunc_normal(rng, (cfg.vocab_size, h))
    p["enc.pos_emb"] = _trunc_normal(rng, (cfg.max_query_len, h))
    for l in range(cfg.enc_layers):
        _init_attn(p, f"enc.{l}.attn", rng, h)
        _init_ln(p, f"enc.{l}.ln1", h)
        _init_ffn(p, f"enc.{l}.ffn", rng, h, cfg.ffn_mult)
        _init_ln(p, f"enc.{l}.ln2", h)
    p["dec.tok_emb"] = _trunc_normal(rng, (cfg.semid_vocab, h))
    p["dec.pos_emb"] = _trunc_normal(rng, (cfg.n_positions, h))
    for i in range(1, cfg.n_positions + 1):
        _init_attn(p, f"dec.{i}.self", rng, h)
        _init_ln(p, f"dec.{i}.ln1", h)
        _init_attn(p, f"dec.{i}.cross", rng, h)
        _init_ln(p, f"dec.{i}.ln2", h)
        _init_ffn(p, f"dec.{i}.ffn", rng, h, cfg.ffn_mult)
        _init_ln(p, f"dec.{i}.ln3", h)
        _init_attn(p, f"adp.{i}.self", rng, h)
        _init_ln(p, f"adp.{i}.ln1", h)
        _init_ffn(p, f"adp.{i}.ffn", rng, h, cfg.ffn_mult)
        _init_ln(p, f"adp.{i}.ln2", h)
    p["adp.down.w"] = _trunc_normal(rng, (h, cfg.adaptor_hidden))
    p["adp.down.b"] = np.zeros(cfg.adaptor_hidden)
    # zero-initialized output projection: every step starts out uniform
    p["adp.proj.w"] = np.zeros((cfg.adaptor_hidden, h * cfg.semid_vocab))
    p["adp.proj.b"] = np.zeros(h * cfg.semid_vocab)
    return p


def _sub(params, prefix):
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}


# --- encoder ---

def _encode_batch(params, cfg, tokens, train=False, rng=None):
    """tokens (B, T) int, PAD_ID at padding. Returns (x, mask, cache)."""
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise TokenOutOfRange(f"query token outside [0, {cfg.vocab_size})")
    b, t = tokens.shape
    if t > cfg.max_query_len:
        raise TokenOutOfRange(f"query length {t} exceeds max {cfg.max_query_len}")
    mask = tokens != PAD_ID
    x = params["enc.tok_emb"][tokens] + params["enc.pos_emb"][:t]
    x, dmask0 = L.dropout_fwd(x, cfg.dropout, rng if train else None)
    layer_caches = []
    for l in range(cfg.enc_layers):
        attn_p = _sub(params, f"enc.{l}.attn")
        a, ca = L.attention_fwd(x, x, attn_p, cfg.heads, key_mask=mask)
        a, dm1 = L.dropout_fwd(a, cfg.dropout, rng if train else None)
        y1, cl1 = L.layernorm_fwd(x + a, params[f"enc.{l}.ln1.g"], params[f"enc.{l}.ln1.b"])
        f, cf = L.ffn_fwd(y1, _sub(params, f"enc.{l}.ffn"))
        f, dm2 = L.dropout_fwd(f, cfg.dropout, rng if train else None)
        x, cl2 = L.layernorm_fwd(y1 + f, params[f"enc.{l}.ln2.g"], params[f"enc.{l}.ln2.b"])
        layer_caches.append((ca, dm1, cl1, cf, dm2, cl2))
    cache = (tokens, dmask0, layer_caches)
    return x, mask, cache


def _encode_bwd(dx, cache, cfg, grads):
    tokens, dmask0, layer_caches = cache
    for l in reversed(range(cfg.enc_layers)):
        ca, dm1, cl1, cf, dm2, cl2 = layer_caches[l]
        dsum2, dg2, db2 = L.layernorm_bwd(dx, cl2)
        grads[f"enc.{l}.ln2.g"] += dg2
        grads[f"enc.{l}.ln2.b"] += db2
        df = L.dropout_bwd(dsum2, dm2)
        dy1_f, fgrads = L.ffn_bwd(df, cf)
        for name, g in fgrads.items():
            grads[f"enc.{l}.ffn.{name}"] += g
        dy1 = dsum2 + dy1_f
        dsum1, dg1, db1 = L.layernorm_bwd(dy1, cl1)
        grads[f"enc.{l}.ln1.g"] += dg1
        grads[f"enc.{l}.ln1.b"] += db1
        da = L.dropout_bwd(dsum1, dm1)
        dq, dkv, agrads = L.attention_bwd(da, ca)
        for name, g in agrads.items():
            grads[f"enc.{l}.attn.{name}"] += g
        dx = dsum1 + dq + dkv
    dx = L.dropout_bwd(dx, dmask0)
    np.add.at(grads["enc.tok_emb"], tokens, dx)
    grads["enc.pos_emb"][: tokens.shape[1]] += dx.sum(axis=0)


# --- one decoding position (main decoder block + adaptor) ---

def _position_fwd(params, cfg, prefix, x_enc, enc_mask, i, train=False, rng=None):
    """prefix (B, i) int; x_enc (B, T, H). Returns (logits (B, V), cache)."""
    h, v = cfg.hidden, cfg.semid_vocab
    rng_ = rng if train else None
    pe_base = params["dec.tok_emb"][prefix] + params["dec.pos_emb"][:i]

    # main decoder block
    pe, dm0 = L.dropout_fwd(pe_base, cfg.dropout, rng_)
    a, ca = L.attention_fwd(pe, pe, _sub(params, f"dec.{i}.self"), cfg.heads, causal=True)
    a, dm1 = L.dropout_fwd(a, cfg.dropout, rng_)
    y1, cl1 = L.layernorm_fwd(pe + a, params[f"dec.{i}.ln1.g"], params[f"dec.{i}.ln1.b"])
    cr, cc = L.attention_fwd(y1, x_enc, _sub(params, f"dec.{i}.cross"), cfg.heads, key_mask=enc_mask)
    cr, dm2 = L.dropout_fwd(cr, cfg.dropout, rng_)
    y2, cl2 = L.layernorm_fwd(y1 + cr, params[f"dec.{i}.ln2.g"], params[f"dec.{i}.ln2.b"])
    f, cf = L.ffn_fwd(y2, _sub(params, f"dec.{i}.ffn"))
    f, dm3 = L.dropout_fwd(f, cfg.dropout, rng_)
    y3, cl3 = L.layernorm_fwd(y2 + f, params[f"dec.{i}.ln3.g"], params[f"dec.{i}.ln3.b"])
    e_dec = y3[:, -1, :]  # (B, H)

    # adaptor block (prefix only)
    ae, am0 = L.dropout_fwd(pe_base, cfg.dropout, rng_)
    aa, aca = L.attention_fwd(ae, ae, _sub(params, f"adp.{i}.self"), cfg.heads, causal=True)
    aa, am1 = L.dropout_fwd(aa, cfg.dropout, rng_)
    ay1, acl1 = L.layernorm_fwd(ae + aa, params[f"adp.{i}.ln1.g"], params[f"adp.{i}.ln1.b"])
    af, acf = L.ffn_fwd(ay1, _sub(params, f"adp.{i}.ffn"))
    af, am2 = L.dropout_fwd(af, cfg.dropout, rng_)
    ay2, acl2 = L.layernorm_fwd(ay1 + af, params[f"adp.{i}.ln2.g"], params[f"adp.{i}.ln2.b"])
    e_tilde = ay2[:, -1, :]
    e_prime, cd = L.linear_fwd_rows(e_tilde, params["adp.down.w"], params["adp.down.b"])
    w_flat, cp = L.linear_fwd_rows(e_prime, params["adp.proj.w"], params["adp.proj.b"])
    w_i = w_flat.reshape(-1, h, v)

    logits = np.einsum("bh,bhv->bv", e_dec, w_i)
    cache = (prefix, i,
             (dm0, ca, dm1, cl1, cc, dm2, cl2, cf, dm3, cl3),
             (am0, aca, am1, acl1, acf, am2, acl2, cd, cp),
             e_dec, w_i)
    return logits, cache


def _position_bwd(dlogits, cache, cfg, params, grads):
    """Returns dx_enc contribution (B, T, H)."""
    prefix, i, main_c, adp_c, e_dec, w_i = cache
    h, v = cfg.hidden, cfg.semid_vocab
    b = prefix.shape[0]

    de = np.einsum("bv,bhv->bh", dlogits, w_i)
    dw_flat = np.einsum("bh,bv->bhv", e_dec, dlogits).reshape(b, h * v)

    # adaptor side
    am0, aca, am1, acl1, acf, am2, acl2, cd, cp = adp_c
    de_prime, dwp, dbp = L.linear_bwd(dw_flat, cp)
    grads["adp.proj.w"] += dwp
    grads["adp.proj.b"] += dbp
    de_tilde, dwd, dbd = L.linear_bwd(de_prime, cd)
    grads["adp.down.w"] += dwd
    grads["adp.down.b"] += dbd
    day2 = np.zeros((b, i, h))
    day2[:, -1, :] = de_tilde
    dsum2, dg, db = L.layernorm_bwd(day2, acl2)
    grads[f"adp.{i}.ln2.g"] += dg
    grads[f"adp.{i}.ln2.b"] += db
    daf = L.dropout_bwd(dsum2, am2)
    day1_f, fgrads = L.ffn_bwd(daf, acf)
    for name, g in fgrads.items():
        grads[f"adp.{i}.ffn.{name}"] += g
    day1 = dsum2 + day1_f
    dsum1, dg, db = L.layernorm_bwd(day1, acl1)
    grads[f"adp.{i}.ln1.g"] += dg
    grads[f"adp.{i}.ln1.b"] += db
    daa = L.dropout_bwd(dsum1, am1)
    dq, dkv, agrads = L.attention_bwd(daa, aca)
    for name, g in agrads.items():
        grads[f"adp.{i}.self.{name}"] += g
    dae = dsum1 + dq + dkv
    dpe_base = L.dropout_bwd(dae, am0)

    # main decoder side
    dm0, ca, dm1, cl1, cc, dm2, cl2, cf, dm3, cl3 = main_c
    dy3 = np.zeros((b, i, h))
    dy3[:, -1, :] = de
    dsum3, dg, db = L.layernorm_bwd(dy3, cl3)
    grads[f"dec.{i}.ln3.g"] += dg
    grads[f"dec.{i}.ln3.b"] += db
    df = L.dropout_bwd(dsum3, dm3)
    dy2_f, fgrads = L.ffn_bwd(df, cf)
    for name, g in fgrads.items():
        grads[f"dec.{i}.ffn.{name}"] += g
    dy2 = dsum3 + dy2_f
    dsum2m, dg, db = L.layernorm_bwd(dy2, cl2)
    grads[f"dec.{i}.ln2.g"] += dg
    grads[f"dec.{i}.ln2.b"] += db
    dcr = L.dropout_bwd(dsum2m, dm2)
    dy1_c, dx_enc, cgrads = L.attention_bwd(dcr, cc)
    for name, g in cgrads.items():
        grads[f"dec.{i}.cross.{name}"] += g
    dy1 = dsum2m + dy1_c
    dsum1m, dg, db = L.layernorm_bwd(dy1, cl1)
    grads[f"dec.{i}.ln1.g"] += dg
    grads[f"dec.{i}.ln1.b"] += db
    da = L.dropout_bwd(dsum1m, dm1)
    dq, dkv, sgrads = L.attention_bwd(da, ca)
    for name, g in sgrads.items():
        grads[f"dec.{i}.self.{name}"] += g
    dpe = dsum1m + dq + dkv
    dpe_base = dpe_base + L.dropout_bwd(dpe, dm0)

    np.add.at(grads["dec.tok_emb"], prefix, dpe_base)
    grads["dec.pos_emb"][:i] += dpe_base.sum(axis=0)
    return dx_enc


# --- the model ---

class PawaModel:
    """Identifier generator: transformer encoder plus per-position decoders."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray], seed: int = 0):
        self.cfg = cfg
        self.params = params
        self.seed = seed

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "PawaModel":
        return cls(cfg, init_params(cfg, seed), seed=seed)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- public single-query ops (eval mode, deterministic) --

    def encode(self, query_tokens) -> EncodedQuery:
        tokens = list(query_tokens)
        mat = np.full((1, max(1, len(tokens))), PAD_ID, dtype=np.int64)
        if tokens:
            mat[0, : len(tokens)] = tokens
        x, mask, _ = _encode_batch(self.params, self.cfg, mat)
        valid = mask[0]
        if valid.any():
            f_t = x[0][valid].mean(axis=0)
            degenerate = False
        else:
            f_t = np.zeros(self.cfg.hidden)
            degenerate = True
        return EncodedQuery(x=x[0], f_t=f_t, mask=valid, degenerate=degenerate)

    def decoder_step(self, enc: EncodedQuery, prefix, position: int) -> np.ndarray:
        """Logits over the identifier vocabulary for decoding step ``position``."""
        if position < 1 or position > self.cfg.n_positions:
            raise PositionOutOfRange(f"position {position} outside 1..{self.cfg.n_positions}")
        prefix = list(prefix)
        if len(prefix) != position:
            raise PrefixLengthMismatch(f"prefix length {len(prefix)} != position {position}")
        if any(t < 0 or t >= self.cfg.semid_vocab for t in prefix):
            raise TokenOutOfRange(f"prefix token outside [0, {self.cfg.semid_vocab})")
        pmat = np.asarray([prefix], dtype=np.int64)
        logits, _ = _position_fwd(
            self.params, self.cfg, pmat, enc.x[None], enc.mask[None], position
        )
        return logits[0]

    def step_logprobs(self, enc: EncodedQuery, prefix, position: int) -> np.ndarray:
        return L.log_softmax(self.decoder_step(enc, prefix, position))

    def step_logprobs_batch(self, enc: EncodedQuery, prefixes, position: int) -> np.ndarray:
        """Log probabilities for several same-length prefixes of one query.

        Batch slices run through the same kernels as single prefixes, so each
        row is bit-identical to the corresponding ``step_logprobs`` call.
        """
        if position < 1 or position > self.cfg.n_positions:
            raise PositionOutOfRange(f"position {position} outside 1..{self.cfg.n_positions}")
        rows = [list(p) for p in prefixes]
        if any(len(p) != position for p in rows):
            raise PrefixLengthMismatch(f"all prefixes must have length {position}")
        if any(t < 0 or t >= self.cfg.semid_vocab for p in rows for t in p):
            raise TokenOutOfRange(f"prefix token outside [0, {self.cfg.semid_vocab})")
        pmat = np.asarray(rows, dtype=np.int64)
        b = pmat.shape[0]
        x = np.broadcast_to(enc.x, (b, *enc.x.shape))
        mask = np.broadcast_to(enc.mask, (b, *enc.mask.shape))
        logits, _ = _position_fwd(self.params, self.cfg, pmat, x, mask, position)
        return L.log_softmax(logits)

    def sequence_logprob(self, query_tokens, semid_with_end) -> float:
        """Log of the chain-rule product over identifier positions."""
        seq = self._check_semid(semid_with_end)
        enc = self.encode(query_tokens)
        total = 0.0
        for i in range(1, len(seq)):
            logp = self.step_logprobs(enc, seq[:i], i)
            total += float(logp[seq[i]])
        return total

    def _check_semid(self, semid_with_end) -> list[int]:
        seq = list(semid_with_end)
        end = self.cfg.end_id
        if len(seq) < 2 or seq[0] != 0 or seq[-1] != end:
            raise InvalidSemId(f"identifier must be [0, ..., END={end}]: {seq}")
        if len(seq) > self.cfg.max_semid_len:
            raise InvalidSemId(f"identifier length {len(seq)} exceeds {self.cfg.max_semid_len}")
        if any(t < 0 or t >= self.cfg.k for t in seq[1:-1]):
            raise InvalidSemId(f"interior tokens must be branch labels 0..{self.cfg.k - 1}: {seq}")
        return seq

    # -- batched loss and gradients --

    def _prep_batch(self, batch):
        if not batch:
            raise EmptyBatch("empty training batch")
        queries, targets = [], []
        for pair in batch:
            queries.append(tuple(pair.query_tokens))
            full = (*pair.target.tokens, self.cfg.end_id)
            if len(full) > self.cfg.max_semid_len:
                raise InvalidSemId(f"target too long for model: {full}")
            targets.append(full)
        t = max(1, max(len(q) for q in queries))
        qmat = np.full((len(queries), t), PAD_ID, dtype=np.int64)
        for b, q in enumerate(queries):
            qmat[b, : len(q)] = q
        return qmat, targets

    def _loss_and_grads(self, batch, want_grads=True, train=False, rng=None):
        qmat, targets = self._prep_batch(batch)
        nb = len(targets)
        x, mask, enc_cache = _encode_batch(self.params, self.cfg, qmat, train=train, rng=rng)

        max_steps = max(len(t) - 1 for t in targets)
        loss = 0.0
        pos_caches = []
        for i in range(1, max_steps + 1):
            rows = np.array([b for b, t in enumerate(targets) if len(t) - 1 >= i])
            pmat = np.asarray([targets[b][:i] for b in rows], dtype=np.int64)
            tgt = np.asarray([targets[b][i] for b in rows], dtype=np.int64)
            logits, cache = _position_fwd(
                self.params, self.cfg, pmat, x[rows], mask[rows], i, train=train, rng=rng
            )
            nll, ce_cache = L.cross_entropy_fwd(logits, tgt)
            loss += float(nll.sum()) / nb
            pos_caches.append((rows, cache, ce_cache))

        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss is {loss}")
        if not want_grads:
            return loss, None

        grads = self.zero_grads()
        dx_total = np.zeros_like(x)
        for rows, cache, ce_cache in pos_caches:
            dnll = np.full(rows.shape[0], 1.0 / nb)
            dlogits = L.cross_entropy_bwd(dnll, ce_cache)
            dx_rows = _position_bwd(dlogits, cache, self.cfg, self.params, grads)
            np.add.at(dx_total, rows, dx_rows)
        _encode_bwd(dx_total, enc_cache, self.cfg, grads)
        return loss, grads

    def batch_loss(self, batch) -> float:
        """Mean over pairs of the teacher-forced negative sequence log-likelihood."""
        loss, _ = self._loss_and_grads(batch, want_grads=False)
        return loss

    def gradients(self, batch) -> dict[str, np.ndarray]:
        """Exact gradients of batch_loss for every parameter tensor."""
        _, grads = self._loss_and_grads(batch, want_grads=True)
        return grads
