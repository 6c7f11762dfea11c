"""Forward/backward primitives for the from-scratch transformer.

Each ``*_fwd`` returns (output, cache); the matching ``*_bwd`` consumes the
upstream gradient plus that cache and returns gradients for inputs and
parameters. Everything runs in float64 so finite-difference checks are sharp.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-5


# --- linear / activation ---

def linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def linear_fwd_rows(x, w, b):
    """2D linear computed one row at a time.

    BLAS picks different kernels (and summation orders) for different row
    counts, so plain ``x @ w`` on a 2-D batch is not bit-identical across
    batch sizes. Per-row vector-matrix products are, which keeps batched
    decoding scores equal to single-sequence scoring down to the last bit.
    """
    y = np.stack([x[j] @ w for j in range(x.shape[0])]) + b
    return y, (x, w)


def linear_bwd(dy, cache):
    x, w = cache
    din, dout = w.shape
    dx = dy @ w.T
    dw = x.reshape(-1, din).T @ dy.reshape(-1, dout)
    db = dy.reshape(-1, dout).sum(axis=0)
    return dx, dw, db


def relu_fwd(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_bwd(dy, cache):
    return dy * cache


def dropout_fwd(x, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when rate is 0 or no rng is supplied (eval)."""
    if rate <= 0.0 or rng is None:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_bwd(dy, mask):
    return dy if mask is None else dy * mask


# --- layer norm ---

def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    width = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, width).sum(axis=0)
    db = dy.reshape(-1, width).sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dg, db


# --- multi-head attention ---

def _split_heads(t, n_heads):
    b, length, width = t.shape
    return t.reshape(b, length, n_heads, width // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(t):
    b, h, length, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(b, length, h * dh)


def attention_fwd(q_in, kv_in, p, n_heads, key_mask=None, causal=False):
    """Multi-head scaled dot-product attention.

    p maps names wq,bq,wk,bk,wv,bv,wo,bo to parameter arrays. ``key_mask`` is
    (B, Tk) boolean, True where a key position is attendable. Rows with no
    attendable key produce a zero context vector instead of NaN.
    """
    b, tq, width = q_in.shape
    tk = kv_in.shape[1]
    dh = width // n_heads
    scale = 1.0 / np.sqrt(dh)

    q, cq = linear_fwd(q_in, p["wq"], p["bq"])
    k, ck = linear_fwd(kv_in, p["wk"], p["bk"])
    v, cv = linear_fwd(kv_in, p["wv"], p["bv"])
    qh, kh, vh = _split_heads(q, n_heads), _split_heads(k, n_heads), _split_heads(v, n_heads)

    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale  # (B, h, Tq, Tk)
    allow = np.ones((b, 1, tq, tk), dtype=bool)
    if key_mask is not None:
        allow = allow & key_mask[:, None, None, :]
    if causal:
        allow = allow & np.tril(np.ones((tq, tk), dtype=bool))[None, None]

    shifted = np.where(allow, scores, -np.inf)
    mx = shifted.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    expd = np.where(allow, np.exp(shifted - mx), 0.0)
    denom = expd.sum(axis=-1, keepdims=True)
    attn = np.divide(expd, denom, out=np.zeros_like(expd), where=denom > 0)

    ctx = attn @ vh
    merged = _merge_heads(ctx)
    out, co = linear_fwd(merged, p["wo"], p["bo"])
    cache = (cq, ck, cv, co, qh, kh, vh, attn, scale, n_heads)
    return out, cache


def attention_bwd(dy, cache):
    """Returns (dq_in, dkv_in, grads dict keyed like p)."""
    cq, ck, cv, co, qh, kh, vh, attn, scale, n_heads = cache
    dmerged, dwo, dbo = linear_bwd(dy, co)
    dctx = _split_heads(dmerged, n_heads)

    dattn = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh

    dq, dwq, dbq = linear_bwd(_merge_heads(dqh), cq)
    dk, dwk, dbk = linear_bwd(_merge_heads(dkh), ck)
    dv, dwv, dbv = linear_bwd(_merge_heads(dvh), cv)
    grads = {"wq": dwq, "bq": dbq, "wk": dwk, "bk": dbk,
             "wv": dwv, "bv": dbv, "wo": dwo, "bo": dbo}
    return dq, dk + dv, grads


# --- feed-forward ---

def ffn_fwd(x, p):
    h, c1 = linear_fwd(x, p["w1"], p["b1"])
    a, cr = relu_fwd(h)
    y, c2 = linear_fwd(a, p["w2"], p["b2"])
    return y, (c1, cr, c2)


def ffn_bwd(dy, cache):
    c1, cr, c2 = cache
    da, dw2, db2 = linear_bwd(dy, c2)
    dh = relu_bwd(da, cr)
    dx, dw1, db1 = linear_bwd(dh, c1)
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


# --- softmax cross-entropy over logits ---

def log_softmax(logits):
    mx = logits.max(axis=-1, keepdims=True)
    shifted = logits - mx
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_fwd(logits, targets):
    """Per-row negative log-likelihood. logits (B, V), targets (B,) int."""
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    nll = -logp[rows, targets]
    return nll, (logp, targets)


def cross_entropy_bwd(dnll, cache):
    """dnll (B,) upstream weight per row -> dlogits (B, V)."""
    logp, targets = cache
    probs = np.exp(logp)
    dlogits = probs * dnll[:, None]
    rows = np.arange(logp.shape[0])
    dlogits[rows, targets] -= dnll
    return dlogits
