"""Adam training loop with separate encoder/decoder learning rates."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DivergedLoss, EmptyBatch
from .model import ModelConfig, PawaModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_encoder: float = 2e-4
    lr_decoder: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ValueError("learning rates must be positive")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def lr_for(self, key: str) -> float:
        return self.cfg.lr_encoder if key.startswith("enc.") else self.cfg.lr_decoder

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for key in sorted(params):  # fixed order keeps updates deterministic
            g = grads[key]
            self.m[key] = c.beta1 * self.m[key] + (1 - c.beta1) * g
            self.v[key] = c.beta2 * self.v[key] + (1 - c.beta2) * (g * g)
            mhat = self.m[key] / bc1
            vhat = self.v[key] / bc2
            params[key] -= self.lr_for(key) * mhat / (np.sqrt(vhat) + c.eps)


def train(
    pairs,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    model: PawaModel | None = None,
) -> tuple[PawaModel, list[float]]:
    """Train (or continue training) on query/identifier pairs.

    Returns the model and the per-epoch mean loss history. Deterministic for
    a fixed seed: shuffling, dropout, and initialization all derive from it.
    """
    if not pairs:
        raise EmptyBatch("no training pairs")
    if model is None:
        model = PawaModel.init(model_cfg, seed=train_cfg.seed)
    opt = Adam(model.params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed + 1)
    history: list[float] = []
    order = np.arange(len(pairs))
    for epoch in range(train_cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(pairs), train_cfg.batch_size):
            batch = [pairs[i] for i in order[start : start + train_cfg.batch_size]]
            loss, grads = model._loss_and_grads(batch, want_grads=True, train=True, rng=rng)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss diverged at epoch {epoch}")
            opt.step(model.params, grads)
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / n_batches)
        if (epoch + 1) % 25 == 0 or epoch == train_cfg.epochs - 1:
            log.info("epoch %d/%d loss %.4f", epoch + 1, train_cfg.epochs, history[-1])
    return model, history
