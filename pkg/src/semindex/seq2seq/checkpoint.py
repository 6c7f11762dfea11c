"""Model checkpoints: npz container with a JSON header plus f32 tensors."""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from ..textdata import Vocab
from .model import ModelConfig, PawaModel


def save_checkpoint(model: PawaModel, path, vocab: Vocab | None = None) -> None:
    meta = {
        "config": dataclasses.asdict(model.cfg),
        "seed": model.seed,
        "vocab": vocab.token_to_id if vocab is not None else None,
    }
    arrays = {f"param/{k}": v.astype("<f4") for k, v in model.params.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[PawaModel, Vocab | None]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        params = {
            k[len("param/"):]: data[k].astype(np.float64)
            for k in data.files
            if k.startswith("param/")
        }
    cfg = ModelConfig(**meta["config"])
    vocab = Vocab(meta["vocab"]) if meta["vocab"] is not None else None
    return PawaModel(cfg, params, seed=meta["seed"]), vocab
