"""Single-file binary checkpoints for both model kinds.

Layout: magic, format version, JSON header (vocabulary, hyperparameters,
array manifest), then raw little-endian float64 array bytes in manifest
order. Everything is deterministic, so identical models produce identical
bytes and save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .seqmodel import ClsConfig, SeqConfig, SeqModel, TextClassifier
from .vocab import Vocabulary

MAGIC = b"GCKP"
FORMAT_VERSION = 1


def _header_for(model, meta: dict | None) -> dict:
    if isinstance(model, SeqModel):
        kind = "seqmodel"
        config = asdict(model.config)
    elif isinstance(model, TextClassifier):
        kind = "classifier"
        config = asdict(model.config)
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "vocab": {"tokens": list(model.vocab.tokens),
                  "n_labels": model.vocab.n_labels},
        "config": config,
        "meta": meta or {},
        "arrays": [{"name": name, "shape": list(p.shape)}
                   for name, p in model.parameters().items()],
    }


def save_model(path: str | Path, model, meta: dict | None = None) -> None:
    header = _header_for(model, meta)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, p in model.parameters().items():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_model(path: str | Path):
    model, _ = load_model_with_meta(path)
    return model


def load_model_with_meta(path: str | Path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        vocab = Vocabulary(tokens=list(header["vocab"]["tokens"]),
                           n_labels=int(header["vocab"]["n_labels"]))
        if header["kind"] == "seqmodel":
            model = SeqModel(vocab, SeqConfig(**header["config"]), seed=0)
        elif header["kind"] == "classifier":
            model = TextClassifier(vocab, vocab.n_labels,
                                   ClsConfig(**header["config"]), seed=0)
        else:
            raise ValueError(f"{path}: unknown checkpoint kind {header['kind']!r}")
        params = model.parameters()
        for entry in header["arrays"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params or params[name].shape != shape:
                raise ValueError(f"{path}: array {name!r} does not match the model")
            n_bytes = int(np.prod(shape)) * 8 if shape else 8
            buf = fh.read(n_bytes)
            params[name].data = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return model, header.get("meta", {})


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
