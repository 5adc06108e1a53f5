"""JSON checkpoints holding every tensor by name.

Floats are written with ``repr`` precision, so a save/load cycle is
bit-exact and two identical models produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .fusion import FusionParams, FusionVariant
from .layers import GATES, AttNetParams, SeqNetParams
from .linalg import DTYPE

FORMAT = "mlas-checkpoint"
VERSION = 1


def to_dict(params: FusionParams, config: dict | None = None) -> dict:
    tensors = {
        name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=DTYPE).ravel().tolist()}
        for name, arr in params.tensors().items()
    }
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "variant": params.variant.value,
        "activation": params.activation,
        "attr_dim": params.attr_dim,
        "n_attnet_layers": len(params.attnet.weights),
        "tensors": tensors,
    }
    if config is not None:
        doc["config"] = config
    return doc


def from_dict(doc: dict) -> FusionParams:
    if doc.get("format") != FORMAT:
        raise ParseError(f"not an {FORMAT} document")
    try:
        raw = doc["tensors"]
        t = {k: np.array(v["data"], dtype=DTYPE).reshape(v["shape"]) for k, v in raw.items()}
        M = int(doc["n_attnet_layers"])
        attnet = AttNetParams(
            [t[f"attnet.layer{m}.W"] for m in range(1, M + 1)],
            [t[f"attnet.layer{m}.b"] for m in range(1, M + 1)],
            doc["activation"],
        )
        seqnet = SeqNetParams.from_gates(
            **{f"{kind}_{g}": t[f"seqnet.{kind}_{g}"] for kind in ("W", "U", "b") for g in GATES}
        )
        variant = FusionVariant.parse(doc["variant"])
        W_z = t.get("fusion.W_z")
        b_z = t.get("fusion.b_z")
        return FusionParams(variant, attnet, seqnet, W_z, b_z, attr_dim=int(doc["attr_dim"]))
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ParseError(f"malformed checkpoint: {exc}") from None


def dumps(params: FusionParams, config: dict | None = None) -> str:
    return json.dumps(to_dict(params, config), sort_keys=True) + "\n"


def save_checkpoint(params: FusionParams, path, config: dict | None = None) -> None:
    Path(path).write_text(dumps(params, config))


def load_checkpoint(path):
    """Return ``(params, config)``; ``config`` is ``None`` when absent."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}") from None
    return from_dict(doc), doc.get("config")
