"""The three ways of wiring AttNet and SeqNet into one encoder.

* ``balanced``: concatenate both encoder outputs and pass them through one
  extra fully connected layer ``z = act(W_z [V; h] + b_z)``.
* ``att_centric``: the final LSTM state is appended to the attributes and fed
  into AttNet's first layer.
* ``seq_centric``: AttNet's output is added to the LSTM hidden state after
  the first step; the recursion then continues unchanged.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np

from .data import AttributedSequence
from .errors import ConfigError, ShapeError
from .layers import (
    AttNetParams,
    SeqNetParams,
    attnet_backward,
    attnet_forward,
    init_attnet,
    init_seqnet,
    seqnet_backward,
    seqnet_forward,
    split_gate_grads,
)
from .linalg import ACTIVATIONS, DTYPE, activation_grad, glorot_uniform, make_rng


class FusionVariant(str, enum.Enum):
    BALANCED = "balanced"
    ATT_CENTRIC = "att_centric"
    SEQ_CENTRIC = "seq_centric"

    @classmethod
    def parse(cls, value) -> "FusionVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown fusion variant {value!r}; valid variants: {valid}") from None


@dataclass
class FusionParams:
    variant: FusionVariant
    attnet: AttNetParams
    seqnet: SeqNetParams
    W_z: np.ndarray | None = None
    b_z: np.ndarray | None = None
    # input widths (u, r) the model was built for
    attr_dim: int = field(default=0)

    def __post_init__(self):
        self.variant = FusionVariant.parse(self.variant)
        d_M, d_S = self.attnet.output_dim, self.seqnet.hidden
        has_fusion = self.W_z is not None or self.b_z is not None
        if self.variant is FusionVariant.BALANCED:
            if self.W_z is None or self.b_z is None:
                raise ConfigError("balanced design needs the fusion layer (W_z, b_z)")
            if self.W_z.ndim != 2 or self.W_z.shape[1] != d_M + d_S or self.b_z.shape != (self.W_z.shape[0],):
                raise ConfigError(
                    f"fusion layer W_z{self.W_z.shape}/b_z{self.b_z.shape} must be d x {d_M + d_S} and length d"
                )
            if not self.attr_dim:
                self.attr_dim = self.attnet.input_dim
        elif has_fusion:
            raise ConfigError(f"{self.variant.value} design has no fusion layer")
        if self.variant is FusionVariant.ATT_CENTRIC:
            if not self.attr_dim:
                self.attr_dim = self.attnet.input_dim - d_S
            if self.attnet.input_dim != self.attr_dim + d_S:
                raise ConfigError(
                    f"att_centric first layer must take u + d_S = {self.attr_dim} + {d_S} inputs, "
                    f"got {self.attnet.input_dim}"
                )
        elif self.variant is FusionVariant.SEQ_CENTRIC:
            if d_M != d_S:
                raise ConfigError(f"seq_centric needs AttNet output width ({d_M}) equal to d_S ({d_S})")
            if not self.attr_dim:
                self.attr_dim = self.attnet.input_dim
        if self.variant is not FusionVariant.ATT_CENTRIC and self.attr_dim != self.attnet.input_dim:
            raise ConfigError(f"attribute width {self.attr_dim} does not match AttNet input {self.attnet.input_dim}")
        if self.attr_dim < 1:
            raise ConfigError("attribute width must be positive")

    @property
    def activation(self) -> str:
        return self.attnet.activation

    @property
    def item_dim(self) -> int:
        return self.seqnet.input_dim

    def tensors(self) -> dict:
        """Named views of every learnable array, in a fixed order."""
        out = {}
        out.update(self.attnet.tensors())
        out.update(self.seqnet.tensors())
        if self.variant is FusionVariant.BALANCED:
            out["fusion.W_z"] = self.W_z
            out["fusion.b_z"] = self.b_z
        return out

    def copy(self) -> "FusionParams":
        return copy.deepcopy(self)

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors().items()}


def output_dim(params: FusionParams) -> int:
    if params.variant is FusionVariant.BALANCED:
        return params.W_z.shape[0]
    if params.variant is FusionVariant.ATT_CENTRIC:
        return params.attnet.output_dim
    return params.seqnet.hidden


def init_fusion(variant, attr_dim: int, item_dim: int, attnet_units=(10,), seqnet_units: int = 10,
                output: int = 10, activation: str = "tanh", seed: int = 0) -> FusionParams:
    """Freshly initialised encoder.

    Weights are Glorot-uniform, recurrent matrices orthogonal and biases
    zero. ``output`` is the fusion-layer width and only used by the
    balanced design; the other designs emit ``attnet_units[-1]`` or
    ``seqnet_units`` values respectively.
    """
    variant = FusionVariant.parse(variant)
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
    attnet_units = list(attnet_units)
    rng = make_rng(seed, 11)
    seqnet = init_seqnet(item_dim, seqnet_units, rng)
    W_z = b_z = None
    if variant is FusionVariant.ATT_CENTRIC:
        attnet = init_attnet(attr_dim + seqnet_units, attnet_units, rng, activation)
    else:
        if variant is FusionVariant.SEQ_CENTRIC and attnet_units[-1] != seqnet_units:
            raise ConfigError(
                f"seq_centric needs the last AttNet width ({attnet_units[-1]}) to equal d_S ({seqnet_units})"
            )
        attnet = init_attnet(attr_dim, attnet_units, rng, activation)
    if variant is FusionVariant.BALANCED:
        W_z = glorot_uniform(output, attnet.output_dim + seqnet_units, rng)
        b_z = np.zeros(output, dtype=DTYPE)
    return FusionParams(variant, attnet, seqnet, W_z, b_z, attr_dim=attr_dim)


def _check_input(params: FusionParams, p: AttributedSequence):
    if p.attributes.shape != (params.attr_dim,):
        raise ShapeError(f"{p.id!r}: model expects {params.attr_dim} attributes, got {p.attributes.shape}")
    if p.sequence.matrix.shape[1] != params.item_dim:
        raise ShapeError(f"{p.id!r}: model expects {params.item_dim} items, got {p.sequence.matrix.shape[1]}")


def fusion_forward(params: FusionParams, p: AttributedSequence):
    """Embed one attributed sequence; returns ``(embedding, cache)``."""
    _check_input(params, p)
    variant = params.variant
    if variant is FusionVariant.BALANCED:
        v, a_cache = attnet_forward(params.attnet, p.attributes)
        h, s_cache = seqnet_forward(params.seqnet, p.sequence)
        y = np.concatenate([v, h])
        pre = params.W_z @ y + params.b_z
        z = ACTIVATIONS[params.activation](pre)
        return z, {"att": a_cache, "seq": s_cache, "y": y, "pre": pre, "z": z}
    if variant is FusionVariant.ATT_CENTRIC:
        h, s_cache = seqnet_forward(params.seqnet, p.sequence)
        v, a_cache = attnet_forward(params.attnet, np.concatenate([p.attributes, h]))
        return v, {"att": a_cache, "seq": s_cache}
    v, a_cache = attnet_forward(params.attnet, p.attributes)
    h, s_cache = seqnet_forward(params.seqnet, p.sequence, h1_offset=v)
    return h, {"att": a_cache, "seq": s_cache}


def fusion_backward(params: FusionParams, cache, dout) -> dict:
    """Parameter gradients, keyed like :meth:`FusionParams.tensors`."""
    variant = params.variant
    d_S = params.seqnet.hidden
    grads = {}

    def add_attnet(dWs, dbs):
        for m, (dW, db) in enumerate(zip(dWs, dbs), start=1):
            grads[f"attnet.layer{m}.W"] = dW
            grads[f"attnet.layer{m}.b"] = db

    if variant is FusionVariant.BALANCED:
        dpre = dout * activation_grad(params.activation, cache["pre"], cache["z"])
        dy = params.W_z.T @ dpre
        d_M = params.attnet.output_dim
        dWs, dbs, _ = attnet_backward(params.attnet, cache["att"], dy[:d_M])
        s = seqnet_backward(params.seqnet, cache["seq"], dy[d_M:])
        add_attnet(dWs, dbs)
        grads.update(split_gate_grads(s, d_S))
        grads["fusion.W_z"] = np.outer(dpre, cache["y"])
        grads["fusion.b_z"] = dpre
    elif variant is FusionVariant.ATT_CENTRIC:
        dWs, dbs, dinput = attnet_backward(params.attnet, cache["att"], dout)
        s = seqnet_backward(params.seqnet, cache["seq"], dinput[params.attr_dim:])
        add_attnet(dWs, dbs)
        grads.update(split_gate_grads(s, d_S))
    else:
        s = seqnet_backward(params.seqnet, cache["seq"], dout)
        dWs, dbs, _ = attnet_backward(params.attnet, cache["att"], s["offset"])
        add_attnet(dWs, dbs)
        grads.update(split_gate_grads(s, d_S))
    return {k: grads[k] for k in params.tensors()}


def embed(params: FusionParams, p: AttributedSequence) -> np.ndarray:
    return fusion_forward(params, p)[0]
