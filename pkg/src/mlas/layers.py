"""AttNet (fully connected stack) and SeqNet (LSTM) with manual backprop.

Gradients are hand-derived; ``mlas.gradcheck`` holds the finite-difference
harness that keeps them honest.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import EncodedSequence
from .errors import ConfigError, ShapeError
from .linalg import ACTIVATIONS, DTYPE, activation_grad, glorot_uniform, orthogonal_init, sigmoid

GATES = ("i", "f", "o", "c")


class WidthWarning(UserWarning):
    """First AttNet layer is not narrower than its input."""


@dataclass
class AttNetParams:
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if not self.weights:
            raise ConfigError("AttNet needs at least one layer")
        if len(self.weights) != len(self.biases):
            raise ConfigError("AttNet needs one bias per weight matrix")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        for m, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ConfigError(f"AttNet layer {m}: weight {W.shape} and bias {b.shape} disagree")
            if m > 1 and W.shape[1] != self.weights[m - 2].shape[0]:
                raise ConfigError(
                    f"AttNet layer {m} expects width {W.shape[1]}, previous layer emits {self.weights[m - 2].shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def tensors(self, prefix="attnet") -> dict:
        out = {}
        for m, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"{prefix}.layer{m}.W"] = W
            out[f"{prefix}.layer{m}.b"] = b
        return out


@dataclass
class SeqNetParams:
    """LSTM parameters stored as gate-stacked blocks in (i, f, o, c) order.

    ``W`` is (4 d_S, r), ``U`` is (4 d_S, d_S) and ``b`` is (4 d_S,); the
    per-gate matrices such as ``W_i`` are row-block views into them.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        d = self.U.shape[1] if self.U.ndim == 2 else -1
        if self.U.shape != (4 * d, d) or self.W.ndim != 2 or self.W.shape[0] != 4 * d or self.b.shape != (4 * d,):
            raise ConfigError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @classmethod
    def from_gates(cls, **blocks) -> "SeqNetParams":
        """Assemble from ``W_i, ..., U_c, b_i, ..., b_c`` keyword arrays."""
        def stack(kind):
            return np.concatenate([np.asarray(blocks[f"{kind}_{g}"], dtype=DTYPE) for g in GATES])
        return cls(stack("W"), stack("U"), stack("b"))

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, kind: str, g: str) -> np.ndarray:
        d = self.hidden
        k = GATES.index(g)
        return getattr(self, kind)[k * d:(k + 1) * d]

    def tensors(self, prefix="seqnet") -> dict:
        return {f"{prefix}.{kind}_{g}": self.gate(kind, g) for kind in ("W", "U", "b") for g in GATES}


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, d: int) -> "LstmState":
        return cls(np.zeros(d, dtype=DTYPE), np.zeros(d, dtype=DTYPE))


def init_attnet(input_dim: int, units, rng, activation="tanh") -> AttNetParams:
    units = list(units)
    if not units or any(u < 1 for u in units):
        raise ConfigError(f"AttNet layer widths must be positive, got {units}")
    if units[0] >= input_dim:
        warnings.warn(f"first AttNet layer ({units[0]}) is not narrower than its input ({input_dim})", WidthWarning,
                      stacklevel=2)
    widths = [input_dim] + units
    weights = [glorot_uniform(widths[m + 1], widths[m], rng) for m in range(len(units))]
    biases = [np.zeros(w, dtype=DTYPE) for w in units]
    return AttNetParams(weights, biases, activation)


def init_seqnet(input_dim: int, hidden: int, rng) -> SeqNetParams:
    if hidden < 1 or input_dim < 1:
        raise ConfigError("SeqNet dimensions must be positive")
    W = np.concatenate([glorot_uniform(hidden, input_dim, rng) for _ in GATES])
    U = np.concatenate([orthogonal_init(hidden, rng) for _ in GATES])
    return SeqNetParams(W, U, np.zeros(4 * hidden, dtype=DTYPE))


# -- AttNet -----------------------------------------------------------------

def attnet_forward(params: AttNetParams, x):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != (params.input_dim,):
        raise ShapeError(f"AttNet expects input width {params.input_dim}, got {x.shape}")
    act = ACTIVATIONS[params.activation]
    inputs, pres, outs = [], [], []
    v = x
    for W, b in zip(params.weights, params.biases):
        inputs.append(v)
        a = W @ v + b
        v = act(a)
        pres.append(a)
        outs.append(v)
    return v, {"inputs": inputs, "pres": pres, "outs": outs}


def attnet_backward(params: AttNetParams, cache, dout):
    """Return ``(dWs, dbs, dx)`` for upstream gradient ``dout``."""
    M = len(params.weights)
    dWs, dbs = [None] * M, [None] * M
    dv = dout
    for m in reversed(range(M)):
        da = dv * activation_grad(params.activation, cache["pres"][m], cache["outs"][m])
        dWs[m] = np.outer(da, cache["inputs"][m])
        dbs[m] = da
        dv = params.weights[m].T @ da
    return dWs, dbs, dv


# -- SeqNet -----------------------------------------------------------------

def lstm_step(params: SeqNetParams, x_t, prev: LstmState) -> LstmState:
    x_t = np.asarray(x_t, dtype=DTYPE)
    d = params.hidden
    if x_t.shape != (params.input_dim,) or prev.h.shape != (d,) or prev.c.shape != (d,):
        raise ShapeError("lstm_step operand shapes do not match the parameters")
    z = params.W @ x_t + params.U @ prev.h + params.b
    ifo = sigmoid(z[: 3 * d])
    g = np.tanh(z[3 * d:])
    c = ifo[d:2 * d] * prev.c + ifo[:d] * g
    h = ifo[2 * d:] * np.tanh(c)
    return LstmState(c, h)


def lstm_unroll(params: SeqNetParams, xs, h0=None, c0=None, h1_offset=None):
    """Run the LSTM over every row of ``xs``.

    ``h1_offset`` is added to the hidden state after the first step only.
    Returns the (T+1, d) hidden-state history, with the initial state at
    index 0, and a cache for :func:`lstm_backward`.
    """
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim != 2 or xs.shape[1] != params.input_dim:
        raise ShapeError(f"LSTM expects rows of width {params.input_dim}, got {xs.shape}")
    T, d = xs.shape[0], params.hidden
    if T == 0:
        raise ShapeError("cannot run the LSTM on an empty sequence")
    if h1_offset is not None and np.shape(h1_offset) != (d,):
        raise ShapeError(f"first-step offset must have length {d}, got {np.shape(h1_offset)}")
    hs = np.zeros((T + 1, d), dtype=DTYPE)
    cs = np.zeros((T + 1, d), dtype=DTYPE)
    if h0 is not None:
        hs[0] = h0
    if c0 is not None:
        cs[0] = c0
    ifo = np.empty((T, 3 * d), dtype=DTYPE)
    gs = np.empty((T, d), dtype=DTYPE)
    tcs = np.empty((T, d), dtype=DTYPE)
    wx = xs @ params.W.T + params.b
    U = params.U
    for t in range(T):
        z = wx[t] + U @ hs[t]
        gate = sigmoid(z[: 3 * d])
        ifo[t] = gate
        g = gs[t] = np.tanh(z[3 * d:])
        c = cs[t + 1] = gate[d:2 * d] * cs[t] + gate[:d] * g
        tc = tcs[t] = np.tanh(c)
        hs[t + 1] = gate[2 * d:] * tc
        if t == 0 and h1_offset is not None:
            hs[1] += h1_offset
    cache = {"xs": xs, "hs": hs, "cs": cs, "ifo": ifo, "g": gs, "tc": tcs}
    return hs, cache


def lstm_backward(params: SeqNetParams, cache, dhs):
    """Backpropagation through time.

    ``dhs`` is the (T, d) gradient of the loss with respect to each emitted
    hidden state ``h^(1..T)``. Returns a dict with the stacked parameter
    gradients ``W, U, b``, the input gradients ``xs``, the initial-state
    gradients ``h0, c0`` and ``offset`` (gradient reaching a first-step
    offset, equal to the total gradient at ``h^(1)``).
    """
    xs, hs, cs = cache["xs"], cache["hs"], cache["cs"]
    ifo, gs, tcs = cache["ifo"], cache["g"], cache["tc"]
    T, d = gs.shape
    UT = params.U.T
    i, f, o = ifo[:, :d], ifo[:, d:2 * d], ifo[:, 2 * d:]
    # local derivatives, so the loop only carries the two recurrences
    dc_from_dh = o * (1.0 - tcs * tcs)
    local = np.concatenate([gs * i * (1.0 - i), cs[:-1] * f * (1.0 - f), tcs * o * (1.0 - o),
                            i * (1.0 - gs * gs)], axis=1)
    dz = np.empty((T, 4 * d), dtype=DTYPE)
    dh_next = np.zeros(d, dtype=DTYPE)
    dc_next = np.zeros(d, dtype=DTYPE)
    offset = None
    for t in range(T - 1, -1, -1):
        dh = dhs[t] + dh_next
        if t == 0:
            offset = dh
        dc = dc_next + dh * dc_from_dh[t]
        dz[t] = np.concatenate((dc, dc, dh, dc)) * local[t]
        dc_next = dc * f[t]
        dh_next = UT @ dz[t]
    return {
        "W": dz.T @ xs,
        "U": dz.T @ hs[:-1],
        "b": dz.sum(axis=0),
        "xs": dz @ params.W,
        "h0": dh_next,
        "c0": dc_next,
        "offset": offset,
    }


def seqnet_forward(params: SeqNetParams, seq: EncodedSequence, h1_offset=None):
    """Encode ``seq`` and return ``h^(T_k)``; padding rows are never read."""
    if seq.true_length < 1:
        raise ShapeError("cannot encode an empty sequence")
    if seq.matrix.shape[1] != params.input_dim:
        raise ShapeError(f"sequence rows have width {seq.matrix.shape[1]}, SeqNet expects {params.input_dim}")
    hs, cache = lstm_unroll(params, seq.steps, h1_offset=h1_offset)
    return hs[-1].copy(), cache


def seqnet_backward(params: SeqNetParams, cache, dh_final):
    T, d = cache["g"].shape
    dhs = np.zeros((T, d), dtype=DTYPE)
    dhs[-1] = dh_final
    return lstm_backward(params, cache, dhs)


def split_gate_grads(stacked: dict, d: int, prefix="seqnet") -> dict:
    out = {}
    for kind in ("W", "U", "b"):
        for k, g in enumerate(GATES):
            out[f"{prefix}.{kind}_{g}"] = stacked[kind][k * d:(k + 1) * d]
    return out
