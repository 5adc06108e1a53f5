"""Central finite-difference checks of the hand-written gradients.

Relative error per element is ``|a - n| / max(|a|, |n|, floor)`` with
``floor = 1e-6``: below that magnitude the finite-difference estimate itself
is dominated by round-off, so the comparison falls back to absolute error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import AttributedSequence, EncodedSequence
from .errors import ConfigError
from .fusion import FusionVariant, fusion_forward, init_fusion
from .linalg import DTYPE, make_rng
from .metric import euclidean_distance, pair_loss, pair_loss_and_grads

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-6


def numeric_grads(f, tensors: dict, step: float = STEP) -> dict:
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = {}
    for name, arr in tensors.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        out[name] = g
    return out


def rel_error(analytic, numeric, floor: float = FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def max_rel_errors(analytic: dict, numeric: dict) -> dict:
    return {k: float(rel_error(analytic[k], numeric[k]).max(initial=0.0)) for k in numeric}


def _random_item(rng, pid, u, r, T, length):
    x = rng.normal(size=u)
    rows = np.zeros((T, r), dtype=DTYPE)
    rows[np.arange(length), rng.integers(0, r, size=length)] = 1.0
    return AttributedSequence(pid, x, EncodedSequence(rows, length))


@dataclass
class Instance:
    params: object
    left: AttributedSequence
    right: AttributedSequence
    label: int
    margin: float


def random_instance(variant, seed: int, activation: str = "tanh") -> Instance:
    """A small randomised siamese problem (u<=5, r<=4, T<=4, widths<=6).

    All tensors, biases included, are perturbed away from their
    initialisation so that every gradient entry is exercised. Dissimilar
    instances get a margin beyond the current distance so the hinge is
    active.
    """
    variant = FusionVariant.parse(variant)
    rng = make_rng(seed, 99)
    u, r, T = (int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(1, 5)))
    d_S = int(rng.integers(2, 7))
    units = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
    if variant is FusionVariant.SEQ_CENTRIC:
        units[-1] = d_S
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = init_fusion(variant, u, r, units, d_S, output=int(rng.integers(2, 7)),
                             activation=activation, seed=seed)
    for arr in params.tensors().values():
        arr += rng.normal(scale=0.3, size=arr.shape)
    left = _random_item(rng, "left", u, r, T, int(rng.integers(1, T + 1)))
    right = _random_item(rng, "right", u, r, T, int(rng.integers(1, T + 1)))
    label = int(seed % 2)
    margin = 1.0
    if label == 1:
        d = euclidean_distance(fusion_forward(params, left)[0], fusion_forward(params, right)[0])
        margin = d + 0.5
    return Instance(params, left, right, label, margin)


def check_instance(inst: Instance, corrupt: str | None = None) -> dict:
    """Max relative error per tensor for the contrastive loss of ``inst``."""
    params = inst.params
    _, analytic = pair_loss_and_grads(params, inst.left, inst.right, inst.label, inst.margin)
    if analytic is None:
        analytic = params.zero_grads()
    if corrupt is not None and corrupt in analytic:
        analytic = dict(analytic)
        analytic[corrupt] = analytic[corrupt] + 1e-2

    def f():
        return pair_loss(params, inst.left, inst.right, inst.label, inst.margin)

    return max_rel_errors(analytic, numeric_grads(f, params.tensors()))


def run(variants=tuple(FusionVariant), n_instances: int = 10, seed: int = 0, activation: str = "tanh",
        corrupt: str | None = None):
    """Rows ``(variant, tensor, max_rel_error)`` over ``n_instances`` problems each."""
    rows = []
    for variant in variants:
        variant = FusionVariant.parse(variant)
        worst = {}
        for k in range(n_instances):
            inst = random_instance(variant, seed * 1000 + k, activation)
            for name, err in check_instance(inst, corrupt).items():
                worst[name] = max(worst.get(name, 0.0), err)
        rows.extend((variant.value, name, err) for name, err in worst.items())
    if corrupt is not None and all(name != corrupt for _, name, _ in rows):
        raise ConfigError(f"no tensor named {corrupt!r} to corrupt")
    return rows
