"""Siamese metric learning on top of a fusion encoder.

Both members of a feedback pair go through the same parameter set; the
Euclidean distance between the two embeddings feeds the contrastive loss
and the gradient of both branches is summed into one SGD update.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AttributedSequence, Dataset, FeedbackTriplet, split_feedback
from .errors import ConfigError, DivergenceError, ShapeError
from .fusion import FusionParams, fusion_backward, fusion_forward, output_dim
from .layers import GATES, SeqNetParams, init_seqnet, lstm_backward, lstm_unroll
from .linalg import DTYPE, as_mat, as_vec, glorot_uniform, make_rng

STOP_CONVERGED = "converged"
STOP_EARLY = "early_stopped"
STOP_MAX_ITER = "max_iterations"


@dataclass
class TrainingConfig:
    margin: float = 3.0
    learning_rate: float = 0.05
    max_iterations: int = 200
    convergence_eps: float = 1e-7
    l2_lambda: float = 3e-3
    validation_fraction: float = 0.2
    seed: int = 0
    pretrain_omega_a: float = 0.5
    pretrain_epochs: int = 60
    pretrain_learning_rate: float = 0.2
    patience: int = 5
    per_pair_break: bool = False
    restore_best: bool = True

    def __post_init__(self):
        if not self.margin > 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if not self.learning_rate > 0 or not self.pretrain_learning_rate > 0:
            raise ConfigError("learning rates must be positive")
        if self.max_iterations < 0 or self.pretrain_epochs < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.convergence_eps < 0 or self.l2_lambda < 0:
            raise ConfigError("convergence_eps and l2_lambda must be non-negative")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if not 0.0 <= self.pretrain_omega_a <= 1.0:
            raise ConfigError(f"pretrain_omega_a must be in [0, 1], got {self.pretrain_omega_a}")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def pretrain_omega_s(self) -> float:
        return 1.0 - self.pretrain_omega_a


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stop_reason: str = STOP_MAX_ITER
    iterations: int = 0
    best_epoch: int | None = None

    def to_jsonl(self, config: dict | None = None) -> str:
        header = {"type": "header", "stop_reason": self.stop_reason, "iterations": self.iterations,
                  "best_epoch": self.best_epoch}
        if config is not None:
            header["config"] = config
        lines = [json.dumps(header, sort_keys=True)]
        for epoch, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            lines.append(json.dumps({"type": "epoch", "epoch": epoch, "train_loss": tr, "val_loss": va},
                                    sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path, config: dict | None = None) -> None:
        Path(path).write_text(self.to_jsonl(config))

    @classmethod
    def load(cls, path) -> "TrainReport":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        header = rows[0]
        epochs = rows[1:]
        return cls([r["train_loss"] for r in epochs], [r["val_loss"] for r in epochs],
                   header["stop_reason"], header["iterations"], header.get("best_epoch"))


# -- distances and loss -------------------------------------------------------

def euclidean_distance(a, b) -> float:
    a, b = as_vec(a), as_vec(b)
    if a.shape != b.shape:
        raise ShapeError(f"embedding dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    return math.sqrt(float(diff @ diff))


def mahalanobis_distance(a, b, lam, tol: float = 1e-8) -> float:
    a, b, lam = as_vec(a), as_vec(b), as_mat(lam)
    if a.shape != b.shape or lam.shape != (a.shape[0], a.shape[0]):
        raise ShapeError(f"incompatible shapes {a.shape}, {b.shape}, {lam.shape}")
    if np.max(np.abs(lam - lam.T), initial=0.0) > tol:
        raise ValueError("Mahalanobis matrix must be symmetric")
    if a.shape[0] and np.linalg.eigvalsh(lam).min() < -tol:
        raise ValueError("Mahalanobis matrix must be positive semi-definite")
    diff = a - b
    return math.sqrt(max(float(diff @ lam @ diff), 0.0))


def contrastive_loss(d: float, label: int, g: float) -> float:
    if label == 0:
        return 0.5 * d * d
    gap = max(0.0, g - d)
    return 0.5 * gap * gap


def contrastive_loss_grad(a: np.ndarray, b: np.ndarray, label: int, g: float):
    """Loss and its gradient w.r.t. the left embedding.

    The gradient w.r.t. the right embedding is the negation. ``None`` is
    returned for the gradient when it vanishes identically (margin deadzone,
    or coincident points).
    """
    diff = a - b
    d = math.sqrt(float(diff @ diff))
    loss = contrastive_loss(d, label, g)
    if label == 0:
        return loss, (diff if d > 0 else None)
    if d >= g or d == 0.0:
        return loss, None
    return loss, (-(g - d) / d) * diff


def pair_loss_and_grads(params: FusionParams, p_i: AttributedSequence, p_j: AttributedSequence,
                        label: int, margin: float):
    """Siamese forward/backward for one feedback triplet.

    Returns ``(loss, grads)`` where ``grads`` is ``None`` if the pair
    contributes no gradient.
    """
    e_i, cache_i = fusion_forward(params, p_i)
    e_j, cache_j = fusion_forward(params, p_j)
    loss, de = contrastive_loss_grad(e_i, e_j, label, margin)
    if de is None:
        return loss, None
    g_i = fusion_backward(params, cache_i, de)
    g_j = fusion_backward(params, cache_j, -de)
    return loss, {k: g_i[k] + g_j[k] for k in g_i}


def pair_loss(params: FusionParams, p_i, p_j, label: int, margin: float) -> float:
    e_i = fusion_forward(params, p_i)[0]
    e_j = fusion_forward(params, p_j)[0]
    return contrastive_loss(euclidean_distance(e_i, e_j), label, margin)


def sgd_step(tensors: dict, grads: dict, lr: float, l2: float) -> None:
    """In-place update ``theta -= lr * (grad + l2 * theta)``."""
    for name, theta in tensors.items():
        step = grads[name] + l2 * theta if l2 else grads[name]
        theta -= lr * step


def _mean_loss(params, triplets, dataset, margin):
    if not triplets:
        return None
    return float(np.mean([pair_loss(params, dataset[t.left], dataset[t.right], t.label, margin) for t in triplets]))


def train(model: FusionParams, feedback: Sequence[FeedbackTriplet], dataset: Dataset, config: TrainingConfig):
    """Contrastive metric learning with per-pair SGD.

    Each epoch visits the training triplets in a seeded shuffled order.
    Training stops when the epoch-mean loss moves by less than
    ``convergence_eps``, when the validation loss has not improved for
    ``patience`` epochs, or after ``max_iterations`` epochs. With
    ``restore_best`` the parameters from the best validation epoch are
    returned. The input model is not modified.
    """
    if not feedback:
        raise ConfigError("training needs at least one feedback triplet")
    params = model.copy()
    train_set, val_set = split_feedback(list(feedback), config.validation_fraction, config.seed)
    if not train_set:
        raise ConfigError("validation split left no training triplets")
    rng = make_rng(config.seed, 2)
    tensors = params.tensors()
    report = TrainReport()
    prev_epoch_loss = None
    prev_pair_loss = {}
    best_val, best_params, stale = math.inf, None, 0
    eps = config.convergence_eps

    for epoch in range(1, config.max_iterations + 1):
        losses = []
        for idx in rng.permutation(len(train_set)).tolist():
            t = train_set[idx]
            loss, grads = pair_loss_and_grads(params, dataset[t.left], dataset[t.right], t.label, config.margin)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch} on triplet {t}", epoch, t)
            losses.append(loss)
            if config.per_pair_break:
                previous = prev_pair_loss.get(idx)
                prev_pair_loss[idx] = loss
                if previous is not None and abs(loss - previous) < eps:
                    break
            if grads is not None:
                sgd_step(tensors, grads, config.learning_rate, config.l2_lambda)
        train_loss = float(np.mean(losses))
        val_loss = _mean_loss(params, val_set, dataset, config.margin)
        if val_loss is not None and not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.iterations = epoch

        if val_loss is not None:
            if val_loss < best_val:
                best_val, stale = val_loss, 0
                report.best_epoch = epoch
                if config.restore_best:
                    best_params = params.copy()
            else:
                stale += 1
                if stale >= config.patience:
                    report.stop_reason = STOP_EARLY
                    break
        if prev_epoch_loss is not None and abs(train_loss - prev_epoch_loss) < eps:
            report.stop_reason = STOP_CONVERGED
            break
        prev_epoch_loss = train_loss

    if best_params is not None:
        params = best_params
    return params, report


def embed_all(model: FusionParams, dataset: Dataset) -> list:
    """``(id, embedding)`` for every attributed sequence, in dataset order."""
    return [(p.id, fusion_forward(model, p)[0]) for p in dataset]


# -- reconstruction pre-training -------------------------------------------------

@dataclass
class Decoders:
    """Temporary heads that reconstruct the inputs from an embedding.

    The attribute decoder is one linear layer. The sequence decoder is an
    LSTM whose initial hidden state is ``tanh(P e + b_p)`` and which reads
    the embedding at every step; a linear layer plus softmax turns each
    hidden state into a distribution over items.
    """

    W_attr: np.ndarray
    b_attr: np.ndarray
    P: np.ndarray
    b_p: np.ndarray
    lstm: SeqNetParams
    W_out: np.ndarray
    b_out: np.ndarray

    def tensors(self) -> dict:
        out = {"dec.W_attr": self.W_attr, "dec.b_attr": self.b_attr, "dec.P": self.P, "dec.b_p": self.b_p}
        out.update(self.lstm.tensors("dec.lstm"))
        out["dec.W_out"] = self.W_out
        out["dec.b_out"] = self.b_out
        return out


def init_decoders(params: FusionParams, seed: int) -> Decoders:
    rng = make_rng(seed, 3)
    d = output_dim(params)
    u, r, hidden = params.attr_dim, params.item_dim, params.seqnet.hidden
    return Decoders(
        W_attr=glorot_uniform(u, d, rng),
        b_attr=np.zeros(u, dtype=DTYPE),
        P=glorot_uniform(hidden, d, rng),
        b_p=np.zeros(hidden, dtype=DTYPE),
        lstm=init_seqnet(d, hidden, rng),
        W_out=glorot_uniform(r, hidden, rng),
        b_out=np.zeros(r, dtype=DTYPE),
    )


def reconstruction_loss_and_grads(params: FusionParams, dec: Decoders, p: AttributedSequence, omega_a: float,
                                  need_grads: bool = True):
    """Weighted reconstruction loss of one attributed sequence.

    Loss is ``omega_a * MSE(attributes) + (1 - omega_a) * CE(sequence)``
    with the cross-entropy averaged over the true steps. Returns
    ``(loss, encoder_grads, decoder_grads)``.
    """
    omega_s = 1.0 - omega_a
    e, cache = fusion_forward(params, p)
    dec_grads = {k: np.zeros_like(v) for k, v in dec.tensors().items()} if need_grads else None
    de = np.zeros_like(e)
    loss = 0.0

    if omega_a > 0:
        x = p.attributes
        resid = dec.W_attr @ e + dec.b_attr - x
        loss += omega_a * float(resid @ resid) / x.shape[0]
        if need_grads:
            dxhat = (2.0 * omega_a / x.shape[0]) * resid
            dec_grads["dec.W_attr"] = np.outer(dxhat, e)
            dec_grads["dec.b_attr"] = dxhat
            de += dec.W_attr.T @ dxhat

    if omega_s > 0:
        steps = p.sequence.steps
        T = steps.shape[0]
        h0 = np.tanh(dec.P @ e + dec.b_p)
        hs, lcache = lstm_unroll(dec.lstm, np.broadcast_to(e, (T, e.shape[0])), h0=h0)
        logits = hs[1:] @ dec.W_out.T + dec.b_out
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        loss += omega_s * float(-(logp * steps).sum()) / T
        if need_grads:
            dlogits = (omega_s / T) * (np.exp(logp) - steps)
            dec_grads["dec.W_out"] = dlogits.T @ hs[1:]
            dec_grads["dec.b_out"] = dlogits.sum(axis=0)
            back = lstm_backward(dec.lstm, lcache, dlogits @ dec.W_out)
            d = dec.lstm.hidden
            for kind in ("W", "U", "b"):
                for k, g in enumerate(GATES):
                    dec_grads[f"dec.lstm.{kind}_{g}"] = back[kind][k * d:(k + 1) * d]
            dpre = back["h0"] * (1.0 - h0 * h0)
            dec_grads["dec.P"] = np.outer(dpre, e)
            dec_grads["dec.b_p"] = dpre
            de += back["xs"].sum(axis=0) + dec.P.T @ dpre

    if not need_grads:
        return loss, None, None
    return loss, fusion_backward(params, cache, de), dec_grads


def pretrain(model: FusionParams, dataset: Dataset, config: TrainingConfig, history: list | None = None):
    """Reconstruction pre-training of the encoder; decoders are discarded.

    Runs ``pretrain_epochs`` passes of per-instance SGD in a seeded shuffled
    order. Mean epoch losses are appended to ``history`` when given.
    """
    params = model.copy()
    if config.pretrain_epochs == 0:
        return params
    dec = init_decoders(params, config.seed)
    enc_t, dec_t = params.tensors(), dec.tensors()
    rng = make_rng(config.seed, 4)
    items = list(dataset)
    lr, l2 = config.pretrain_learning_rate, config.l2_lambda
    for epoch in range(1, config.pretrain_epochs + 1):
        total = 0.0
        for idx in rng.permutation(len(items)).tolist():
            loss, g_enc, g_dec = reconstruction_loss_and_grads(params, dec, items[idx], config.pretrain_omega_a)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite pre-training loss at epoch {epoch} on {items[idx].id!r}", epoch)
            total += loss
            sgd_step(enc_t, g_enc, lr, l2)
            sgd_step(dec_t, g_dec, lr, l2)
        if history is not None:
            history.append(total / len(items))
    return params


def config_dict(config: TrainingConfig) -> dict:
    return asdict(config)
