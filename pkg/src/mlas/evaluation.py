"""Clustering-based evaluation of learned embeddings."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, UnknownIdError
from .linalg import make_rng


@dataclass(frozen=True)
class Partition:
    assignment: dict
    k: int

    def __post_init__(self):
        bad = [i for i, c in self.assignment.items() if not 0 <= c < self.k]
        if bad:
            raise ValueError(f"cluster indices outside [0, {self.k}) for ids {bad[:5]}")

    def labels(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.assignment[i] for i in ids], dtype=int)

    @classmethod
    def from_labels(cls, ids: Sequence[str], labels) -> "Partition":
        labels = [int(c) for c in labels]
        return cls(dict(zip(ids, labels)), (max(labels) + 1) if labels else 0)


def save_truth(truth: Partition, path, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{pid},{g}" for pid, g in truth.assignment.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_truth(path) -> Partition:
    assignment = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            pid, g = (v.strip() for v in line.split(","))
            assignment[pid] = int(g)
        except ValueError:
            raise ParseError("expected 'id,group'", lineno) from None
    return Partition(assignment, max(assignment.values(), default=-1) + 1)


# -- embedding files ----------------------------------------------------------

def save_embeddings(embeddings, path, config: dict | None = None) -> None:
    """JSON lines: an optional header, then one ``{"id", "embedding"}`` per item."""
    lines = []
    if config is not None:
        lines.append(json.dumps({"type": "header", "config": config}, sort_keys=True))
    for pid, vec in embeddings:
        lines.append(json.dumps({"id": pid, "embedding": np.asarray(vec, dtype=float).tolist()}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_embeddings(path):
    """Read a file written by :func:`save_embeddings`; returns ``(embeddings, config)``."""
    out, config, dim = [], None, None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if rec.get("type") == "header":
            config = rec.get("config")
            continue
        try:
            vec = np.array(rec["embedding"], dtype=float)
            pid = str(rec["id"])
        except (KeyError, TypeError, ValueError):
            raise ParseError("expected an 'id' and a numeric 'embedding'", lineno) from None
        if dim is None:
            dim = vec.shape
        elif vec.shape != dim:
            raise ParseError(f"embedding has shape {vec.shape}, earlier ones {dim}", lineno)
        out.append((pid, vec))
    return out, config


# -- k-means ----------------------------------------------------------------

@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    # within-cluster sum of squares after every assignment step
    history: list = field(default_factory=list)


def _plus_plus_centers(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # fewer distinct points than clusters left; take any unused point
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(X, k: int, rng, max_iters: int = 300) -> KMeansResult:
    X = np.asarray(X, dtype=float)
    centers = _plus_plus_centers(X, k, rng)
    labels = None
    history = []
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(X.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers[c] = X[mask].mean(axis=0)
    inertia = float(((X - centers[labels]) ** 2).sum())
    return KMeansResult(labels, centers, inertia, history)


def kmeans(embeddings, k: int, seed: int = 0, max_iters: int = 300, n_init: int = 10) -> Partition:
    """Lloyd's algorithm from k-means++ seeds; the best of ``n_init`` restarts.

    ``embeddings`` is a sequence of ``(id, vector)`` pairs.
    """
    ids = [pid for pid, _ in embeddings]
    n = len(ids)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    X = np.array([np.asarray(v, dtype=float) for _, v in embeddings])
    rng = make_rng(seed, 7)
    best = None
    for _ in range(max(1, n_init)):
        res = lloyd(X, k, rng, max_iters)
        if best is None or res.inertia < best.inertia:
            best = res
    return Partition.from_labels(ids, best.labels) if k > 1 else Partition(dict.fromkeys(ids, 0), 1)


# -- NMI --------------------------------------------------------------------

def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(predicted: Partition, truth: Partition) -> float:
    """Mutual information normalised by the larger of the two entropies.

    When both partitions are a single cluster the score is 1; when exactly
    one of them has zero entropy it is 0.
    """
    if predicted.assignment.keys() != truth.assignment.keys():
        missing = set(predicted.assignment) ^ set(truth.assignment)
        raise UnknownIdError(f"partitions cover different ids, e.g. {sorted(missing)[:3]}", missing)
    ids = list(truth.assignment)
    n = len(ids)
    if n == 0:
        raise ValueError("cannot compare empty partitions")
    _, a = np.unique(predicted.labels(ids), return_inverse=True)
    _, b = np.unique(truth.labels(ids), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    h_a = _entropy(table.sum(axis=1), n)
    h_b = _entropy(table.sum(axis=0), n)
    denom = max(h_a, h_b)
    if denom == 0.0:
        return 1.0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    nz = table > 0
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return min(max(mi / denom, 0.0), 1.0)


# -- feedback distances ---------------------------------------------------------

def pair_distance_stats(embeddings, feedback):
    """Mean embedding distance over similar and dissimilar feedback pairs.

    Either mean is ``None`` when its set is empty.
    """
    table = {pid: np.asarray(v, dtype=float) for pid, v in embeddings}
    sums = {0: [], 1: []}
    for t in feedback:
        for pid in (t.left, t.right):
            if pid not in table:
                raise UnknownIdError(f"feedback id {pid!r} has no embedding", [pid])
        diff = table[t.left] - table[t.right]
        sums[t.label].append(math.sqrt(float(diff @ diff)))
    return tuple(float(np.mean(v)) if v else None for v in (sums[0], sums[1]))


# -- reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    nmi: float
    k: int
    mean_similar_distance: float | None
    mean_dissimilar_distance: float | None
    clusterer: str = "kmeans"
    label: str = "embeddings"
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(embeddings, truth: Partition, feedback=(), k: int | None = None, seed: int = 0,
             max_iters: int = 300, n_init: int = 10, label: str = "embeddings", config=None) -> EvalReport:
    ids = {pid for pid, _ in embeddings}
    if ids != set(truth.assignment):
        raise UnknownIdError("embeddings and ground truth cover different ids", ids ^ set(truth.assignment))
    k = truth.k if k is None else k
    predicted = kmeans(embeddings, k, seed=seed, max_iters=max_iters, n_init=n_init)
    s_mean, d_mean = pair_distance_stats(embeddings, feedback)
    return EvalReport(nmi(predicted, truth), k, s_mean, d_mean, label=label, config=dict(config or {}))


def _fmt(v):
    return "-" if v is None else f"{v:.4f}"


def format_table(reports: Sequence[EvalReport]) -> str:
    header = f"{'embeddings':<20} {'k':>3} {'NMI':>8} {'mean S':>8} {'mean D':>8}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.label:<20} {r.k:>3} {r.nmi:>8.4f} {_fmt(r.mean_similar_distance):>8} "
                     f"{_fmt(r.mean_dissimilar_distance):>8}")
    if len(reports) == 2:
        lines.append(f"{'NMI change':<20} {'':>3} {reports[1].nmi - reports[0].nmi:>+8.4f}")
    return "\n".join(lines)


def save_report(reports: Sequence[EvalReport], path, config: dict | None = None) -> dict:
    doc = {"config": config or {}, "reports": [r.to_dict() for r in reports]}
    if len(reports) == 2:
        doc["nmi_difference"] = reports[1].nmi - reports[0].nmi
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return doc
