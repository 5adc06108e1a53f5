"""Seeded attributed-sequence datasets with planted group structure.

Each group has its own attribute mean and spread and its own Markov chain
over items. An optional nuisance factor shifts the attributes of every
instance by one of a few offsets chosen independently of its group, which
gives unsupervised embeddings a tempting but wrong partition to find.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, FeedbackTriplet
from .evaluation import Partition
from .linalg import make_rng


@dataclass
class SynthSpec:
    attribute_means: list
    attribute_spread: list
    transitions: list
    initial: list
    length_range: tuple = (5, 12)
    n_per_group: int = 50
    n_feedback: int = 40
    similar_fraction: float = 0.5
    nuisance_offsets: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.attribute_means = np.asarray(self.attribute_means, dtype=float)
        self.attribute_spread = np.broadcast_to(
            np.asarray(self.attribute_spread, dtype=float), (self.attribute_means.shape[0],)
        ).copy()
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        self.nuisance_offsets = np.asarray(self.nuisance_offsets, dtype=float).reshape(-1, self.u)
        self.length_range = tuple(int(v) for v in self.length_range)
        self.validate()

    @property
    def n_groups(self) -> int:
        return self.attribute_means.shape[0]

    @property
    def u(self) -> int:
        return self.attribute_means.shape[1]

    @property
    def r(self) -> int:
        return self.transitions.shape[-1]

    def validate(self) -> None:
        G, r = self.n_groups, self.transitions.shape[-1]
        if G < 1:
            raise ValueError("need at least one group")
        if self.transitions.shape != (G, r, r) or self.initial.shape != (G, r):
            raise ValueError(f"need {G} transition matrices ({r}x{r}) and initial distributions")
        if np.any(self.transitions < 0) or np.any(np.abs(self.transitions.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition matrices must be row-stochastic (rows sum to 1 within 1e-12)")
        if np.any(self.initial < 0) or np.any(np.abs(self.initial.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("initial item distributions must sum to 1 within 1e-12")
        if np.any(self.attribute_spread < 0):
            raise ValueError("attribute spread must be non-negative")
        t_min, t_max = self.length_range
        if t_min < 1 or t_max < t_min:
            raise ValueError(f"invalid length range {self.length_range}")
        if self.n_per_group < 1:
            raise ValueError("n_per_group must be positive")
        if not 0.0 <= self.similar_fraction <= 1.0:
            raise ValueError("similar_fraction must be in [0, 1]")
        n_sim, n_dis = self.feedback_counts()
        max_sim = G * self.n_per_group * (self.n_per_group - 1) // 2
        max_dis = G * (G - 1) // 2 * self.n_per_group ** 2
        if n_sim > max_sim or n_dis > max_dis:
            raise ValueError(f"cannot draw {n_sim} similar / {n_dis} dissimilar distinct pairs")

    def feedback_counts(self) -> tuple[int, int]:
        if self.n_groups == 1:
            return self.n_feedback, 0
        n_sim = int(round(self.n_feedback * self.similar_fraction))
        return n_sim, self.n_feedback - n_sim

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def stationary_distribution(P) -> np.ndarray:
    """Left eigenvector of ``P`` for eigenvalue 1, normalised to sum 1."""
    P = np.asarray(P, dtype=float)
    A = np.vstack([P.T - np.eye(P.shape[0]), np.ones(P.shape[0])])
    rhs = np.zeros(P.shape[0] + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _normalise_rows(M):
    M = M / M.sum(axis=-1, keepdims=True)
    # push the residual rounding onto the largest entry so rows sum to 1 exactly
    idx = np.argmax(M, axis=-1)
    resid = 1.0 - M.sum(axis=-1)
    np.put_along_axis(M, idx[..., None], np.take_along_axis(M, idx[..., None], -1) + resid[..., None], -1)
    return M


def default_spec(n_groups: int = 2, u: int = 6, r: int = 10, length_range=(5, 12), n_per_group: int = 50,
                 n_feedback: int = 40, similar_fraction: float = 0.5, attribute_separation: float = 2.0,
                 attribute_spread: float = 0.3, transition_divergence: float = 0.9, nuisance_scale: float = 5.0,
                 seed: int = 0) -> SynthSpec:
    """Build a spec with randomly drawn (but seeded) group parameters.

    ``attribute_separation`` is the distance between group attribute means,
    ``transition_divergence`` in [0, 1] mixes a shared transition matrix with
    group-specific ones, and ``nuisance_scale`` is the distance between the
    two group-independent attribute offsets (0 disables them). Walks start
    from each chain's stationary distribution.
    """
    rng = make_rng(seed, 6)
    direction = rng.normal(size=u)
    direction /= np.linalg.norm(direction)
    if n_groups == 2:
        means = np.outer([-0.5, 0.5], direction) * attribute_separation
    else:
        raw = rng.normal(size=(n_groups, u))
        raw -= raw.mean(axis=0)
        scale = np.mean([np.linalg.norm(a - b) for a, b in itertools.combinations(raw, 2)]) if n_groups > 1 else 1.0
        means = raw / scale * attribute_separation
    base = rng.dirichlet(np.ones(r), size=r)
    specific = rng.dirichlet(np.full(r, 0.3), size=(n_groups, r))
    transitions = _normalise_rows((1 - transition_divergence) * base + transition_divergence * specific)
    initial = _normalise_rows(np.array([stationary_distribution(P) for P in transitions]))
    nuisance = []
    if nuisance_scale > 0:
        nd = rng.normal(size=u)
        nd -= (nd @ direction) * direction
        nd /= np.linalg.norm(nd)
        nuisance = np.outer([-0.5, 0.5], nd) * nuisance_scale
    return SynthSpec(means, attribute_spread, transitions, initial, tuple(length_range), n_per_group, n_feedback,
                     similar_fraction, nuisance, seed)


def item_names(r: int) -> list[str]:
    width = len(str(r - 1))
    return [f"e{i:0{width}d}" for i in range(r)]


def generate(spec: SynthSpec):
    """Draw ``(dataset, truth, feedback)`` from ``spec``; deterministic per seed."""
    rng = make_rng(spec.seed, 5)
    names = item_names(spec.r)
    t_min, t_max = spec.length_range
    width = len(str(spec.n_groups * spec.n_per_group - 1))
    records, groups = [], {}
    members = [[] for _ in range(spec.n_groups)]
    for g in range(spec.n_groups):
        for _ in range(spec.n_per_group):
            pid = f"p{len(records):0{width}d}"
            x = spec.attribute_means[g] + spec.attribute_spread[g] * rng.normal(size=spec.u)
            if len(spec.nuisance_offsets):
                x = x + spec.nuisance_offsets[rng.integers(len(spec.nuisance_offsets))]
            length = int(rng.integers(t_min, t_max + 1))
            state = rng.choice(spec.r, p=spec.initial[g])
            seq = [state]
            for _ in range(length - 1):
                state = rng.choice(spec.r, p=spec.transitions[g, state])
                seq.append(state)
            records.append((pid, x.tolist(), [names[s] for s in seq]))
            groups[pid] = g
            members[g].append(pid)
    dataset = Dataset.from_records(records)
    truth = Partition(groups, spec.n_groups)
    return dataset, truth, _sample_feedback(spec, members, rng)


def _sample_feedback(spec: SynthSpec, members, rng):
    n_sim, n_dis = spec.feedback_counts()
    seen = set()
    out = []

    def draw(n, pick):
        count = 0
        while count < n:
            a, b = pick()
            key = frozenset((a, b))
            if a == b or key in seen:
                continue
            seen.add(key)
            count += 1
            yield a, b

    def similar_pair():
        g = int(rng.integers(spec.n_groups))
        i, j = rng.choice(spec.n_per_group, size=2, replace=False)
        return members[g][i], members[g][j]

    def dissimilar_pair():
        g, h = rng.choice(spec.n_groups, size=2, replace=False)
        return members[g][rng.integers(spec.n_per_group)], members[h][rng.integers(spec.n_per_group)]

    out += [FeedbackTriplet(a, b, 0) for a, b in draw(n_sim, similar_pair)]
    out += [FeedbackTriplet(a, b, 1) for a, b in draw(n_dis, dissimilar_pair)]
    order = rng.permutation(len(out))
    return [out[i] for i in order]
