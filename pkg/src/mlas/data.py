"""Attributed sequences, feedback triplets and their on-disk formats.

Dataset files are JSON lines, one record per attributed sequence::

    {"id": "s1", "attributes": [0.1, 2.0], "sequence": ["login", "search"]}

Feedback files are ``left_id,right_id,label`` lines with label 0 (similar)
or 1 (dissimilar). In both formats blank lines and lines starting with ``#``
are ignored, which is where generated files keep their provenance header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EncodingError, LengthError, ParseError, SchemaError, UnknownIdError
from .linalg import DTYPE, make_rng


@dataclass(frozen=True)
class Vocabulary:
    items: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        items = tuple(self.items)
        if not items:
            raise SchemaError("vocabulary must contain at least one item")
        index = {item: i for i, item in enumerate(items)}
        if len(index) != len(items):
            raise SchemaError("vocabulary items must be unique")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[str]]) -> "Vocabulary":
        return cls(tuple(sorted({item for seq in sequences for item in seq})))

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self._index

    def index(self, item: str) -> int:
        try:
            return self._index[item]
        except KeyError:
            raise EncodingError(item) from None


@dataclass(frozen=True)
class EncodedSequence:
    """T x r one-hot matrix; rows past ``true_length`` are zero padding."""

    matrix: np.ndarray
    true_length: int

    @property
    def steps(self) -> np.ndarray:
        return self.matrix[: self.true_length]

    def padded(self, T: int) -> "EncodedSequence":
        extra = T - self.matrix.shape[0]
        if extra < 0:
            raise LengthError(f"cannot pad length-{self.matrix.shape[0]} matrix down to {T}")
        pad = np.zeros((extra, self.matrix.shape[1]), dtype=DTYPE)
        return EncodedSequence(np.vstack([self.matrix, pad]), self.true_length)


def one_hot_encode(seq: Sequence[str], vocab: Vocabulary, pad_to: int) -> EncodedSequence:
    if len(seq) > pad_to:
        raise LengthError(f"sequence of length {len(seq)} does not fit in T={pad_to}")
    matrix = np.zeros((pad_to, len(vocab)), dtype=DTYPE)
    for t, item in enumerate(seq):
        matrix[t, vocab.index(item)] = 1.0
    matrix.setflags(write=False)
    return EncodedSequence(matrix, len(seq))


def decode(encoded: EncodedSequence, vocab: Vocabulary) -> list[str]:
    return [vocab.items[int(np.argmax(row))] for row in encoded.steps]


@dataclass(frozen=True)
class AttributedSequence:
    id: str
    attributes: np.ndarray
    sequence: EncodedSequence


@dataclass(frozen=True)
class FeedbackTriplet:
    left: str
    right: str
    label: int

    @property
    def similar(self) -> bool:
        return self.label == 0


class Dataset:
    """An ordered collection of attributed sequences sharing (u, T, r)."""

    def __init__(self, vocab: Vocabulary, items: Sequence[AttributedSequence]):
        items = tuple(items)
        if not items:
            raise SchemaError("dataset is empty")
        self.vocab = vocab
        self.items = items
        self.u = items[0].attributes.shape[0]
        self.T, self.r = items[0].sequence.matrix.shape
        self._by_id = {}
        for p in items:
            if p.attributes.shape != (self.u,):
                raise SchemaError(f"record {p.id!r}: expected {self.u} attributes, got {p.attributes.shape[0]}")
            if p.sequence.matrix.shape != (self.T, self.r):
                raise SchemaError(f"record {p.id!r}: sequence shape {p.sequence.matrix.shape} != {(self.T, self.r)}")
            if p.id in self._by_id:
                raise SchemaError(f"duplicate id {p.id!r}")
            self._by_id[p.id] = p

    @classmethod
    def from_records(cls, records: Sequence[tuple[str, Sequence[float], Sequence[str]]]) -> "Dataset":
        """Build a dataset from raw ``(id, attributes, items)`` records.

        The vocabulary is the sorted set of items seen and T is the longest
        sequence, exactly as when loading from disk.
        """
        if not records:
            raise SchemaError("dataset is empty")
        vocab = Vocabulary.from_sequences(seq for _, _, seq in records)
        T = max(len(seq) for _, _, seq in records)
        items = []
        for rid, attrs, seq in records:
            if len(seq) == 0:
                raise SchemaError(f"record {rid!r}: empty sequence")
            x = np.array(attrs, dtype=DTYPE)
            if not np.all(np.isfinite(x)):
                raise SchemaError(f"record {rid!r}: non-finite attribute")
            x.setflags(write=False)
            items.append(AttributedSequence(str(rid), x, one_hot_encode(seq, vocab, T)))
        return cls(vocab, items)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, id_):
        return id_ in self._by_id

    def __getitem__(self, id_: str) -> AttributedSequence:
        try:
            return self._by_id[id_]
        except KeyError:
            raise UnknownIdError(f"unknown id {id_!r}", [id_]) from None

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.items]

    def raw_records(self):
        for p in self.items:
            yield p.id, p.attributes.tolist(), decode(p.sequence, self.vocab)


def _content_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield lineno, stripped


def load_dataset(path) -> Dataset:
    records = []
    attr_dim = None
    for lineno, line in _content_lines(Path(path).read_text()):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(rec, dict) or not {"id", "attributes", "sequence"} <= rec.keys():
            raise ParseError("record needs 'id', 'attributes' and 'sequence'", lineno)
        attrs, seq = rec["attributes"], rec["sequence"]
        if not isinstance(attrs, list) or not all(
            isinstance(a, (int, float)) and not isinstance(a, bool) for a in attrs
        ):
            raise ParseError("'attributes' must be an array of numbers", lineno)
        if not isinstance(seq, list) or not seq or not all(isinstance(s, str) for s in seq):
            raise ParseError("'sequence' must be a non-empty array of strings", lineno)
        if attr_dim is None:
            attr_dim = len(attrs)
        elif len(attrs) != attr_dim:
            raise SchemaError(f"line {lineno}: expected {attr_dim} attributes, got {len(attrs)}")
        records.append((str(rec["id"]), attrs, seq))
    if not records:
        raise SchemaError(f"{path}: no records")
    return Dataset.from_records(records)


def save_dataset(dataset: Dataset, path, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    for rid, attrs, seq in dataset.raw_records():
        lines.append(json.dumps({"id": rid, "attributes": attrs, "sequence": seq}))
    Path(path).write_text("\n".join(lines) + "\n")


def validate_triplet(t: FeedbackTriplet, dataset: Dataset) -> None:
    if t.label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {t.label!r}")
    if t.left == t.right:
        raise UnknownIdError(f"self-pair {t.left!r}", [t.left])
    for id_ in (t.left, t.right):
        if id_ not in dataset:
            raise UnknownIdError(f"unknown id {id_!r}", [id_])


def load_feedback(path, dataset: Dataset) -> list[FeedbackTriplet]:
    # duplicates and contradictory labels are kept verbatim
    triplets = []
    for lineno, line in _content_lines(Path(path).read_text()):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError("expected 'left_id,right_id,label'", lineno)
        left, right, raw_label = parts
        try:
            label = int(raw_label)
        except ValueError:
            raise ValueError(f"line {lineno}: label must be 0 or 1, got {raw_label!r}") from None
        t = FeedbackTriplet(left, right, label)
        try:
            validate_triplet(t, dataset)
        except UnknownIdError as exc:
            raise UnknownIdError(f"line {lineno}: {exc}", exc.ids) from None
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        triplets.append(t)
    return triplets


def save_feedback(triplets: Iterable[FeedbackTriplet], path, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{t.left},{t.right},{t.label}" for t in triplets]
    Path(path).write_text("\n".join(lines) + "\n")


def partition_feedback(triplets: Iterable[FeedbackTriplet]):
    """Split feedback into the similar set S and the dissimilar set D."""
    similar, dissimilar = [], []
    for t in triplets:
        (similar if t.label == 0 else dissimilar).append(t)
    return similar, dissimilar


def split_feedback(triplets: Sequence[FeedbackTriplet], validation_fraction: float, seed: int):
    """Deterministic random train/validation split.

    The validation set holds ``round(fraction * len(triplets))`` triplets;
    both halves keep the original relative order.
    """
    if not 0.0 <= validation_fraction < 1.0:
        raise ValueError(f"validation_fraction must be in [0, 1), got {validation_fraction}")
    n = len(triplets)
    n_val = int(round(validation_fraction * n))
    perm = make_rng(seed, 1).permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = [t for i, t in enumerate(triplets) if i not in val_idx]
    val = [t for i, t in enumerate(triplets) if i in val_idx]
    return train, val
