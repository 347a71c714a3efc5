"""Pre-parsed example ingestion and view-graph compilation.

Three of the four view graphs are built here from parser output that arrives
already aligned to token indices: the labeled AMR adjacency, the symmetric
dependency adjacency and the depth-layered constituency tensor. The semantic
adjacency depends on learned attention weights and is built in
:mod:`cmvfuse.nn`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ValidationError

LABELS = ("positive", "neutral", "negative")

NONE, SELF, UNKNOWN = "<none>", "<self>", "<unknown>"

DEFAULT_RELATIONS = (
    ":ARG0", ":ARG1", ":ARG2", ":ARG3", ":ARG4", ":ARG5",
    ":mod", ":manner", ":time", ":op1", ":op2",
)


@dataclass(frozen=True)
class ParsedExample:
    """One sentence with its aspect, label and aligned parser output.

    ``dep_edges`` holds ``(head, dependent, relation)``, ``constituents``
    holds ``(start, end, label, depth_from_leaves)`` with a half-open token
    interval and ``amr_edges`` holds ``(source, relation, target)``.
    """

    tokens: tuple[str, ...]
    aspect_span: tuple[int, int]
    label: str
    dep_edges: tuple[tuple[int, int, str], ...] = ()
    constituents: tuple[tuple[int, int, str, int], ...] = ()
    amr_edges: tuple[tuple[int, str, int], ...] = ()
    embedding_ref: str | None = None
    kg_ref: str | None = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)

    @classmethod
    def from_dict(cls, record: Mapping) -> "ParsedExample":
        """Build and validate an example from a decoded JSONL record."""
        if not isinstance(record, Mapping):
            raise ValidationError("record must be a JSON object", field="<record>")
        for key in ("tokens", "aspect_span", "label"):
            if key not in record:
                raise ValidationError(f"missing required field {key!r}", field=key)
        try:
            example = cls(
                tokens=tuple(str(t) for t in record["tokens"]),
                aspect_span=tuple(int(i) for i in record["aspect_span"]),
                label=str(record["label"]),
                dep_edges=tuple(
                    (int(h), int(d), str(r)) for h, d, r in record.get("dep_edges", ())
                ),
                constituents=tuple(
                    (int(s), int(e), str(lab), int(dp))
                    for s, e, lab, dp in record.get("constituents", ())
                ),
                amr_edges=tuple(
                    (int(s), str(r), int(t)) for s, r, t in record.get("amr_edges", ())
                ),
                embedding_ref=record.get("embedding_ref"),
                kg_ref=record.get("kg_ref"),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed field: {exc}", field="<record>") from exc
        example.validate()
        return example

    def to_dict(self) -> dict:
        record = {
            "tokens": list(self.tokens),
            "aspect_span": list(self.aspect_span),
            "label": self.label,
            "dep_edges": [list(e) for e in self.dep_edges],
            "constituents": [list(c) for c in self.constituents],
            "amr_edges": [list(e) for e in self.amr_edges],
        }
        if self.embedding_ref is not None:
            record["embedding_ref"] = self.embedding_ref
        if self.kg_ref is not None:
            record["kg_ref"] = self.kg_ref
        return record

    def validate(self, max_length: int | None = None) -> None:
        """Raise :class:`ValidationError` naming the first violated invariant."""
        n = self.n
        if n < 1:
            raise ValidationError("sentence must contain at least one token", field="tokens")
        if max_length is not None and n > max_length:
            raise ValidationError(
                f"sentence has {n} tokens, exceeding max length {max_length}", field="tokens"
            )
        if len(self.aspect_span) != 2:
            raise ValidationError("aspect_span must be [start, end)", field="aspect_span")
        start, end = self.aspect_span
        if not 0 <= start < end <= n:
            raise ValidationError(
                f"aspect_span {list(self.aspect_span)} is not a non-empty interval within [0, {n}]",
                field="aspect_span",
            )
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}", field="label")
        for k, (h, d, _) in enumerate(self.dep_edges):
            if not (0 <= h < n and 0 <= d < n):
                raise ValidationError(
                    f"dep edge #{k} ({h}, {d}) out of range for n={n}", field="dep_edges"
                )
        for k, (s, e, _, depth) in enumerate(self.constituents):
            if not 0 <= s < e <= n:
                raise ValidationError(
                    f"constituent #{k} [{s}, {e}) is empty or outside [0, {n})",
                    field="constituents",
                )
            if depth < 1:
                raise ValidationError(
                    f"constituent #{k} has depth_from_leaves {depth} < 1", field="constituents"
                )
        for k, (s, r, t) in enumerate(self.amr_edges):
            if not (0 <= s < n and 0 <= t < n):
                raise ValidationError(
                    f"amr edge #{k} ({s}, {r!r}, {t}) out of range for n={n}", field="amr_edges"
                )
            if not r.startswith(":"):
                raise ValidationError(
                    f"amr edge #{k} relation {r!r} must start with ':'", field="amr_edges"
                )


class AmrRelationVocabulary:
    """Dense relation -> index map with ``none``/``self``/``unknown`` at 0/1/2."""

    def __init__(self, relations: Iterable[str] = DEFAULT_RELATIONS):
        self._index: dict[str, int] = {NONE: 0, SELF: 1, UNKNOWN: 2}
        for rel in relations:
            canonical, _ = normalize_amr_relation(rel) if rel.startswith(":") else (rel, False)
            if canonical not in self._index:
                self._index[canonical] = len(self._index)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "AmrRelationVocabulary":
        expected = {NONE: 0, SELF: 1, UNKNOWN: 2}
        for key, idx in expected.items():
            if mapping.get(key) != idx:
                raise ValidationError(
                    f"vocabulary must map {key!r} to {idx}", field="vocabulary"
                )
        indices = sorted(mapping.values())
        if indices != list(range(len(indices))):
            raise ValidationError("vocabulary indices must be dense from 0", field="vocabulary")
        vocab = cls(())
        vocab._index = dict(sorted(mapping.items(), key=lambda kv: kv[1]))
        return vocab

    @classmethod
    def load(cls, path: str | PathLike) -> "AmrRelationVocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def save(self, path: str | PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self._index, fh, indent=2)

    def to_dict(self) -> dict[str, int]:
        return dict(self._index)

    @property
    def none(self) -> int:
        return 0

    @property
    def self_index(self) -> int:
        return 1

    @property
    def unknown(self) -> int:
        return 2

    def lookup(self, canonical: str) -> int:
        return self._index.get(canonical, self.unknown)

    def __getitem__(self, relation: str) -> int:
        return self._index[relation]

    def __contains__(self, relation: str) -> bool:
        return relation in self._index

    def __len__(self) -> int:
        return len(self._index)


@dataclass
class ViewGraphs:
    """Adjacency structures for one sentence.

    ``a_sem`` stays ``None`` until the semantic adjacency is computed from
    learned attention.
    """

    a_amr: np.ndarray
    a_dep: np.ndarray
    a_con: np.ndarray
    depth_slices: tuple[int, ...]
    a_sem: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.a_dep.shape[0]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "a_amr": self.a_amr.tolist(),
            "a_dep": self.a_dep.tolist(),
            "a_con": self.a_con.tolist(),
            "depth_slices": list(self.depth_slices),
        }


def normalize_amr_relation(relation: str) -> tuple[str, bool]:
    """Return ``(canonical_relation, flip_direction)``.

    ``:R-of`` becomes ``:R`` with the edge reversed; ``:prep-X`` becomes
    ``X``. Anything else passes through unchanged.

    >>> normalize_amr_relation(":ARG0-of")
    (':ARG0', True)
    >>> normalize_amr_relation(":prep-with")
    ('with', False)
    """
    if relation.startswith(":prep-") and len(relation) > len(":prep-"):
        return relation[len(":prep-"):], False
    if relation.endswith("-of") and len(relation) > len(":-of"):
        return relation[: -len("-of")], True
    return relation, False


def build_amr_adjacency(example: ParsedExample, vocab: AmrRelationVocabulary) -> np.ndarray:
    """Integer n x n matrix of relation indices; the last edge per cell wins."""
    n = example.n
    for k, (s, r, t) in enumerate(example.amr_edges):
        if not (0 <= s < n and 0 <= t < n):
            raise ValidationError(
                f"amr edge #{k} ({s}, {r!r}, {t}) out of range for n={n}", field="amr_edges"
            )
    adj = np.full((n, n), vocab.none, dtype=np.int64)
    for s, r, t in example.amr_edges:
        canonical, flip = normalize_amr_relation(r)
        if flip:
            s, t = t, s
        adj[s, t] = vocab.lookup(canonical)
    np.fill_diagonal(adj, vocab.self_index)
    return adj


def build_dep_adjacency(example: ParsedExample) -> np.ndarray:
    """Symmetric binary n x n matrix with unit diagonal; labels are dropped."""
    n = example.n
    adj = np.eye(n, dtype=np.int64)
    for k, (h, d, _) in enumerate(example.dep_edges):
        if not (0 <= h < n and 0 <= d < n):
            raise ValidationError(
                f"dep edge #{k} ({h}, {d}) out of range for n={n}", field="dep_edges"
            )
        adj[h, d] = adj[d, h] = 1
    return adj


def select_constituency_depths(max_depth: int, l_c: int) -> list[int]:
    """Pick ``l_c`` depths evenly spread over ``[1, max_depth]``.

    A single slice takes the coarsest depth. When more slices are requested
    than depths exist, every depth is used once and the deepest one repeats.
    """
    if max_depth < 1 or l_c < 1:
        raise ValueError("max_depth and l_c must both be >= 1")
    if l_c == 1:
        return [max_depth]
    if l_c > max_depth:
        return list(range(1, max_depth + 1)) + [max_depth] * (l_c - max_depth)
    step = (max_depth - 1) / (l_c - 1)
    # round half up; Python's round() is half-to-even
    return [int(math.floor(1 + i * step + 0.5)) for i in range(l_c)]


def max_constituent_depth(example: ParsedExample) -> int:
    return max((c[3] for c in example.constituents), default=1)


def build_constituency_tensor(example: ParsedExample, depths: Sequence[int]) -> np.ndarray:
    """Binary ``len(depths) x n x n`` tensor, one same-constituent mask per depth."""
    n = example.n
    out = np.zeros((len(depths), n, n), dtype=np.int64)
    for k, depth in enumerate(depths):
        for start, end, _, d in example.constituents:
            if d == depth:
                out[k, start:end, start:end] = 1
        np.fill_diagonal(out[k], 1)
    return out


def build_view_graphs(
    example: ParsedExample, vocab: AmrRelationVocabulary, l_c: int
) -> ViewGraphs:
    example.validate()
    depths = select_constituency_depths(max_constituent_depth(example), l_c)
    return ViewGraphs(
        a_amr=build_amr_adjacency(example, vocab),
        a_dep=build_dep_adjacency(example),
        a_con=build_constituency_tensor(example, depths),
        depth_slices=tuple(depths),
    )


def graph_summary(graphs: Sequence[ViewGraphs], vocab: AmrRelationVocabulary) -> dict:
    """Edge counts and the histogram of selected constituency depths."""
    dep_edges = sum(int((np.triu(g.a_dep, 1) > 0).sum()) for g in graphs)
    amr_edges = 0
    for g in graphs:
        off = ~np.eye(g.n, dtype=bool)
        amr_edges += int((g.a_amr[off] != vocab.none).sum())
    histogram: dict[str, int] = {}
    for g in graphs:
        for d in g.depth_slices:
            histogram[str(d)] = histogram.get(str(d), 0) + 1
    return {
        "examples": len(graphs),
        "dep_edges": dep_edges,
        "amr_edges": amr_edges,
        "depth_histogram": dict(sorted(histogram.items(), key=lambda kv: int(kv[0]))),
    }
