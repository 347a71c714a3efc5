"""Token embedding and KG vector sources.

Contextual embeddings are consumed, never computed. They come from an
artifact file (JSON or ``.npz`` mapping ``embedding_ref`` to an ``n x d``
matrix) or from the seeded stub described by :func:`stub_value`.
"""
from __future__ import annotations

import hashlib
import json
import logging
from os import PathLike
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import ConfigurationError, ValidationError
from .graphs import ParsedExample

log = logging.getLogger(__name__)

STUB_SCALE = 0.1


def stub_hash(seed: int, example_id: str, token_index: int, dim_index: int) -> int:
    """64-bit BLAKE2b digest of ``"{seed}|{example_id}|{token_index}|{dim_index}"``.

    The UTF-8 key is hashed with ``digest_size=8`` and the digest is read as
    an unsigned little-endian integer.
    """
    key = f"{seed}|{example_id}|{token_index}|{dim_index}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def stub_value(seed: int, example_id: str, token_index: int, dim_index: int) -> float:
    """Map :func:`stub_hash` linearly onto ``[-0.1, 0.1]``."""
    u = stub_hash(seed, example_id, token_index, dim_index) / float(2**64 - 1)
    return (2.0 * u - 1.0) * STUB_SCALE


def stub_matrix(seed: int, example_id: str, n: int, d: int) -> np.ndarray:
    return np.array(
        [[stub_value(seed, example_id, i, j) for j in range(d)] for i in range(n)],
        dtype=np.float64,
    )


def _load_matrix_artifact(path: str | PathLike) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"artifact not found: {path}")
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            return {k: np.asarray(data[k], dtype=np.float64) for k in data.files}
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {ref: np.asarray(rows, dtype=np.float64) for ref, rows in raw.items()}


class EmbeddingSource:
    """Per-token contextual vectors for an example.

    With no artifact every example gets stub vectors keyed by its
    ``embedding_ref`` (or ``example-{index}`` when it has none).
    """

    def __init__(self, dim: int, artifact: Mapping[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.artifact = dict(artifact) if artifact is not None else None

    @classmethod
    def from_file(cls, path: str | PathLike, dim: int, seed: int = 0) -> "EmbeddingSource":
        return cls(dim, _load_matrix_artifact(path), seed)

    def example_id(self, example: ParsedExample, index: int) -> str:
        return example.embedding_ref if example.embedding_ref is not None else f"example-{index}"

    def __call__(self, example: ParsedExample, index: int) -> np.ndarray:
        ref = self.example_id(example, index)
        if self.artifact is None:
            return stub_matrix(self.seed, ref, example.n, self.dim)
        if ref not in self.artifact:
            raise ValidationError(f"embedding_ref {ref!r} not in embedding artifact",
                                  field="embedding_ref")
        mat = np.asarray(self.artifact[ref], dtype=np.float64)
        if mat.shape != (example.n, self.dim):
            raise ConfigurationError(
                f"embedding for {ref!r} has shape {mat.shape}, expected {(example.n, self.dim)}"
            )
        return mat


class KgSource:
    """Per-token KG vectors; tokens without one get a zero row.

    The JSON artifact maps ``kg_ref`` to a list with one entry per token,
    either a vector of width ``dim`` or ``null``.
    """

    def __init__(self, dim: int, artifact: Mapping[str, list] | None = None):
        self.dim = dim
        self.artifact = dict(artifact) if artifact is not None else None

    @classmethod
    def from_file(cls, path: str | PathLike, dim: int) -> "KgSource":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"artifact not found: {path}")
        if path.suffix == ".npz":
            with np.load(path, allow_pickle=False) as data:
                return cls(dim, {k: np.asarray(data[k]) for k in data.files})
        with open(path, encoding="utf-8") as fh:
            return cls(dim, json.load(fh))

    def __call__(self, example: ParsedExample, index: int) -> np.ndarray:
        out = np.zeros((example.n, self.dim), dtype=np.float64)
        rows = None
        if self.artifact is not None and example.kg_ref is not None:
            rows = self.artifact.get(example.kg_ref)
        if rows is None:
            log.warning("no KG vectors for example %d (kg_ref=%r); using zeros",
                        index, example.kg_ref)
            return out
        if len(rows) != example.n:
            raise ConfigurationError(
                f"KG entry {example.kg_ref!r} has {len(rows)} rows for {example.n} tokens"
            )
        missing = 0
        for i, row in enumerate(rows):
            if row is None:
                missing += 1
                continue
            vec = np.asarray(row, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ConfigurationError(
                    f"KG vector width {vec.shape} for {example.kg_ref!r}, expected {self.dim}"
                )
            out[i] = vec
        if missing:
            log.warning("%d token(s) of example %d lack KG vectors; using zeros", missing, index)
        return out
