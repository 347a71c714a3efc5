"""Corpus I/O and the seeded synthetic fixture corpus."""
from __future__ import annotations

import json
from os import PathLike
from pathlib import Path
from typing import Iterable

import numpy as np

from .embeddings import stub_value
from .exceptions import DatasetError, ValidationError
from .graphs import LABELS, ParsedExample


def load_dataset(path: str | PathLike, max_length: int | None = 100) -> list[ParsedExample]:
    """Read and validate a JSONL corpus.

    Every line is checked; if any fail, a :class:`DatasetError` lists them
    all with their 1-based line numbers.
    """
    path = Path(path)
    examples, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(ValidationError(f"malformed JSON: {exc.msg}", line=lineno))
                continue
            try:
                example = ParsedExample.from_dict(record)
                example.validate(max_length=max_length)
            except ValidationError as exc:
                errors.append(ValidationError(exc.message, field=exc.field, line=lineno))
                continue
            examples.append(example)
    if errors:
        raise DatasetError(errors)
    return examples


def write_dataset(path: str | PathLike, examples: Iterable[ParsedExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), sort_keys=True) + "\n")


# -- synthetic corpus ----------------------------------------------------------

OPINIONS = {
    "positive": ("great", "delicious", "friendly", "lovely"),
    "neutral": ("average", "okay", "standard", "typical"),
    "negative": ("awful", "rude", "bland", "terrible"),
}
NOUNS = ("food", "service", "staff", "price", "menu", "decor", "wine", "pasta",
         "coffee", "view", "dessert", "music")
VERBS = ("was", "seemed")

# the X was O1 but the Y seemed O2
_DEP = [(2, 1, "nsubj"), (1, 0, "det"), (2, 3, "acomp"), (2, 4, "cc"), (2, 7, "conj"),
        (7, 6, "nsubj"), (6, 5, "det"), (7, 8, "acomp")]
_CON = [(0, 2, "NP", 1), (5, 7, "NP", 1), (2, 4, "VP", 2), (7, 9, "VP", 2),
        (0, 4, "S", 3), (5, 9, "S", 3), (0, 9, "S", 4)]


def synthetic_corpus(size: int = 30, seed: int = 0) -> list[ParsedExample]:
    """Two-clause sentences whose label depends on an AMR-only link.

    Each sentence names two nouns and two opinion words of different
    polarity. Surface syntax always pairs each noun with the opinion in its
    own clause, but in "crossed" sentences the AMR edges attach each opinion
    to the other clause's noun. The gold label is the polarity of the
    opinion the AMR graph attaches to the aspect noun, so only the AMR view
    tells crossed and uncrossed sentences apart.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(size):
        label = LABELS[i % 3]
        other = LABELS[(i % 3 + 1 + int(rng.integers(2))) % 3]
        noun_a, noun_b = rng.choice(NOUNS, size=2, replace=False)
        aspect_first = bool(rng.integers(2))
        crossed = bool(rng.integers(2))
        # opinion attached (in AMR) to the aspect carries the label
        aspect_pos = 1 if aspect_first else 6
        aspect_clause_first = aspect_first != crossed
        op_aspect = str(rng.choice(OPINIONS[label]))
        op_other = str(rng.choice(OPINIONS[other]))
        o1, o2 = (op_aspect, op_other) if aspect_clause_first else (op_other, op_aspect)
        tokens = ("the", str(noun_a), VERBS[0], o1, "but", "the", str(noun_b), VERBS[1], o2)
        first_target, second_target = (6, 1) if crossed else (1, 6)
        amr = [
            (3, ":ARG1", first_target) if rng.integers(2) else (first_target, ":ARG1-of", 3),
            (8, ":ARG1", second_target),
            (4, ":op1", 3),
            (4, ":op2", 8),
            (1, ":mod", 0),
            (6, ":mod", 5),
        ]
        out.append(ParsedExample(
            tokens=tokens,
            aspect_span=(aspect_pos, aspect_pos + 1),
            label=label,
            dep_edges=tuple(_DEP),
            constituents=tuple(_CON),
            amr_edges=tuple(amr),
            embedding_ref=f"syn-{seed}-{i}",
            kg_ref=f"syn-{seed}-{i}",
        ))
    return out


def word_vector(namespace: str, word: str, dim: int, seed: int = 0) -> list[float]:
    """Stub vector keyed by the word itself, so a word looks the same everywhere."""
    return [stub_value(seed, f"{namespace}:{word}", 0, j) for j in range(dim)]


def synthetic_artifacts(examples: Iterable[ParsedExample], dim: int, kg_dim: int,
                        seed: int = 0) -> tuple[dict, dict]:
    """Word-level embedding and KG artifacts for ``examples``.

    Returns ``(embeddings, kg)`` mappings in the artifact file layout.
    """
    emb, kg = {}, {}
    for ex in examples:
        emb[ex.embedding_ref] = [word_vector("emb", w, dim, seed) for w in ex.tokens]
        kg[ex.kg_ref] = [word_vector("kg", w, kg_dim, seed) for w in ex.tokens]
    return emb, kg
