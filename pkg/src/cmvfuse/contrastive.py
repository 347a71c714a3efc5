"""Landmark selection and the structure-aware contrastive objectives."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

from .graphs import ViewGraphs
from .nn import relu

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    gamma: float = 0.2
    delta: float = 10.0
    lambda_syn: float = 0.5
    lambda_amr: float = 0.2
    lambda_kg: float = 0.5

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if min(self.lambda_syn, self.lambda_amr, self.lambda_kg) < 0:
            raise ValueError("loss coefficients must be >= 0")


@dataclass
class LandmarkSet:
    indices: list[int]
    k: int
    importance: np.ndarray

    def to_dict(self) -> dict:
        return {"k": self.k, "indices": list(self.indices),
                "importance": [float(x) for x in self.importance]}


def landmark_count(n: int) -> int:
    return max(1, math.floor(math.log10(max(2, n)) ** 2))


def importance_scores(a_sem, valid: Sequence[bool] | None = None) -> np.ndarray:
    """Mean plus max attention per row, restricted to valid tokens."""
    a = np.asarray(a_sem.detach().cpu().numpy() if torch.is_tensor(a_sem) else a_sem,
                   dtype=np.float64)
    if valid is not None:
        keep = np.asarray(valid, dtype=bool)
        a = a[np.ix_(keep, keep)]
    n = a.shape[0]
    return a.sum(axis=1) / n + a.max(axis=1)


def select_landmarks(importance: Sequence[float], n: int) -> LandmarkSet:
    """Top-k tokens by importance; ties go to the lower index."""
    importance = np.asarray(importance, dtype=np.float64)
    k = landmark_count(n)
    order = np.argsort(-importance, kind="stable")
    return LandmarkSet(indices=[int(i) for i in order[:k]], k=k, importance=importance)


def positive_sets(anchor: int, graphs: ViewGraphs, view: str, none_index: int = 0) -> set[int]:
    """Structurally related tokens for ``anchor``.

    ``syn``: dependency neighbours, plus tokens sharing the anchor's
    finest-slice constituent without a dependency edge, plus the anchor.
    ``amr``: tokens joined to the anchor by an AMR edge in either direction.
    """
    if view == "syn":
        dep = graphs.a_dep[anchor]
        con = graphs.a_con[0][anchor]
        out = {int(j) for j in np.flatnonzero(dep == 1)}
        out |= {int(j) for j in np.flatnonzero((con == 1) & (dep == 0))}
        out.add(anchor)
        return out
    if view == "amr":
        linked = (graphs.a_amr[anchor] != none_index) | (graphs.a_amr[:, anchor] != none_index)
        return {int(j) for j in np.flatnonzero(linked) if j != anchor}
    raise ValueError(f"unknown contrastive view {view!r}")


def cosine_distance(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    u = torch.nn.functional.normalize(u, dim=-1, eps=1e-8)
    v = torch.nn.functional.normalize(v, dim=-1, eps=1e-8)
    return 1.0 - (u * v).sum(dim=-1)


def margin_from_distances(d_pos: float, d_neg: float, config: ContrastiveConfig) -> float:
    return max(0.0, d_pos - d_neg + config.gamma) / config.delta


def margin_view_loss(anchor: int, reps: torch.Tensor, positives: Iterable[int],
                     config: ContrastiveConfig, n_valid: int | None = None) -> torch.Tensor:
    """Margin loss between mean positive and mean negative cosine distance.

    The anchor's zero self-distance only counts when the anchor is its own
    sole positive. Returns an exact zero when either side is empty.
    """
    n = reps.shape[0] if n_valid is None else n_valid
    positives = set(positives)
    negatives = [j for j in range(n) if j not in positives and j != anchor]
    zero = reps.new_zeros(())
    if not positives or not negatives:
        return zero
    others = sorted(positives - {anchor})
    if others:
        d_pos = cosine_distance(reps[anchor].unsqueeze(0), reps[others]).mean()
    else:
        d_pos = zero
    d_neg = cosine_distance(reps[anchor].unsqueeze(0), reps[negatives]).mean()
    return relu(d_pos - d_neg + config.gamma) / config.delta


def kg_infonce(text_reps: torch.Tensor, kg_reps: torch.Tensor, proj_weight: torch.Tensor,
               proj_bias: torch.Tensor | None = None, temperature: float = 1.0) -> torch.Tensor:
    """InfoNCE between projected text tokens and their same-position KG vectors.

    Both sides are L2-normalized, so logits are cosine similarities. Rows
    whose KG vector is all zeros are dropped before pooling.
    """
    keep = kg_reps.abs().sum(dim=-1) > 0
    text_reps, kg_reps = text_reps[keep], kg_reps[keep]
    if text_reps.shape[0] < 2:
        log.warning("kg_infonce: %d valid token(s); InfoNCE needs at least 2, returning 0",
                    int(text_reps.shape[0]))
        return proj_weight.new_zeros(())
    z = text_reps @ proj_weight
    if proj_bias is not None:
        z = z + proj_bias
    z = torch.nn.functional.normalize(z, dim=-1, eps=1e-8)
    k = torch.nn.functional.normalize(kg_reps, dim=-1, eps=1e-8)
    logits = z @ k.T / temperature
    targets = torch.arange(logits.shape[0])
    return torch.nn.functional.cross_entropy(logits, targets)


def combined_scl(syn_losses: Sequence, amr_losses: Sequence, kg_loss,
                 config: ContrastiveConfig):
    """Weighted sum of summed per-anchor margin losses and the KG loss."""
    total = 0.0
    if config.lambda_syn:
        total = total + config.lambda_syn * sum(syn_losses, 0.0)
    if config.lambda_amr:
        total = total + config.lambda_amr * sum(amr_losses, 0.0)
    if config.lambda_kg:
        total = total + config.lambda_kg * kg_loss
    return total
