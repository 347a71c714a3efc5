"""Three-level gated fusion of the view encodings.

Each level takes its weights as a mapping (usually ``store.group("level1")``
and friends) so the functions stay usable on their own in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

from .exceptions import ConfigurationError
from .nn import layer_norm, multi_head_attention, relu


@dataclass
class FusionTrace:
    """Per-token representations at every fusion stage of one example."""

    h_syn: torch.Tensor
    h_inter: torch.Tensor
    h_global: torch.Tensor
    h_enhanced: torch.Tensor
    h_final: torch.Tensor
    alpha: torch.Tensor
    gate_values: dict[str, torch.Tensor] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(t):
            return np.asarray(t.detach().cpu().numpy(), dtype=float).tolist()

        return {
            "h_syn": arr(self.h_syn),
            "h_inter": arr(self.h_inter),
            "h_global": arr(self.h_global),
            "h_enhanced": arr(self.h_enhanced),
            "h_final": arr(self.h_final),
            "alpha": arr(self.alpha),
            "gate_values": {k: arr(v) for k, v in self.gate_values.items()},
        }


def _mha(params: Mapping[str, torch.Tensor], prefix: str = "mha") -> dict[str, torch.Tensor]:
    return {k: params[f"{prefix}.{k}"] for k in ("Wq", "Wk", "Wv", "Wo")}


def gated_fuse(h_a: torch.Tensor, h_b: torch.Tensor, weight: torch.Tensor,
               bias: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """``G * h_a + (1 - G) * h_b`` with ``G = sigmoid([h_a; h_b] W + b)``.

    ``weight`` maps the ``2d`` concatenation to ``d`` gate logits.
    """
    if h_a.shape != h_b.shape:
        raise ConfigurationError(f"gated_fuse inputs differ in shape: {h_a.shape} vs {h_b.shape}")
    d = h_a.shape[-1]
    if weight.shape != (2 * d, d) or bias.shape != (d,):
        raise ConfigurationError(
            f"gate weight {tuple(weight.shape)} / bias {tuple(bias.shape)} do not fit width {d}"
        )
    gate = torch.sigmoid(torch.cat([h_a, h_b], dim=-1) @ weight + bias)
    return gate * h_a + (1.0 - gate) * h_b, gate


def level1_syntactic_fusion(h_con: torch.Tensor | None, h_dep: torch.Tensor | None,
                            params: Mapping[str, torch.Tensor],
                            head_count: int) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Gate constituency against dependency, then self-attend with residual + LayerNorm.

    If only one syntactic view is present it bypasses the gate.
    """
    gate = None
    if h_con is not None and h_dep is not None:
        fused, gate = gated_fuse(h_con, h_dep, params["gate.W"], params["gate.b"])
    elif h_con is not None or h_dep is not None:
        fused = h_con if h_con is not None else h_dep
    else:
        raise ConfigurationError("level 1 needs at least one syntactic view")
    attended, _ = multi_head_attention(fused, fused, fused, _mha(params), head_count)
    return layer_norm(fused + attended, params["ln.gamma"], params["ln.beta"]), gate


def feed_forward(x: torch.Tensor, params: Mapping[str, torch.Tensor]) -> torch.Tensor:
    return relu(x @ params["ffn.W1"] + params["ffn.b1"]) @ params["ffn.W2"] + params["ffn.b2"]


def level2_semantic_integration(h_sem: torch.Tensor | None, h_amr: torch.Tensor | None,
                                h_syn: torch.Tensor, h_bert: torch.Tensor,
                                params: Mapping[str, torch.Tensor],
                                head_count: int) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Gate semantic against AMR, cross-attend to ``h_syn``, then FFN over ``[h_syn; .; h_bert]``."""
    gate = None
    if h_sem is not None and h_amr is not None:
        fused, gate = gated_fuse(h_sem, h_amr, params["gate.W"], params["gate.b"])
    elif h_sem is not None or h_amr is not None:
        fused = h_sem if h_sem is not None else h_amr
    else:
        fused = torch.zeros_like(h_syn)
    attended, _ = multi_head_attention(fused, h_syn, h_syn, _mha(params), head_count)
    refined = layer_norm(fused + attended, params["ln.gamma"], params["ln.beta"])
    return feed_forward(torch.cat([h_syn, refined, h_bert], dim=-1), params), gate


def level3_knowledge_integration(h_inter: torch.Tensor, h_kg: torch.Tensor,
                                 params: Mapping[str, torch.Tensor],
                                 head_count: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Gate the intermediate features against KG vectors, then cross-attend back to them."""
    fused, gate = gated_fuse(h_inter, h_kg, params["gate.W"], params["gate.b"])
    attended, _ = multi_head_attention(fused, h_inter, h_inter, _mha(params), head_count)
    return layer_norm(fused + attended, params["ln.gamma"], params["ln.beta"]), gate


def cross_modal_enhance(h_bert: torch.Tensor, h_global: torch.Tensor,
                        params: Mapping[str, torch.Tensor], head_count: int) -> torch.Tensor:
    """Low-rank cross-attention from graph features (queries) to text features.

    Both sides are projected to ``d/2``; the attended result is projected
    back to ``d`` and added to ``h_global``.
    """
    text = h_bert @ params["text.W"] + params["text.b"]
    graph = h_global @ params["graph.W"] + params["graph.b"]
    attended, _ = multi_head_attention(graph, text, text, _mha(params), head_count)
    return h_global + attended @ params["up.W"] + params["up.b"]


def hierarchical_combine(h_syn: torch.Tensor, h_inter: torch.Tensor, h_enhanced: torch.Tensor,
                         alpha_logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    alpha = torch.softmax(alpha_logits, dim=0)
    return alpha[0] * h_syn + alpha[1] * h_inter + alpha[2] * h_enhanced, alpha
