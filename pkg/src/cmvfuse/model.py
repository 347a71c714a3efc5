"""The full multi-view model: encoders, fusion, classifier head and losses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import contrastive as scl
from .config import TrainConfig
from .embeddings import EmbeddingSource, KgSource
from .exceptions import ConfigurationError
from .fusion import (
    FusionTrace,
    cross_modal_enhance,
    hierarchical_combine,
    level1_syntactic_fusion,
    level2_semantic_integration,
    level3_knowledge_integration,
)
from .graphs import AmrRelationVocabulary, ParsedExample, ViewGraphs, build_view_graphs
from .nn import ParameterStore, build_semantic_adjacency, encode_view, record_decision

PROB_FLOOR = 1e-12


@dataclass
class PreparedExample:
    """Model-ready tensors for one example, built once per dataset."""

    index: int
    example: ParsedExample
    graphs: ViewGraphs
    h_bert: torch.Tensor
    kg: torch.Tensor
    adjacency: dict[str, torch.Tensor]

    @property
    def n(self) -> int:
        return self.example.n


@dataclass
class ForwardResult:
    probs: torch.Tensor
    trace: FusionTrace
    views: dict[str, torch.Tensor]
    a_sem: torch.Tensor


@dataclass
class LossBreakdown:
    total: torch.Tensor
    ce: torch.Tensor
    scl: torch.Tensor
    syn: torch.Tensor
    amr: torch.Tensor
    kg: torch.Tensor
    probs: torch.Tensor
    landmarks: list[scl.LandmarkSet] = field(default_factory=list)

    def components(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("total", "ce", "scl", "syn", "amr", "kg")}


def classify_aspect(h_final: torch.Tensor, aspect_span: Sequence[int], weight: torch.Tensor,
                    bias: torch.Tensor, pooling: str = "mean") -> torch.Tensor:
    """Pool the aspect rows, apply the affine head and return class probabilities."""
    start, end = aspect_span
    pooled = h_final[start:end].mean(dim=0) if pooling == "mean" else h_final[start]
    return torch.softmax(pooled @ weight + bias, dim=-1)


def ce_loss(probs: torch.Tensor, labels: Sequence[int]) -> torch.Tensor:
    """Mean negative log-likelihood of the gold class, floored at 1e-12."""
    labels = torch.as_tensor(list(labels), dtype=torch.long)
    picked = probs[torch.arange(len(labels)), labels]
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def total_loss(ce: torch.Tensor, scl_value) -> torch.Tensor:
    return ce + scl_value


class CMVFuseModel:
    """Parameters plus forward/loss computation for a :class:`TrainConfig`."""

    def __init__(self, config: TrainConfig, vocab: AmrRelationVocabulary | None = None,
                 dtype: torch.dtype = torch.float32):
        self.config = config
        self.vocab = vocab if vocab is not None else AmrRelationVocabulary()
        self.dtype = dtype
        self.store = ParameterStore(config.seed, dtype)
        self._register()

    # -- parameters ------------------------------------------------------------
    def _register(self) -> None:
        c, s = self.config, self.store
        d, half = c.hidden_dim, c.hidden_dim // 2

        def linear(path, fan_in, fan_out, bias=True):
            s.add(f"{path}.W", (fan_in, fan_out))
            if bias:
                s.add(f"{path}.b", (fan_out,), fan_in=fan_in)

        def mha(path, width):
            for name in ("Wq", "Wk", "Wv", "Wo"):
                s.add(f"{path}.{name}", (width, width))

        def norm(path, width):
            s.add(f"{path}.gamma", (width,), init="ones")
            s.add(f"{path}.beta", (width,), init="zeros")

        s.add("semadj.Wq", (d, d))
        s.add("semadj.Wk", (d, d))
        for view, depth in self.depths().items():
            for layer in range(1, depth + 1):
                s.add(f"{view}gcn.layer{layer}.W", (d, d))
        linear("kg_in", c.kg_dim, d)
        for level in ("level1", "level2", "level3"):
            linear(f"{level}.gate", 2 * d, d)
            mha(f"{level}.mha", d)
            norm(f"{level}.ln", d)
        s.add("level2.ffn.W1", (3 * d, 2 * d))
        s.add("level2.ffn.b1", (2 * d,), fan_in=3 * d)
        s.add("level2.ffn.W2", (2 * d, d))
        s.add("level2.ffn.b2", (d,), fan_in=2 * d)
        linear("cross.text", d, half)
        linear("cross.graph", d, half)
        mha("cross.mha", half)
        linear("cross.up", half, d)
        s.add("alpha", (3,), init="zeros")
        linear("kg_proj", d, c.kg_dim)
        linear("classifier", d, 3)

    def depths(self) -> dict[str, int]:
        c = self.config
        return {"amr": c.l_a, "dep": c.l_d, "con": c.l_c, "sem": c.l_s}

    def view_weights(self, view: str) -> list[torch.Tensor]:
        return [self.store[f"{view}gcn.layer{l}.W"] for l in range(1, self.depths()[view] + 1)]

    def set_dtype(self, dtype: torch.dtype) -> None:
        self.store = self.store.astype(dtype)
        self.dtype = dtype

    # -- data ------------------------------------------------------------------
    def prepare(self, examples: Sequence[ParsedExample],
                embeddings: EmbeddingSource | None = None,
                kg: KgSource | None = None, start_index: int = 0) -> list[PreparedExample]:
        c = self.config
        embeddings = embeddings or EmbeddingSource(c.hidden_dim, seed=c.seed)
        kg = kg or KgSource(c.kg_dim)
        if embeddings.dim != c.hidden_dim:
            raise ConfigurationError(
                f"embedding width {embeddings.dim} != hidden_dim {c.hidden_dim}")
        if kg.dim != c.kg_dim:
            raise ConfigurationError(f"KG width {kg.dim} != kg_dim {c.kg_dim}")
        out = []
        for offset, ex in enumerate(examples):
            idx = start_index + offset
            ex.validate(max_length=c.max_length)
            graphs = build_view_graphs(ex, self.vocab, c.l_c)
            as_t = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64), dtype=self.dtype)
            out.append(PreparedExample(
                index=idx,
                example=ex,
                graphs=graphs,
                h_bert=as_t(embeddings(ex, idx)),
                kg=as_t(kg(ex, idx)),
                adjacency={
                    "dep": as_t(graphs.a_dep),
                    "con": as_t(graphs.a_con),
                    "amr": as_t(graphs.a_amr != self.vocab.none),
                },
            ))
        return out

    def cast(self, prepared: Sequence[PreparedExample]) -> list[PreparedExample]:
        """Re-type prepared tensors to the model's current dtype."""
        out = []
        for p in prepared:
            out.append(PreparedExample(
                p.index, p.example, p.graphs, p.h_bert.to(self.dtype), p.kg.to(self.dtype),
                {k: v.to(self.dtype) for k, v in p.adjacency.items()},
            ))
        return out

    # -- forward ---------------------------------------------------------------
    def forward(self, p: PreparedExample) -> ForwardResult:
        c, s = self.config, self.store
        views = set(c.views)
        heads = c.head_count
        h_bert = p.h_bert

        a_sem = build_semantic_adjacency(h_bert, s["semadj.Wq"], s["semadj.Wk"], heads,
                                         top_p=c.sem_top_p)
        adjacency = dict(p.adjacency, sem=a_sem)
        h = {v: encode_view(h_bert, v, adjacency, self.view_weights(v))
             for v in ("con", "dep", "sem", "amr") if v in views}

        gates = {}
        if "con" in h or "dep" in h:
            h_syn, g = level1_syntactic_fusion(h.get("con"), h.get("dep"), s.group("level1"), heads)
            if g is not None:
                gates["syn"] = g
        else:
            h_syn = torch.zeros_like(h_bert)

        h_inter, g = level2_semantic_integration(h.get("sem"), h.get("amr"), h_syn, h_bert,
                                                 s.group("level2"), heads)
        if g is not None:
            gates["sem"] = g

        if "kg" in views:
            valid = (p.kg.abs().sum(dim=1, keepdim=True) > 0).to(self.dtype)
            h_kg = (p.kg @ s["kg_in.W"] + s["kg_in.b"]) * valid
            h_global, gates["kg"] = level3_knowledge_integration(h_inter, h_kg,
                                                                 s.group("level3"), heads)
        else:
            h_global = h_inter

        if c.cross_modal:
            h_enhanced = cross_modal_enhance(h_bert, h_global, s.group("cross"), heads)
        else:
            h_enhanced = h_global

        h_final, alpha = hierarchical_combine(h_syn, h_inter, h_enhanced, s["alpha"])
        probs = classify_aspect(h_final, p.example.aspect_span, s["classifier.W"],
                                s["classifier.b"], c.pooling)
        trace = FusionTrace(h_syn, h_inter, h_global, h_enhanced, h_final, alpha, gates)
        return ForwardResult(probs, trace, h, a_sem)

    def landmarks(self, p: PreparedExample, a_sem: torch.Tensor) -> scl.LandmarkSet:
        chosen = scl.select_landmarks(scl.importance_scores(a_sem), p.n)
        record_decision(tuple(chosen.indices))
        return chosen

    def batch_loss(self, batch: Sequence[PreparedExample]) -> LossBreakdown:
        c = self.config
        cc = c.contrastive
        views, losses = set(c.views), set(c.losses)
        use_syn = "syn" in losses and bool({"dep", "con"} & views) and cc.lambda_syn > 0
        use_amr = "amr" in losses and "amr" in views and cc.lambda_amr > 0
        use_kg = "kg" in losses and "dep" in views and "kg" in views and cc.lambda_kg > 0
        zero = torch.zeros((), dtype=self.dtype)

        probs, syn_terms, amr_terms, text_rows, kg_rows, marks = [], [], [], [], [], []
        for p in batch:
            out = self.forward(p)
            probs.append(out.probs)
            if not (use_syn or use_amr or use_kg):
                continue
            chosen = self.landmarks(p, out.a_sem)
            marks.append(chosen)
            for anchor in chosen.indices:
                if use_syn:
                    pos = scl.positive_sets(anchor, p.graphs, "syn", self.vocab.none)
                    syn_terms.append(scl.margin_view_loss(anchor, out.trace.h_syn, pos, cc))
                if use_amr:
                    pos = scl.positive_sets(anchor, p.graphs, "amr", self.vocab.none)
                    amr_terms.append(scl.margin_view_loss(anchor, out.views["amr"], pos, cc))
            if use_kg:
                text_rows.append(out.views["dep"])
                kg_rows.append(p.kg)

        prob_mat = torch.stack(probs)
        ce = ce_loss(prob_mat, [p.example.label_index for p in batch])
        kg_loss = zero
        if use_kg:
            kg_loss = scl.kg_infonce(torch.cat(text_rows), torch.cat(kg_rows),
                                     self.store["kg_proj.W"], self.store["kg_proj.b"])
        cfg = scl.ContrastiveConfig(
            gamma=cc.gamma, delta=cc.delta,
            lambda_syn=cc.lambda_syn if use_syn else 0.0,
            lambda_amr=cc.lambda_amr if use_amr else 0.0,
            lambda_kg=cc.lambda_kg if use_kg else 0.0,
        )
        scl_value = scl.combined_scl(syn_terms, amr_terms, kg_loss, cfg)
        if not torch.is_tensor(scl_value):
            scl_value = zero + scl_value
        return LossBreakdown(
            total=total_loss(ce, scl_value), ce=ce, scl=scl_value,
            syn=sum(syn_terms, zero), amr=sum(amr_terms, zero), kg=kg_loss,
            probs=prob_mat, landmarks=marks,
        )

    @torch.no_grad()
    def predict_proba(self, prepared: Sequence[PreparedExample]) -> np.ndarray:
        if not prepared:
            return np.zeros((0, 3))
        return torch.stack([self.forward(p).probs for p in prepared]).cpu().numpy()
