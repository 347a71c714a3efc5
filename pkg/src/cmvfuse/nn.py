"""Differentiable building blocks shared by the encoders and fusion levels.

Everything here is functional: layers take their weights as arguments and
the weights live in a :class:`ParameterStore` keyed by dotted path. Autograd
comes from torch; :func:`gradient_check` verifies it against central
differences.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
import torch

from .exceptions import ConfigurationError

VIEWS = ("con", "dep", "sem", "amr")


class ParameterStore:
    """Named trainable arrays with seeded uniform initialization.

    Values are drawn in registration order from one generator, so two stores
    built with the same seed and the same sequence of :meth:`add` calls are
    element-wise identical. Draws happen in float64 and are cast afterwards,
    which keeps float32 and float64 stores consistent with each other.
    """

    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32):
        self.seed = seed
        self.dtype = dtype
        self._generator = torch.Generator().manual_seed(seed)
        self._params: dict[str, torch.Tensor] = {}

    def add(self, path: str, shape: Sequence[int], init: str = "uniform",
            fan_in: int | None = None) -> torch.Tensor:
        if path in self._params:
            raise ConfigurationError(f"parameter {path!r} already registered")
        shape = tuple(int(s) for s in shape)
        if init == "uniform":
            fan_in = fan_in if fan_in is not None else shape[0]
            r = 1.0 / math.sqrt(fan_in)
            u = torch.rand(shape, generator=self._generator, dtype=torch.float64)
            value = (2.0 * u - 1.0) * r
        elif init == "zeros":
            value = torch.zeros(shape, dtype=torch.float64)
        elif init == "ones":
            value = torch.ones(shape, dtype=torch.float64)
        else:
            raise ConfigurationError(f"unknown initializer {init!r}")
        tensor = value.to(self.dtype).requires_grad_(True)
        self._params[path] = tensor
        return tensor

    def __getitem__(self, path: str) -> torch.Tensor:
        try:
            return self._params[path]
        except KeyError:
            raise ConfigurationError(f"no parameter named {path!r}") from None

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def group(self, prefix: str) -> dict[str, torch.Tensor]:
        """Parameters under ``prefix.`` keyed by the remaining path."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self._params.items() if k.startswith(p)}

    def parameters(self) -> list[torch.Tensor]:
        return list(self._params.values())

    def numel(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Accumulated gradients; parameters untouched by backward report zeros."""
        out = {}
        for k, p in self._params.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            out[k] = g.detach().cpu().numpy().copy()
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.detach().cpu().numpy().copy() for k, p in self._params.items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ConfigurationError(
                f"parameter set mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}"
            )
        for k, p in self._params.items():
            a = np.asarray(arrays[k])
            if tuple(a.shape) != tuple(p.shape):
                raise ConfigurationError(
                    f"shape mismatch for {k!r}: checkpoint {tuple(a.shape)} vs model {tuple(p.shape)}"
                )
        with torch.no_grad():
            for k, p in self._params.items():
                p.copy_(torch.as_tensor(np.asarray(arrays[k]), dtype=self.dtype))

    def astype(self, dtype: torch.dtype) -> "ParameterStore":
        """Copy of this store with every array cast to ``dtype``."""
        other = ParameterStore(self.seed, dtype)
        for k, p in self._params.items():
            other._params[k] = p.detach().to(dtype).clone().requires_grad_(True)
        return other


# -- discrete-decision tracing -------------------------------------------------
# Central differences are meaningless across a ReLU kink or a change in the
# selected landmark set; the gradient checker records every such decision at
# theta + eps and theta - eps and drops elements whose decisions differ.

_DECISION_TRACES: list[list] = []


@contextlib.contextmanager
def trace_decisions() -> Iterator[list]:
    trace: list = []
    _DECISION_TRACES.append(trace)
    try:
        yield trace
    finally:
        _DECISION_TRACES.pop()


def record_decision(value) -> None:
    for trace in _DECISION_TRACES:
        trace.append(value)


def relu(x: torch.Tensor) -> torch.Tensor:
    if _DECISION_TRACES:
        record_decision((x > 0).detach().cpu().numpy().tobytes())
    return torch.relu(x)


# -- layers ---------------------------------------------------------------------

def gcn_layer(h: torch.Tensor, adj: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """One unified GCN layer: ``ReLU((A H W + H W) / (deg + 1))``.

    ``deg`` is the row sum of ``adj``, including any self-loop already on its
    diagonal.
    """
    if h.dim() != 2 or adj.dim() != 2 or weight.dim() != 2:
        raise ConfigurationError("gcn_layer expects 2-D H, A and W")
    n, d = h.shape
    if adj.shape != (n, n):
        raise ConfigurationError(f"adjacency shape {tuple(adj.shape)} does not match n={n}")
    if weight.shape[0] != d:
        raise ConfigurationError(f"weight rows {weight.shape[0]} do not match feature width {d}")
    hw = h @ weight
    degree = adj.sum(dim=1, keepdim=True)
    return relu((adj @ hw + hw) / (degree + 1.0))


def encode_view(h0: torch.Tensor, view: str, adjacency: Mapping[str, torch.Tensor],
                weights: Sequence[torch.Tensor]) -> torch.Tensor:
    """Stack ``len(weights)`` GCN layers over the adjacency of ``view``.

    ``con`` consumes one constituency slice per layer, finest depth first;
    the other views reuse their single matrix at every layer.
    """
    if view not in VIEWS:
        raise ConfigurationError(f"unknown view {view!r}")
    if view not in adjacency or adjacency[view] is None:
        raise ConfigurationError(f"no adjacency available for view {view!r}")
    depth = len(weights)
    if depth < 1:
        raise ConfigurationError("encode_view needs at least one layer")
    adj = adjacency[view]
    if view == "con" and adj.shape[0] != depth:
        raise ConfigurationError(
            f"con view has {adj.shape[0]} slices but {depth} layers were requested"
        )
    h = h0
    for layer, w in enumerate(weights):
        a = adj[layer] if view == "con" else adj
        h = gcn_layer(h, a, w)
    return h


def _split_heads(x: torch.Tensor, head_count: int) -> torch.Tensor:
    n, d = x.shape
    return x.reshape(n, head_count, d // head_count).transpose(0, 1)


def _check_heads(width: int, head_count: int) -> None:
    if head_count < 1 or width % head_count:
        raise ConfigurationError(f"head count {head_count} does not divide width {width}")


def attention_logits(q: torch.Tensor, k: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
                     head_count: int) -> torch.Tensor:
    """Scaled per-head dot products, shape ``(head_count, n_q, n_k)``."""
    width = w_q.shape[1]
    _check_heads(width, head_count)
    qh = _split_heads(q @ w_q, head_count)
    kh = _split_heads(k @ w_k, head_count)
    return qh @ kh.transpose(1, 2) / math.sqrt(width // head_count)


def _masked_softmax(logits: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return torch.softmax(logits, dim=-1)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not bool(mask.any()):
        raise ConfigurationError("attention mask has no valid positions")
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


def multi_head_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                         weights: Mapping[str, torch.Tensor], head_count: int,
                         mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention with ``Wq/Wk/Wv/Wo`` projections.

    ``mask`` flags valid key positions. Returns the projected output and the
    per-head attention maps.
    """
    if q.shape[1] != weights["Wq"].shape[0] or k.shape[1] != weights["Wk"].shape[0]:
        raise ConfigurationError("attention input width does not match projection weights")
    if k.shape[0] != v.shape[0]:
        raise ConfigurationError("keys and values must have the same length")
    probs = _masked_softmax(
        attention_logits(q, k, weights["Wq"], weights["Wk"], head_count), mask
    )
    vh = _split_heads(v @ weights["Wv"], head_count)
    context = (probs @ vh).transpose(0, 1).reshape(q.shape[0], -1)
    return context @ weights["Wo"], probs


def build_semantic_adjacency(h_bert: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
                             head_count: int, mask: torch.Tensor | None = None,
                             top_p: int | None = None) -> torch.Tensor:
    """Row-stochastic token graph from head-averaged attention logits.

    With ``top_p`` set, each row keeps only its ``top_p`` largest entries and
    is renormalized.
    """
    logits = attention_logits(h_bert, h_bert, w_q, w_k, head_count).mean(dim=0)
    adj = _masked_softmax(logits, mask)
    if top_p is not None and top_p < adj.shape[1]:
        idx = torch.topk(adj.detach(), top_p, dim=1).indices
        keep = torch.zeros_like(adj, dtype=torch.bool).scatter_(1, idx, True)
        adj = adj * keep
        adj = adj / adj.sum(dim=1, keepdim=True)
    return adj


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
               eps: float = 1e-5) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gamma + beta


# -- gradient checking ---------------------------------------------------------

@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: str | None
    checked: int
    excluded: int
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "worst": self.worst,
            "checked": self.checked,
            "excluded": self.excluded,
            "failures": self.failures,
        }


def _choose_elements(store: ParameterStore, max_elements: int | None,
                     seed: int) -> list[tuple[str, int]]:
    everything = [(k, i) for k, p in store.items() for i in range(p.numel())]
    if max_elements is None or len(everything) <= max_elements:
        return everything
    rng = np.random.default_rng(seed)
    chosen: list[tuple[str, int]] = []
    # a few elements from every parameter, then a uniform fill
    for k, p in store.items():
        take = min(p.numel(), 3)
        for i in rng.choice(p.numel(), size=take, replace=False):
            chosen.append((k, int(i)))
    picked = set(chosen)
    rest = [e for e in everything if e not in picked]
    extra = max(0, max_elements - len(chosen))
    if extra:
        for j in rng.choice(len(rest), size=min(extra, len(rest)), replace=False):
            chosen.append(rest[int(j)])
    return chosen


def gradient_check(loss_fn: Callable[[ParameterStore], torch.Tensor], store: ParameterStore,
                   epsilon: float = 1e-4, tolerance: float = 1e-3,
                   max_elements: int | None = 400, seed: int = 0,
                   floor: float = 1e-6) -> GradCheckReport:
    """Compare autograd against central differences element by element.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``. Elements whose
    perturbation flips a ReLU or another recorded discrete decision are
    excluded. At least ``min(size, 3)`` elements of every parameter are
    checked when subsampling.
    """
    store.zero_grad()
    loss = loss_fn(store)
    if not torch.isfinite(loss):
        return GradCheckReport(False, math.inf, "<loss>", 0, 0, ["non-finite loss at theta"])
    loss.backward()
    analytic = store.gradients()

    worst, worst_path, checked, excluded = 0.0, None, 0, 0
    failures: list[str] = []
    for path, idx in _choose_elements(store, max_elements, seed):
        param = store[path]
        flat = param.data.view(-1)
        original = flat[idx].item()
        values, traces = [], []
        with torch.no_grad():
            for sign in (1.0, -1.0):
                flat[idx] = original + sign * epsilon
                with trace_decisions() as trace:
                    values.append(float(loss_fn(store)))
                traces.append(trace)
            flat[idx] = original
        if not all(math.isfinite(v) for v in values):
            failures.append(f"{path}[{idx}]: non-finite loss")
            worst, worst_path = math.inf, path
            continue
        if traces[0] != traces[1]:
            excluded += 1
            continue
        numeric = (values[0] - values[1]) / (2 * epsilon)
        a = float(analytic[path].reshape(-1)[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        checked += 1
        if rel > worst:
            worst, worst_path = rel, f"{path}[{idx}]"
        if rel > tolerance:
            failures.append(f"{path}[{idx}]: analytic={a:.6e} numeric={numeric:.6e} rel={rel:.2e}")
    store.zero_grad()
    return GradCheckReport(worst <= tolerance and not failures, worst, worst_path,
                           checked, excluded, failures)
