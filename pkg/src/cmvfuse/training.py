"""Training loop, evaluation, checkpoints and the ablation harness."""
from __future__ import annotations

import io
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .embeddings import EmbeddingSource, KgSource
from .exceptions import ConfigurationError, NumericError
from .graphs import LABELS, AmrRelationVocabulary, ParsedExample
from .metrics import EvalReport
from .model import CMVFuseModel, PreparedExample, ce_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cmvfuse-checkpoint/1"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_ce: float
    dev: EvalReport

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "train_ce": self.train_ce, "dev": self.dev.to_dict()}


@dataclass
class TrainResult:
    model: CMVFuseModel
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def store(self):
        return self.model.store


def configure_determinism(single_worker: bool = True) -> None:
    torch.use_deterministic_algorithms(True)
    if single_worker:
        torch.set_num_threads(1)


def shuffle_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Batch order for ``epoch``; a pure function of ``(seed, epoch)``."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def _as_prepared(model: CMVFuseModel, data, embeddings, kg) -> list[PreparedExample]:
    if data and isinstance(data[0], PreparedExample):
        return list(data)
    return model.prepare(data, embeddings, kg)


def evaluate(model: CMVFuseModel, dataset: Sequence, embeddings: EmbeddingSource | None = None,
             kg: KgSource | None = None) -> EvalReport:
    """Argmax predictions over ``dataset`` summarized as an :class:`EvalReport`."""
    prepared = _as_prepared(model, dataset, embeddings, kg)
    probs = model.predict_proba(prepared)
    gold = [p.example.label_index for p in prepared]
    loss = float(ce_loss(torch.as_tensor(probs, dtype=torch.float64), gold)) if gold else None
    return EvalReport.from_predictions(gold, probs.argmax(axis=1).tolist(), loss)


def train(config: TrainConfig, train_set: Sequence, dev_set: Sequence, *,
          vocab: AmrRelationVocabulary | None = None,
          embeddings: EmbeddingSource | None = None, kg: KgSource | None = None,
          dev_embeddings: EmbeddingSource | None = None, dev_kg: KgSource | None = None,
          checkpoint_path: str | PathLike | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Adam over seeded mini-batches, evaluating on ``dev_set`` after each epoch.

    The returned model carries the parameters of the best dev epoch (highest
    accuracy, ties to lower dev loss, then to the earlier epoch), which is
    also what gets written to ``checkpoint_path``.
    """
    if not train_set or not dev_set:
        raise ConfigurationError("train and dev sets must be non-empty")
    configure_determinism()
    model = CMVFuseModel(config, vocab)
    train_p = _as_prepared(model, train_set, embeddings, kg)
    dev_p = _as_prepared(model, dev_set, dev_embeddings or embeddings, dev_kg or kg)
    optimizer = torch.optim.Adam(model.store.parameters(), lr=config.learning_rate)

    result = TrainResult(model)
    best_key, best_state = None, None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_order(len(train_p), config.seed, epoch)
        total_sum = ce_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_p[i] for i in order[start:start + config.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            parts = model.batch_loss(batch)
            if not torch.isfinite(parts.total):
                raise NumericError(
                    f"non-finite loss in epoch {epoch}",
                    {"epoch": epoch, "batch": [p.index for p in batch],
                     "components": parts.components()},
                )
            parts.total.backward()
            optimizer.step()
            total_sum += parts.total.item() * len(batch)
            ce_sum += parts.ce.item() * len(batch)
        report = evaluate(model, dev_p)
        record = EpochRecord(epoch, total_sum / len(train_p), ce_sum / len(train_p), report)
        result.log.append(record)
        log.info("epoch %d loss=%.4f ce=%.4f dev_acc=%.4f dev_f1=%.4f", epoch,
                 record.train_loss, record.train_ce, report.accuracy, report.macro_f1)
        if on_epoch is not None:
            on_epoch(record)
        key = (report.accuracy, -(report.loss or 0.0))
        if best_key is None or key > best_key:
            best_key, best_state, result.best_epoch = key, model.store.state_dict(), epoch

    model.store.load_state_dict(best_state)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model)
    return result


# -- checkpoints ---------------------------------------------------------------

def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path: str | PathLike, model: CMVFuseModel) -> None:
    """Write a byte-reproducible ``.npz`` archive of config, vocab and parameters."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "classes": list(LABELS),
        "seed": model.config.seed,
        "vocab": model.vocab.to_dict(),
        "shapes": {k: list(v.shape) for k, v in model.store.items()},
    }
    entries = {"__meta__": np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for k, v in model.store.state_dict().items():
        entries[f"param/{k}"] = v
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, array in entries.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, _npy_bytes(array))


def read_checkpoint(path: str | PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unrecognized checkpoint format {meta.get('format')!r}")
    if meta.get("classes") != list(LABELS):
        raise ConfigurationError(f"checkpoint class order {meta.get('classes')} != {list(LABELS)}")
    return meta, params


def load_checkpoint(path: str | PathLike, config: TrainConfig | None = None) -> CMVFuseModel:
    """Rebuild a model from a checkpoint.

    When ``config`` is given its architecture must match the stored arrays;
    otherwise a :class:`ConfigurationError` describes the mismatch.
    """
    meta, params = read_checkpoint(path)
    config = config or TrainConfig.from_dict(meta["config"])
    model = CMVFuseModel(config, AmrRelationVocabulary.from_mapping(meta["vocab"]))
    model.store.load_state_dict(params)
    return model


# -- ablation ------------------------------------------------------------------

VIEW_GRID = (
    ("amr",), ("syn",), ("kg",),
    ("amr", "syn"), ("amr", "kg"), ("syn", "kg"),
    ("amr", "syn", "kg"),
)
LOSS_GRID = ("scl", "amr", "syn", "kg")


@dataclass
class AblationRow:
    table: str
    name: str
    config: TrainConfig
    dev: EvalReport
    train: EvalReport
    seconds: float

    def to_dict(self) -> dict:
        return {"table": self.table, "name": self.name,
                "views": list(self.config.views), "losses": list(self.config.losses),
                "dev": self.dev.to_dict(), "train": self.train.to_dict(),
                "seconds": self.seconds}


def view_subset_config(config: TrainConfig, subset: Sequence[str]) -> TrainConfig:
    """Enable the semantic encoder plus the chosen ``amr``/``syn``/``kg`` views."""
    views = ["sem"]
    if "amr" in subset:
        views.append("amr")
    if "syn" in subset:
        views += ["dep", "con"]
    if "kg" in subset:
        views.append("kg")
    return config.replace(views=tuple(views))


def loss_removal_config(config: TrainConfig, removed: str) -> TrainConfig:
    if removed == "scl":
        return config.replace(losses=())
    return config.replace(losses=tuple(l for l in config.losses if l != removed))


def ablation_grid(config: TrainConfig, view_grid=VIEW_GRID, loss_grid=LOSS_GRID):
    cells = []
    for subset in view_grid:
        mark = lambda v: "x" if v in subset else "-"
        cells.append(("views", f"amr={mark('amr')} syn={mark('syn')} kg={mark('kg')}",
                      view_subset_config(config, subset)))
    for removed in loss_grid:
        cells.append(("losses", f"w/o L_{removed}", loss_removal_config(config, removed)))
    return cells


def ablate(config: TrainConfig, train_set: Sequence[ParsedExample],
           dev_set: Sequence[ParsedExample], grid=None, **train_kwargs) -> list[AblationRow]:
    """Train and evaluate every cell of the view grid and the loss-removal grid."""
    rows = []
    for table, name, cell_config in (grid or ablation_grid(config)):
        start = time.perf_counter()
        result = train(cell_config, train_set, dev_set, **train_kwargs)
        kwargs = {k: train_kwargs[k] for k in ("embeddings", "kg") if k in train_kwargs}
        dev_kwargs = {
            "embeddings": train_kwargs.get("dev_embeddings") or train_kwargs.get("embeddings"),
            "kg": train_kwargs.get("dev_kg") or train_kwargs.get("kg"),
        }
        rows.append(AblationRow(
            table, name, cell_config,
            dev=evaluate(result.model, dev_set, **dev_kwargs),
            train=evaluate(result.model, train_set, **kwargs),
            seconds=time.perf_counter() - start,
        ))
        log.info("ablation %s / %s: dev_acc=%.4f", table, name, rows[-1].dev.accuracy)
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    header = f"{'table':<8}{'cell':<24}{'dev_acc':>9}{'dev_f1':>9}{'train_acc':>11}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.table:<8}{r.name:<24}{r.dev.accuracy * 100:>9.2f}"
                     f"{r.dev.macro_f1 * 100:>9.2f}{r.train.accuracy * 100:>11.2f}")
    return "\n".join(lines)
