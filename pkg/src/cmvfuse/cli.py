"""Command-line entry point: ``cmvfuse <command> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 2 input/config error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import torch

from .config import TrainConfig
from .contrastive import ContrastiveConfig, positive_sets
from .data import load_dataset, synthetic_artifacts, synthetic_corpus, write_dataset
from .embeddings import EmbeddingSource, KgSource
from .exceptions import CMVFuseError, ConfigurationError, NumericError, ValidationError
from .graphs import AmrRelationVocabulary, ParsedExample, build_view_graphs, graph_summary
from .model import CMVFuseModel
from .nn import gradient_check
from .training import (
    ablate,
    configure_determinism,
    evaluate,
    format_ablation_table,
    load_checkpoint,
    read_checkpoint,
    train,
)

log = logging.getLogger("cmvfuse")

PATH_KEYS = {
    "train_path": "training corpus (JSONL)",
    "dev_path": "dev corpus (JSONL)",
    "test_path": "test corpus (JSONL)",
    "vocab_path": "AMR relation vocabulary (JSON relation -> index)",
    "embeddings_path": "embedding artifact (JSON or .npz); seeded stub when unset",
    "kg_path": "KG vector artifact (JSON or .npz); zero vectors when unset",
    "output_dir": "directory for reports, checkpoints and graph artifacts",
    "checkpoint": "checkpoint file to read (eval) or write (train)",
}
GRADCHECK_KEYS = {
    "gradcheck.epsilon": (float, 1e-4, "central-difference step"),
    "gradcheck.tolerance": (float, 1e-3, "maximum allowed relative error"),
    "gradcheck.max_elements": (int, 400, "elements checked; 0 checks every element"),
}
FIELD_HELP = {
    "l_a": "AMR GCN layers", "l_d": "dependency GCN layers",
    "l_c": "constituency GCN layers (= selected depth slices)", "l_s": "semantic GCN layers",
    "hidden_dim": "model width d (must equal the embedding width)",
    "head_count": "attention heads (must divide hidden_dim/2)",
    "kg_dim": "native KG vector width", "epochs": "training epochs",
    "batch_size": "examples per optimizer step", "learning_rate": "Adam step size",
    "seed": "seed for initialization, shuffling and stub embeddings",
    "views": "comma list from amr,dep,con,sem,kg",
    "losses": "comma list of contrastive terms from syn,amr,kg (empty: CE only)",
    "cross_modal": "enable the cross-modal enhancement stage (true/false)",
    "pooling": "aspect pooling: mean or first",
    "sem_top_p": "keep top-p semantic edges per row (none: dense)",
    "max_length": "reject sentences longer than this",
    "contrastive.gamma": "margin", "contrastive.delta": "margin-loss normalizer",
    "contrastive.lambda_syn": "syntactic contrastive weight",
    "contrastive.lambda_amr": "AMR contrastive weight",
    "contrastive.lambda_kg": "KG InfoNCE weight",
}


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _list(text: str) -> tuple[str, ...]:
    return tuple(t for t in (s.strip() for s in text.split(",")) if t)


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("none", "null", "") else int(text)


def config_keys() -> dict[str, tuple[Any, str]]:
    """Every config key with its argument parser and help text."""
    keys: dict[str, tuple[Any, str]] = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "contrastive":
            for cf in dataclasses.fields(ContrastiveConfig):
                keys[f"contrastive.{cf.name}"] = (float, FIELD_HELP[f"contrastive.{cf.name}"])
            continue
        default = getattr(TrainConfig(), f.name)
        if f.name in ("views", "losses"):
            kind = _list
        elif f.name == "sem_top_p":
            kind = _optional_int
        elif isinstance(default, bool):
            kind = _bool
        else:
            kind = type(default)
        keys[f.name] = (kind, FIELD_HELP[f.name])
    for key, text in PATH_KEYS.items():
        keys[key] = (str, text)
    for key, (kind, _, text) in GRADCHECK_KEYS.items():
        keys[key] = (kind, text)
    return keys


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    group = parser.add_argument_group("config keys")
    for key, (kind, text) in config_keys().items():
        group.add_argument(f"--{key}", dest=key, type=kind, default=argparse.SUPPRESS,
                           metavar=key.split(".")[-1].upper(), help=text)
    parser.add_argument("--single-worker", action="store_true", default=True,
                        help="deterministic single-threaded execution (always on)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def resolve_config(args: argparse.Namespace, base: dict | None = None) -> dict:
    """Merge defaults, ``base``, the config file and explicit flags, in that order."""
    keys = config_keys()
    merged = _flatten(TrainConfig().to_dict())
    merged.update({k: None for k in PATH_KEYS})
    merged.update({k: default for k, (_, default, _) in GRADCHECK_KEYS.items()})
    if base:
        merged.update(_flatten(base))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            from_file = _flatten(json.load(fh))
        unknown = set(from_file) - set(keys)
        if unknown:
            raise ConfigurationError(f"unknown config keys in {path}: {sorted(unknown)}")
        merged.update(from_file)
    for key in keys:
        if key in vars(args):
            merged[key] = vars(args)[key]
    return merged


def train_config(effective: dict) -> TrainConfig:
    fields = {k: v for k, v in effective.items()
              if k in {f.name for f in dataclasses.fields(TrainConfig)}}
    fields["contrastive"] = ContrastiveConfig(**{
        k.split(".", 1)[1]: float(v) for k, v in effective.items()
        if k.startswith("contrastive.")
    })
    for k in ("views", "losses"):
        if isinstance(fields[k], str):
            fields[k] = _list(fields[k])
    return TrainConfig(**fields)


def _require(effective: dict, key: str) -> Path:
    value = effective.get(key)
    if not value:
        raise ConfigurationError(f"--{key} is required for this command")
    path = Path(value)
    if key != "output_dir" and not path.exists():
        raise ConfigurationError(f"{key} not found: {path}")
    return path


def _output_dir(effective: dict) -> Path | None:
    if not effective.get("output_dir"):
        return None
    out = Path(effective["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(out: Path | None, stem: str, payload: Any, text: str) -> None:
    print(text)
    if out is None:
        return
    (out / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / f"{stem}.txt").write_text(text + "\n")


def _echo_config(out: Path | None, effective: dict) -> None:
    if out is not None:
        (out / "effective_config.json").write_text(
            json.dumps(effective, indent=2, sort_keys=True) + "\n")


def _vocab(effective: dict) -> AmrRelationVocabulary:
    if effective.get("vocab_path"):
        return AmrRelationVocabulary.load(_require(effective, "vocab_path"))
    return AmrRelationVocabulary()


def _sources(effective: dict, config: TrainConfig) -> tuple[EmbeddingSource, KgSource]:
    emb = (EmbeddingSource.from_file(_require(effective, "embeddings_path"), config.hidden_dim,
                                     config.seed)
           if effective.get("embeddings_path")
           else EmbeddingSource(config.hidden_dim, seed=config.seed))
    kg = (KgSource.from_file(_require(effective, "kg_path"), config.kg_dim)
          if effective.get("kg_path") else KgSource(config.kg_dim))
    return emb, kg


def _dump_debug(args, out: Path | None, model: CMVFuseModel, examples, emb, kg) -> None:
    if not (args.dump_trace or args.dump_landmarks):
        return
    if out is None:
        raise ConfigurationError("--dump-trace/--dump-landmarks need --output_dir")
    prepared = model.prepare(examples, emb, kg)
    traces, marks = [], []
    with torch.no_grad():
        for p in prepared:
            result = model.forward(p)
            if args.dump_trace:
                traces.append(json.dumps({"index": p.index, **result.trace.to_dict()}))
            if args.dump_landmarks:
                chosen = model.landmarks(p, result.a_sem)
                marks.append(json.dumps({
                    "index": p.index,
                    **chosen.to_dict(),
                    "positives": {
                        str(a): {
                            "syn": sorted(positive_sets(a, p.graphs, "syn", model.vocab.none)),
                            "amr": sorted(positive_sets(a, p.graphs, "amr", model.vocab.none)),
                        } for a in chosen.indices
                    },
                }))
    if args.dump_trace:
        (out / "traces.jsonl").write_text("\n".join(traces) + "\n")
    if args.dump_landmarks:
        (out / "landmarks.jsonl").write_text("\n".join(marks) + "\n")


# -- commands ----------------------------------------------------------------------

def cmd_build_graphs(args) -> int:
    effective = resolve_config(args)
    config = train_config(effective)
    examples = load_dataset(_require(effective, "train_path"), config.max_length)
    vocab = _vocab(effective)
    graphs = [build_view_graphs(ex, vocab, config.l_c) for ex in examples]
    out = _output_dir(effective)
    if out is not None:
        gdir = out / "graphs"
        gdir.mkdir(exist_ok=True)
        for i, g in enumerate(graphs):
            (gdir / f"example-{i:05d}.json").write_text(
                json.dumps({"index": i, **g.to_dict()}, sort_keys=True) + "\n")
        _echo_config(out, effective)
    summary = graph_summary(graphs, vocab)
    text = "\n".join(f"{k}: {v}" for k, v in summary.items())
    _write_report(out, "graph_summary", summary, text)
    return 0


def cmd_train(args) -> int:
    effective = resolve_config(args)
    config = train_config(effective)
    train_set = load_dataset(_require(effective, "train_path"), config.max_length)
    dev_set = load_dataset(_require(effective, "dev_path"), config.max_length)
    out = _output_dir(effective)
    _echo_config(out, effective)
    emb, kg = _sources(effective, config)
    ckpt = effective.get("checkpoint") or (str(out / "checkpoint.npz") if out else None)
    result = train(config, train_set, dev_set, vocab=_vocab(effective), embeddings=emb, kg=kg,
                   checkpoint_path=ckpt)
    lines = [f"{'epoch':>5}{'loss':>10}{'ce':>10}{'dev_acc':>10}{'dev_f1':>10}"]
    for r in result.log:
        lines.append(f"{r.epoch:>5}{r.train_loss:>10.4f}{r.train_ce:>10.4f}"
                     f"{r.dev.accuracy:>10.4f}{r.dev.macro_f1:>10.4f}")
    lines.append(f"best epoch: {result.best_epoch}")
    _write_report(out, "epoch_log", {"epochs": [r.to_dict() for r in result.log],
                                     "best_epoch": result.best_epoch}, "\n".join(lines))
    if effective.get("test_path"):
        test_set = load_dataset(_require(effective, "test_path"), config.max_length)
        report = evaluate(result.model, test_set, emb, kg)
        _write_report(out, "test_report", report.to_dict(), report.to_text())
    _dump_debug(args, out, result.model, dev_set, emb, kg)
    return 0


def cmd_eval(args) -> int:
    pre = resolve_config(args)
    ckpt = _require(pre, "checkpoint")
    meta, _ = read_checkpoint(ckpt)
    effective = resolve_config(args, base=meta["config"])
    config = train_config(effective)
    model = load_checkpoint(ckpt, config)
    key = "test_path" if effective.get("test_path") else "dev_path"
    dataset = load_dataset(_require(effective, key), config.max_length)
    out = _output_dir(effective)
    _echo_config(out, effective)
    emb, kg = _sources(effective, config)
    report = evaluate(model, dataset, emb, kg)
    _write_report(out, "eval_report", report.to_dict(), report.to_text())
    _dump_debug(args, out, model, dataset, emb, kg)
    return 0


def cmd_ablate(args) -> int:
    effective = resolve_config(args)
    config = train_config(effective)
    train_set = load_dataset(_require(effective, "train_path"), config.max_length)
    dev_set = load_dataset(_require(effective, "dev_path"), config.max_length)
    out = _output_dir(effective)
    _echo_config(out, effective)
    emb, kg = _sources(effective, config)
    rows = ablate(config, train_set, dev_set, vocab=_vocab(effective), embeddings=emb, kg=kg)
    _write_report(out, "ablation", [r.to_dict() for r in rows], format_ablation_table(rows))
    return 0


GRADCHECK_EXAMPLE = ParsedExample(
    tokens=("the", "small", "dish", "was", "very", "delicious"),
    aspect_span=(2, 3),
    label="positive",
    dep_edges=((2, 0, "det"), (2, 1, "amod"), (5, 2, "nsubj"), (5, 3, "cop"),
               (5, 4, "advmod")),
    constituents=((0, 3, "NP", 1), (4, 6, "ADJP", 1), (3, 6, "VP", 2), (0, 6, "S", 3)),
    amr_edges=((5, ":ARG1", 2), (2, ":mod", 1), (5, ":degree", 4), (2, ":ARG0-of", 0)),
    kg_ref="gradcheck",
)


def gradcheck_model(config: TrainConfig, example: ParsedExample | None = None,
                    vocab: AmrRelationVocabulary | None = None,
                    embeddings: EmbeddingSource | None = None, kg: KgSource | None = None):
    """Float64 model plus prepared batch for gradient checking.

    Without a KG source, KG vectors come from the seeded stub so the
    knowledge branch and its InfoNCE term are active.
    """
    example = example or GRADCHECK_EXAMPLE
    model = CMVFuseModel(config, vocab, dtype=torch.float64)
    if kg is None:
        emb_stub = EmbeddingSource(config.kg_dim, seed=config.seed + 1)
        ref = example.kg_ref or "gradcheck"
        example = dataclasses.replace(example, kg_ref=ref)
        kg = KgSource(config.kg_dim, {ref: emb_stub(example, 0).tolist()})
    prepared = model.prepare([example], embeddings, kg)
    return model, prepared


def cmd_gradcheck(args) -> int:
    base = {"hidden_dim": 8, "kg_dim": 8}
    effective = resolve_config(args, base=base)
    config = train_config(effective)
    example = None
    if effective.get("train_path"):
        example = load_dataset(_require(effective, "train_path"), config.max_length)[0]
    emb, _ = _sources(effective, config)
    kg = KgSource.from_file(_require(effective, "kg_path"), config.kg_dim) \
        if effective.get("kg_path") else None
    model, prepared = gradcheck_model(config, example, _vocab(effective), emb, kg)
    max_el = effective["gradcheck.max_elements"] or None
    report = gradient_check(lambda s: model.batch_loss(prepared).total, model.store,
                            epsilon=effective["gradcheck.epsilon"],
                            tolerance=effective["gradcheck.tolerance"], max_elements=max_el)
    out = _output_dir(effective)
    _echo_config(out, effective)
    text = (f"passed: {report.passed}\nmax_rel_error: {report.max_rel_error:.3e}\n"
            f"worst: {report.worst}\nchecked: {report.checked}\nexcluded: {report.excluded}")
    if report.failures:
        text += "\nfailures:\n  " + "\n  ".join(report.failures[:20])
    _write_report(out, "gradcheck", report.to_dict(), text)
    return 0 if report.passed else 3


def cmd_synth(args) -> int:
    effective = resolve_config(args)
    config = train_config(effective)
    out = _output_dir(effective)
    if out is None:
        raise ConfigurationError("--output_dir is required for synth")
    examples = synthetic_corpus(args.size, config.seed)
    write_dataset(out / "corpus.jsonl", examples)
    emb, kg = synthetic_artifacts(examples, config.hidden_dim, config.kg_dim, config.seed)
    (out / "embeddings.json").write_text(json.dumps(emb))
    (out / "kg.json").write_text(json.dumps(kg))
    AmrRelationVocabulary().save(out / "vocab.json")
    print(f"wrote {len(examples)} examples to {out}")
    return 0


COMMANDS = {
    "build-graphs": (cmd_build_graphs, "compile AMR/dependency/constituency graphs"),
    "train": (cmd_train, "train a model and write checkpoint + epoch log"),
    "eval": (cmd_eval, "evaluate a checkpoint"),
    "ablate": (cmd_ablate, "run the view and loss ablation grids"),
    "gradcheck": (cmd_gradcheck, "compare autograd with central differences"),
    "synth": (cmd_synth, "write the seeded synthetic corpus and artifacts"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmvfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        _add_config_flags(p)
        if name in ("train", "eval"):
            p.add_argument("--dump-trace", action="store_true",
                           help="write per-example fusion traces to traces.jsonl")
            p.add_argument("--dump-landmarks", action="store_true",
                           help="write landmarks and positive sets to landmarks.jsonl")
        if name == "synth":
            p.add_argument("--size", type=int, default=30, help="number of examples")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    configure_determinism()
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=2, default=str), file=sys.stderr)
        return 3
    except (ValidationError, ConfigurationError, FileNotFoundError, json.JSONDecodeError,
            CMVFuseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
