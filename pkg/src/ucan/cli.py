"""Command-line entry point: ``ucan <command> [options]``.

Every command writes into a run directory (``--out``, defaulting to
``$UCAN_OUTPUT_ROOT/<command>``) and echoes its effective configuration into
``config.json`` there.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import experiments
from . import io as uio
from . import synth
from .errors import (
    DataError,
    DomainError,
    NumericError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
)
from .features import LabeledEmbeddingSet, measure_feature
from .retrieval import precision_at_k
from .trainer import (
    DomainPair,
    MultilabelMapping,
    OptimizerConfig,
    TrainedMapping,
    UcanConfig,
    choose_target,
    map_embeddings,
    train,
    train_multilabel,
)

log = logging.getLogger("ucan")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_TOLERANCE = 6

OUTPUT_ROOT_ENV = "UCAN_OUTPUT_ROOT"


class ToleranceFailure(Exception):
    pass


def _out_dir(args, command: str) -> Path:
    out = args.out or os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"), command)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _row_keys(vocab, n):
    return vocab.tokens if vocab is not None else [str(i) for i in range(n)]


# -- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _out_dir(args, "synth")
    cfg = experiments.preset_config(args.preset, args.seed)
    ds = synth.generate(cfg)
    tokens = [f"p{i}" for i in range(len(ds))]
    uio.write_vectors(out / "vectors.txt", tokens, ds.vectors)
    uio.write_labels(out / "lightness.csv", tokens, ds.lightness, synth.LIGHTNESS_NAMES)
    uio.write_labels(out / "color.csv", tokens, ds.color, ds.color_names)
    uio.write_json({"command": "synth", "preset": args.preset, "seed": args.seed,
                    "synth_config": _jsonable(cfg.__dict__)}, out / "config.json")
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


# -- train / map -----------------------------------------------------------------

def _effective_config(args, base: UcanConfig = UcanConfig()) -> UcanConfig:
    cfg = base
    if args.config:
        cfg = UcanConfig.from_dict({**cfg.to_dict(), **uio.read_json(args.config)})
    overrides = {
        "alpha": args.alpha,
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "d_steps_per_g_step": args.d_steps,
        "label_smoothing": args.label_smoothing,
        "seed": args.seed,
        "g_hidden": args.g_hidden,
        "d_hidden": args.d_hidden,
        "d_dropout": args.d_dropout,
    }
    if args.normalize:
        overrides["normalize_inputs"] = True
    cfg = cfg.with_overrides(**overrides)
    if args.lr is not None:
        cfg = replace(cfg, g_optimizer=replace(cfg.g_optimizer, lr=args.lr),
                      d_optimizer=replace(cfg.d_optimizer, lr=args.lr))
    return cfg


def _load_labeled(vectors_path, labels_path) -> tuple[np.ndarray, np.ndarray, list[str], object]:
    vocab, matrix = uio.load_vectors(vectors_path)
    labels, names = uio.load_labels(labels_path, vocab)
    return matrix, labels, names, vocab


def cmd_train(args) -> int:
    out = _out_dir(args, "train")
    cfg = _effective_config(args)
    inputs: dict = {}
    if args.vectors:
        if not args.labels:
            raise DataError("--vectors needs --labels to split source and target")
        matrix, labels, names, _ = _load_labeled(args.vectors, args.labels)
        inputs = {"vectors": args.vectors, "labels": args.labels}
        if args.source_class is None:
            target = args.target_class or "largest"
            selection = "largest" if target == "largest" else _class_index(names, target)
            parts = [matrix[labels == c] for c in range(len(names))]
            idx = choose_target([len(p) for p in parts], selection)
            inputs["target_class"] = names[idx]
            ml = train_multilabel(parts, cfg, idx, progress=_progress(args))
            doc = {
                "format": "ucan-multilabel/1",
                "classes": names,
                "target": names[idx],
                "mappings": {names[c]: m.to_dict() for c, m in ml.mappings.items()},
            }
            uio.write_json(doc, out / "mapping.model")
            for c, m in ml.mappings.items():
                (out / f"loss_{names[c]}.csv").write_text(m.trace_csv())
            _write_run_config(out, "train", cfg, inputs)
            for c, m in ml.mappings.items():
                _print_final(m, prefix=f"{names[c]} -> {names[idx]}: ")
            return EXIT_OK
        src = _class_index(names, args.source_class)
        tgt = _class_index(names, args.target_class) if args.target_class else None
        if tgt is None:
            if len(names) != 2:
                raise DataError("--target-class is required with more than two classes")
            tgt = 1 - src
        pair = DomainPair(matrix[labels == src], matrix[labels == tgt])
        inputs.update(source_class=names[src], target_class=names[tgt])
    else:
        if not (args.source and args.target):
            raise DataError("give --source and --target, or --vectors with --labels")
        _, xs = uio.load_vectors(args.source)
        _, ys = uio.load_vectors(args.target)
        pair = DomainPair(xs, ys)
        inputs = {"source": args.source, "target": args.target}

    _write_run_config(out, "train", cfg, inputs)
    try:
        mapping = train(pair, cfg, progress=_progress(args))
    except TrainingDivergedError as exc:
        partial = TrainedMapping(None, cfg, exc.trace)  # type: ignore[arg-type]
        (out / "loss.csv").write_text(partial.trace_csv())
        print(f"training diverged; trace written to {out / 'loss.csv'}", file=sys.stderr)
        raise
    mapping.save(out / "mapping.model")
    (out / "loss.csv").write_text(mapping.trace_csv())
    _print_final(mapping)
    return EXIT_OK


def _class_index(names: list[str], name: str) -> int:
    if name not in names:
        raise DataError(f"unknown class {name!r}; classes are {names}")
    return names.index(name)


def _progress(args):
    if not getattr(args, "verbose", False):
        return None
    return lambda e: log.info("iter %d  L_D=%.4f  L_G=%.4f  mean_cos=%.4f", e.iteration, e.d_loss, e.g_loss, e.mean_cos)


def _print_final(mapping: TrainedMapping, prefix: str = "") -> None:
    last = mapping.trace[-1]
    print(f"{prefix}iteration {last.iteration}: L_D={last.d_loss:.4f} L_G={last.g_loss:.4f} mean_cos={last.mean_cos:.4f}")


def _write_run_config(out: Path, command: str, cfg: UcanConfig, inputs: dict) -> None:
    uio.write_json({"command": command, "inputs": inputs, "config": cfg.to_dict()}, out / "config.json")


def load_mapping_file(path):
    doc = uio.read_json(path)
    if doc.get("format") == "ucan-multilabel/1":
        classes = doc["classes"]
        mappings = {classes.index(name): TrainedMapping.from_dict(m) for name, m in doc["mappings"].items()}
        return MultilabelMapping(classes.index(doc["target"]), mappings), classes
    return TrainedMapping.from_dict(doc), None


def cmd_map(args) -> int:
    mapping, classes = load_mapping_file(args.mapping)
    vocab, matrix = uio.load_vectors(args.vectors)
    if isinstance(mapping, MultilabelMapping):
        if not args.labels:
            raise DataError("a multilabel mapping needs --labels to route rows")
        labels, names = uio.load_labels(args.labels, vocab)
        # align label ids with the class order stored in the mapping
        remap = np.array([classes.index(n) if n in classes else -1 for n in names])
        mapped = mapping.transform(matrix, remap[labels])
    elif args.labels:
        labels, names = uio.load_labels(args.labels, vocab)
        if args.source_class is None:
            raise DataError("--labels given without --source-class")
        rows = labels == _class_index(names, args.source_class)
        mapped = matrix.copy()
        mapped[rows] = map_embeddings(mapping, matrix[rows])
    else:
        mapped = map_embeddings(mapping, matrix)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    uio.write_vectors(out, vocab.tokens, mapped)
    print(f"wrote {len(mapped)} mapped rows to {out}")
    return EXIT_OK


# -- evaluation ------------------------------------------------------------------

def cmd_eval_auc(args) -> int:
    out = _out_dir(args, "eval-auc")
    vocab, matrix = uio.load_vectors(args.vectors)
    reports = []
    csv_path = out / "report.csv"
    if csv_path.exists():
        csv_path.unlink()
    for path in args.labels:
        labels, names = uio.load_labels(path, vocab)
        data = LabeledEmbeddingSet(matrix, labels, len(names), names)
        rep = measure_feature(data, args.repetitions, args.split, args.tau, args.seed,
                              feature=Path(path).stem, dataset=Path(args.vectors).name)
        reports.append(rep)
        uio.write_report(rep, csv_path, "csv")
        print(f"{rep.feature}: mean one-vs-all AUC {rep.mean_auc:.4f} "
              f"({'embedded' if rep.embedded else 'not embedded'} at tau={rep.tau})")
    uio.write_json({"reports": [r.to_dict() for r in reports]}, out / "report.json")
    uio.write_json({"command": "eval-auc", "vectors": args.vectors, "labels": args.labels,
                    "repetitions": args.repetitions, "split": args.split, "tau": args.tau,
                    "seed": args.seed}, out / "config.json")
    return EXIT_OK


def cmd_eval_retrieval(args) -> int:
    out = _out_dir(args, "eval-retrieval")
    src_vocab, mapped = uio.load_vectors(args.mapped)
    tgt_vocab, targets = uio.load_vectors(args.targets)
    dictionary = uio.load_dictionary(args.dict, src_vocab, tgt_vocab)
    ks = [int(k) for k in args.ks.split(",")]
    csv_path = out / "report.csv"
    if csv_path.exists():
        csv_path.unlink()
    doc = {}
    for method in ("nn", "csls"):
        rep = precision_at_k(mapped, targets, dictionary, method, ks, args.neighborhood)
        doc[rep.method] = rep.to_dict()
        uio.write_report(rep, csv_path, "csv")
        print(rep.method + "  " + "  ".join(f"P@{k}={p:.4f}" for k, p in sorted(rep.precision.items())))
    uio.write_json(doc, out / "report.json")
    uio.write_json({"command": "eval-retrieval", "mapped": args.mapped, "targets": args.targets,
                    "dict": args.dict, "ks": ks, "neighborhood": args.neighborhood}, out / "config.json")
    return EXIT_OK


# -- reproduction ------------------------------------------------------------------

def cmd_reproduce_table1(args) -> int:
    out = _out_dir(args, "reproduce-table1")
    cfg = _effective_config(args, experiments.SYNTH_CONFIG)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else list(experiments.TABLE1_ALPHAS)
    uio.write_json({"command": "reproduce-table1", "seed": args.seed, "replicates": args.replicates,
                    "alphas": alphas, "config": cfg.to_dict()}, out / "config.json")
    results = experiments.alpha_sweep(
        alphas=alphas, seed=args.seed, replicates=args.replicates, config=replace(cfg, seed=args.seed),
        out_dir=str(out), jobs=args.jobs, progress=print if args.verbose else None,
    )
    experiments.write_table(results, str(out / "table1.csv"))
    outcomes = experiments.evaluate_checks(results, experiments.table1_checks())
    lines = ["check,value,pass"]
    failed = []
    for check, value, ok in outcomes:
        lines.append(f"{check.describe()},{'' if value is None else f'{value:.4f}'},{'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append((check, value))
    (out / "checks.csv").write_text("\n".join(lines) + "\n")
    print((out / "table1.csv").read_text(), end="")
    if failed:
        print("\ncells outside tolerance:", file=sys.stderr)
        for check, value in failed:
            print(f"  {check.describe()}: got {value}", file=sys.stderr)
        raise ToleranceFailure(f"{len(failed)} of {len(outcomes)} checks failed")
    print(f"all {len(outcomes)} checks passed")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of UcanConfig fields (flags override it)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--d-steps", type=int, help="discriminator updates per generator update")
    p.add_argument("--lr", type=float, help="learning rate for both networks")
    p.add_argument("--label-smoothing", type=float)
    p.add_argument("--g-hidden", type=int, help="generator hidden width")
    p.add_argument("--d-hidden", type=int, help="discriminator hidden width")
    p.add_argument("--d-dropout", type=float)
    p.add_argument("--normalize", action="store_true", help="L2-normalize rows before training and mapping")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic preset dataset")
    p.add_argument("preset", choices=experiments.PRESETS)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a mapping from source to target vectors")
    p.add_argument("--source", help="source vector file")
    p.add_argument("--target", help="target vector file")
    p.add_argument("--vectors", help="one vector file split by --labels instead")
    p.add_argument("--labels", help="label CSV for --vectors")
    p.add_argument("--source-class", help="class to map (omit for one mapping per non-target class)")
    p.add_argument("--target-class", help="class to map into, or 'largest'")
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="apply a trained mapping to a vector file")
    p.add_argument("--mapping", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--labels")
    p.add_argument("--source-class")
    p.add_argument("--out", required=True, help="output vector file")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("eval-auc", help="one-vs-all linear-SVM AUC per label file")
    p.add_argument("--vectors", required=True)
    p.add_argument("--labels", required=True, nargs="+")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--tau", type=float, default=0.55)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_auc)

    p = sub.add_parser("eval-retrieval", help="NN and CSLS precision@K against a dictionary")
    p.add_argument("--mapped", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--neighborhood", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("reproduce-table1", help="alpha sweep on the balanced and imbalanced presets")
    p.add_argument("--out")
    p.add_argument("--alphas", help="comma-separated alpha list")
    p.add_argument("--replicates", type=int, default=3, help="training seeds averaged per cell")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_reproduce_table1, seed=7)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "reproduce-table1" and args.seed is None:
        args.seed = 7
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (DataError, DomainError, ShapeError, KeyError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingDivergedError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ToleranceFailure as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
