"""Command-line driver: ``dasksvd <command> ...``.

Every command writes its outputs plus a ``run.json`` into ``--out``.
``dasksvd replay run.json`` re-executes a recorded run after checking
that its inputs are unchanged.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from . import pipeline as P
from .config import PipelineConfig
from .errors import ConfigError, DataError, DivergenceError
from .mlp import MlpModel
from .screening import ConfusionMatrix, class_metrics, roc, save_screening_csv
from .selection import load_artifact
from .signal import CLASSES, SegmentMatrix, load_records
from .synth import CohortSpec, generate, read_cohort, write_cohort

log = logging.getLogger("dasksvd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


# --- provenance -------------------------------------------------------------

def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest(path) -> str:
    """sha256 of a file, or of the sorted (name, digest) list of a directory."""
    path = Path(path)
    if path.is_file():
        return _sha256_file(path)
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(p.relative_to(path).as_posix().encode())
            h.update(_sha256_file(p).encode())
        return h.hexdigest()
    raise DataError(f"input {path} does not exist")


def _versions() -> dict:
    return {"dasksvd": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_run(out: Path, command: str, args: dict, inputs: dict, config: dict, seed: int) -> None:
    doc = {
        "command": command,
        "args": args,
        "config": config,
        "seed": seed,
        "inputs": {k: {"path": str(v), "sha256": digest(v)} for k, v in sorted(inputs.items())},
        "versions": _versions(),
        "backend": kernels.BACKEND,
    }
    with open(out / "run.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- helpers ----------------------------------------------------------------

def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "threshold", None) is not None:
        overrides.append(f"screen.threshold={args.threshold}")
    return cfg.override(overrides) if overrides else cfg.validate()


def _segments_file(path) -> Path:
    p = Path(path)
    return p / "segments.csv" if p.is_dir() else p


def _model_file(path) -> Path:
    p = Path(path)
    return p / "model.json" if p.is_dir() else p


def _load_segments(path) -> SegmentMatrix:
    p = _segments_file(path)
    if not p.is_file():
        raise DataError(f"segment file {p} does not exist")
    try:
        return SegmentMatrix.load_csv(p, CLASSES)
    except (ValueError, IndexError) as exc:
        raise DataError(f"cannot parse segment file {p}: {exc}") from exc


def _record_ids(args):
    if not getattr(args, "cohort", None):
        if getattr(args, "split", None):
            raise ConfigError("--split needs --cohort")
        return None
    try:
        cohort = read_cohort(args.cohort)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read cohort file {args.cohort}: {exc}") from exc
    return [rid for rid, (_, _, split) in cohort.items() if not args.split or split == args.split]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finite(v):
    return None if v is None or not np.isfinite(v) else float(v)


# --- commands ---------------------------------------------------------------

def cmd_config(args, cfg: PipelineConfig) -> dict:
    out = _out_dir(args)
    (out / "config.json").write_text(cfg.dumps())
    return {}


def _cohort_spec(args) -> CohortSpec:
    if getattr(args, "spec_json", None) is not None:
        return CohortSpec.from_json(args.spec_json)
    try:
        base = json.loads(Path(args.spec).read_text()) if args.spec else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cohort spec {args.spec} is not valid JSON: {exc}") from exc
    for key in ("seed", "n_records", "duration_hours"):
        if getattr(args, key, None) is not None:
            base[key] = getattr(args, key)
    return CohortSpec.from_json(base)


def cmd_synth(args, cfg: PipelineConfig) -> dict:
    spec = _cohort_spec(args)
    out = _out_dir(args)
    cohort = generate(spec)
    write_cohort(cohort, out)
    _write_json(out / "spec.json", spec.to_json())
    log.info("wrote %d records to %s", len(cohort), out)
    return {"inputs": {"spec": args.spec} if args.spec else {}, "config": {"cohort": spec.to_json()},
            "seed": spec.seed}


def cmd_prepare(args, cfg: PipelineConfig) -> dict:
    ids = _record_ids(args)
    records = load_records(args.records, ids)
    out = _out_dir(args)
    X = P.prepare_segments(records, cfg)
    X.save_csv(out / "segments.csv")
    _write_json(out / "segments.json", {"n": X.n, "class_counts": X.class_counts,
                                        "records": [r.id for r in records]})
    log.info("%d segments %s", X.n, X.class_counts)
    inputs = {"records": args.records}
    if args.cohort:
        inputs["cohort"] = args.cohort
    return {"inputs": inputs}


def cmd_learn(args, cfg: PipelineConfig) -> dict:
    P.classes_for(args.method)
    X = _load_segments(args.segments)
    X_train, _ = P.training_sets(X, args.method, cfg)
    artifact = P.learn(args.method, X_train, cfg)
    artifact.save(_out_dir(args))
    log.info("%s dictionary with %d features per segment", args.method,
             len(getattr(artifact, "selected_rows", getattr(artifact, "class_of_atom", []))))
    return {"inputs": {"segments": _segments_file(args.segments)}}


def cmd_train(args, cfg: PipelineConfig) -> dict:
    X = _load_segments(args.segments)
    artifact = load_artifact(args.dictionary)
    X_train, X_val = P.training_sets(X, artifact.method, cfg)
    model, report = P.fit_classifier(artifact, X_train, X_val, cfg)
    out = _out_dir(args)
    model.save(out / "model.json")
    _write_json(out / "train_report.json", report.to_json())
    return {"inputs": {"segments": _segments_file(args.segments), "dictionary": args.dictionary}}


def cmd_classify(args, cfg: PipelineConfig) -> dict:
    X = _load_segments(args.segments)
    artifact = load_artifact(args.dictionary)
    model = MlpModel.load(_model_file(args.model))
    out = _out_dir(args)
    X = P.as_classes(X, artifact.classes)
    predicted, scores = P.classify(artifact, model, X, cfg)
    with open(out / "predictions.csv", "w") as fh:
        fh.write(",".join(["index", "source_id", "start_sec", "label", "predicted",
                           *[f"score_{c}" for c in model.classes]]) + "\n")
        for i in range(X.n):
            sid = "" if X.source_ids is None else X.source_ids[i]
            st = "" if X.starts is None else int(X.starts[i])
            fh.write(",".join([str(i), str(sid), str(st), X.labels[i], predicted[i],
                               *[repr(float(v)) for v in scores[i]]]) + "\n")
    cm = ConfusionMatrix.from_labels(X.labels, predicted, model.classes)
    cm.save_csv(out / "confusion.csv")
    cm.save_csv(out / "confusion_normalized.csv", normalized=True)
    metrics = class_metrics(cm)
    metrics.save_csv(out / "metrics.csv")
    log.info("accuracy %.4f", metrics.accuracy)
    return {"inputs": {"segments": _segments_file(args.segments), "dictionary": args.dictionary,
                       "model": _model_file(args.model)}}


def cmd_screen(args, cfg: PipelineConfig) -> dict:
    ids = _record_ids(args)
    records = load_records(args.records, ids)
    artifact = load_artifact(args.dictionary)
    model = MlpModel.load(_model_file(args.model))
    out = _out_dir(args)
    thr = cfg.screen.threshold
    outcomes = P.screen_records(records, artifact, model, cfg)
    results = [o.result for o in outcomes]
    truth = {o.result.record_id: o.true_ahi for o in outcomes}
    save_screening_csv(results, out / "screening.csv", truth, thr)

    est = np.array([r.ahi_est for r in results])
    true = np.array([o.true_ahi for o in outcomes])
    positive = true > thr
    verdict = np.array([r.verdict for r in results])
    cm = ConfusionMatrix.from_labels(np.where(positive, "positive", "negative"),
                                     np.where(verdict, "positive", "negative"), ("negative", "positive"))
    cm.save_csv(out / "screening_confusion.csv")
    m = class_metrics(cm)
    summary = {
        "n_records": len(results),
        "threshold": thr,
        "sensitivity": _finite(m["positive"].sensitivity),
        "specificity": _finite(m["positive"].specificity),
        "accuracy": m.accuracy,
        "pearson": None,
        "auc": None,
        "optimal_cutoff": None,
    }
    if len(results) > 1 and np.std(est) > 0 and np.std(true) > 0:
        summary["pearson"] = float(np.corrcoef(est, true)[0, 1])
    if positive.any() and not positive.all():
        curve = roc(est, positive)
        curve.save_csv(out / "roc.csv")
        curve.save_svg(out / "roc.svg", f"{artifact.method} screening, AHI > {thr:g}")
        summary["auc"] = curve.auc
        summary["optimal_cutoff"] = curve.optimal_cutoff
    else:
        log.warning("all records fall on one side of AHI %g; ROC analysis skipped", thr)
    _write_json(out / "summary.json", summary)
    log.info("summary: %s", summary)
    inputs = {"records": args.records, "dictionary": args.dictionary, "model": _model_file(args.model)}
    if args.cohort:
        inputs["cohort"] = args.cohort
    return {"inputs": inputs}


COMMANDS = {
    "config": cmd_config,
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "learn": cmd_learn,
    "train": cmd_train,
    "classify": cmd_classify,
    "screen": cmd_screen,
}


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dasksvd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"dasksvd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", required=True, help="output directory")
        if config:
            p.add_argument("--config", help="pipeline config JSON")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config entry, e.g. das.iterations=5")
            p.add_argument("--seed", type=int)

    p = sub.add_parser("config", help="write the default (or overridden) config")
    common(p)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", help="cohort spec JSON")
    p.add_argument("--n-records", type=int)
    p.add_argument("--duration-hours", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("prepare", help="repair, filter and segment records")
    p.add_argument("--records", required=True)
    p.add_argument("--cohort", help="cohort.csv used to select records")
    p.add_argument("--split", choices=("train", "test"))
    common(p)

    p = sub.add_parser("learn", help="learn a discriminant dictionary")
    p.add_argument("--segments", required=True)
    p.add_argument("--method", default="das-ksvd", choices=P.METHODS)
    common(p)

    p = sub.add_parser("train", help="train the classifier on sparse-code features")
    p.add_argument("--segments", required=True)
    p.add_argument("--dictionary", required=True)
    common(p)

    p = sub.add_parser("classify", help="classify segments and report confusion metrics")
    p.add_argument("--segments", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--model", required=True)
    common(p)

    p = sub.add_parser("screen", help="estimate AHI per record and run the ROC analysis")
    p.add_argument("--records", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--cohort")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--threshold", type=float)
    common(p)

    p = sub.add_parser("replay", help="re-run a command recorded in run.json")
    p.add_argument("run", help="path to run.json")
    p.add_argument("--out", help="output directory (default: the recorded one)")
    return parser


_NOT_ARGS = {"command", "verbose", "config", "set", "seed", "threshold", "func"}


def execute(command: str, args: argparse.Namespace, cfg: PipelineConfig) -> None:
    extra = COMMANDS[command](args, cfg) or {}
    out = Path(args.out)
    recorded = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ARGS}
    recorded.pop("spec_json", None)
    if command == "synth":
        recorded.update(seed=args.seed)
    write_run(out, command, recorded, extra.get("inputs", {}),
              extra.get("config", cfg.to_json()), extra.get("seed", cfg.seed))


def replay(args) -> None:
    try:
        doc = json.loads(Path(args.run).read_text())
        command, recorded = doc["command"], doc["args"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read run record {args.run}: {exc}") from exc
    if command not in COMMANDS:
        raise DataError(f"run record names unknown command {command!r}")
    for name, item in doc.get("inputs", {}).items():
        if digest(item["path"]) != item["sha256"]:
            raise DataError(f"input {name} ({item['path']}) changed since the recorded run")
    ns = argparse.Namespace(**recorded)
    if args.out:
        ns.out = args.out
    for attr in ("seed", "threshold", "config", "set"):
        if not hasattr(ns, attr):
            setattr(ns, attr, None)
    if command == "synth":
        # the recorded cohort spec already carries every flag override
        ns.spec_json = doc["config"]["cohort"]
        execute(command, ns, PipelineConfig())
        return
    cfg = PipelineConfig.from_json(doc["config"])
    execute(command, ns, cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            replay(args)
        else:
            cfg = _load_config(args) if args.command != "synth" else PipelineConfig()
            execute(args.command, args, cfg)
    except ConfigError as exc:
        print(f"dasksvd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"dasksvd: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, OSError) as exc:
        print(f"dasksvd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
