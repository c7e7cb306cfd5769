"""Command-line pipeline: simulate, train-models, extract-features, evaluate, report.

All stages share one workspace directory (``--out``)::

    telemetry/<Fault>.csv          simulate
    models/<name>.mlp              train-models
    features/<task>.csv            extract-features
    reports/<task>_<clf>.json      evaluate
    reports/summary.txt            report
    manifest.json                  every stage

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 quality gate failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from importlib import metadata
from pathlib import Path
from typing import Callable, Sequence

from . import pipeline
from .classify import CLASSIFIERS, EvalReport, LabeledDataset, comparison_table, evaluate
from .config import ResolvedConfig, load_config
from .eps_plant import ALL_FAULTS, EPS_CLASSES, PV_CLASSES, FaultKind, read_telemetry_csv, write_telemetry_csv
from .errors import CompletenessError, ConfigError, DataError, LabelError, QualityGateError, ShapeError, StateError
from .features import read_feature_csv, write_feature_csv
from .sysid import EPS_FAULTS, PV_FAULTS, ModelBank, dumps_model, load_model

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_GATE = 0, 2, 3, 4
MANIFEST = "manifest.json"
TASK_CLASSES = {"eps": EPS_CLASSES, "pv": PV_CLASSES, "load_soc": EPS_CLASSES}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------


def _tmp(path: Path) -> Path:
    return path.with_name(f".{path.name}.tmp")


def atomic_write(path: Path, write: Callable[[Path], None]) -> None:
    """Run ``write`` on a temporary sibling, then rename it over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _tmp(path)
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write(path, lambda p: p.write_text(text))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(out: Path, cfg: ResolvedConfig, written: Sequence[Path], extra: dict | None = None) -> None:
    """Merge ``written`` into the workspace manifest, dropping entries whose files vanished."""
    path = out / MANIFEST
    data: dict = {}
    if path.exists():
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            data = {}
    artifacts = {k: v for k, v in data.get("artifacts", {}).items() if (out / k).exists()}
    for p in written:
        artifacts[p.relative_to(out).as_posix()] = _sha256(p)
    data.update(
        {
            "config_hash": cfg.config_hash(),
            "seed": cfg.run.seed,
            "tool_version": tool_version(),
            "config": cfg.to_dict(),
            "artifacts": dict(sorted(artifacts.items())),
        }
    )
    data.update(extra or {})
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True, default=list) + "\n")


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def _telemetry_path(out: Path, fault: FaultKind) -> Path:
    return out / "telemetry" / f"{fault.value}.csv"


def _feature_path(out: Path, task: str, with_moment: bool) -> Path:
    name = "eps_moment" if task == "eps" and with_moment else task
    return out / "features" / f"{name}.csv"


def cmd_simulate(cfg: ResolvedConfig, out: Path, fault: str | None) -> list[Path]:
    faults = ALL_FAULTS if fault in (None, "all") else (FaultKind.parse(fault),)
    written = []
    for f, samples in pipeline.simulate_all(cfg, faults).items():
        path = _telemetry_path(out, f)
        atomic_write(path, lambda p, s=samples: write_telemetry_csv(p, s))
        written.append(path)
    update_manifest(out, cfg, written)
    return written


def _read_telemetry(out: Path, faults: Sequence[FaultKind]):
    tel = {}
    for f in faults:
        path = _telemetry_path(out, f)
        if not path.exists():
            raise CompletenessError(f"missing telemetry for fault {f.value}: {path}")
        tel[f] = read_telemetry_csv(path)
    return tel


def _model_path(out: Path, name: str) -> Path:
    return out / "models" / f"{name}.mlp"


def cmd_train_models(cfg: ResolvedConfig, out: Path) -> list[Path]:
    bank = pipeline.train_bank(cfg, _read_telemetry(out, ALL_FAULTS))
    written = []
    for name, model in bank.named_models().items():
        path = _model_path(out, name)
        atomic_write_text(path, dumps_model(model))
        written.append(path)
    reports = {name: r.to_dict() for name, r in bank.reports.items()}
    rpath = out / "models" / "fit_reports.json"
    atomic_write_text(rpath, json.dumps(reports, indent=2, sort_keys=True) + "\n")
    written.append(rpath)
    update_manifest(out, cfg, written, {"fit_reports": reports})
    return written


def load_bank(out: Path) -> ModelBank:
    def get(name: str):
        path = _model_path(out, name)
        if not path.exists():
            raise CompletenessError(f"missing model file {path}; run train-models first")
        return load_model(path)

    return ModelBank(
        healthy_system=get("system_Healthy"),
        healthy_pv=get("pv_Healthy"),
        fault_models={f: get(f"system_{f.value}") for f in EPS_FAULTS},
        pv_fault_models={f: get(f"pv_{f.value}") for f in PV_FAULTS},
    )


def cmd_extract_features(cfg: ResolvedConfig, out: Path, with_moment: bool) -> list[Path]:
    tel = _read_telemetry(out, ALL_FAULTS)
    bank = load_bank(out)
    models = {name: _sha256(_model_path(out, name))[:16] for name in bank.named_models()}
    provenance = {"config_hash": cfg.config_hash(), **{f"model.{k}": v for k, v in models.items()}}
    tasks = {
        "eps": (pipeline.eps_dataset(tel, bank, with_moment), pipeline.eps_feature_names(with_moment)),
        "pv": (pipeline.pv_dataset(tel, bank), ["dv_pv", "di_pv"]),
        "load_soc": (pipeline.load_soc_dataset(cfg, tel), ["i_load_a", "soc_true" if cfg.run.true_soc else "soc_kalman"]),
    }
    written = []
    for task, (data, names) in tasks.items():
        path = _feature_path(out, task, with_moment)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = _tmp(path)
        try:
            tmp_side = write_feature_csv(tmp, data.features, data.kinds(), names, {**provenance, "task": task})
            side = path.with_suffix(path.suffix + ".meta.txt")
            os.replace(tmp_side, side)
            os.replace(tmp, path)
        finally:
            if tmp.exists():
                tmp.unlink()
        written += [path, side]
    update_manifest(out, cfg, written)
    return written


def _load_dataset(out: Path, task: str, with_moment: bool) -> LabeledDataset:
    path = _feature_path(out, task, with_moment)
    if not path.exists():
        raise CompletenessError(f"missing feature file {path}; run extract-features first")
    x, kinds = read_feature_csv(path)
    return LabeledDataset.from_kinds(x, kinds, TASK_CLASSES[task])


def cmd_evaluate(cfg: ResolvedConfig, out: Path, classifier: str, task: str, with_moment: bool) -> list[Path]:
    names = CLASSIFIERS if classifier == "all" else (classifier,)
    for name in names:
        if name not in CLASSIFIERS:
            raise ConfigError("classifier", f"unknown classifier {name!r}; choose from {', '.join(CLASSIFIERS)} or all")
    if task not in TASK_CLASSES:
        raise ConfigError("task", f"unknown task {task!r}; choose from {', '.join(TASK_CLASSES)}")
    data = _load_dataset(out, task, with_moment)
    label = "eps_moment" if task == "eps" and with_moment else task
    reports: list[EvalReport] = []
    written = []
    for name in names:
        rep = evaluate(name, data, cfg.classify, cfg.train, task=label, config_hash=cfg.config_hash())
        reports.append(rep)
        jpath = out / "reports" / f"{label}_{name}.json"
        tpath = out / "reports" / f"{label}_{name}.txt"
        atomic_write_text(jpath, rep.to_json())
        atomic_write_text(tpath, rep.confusion.to_text() + "\n")
        written += [jpath, tpath]
    if len(reports) > 1:
        cpath = out / "reports" / f"comparison_{label}.txt"
        atomic_write_text(cpath, comparison_table(reports))
        written.append(cpath)
    update_manifest(out, cfg, written)
    return written


def cmd_report(cfg: ResolvedConfig, out: Path) -> tuple[list[Path], str]:
    rdir = out / "reports"
    paths = sorted(rdir.glob("*.json")) if rdir.exists() else []
    if not paths:
        raise CompletenessError(f"no evaluation reports under {rdir}; run evaluate first")
    rows = [("method", "task", "accuracy (%)", "resub loss", "k-fold loss")]
    for p in paths:
        d = json.loads(p.read_text())
        kf = d.get("kfold_loss")
        rows.append(
            (
                d["classifier"],
                d["task"],
                f"{100.0 * d['overall_accuracy']:.2f}",
                f"{d['resubstitution_loss']:.4f}",
                "n/a" if kf is None else f"{kf:.4f}",
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    text = "\n".join(lines) + "\n"
    spath = rdir / "summary.txt"
    atomic_write_text(spath, text)
    update_manifest(out, cfg, [spath])
    return [spath], text


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def _bool_flag(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI-style config file")
    common.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    common.add_argument("--n", type=int, help="samples per class (overrides [run] n_samples)")
    common.add_argument("--dt", type=float, help="time step in seconds (overrides [run] dt_s)")
    common.add_argument("--out", type=Path, default=Path("run"), help="workspace directory (default: run)")

    parser = argparse.ArgumentParser(prog="epsfdd", description="EPS fault simulation and diagnosis pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write telemetry CSVs")
    p.add_argument("--fault", default="all", help="fault tag or 'all' (default)")
    sub.add_parser("train-models", parents=[common], help="identify the model bank from telemetry")
    p = sub.add_parser("extract-features", parents=[common], help="write feature CSVs")
    p.add_argument("--with-moment", type=_bool_flag, default=True, help="append the running moment (default true)")
    p = sub.add_parser("evaluate", parents=[common], help="train and score classifiers")
    p.add_argument("--classifier", default="all", help=f"one of {', '.join(CLASSIFIERS)} or all")
    p.add_argument("--task", default="load_soc", help="eps, pv or load_soc (default)")
    p.add_argument("--with-moment", type=_bool_flag, default=True, help="use the moment-augmented EPS features")
    sub.add_parser("report", parents=[common], help="summarise all evaluation reports")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    run = {}
    if args.seed is not None:
        run["seed"] = str(args.seed)
    if args.n is not None:
        run["n_samples"] = str(args.n)
    if args.dt is not None:
        run["dt_s"] = repr(args.dt)
    return {"run": run} if run else {}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        out: Path = args.out
        if args.command == "simulate":
            written = cmd_simulate(cfg, out, args.fault)
        elif args.command == "train-models":
            written = cmd_train_models(cfg, out)
        elif args.command == "extract-features":
            written = cmd_extract_features(cfg, out, args.with_moment)
        elif args.command == "evaluate":
            written = cmd_evaluate(cfg, out, args.classifier, args.task, args.with_moment)
        else:
            written, text = cmd_report(cfg, out)
            sys.stdout.write(text)
        for p in written:
            print(f"wrote {p}")
        return EXIT_OK
    except QualityGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (ConfigError, DataError, CompletenessError, LabelError, ShapeError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
