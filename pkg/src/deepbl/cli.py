"""Command-line front end: gen, train, eval, baseline, gradcheck, sweep."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Sequence

from .baselines import BaselineKind, BaselineSettings, run_baseline
from .evaluation import evaluate, robustness_sweep, write_curve
from .panel import PanelError, SplitSpec, load_mu, load_panel, make_windows, save_panel, synthesize_panel
from .training import TrainConfig, TrainingError, evaluate_model, load_checkpoint, save_checkpoint, train, write_log

log = logging.getLogger("deepbl")

OUTPUT_ENV = "DEEPBL_OUTPUT_DIR"
CONFIG_DUMP = "run_config.txt"
ABLATIONS = ("none", "no-rank-loss")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def _coerce(key: str, raw: str, kind: type):
    text = raw.strip()
    try:
        if kind is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot read {raw!r} as {kind.__name__}") from None


def read_config_file(path: str | Path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults, then the config file, then flags."""
    types = TrainConfig.field_types()
    values: dict = {}
    extra = {}
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key in types:
                values[key] = _coerce(key, raw, types[key])
            else:
                extra[key] = raw
    for key in types:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    ablate = getattr(args, "ablate", None) or extra.pop("ablate", None)
    if ablate is not None:
        if ablate not in ABLATIONS:
            raise UsageError(f"--ablate must be one of {', '.join(ABLATIONS)}")
        values["ablate_rank_loss"] = ablate == "no-rank-loss"
    # keys for paths and other commands are fine in a shared file
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def file_settings(args: argparse.Namespace) -> dict[str, str]:
    return read_config_file(args.config) if getattr(args, "config", None) else {}


def output_dir(args: argparse.Namespace) -> Path:
    raw = getattr(args, "output_dir", None) or file_settings(args).get("output_dir") or os.environ.get(OUTPUT_ENV) or "."
    path = Path(raw)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    return path


def dump_config(path: Path, command: str, settings: dict) -> None:
    lines = [f"# deepbl {command}"]
    lines += [f"{k} = {v}" for k, v in settings.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _panel_arg(args: argparse.Namespace) -> Path:
    raw = getattr(args, "panel", None) or file_settings(args).get("panel")
    if not raw:
        raise UsageError("a panel file is required (--panel or panel= in --config)")
    path = Path(raw)
    if not path.is_file():
        raise UsageError(f"panel file not found: {path}")
    return path


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _mu(args, panel):
    path = getattr(args, "mu_file", None) or file_settings(args).get("mu_file")
    return None if not path else load_mu(path, panel.supplier_ids)


def _windows_for(panel, cfg: TrainConfig, which: str):
    train_w, val_w, test_w = make_windows(panel, cfg.p, cfg.f, SplitSpec())
    return {"train": train_w, "val": val_w, "test": test_w, "all": train_w + val_w + test_w}[which]


def _emit_report(report, out: Path, stem: str) -> None:
    report.write_json(out / f"{stem}.json")
    report.write_csv(out / f"{stem}.csv")
    print(report.summary())


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    mix = _floats(args.mix, "--mix")
    try:
        panel = synthesize_panel(args.seed, args.n, args.t, mix, p=args.p, f=args.f)
    except PanelError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else output_dir(args) / "panel.csv"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_panel(panel, out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from None
    print(f"wrote {panel.n_suppliers} suppliers x {panel.n_steps} steps to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    panel = load_panel(_panel_arg(args))
    out = output_dir(args)
    dump_config(out / CONFIG_DUMP, "train", {"panel": _panel_arg(args), **asdict(cfg)})
    result = train(panel, cfg, SplitSpec(), mu=_mu(args, panel), progress=args.verbose)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
    save_checkpoint(result.model, ckpt, cfg, {"best_epoch": result.best_epoch, "stopped": result.stopped_reason})
    write_log(result.log, out / "train_log.csv")
    print(
        f"best epoch {result.best_epoch}  val loss {result.best_val_loss:.6f}  "
        f"stopped: {result.stopped_reason}  checkpoint: {ckpt}"
    )
    return 0 if not result.stopped_reason.startswith("diverged") else 3


def _baseline_plan(kind, panel, cfg: TrainConfig, settings: BaselineSettings, mu):
    hyper = cfg.hyper(mu)
    return lambda window: run_baseline(kind, panel, window, hyper, settings)


def cmd_eval(args) -> int:
    panel = load_panel(_panel_arg(args))
    out = output_dir(args)
    cfg = build_train_config(args)
    if args.robustness:
        ratios = _floats(args.robustness, "--robustness")
        dump_config(out / CONFIG_DUMP, "eval", {"panel": _panel_arg(args), "robustness": args.robustness, **asdict(cfg)})
        curve = robustness_sweep(panel, cfg, ratios, mask_seed=cfg.seed)
        write_curve(curve, out / "robustness.csv")
        for row in curve:
            print(f"ratio {row['ratio']:.2f}  HR@10={row['hr@10']:.4f}  HR@50={row['hr@50']:.4f}  MRE={row['mre']:.4f}")
        return 0
    if bool(args.baseline) == bool(args.checkpoint):
        raise UsageError("eval needs exactly one of --checkpoint or --baseline")
    if args.baseline:
        return _run_baseline_eval(args, panel, cfg, out, args.baseline)
    model, saved_cfg, _ = load_checkpoint(args.checkpoint)
    windows = _windows_for(panel, saved_cfg or cfg, args.split)
    dump_config(out / CONFIG_DUMP, "eval", {"panel": _panel_arg(args), "checkpoint": args.checkpoint, "split": args.split})
    _emit_report(evaluate_model(model, panel, windows), out, "report")
    return 0


def _run_baseline_eval(args, panel, cfg, out, name) -> int:
    try:
        kind = BaselineKind.parse(name)
    except ValueError:
        raise UsageError(f"unknown baseline {name!r}; choose from {', '.join(k.value for k in BaselineKind)}") from None
    settings = BaselineSettings(mc_samples=args.mc_samples, dp_grid=args.dp_grid, seed=cfg.seed)
    dump_config(
        out / CONFIG_DUMP,
        "baseline",
        {"panel": _panel_arg(args), "baseline": kind.value, "split": args.split, **asdict(settings), **asdict(cfg)},
    )
    windows = _windows_for(panel, cfg, args.split)
    report = evaluate(_baseline_plan(kind, panel, cfg, settings, _mu(args, panel)), windows, panel, cfg.kappa)
    _emit_report(report, out, f"report_{kind.value}")
    return 0


def cmd_baseline(args) -> int:
    panel = load_panel(_panel_arg(args))
    return _run_baseline_eval(args, panel, build_train_config(args), output_dir(args), args.kind)


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    names = [x for x in args.ops.split(",") if x.strip()] if args.ops else None
    extra = {"injected_fault": gradcheck.broken_tanh_check} if args.inject_fault else None
    try:
        results = gradcheck.run_checks(names, args.instances, args.seed, extra)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    print(gradcheck.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    return 0


SWEEP_COLUMNS = ("delta", "tau", "best_epoch", "hr@10", "hr@20", "hr@50", "mre")


def cmd_sweep(args) -> int:
    panel = load_panel(_panel_arg(args))
    base = build_train_config(args)
    out = output_dir(args)
    deltas = _floats(args.deltas, "--deltas") if args.deltas else [base.delta]
    taus = _floats(args.taus, "--taus") if args.taus else [base.tau]
    dump_config(out / CONFIG_DUMP, "sweep", {"panel": _panel_arg(args), "deltas": deltas, "taus": taus, **asdict(base)})
    test_w = _windows_for(panel, base, "test")
    rows = []
    for d in deltas:
        for t in taus:
            cfg = replace(base, delta=d, tau=t)
            result = train(panel, cfg, SplitSpec(), mu=_mu(args, panel))
            report = evaluate_model(result.model, panel, test_w)
            row = {"delta": d, "tau": t, "best_epoch": -1 if result.best_epoch is None else result.best_epoch}
            row.update({f"hr@{k}": v for k, v in report.hr_at_k.items()})
            row["mre"] = report.mre
            rows.append(row)
            print(f"delta={d:g} tau={t:g}  {report.summary()}")
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in SWEEP_COLUMNS])
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training and model settings (override --config)")
    for f in fields(TrainConfig):
        if f.name == "ablate_rank_loss":
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = TrainConfig.field_types()[f.name]
        if kind is bool:
            g.add_argument(flag, dest=f.name, type=lambda s, k=f.name: _coerce(k, s, bool), default=None, metavar="BOOL")
        else:
            g.add_argument(flag, dest=f.name, type=kind, default=None, help=f"default {f.default}")
    g.add_argument("--ablate", choices=ABLATIONS, default=None, help="swap the ranking loss for an absolute-error term")


def _add_common(p: argparse.ArgumentParser, panel: bool = True) -> None:
    if panel:
        p.add_argument("--panel", help="panel CSV (supplier_id,t,order,supply)")
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.add_argument("--output-dir", dest="output_dir", help=f"defaults to ${OUTPUT_ENV} or the working directory")
    p.add_argument("--mu-file", dest="mu_file", help="CSV supplier_id,mu of unit returns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepbl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize a supplier panel")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--t", type=int, default=120)
    p.add_argument("--mix", default="0.25,0.25,0.25,0.25", help="reliable,volatile,degrading,non-engaged")
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--f", type=int, default=4)
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and checkpoint the model")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--checkpoint", help="checkpoint path (default OUTPUT/checkpoint.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a baseline")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--robustness", help="comma-separated mask ratios; retrains per ratio")
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=10_000)
    p.add_argument("--dp-grid", dest="dp_grid", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="score one baseline allocator")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--kind", required=True, help=", ".join(k.value for k in BaselineKind))
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=10_000)
    p.add_argument("--dp-grid", dest="dp_grid", type=int, default=100)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--ops", help="comma-separated subset of checks")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train over a delta x tau grid")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--deltas", help="comma-separated delta values")
    p.add_argument("--taus", help="comma-separated tau values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (PanelError, TrainingError, ValueError, OSError) as exc:
        print(f"deepbl: error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
