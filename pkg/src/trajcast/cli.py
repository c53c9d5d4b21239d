"""``trajcast`` command line.

Exit codes: 0 ok, 1 training diverged, 2 missing input, 3 configuration
error, 4 checkpoint mismatch, 5 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_params
from .data import TrackParseError, load_tracks, save_scenarios
from .estimator import BASELINES, score_predictions
from .gradcheck import MODEL_SEED, RTOL, run_suite, zero_gradient_params
from .interaction import ABLATION_ROWS
from .maps import RasterConfig, load_map, rasterize, write_pgm
from .metrics import MetricReport, format_table, write_report_csv
from .model import TrajectoryNet, predict, prepare, write_predictions_csv
from .synthetic import TEMPLATES, SyntheticConfig, generate_synthetic
from .tensor import DimensionError
from .training import ConfigError, TrainConfig, TrainingDiverged, evaluate_model, load_config, train

EXIT_OK, EXIT_DIVERGED, EXIT_MISSING, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_VERIFY = 0, 1, 2, 3, 4, 5

log = logging.getLogger("trajcast")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_CONFIG, f"{self.prog}: {message}")


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {p}")
    return p


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "run", None):
        cfg = load_config(_require(Path(args.run) / "config.snapshot", "run snapshot"))
    if getattr(args, "config", None):
        cfg = load_config(_require(args.config, "config file"))
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return cfg.with_overrides(overrides) if overrides else cfg


def _load_data(paths, fmt: str, cfg: TrainConfig | None = None):
    scenarios = []
    for p in paths:
        path = _require(p, "data file")
        if path.is_dir():
            pats = ("*.txt",) if fmt == "plain_text" else ("*.jsonl", "*.json")
            files = sorted(f for pat in pats for f in path.glob(pat))
        else:
            files = [path]
        if not files:
            raise CliError(EXIT_MISSING, f"no scenario files in {path}")
        for f in files:
            try:
                scenarios.extend(load_tracks(f, format=fmt))
            except (TrackParseError, ValueError) as exc:
                raise CliError(EXIT_CONFIG, str(exc)) from exc
    if not scenarios:
        raise CliError(EXIT_MISSING, "no scenarios loaded")
    return scenarios


def _load_net(cfg: TrainConfig, checkpoint: Path) -> TrajectoryNet:
    net = TrajectoryNet(cfg.model, seed=cfg.seed, toggles=cfg.toggles)
    try:
        state = load_params(checkpoint)
        net.load_state_dict(state)
    except CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, f"{checkpoint}: {exc}") from exc
    except KeyError as exc:
        raise CliError(EXIT_CHECKPOINT, f"{checkpoint}: {exc.args[0]}") from exc
    except DimensionError as exc:
        raise CliError(EXIT_CHECKPOINT, f"{checkpoint}: {exc}") from exc
    return net


# --- commands --------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.template not in TEMPLATES:
        raise CliError(EXIT_CONFIG, f"unknown template {args.template!r}; choose from {sorted(TEMPLATES)}")
    overrides = {}
    for a in args.set or []:
        if "=" not in a:
            raise CliError(EXIT_CONFIG, f"override {a!r} is not key=value")
        k, v = a.split("=", 1)
        try:
            overrides[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            overrides[k.strip()] = v
    if args.count < 1:
        raise CliError(EXIT_CONFIG, "--count must be at least 1")
    try:
        config = SyntheticConfig().with_overrides(**overrides)
        scen = generate_synthetic(args.template, args.count, args.seed, config=config, group=args.group)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scenarios(out / "scenarios.jsonl", scen)
    _write_json(out / "gen_config.snapshot", {"template": args.template, "count": args.count, "seed": args.seed,
                                          "group": args.group, "overrides": overrides})
    print(f"wrote {len(scen)} scenarios to {out / 'scenarios.jsonl'}")
    return EXIT_OK


def cmd_rasterize(args) -> int:
    hd_map = load_map(_require(args.map, "map file"))
    raster = {}
    for a in args.set or []:
        k, eq, v = a.partition("=")
        try:
            raster[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            raise CliError(EXIT_CONFIG, f"override {a!r} is not key=<number or boolean>") from None
        if not eq:
            raise CliError(EXIT_CONFIG, f"override {a!r} is not key=value")
    try:
        cfg = RasterConfig(**raster)
    except (TypeError, ValueError, NotImplementedError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    img = rasterize(hd_map, (args.ego_x, args.ego_y), cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, img)
    _write_json(out.with_suffix(out.suffix + ".json"), {"map": str(args.map), "ego": [args.ego_x, args.ego_y],
                                                        "raster": raster})
    print(f"wrote {cfg.height}x{cfg.width} image to {out} ({int(img.data.sum())} lane pixels)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    paths = args.data or list(cfg.train_paths)
    if not paths:
        raise CliError(EXIT_CONFIG, "no training data: pass --data or set train_paths")
    if args.data:
        cfg = cfg.with_overrides([f"train_paths={json.dumps(list(args.data))}"])
    scenarios = _load_data(paths, cfg.data_format)
    out = Path(args.out)
    try:
        _, runlog = train(cfg, scenarios, run_dir=out, progress_every=args.progress)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"trained {cfg.steps} steps; final loss {runlog.losses[-1] if runlog.losses else float('nan'):.6g}; "
          f"train ADE {runlog.final_ade:.6g}")
    return EXIT_OK


def _eval_inputs(args):
    cfg = _resolve_config(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else (Path(args.run) / "final.bin" if args.run else None)
    paths = args.data or list(cfg.test_paths) or list(cfg.train_paths)
    if not paths:
        raise CliError(EXIT_CONFIG, "no evaluation data: pass --data or set test_paths")
    return cfg, ckpt, paths


def _model_predictions(cfg: TrainConfig, ckpt: Path | None, scenarios):
    if ckpt is None:
        raise CliError(EXIT_CONFIG, "pass --checkpoint or --run (or --baseline)")
    net = _load_net(cfg, _require(ckpt, "checkpoint"))
    packs = [prepare(s, cfg.model, with_image=cfg.toggles.EF) for s in scenarios]
    return predict(net, packs, cfg.modalities, seed=cfg.seed, noise=cfg.noise)


def _predictions(args, cfg, ckpt, scenarios):
    if args.baseline:
        if args.baseline not in ("linear", "kalman"):
            raise CliError(EXIT_CONFIG, "--baseline must be 'linear' or 'kalman' (learned baselines need a checkpoint)")
        return BASELINES[args.baseline]().fit().predict(scenarios), args.baseline
    return _model_predictions(cfg, ckpt, scenarios), "model"


def cmd_eval(args) -> int:
    cfg, ckpt, paths = _eval_inputs(args)
    if ckpt is not None and not args.baseline:
        _require(ckpt, "checkpoint")
    scenarios = _load_data(paths, cfg.data_format)
    sets, name = _predictions(args, cfg, ckpt, scenarios)
    report = score_predictions(sets, metric=args.metric)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "metrics.csv", [(name, report)])
    table = format_table([(name, report)], digits=args.digits)
    (out / "table.txt").write_text(table + "\n")
    _write_json(out / "config.json", {"config": cfg.to_dict(), "checkpoint": str(ckpt), "data": list(map(str, paths)),
                                      "baseline": args.baseline, "metric": args.metric,
                                      "evaluation": "best-of-K per agent", "k": report.k,
                                      "training_variety_min": cfg.variety_min})
    _write_json(out / "metrics.json", {"ade": report.ade, "fde": report.fde, "k": report.k, "agents": report.agents,
                                       "per_scenario": report.per_scenario})
    print(table)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, ckpt, paths = _eval_inputs(args)
    scenarios = _load_data(paths, cfg.data_format)
    sets, name = _predictions(args, cfg, ckpt, scenarios)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions_csv(out / "predictions.csv", sets)
    _write_json(out / "config.json", {"config": cfg.to_dict(), "checkpoint": str(ckpt), "predictor": name,
                                      "data": list(map(str, paths))})
    print(f"wrote {sum(s.trajectories.shape[0] * s.trajectories.shape[1] for s in sets)} trajectories "
          f"to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = MODEL_SEED if args.seed is None else args.seed
    worst = run_suite(seed, include_model=not args.ops_only)
    dead = [] if args.ops_only else zero_gradient_params(seed)
    if dead:
        print(f"warning: zero gradient (check is vacuous) for {', '.join(dead)}", file=sys.stderr)
    bad = sorted(k for k, v in worst.items() if not v <= args.tol)
    width = max(len(k) for k in worst)
    for k, v in worst.items():
        print(f"{k.ljust(width)}  {v:.3e}  {'ok' if k not in bad else 'FAIL'}")
    if args.out:
        _write_json(Path(args.out), {"seed": seed, "tol": args.tol, "worst": worst, "failed": bad,
                                       "zero_gradient": dead})
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    train_paths = args.data or list(cfg.train_paths)
    test_paths = args.test_data or list(cfg.test_paths) or train_paths
    if not train_paths:
        raise CliError(EXIT_CONFIG, "no training data: pass --data or set train_paths")
    train_set = _load_data(train_paths, cfg.data_format)
    test_set = _load_data(test_paths, cfg.data_format)
    out = Path(args.out)
    rows: list[tuple[str, MetricReport]] = []
    marks = []
    for name, toggles in ABLATION_ROWS:
        # the baseline row is the plain LSTM: no features and no decoder noise
        row_cfg = TrainConfig.from_dict({**cfg.to_dict(), "toggles": toggles.as_dict(),
                                         "noise": "zero" if name == "Baseline" else cfg.noise})
        try:
            net, _ = train(row_cfg, train_set, run_dir=out / name)
        except TrainingDiverged as exc:
            print(f"error in {name}: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        packs = [prepare(s, row_cfg.model, with_image=toggles.EF) for s in test_set]
        rows.append((name, evaluate_model(net, packs, row_cfg.modalities, row_cfg.seed, row_cfg.noise)))
        marks.append(["x" if v else "-" for v in toggles.as_dict().values()])
    header = list(ABLATION_ROWS[0][1].as_dict())
    table = format_table(rows, digits=args.digits, extra=marks, extra_header=header)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *header, "ade", "fde"])
        for (name, r), m in zip(rows, marks):
            w.writerow([name, *[int(x == "x") for x in m], repr(r.ade), repr(r.fde)])
    (out / "table.txt").write_text(table + "\n")
    _write_json(out / "config.json", {"config": cfg.to_dict(), "train": list(map(str, train_paths)),
                                      "test": list(map(str, test_paths))})
    print(table)
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajcast", description="Multi-agent trajectory forecasting toolkit.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic scenarios")
    g.add_argument("--template", required=True)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--group", help="scene group name (default: the template name)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    r = sub.add_parser("rasterize", help="rasterize a map around an ego position")
    r.add_argument("--map", required=True)
    r.add_argument("--ego-x", type=float, required=True)
    r.add_argument("--ego-y", type=float, required=True)
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_rasterize)

    def common(sp, run=False):
        sp.add_argument("--config", "-c")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data", nargs="+")
        sp.add_argument("--out", required=True)
        if run:
            sp.add_argument("--run", help="run directory (config.snapshot + final.bin)")
            sp.add_argument("--checkpoint")
            sp.add_argument("--baseline", choices=["linear", "kalman"])

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--progress", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    common(e, run=True)
    e.add_argument("--metric", choices=["l2", "mse"], default="l2")
    e.add_argument("--digits", type=int, default=2)
    e.set_defaults(fn=cmd_eval)

    pr = sub.add_parser("predict", help="write predicted trajectories as CSV")
    common(pr, run=True)
    pr.set_defaults(fn=cmd_predict)

    gc = sub.add_parser("gradcheck", help="finite-difference verification suite")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--tol", type=float, default=RTOL)
    gc.add_argument("--ops-only", action="store_true")
    gc.add_argument("--out")
    gc.set_defaults(fn=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and evaluate the six ablation rows")
    common(a)
    a.add_argument("--test-data", nargs="+")
    a.add_argument("--digits", type=int, default=2)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
