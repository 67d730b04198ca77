"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 degenerate data.
``FAIRBENCH_SEED`` overrides the master seed of any command when set.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import (DataError, DatasetSchema, DegenerateDataError, SyntheticImbalanceConfig, generate_imbalance,
                       load_csv, write_csv)
from .fact import Fairness, fact_from_predictions, metric_report

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 2, 3
SEED_ENV = "FAIRBENCH_SEED"


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return int(default)
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


class Run:
    """Collects outputs and warnings; writes manifest.json last."""

    def __init__(self, command: str, out: str, config: dict, seed: int, inputs=()):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {"tool": "fairbench", "version": __version__, "command": command, "config": config,
                         "seed": seed, "inputs": {str(p): _digest(p) for p in inputs if p},
                         "started": _now(), "outputs": {}, "warnings": []}

    def write(self, name: str, text: str) -> None:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.manifest["outputs"][name] = _digest(path)

    def warn(self, msg: str) -> None:
        self.manifest["warnings"].append(msg)

    def close(self, status: str = "ok") -> None:
        self.manifest["finished"] = _now()
        self.manifest["status"] = status
        (self.out / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True), "utf-8")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _floats(text: str, name: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


# commands --------------------------------------------------------------------

def read_predictions(path, column: str | None, rows) -> np.ndarray:
    """Prediction column of a header-first CSV, aligned to dataset ``rows`` (source line indices)."""
    import csv
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            body = [r for r in reader if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if not header:
        raise UsageError(f"{path}: empty prediction file")
    name = column or ("y_pred" if "y_pred" in header else header[0])
    if name not in header:
        raise UsageError(f"prediction column {name!r} not in {path} (has {header})")
    j = header.index(name)
    try:
        values = np.array([int(float(r[j])) for r in body], dtype=np.int64)
    except (ValueError, IndexError):
        raise UsageError(f"prediction column {name!r}: values must be 0/1") from None
    if not np.isin(values, (0, 1)).all():
        raise UsageError(f"prediction column {name!r}: values must be 0/1")
    if len(rows) and rows.max() >= len(values):
        raise UsageError(f"{path} has {len(values)} rows but the data file has more")
    return values[rows]


def cmd_metrics(args) -> int:
    try:
        definition = Fairness.parse(args.definition)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    schema = DatasetSchema.from_json(args.schema)
    data = load_csv(args.data, schema)
    y_pred = read_predictions(args.pred, args.pred_column, data.source_rows)
    fact = fact_from_predictions(data.y, y_pred, data.s, data.weights)
    report = metric_report(definition, fact)
    run = Run("metrics", args.out, {"definition": definition.value, "pred_column": args.pred_column},
              env_seed(0), [args.data, args.schema, args.pred])
    run.write("metrics.json", report.to_json() + "\n")
    run.write("metrics.csv", report.to_csv())
    run.close()
    return EXIT_OK


def _load_spec(args):
    from .harness import ExperimentSpec, ResamplingPlan
    spec = ExperimentSpec.from_json(args.spec)
    seed = env_seed(spec.seed)
    if seed != spec.seed:
        spec = replace(spec, seed=seed, resampling=replace(spec.resampling, seed=seed))
    return spec


def _spec_inputs(spec, args) -> list:
    inputs = [args.spec]
    if "csv" in spec.dataset:
        inputs.append(Path(spec.base_dir) / spec.dataset["csv"])
        if isinstance(spec.dataset["schema"], str):
            inputs.append(Path(spec.base_dir) / spec.dataset["schema"])
    return inputs


def cmd_benchmark(args) -> int:
    from .harness import folds_csv, load_dataset, run_experiment, summary_csv
    spec = _load_spec(args)
    run = Run("benchmark", args.out, spec.to_dict(), spec.seed, _spec_inputs(spec, args))
    try:
        data = load_dataset(spec)
        res = run_experiment(spec, data, jobs=args.jobs)
    except DegenerateDataError as exc:
        run.warn(f"degenerate data: {exc}")
        run.close("degenerate")
        raise
    run.manifest["metadata"] = res.metadata
    for w in res.warnings():
        run.warn(w)
    run.write("folds.csv", folds_csv(res.folds))
    run.write("summary.csv", summary_csv(spec.name or Path(args.spec).stem, spec.measure, res.aggregate))
    run.write("summary.json", json.dumps(res.aggregate.to_dict(), indent=2, sort_keys=True) + "\n")
    run.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import (ResamplingPlan, experiment_metadata, fairness_pair_rows, lambda_rows, rows_csv,
                          sweep_imbalance, sweep_lambda)
    spec = _load_spec(args)
    run = Run(f"sweep:{args.mode}", args.out, {**spec.to_dict(), "mode": args.mode, "grid": args.grid},
              spec.seed, _spec_inputs(spec, args))
    try:
        if args.mode == "lambda":
            grid = _floats(args.grid or "0,0.25,0.5,0.75,1", "grid")
            run.manifest["metadata"] = experiment_metadata(spec)
            reports = sweep_lambda(spec, grid, jobs=args.jobs)
            rows = lambda_rows(reports)
            for r in reports:
                if r.n_excluded:
                    run.warn(f"lambda {r.strength}: {r.n_excluded} fold(s) excluded")
        elif args.mode == "imbalance":
            if "synthetic" not in spec.dataset:
                raise UsageError("imbalance sweep needs a synthetic dataset in the spec")
            base = SyntheticImbalanceConfig.from_dict(spec.dataset["synthetic"])
            ps = _floats(args.grid or ",".join(f"{x / 100:g}" for x in range(5, 55, 5)), "grid")
            py = _floats(args.p_y_grid, "p-y-grid")
            rows = sweep_imbalance(base, ps, py, spec.resampling, spec.model, spec.seed, jobs=args.jobs)
            for r in rows:
                if r["n_excluded"]:
                    run.warn(f"p_y={r['p_y']} p_s={r['p_s']}: {r['n_excluded']} fold(s) excluded")
        else:
            grid = _floats(args.grid or "0,0.25,0.5,0.75,1", "grid")
            defs = [d.strip() for d in args.definitions.split(",")]
            if len(defs) != 2:
                raise UsageError("--definitions needs exactly two definitions, e.g. PE,EFNR")
            models = [m.strip() for m in args.models.split(",")]
            rows = fairness_pair_rows(spec, grid, defs[0], defs[1], models, jobs=args.jobs)
    except DegenerateDataError as exc:
        run.warn(f"degenerate data: {exc}")
        run.close("degenerate")
        raise
    run.write("sweep.csv", rows_csv(rows))
    run.close()
    return EXIT_OK


def cmd_theory(args) -> int:
    from . import theory as th
    seed = env_seed(args.seed)
    config = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    config["seed"] = seed
    run = Run(f"theory:{args.mode}", args.out, config, seed, [args.moments] if args.moments else [])
    if args.mode == "clt":
        if args.world_json:
            d = _read_json(args.world_json)
            world = th.BernoulliWorld(d["pi1"], d["cells0"], d["cells1"], d.get("name", "custom"))
        else:
            worlds = th.standard_worlds()
            if args.world not in worlds:
                raise UsageError(f"--world must be one of {sorted(worlds)}")
            world = worlds[args.world]
        pen = th.FairPenalty(args.penalty, args.eps)
        lams = _floats(args.lam, "lam")
        reports = [th.clt_experiment(world, args.m, args.reps, lam, pen, seed) for lam in lams]
        for r in reports:
            if r.at_kink:
                run.warn(f"lambda {r.lam}: fairness means coincide; subgradient used at the kink")
        run.write("clt.json", json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
        from .harness import rows_csv
        run.write("clt.csv", rows_csv([r.to_dict() for r in reports]))
        run.write("clt_deviations.csv", "".join(
            r.deviations_csv() if i == 0 else r.deviations_csv().split("\n", 1)[1] for i, r in enumerate(reports)))
    elif args.mode == "naive-bv":
        alphas = _floats(args.alpha_grid, "alpha-grid")
        beta = tuple(_floats(args.beta, "beta"))
        rows = []
        for a in alphas:
            cfg = th.NaiveDebiasConfig(a, beta)
            cf = th.naive_policy_closed_form(cfg)
            mc = th.naive_policy_monte_carlo(cfg, args.n_draws, seed)
            row = {f"cf_{k}": v for k, v in cf.to_dict().items() if k not in ("source",)}
            row.update({f"mc_{k}": v for k, v in mc.to_dict().items()
                        if k not in ("source", "alpha", "beta0", "beta1", "regime",
                                     "variance_difference_factorized")})
            for name in ("main_prediction", "bias", "variance", "noise"):
                for g in (0, 1):
                    se = mc.se[f"{name}{g}"]
                    z = abs(getattr(cf, name)[g] - getattr(mc, name)[g]) / se if se > 0 else 0.0
                    row[f"z_{name}{g}"] = z
            rows.append(row)
        from .harness import rows_csv
        run.write("naive_bv.csv", rows_csv(rows))
        run.write("naive_bv.json", json.dumps(rows, indent=2) + "\n")
    else:
        if not args.moments:
            raise UsageError("vlim mode needs --moments FILE.json")
        d = _read_json(args.moments)
        try:
            moments = th.MomentSet(**{k: d[k] for k in ("pi", "loss_mean", "loss_var", "fair_mean", "fair_var",
                                                         "cov")})
        except KeyError as exc:
            raise UsageError(f"moments file lacks field {exc}") from None
        pen = th.FairPenalty(args.penalty, args.eps)
        rows = [{"lambda": lam, "limiting_variance": th.limiting_variance(moments, lam, pen),
                 "at_kink": pen.at_kink(*moments.fair_mean)} for lam in _floats(args.lam, "lam")]
        from .harness import rows_csv
        run.write("vlim.json", json.dumps({"moments": moments.to_dict(), "penalty": args.penalty,
                                           "rows": rows}, indent=2) + "\n")
        run.write("vlim.csv", rows_csv(rows))
    run.close()
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticImbalanceConfig.from_dict(_read_json(args.config)) if args.config else SyntheticImbalanceConfig()
    seed = env_seed(cfg.seed)
    cfg = replace(cfg, seed=seed)
    data = generate_imbalance(cfg)
    run = Run("synth", args.out, cfg.to_dict(), seed, [args.config] if args.config else [])
    tmp = Path(args.out) / "data.csv"
    write_csv(data, tmp)
    run.manifest["outputs"]["data.csv"] = _digest(tmp)
    run.manifest["rows"] = data.n
    run.close()
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fairbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("metrics", help="accuracy, tau and gap of given predictions")
    m.add_argument("--data", required=True)
    m.add_argument("--schema", required=True)
    m.add_argument("--pred", required=True, help="CSV with a 0/1 prediction column, one row per data row")
    m.add_argument("--pred-column", default=None)
    m.add_argument("--definition", required=True, help="DP, PP, EFOR, EFNR, PE, EOp or EOd")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("benchmark", help="paired cross-validated experiment from a JSON spec")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("sweep", help="lambda, imbalance or fairness-fairness sweeps")
    s.add_argument("--spec", required=True)
    s.add_argument("--mode", choices=("lambda", "imbalance", "fairness-fairness"), required=True)
    s.add_argument("--grid", default=None, help="lambda grid, or the p_s grid in imbalance mode")
    s.add_argument("--p-y-grid", default="0.5")
    s.add_argument("--definitions", default="PE,EFNR")
    s.add_argument("--models", default="forest,logistic")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("theory", help="CLT check, naive debiaser decomposition, limiting variance")
    t.add_argument("--mode", choices=("clt", "naive-bv", "vlim"), required=True)
    t.add_argument("--world", default="distinct")
    t.add_argument("--world-json", default=None)
    t.add_argument("--m", type=int, default=10000)
    t.add_argument("--reps", type=int, default=1000)
    t.add_argument("--lam", default="0,0.5,1")
    t.add_argument("--penalty", default="abs_diff", choices=("abs_diff", "squared_diff", "smooth_abs"))
    t.add_argument("--eps", type=float, default=1e-3)
    t.add_argument("--alpha-grid", default=",".join(f"{a / 10:g}" for a in range(11)))
    t.add_argument("--beta", default="0.6,0.3")
    t.add_argument("--n-draws", type=int, default=10 ** 6)
    t.add_argument("--moments", default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_theory)

    y = sub.add_parser("synth", help="write a synthetic imbalance dataset")
    y.add_argument("--config", default=None)
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    from .harness import SpecError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DegenerateDataError as exc:
        print(f"fairbench: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (UsageError, SpecError, DataError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"fairbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
