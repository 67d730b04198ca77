"""Paired baseline-vs-debiased evaluation under repeated cross-validation.

Every fold fits the baseline and the debiased pipeline on the same training
rows with the same model seed and scores both on the same test rows, so the
ratios ``gamma/gamma0`` and ``tau/tau0`` isolate the debiasing step.

Seeds: fold-level streams come from ``SeedSequence([seed, rep, fold])``;
the split permutation of repetition ``rep`` from ``SeedSequence([seed, rep])``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import (DataError, DatasetSchema, DegenerateDataError, SyntheticImbalanceConfig, TabularDataset,
                       generate_imbalance, load_csv, split)
from .debias import (CalibrationJoint, FlipPolicy, PfopObjective, SolverConfig, UnsupportedSchemeError,
                     apply_policy, fit_eod_policy, fit_nlinprog_policy, reweigh)
from .fact import Fairness, accuracy, fact_from_predictions, format_number, tau
from .models import fit_model, make_config

DEBIASERS = ("none", "RW", "EOd", "NLP")
STRATIFY = ("none", "y", "y_and_s")
METRICS = ("gamma0", "tau0", "gamma", "tau", "gamma_ratio", "tau_ratio")


class SpecError(ValueError):
    """Malformed experiment specification."""


# resampling ------------------------------------------------------------------

@dataclass(frozen=True)
class ResamplingPlan:
    kind: str = "repeated_kfold"  # holdout | kfold | repeated_kfold
    k: int = 10
    repeats: int = 10
    test_fraction: float = 0.3
    stratify_on: str = "y_and_s"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("holdout", "kfold", "repeated_kfold"):
            raise SpecError(f"unknown resampling kind {self.kind!r}")
        if self.stratify_on not in STRATIFY:
            raise SpecError(f"stratify_on must be one of {STRATIFY}")
        if self.kind == "holdout" and not 0.0 < self.test_fraction < 1.0:
            raise SpecError("test_fraction must lie in (0, 1)")
        if self.kind != "holdout" and self.k < 2:
            raise SpecError("k must be at least 2")
        if self.repeats < 1:
            raise SpecError("repeats must be at least 1")

    @classmethod
    def holdout(cls, test_fraction=0.3, stratify_on="y_and_s", seed=0):
        return cls("holdout", 2, 1, test_fraction, stratify_on, seed)

    @classmethod
    def kfold(cls, k=10, stratify_on="y_and_s", seed=0):
        return cls("kfold", k, 1, 0.3, stratify_on, seed)

    @classmethod
    def repeated_kfold(cls, repeats=10, k=10, stratify_on="y_and_s", seed=0):
        return cls("repeated_kfold", k, repeats, 0.3, stratify_on, seed)

    @property
    def n_reps(self) -> int:
        return self.repeats if self.kind == "repeated_kfold" else 1

    def label(self) -> str:
        if self.kind == "holdout":
            return f"holdout({format_number(self.test_fraction)})"
        if self.kind == "kfold":
            return f"kfold({self.k})"
        return f"repeated_kfold({self.repeats},{self.k})"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ResamplingPlan":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise SpecError(f"unknown resampling field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Fold:
    rep: int
    fold: int
    train: np.ndarray = field(repr=False)
    test: np.ndarray = field(repr=False)


def _strata(plan: ResamplingPlan, data: TabularDataset) -> np.ndarray:
    if plan.stratify_on == "none":
        return np.zeros(data.n, dtype=np.int64)
    if plan.stratify_on == "y":
        return data.y.copy()
    return data.y * 2 + data.s


def make_folds(plan: ResamplingPlan, data: TabularDataset) -> list:
    """Train/test index pairs, ordered by (rep, fold).

    Rows of each stratum are shuffled, strata are concatenated and position
    ``i`` goes to fold ``i mod k``, so every stratum is spread over the folds
    within one row and fold sizes differ by at most one.
    """
    n = data.n
    strata = _strata(plan, data)
    labels = np.unique(strata)
    if plan.kind != "holdout":
        if n < plan.k:
            raise DegenerateDataError(f"{n} rows cannot fill {plan.k} folds")
        if plan.stratify_on != "none":
            for lab in labels:
                size = int(np.sum(strata == lab))
                if size < plan.k:
                    raise DegenerateDataError(f"stratum {int(lab)} has {size} rows, fewer than k={plan.k}")
    folds = []
    for rep in range(plan.n_reps):
        rng = np.random.default_rng(np.random.SeedSequence([plan.seed, rep]))
        groups = [rng.permutation(np.flatnonzero(strata == lab)) for lab in labels]
        if plan.kind == "holdout":
            test = np.concatenate([g[:int(round(plan.test_fraction * len(g)))] for g in groups])
            mask = np.zeros(n, dtype=bool)
            mask[test] = True
            if mask.all() or not mask.any():
                raise DegenerateDataError("holdout split leaves an empty side")
            folds.append(Fold(rep, 0, np.flatnonzero(~mask), np.flatnonzero(mask)))
            continue
        order = np.concatenate(groups)
        assign = np.empty(n, dtype=np.int64)
        assign[order] = np.arange(n) % plan.k
        for f in range(plan.k):
            folds.append(Fold(rep, f, np.flatnonzero(assign != f), np.flatnonzero(assign == f)))
    return folds


# experiment spec -------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    dataset: dict
    model: dict = field(default_factory=lambda: {"kind": "forest", "params": {}})
    debiaser: dict = field(default_factory=lambda: {"kind": "none"})
    measure: str = "DP"
    extra_measures: tuple = ()
    resampling: ResamplingPlan = field(default_factory=ResamplingPlan)
    seed: int = 0
    name: str = ""
    base_dir: str = "."

    def __post_init__(self):
        if not isinstance(self.dataset, dict) or len({"synthetic", "csv"} & set(self.dataset)) != 1:
            raise SpecError("dataset needs exactly one of 'synthetic' or 'csv'")
        if "csv" in self.dataset and "schema" not in self.dataset:
            raise SpecError("csv dataset needs a 'schema' (file path or object)")
        kind = self.model.get("kind")
        if kind not in ("logistic", "forest"):
            raise SpecError(f"model.kind must be 'logistic' or 'forest', got {kind!r}")
        make_config(kind, self.model.get("params"))
        deb = dict(self.debiaser)
        if deb.get("kind", "none") not in DEBIASERS:
            raise SpecError(f"debiaser.kind must be one of {DEBIASERS}")
        deb.setdefault("kind", "none")
        deb["strength"] = float(deb.get("strength", 1.0))
        if not 0.0 <= deb["strength"] <= 1.0:
            raise SpecError("debiaser.strength must lie in [0, 1]")
        if deb.get("calibration", "train") not in ("train", "split"):
            raise SpecError("debiaser.calibration must be 'train' or 'split'")
        object.__setattr__(self, "debiaser", deb)
        try:
            object.__setattr__(self, "measure", Fairness.parse(self.measure).value)
            object.__setattr__(self, "extra_measures",
                               tuple(Fairness.parse(m).value for m in self.extra_measures))
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        if isinstance(self.resampling, dict):
            object.__setattr__(self, "resampling", ResamplingPlan.from_dict(self.resampling))

    @property
    def measures(self) -> tuple:
        return (self.measure,) + tuple(m for m in self.extra_measures if m != self.measure)

    def with_strength(self, strength: float) -> "ExperimentSpec":
        return replace(self, debiaser={**self.debiaser, "strength": float(strength)})

    def to_dict(self) -> dict:
        return {"name": self.name, "dataset": self.dataset, "model": self.model, "debiaser": self.debiaser,
                "measure": self.measure, "extra_measures": list(self.extra_measures),
                "resampling": self.resampling.to_dict(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentSpec":
        known = {"name", "dataset", "model", "debiaser", "measure", "extra_measures", "resampling", "seed"}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown experiment field(s): {sorted(unknown)}")
        if "dataset" not in d:
            raise SpecError("experiment spec needs a 'dataset'")
        d = dict(d)
        d["resampling"] = ResamplingPlan.from_dict(d.get("resampling", {}))
        d["extra_measures"] = tuple(d.get("extra_measures", ()))
        return cls(base_dir=str(base_dir), **d)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, base_dir=path.parent)


def load_dataset(spec: ExperimentSpec) -> TabularDataset:
    src = spec.dataset
    if "synthetic" in src:
        return generate_imbalance(SyntheticImbalanceConfig.from_dict(src["synthetic"]))
    base = Path(spec.base_dir)
    schema = src["schema"]
    schema = DatasetSchema.from_dict(schema) if isinstance(schema, dict) else DatasetSchema.from_json(base / schema)
    return load_csv(base / src["csv"], schema)


def rw_scheme(spec: ExperimentSpec) -> tuple:
    """(reweighing definition, note). Definitions without a reweighing scheme use DP weights."""
    want = Fairness.parse(spec.debiaser.get("definition", spec.measure))
    if want in (Fairness.DP, Fairness.EOp, Fairness.PE):
        return want, ""
    return Fairness.DP, f"DP weights used as a proxy for {want.value}"


def experiment_metadata(spec: ExperimentSpec) -> dict:
    meta = {"stratify_on": spec.resampling.stratify_on, "pairing": "shared splits and model seeds",
            "debiaser": spec.debiaser["kind"]}
    if spec.debiaser["kind"] == "RW":
        scheme, note = rw_scheme(spec)
        meta["rw_scheme"] = scheme.value
        if note:
            meta["rw_proxy"] = note
    if spec.debiaser["kind"] in ("EOd", "NLP"):
        meta["calibration"] = spec.debiaser.get("calibration", "train")
    from .models import BACKEND
    meta["tree_backend"] = BACKEND
    return meta


# per-fold evaluation ---------------------------------------------------------

@dataclass(frozen=True)
class FoldResult:
    rep: int
    fold: int
    strength: float
    n_train: int
    n_test: int
    gamma0: float = math.nan
    tau0: float = math.nan
    gamma: float = math.nan
    tau: float = math.nan
    status: str = "ok"
    # (tau0, tau) for every measured definition
    taus: dict = field(default_factory=dict, compare=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def gamma_ratio(self) -> float:
        return self.gamma / self.gamma0 if self.gamma0 > 0 else math.nan

    @property
    def tau_ratio(self) -> float:
        return self.tau / self.tau0 if self.tau0 > 0 else math.nan

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def _fold_seeds(seed: int, rep: int, fold: int) -> tuple:
    state = np.random.SeedSequence([seed, rep, fold]).generate_state(3, np.uint32)
    return int(state[0]), int(state[1]), int(state[2])


def _metrics(y, yhat, s, w, measures) -> tuple:
    fact = fact_from_predictions(y, yhat, s, w)
    return accuracy(fact), {m: tau(m, fact) for m in measures}


def _fit(spec, data, model_seed, weights=None):
    cfg = make_config(spec.model["kind"], spec.model.get("params"), seed=model_seed)
    if weights is not None:
        data = data.with_weights(weights)
    return fit_model(data, cfg)


def _policy(spec, joint, solver_seed) -> FlipPolicy:
    deb = spec.debiaser
    if deb["kind"] == "EOd":
        return fit_eod_policy(joint, 1.0)
    obj = deb.get("objective")
    if obj is None:
        objective = PfopObjective.simple(1.0, [(spec.measure, float(deb.get("fairness_weight", 1.0)))])
    else:
        objective = PfopObjective.from_dict(obj)
    return fit_nlinprog_policy(joint, objective, 1.0, SolverConfig(seed=solver_seed))


def evaluate_fold(spec: ExperimentSpec, data: TabularDataset, fold: Fold, strengths) -> list:
    """FoldResults for each strength; folds lacking a protected group are flagged."""
    strengths = [float(x) for x in strengths]
    model_seed, flip_seed, solver_seed = _fold_seeds(spec.seed, fold.rep, fold.fold)
    flagged = lambda why: [FoldResult(fold.rep, fold.fold, lam, len(fold.train), len(fold.test), status=why)
                           for lam in strengths]
    train = split(data, fold.train, lenient=True)
    test = split(data, fold.test, lenient=True)
    if not test.has_both_groups():
        return flagged("excluded: protected group missing from test fold")
    if not train.has_both_groups():
        return flagged("excluded: protected group missing from training fold")
    measures = spec.measures
    deb = spec.debiaser
    kind = deb["kind"]

    fit_rows = train
    calib = train
    if kind in ("EOd", "NLP") and deb.get("calibration", "train") == "split":
        frac = float(deb.get("calibration_fraction", 0.3))
        cal_plan = ResamplingPlan.holdout(frac, "y_and_s", seed=model_seed)
        try:
            cal = make_folds(cal_plan, train)[0]
        except DataError:
            return flagged("excluded: calibration split failed")
        fit_rows, calib = split(train, cal.train, lenient=True), split(train, cal.test, lenient=True)
    base_model = _fit(spec, fit_rows, model_seed)
    base_pred = base_model.predict(test.X)
    gamma0, taus0 = _metrics(test.y, base_pred, test.s, test.weights, measures)

    out = []
    policy = None
    if kind in ("EOd", "NLP") and any(lam > 0 for lam in strengths):
        cal_pred = base_model.predict(calib.X)
        try:
            joint = CalibrationJoint.from_predictions(calib.y, cal_pred, calib.s, calib.weights)
            policy = _policy(spec, joint, solver_seed)
        except DataError as exc:
            return flagged(f"excluded: {exc}")
    for lam in strengths:
        if kind == "none" or lam == 0.0 and kind in ("EOd", "NLP"):
            pred = base_pred
            if kind != "none":
                # the identity policy still consumes the flip stream
                pred = apply_policy(FlipPolicy.identity(), base_pred, test.s, np.random.default_rng(flip_seed))
        elif kind == "RW":
            scheme, _ = rw_scheme(spec)
            y_hint = base_model.predict(train.X) if deb.get("use_predictions") and scheme is not Fairness.DP else None
            try:
                weighted, _ = reweigh(train, scheme, lam, y_pred=y_hint)
            except (DataError, UnsupportedSchemeError) as exc:
                out.append(FoldResult(fold.rep, fold.fold, lam, train.n, test.n, status=f"excluded: {exc}"))
                continue
            pred = _fit(spec, train, model_seed, weighted.weights).predict(test.X)
        else:
            pred = apply_policy(policy.with_strength(lam), base_pred, test.s, np.random.default_rng(flip_seed))
        gamma, taus = _metrics(test.y, pred, test.s, test.weights, measures)
        out.append(FoldResult(fold.rep, fold.fold, lam, train.n, test.n, gamma0, taus0[spec.measure], gamma,
                              taus[spec.measure], taus={m: (taus0[m], taus[m]) for m in measures}))
    return out


# aggregation -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sd: float
    se: float
    count: int

    def table_cell(self) -> str:
        """``mean[SE x 1000]`` as in the benchmark tables."""
        if self.count == 0:
            return "NA"
        se = "NA" if math.isnan(self.se) else str(int(round(self.se * 1000)))
        return f"{self.mean:.3f}[{se}]"


def summarise(values) -> MetricSummary:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return MetricSummary(math.nan, math.nan, math.nan, 0)
    mean = float(v.mean())
    if v.size < 2:
        return MetricSummary(mean, math.nan, math.nan, int(v.size))
    sd = float(v.std(ddof=1))
    return MetricSummary(mean, sd, sd / math.sqrt(v.size), int(v.size))


@dataclass(frozen=True)
class AggregateReport:
    metrics: dict
    n_folds: int
    n_excluded: int
    strength: float = 1.0

    def __getitem__(self, metric) -> MetricSummary:
        return self.metrics[metric]

    @classmethod
    def from_folds(cls, folds, strength=1.0) -> "AggregateReport":
        good = [f for f in folds if f.ok]
        metrics = {m: summarise([f.value(m) for f in good]) for m in METRICS}
        extra = sorted({d for f in good for d in f.taus})
        for d in extra:
            metrics[f"tau0_{d}"] = summarise([f.taus[d][0] for f in good])
            metrics[f"tau_{d}"] = summarise([f.taus[d][1] for f in good])
        return cls(metrics, len(good), len(folds) - len(good), strength)

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "n_excluded": self.n_excluded, "strength": self.strength,
                "metrics": {k: asdict(v) for k, v in self.metrics.items()}}


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    folds: list
    aggregate: AggregateReport
    metadata: dict

    def warnings(self) -> list:
        out = [f"rep {f.rep} fold {f.fold}: {f.status}" for f in self.folds if not f.ok]
        if "rw_proxy" in self.metadata:
            out.append(self.metadata["rw_proxy"])
        return out


_WORKER = {}


def _init_worker(spec, data):
    _WORKER["spec"], _WORKER["data"] = spec, data


def _worker_task(args):
    fold, strengths = args
    return evaluate_fold(_WORKER["spec"], _WORKER["data"], fold, strengths)


def _run_folds(spec, data, folds, strengths, jobs) -> list:
    """Per-fold result lists in canonical (rep, fold) order."""
    tasks = [(f, strengths) for f in folds]
    if jobs <= 1 or len(folds) <= 1:
        return [evaluate_fold(spec, data, f, strengths) for f in folds]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(spec, data)) as ex:
        return list(ex.map(_worker_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def resolve_jobs(jobs) -> int:
    if jobs is None:
        return 1
    jobs = int(jobs)
    if jobs <= 0:
        return os.cpu_count() or 1
    return jobs


def run_experiment(spec: ExperimentSpec, data: TabularDataset | None = None, jobs: int = 1) -> ExperimentResult:
    data = load_dataset(spec) if data is None else data
    folds = make_folds(spec.resampling, data)
    lam = spec.debiaser["strength"]
    results = [r[0] for r in _run_folds(spec, data, folds, [lam], resolve_jobs(jobs))]
    return ExperimentResult(spec, results, AggregateReport.from_folds(results, lam), experiment_metadata(spec))


# sweeps ----------------------------------------------------------------------

def _check_grid(grid) -> list:
    grid = [float(x) for x in grid]
    if not grid:
        raise SpecError("grid must not be empty")
    return grid


def sweep_lambda(spec: ExperimentSpec, lambda_grid, data=None, jobs: int = 1) -> list:
    """One AggregateReport per strength, all on the same folds and seeds."""
    grid = _check_grid(lambda_grid)
    if any(not 0.0 <= x <= 1.0 for x in grid) or grid != sorted(grid) or len(set(grid)) != len(grid):
        raise SpecError("lambda grid must be strictly ascending within [0, 1]")
    if grid[0] != 0.0:
        raise SpecError("lambda grid must include 0")
    data = load_dataset(spec) if data is None else data
    folds = make_folds(spec.resampling, data)
    per_fold = _run_folds(spec, data, folds, grid, resolve_jobs(jobs))
    return [AggregateReport.from_folds([r[i] for r in per_fold], lam) for i, lam in enumerate(grid)]


def lambda_rows(reports) -> list:
    rows = []
    for r in reports:
        g, t = r["gamma_ratio"], r["tau_ratio"]
        rows.append({"lambda": r.strength, "gamma_ratio_mean": g.mean, "gamma_ratio_se": g.se,
                     "tau_ratio_mean": t.mean, "tau_ratio_se": t.se, "n_folds": r.n_folds,
                     "n_excluded": r.n_excluded})
    return rows


def fairness_pair_rows(spec: ExperimentSpec, lambda_grid, def_a, def_b, models=("forest", "logistic"),
                       data=None, jobs: int = 1) -> list:
    """(model, lambda, mean tau_A, mean tau_B) trajectories for a fairness-fairness trade-off plot."""
    a, b = Fairness.parse(def_a).value, Fairness.parse(def_b).value
    data = load_dataset(spec) if data is None else data
    rows = []
    for kind in models:
        params = spec.model.get("params", {}) if spec.model["kind"] == kind else {}
        s = replace(spec, model={"kind": kind, "params": params}, extra_measures=(a, b))
        for rep in sweep_lambda(s, lambda_grid, data, jobs):
            ta, tb = rep[f"tau_{a}"], rep[f"tau_{b}"]
            rows.append({"model": kind, "lambda": rep.strength, f"tau_{a}_mean": ta.mean, f"tau_{a}_se": ta.se,
                         f"tau_{b}_mean": tb.mean, f"tau_{b}_se": tb.se, "n_folds": rep.n_folds})
    return rows


def imbalance_spec(base: SyntheticImbalanceConfig, plan: ResamplingPlan, model=None, seed=0,
                   calibration="split") -> ExperimentSpec:
    """EOd post-processing measured on predictive equality (EFPR).

    The flip policy is fitted on a held-out 30% of each training fold by
    default: a fully grown forest is almost perfect on its own training rows,
    which would leave nothing for the policy to correct.
    """
    deb = {"kind": "EOd", "strength": 1.0, "calibration": calibration, "calibration_fraction": 0.3}
    return ExperimentSpec(dataset={"synthetic": base.to_dict()}, model=model or {"kind": "forest", "params": {}},
                          debiaser=deb, measure="PE", resampling=plan, seed=seed)


def _imbalance_cell(args):
    spec, p_y, p_s = args
    cfg = SyntheticImbalanceConfig.from_dict({**spec.dataset["synthetic"], "p_y": p_y, "p_s": p_s})
    cell = replace(spec, dataset={"synthetic": cfg.to_dict()})
    try:
        res = run_experiment(cell, jobs=1)
    except DegenerateDataError as exc:
        planned = spec.resampling.n_reps * (1 if spec.resampling.kind == "holdout" else spec.resampling.k)
        return {"p_y": p_y, "p_s": p_s, "sd_tau": math.nan, "mean_tau": math.nan, "n_folds": 0,
                "n_excluded": planned, "status": f"excluded: {exc}"}
    t = res.aggregate["tau"]
    return {"p_y": p_y, "p_s": p_s, "sd_tau": t.sd, "mean_tau": t.mean, "n_folds": res.aggregate.n_folds,
            "n_excluded": res.aggregate.n_excluded, "status": "ok"}


def sweep_imbalance(base: SyntheticImbalanceConfig, p_s_grid, p_y_grid, plan: ResamplingPlan, model=None,
                    seed=0, jobs: int = 1, calibration="split") -> list:
    """SD of the debiased tau_EFPR across folds for every (p_y, p_s) cell.

    Cells run in parallel; rows come back ordered by (p_y, p_s).
    """
    for g in (p_s_grid, p_y_grid):
        if any(not 0.0 < float(x) <= 0.5 for x in _check_grid(g)):
            raise SpecError("imbalance grids must lie in (0, 0.5]")
    spec = imbalance_spec(base, plan, model, seed, calibration)
    cells = [(spec, float(py), float(ps)) for py in p_y_grid for ps in p_s_grid]
    jobs = resolve_jobs(jobs)
    if jobs <= 1:
        return [_imbalance_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_imbalance_cell, cells))


def cv_strategy_comparison(spec: ExperimentSpec, plans, data=None, jobs: int = 1) -> list:
    """(plan, AggregateReport) for each resampling plan on the same data."""
    if len(plans) < 2:
        raise SpecError("compare at least two resampling plans")
    data = load_dataset(spec) if data is None else data
    return [(p, run_experiment(replace(spec, resampling=p), data, jobs).aggregate) for p in plans]


@dataclass(frozen=True)
class TestVarianceResult:
    sd_fixed: float
    sd_refit: float
    ratio: float
    reps: int
    taus_fixed: tuple = field(repr=False, default=())
    taus_refit: tuple = field(repr=False, default=())


def test_variance_experiment(spec: ExperimentSpec, n_test: int, reps: int, refit="both") -> TestVarianceResult:
    """SD of the debiased tau over fresh synthetic test sets.

    ``refit=False`` trains once on the spec's dataset; ``True`` redraws the
    training set and refits in each replication; ``"both"`` runs the two on
    the same test sets. SDs are nan when ``reps < 2``.
    """
    if "synthetic" not in spec.dataset:
        raise SpecError("test variance experiment needs a synthetic dataset")
    base = SyntheticImbalanceConfig.from_dict(spec.dataset["synthetic"])
    modes = {"both": (False, True), True: (True,), False: (False,)}[refit]
    train0 = generate_imbalance(base)
    taus = {False: [], True: []}
    for r in range(reps):
        seeds = np.random.SeedSequence([base.seed, spec.seed, r]).generate_state(2, np.uint32)
        test = generate_imbalance(replace(base, n=n_test, seed=int(seeds[0])))
        for mode in modes:
            train = generate_imbalance(replace(base, seed=int(seeds[1]))) if mode else train0
            data = TabularDataset(np.vstack([train.X, test.X]), np.concatenate([train.y, test.y]),
                                  np.concatenate([train.s, test.s]), feature_names=train.feature_names)
            fold = Fold(r, 0, np.arange(train.n), train.n + np.arange(test.n))
            res = evaluate_fold(spec, data, fold, [spec.debiaser["strength"]])[0]
            taus[mode].append(res.tau)
    sd = lambda v: float(np.std(v, ddof=1)) if len(v) >= 2 else math.nan
    fixed, refitted = sd(taus[False]), sd(taus[True])
    ratio = refitted / fixed if fixed and not math.isnan(fixed) and not math.isnan(refitted) else math.nan
    return TestVarianceResult(fixed, refitted, ratio, reps, tuple(taus[False]), tuple(taus[True]))


test_variance_experiment.__test__ = False
TestVarianceResult.__test__ = False


# outputs ---------------------------------------------------------------------

def rows_csv(rows, columns=None) -> str:
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] if isinstance(r.get(c), str) else format_number(r.get(c)) for c in columns])
    return buf.getvalue()


def folds_csv(results) -> str:
    """Long format, one row per (fold, strength)."""
    rows = []
    for f in results:
        row = {"rep": f.rep, "fold": f.fold, "strength": f.strength, "n_train": f.n_train, "n_test": f.n_test}
        row.update({m: f.value(m) for m in METRICS})
        for d in sorted(f.taus):
            row[f"tau0_{d}"], row[f"tau_{d}"] = f.taus[d]
        row["status"] = f.status
        rows.append(row)
    cols = list(dict.fromkeys(k for r in rows for k in r if k != "status")) + ["status"]
    return rows_csv(rows, cols)


def summary_csv(name: str, measure: str, report: AggregateReport) -> str:
    """One row in the benchmark-table layout: ``mean[SE x 1000]`` cells plus raw numbers."""
    row = {"experiment": name, "definition": measure, "strength": report.strength}
    for m in ("gamma_ratio", "tau_ratio", "gamma0", "tau0", "gamma", "tau"):
        row[m] = report[m].table_cell()
    for m in ("gamma_ratio", "tau_ratio"):
        row[f"{m}_mean"], row[f"{m}_se"] = report[m].mean, report[m].se
    row["n_folds"], row["n_excluded"] = report.n_folds, report.n_excluded
    return rows_csv([row])
