"""Synthetic data, noise models and Monte Carlo experiment runners.

Each trial draws its own generator from ``SeedSequence((master_seed, cell,
trial))``, so a report depends only on the master seed and the config, never
on how trials are spread over worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

from .detector import DetectorConfig, detect
from .errors import (CalibrationError, DetectionFailure, EstimationError, InvalidInputError,
                     ModelError, RnnCpSiError)
from .inference import METHODS, PROBLEMS, SearchConfig, run_si
from .rnn import RnnWeights, load_weights, reference_weights

log = logging.getLogger(__name__)

SIGNAL_KINDS = ("null", "mean-shift-staircase", "linear-trend-piecewise")
FAMILIES = ("gaussian", "skewnorm", "exponnorm", "gennorm-steep", "gennorm-flat", "student-t")
EXPERIMENT_KINDS = ("type1", "power", "robust-variance", "robust-noise")


# ---------------------------------------------------------------------------
# signals and noise


@dataclass(frozen=True)
class SignalSpec:
    """Piecewise mean with change points after positions ``n//3`` and ``2n//3``."""

    kind: str = "null"
    n: int = 60
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise InvalidInputError(f"unknown signal kind {self.kind!r}; choose from {SIGNAL_KINDS}")
        if self.n < 3:
            raise InvalidInputError("signal length must be at least 3")

    @property
    def true_cps(self) -> tuple[int, ...]:
        if self.kind == "null":
            return ()
        return (self.n // 3, 2 * self.n // 3)

    def mean(self) -> np.ndarray:
        i = np.arange(1, self.n + 1)
        if self.kind == "null":
            return np.zeros(self.n)
        c1, c2 = self.true_cps
        if self.kind == "mean-shift-staircase":
            return self.delta * ((i > c1).astype(float) + (i > c2))
        return self.delta * (np.clip(i, c1, c2) - c1)


def _family_dist(family: str, param: float):
    if family == "skewnorm":
        return stats.skewnorm(param)
    if family == "exponnorm":
        return stats.exponnorm(param)
    if family in ("gennorm-steep", "gennorm-flat"):
        return stats.gennorm(param)
    if family == "student-t":
        return stats.t(param)
    raise InvalidInputError(f"family {family!r} has no parametric member")


# parameter ranges searched by calibrate_family; the first end recovers the normal
_FAMILY_RANGE = {
    "skewnorm": (0.0, 1000.0),
    "exponnorm": (1e-3, 1000.0),
    "gennorm-steep": (2.0, 0.2),
    "gennorm-flat": (2.0, 100.0),
    "student-t": (1e8, 2.05),
}


@dataclass(frozen=True)
class NoiseModel:
    """Covariance ``Sigma`` (identity or ``rho**|i-j|``) and a standardized marginal family."""

    covariance: str = "identity"
    rho: float = 0.5
    family: str = "gaussian"
    family_param: float | None = None
    standardized: bool = True

    def __post_init__(self):
        if self.covariance not in ("identity", "ar"):
            raise InvalidInputError(f"covariance must be 'identity' or 'ar', got {self.covariance!r}")
        if self.covariance == "ar" and not -1 < self.rho < 1:
            raise ModelError(f"AR correlation must lie in (-1, 1), got {self.rho}")
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown noise family {self.family!r}; choose from {FAMILIES}")
        if self.family != "gaussian":
            if self.family_param is None:
                raise InvalidInputError(f"family {self.family} needs family_param")
            lo, hi = sorted(_FAMILY_RANGE[self.family])
            if not lo <= self.family_param <= hi:
                raise InvalidInputError(f"{self.family} parameter {self.family_param} outside [{lo}, {hi}]")

    def sigma(self, n: int) -> np.ndarray:
        if self.covariance == "identity":
            return np.eye(n)
        i = np.arange(n)
        return self.rho ** np.abs(i[:, None] - i[None, :])

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        """Independent marginal draws with mean 0 and variance 1 when standardized."""
        if self.family == "gaussian":
            return rng.standard_normal(size)
        dist = _family_dist(self.family, self.family_param)
        eps = dist.rvs(size=size, random_state=rng)
        if self.standardized:
            mean, var = dist.stats(moments="mv")
            eps = (eps - float(mean)) / math.sqrt(float(var))
        return eps


def sample_sequence(spec: SignalSpec, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """``x = mu + L eps`` with ``L`` the lower Cholesky factor of the noise covariance."""
    Sigma = noise.sigma(spec.n)
    try:
        chol = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"noise covariance is not positive definite: {exc}") from exc
    return spec.mean() + chol @ noise.draw(rng, spec.n)


def wasserstein_to_normal(family: str, param: float) -> float:
    """1-Wasserstein distance between the standardized family member and N(0, 1).

    Evaluated as the integral of ``|F(x) - Phi(x)|`` over the real line, with
    survival functions on the right half so the tails keep full precision.
    Only closed-form cdfs are needed, unlike the quantile form.
    """
    dist = _family_dist(family, param)
    mean, var = (float(v) for v in dist.stats(moments="mv"))
    sd = math.sqrt(var)

    def left(x):
        with np.errstate(over="ignore"):
            return abs(dist.cdf(mean + sd * x) - special.ndtr(x))

    def right(x):
        with np.errstate(over="ignore"):
            return abs(dist.sf(mean + sd * x) - special.ndtr(-x))

    opts = dict(limit=400, epsabs=1e-12, epsrel=1e-10)
    total = 0.0
    for f, a, b in ((left, -math.inf, -8.0), (left, -8.0, 0.0), (right, 0.0, 8.0), (right, 8.0, math.inf)):
        total += integrate.quad(f, a, b, **opts)[0]
    return total


def calibrate_family(family: str, d: float) -> float:
    """Parameter at which the family sits at Wasserstein distance ``d`` from N(0, 1)."""
    if family not in _FAMILY_RANGE:
        raise InvalidInputError(f"cannot calibrate family {family!r}")
    if not 0 < d <= 0.2:
        raise InvalidInputError(f"target distance must lie in (0, 0.2], got {d}")
    near, far = _FAMILY_RANGE[family]
    # student-t is searched on log(df), which keeps the bisection well scaled
    to_param = math.exp if family == "student-t" else (lambda u: u)
    u_near, u_far = (math.log(near), math.log(far)) if family == "student-t" else (near, far)

    def gap(u):
        return wasserstein_to_normal(family, to_param(u)) - d

    g_far = gap(u_far)
    if g_far < 0:
        raise CalibrationError(
            f"{family} reaches at most distance {g_far + d:.4f} < {d} over its parameter range")
    if gap(u_near) > 0:
        raise CalibrationError(f"{family} cannot get closer than {gap(u_near) + d:.3g} to the normal")
    u = optimize.brentq(gap, u_near, u_far, xtol=1e-12, rtol=1e-12)
    param = to_param(u)
    if abs(gap(u)) > 1e-4:
        raise CalibrationError(f"{family} calibration stalled at distance {gap(u) + d:.6f}")
    return float(param)


def detection_correct(tau_det: Sequence[int], true_cps: Sequence[int], L: int) -> bool:
    """All detected positions within ``L`` of the truth, after sorting both."""
    if len(tau_det) != len(true_cps):
        raise InvalidInputError("detected and true change points differ in number")
    return all(abs(a - b) <= L for a, b in zip(sorted(tau_det), sorted(true_cps)))


def estimate_variance_robust(x, tau_det: Sequence[int]) -> float:
    """Largest within-segment sample variance over the segments cut at ``tau_det``."""
    x = np.asarray(x, dtype=float)
    cuts = [0, *sorted(int(t) for t in tau_det), x.size]
    variances = [float(np.var(x[a:b], ddof=1)) for a, b in zip(cuts[:-1], cuts[1:]) if b - a >= 2]
    if not variances:
        raise EstimationError("every segment is shorter than 2 points; cannot estimate variance")
    return max(variances)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    kind: str = "type1"
    n_list: list[int] = field(default_factory=lambda: [40])
    deltas: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    n_power: int = 60
    trials: int = 500
    alpha: float = 0.05
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    problem: str = "mean"
    covariance: str = "identity"
    rho: float = 0.5
    family: str = "gaussian"
    family_distance: float | None = None
    family_param: float | None = None
    K: int = 2
    l: int | None = None
    m: int | None = None
    w: int = 5
    L: int = 2
    weights: str | None = None
    bound_sds: float = 10.0
    pp_cap: int = 100000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise InvalidInputError(f"unknown experiment kind {self.kind!r}; choose from {EXPERIMENT_KINDS}")
        if self.problem not in PROBLEMS:
            raise InvalidInputError(f"problem must be one of {PROBLEMS}")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise InvalidInputError(f"methods must be a non-empty subset of {METHODS}")
        if not 0 <= self.alpha <= 1:
            raise InvalidInputError("alpha must lie in [0, 1]")
        if self.trials < 1:
            raise InvalidInputError("trials must be positive")
        if self.kind == "robust-noise" and self.family == "gaussian":
            raise InvalidInputError("robust-noise needs a non-Gaussian family")
        if self.kind == "robust-noise" and self.covariance != "identity":
            raise InvalidInputError("non-Gaussian noise is only supported with identity covariance")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def detector_for(self, n: int) -> DetectorConfig:
        # short sequences get the short window so two interior CPs still fit
        default = 5 if n < 60 else 10
        return DetectorConfig(K=self.K, l=self.l or default, m=self.m or default, w=self.w)

    def load_net(self, window: int) -> RnnWeights:
        if self.weights:
            return load_weights(self.weights)
        return reference_weights(window)

    def noise(self) -> NoiseModel:
        param = self.family_param
        if self.family != "gaussian" and param is None:
            if self.family_distance is None:
                raise InvalidInputError("non-Gaussian family needs family_param or family_distance")
            param = calibrate_family(self.family, self.family_distance)
        return NoiseModel(self.covariance, self.rho, self.family, param)


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class Cell:
    index: int
    n: int
    delta: float
    spec: SignalSpec


@dataclass
class TrialOutcome:
    cell: int
    trial: int
    seed: int
    status: str  # failure | incorrect | tested | error
    tau: tuple[int, ...] = ()
    pvalues: dict = field(default_factory=dict)  # method -> list over k
    message: str = ""


def trial_seed(master: int, cell: int, trial: int) -> int:
    return int(np.random.SeedSequence((master, cell, trial)).generate_state(1, np.uint64)[0])


def _run_trial(job) -> TrialOutcome:
    cfg, cell, trial, noise, weights = job
    seed = trial_seed(cfg.seed, cell.index, trial)
    rng = np.random.default_rng(seed)
    x = sample_sequence(cell.spec, noise, rng)
    dcfg = cfg.detector_for(cell.n)
    try:
        det = detect(x, weights, dcfg)
    except DetectionFailure as exc:
        return TrialOutcome(cell.index, trial, seed, "failure", message=str(exc))
    if cell.spec.true_cps and not detection_correct(det.tau_det, cell.spec.true_cps, cfg.L):
        return TrialOutcome(cell.index, trial, seed, "incorrect", det.tau_det)
    try:
        if cfg.kind == "robust-variance":
            Sigma = estimate_variance_robust(x, det.tau_det) * np.eye(cell.n)
        else:
            Sigma = noise.sigma(cell.n)
        search = SearchConfig(bound_sds=cfg.bound_sds, max_iterations=cfg.pp_cap)
        results = run_si(x, Sigma, weights, dcfg, cfg.problem, cfg.methods, search, detection=det)
    except RnnCpSiError as exc:
        log.warning("trial %d of cell %d failed: %s", trial, cell.index, exc)
        return TrialOutcome(cell.index, trial, seed, "error", det.tau_det,
                            message=f"{type(exc).__name__}: {exc}")
    pvals = {m: [getattr(r, f"p_{m}") for r in results] for m in cfg.methods}
    return TrialOutcome(cell.index, trial, seed, "tested", det.tau_det, pvals)


def _cells(cfg: ExperimentConfig) -> list[Cell]:
    if cfg.kind == "power":
        kind = "mean-shift-staircase" if cfg.problem == "mean" else "linear-trend-piecewise"
        return [Cell(i, cfg.n_power, float(d), SignalSpec(kind, cfg.n_power, float(d)))
                for i, d in enumerate(cfg.deltas)]
    return [Cell(i, int(n), 0.0, SignalSpec("null", int(n))) for i, n in enumerate(cfg.n_list)]


def _map(jobs: list, workers: int) -> list[TrialOutcome]:
    if workers <= 1:
        return [_run_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


# ---------------------------------------------------------------------------
# reports


def binomial_ci(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return (float(ci.low), float(ci.high))


@dataclass
class CellSummary:
    """Counts and rates for one (n, delta, method) cell.

    ``rate`` is per change point (rejected p-values over tested p-values);
    ``rate_trial`` counts a trial only when all K hypotheses are rejected.
    """

    n: int
    delta: float
    method: str
    trials: int
    failures: int
    detections: int
    correct: int
    errors: int
    tests: int
    rejections: int
    trials_all_rejected: int
    rate: float
    rate_ci: tuple[float, float]
    rate_trial: float
    rate_trial_ci: tuple[float, float]
    pvalues: list[float]

    def __post_init__(self):
        if not (self.trials_all_rejected <= self.correct <= self.detections <= self.trials
                and self.rejections <= self.tests):
            raise InvalidInputError("inconsistent experiment counts")


@dataclass
class ExperimentReport:
    kind: str
    master_seed: int
    config: dict
    cells: list[CellSummary]
    rows: list[dict]

    def cell(self, method: str, n: int | None = None, delta: float | None = None) -> CellSummary:
        for c in self.cells:
            if c.method == method and (n is None or c.n == n) and (delta is None or c.delta == delta):
                return c
        raise KeyError((method, n, delta))

    def summary(self) -> dict:
        return _json_safe({"kind": self.kind, "master_seed": self.master_seed, "config": self.config,
                           "cells": [asdict(c) for c in self.cells]})

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)
        json_path.write_text(json.dumps(self.summary(), indent=1) + "\n", encoding="utf-8")
        return csv_path, json_path


def _json_safe(obj):
    # strict JSON has no NaN; undefined rates become null
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


CSV_FIELDS = ["trial", "seed", "n", "delta", "status", "method", "k", "tau", "p", "rejected", "correct"]


def _summarize(cfg: ExperimentConfig, cells: list[Cell], outcomes: list[TrialOutcome]) -> ExperimentReport:
    summaries, rows = [], []
    for cell in cells:
        mine = [o for o in outcomes if o.cell == cell.index]
        counts = {s: sum(o.status == s for o in mine) for s in ("failure", "incorrect", "tested", "error")}
        detections = len(mine) - counts["failure"]
        correct = counts["tested"] + counts["error"]
        for method in cfg.methods:
            pv = [p for o in mine if o.status == "tested" for p in o.pvalues[method]]
            rej = sum(p < cfg.alpha for p in pv)
            all_rej = sum(all(p < cfg.alpha for p in o.pvalues[method])
                          for o in mine if o.status == "tested")
            tested = counts["tested"]
            summaries.append(CellSummary(
                cell.n, cell.delta, method, len(mine), counts["failure"], detections, correct,
                counts["error"], len(pv), rej, all_rej,
                rej / len(pv) if pv else math.nan, binomial_ci(rej, len(pv)),
                all_rej / tested if tested else math.nan, binomial_ci(all_rej, tested), pv))
        for o in mine:
            base = {"trial": o.trial, "seed": o.seed, "n": cell.n, "delta": cell.delta, "status": o.status,
                    "correct": o.status in ("tested", "error") if cell.spec.true_cps else ""}
            if o.status != "tested":
                rows.append({**base, "method": "", "k": "", "tau": " ".join(map(str, o.tau)),
                             "p": "", "rejected": ""})
                continue
            for method in cfg.methods:
                for k, (tau, p) in enumerate(zip(o.tau, o.pvalues[method]), start=1):
                    rows.append({**base, "method": method, "k": k, "tau": tau, "p": repr(float(p)),
                                 "rejected": p < cfg.alpha})
    config = cfg.to_dict()
    return ExperimentReport(cfg.kind, cfg.seed, config, summaries, rows)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run every trial of every cell and aggregate in deterministic trial order."""
    noise = cfg.noise() if cfg.kind == "robust-noise" else NoiseModel(cfg.covariance, cfg.rho)
    if noise.family_param is not None and cfg.family_param is None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "family_param": noise.family_param})
    cells = _cells(cfg)
    nets = {}
    jobs = []
    for cell in cells:
        window = cfg.detector_for(cell.n).l
        if window not in nets:
            nets[window] = cfg.load_net(window)
        jobs.extend((cfg, cell, t, noise, nets[window]) for t in range(cfg.trials))
    outcomes = _map(jobs, workers)
    return _summarize(cfg, cells, outcomes)


def run_type1(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    return run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "type1"}), workers)


def run_power(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    return run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "power"}), workers)


def run_robust_variance(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    return run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "robust-variance"}), workers)


def run_robust_noise(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    return run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "robust-noise"}), workers)
