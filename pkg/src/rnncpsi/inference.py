"""Selective p-values for detected change points.

The data are restricted to the line ``x(z) = a + b z`` through the
observation along the test direction.  A left-to-right sweep over a bounded
stretch of that line collects over-conditioned regions (see
:mod:`rnncpsi.affine_path`) until the stretch is covered; the regions whose
detection matches the observed one form the truncation set of the test
statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .affine_path import AffineVector, PropagationCache, SelectionEvent, oc_region
from .detector import DetectionResult, DetectorConfig, detect
from .errors import (DegenerateSegmentError, DegenerateTieError, InconsistencyError,
                     InvalidInputError, ModelError, NumericError, SearchCapExceeded)
from .intervals import INF, IntervalSet
from .rnn import RnnWeights

PROBLEMS = ("mean", "trend")
METHODS = ("selective", "oc", "naive")


# ---------------------------------------------------------------------------
# test directions


def _segments(tau_det: Sequence[int], k: int, n: int) -> tuple[int, int, int]:
    taus = (0, *[int(t) for t in tau_det], n)
    if not 1 <= k <= len(tau_det):
        raise InvalidInputError(f"k={k} outside 1..{len(tau_det)}")
    return taus[k - 1], taus[k], taus[k + 1]


def eta_mean_shift(tau_det: Sequence[int], k: int, n: int) -> np.ndarray:
    """Left-segment mean minus right-segment mean around the k-th change point."""
    s, c, e = _segments(tau_det, k, n)
    if c <= s or e <= c:
        raise DegenerateSegmentError(f"empty segment around change point {k}: {(s, c, e)}")
    eta = np.zeros(n)
    eta[s:c] = 1.0 / (c - s)
    eta[c:e] = -1.0 / (e - c)
    return eta


def slope_weights(length: int) -> np.ndarray:
    """Weights ``g`` with ``g @ y`` = least-squares slope of ``y`` on 1..length."""
    if length < 2:
        raise DegenerateSegmentError("a slope needs at least two points")
    # (b - s) = length - 1 for a segment s..b
    d = length - 1
    i = np.arange(1, length + 1)
    return 6.0 * (2 * i - d - 2) / (d * (d + 1) * (d + 2))


def eta_trend_shift(tau_det: Sequence[int], k: int, n: int) -> np.ndarray:
    """Left-segment OLS slope minus right-segment OLS slope."""
    s, c, e = _segments(tau_det, k, n)
    if c - s < 2 or e - c < 2:
        raise DegenerateSegmentError(f"segment shorter than 2 around change point {k}: {(s, c, e)}")
    eta = np.zeros(n)
    eta[s:c] = slope_weights(c - s)
    eta[c:e] = -slope_weights(e - c)
    return eta


def make_eta(problem: str, tau_det, k: int, n: int) -> np.ndarray:
    if problem == "mean":
        return eta_mean_shift(tau_det, k, n)
    if problem == "trend":
        return eta_trend_shift(tau_det, k, n)
    raise InvalidInputError(f"problem must be one of {PROBLEMS}, got {problem!r}")


@dataclass(frozen=True, eq=False)
class TestDirection:
    eta: np.ndarray
    z_obs: float
    sd: float
    a_line: np.ndarray
    b_line: np.ndarray
    k: int = 0
    problem: str = "mean"

    __test__ = False  # not a pytest class

    @property
    def line(self) -> AffineVector:
        return AffineVector(self.a_line, self.b_line)


def check_covariance(Sigma: np.ndarray) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ModelError("covariance must be a square matrix")
    if not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Sigma).max())):
        raise ModelError("covariance must be symmetric")
    try:
        np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise ModelError("covariance is not positive definite") from exc
    return Sigma


def line_params(x, eta, Sigma, k: int = 0, problem: str = "mean") -> TestDirection:
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    Sigma = check_covariance(Sigma)
    s_eta = Sigma @ eta
    var = float(eta @ s_eta)
    if not var > 0:
        raise ModelError("eta' Sigma eta must be positive")
    b = s_eta / var
    z_obs = float(eta @ x)
    a = x - b * z_obs
    return TestDirection(eta, z_obs, math.sqrt(var), a, b, k, problem)


# ---------------------------------------------------------------------------
# Gaussian masses of interval sets


def _log_mass_std(lo: float, hi: float) -> float:
    """log P(lo <= Z <= hi) for standard normal Z, stable in both tails."""
    if hi <= lo:
        return -INF
    if lo >= 0:
        la, lb = log_ndtr(-lo), log_ndtr(-hi)
        return la + math.log1p(-math.exp(lb - la)) if lb < la else -INF
    if hi <= 0:
        return _log_mass_std(-hi, -lo)
    tails = math.exp(log_ndtr(-hi)) + math.exp(log_ndtr(lo))
    return math.log1p(-tails) if tails < 1 else -INF


def log_gaussian_mass(region: IntervalSet, sd: float) -> float:
    terms = [_log_mass_std(lo / sd, hi / sd) for lo, hi in region]
    terms = [t for t in terms if t > -INF]
    return float(logsumexp(terms)) if terms else -INF


def gaussian_mass(region: IntervalSet, sd: float) -> float:
    return math.exp(log_gaussian_mass(region, sd))


def tail_set(z_obs: float) -> IntervalSet:
    t = abs(z_obs)
    return IntervalSet([(-INF, -t), (t, INF)])


def truncated_normal_p(z_obs: float, sd: float, region: IntervalSet) -> float:
    """Two-sided p-value of ``z_obs`` under ``N(0, sd^2)`` truncated to ``region``."""
    if not sd > 0:
        raise InvalidInputError("sd must be positive")
    log_den = log_gaussian_mass(region, sd)
    if log_den == -INF:
        raise NumericError(f"truncation region {region!r} has zero Gaussian mass at sd={sd:g}")
    log_num = log_gaussian_mass(region.intersection(tail_set(z_obs)), sd)
    return float(min(1.0, max(0.0, math.exp(log_num - log_den))))


# ---------------------------------------------------------------------------
# parametric sweep


@dataclass(frozen=True)
class SearchConfig:
    bound_sds: float = 10.0
    delta_sds: float = 1e-4
    max_retries: int = 20
    max_iterations: int = 100_000
    min_gap_sds: float = 1e-10

    def bounds(self, z_obs: float, sd: float) -> tuple[float, float]:
        # cover both the null mass around 0 and the neighbourhood of z_obs
        half = self.bound_sds * sd
        return min(-half, z_obs - half), max(half, z_obs + half)


@dataclass
class SweepState:
    """Bookkeeping the sweep exposes to monitors after every step."""

    lo: float
    hi: float
    z_obs: float
    sd: float
    explored: IntervalSet
    pieces: list = field(default_factory=list)
    mass_in_tail: float = 0.0
    mass_out_tail: float = 0.0
    iterations: int = 0

    def p_bounds(self) -> tuple[float, float]:
        """Bracket on the selective p-value from the explored part of the line."""
        tail = tail_set(self.z_obs)
        box = IntervalSet.interval(self.lo, self.hi)
        unexplored = box.difference(self.explored)
        ux = gaussian_mass(unexplored.intersection(tail), self.sd)
        uy = gaussian_mass(unexplored.difference(tail), self.sd)
        a, b = self.mass_in_tail, self.mass_out_tail
        lower = a / (a + b + uy) if a + b + uy > 0 else 0.0
        upper = (a + ux) / (a + b + ux) if a + b + ux > 0 else 1.0
        return min(1.0, max(0.0, lower)), min(1.0, max(0.0, upper))

    def region(self) -> IntervalSet:
        return IntervalSet(iv for piece in self.pieces for iv in piece)


@dataclass(frozen=True, eq=False)
class PathResult:
    region: IntervalSet
    explored: IntervalSet
    iterations: int
    oc_region: IntervalSet
    bounds: tuple[float, float]


def _oc_with_retries(line, z, g_hi, weights, cfg, search, sd, lo, hi, cache):
    step = search.delta_sds * sd
    for attempt in range(search.max_retries + 1):
        try:
            return z, oc_region(line, z, weights, cfg, lo, hi, cache)
        except DegenerateTieError:
            if attempt == search.max_retries:
                raise
            step *= 2.0
            z = z + min(step, 0.5 * (g_hi - z))
    raise AssertionError("unreachable")


def compute_solution_path(direction: TestDirection, tau_det: Sequence[int], weights: RnnWeights,
                          cfg: DetectorConfig, search: SearchConfig | None = None,
                          monitor: Callable[[SweepState], bool] | None = None) -> PathResult:
    """Truncation region of the test statistic along the data line.

    ``monitor`` is called after every step; returning True stops the sweep
    early (the returned region then only covers the explored part).
    """
    search = search or SearchConfig()
    tau_det = tuple(int(t) for t in tau_det)
    line = direction.line
    sd, z_obs = direction.sd, direction.z_obs
    lo, hi = search.bounds(z_obs, sd)
    min_gap = search.min_gap_sds * sd

    cache = PropagationCache(line, weights, cfg)
    zoc, ev = oc_region(line, z_obs, weights, cfg, cache=cache)
    if ev.detection != tau_det:
        raise InconsistencyError(
            f"detection at the observed point {ev.detection} differs from {tau_det}")
    first = zoc.clip(lo, hi)
    state = SweepState(lo, hi, z_obs, sd, first, [first])
    tail = tail_set(z_obs)
    state.mass_in_tail = gaussian_mass(first.intersection(tail), sd)
    state.mass_out_tail = gaussian_mass(first.difference(tail), sd)
    state.iterations = 1
    if monitor is not None and monitor(state):
        return PathResult(state.region(), state.explored, state.iterations, zoc, (lo, hi))

    while True:
        gap = state.explored.first_gap(lo, hi, min_gap)
        if gap is None:
            break
        if state.iterations >= search.max_iterations:
            raise SearchCapExceeded(
                f"parametric search exceeded {search.max_iterations} steps",
                p_bounds=state.p_bounds(), iterations=state.iterations)
        g_lo, g_hi = gap
        z = g_lo + min(search.delta_sds * sd, 0.5 * (g_hi - g_lo))
        z, (region, event) = _oc_with_retries(line, z, g_hi, weights, cfg, search, sd, lo, hi, cache)
        new = region.difference(state.explored)
        state.explored = state.explored.union(region)
        if event.detection == tau_det:
            state.pieces.append(new)
            state.mass_in_tail += gaussian_mass(new.intersection(tail), sd)
            state.mass_out_tail += gaussian_mass(new.difference(tail), sd)
        state.iterations += 1
        if monitor is not None and monitor(state):
            break
    return PathResult(state.region(), state.explored, state.iterations, zoc, (lo, hi))


# ---------------------------------------------------------------------------
# p-values


@dataclass(frozen=True, eq=False)
class SiResult:
    k: int
    tau_k: int
    z_obs: float
    sd: float
    p_selective: float | None
    p_oc: float | None
    p_naive: float | None
    region: IntervalSet | None = None
    oc_region: IntervalSet | None = None
    explored: IntervalSet | None = None
    iterations: int = 0
    bounds: tuple[float, float] | None = None

    def as_row(self) -> dict:
        return {
            "k": self.k, "tau": self.tau_k, "z_obs": self.z_obs, "sd": self.sd,
            "p_selective": self.p_selective, "p_oc": self.p_oc, "p_naive": self.p_naive,
            "n_intervals": len(self.region) if self.region is not None else None,
            "iterations": self.iterations,
        }


def naive_p(direction: TestDirection) -> float:
    return truncated_normal_p(direction.z_obs, direction.sd, IntervalSet.full())


def oc_p(direction: TestDirection, weights: RnnWeights, cfg: DetectorConfig) -> tuple[float, IntervalSet]:
    zoc, _ = oc_region(direction.line, direction.z_obs, weights, cfg)
    return truncated_normal_p(direction.z_obs, direction.sd, zoc), zoc


def selective_p(direction: TestDirection, tau_det, weights: RnnWeights, cfg: DetectorConfig,
                search: SearchConfig | None = None) -> tuple[float, PathResult]:
    path = compute_solution_path(direction, tau_det, weights, cfg, search)
    return truncated_normal_p(direction.z_obs, direction.sd, path.region), path


def infer_change_point(direction: TestDirection, tau_det, weights: RnnWeights, cfg: DetectorConfig,
                      methods: Sequence[str] = METHODS, search: SearchConfig | None = None) -> SiResult:
    """All requested p-values for one direction (one detected change point)."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InvalidInputError(f"unknown methods {sorted(unknown)}")
    p_sel = p_oc_val = p_nv = None
    region = explored = zoc = None
    iterations = 0
    if "selective" in methods:
        p_sel, path = selective_p(direction, tau_det, weights, cfg, search)
        region, explored, iterations, zoc = path.region, path.explored, path.iterations, path.oc_region
    if "oc" in methods:
        if zoc is None:
            zoc, _ = oc_region(direction.line, direction.z_obs, weights, cfg)
        p_oc_val = truncated_normal_p(direction.z_obs, direction.sd, zoc)
    if "naive" in methods:
        p_nv = naive_p(direction)
    tau_k = tuple(tau_det)[direction.k - 1] if direction.k else 0
    return SiResult(direction.k, tau_k, direction.z_obs, direction.sd, p_sel, p_oc_val, p_nv,
                    region, zoc, explored, iterations)


@dataclass(frozen=True)
class BoundedP:
    p_lower: float
    p_upper: float
    decided: bool
    iterations: int


def bounded_selective_p(direction: TestDirection, tau_det, weights: RnnWeights, cfg: DetectorConfig,
                        alpha: float | None = 0.05, tol: float = 0.0, search: SearchConfig | None = None,
                        history: list | None = None) -> BoundedP:
    """Bracket the selective p-value, stopping once the decision at ``alpha`` is settled.

    The sweep also stops when the bracket is narrower than ``tol`` or when
    ``search.max_iterations`` is reached; ``decided`` tells which bracket
    sides ``alpha`` falls on.  With ``alpha=None`` only the tolerance and
    the iteration cap stop the sweep.  ``history`` collects the bracket after
    every step.
    """
    best = [0.0, 1.0]

    def monitor(state: SweepState) -> bool:
        lower, upper = state.p_bounds()
        best[0] = max(best[0], lower)
        best[1] = min(best[1], upper)
        if history is not None:
            history.append(tuple(best))
        if alpha is not None and (best[1] <= alpha or best[0] > alpha):
            return True
        return best[1] - best[0] < tol

    try:
        path = compute_solution_path(direction, tau_det, weights, cfg, search, monitor)
        iterations = path.iterations
        if path.explored.first_gap(*path.bounds, (search or SearchConfig()).min_gap_sds * direction.sd) is None:
            p = truncated_normal_p(direction.z_obs, direction.sd, path.region)
            best = [p, p]
    except SearchCapExceeded as exc:
        iterations = exc.iterations
    lower, upper = best
    decided = alpha is not None and (upper <= alpha or lower > alpha)
    return BoundedP(lower, upper, decided, iterations)


def run_si(x, Sigma, weights: RnnWeights, cfg: DetectorConfig, problem: str = "mean",
           methods: Sequence[str] = METHODS, search: SearchConfig | None = None,
           detection: DetectionResult | None = None) -> list[SiResult]:
    """Detect once, then test every detected change point."""
    x = np.asarray(x, dtype=float)
    det = detection if detection is not None else detect(x, weights, cfg)
    out = []
    for k in range(1, cfg.K + 1):
        eta = make_eta(problem, det.tau_det, k, x.size)
        direction = line_params(x, eta, Sigma, k, problem)
        out.append(infer_change_point(direction, det.tau_det, weights, cfg, methods, search))
    return out
