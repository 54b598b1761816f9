"""Run the detector symbolically along the data line ``x(r) = a + b r``.

With every activation pinned to the linear piece it occupies at a witness
point ``z``, each RNN prediction is affine in ``r``, each error score is a
quadratic in ``r``, and so is each (smoothed) anomaly score.  The region of
the line on which the detector's whole computation path is unchanged is then
an intersection of linear and quadratic inequalities, computed here as an
:class:`~rnncpsi.intervals.IntervalSet`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import DetectorConfig, moving_sum
from .errors import DegenerateTieError, InconsistencyError, InvalidInputError, NumericError
from .intervals import INF, IntervalSet
from ._kernels import SIGN_TIE, SORT_TIE, WITNESS_VIOLATION, propagate_positions, region_kernel
from .rnn import RnnWeights

DEGENERATE_COEF = 1e-12
TIE_TOL = 1e-12
WITNESS_TOL = 1e-9

RELATIONS = ("<=0", ">=0", "<0", ">0")


@dataclass(frozen=True)
class AffineVector:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape:
            raise InvalidInputError("a and b must have equal shapes")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericError("affine vector has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __call__(self, r: float) -> np.ndarray:
        return self.a + self.b * r

    def __len__(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class QuadraticPolynomial:
    alpha: float
    beta: float
    gamma: float

    def __call__(self, r):
        return (self.alpha * r + self.beta) * r + self.gamma


@dataclass(frozen=True)
class QuadraticScores:
    """Coefficient arrays of one quadratic per sequence position."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __call__(self, r: float) -> np.ndarray:
        return (self.alpha * r + self.beta) * r + self.gamma

    def __getitem__(self, i: int) -> QuadraticPolynomial:
        return QuadraticPolynomial(float(self.alpha[i]), float(self.beta[i]), float(self.gamma[i]))

    def __len__(self) -> int:
        return self.alpha.size


@dataclass(frozen=True, eq=False)
class SelectionEvent:
    """Everything the detector decided at one witness point.

    ``activation`` has shape ``(positions, m, l, d_h)``.  ``signs`` holds the
    sign of ``s[i+1] - s[i]`` for ``i = 1..n-1``; differences that vanish
    identically (both scores structurally zero) are recorded as 0.
    ``sort_perm[k]`` is the rank of ``maxima[k]`` (1 = largest).
    ``detection`` is None when there are fewer than K maxima.
    """

    activation: np.ndarray
    signs: np.ndarray
    sort_perm: tuple[int, ...]
    maxima: tuple[int, ...]
    detection: tuple[int, ...] | None

    def same_as(self, other: "SelectionEvent") -> bool:
        return (np.array_equal(self.activation, other.activation)
                and np.array_equal(self.signs, other.signs)
                and self.sort_perm == other.sort_perm
                and self.maxima == other.maxima
                and self.detection == other.detection)


# ---------------------------------------------------------------------------
# quadratic inequalities


def _stable_roots(alpha: float, beta: float, gamma: float) -> tuple[float, ...]:
    disc = beta * beta - 4.0 * alpha * gamma
    if disc < 0:
        return ()
    sq = math.sqrt(disc)
    q = -0.5 * (beta + math.copysign(sq, beta))
    if q == 0.0:
        return (0.0, 0.0)
    r1, r2 = q / alpha, gamma / q
    return (min(r1, r2), max(r1, r2))


def _poly_scale(p: QuadraticPolynomial, r: float) -> float:
    return 1.0 + abs(p.alpha) * r * r + abs(p.beta * r) + abs(p.gamma)


def solve_quadratic_inequality(p: QuadraticPolynomial, relation: str, witness: float) -> IntervalSet:
    """Solution set of ``p(r) <= 0`` (or the other relations) as closed intervals.

    Strict relations are solved as their closures.  ``witness`` must satisfy
    the inequality; it is always contained in the returned set.
    """
    if relation not in RELATIONS:
        raise InvalidInputError(f"relation must be one of {RELATIONS}")
    if relation in (">=0", ">0"):
        p = QuadraticPolynomial(-p.alpha, -p.beta, -p.gamma)
    value = p(witness)
    if value > WITNESS_TOL * _poly_scale(p, witness):
        raise InconsistencyError(
            f"witness {witness!r} violates {relation} (polynomial value {value:.3g})")
    alpha, beta, gamma = p.alpha, p.beta, p.gamma
    if abs(alpha) < DEGENERATE_COEF:
        if abs(beta) < DEGENERATE_COEF:
            out = IntervalSet.full()
        else:
            root = -gamma / beta
            out = IntervalSet.interval(-INF, root) if beta > 0 else IntervalSet.interval(root, INF)
    else:
        roots = _stable_roots(alpha, beta, gamma)
        if not roots:
            out = IntervalSet.empty() if alpha > 0 else IntervalSet.full()
        elif alpha > 0:
            out = IntervalSet.interval(*roots)
        else:
            out = IntervalSet([(-INF, roots[0]), (roots[1], INF)])
    return _ensure_witness(out, witness)


def _ensure_witness(region: IntervalSet, witness: float) -> IntervalSet:
    """Stretch the nearest interval to cover a witness lost to root rounding."""
    if region.contains(witness):
        return region
    ivs = region.intervals
    if not ivs:
        return IntervalSet.interval(witness, witness)
    nearest = min(range(len(ivs)), key=lambda k: min(abs(ivs[k][0] - witness), abs(ivs[k][1] - witness)))
    lo, hi = ivs[nearest]
    ivs[nearest] = (min(lo, witness), max(hi, witness))
    return IntervalSet(ivs)


def _all_roots(alpha: np.ndarray, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Real roots of every polynomial in the batch, flattened (degenerate ones treated as linear)."""
    quad = np.abs(alpha) >= DEGENERATE_COEF
    lin = ~quad & (np.abs(beta) >= DEGENERATE_COEF)
    roots = [-gamma[lin] / beta[lin]]
    if np.any(quad):
        a, b, c = alpha[quad], beta[quad], gamma[quad]
        disc = b * b - 4.0 * a * c
        ok = disc >= 0
        a, b, c, disc = a[ok], b[ok], c[ok], disc[ok]
        q = -0.5 * (b + np.copysign(np.sqrt(disc), b))
        nz = q != 0
        roots.append(q[nz] / a[nz])
        roots.append(c[nz] / q[nz])
        roots.append(np.zeros(int(np.sum(~nz))))
    return np.concatenate(roots)


def _eval_batch(alpha, beta, gamma, r):
    """Evaluate every polynomial (columns) at every point in ``r`` (rows)."""
    r = np.asarray(r, dtype=float)[:, None]
    return (alpha[None, :] * r + beta[None, :]) * r + gamma[None, :]


def intersect_nonneg(alpha: np.ndarray, beta: np.ndarray, gamma: np.ndarray,
                     witness: float, lo: float = -INF, hi: float = INF) -> IntervalSet:
    """``{r in [lo, hi] : q_k(r) >= 0 for every k}`` for a batch of quadratics.

    All roots inside ``(lo, hi)`` split the range into cells on which every
    polynomial keeps its sign; each cell is classified at its midpoint.  The
    cell holding ``witness`` is checked at the witness itself.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if alpha.size == 0:
        return IntervalSet.interval(lo, hi)
    at_w = (alpha * witness + beta) * witness + gamma
    scale = 1.0 + np.abs(alpha) * witness ** 2 + np.abs(beta * witness) + np.abs(gamma)
    if np.any(at_w < -WITNESS_TOL * scale):
        k = int(np.argmin(at_w / scale))
        raise InconsistencyError(f"witness {witness!r} violates constraint {k} (value {at_w[k]:.3g})")
    roots = _all_roots(alpha, beta, gamma)
    roots = roots[np.isfinite(roots) & (roots > lo) & (roots < hi)]
    cuts = np.unique(np.concatenate(([lo], roots, [hi])))
    if cuts.size == 1:
        cuts = np.array([lo, hi])
    left, right = cuts[:-1], cuts[1:]
    mids = _cell_points(left, right)
    ok = np.all(_eval_batch(alpha, beta, gamma, mids) >= 0, axis=1)
    k = int(np.searchsorted(right, witness, side="left"))
    k = min(k, ok.size - 1)
    ok[k] = True
    out = IntervalSet(zip(left[ok], right[ok]))
    return _ensure_witness(out, witness)


def _cell_points(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    mids = 0.5 * (left + right)
    lo_inf = ~np.isfinite(left)
    hi_inf = ~np.isfinite(right)
    both = lo_inf & hi_inf
    mids[both] = 0.0
    only_lo = lo_inf & ~hi_inf
    mids[only_lo] = right[only_lo] - 1.0 - np.abs(right[only_lo])
    only_hi = hi_inf & ~lo_inf
    mids[only_hi] = left[only_hi] + 1.0 + np.abs(left[only_hi])
    return mids


# ---------------------------------------------------------------------------
# affine propagation through the RNN


@dataclass(frozen=True)
class _Propagation:
    pred_a: np.ndarray          # (P, m)
    pred_b: np.ndarray          # (P, m)
    lo: float
    hi: float
    trace: np.ndarray           # (P, m, l, d_h)


class PropagationCache:
    """Per-position rollouts along one data line, reused across witnesses.

    Each scored position keeps its own activation interval; moving the
    witness only recomputes the positions whose interval no longer holds it
    strictly inside.  Results are identical to a full recomputation because a
    position's affine rollout depends on the witness only through its pieces.
    """

    def __init__(self, line: AffineVector, weights: RnnWeights, cfg: DetectorConfig):
        n = len(line)
        cfg.check_length(n)
        self.line, self.weights, self.cfg = line, weights, cfg
        pos = cfg.positions(n)
        win_idx = (pos[:, None] - cfg.l) + np.arange(cfg.l)[None, :]
        self.tgt_idx = pos[:, None] + np.arange(cfg.m)[None, :]
        self.win_a = np.ascontiguousarray(line.a[win_idx])
        self.win_b = np.ascontiguousarray(line.b[win_idx])
        P = pos.size
        self.pred_a = np.empty((P, cfg.m))
        self.pred_b = np.empty((P, cfg.m))
        self.lo_p = np.full(P, INF)
        self.hi_p = np.full(P, -INF)     # empty intervals: everything is stale
        self.trace = np.empty((P, cfg.m, cfg.l, weights.d_h), dtype=np.int32)
        self.recomputed = 0

    def matches(self, line: AffineVector, weights: RnnWeights, cfg: DetectorConfig) -> bool:
        return self.line is line and self.weights is weights and self.cfg == cfg

    def at(self, z: float) -> _Propagation:
        margin = WITNESS_TOL * (1.0 + abs(z))
        todo = ~((self.lo_p < z - margin) & (z + margin < self.hi_p))
        if todo.any():
            act = self.weights.activation
            w = self.weights
            propagate_positions(self.win_a, self.win_b, w.W_h, w.W_x, w.W_b, w.W_p,
                                act.knots, act.slopes, act.intercepts, int(self.cfg.m), float(z), todo,
                                self.pred_a, self.pred_b, self.lo_p, self.hi_p, self.trace)
            self.recomputed += int(todo.sum())
        return _finish(self.pred_a, self.pred_b, float(self.lo_p.max()), float(self.hi_p.min()),
                       self.trace, z)


def _propagate(win_a: np.ndarray, win_b: np.ndarray, weights: RnnWeights, m: int,
               z: float) -> _Propagation:
    """Roll ``m`` predictions forward for a batch of affine windows, pinning pieces at ``z``."""
    act = weights.activation
    win_a = np.ascontiguousarray(win_a, dtype=float)
    win_b = np.ascontiguousarray(win_b, dtype=float)
    P, l = win_a.shape
    pred_a, pred_b = np.empty((P, m)), np.empty((P, m))
    lo_p, hi_p = np.empty(P), np.empty(P)
    trace = np.empty((P, m, l, weights.d_h), dtype=np.int32)
    propagate_positions(win_a, win_b, weights.W_h, weights.W_x, weights.W_b, weights.W_p,
                        act.knots, act.slopes, act.intercepts, int(m), float(z), np.ones(P, dtype=bool),
                        pred_a, pred_b, lo_p, hi_p, trace)
    return _finish(pred_a, pred_b, float(lo_p.max(initial=-INF)), float(hi_p.min(initial=INF)), trace, z)


def _propagate_numpy(win_a: np.ndarray, win_b: np.ndarray, weights: RnnWeights, m: int,
                     z: float) -> _Propagation:
    """Vectorised reference version of :func:`_propagate` (no compilation)."""
    act = weights.activation
    lowers = np.concatenate(([-INF], act.knots))
    uppers = np.concatenate((act.knots, [INF]))
    win_a = np.array(win_a, dtype=float)
    win_b = np.array(win_b, dtype=float)
    P, l = win_a.shape
    Wh_T = weights.W_h.T
    trace = np.empty((P, m, l, weights.d_h), dtype=np.int32)
    pred_a = np.empty((P, m))
    pred_b = np.empty((P, m))
    lo, hi = -INF, INF
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for j in range(m):
            ha = np.zeros((P, weights.d_h))
            hb = np.zeros((P, weights.d_h))
            for t in range(l):
                pa = ha @ Wh_T + win_a[:, t, None] * weights.W_x + weights.W_b
                pb = hb @ Wh_T + win_b[:, t, None] * weights.W_x
                piece = act.piece_index(pa + pb * z)
                trace[:, j, t] = piece
                moving = pb != 0.0
                if np.any(moving):
                    s = pb[moving]
                    c1 = (lowers[piece[moving]] - pa[moving]) / s
                    c2 = (uppers[piece[moving]] - pa[moving]) / s
                    lower = np.where(s > 0, c1, c2)
                    upper = np.where(s > 0, c2, c1)
                    lower = lower[~np.isnan(lower)]
                    upper = upper[~np.isnan(upper)]
                    if lower.size:
                        lo = max(lo, float(lower.max()))
                    if upper.size:
                        hi = min(hi, float(upper.min()))
                slope = act.slopes[piece]
                ha = slope * pa + act.intercepts[piece]
                hb = slope * pb
            pa_out = ha @ weights.W_p
            pb_out = hb @ weights.W_p
            pred_a[:, j] = pa_out
            pred_b[:, j] = pb_out
            win_a = np.concatenate((win_a[:, 1:], pa_out[:, None]), axis=1)
            win_b = np.concatenate((win_b[:, 1:], pb_out[:, None]), axis=1)
    return _finish(pred_a, pred_b, lo, hi, trace, z)


def _finish(pred_a, pred_b, lo, hi, trace, z) -> _Propagation:
    if not (np.all(np.isfinite(pred_a)) and np.all(np.isfinite(pred_b))):
        raise NumericError("affine propagation produced non-finite values")
    if lo > z + WITNESS_TOL * (1 + abs(z)) or hi < z - WITNESS_TOL * (1 + abs(z)):
        raise InconsistencyError(f"witness {z!r} outside its own activation region [{lo}, {hi}]")
    return _Propagation(pred_a, pred_b, min(lo, z), max(hi, z), trace)


def propagate_window(window: AffineVector, weights: RnnWeights, z: float):
    """One RNN pass over an affine window.

    Returns ``(pred, constraints, trace)`` where ``pred`` is the ``(a, b)``
    pair of the prediction, ``constraints`` the interval of ``r`` on which
    every activation stays on its witness piece, and ``trace`` the
    ``(l, d_h)`` piece grid at ``z``.
    """
    prop = _propagate(window.a[None, :], window.b[None, :], weights, 1, z)
    pred = (float(prop.pred_a[0, 0]), float(prop.pred_b[0, 0]))
    return pred, IntervalSet.interval(prop.lo, prop.hi), prop.trace[0, 0]


@dataclass(frozen=True, eq=False)
class ErrorPath:
    scores: QuadraticScores
    act_region: IntervalSet
    trace: np.ndarray
    pred: AffineVector


def _error_path(line: AffineVector, cfg: DetectorConfig, prop: _Propagation, tgt_idx: np.ndarray) -> ErrorPath:
    a, b = line.a, line.b
    n = a.size
    da = prop.pred_a - a[tgt_idx]
    db = prop.pred_b - b[tgt_idx]
    alpha = np.zeros(n)
    beta = np.zeros(n)
    gamma = np.zeros(n)
    sl = slice(cfg.l - 1, n - cfg.m)
    alpha[sl] = np.sum(db * db, axis=1) / cfg.m
    beta[sl] = 2.0 * np.sum(db * da, axis=1) / cfg.m
    gamma[sl] = np.sum(da * da, axis=1) / cfg.m
    return ErrorPath(QuadraticScores(alpha, beta, gamma), IntervalSet.interval(prop.lo, prop.hi),
                     prop.trace, AffineVector(prop.pred_a.ravel(), prop.pred_b.ravel()))


def error_quadratics(line: AffineVector, weights: RnnWeights, cfg: DetectorConfig, z: float,
                     cache: PropagationCache | None = None, use_numpy: bool = False) -> ErrorPath:
    """Error scores as quadratics in ``r``, valid on the returned activation region."""
    if use_numpy:
        n = len(line)
        cfg.check_length(n)
        pos = cfg.positions(n)
        win_idx = (pos[:, None] - cfg.l) + np.arange(cfg.l)[None, :]
        tgt_idx = pos[:, None] + np.arange(cfg.m)[None, :]
        prop = _propagate_numpy(line.a[win_idx], line.b[win_idx], weights, cfg.m, z)
        return _error_path(line, cfg, prop, tgt_idx)
    if cache is None:
        cache = PropagationCache(line, weights, cfg)
    elif not cache.matches(line, weights, cfg):
        raise InvalidInputError("propagation cache belongs to a different line, net or config")
    prop = cache.at(z)
    return _error_path(line, cfg, prop, cache.tgt_idx)


def anomaly_quadratics(q: QuadraticScores, w: int) -> QuadraticScores:
    if w < 1 or w % 2 == 0:
        raise InvalidInputError(f"w must be odd, got {w}")
    sm = moving_sum(np.stack((q.alpha, q.beta, q.gamma)), w) / w
    return QuadraticScores(sm[0], sm[1], sm[2])


# ---------------------------------------------------------------------------
# sign and sort events


def _sign_constraints(s_q: QuadraticScores, z: float):
    """Oriented difference polynomials (``sign * (s[i+1] - s[i]) >= 0``) and the sign vector."""
    da = np.diff(s_q.alpha)
    db = np.diff(s_q.beta)
    dc = np.diff(s_q.gamma)
    # both neighbours structurally zero: the difference vanishes for every r
    live = (da != 0) | (db != 0) | (dc != 0)
    vals = (da * z + db) * z + dc
    signs = np.zeros(da.size, dtype=np.int8)
    if np.any(live & (np.abs(vals) < TIE_TOL)):
        i = int(np.flatnonzero(live & (np.abs(vals) < TIE_TOL))[0]) + 1
        raise DegenerateTieError(f"anomaly scores at positions {i} and {i + 1} tie at r={z!r}")
    signs[live] = np.where(vals[live] > 0, 1, -1)
    sg = signs[live].astype(float)
    return (sg * da[live], sg * db[live], sg * dc[live]), signs


def _maxima_from_signs(signs: np.ndarray) -> tuple[int, ...]:
    idx = np.flatnonzero((signs[1:] == -1) & (signs[:-1] == 1)) + 2
    return tuple(int(i) for i in idx)


def _sort_constraints(s_q: QuadraticScores, maxima: tuple[int, ...], z: float):
    """Chain ``s[rank k] - s[rank k+1] >= 0`` over the ranking of maxima at ``z``."""
    if len(maxima) == 0:
        return (np.empty(0), np.empty(0), np.empty(0)), ()
    idx = np.asarray(maxima) - 1
    vals = s_q(z)[idx]
    order = np.argsort(-vals, kind="stable")
    ranked = vals[order]
    gaps = ranked[:-1] - ranked[1:]
    if np.any(gaps < TIE_TOL):
        k = int(np.flatnonzero(gaps < TIE_TOL)[0])
        raise DegenerateTieError(
            f"local maxima at {maxima[order[k]]} and {maxima[order[k + 1]]} tie at r={z!r}")
    perm = np.empty(len(maxima), dtype=int)
    perm[order] = np.arange(1, len(maxima) + 1)
    hi_i, lo_i = idx[order[:-1]], idx[order[1:]]
    coeffs = (s_q.alpha[hi_i] - s_q.alpha[lo_i], s_q.beta[hi_i] - s_q.beta[lo_i],
              s_q.gamma[hi_i] - s_q.gamma[lo_i])
    return coeffs, tuple(int(p) for p in perm)


def sign_region(s_q: QuadraticScores, z: float) -> tuple[IntervalSet, np.ndarray]:
    (a, b, c), signs = _sign_constraints(s_q, z)
    return intersect_nonneg(a, b, c, z), signs


def sort_region(s_q: QuadraticScores, maxima: tuple[int, ...], z: float) -> tuple[IntervalSet, tuple[int, ...]]:
    (a, b, c), perm = _sort_constraints(s_q, tuple(maxima), z)
    return intersect_nonneg(a, b, c, z), perm


def detection_from_ranking(maxima: tuple[int, ...], perm: tuple[int, ...], K: int) -> tuple[int, ...] | None:
    if len(maxima) < K:
        return None
    return tuple(sorted(m for m, p in zip(maxima, perm) if p <= K))


def oc_region(line: AffineVector, z: float, weights: RnnWeights, cfg: DetectorConfig,
              lo: float = -INF, hi: float = INF,
              cache: PropagationCache | None = None) -> tuple[IntervalSet, SelectionEvent]:
    """Over-conditioned region around witness ``z`` and the event observed there.

    The region is ``act ∩ sign ∩ sort``; passing ``lo``/``hi`` restricts it to
    a search window, which only saves work.  When fewer than K maxima exist
    at ``z`` the region is still returned, with ``event.detection = None``.
    Sweeps along one line should pass a shared :class:`PropagationCache`.
    """
    path = error_quadratics(line, weights, cfg, z, cache)
    act_lo, act_hi = path.act_region.bounds()
    q = path.scores
    status, info, signs, maxima, perm, left, right, ok = region_kernel(
        q.alpha, q.beta, q.gamma, int(cfg.w), float(z), max(lo, act_lo), min(hi, act_hi),
        TIE_TOL, WITNESS_TOL, DEGENERATE_COEF)
    if status == SIGN_TIE:
        raise DegenerateTieError(f"anomaly scores at positions {info} and {info + 1} tie at r={z!r}")
    if status == SORT_TIE:
        raise DegenerateTieError(f"two local maxima tie in score at r={z!r}")
    if status == WITNESS_VIOLATION:
        raise InconsistencyError(f"witness {z!r} violates constraint {info}")
    region = _ensure_witness(IntervalSet(zip(left[ok].tolist(), right[ok].tolist())), z)
    maxima = tuple(maxima.tolist())
    perm = tuple(perm.tolist())
    event = SelectionEvent(path.trace.copy(), signs, perm, maxima, detection_from_ranking(maxima, perm, cfg.K))
    return region, event


def oc_region_reference(line: AffineVector, z: float, weights: RnnWeights, cfg: DetectorConfig,
                        lo: float = -INF, hi: float = INF) -> tuple[IntervalSet, SelectionEvent]:
    """Uncompiled version of :func:`oc_region`, kept as a cross-check."""
    path = error_quadratics(line, weights, cfg, z, use_numpy=True)
    s_q = anomaly_quadratics(path.scores, cfg.w)
    (sa, sb, sc), signs = _sign_constraints(s_q, z)
    maxima = _maxima_from_signs(signs)
    (ta, tb, tc), perm = _sort_constraints(s_q, maxima, z)
    act_lo, act_hi = path.act_region.bounds()
    region = intersect_nonneg(np.concatenate((sa, ta)), np.concatenate((sb, tb)),
                              np.concatenate((sc, tc)), z,
                              max(lo, act_lo), min(hi, act_hi))
    event = SelectionEvent(path.trace, signs, perm, maxima, detection_from_ranking(maxima, perm, cfg.K))
    return region, event


def selection_event(x: np.ndarray, weights: RnnWeights, cfg: DetectorConfig) -> SelectionEvent:
    """Event recomputed from scratch at a concrete sequence (``b = 0``)."""
    x = np.asarray(x, dtype=float)
    _, ev = oc_region(AffineVector(x, np.zeros_like(x)), 0.0, weights, cfg)
    return ev
