import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from rnncpsi.affine_path import (AffineVector, PropagationCache, QuadraticPolynomial, _propagate,
                                 _propagate_numpy, anomaly_quadratics, error_quadratics,
                                 intersect_nonneg, oc_region, oc_region_reference, propagate_window,
                                 selection_event, solve_quadratic_inequality)
from rnncpsi.detector import DetectorConfig, anomaly_scores, detect, error_scores
from rnncpsi.errors import DetectionFailure, InconsistencyError, InvalidInputError
from rnncpsi.intervals import INF
from rnncpsi.rnn import make_pl_tanh, make_relu, random_weights, rnn_forward

coef = st.floats(-5, 5, allow_nan=False).map(lambda v: 0.0 if abs(v) < 1e-3 else v)


def _sat(value, relation):
    return {"<=0": value <= 0, "<0": value < 0, ">=0": value >= 0, ">0": value > 0}[relation]


def _far_from_roots(p, grid, tol=1e-6):
    vals = p(grid)
    return np.abs(vals) > tol * (1 + np.abs(grid) ** 2)


# -- quadratic inequalities --------------------------------------------------


def test_quadratic_examples():
    # r^2 - 1 <= 0 on [-1, 1]
    s = solve_quadratic_inequality(QuadraticPolynomial(1, 0, -1), "<=0", 0.0)
    assert s.intervals == [(-1.0, 1.0)]
    s = solve_quadratic_inequality(QuadraticPolynomial(1, 0, -1), ">=0", 2.0)
    assert s.intervals == [(-INF, -1.0), (1.0, INF)]
    s = solve_quadratic_inequality(QuadraticPolynomial(0, 2, -4), "<0", 0.0)
    assert s.intervals == [(-INF, 2.0)]
    s = solve_quadratic_inequality(QuadraticPolynomial(0, 0, -1), "<=0", 3.0)
    assert s.intervals == [(-INF, INF)]


def test_stable_roots_with_cancellation():
    # roots 1e-8 and 1e8: the naive formula loses the small one
    p = QuadraticPolynomial(1.0, -(1e8 + 1e-8), 1.0)
    s = solve_quadratic_inequality(p, "<=0", 1.0)
    lo, hi = s.intervals[0]
    assert lo == pytest.approx(1e-8, rel=1e-12)
    assert hi == pytest.approx(1e8, rel=1e-12)


def test_witness_must_satisfy():
    with pytest.raises(InconsistencyError):
        solve_quadratic_inequality(QuadraticPolynomial(1, 0, -1), "<=0", 5.0)
    with pytest.raises(InvalidInputError):
        solve_quadratic_inequality(QuadraticPolynomial(1, 0, -1), "==0", 0.0)


@settings(max_examples=300, deadline=None)
@given(coef, coef, coef, st.sampled_from(["<=0", ">=0", "<0", ">0"]), st.floats(-10, 10))
def test_quadratic_matches_grid(alpha, beta, gamma, relation, witness):
    p = QuadraticPolynomial(alpha, beta, gamma)
    if not _sat(p(witness), relation):
        return
    s = solve_quadratic_inequality(p, relation, witness)
    assert witness in s
    grid = np.linspace(-30, 30, 2001)
    for r in grid[_far_from_roots(p, grid)]:
        assert (r in s) == _sat(p(r), relation)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(coef, coef, coef), min_size=1, max_size=5), st.floats(-5, 5))
def test_intersection_matches_grid(polys, witness):
    a, b, c = (np.array(v) for v in zip(*polys))
    at_w = (a * witness + b) * witness + c
    assume(np.all(np.abs(at_w) > 1e-6))
    # flip polynomials so that the witness satisfies every one of them
    sign = np.where(at_w >= 0, 1.0, -1.0)
    a, b, c = sign * a, sign * b, sign * c
    region = intersect_nonneg(a, b, c, witness, -20.0, 20.0)
    assert witness in region
    grid = np.linspace(-20, 20, 2001)
    vals = (a[None, :] * grid[:, None] + b[None, :]) * grid[:, None] + c[None, :]
    clear = np.all(np.abs(vals) > 1e-6, axis=1)
    for r, v in zip(grid[clear], vals[clear]):
        assert (r in region) == bool(np.all(v > 0))


# -- propagation -------------------------------------------------------------


@pytest.mark.parametrize("act", [make_relu(), make_pl_tanh(4.0, 32)])
def test_propagate_window_is_exact_inside_region(act):
    rng = np.random.default_rng(2)
    w = random_weights(4, rng, activation=act, scale=1.0)
    win = AffineVector(rng.normal(size=6), rng.normal(size=6))
    z = 0.3
    (pa, pb), region, trace = propagate_window(win, w, z)
    lo, hi = region.bounds()
    assert lo <= z <= hi
    for r in np.linspace(max(lo, z - 5), min(hi, z + 5), 25):
        pred, tr = rnn_forward(w, win(r))
        assert abs(pred - (pa + pb * r)) <= 1e-9 * (1 + abs(pred))
        if lo < r < hi:
            np.testing.assert_array_equal(tr, trace)
    # just outside a finite end the pieces change
    for end, step in ((lo, -1), (hi, 1)):
        if np.isfinite(end):
            _, tr = rnn_forward(w, win(end + step * 1e-7 * (1 + abs(end))))
            assert not np.array_equal(tr, trace)


@pytest.mark.parametrize("seed", range(5))
def test_compiled_propagation_equals_numpy(seed):
    rng = np.random.default_rng(seed)
    w = random_weights(5, rng, activation=make_pl_tanh(3.0, 16), scale=1.2)
    win_a = rng.normal(size=(7, 6))
    win_b = rng.normal(size=(7, 6))
    z = float(rng.normal())
    fast = _propagate(win_a, win_b, w, 4, z)
    ref = _propagate_numpy(win_a, win_b, w, 4, z)
    np.testing.assert_array_equal(fast.trace, ref.trace)
    np.testing.assert_allclose(fast.pred_a, ref.pred_a, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(fast.pred_b, ref.pred_b, rtol=1e-13, atol=1e-13)
    assert fast.lo == pytest.approx(ref.lo, rel=1e-12, abs=1e-12)
    assert fast.hi == pytest.approx(ref.hi, rel=1e-12, abs=1e-12)


def _instance(seed, n=30, d_h=4, l=3, m=3, w=3, K=1, act=None):
    rng = np.random.default_rng(seed)
    weights = random_weights(d_h, rng, activation=act or make_relu(), scale=0.8)
    x = rng.normal(size=n)
    direction = rng.normal(size=n)
    line = AffineVector(x, direction / np.linalg.norm(direction))
    return weights, DetectorConfig(K=K, l=l, m=m, w=w), line, rng


@pytest.mark.parametrize("seed", range(4))
def test_error_quadratics_match_detector(seed):
    weights, cfg, line, rng = _instance(seed, n=25, l=4, m=3)
    for z in rng.normal(0, 2, 5):
        path = error_quadratics(line, weights, cfg, z)
        lo, hi = path.act_region.bounds()
        for r in np.linspace(max(lo, z - 1), min(hi, z + 1), 9):
            e = error_scores(line(r), weights, cfg)
            q = path.scores(r)
            assert np.all(np.abs(q - e) <= 1e-8 * (1 + np.abs(e)))
            s = anomaly_quadratics(path.scores, cfg.w)(r)
            np.testing.assert_allclose(s, anomaly_scores(e, cfg.w), rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_compiled_region_equals_reference(seed):
    weights, cfg, line, rng = _instance(seed, n=28, K=2, act=make_pl_tanh(3.0, 8) if seed % 2 else None)
    for z in rng.normal(0, 3, 6):
        fast, ev_f = oc_region(line, z, weights, cfg, -12.0, 12.0)
        ref, ev_r = oc_region_reference(line, z, weights, cfg, -12.0, 12.0)
        assert ev_f.same_as(ev_r)
        assert len(fast) == len(ref)
        for (a1, b1), (a2, b2) in zip(fast, ref):
            assert a1 == pytest.approx(a2, rel=1e-9, abs=1e-9)
            assert b1 == pytest.approx(b2, rel=1e-9, abs=1e-9)


def test_cached_sweep_equals_fresh_computation():
    weights, cfg, line, rng = _instance(3, n=30, K=2)
    cache = PropagationCache(line, weights, cfg)
    for z in np.sort(rng.uniform(-4, 4, 40)):
        r1, e1 = oc_region(line, z, weights, cfg, cache=cache)
        r2, e2 = oc_region(line, z, weights, cfg)
        assert r1 == r2 and e1.same_as(e2)
    assert cache.recomputed < 40 * 23


def test_cache_is_bound_to_its_line():
    weights, cfg, line, _ = _instance(0)
    cache = PropagationCache(line, weights, cfg)
    other = AffineVector(line.a + 1, line.b)
    with pytest.raises(InvalidInputError):
        oc_region(other, 0.0, weights, cfg, cache=cache)


@pytest.mark.parametrize("seed", range(5))
def test_oc_region_boundaries(seed):
    """Inside every component the event is unchanged; just past a free end it changes."""
    weights, cfg, line, rng = _instance(seed, n=30, K=1)
    z = float(rng.normal())
    region, event = oc_region(line, z, weights, cfg)
    assert z in region
    for lo, hi in region:
        inner = [0.5 * (lo + hi)] if np.isfinite(lo + hi) else [z]
        for r in inner:
            assert selection_event(line(r), weights, cfg).same_as(event)
        for end, step in ((lo, -1), (hi, 1)):
            if not np.isfinite(end):
                continue
            r = end + step * 1e-7 * (1 + abs(end))
            if r in region:
                continue
            try:
                ev = selection_event(line(r), weights, cfg)
            except Exception:
                continue  # a tie right at the boundary is a change too
            assert not ev.same_as(event)


@pytest.mark.parametrize("seed", range(10))
def test_selection_event_matches_detect(seed):
    rng = np.random.default_rng(100 + seed)
    weights = random_weights(4, rng)
    cfg = DetectorConfig(K=2, l=4, m=3, w=3)
    x = rng.normal(size=30)
    ev = selection_event(x, weights, cfg)
    try:
        assert ev.detection == detect(x, weights, cfg).tau_det
    except DetectionFailure:
        assert ev.detection is None


def test_too_few_maxima_gives_no_detection():
    weights, cfg, _, _ = _instance(0)
    flat = AffineVector(np.ones(30), np.zeros(30))
    w0 = random_weights(4, np.random.default_rng(0), activation=make_relu(), scale=0.0)
    region, ev = oc_region(flat, 0.0, w0, DetectorConfig(K=1, l=3, m=3, w=3))
    assert ev.detection is None
    assert region.intervals == [(-INF, INF)]
