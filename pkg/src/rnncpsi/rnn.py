"""Elman RNN with a piecewise-linear activation, BPTT trainer and weight I/O.

Everything here works on plain numpy arrays.  The batched forward pass is the
workhorse for detection; :func:`rnn_forward` is the single-window version
that also reports which linear piece every pre-activation landed in.
"""

from __future__ import annotations

import json
from importlib import resources
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, RangeError, TrainingError, WeightFileError

FORMAT_VERSION = 1
_CONTINUITY_TOL = 1e-12


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PiecewiseLinearActivation:
    """Continuous piecewise-linear scalar function.

    ``knots`` holds J+1 strictly increasing breakpoints; ``slopes`` and
    ``intercepts`` hold J+2 pieces, piece 0 covering ``(-inf, knots[0]]`` and
    the last piece ``[knots[-1], inf)``.  A value sitting exactly on a knot
    belongs to the lower-index piece.
    """

    knots: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        knots = _frozen(self.knots)
        slopes = _frozen(self.slopes)
        intercepts = _frozen(self.intercepts)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "intercepts", intercepts)
        if knots.ndim != 1 or knots.size < 1:
            raise InvalidInputError("activation needs at least one knot")
        if slopes.shape != (knots.size + 1,) or intercepts.shape != (knots.size + 1,):
            raise InvalidInputError("activation needs len(knots) + 1 pieces")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(slopes))
                and np.all(np.isfinite(intercepts))):
            raise InvalidInputError("activation table has non-finite entries")
        if np.any(np.diff(knots) <= 0):
            raise InvalidInputError("activation knots must be strictly increasing")
        left = slopes[:-1] * knots + intercepts[:-1]
        right = slopes[1:] * knots + intercepts[1:]
        gap = np.max(np.abs(left - right))
        if gap > _CONTINUITY_TOL * max(1.0, float(np.max(np.abs(left)))):
            raise InvalidInputError(f"activation is discontinuous at a knot (gap {gap:.3g})")

    @property
    def n_pieces(self) -> int:
        return self.slopes.size

    def piece_index(self, v):
        return np.searchsorted(self.knots, v, side="left")

    def lower_bounds(self, piece):
        """Left end of each piece (``-inf`` for piece 0)."""
        padded = np.concatenate(([-np.inf], self.knots))
        return padded[piece]

    def upper_bounds(self, piece):
        padded = np.concatenate((self.knots, [np.inf]))
        return padded[piece]

    def __call__(self, v):
        p = self.piece_index(v)
        return self.slopes[p] * v + self.intercepts[p]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "knots": self.knots.tolist(),
            "slopes": self.slopes.tolist(),
            "intercepts": self.intercepts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLinearActivation":
        return cls(np.asarray(d["knots"], float), np.asarray(d["slopes"], float),
                   np.asarray(d["intercepts"], float), name=str(d.get("name", "custom")))

    def same_table(self, other: "PiecewiseLinearActivation") -> bool:
        return (np.array_equal(self.knots, other.knots)
                and np.array_equal(self.slopes, other.slopes)
                and np.array_equal(self.intercepts, other.intercepts))


def activation_eval(act: PiecewiseLinearActivation, v: float) -> tuple[float, int]:
    """Evaluate ``act`` at a scalar and return ``(value, piece_index)``."""
    v = float(v)
    if not math.isfinite(v):
        raise InvalidInputError(f"activation input must be finite, got {v}")
    p = int(act.piece_index(v))
    return float(act.slopes[p] * v + act.intercepts[p]), p


def make_relu() -> PiecewiseLinearActivation:
    return PiecewiseLinearActivation([0.0], [0.0, 1.0], [0.0, 0.0], name="relu")


def make_pl_tanh(half_range: float = 4.0, segments: int = 512) -> PiecewiseLinearActivation:
    """Interpolate tanh on a uniform grid over ``[-half_range, half_range]``.

    The two unbounded end pieces are flat at ``-tanh(half_range)`` and
    ``tanh(half_range)``, so the table is monotone and bounded.
    """
    if not half_range > 0:
        raise InvalidInputError("half_range must be positive")
    if int(segments) != segments or segments < 2:
        raise InvalidInputError("segments must be an integer >= 2")
    segments = int(segments)
    if segments % 2 == 0:
        # mirror the positive half so the grid is exactly symmetric
        pos = np.linspace(0.0, half_range, segments // 2 + 1)
        knots = np.concatenate((-pos[:0:-1], pos))
    else:
        knots = np.linspace(-half_range, half_range, segments + 1)
    vals = np.tanh(knots)
    inner_slopes = np.diff(vals) / np.diff(knots)
    inner_icpt = vals[:-1] - inner_slopes * knots[:-1]
    slopes = np.concatenate(([0.0], inner_slopes, [0.0]))
    intercepts = np.concatenate(([vals[0]], inner_icpt, [vals[-1]]))
    return PiecewiseLinearActivation(knots, slopes, intercepts,
                                     name=f"pl_tanh({half_range:g},{segments})")


@dataclass(frozen=True, eq=False)
class RnnWeights:
    """Parameters of ``h_t = f(W_h h_{t-1} + W_x x_t + W_b)``, ``pred = W_p h_l``.

    ``window`` is the input length the net was trained for; detection may
    override it through its own config.
    """

    W_h: np.ndarray
    W_x: np.ndarray
    W_b: np.ndarray
    W_p: np.ndarray
    activation: PiecewiseLinearActivation
    window: int | None = None
    d_h: int = field(init=False)

    def __post_init__(self):
        W_h = _frozen(self.W_h)
        W_x = _frozen(np.ravel(self.W_x))
        W_b = _frozen(np.ravel(self.W_b))
        W_p = _frozen(np.ravel(self.W_p))
        d_h = W_x.size
        for name, arr, shape in (("W_h", W_h, (d_h, d_h)), ("W_x", W_x, (d_h,)),
                                 ("W_b", W_b, (d_h,)), ("W_p", W_p, (d_h,))):
            if arr.shape != shape:
                raise WeightFileError(f"{name} has shape {arr.shape}, expected {shape}", field=name)
            if not np.all(np.isfinite(arr)):
                raise WeightFileError(f"{name} has non-finite entries", field=name)
        if d_h < 1:
            raise WeightFileError("hidden dimension must be positive", field="d_h")
        object.__setattr__(self, "W_h", W_h)
        object.__setattr__(self, "W_x", W_x)
        object.__setattr__(self, "W_b", W_b)
        object.__setattr__(self, "W_p", W_p)
        object.__setattr__(self, "d_h", int(d_h))

    def equals(self, other: "RnnWeights") -> bool:
        return (self.d_h == other.d_h and self.window == other.window
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("W_h", "W_x", "W_b", "W_p"))
                and self.activation.same_table(other.activation))


def random_weights(d_h: int, rng: np.random.Generator, activation=None, scale: float = 0.5,
                   window: int | None = None) -> RnnWeights:
    """Gaussian weights; handy for tests and as trainer initialisation."""
    act = activation if activation is not None else make_pl_tanh()
    return RnnWeights(
        W_h=rng.normal(0.0, scale / np.sqrt(d_h), (d_h, d_h)),
        W_x=rng.normal(0.0, scale, d_h),
        W_b=rng.normal(0.0, 0.1 * scale, d_h),
        W_p=rng.normal(0.0, scale / np.sqrt(d_h), d_h),
        activation=act,
        window=window,
    )


def forward_batch(weights: RnnWeights, windows: np.ndarray) -> np.ndarray:
    """Predictions for every window along the last axis of ``windows``."""
    windows = np.asarray(windows, dtype=float)
    lead = windows.shape[:-1]
    flat = windows.reshape(-1, windows.shape[-1])
    act = weights.activation
    h = np.zeros((flat.shape[0], weights.d_h))
    Wh_T = weights.W_h.T
    for t in range(flat.shape[1]):
        pre = h @ Wh_T + flat[:, t, None] * weights.W_x + weights.W_b
        h = act(pre)
    return (h @ weights.W_p).reshape(lead)


def rnn_forward(weights: RnnWeights, window: Sequence[float]) -> tuple[float, np.ndarray]:
    """Run one window; returns the prediction and an ``(l, d_h)`` piece-index grid."""
    window = np.asarray(window, dtype=float).ravel()
    if window.size < 1:
        raise InvalidInputError("window must have at least one element")
    if not np.all(np.isfinite(window)):
        raise InvalidInputError("window must be finite")
    act = weights.activation
    h = np.zeros(weights.d_h)
    trace = np.empty((window.size, weights.d_h), dtype=np.int64)
    for t, x_t in enumerate(window):
        pre = weights.W_h @ h + weights.W_x * x_t + weights.W_b
        trace[t] = act.piece_index(pre)
        h = act.slopes[trace[t]] * pre + act.intercepts[trace[t]]
    return float(weights.W_p @ h), trace


def rollout_batch(weights: RnnWeights, windows: np.ndarray, m: int) -> np.ndarray:
    """Feed predictions back ``m`` times; returns shape ``windows.shape[:-1] + (m,)``."""
    win = np.array(windows, dtype=float, copy=True)
    preds = np.empty(win.shape[:-1] + (m,))
    for j in range(m):
        p = forward_batch(weights, win)
        preds[..., j] = p
        win = np.concatenate((win[..., 1:], p[..., None]), axis=-1)
    return preds


def rollout(weights: RnnWeights, x: Sequence[float], i: int, l: int, m: int) -> np.ndarray:
    """Long-term predictions ``X^pred_{i+1..i+m}`` from the window ending at 1-based ``i``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if not (l <= i <= n - m) or l < 1 or m < 1:
        raise RangeError(f"position {i} out of range [{l}, {n - m}]")
    return rollout_batch(weights, x[i - l:i], m)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    d_h: int = 8
    window: int = 10
    epochs: int = 200
    learning_rate: float = 1e-2
    seed: int = 0
    activation: str = "relu"
    init_scale: float = 0.5
    patience: int = 50


def make_activation(spec: str) -> PiecewiseLinearActivation:
    """Parse ``relu`` or ``pl_tanh[:HALF_RANGE:SEGMENTS]``."""
    parts = spec.split(":")
    if parts[0] == "relu" and len(parts) == 1:
        return make_relu()
    if parts[0] == "pl_tanh":
        half = float(parts[1]) if len(parts) > 1 else 4.0
        seg = int(parts[2]) if len(parts) > 2 else 512
        return make_pl_tanh(half, seg)
    raise InvalidInputError(f"unknown activation spec {spec!r}")


def training_windows(dataset: Sequence[Sequence[float]], l: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for seq in dataset:
        seq = np.asarray(seq, dtype=float)
        if seq.size <= l:
            raise InvalidInputError(f"training sequence of length {seq.size} is not longer than l={l}")
        idx = np.arange(l)[None, :] + np.arange(seq.size - l)[:, None]
        xs.append(seq[idx])
        ys.append(seq[l:])
    return np.concatenate(xs), np.concatenate(ys)


def loss_and_grads(weights: RnnWeights, X: np.ndarray, y: np.ndarray):
    """Mean squared one-step error and its gradient via backprop through time."""
    act = weights.activation
    N, l = X.shape
    hs = [np.zeros((N, weights.d_h))]
    slopes = []
    for t in range(l):
        pre = hs[-1] @ weights.W_h.T + X[:, t, None] * weights.W_x + weights.W_b
        p = act.piece_index(pre)
        slopes.append(act.slopes[p])
        hs.append(act.slopes[p] * pre + act.intercepts[p])
    pred = hs[-1] @ weights.W_p
    resid = pred - y
    loss = float(np.mean(resid ** 2))

    d_pred = 2.0 * resid / N
    g_p = hs[-1].T @ d_pred
    g_h = np.zeros_like(weights.W_h)
    g_x = np.zeros(weights.d_h)
    g_b = np.zeros(weights.d_h)
    dh = d_pred[:, None] * weights.W_p[None, :]
    for t in range(l - 1, -1, -1):
        dpre = dh * slopes[t]
        g_h += dpre.T @ hs[t]
        g_x += dpre.T @ X[:, t]
        g_b += dpre.sum(axis=0)
        dh = dpre @ weights.W_h
    return loss, {"W_h": g_h, "W_x": g_x, "W_b": g_b, "W_p": g_p}


def train_bptt(dataset: Sequence[Sequence[float]], config: TrainConfig | None = None,
               history: list | None = None) -> RnnWeights:
    """Full-batch gradient descent on the mean one-step-ahead squared error.

    Returns the best weights seen; training stops after ``config.patience``
    epochs without improvement.  A loss that turns non-finite (or explodes
    by four orders of magnitude over the best so far) is reported as
    divergence.  ``history``, when given, receives the loss of every epoch.
    """
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    act = make_activation(cfg.activation)
    X, y = training_windows(dataset, cfg.window)
    w = random_weights(cfg.d_h, rng, activation=act, scale=cfg.init_scale, window=cfg.window)
    params = {k: np.array(getattr(w, k)) for k in ("W_h", "W_x", "W_b", "W_p")}

    best_loss, best, since_best = math.inf, w, 0
    for epoch in range(cfg.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                current = RnnWeights(activation=act, window=cfg.window, **params)
            except WeightFileError as exc:
                raise TrainingError(
                    f"training diverged at epoch {epoch} ({exc}); try a smaller learning rate") from exc
            loss, grads = loss_and_grads(current, X, y)
        if history is not None:
            history.append(loss)
        if not math.isfinite(loss) or loss > 1e4 * best_loss:
            raise TrainingError(
                f"training diverged at epoch {epoch} (loss={loss:.3g}); "
                f"try a smaller learning rate than {cfg.learning_rate:g}")
        if loss < best_loss:
            best_loss, best, since_best = loss, current, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
        for k in params:
            params[k] = params[k] - cfg.learning_rate * grads[k]
    return best


def reference_dataset(n_sequences: int = 64, length: int = 100, seed: int = 0,
                      level_scale: float = 0.0) -> list[np.ndarray]:
    """CP-free training sequences: unit Gaussian noise around a per-sequence level.

    ``level_scale`` is the half-width of the uniform distribution the level
    is drawn from; 0 gives pure standard-normal sequences.
    """
    rng = np.random.default_rng(seed)
    levels = rng.uniform(-level_scale, level_scale, n_sequences) if level_scale else np.zeros(n_sequences)
    return [lv + rng.standard_normal(length) for lv in levels]


# ---------------------------------------------------------------------------
# serialisation


def weights_to_dict(weights: RnnWeights) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d_h": weights.d_h,
        "l": weights.window,
        "activation": weights.activation.to_dict(),
        "W_h": weights.W_h.tolist(),
        "W_x": weights.W_x.tolist(),
        "W_b": weights.W_b.tolist(),
        "W_p": [weights.W_p.tolist()],
    }


def save_weights(weights: RnnWeights, path: str | Path) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(weights_to_dict(weights), indent=1) + "\n", encoding="utf-8")


def _field_array(d: dict, name: str, shape: tuple[int, ...]) -> np.ndarray:
    if name not in d:
        raise WeightFileError(f"missing field {name}", field=name)
    try:
        arr = np.asarray(d[name], dtype=float)
    except (TypeError, ValueError) as exc:
        raise WeightFileError(f"field {name} is not a numeric array: {exc}", field=name) from exc
    if arr.shape != shape:
        raise WeightFileError(f"field {name} has shape {arr.shape}, expected {shape}", field=name)
    if not np.all(np.isfinite(arr)):
        raise WeightFileError(f"field {name} has non-finite entries", field=name)
    return arr


def weights_from_dict(d: dict) -> RnnWeights:
    if not isinstance(d, dict):
        raise WeightFileError("weight file must hold a JSON object")
    if d.get("format_version") != FORMAT_VERSION:
        raise WeightFileError(f"unsupported format_version {d.get('format_version')!r}",
                              field="format_version")
    d_h = d.get("d_h")
    if not isinstance(d_h, int) or d_h < 1:
        raise WeightFileError("d_h must be a positive integer", field="d_h")
    l = d.get("l")
    if l is not None and (not isinstance(l, int) or l < 1):
        raise WeightFileError("l must be a positive integer or null", field="l")
    try:
        act = PiecewiseLinearActivation.from_dict(d["activation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFileError(f"bad activation table: {exc}", field="activation") from exc
    return RnnWeights(
        W_h=_field_array(d, "W_h", (d_h, d_h)),
        W_x=_field_array(d, "W_x", (d_h,)),
        W_b=_field_array(d, "W_b", (d_h,)),
        W_p=_field_array(d, "W_p", (1, d_h)),
        activation=act,
        window=l,
    )


def load_weights(path: str | Path) -> RnnWeights:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc
    try:
        d = json.loads(text, parse_constant=lambda c: float(c))
    except json.JSONDecodeError as exc:
        raise WeightFileError(f"weight file {path} is not valid JSON: {exc}") from exc
    return weights_from_dict(d)


# ---------------------------------------------------------------------------
# shipped reference nets

REFERENCE_WINDOWS = (5, 10)


def reference_config(window: int) -> TrainConfig:
    """Training recipe behind the shipped reference nets."""
    return TrainConfig(d_h=8, window=window, epochs=3000, learning_rate=1e-2, seed=0)


def train_reference(window: int = 10) -> RnnWeights:
    """Re-run the reference training (ReLU, d_h=8, level-randomised noise)."""
    data = reference_dataset(n_sequences=64, length=100, seed=0, level_scale=3.0)
    return train_bptt(data, reference_config(window))


def reference_weights(window: int = 10) -> RnnWeights:
    """Load the shipped reference net trained on windows of length ``window``."""
    if window not in REFERENCE_WINDOWS:
        raise InvalidInputError(f"no reference net for window {window}; have {REFERENCE_WINDOWS}")
    res = resources.files("rnncpsi") / "data" / f"reference_l{window}.json"
    with resources.as_file(res) as path:
        return load_weights(path)
