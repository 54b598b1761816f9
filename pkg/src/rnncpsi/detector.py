"""Change-point detection from long-term RNN prediction errors.

Positions are 1-based throughout, matching how change points are reported:
``tau = 20`` means the last point of the first segment is ``x[19]`` in numpy
terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DetectionFailure, InvalidInputError, RangeError
from .rnn import RnnWeights, rollout_batch


@dataclass(frozen=True)
class DetectorConfig:
    K: int = 2
    l: int = 10
    m: int = 10
    w: int = 5

    def __post_init__(self):
        if self.K < 1 or self.l < 1 or self.m < 1:
            raise InvalidInputError("K, l and m must all be >= 1")
        if self.w < 1 or self.w % 2 == 0:
            raise InvalidInputError(f"smoothing width w must be odd and >= 1, got {self.w}")

    def check_length(self, n: int) -> None:
        if not self.l + self.m < n:
            raise RangeError(f"sequence length {n} must exceed l + m = {self.l + self.m}")

    def positions(self, n: int) -> np.ndarray:
        """1-based positions ``i`` whose error score is computed."""
        return np.arange(self.l, n - self.m + 1)


@dataclass(frozen=True)
class DetectionResult:
    tau_det: tuple[int, ...]
    score_rank: tuple[int, ...]
    e: np.ndarray
    s_ano: np.ndarray
    maxima: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.e.size


def _windows(x: np.ndarray, cfg: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Input windows and rollout targets for every scored position (last axis = time)."""
    n = x.shape[-1]
    pos = cfg.positions(n)
    win_idx = (pos[:, None] - cfg.l) + np.arange(cfg.l)[None, :]
    tgt_idx = pos[:, None] + np.arange(cfg.m)[None, :]
    return x[..., win_idx], x[..., tgt_idx]


def error_scores(x, weights: RnnWeights, cfg: DetectorConfig) -> np.ndarray:
    """Mean squared rollout error per position; zero outside ``[l, n-m]``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cfg.check_length(n)
    windows, targets = _windows(x, cfg)
    preds = rollout_batch(weights, windows, cfg.m)
    e = np.zeros(x.shape)
    e[..., cfg.l - 1:n - cfg.m] = np.mean((preds - targets) ** 2, axis=-1)
    return e


def moving_sum(v: np.ndarray, w: int) -> np.ndarray:
    """Centered window sum of width ``w`` along the last axis, zero-extended."""
    h = (w - 1) // 2
    n = v.shape[-1]
    vp = np.zeros(v.shape[:-1] + (n + 2 * h,))
    vp[..., h:h + n] = v
    out = np.zeros(v.shape)
    for j in range(w):
        out += vp[..., j:j + n]
    return out


def anomaly_scores(e, w: int) -> np.ndarray:
    if w < 1 or w % 2 == 0:
        raise InvalidInputError(f"w must be odd, got {w}")
    return moving_sum(np.asarray(e, dtype=float), w) / w


def local_maxima(s_ano) -> tuple[int, ...]:
    s = np.asarray(s_ano, dtype=float)
    if s.size < 3:
        raise InvalidInputError("need at least three scores to find local maxima")
    d = np.diff(s)
    idx = np.flatnonzero((d[1:] < 0) & (d[:-1] > 0)) + 2
    return tuple(int(i) for i in idx)


def select_top(s_ano: np.ndarray, maxima: tuple[int, ...], K: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Greedy arg-max removal; ties go to the smallest position."""
    if len(maxima) < K:
        raise DetectionFailure(f"detection failure: {len(maxima)} local maxima < K={K}")
    order = sorted(maxima, key=lambda i: (-s_ano[i - 1], i))[:K]
    tau = tuple(sorted(order))
    rank = tuple(order.index(t) + 1 for t in tau)
    return tau, rank


def detect(x, weights: RnnWeights, cfg: DetectorConfig) -> DetectionResult:
    e = error_scores(x, weights, cfg)
    s = anomaly_scores(e, cfg.w)
    maxima = local_maxima(s)
    tau, rank = select_top(s, maxima, cfg.K)
    return DetectionResult(tau, rank, e, s, maxima)


def detect_batch(X, weights: RnnWeights, cfg: DetectorConfig, chunk: int = 20000) -> np.ndarray:
    """Detected positions for each row of ``X``; rows that fail get ``-1`` entries.

    Semantics match :func:`detect` exactly, including the tie rule.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.full((X.shape[0], cfg.K), -1, dtype=np.int64)
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        s = anomaly_scores(error_scores(block, weights, cfg), cfg.w)
        d = np.diff(s, axis=1)
        is_max = (d[:, 1:] < 0) & (d[:, :-1] > 0)
        score = np.where(is_max, s[:, 1:-1], -np.inf)
        # stable sort on -score keeps the smaller position first among ties
        order = np.argsort(-score, axis=1, kind="stable")[:, :cfg.K]
        ok = is_max.sum(axis=1) >= cfg.K
        top = np.sort(order, axis=1) + 2
        out[start:start + chunk][ok] = top[ok]
    return out
