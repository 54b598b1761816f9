"""Command-line interface: ``rnncpsi {train,detect,test,experiment}``.

Exit codes: 0 success, 2 usage or config error, 3 input/output error,
4 detection failure, 5 numeric failure (including divergence and the
parametric-search cap).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, detect
from .errors import (DegenerateSegmentError, DegenerateTieError, DetectionFailure, InconsistencyError,
                     InvalidInputError, ModelError, NumericError, RangeError, RnnCpSiError,
                     SearchCapExceeded, TrainingError, WeightFileError)
from .harness import ExperimentConfig, estimate_variance_robust, run_experiment
from .inference import METHODS, PROBLEMS, SearchConfig, run_si
from .rnn import (REFERENCE_WINDOWS, TrainConfig, load_weights, reference_dataset, reference_weights,
                  save_weights, train_bptt)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DETECTION, EXIT_NUMERIC = 0, 2, 3, 4, 5

log = logging.getLogger("rnncpsi")


class UsageError(Exception):
    pass


class InputFileError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def read_series(path: str) -> np.ndarray:
    """Single numeric column, optionally preceded by one header line."""
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputFileError(f"{path}: no data")
    values = []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != 1:
            raise InputFileError(f"{path}: line {lineno} has {len(row)} columns, expected 1")
        try:
            v = float(row[0])
        except ValueError:
            if lineno == 1:
                continue
            raise InputFileError(f"{path}: line {lineno} is not numeric: {row[0]!r}") from None
        if not np.isfinite(v):
            raise InputFileError(f"{path}: line {lineno} is not finite")
        values.append(v)
    if not values:
        raise InputFileError(f"{path}: no numeric rows")
    return np.asarray(values)


def read_config(path: str | None, allowed: set[str]) -> dict:
    if not path:
        return {}
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputFileError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return d


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _methods(spec: str | None) -> list[str] | None:
    if spec is None:
        return None
    methods = [m.strip() for m in spec.split(",") if m.strip()]
    bad = set(methods) - set(METHODS)
    if bad or not methods:
        raise UsageError(f"--method takes a comma list from {METHODS}")
    return methods


def parse_sigma(spec: str, n: int) -> np.ndarray:
    """``identity[:V]``, ``ar:RHO[:V]`` or ``file:PATH`` (whitespace- or comma-separated matrix)."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "identity":
            return (float(rest) if rest else 1.0) * np.eye(n)
        if kind == "ar":
            parts = rest.split(":")
            rho = float(parts[0])
            v = float(parts[1]) if len(parts) > 1 else 1.0
            if not -1 < rho < 1:
                raise UsageError(f"AR correlation must lie in (-1, 1), got {rho}")
            i = np.arange(n)
            return v * rho ** np.abs(i[:, None] - i[None, :])
    except (ValueError, IndexError) as exc:
        raise UsageError(f"bad --sigma value {spec!r}") from exc
    if kind == "file":
        try:
            text = Path(rest).read_text(encoding="utf-8").replace(",", " ")
            S = np.loadtxt(io.StringIO(text), ndmin=2)
        except (OSError, ValueError) as exc:
            raise InputFileError(f"cannot read covariance file {rest}: {exc}") from exc
        if S.shape != (n, n):
            raise InputFileError(f"covariance file {rest} is {S.shape}, expected {(n, n)}")
        return S
    raise UsageError(f"--sigma must be identity[:V], ar:RHO[:V] or file:PATH, got {spec!r}")


def _detector(cfg: dict) -> DetectorConfig:
    return DetectorConfig(K=cfg.get("K", 2), l=cfg.get("l", 10), m=cfg.get("m", 10), w=cfg.get("w", 5))


def _weights(path: str | None, window: int):
    if path in (None, "reference"):
        if window not in REFERENCE_WINDOWS:
            raise UsageError(f"no shipped reference net for l={window}; pass --weights")
        return reference_weights(window)
    return load_weights(path)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# ---------------------------------------------------------------------------
# subcommands

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} | {"n_sequences", "length", "level_scale", "data_seed"}
_DETECT_KEYS = {"K", "l", "m", "w"}
_TEST_KEYS = _DETECT_KEYS | {"problem", "sigma", "estimate_variance", "alpha", "methods", "bound_sds", "pp_cap"}


def cmd_train(args) -> int:
    cfg = {"n_sequences": 64, "length": 100, "level_scale": 3.0, "data_seed": 0,
           "epochs": 3000, **read_config(args.config, _TRAIN_KEYS)}
    cfg.update(_overrides(args, ["d_h", "window", "epochs", "learning_rate", "seed", "activation"]))
    data = reference_dataset(cfg.pop("n_sequences"), cfg.pop("length"), seed=cfg.pop("data_seed"),
                             level_scale=cfg.pop("level_scale"))
    tcfg = TrainConfig(**cfg)
    history: list[float] = []
    weights = train_bptt(data, tcfg, history)
    save_weights(weights, args.out)
    print(f"epochs {len(history)}  best loss {min(history)!r}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = {**read_config(args.config, _DETECT_KEYS), **_overrides(args, ["K", "l", "m", "w"])}
    dcfg = _detector(cfg)
    x = read_series(args.input)
    weights = _weights(args.weights, dcfg.l)
    det = detect(x, weights, dcfg)
    print("tau " + " ".join(map(str, det.tau_det)))
    print("rank " + " ".join(map(str, det.score_rank)))
    if args.scores:
        with open(args.scores, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "x", "e", "s_ano", "local_max"])
            maxima = set(det.maxima)
            for i, (xi, e, s) in enumerate(zip(x, det.e, det.s_ano), start=1):
                writer.writerow([i, repr(float(xi)), repr(float(e)), repr(float(s)), int(i in maxima)])
    return EXIT_OK


def cmd_test(args) -> int:
    cfg = {"problem": "mean", "alpha": 0.05, "methods": list(METHODS), "bound_sds": 10.0, "pp_cap": 100000,
           **read_config(args.config, _TEST_KEYS)}
    cfg.update(_overrides(args, ["K", "l", "m", "w", "problem", "sigma", "alpha", "bound_sds", "pp_cap"]))
    if args.estimate_variance:
        cfg["estimate_variance"] = True
    if args.method is not None:
        cfg["methods"] = _methods(args.method)
    if bool(cfg.get("sigma")) == bool(cfg.get("estimate_variance")):
        raise UsageError("give exactly one of --sigma or --estimate-variance")
    if cfg["problem"] not in PROBLEMS:
        raise UsageError(f"--problem must be one of {PROBLEMS}")

    dcfg = _detector(cfg)
    x = read_series(args.input)
    weights = _weights(args.weights, dcfg.l)
    det = detect(x, weights, dcfg)
    if cfg.get("estimate_variance"):
        v = estimate_variance_robust(x, det.tau_det)
        Sigma = v * np.eye(x.size)
        sigma_desc = f"estimated identity*{v!r}"
    else:
        Sigma = parse_sigma(cfg["sigma"], x.size)
        sigma_desc = cfg["sigma"]
    search = SearchConfig(bound_sds=cfg["bound_sds"], max_iterations=cfg["pp_cap"])
    results = run_si(x, Sigma, weights, dcfg, cfg["problem"], cfg["methods"], search, detection=det)

    cols = ["k", "tau"] + [f"p_{m}" for m in METHODS if m in cfg["methods"]]
    if "selective" in cfg["methods"]:
        cols += ["n_intervals", "iterations"]
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(cols)
        for r in results:
            row = r.as_row()
            writer.writerow([row[c] if c in ("k", "tau", "n_intervals", "iterations") else _fmt(row[c])
                             for c in cols])
    finally:
        if args.out:
            out.close()
    alpha = cfg["alpha"]
    print(f"sigma: {sigma_desc}; problem: {cfg['problem']}; alpha = {alpha}", file=sys.stderr)
    for r in results:
        parts = [f"{m}={getattr(r, 'p_' + m):.4g}" for m in METHODS if m in cfg["methods"]]
        verdict = ""
        if r.p_selective is not None:
            verdict = "  -> reject" if r.p_selective < alpha else "  -> keep"
        print(f"CP {r.k} at {r.tau_k}: " + ", ".join(parts) + verdict, file=sys.stderr)
    return EXIT_OK


def cmd_experiment(args) -> int:
    allowed = {f.name for f in fields(ExperimentConfig)}
    cfg = read_config(args.config, allowed)
    cfg["kind"] = args.kind
    cfg.update(_overrides(args, ["trials", "alpha", "problem", "seed", "bound_sds", "pp_cap", "weights",
                                 "family", "family_distance", "covariance", "rho"]))
    if args.method is not None:
        cfg["methods"] = _methods(args.method)
    if args.n is not None:
        cfg["n_list"] = args.n
    if args.delta is not None:
        cfg["deltas"] = args.delta
    try:
        ecfg = ExperimentConfig.from_dict(cfg)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    report = run_experiment(ecfg, workers=args.threads)
    csv_path, json_path = report.write(args.out_dir, stem=args.kind)
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    if args.plot:
        from .plotting import plot_report
        fig_path = Path(args.out_dir) / f"{args.kind}.{args.plot}"
        plot_report(report, fig_path)
        print(f"wrote {fig_path}")
    for c in report.cells:
        key = f"delta={c.delta:g}" if args.kind == "power" else f"n={c.n}"
        rate = c.rate_trial if args.kind == "power" else c.rate
        print(f"{key:>10}  {c.method:<9}  trials={c.trials} tested={c.correct - c.errors} "
              f"errors={c.errors} rate={rate:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rnncpsi", description="RNN change-point detection with selective p-values.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an RNN on CP-free synthetic data and write a weight file")
    t.add_argument("--out", required=True, help="weight file to write (JSON)")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--d-h", dest="d_h", type=int)
    t.add_argument("--window", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--activation", help="relu or pl_tanh[:HALF:SEGMENTS]")
    t.set_defaults(func=cmd_train)

    def detector_flags(q):
        q.add_argument("input", help="CSV file with one numeric column ('-' for stdin)")
        q.add_argument("--weights", help="weight file; default is the shipped reference net for l")
        q.add_argument("--config")
        q.add_argument("--K", type=int)
        q.add_argument("--l", type=int)
        q.add_argument("--m", type=int)
        q.add_argument("--w", type=int)

    d = sub.add_parser("detect", help="print detected change points")
    detector_flags(d)
    d.add_argument("--scores", help="write per-position scores to this CSV")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("test", help="p-values for every detected change point")
    detector_flags(s)
    s.add_argument("--problem", choices=PROBLEMS)
    s.add_argument("--sigma", help="identity[:V], ar:RHO[:V] or file:PATH")
    s.add_argument("--estimate-variance", action="store_true",
                   help="use the largest within-segment variance times the identity")
    s.add_argument("--alpha", type=float)
    s.add_argument("--method", help=f"comma list from {','.join(METHODS)}")
    s.add_argument("--bounds", dest="bound_sds", type=float, help="search half-width in standard deviations")
    s.add_argument("--pp-cap", dest="pp_cap", type=int, help="maximum parametric-search iterations")
    s.add_argument("--out", help="write the CSV here instead of standard output")
    s.set_defaults(func=cmd_test)

    e = sub.add_parser("experiment", help="Monte Carlo experiments (type I error, power, robustness)")
    e.add_argument("kind", choices=("type1", "power", "robust-variance", "robust-noise"))
    e.add_argument("--config")
    e.add_argument("--out-dir", default=".")
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int, default=1, help="worker processes")
    e.add_argument("--trials", type=int)
    e.add_argument("--alpha", type=float)
    e.add_argument("--method")
    e.add_argument("--problem", choices=PROBLEMS)
    e.add_argument("--weights")
    e.add_argument("--n", type=int, nargs="+", help="sequence lengths (type1 and robustness)")
    e.add_argument("--delta", type=float, nargs="+", help="shift sizes (power)")
    e.add_argument("--covariance", choices=("identity", "ar"))
    e.add_argument("--rho", type=float)
    e.add_argument("--family")
    e.add_argument("--distance", dest="family_distance", type=float,
                   help="target Wasserstein distance for the noise family")
    e.add_argument("--bounds", dest="bound_sds", type=float)
    e.add_argument("--pp-cap", dest="pp_cap", type=int)
    e.add_argument("--plot", choices=("svg", "png"), help="also draw rate-vs-n or power-vs-delta")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError, RangeError, DegenerateSegmentError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputFileError, WeightFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DetectionFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DETECTION
    except (TrainingError, NumericError, SearchCapExceeded, DegenerateTieError, InconsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RnnCpSiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
