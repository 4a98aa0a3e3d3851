"""Command-line entry point: ``probitgp {simulate,loglik,fit-alpha,predict,benchmark}``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError
from .harness import (
    Dataset,
    RunConfig,
    build_model,
    estimate_alpha,
    predict_batch,
    simulate_dataset,
)
from .model import marginal_likelihood

log = logging.getLogger("probitgp")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


# ---------------------------------------------------------------------------
# files


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    coords = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    if not coords:
        raise ValidationError(f"{path}: no coordinate columns x1..xq in header")
    expected = [f"x{i}" for i in range(1, len(coords) + 1)]
    if coords != expected:
        raise ValidationError(f"{path}: coordinate columns must be {expected}")
    cols = {}
    for k, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[k]) for r in rows])
        except (ValueError, IndexError):
            raise ValidationError(f"{path}: bad value in column {name!r}") from None
    X = np.column_stack([cols[c] for c in coords])
    return X, cols


def _binary(values, path):
    if not np.all((values == 0) | (values == 1)):
        raise ValidationError(f"{path}: y must be 0 or 1")
    return values.astype(int)


def read_dataset(train_path, holdout_path=None) -> Dataset:
    X, cols = _read_table(train_path)
    if "y" not in cols:
        raise ValidationError(f"{train_path}: missing column 'y'")
    kw = {}
    if holdout_path is not None:
        H, hcols = _read_table(holdout_path)
        if H.shape[1] != X.shape[1]:
            raise ValidationError("training and holdout dimensions differ")
        kw["holdout_locs"] = H
        if "truth_prob" in hcols:
            kw["holdout_probs"] = hcols["truth_prob"]
        if "y" in hcols:
            kw["holdout_y"] = _binary(hcols["y"], holdout_path)
    truth = cols.get("truth_prob")
    return Dataset(X, _binary(cols["y"], train_path), truth, **kw)


def write_dataset(ds: Dataset, train_path, holdout_path):
    q = ds.locs.shape[1]
    xs = [f"x{i}" for i in range(1, q + 1)]
    write_csv(train_path, xs + ["y", "truth_prob"],
              [[_fmt(v) for v in x] + [int(y), _fmt(p)]
               for x, y, p in zip(ds.locs, ds.y, ds.truth_probs)])
    write_csv(holdout_path, xs + ["truth_prob", "y"],
              [[_fmt(v) for v in x] + [_fmt(p), int(y)]
               for x, p, y in zip(ds.holdout_locs, ds.holdout_probs, ds.holdout_y)])


# ---------------------------------------------------------------------------
# configuration


def run_config(args) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValidationError("config must be a flat JSON object")
        values.update(loaded)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig.from_dict(values)


def _add_run_flags(p, method=True):
    p.add_argument("--config", help="flat JSON file of run settings")
    if method:
        p.add_argument("--method", choices=["tlr", "vb"])
    p.add_argument("--R", type=int, help="Monte Carlo sample size")
    p.add_argument("--seed", type=int)
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--trunc-tol", dest="trunc_tol", type=float)
    p.add_argument("--alpha", type=float, help="fixed kernel decay; omit to fit on the grid")
    p.add_argument("--alpha-min", dest="alpha_min", type=float)
    p.add_argument("--alpha-max", dest="alpha_max", type=float)
    p.add_argument("--alpha-count", dest="alpha_count", type=int)
    p.add_argument("--cavi-tol", dest="cavi_tol", type=float)
    p.add_argument("--cavi-max-iter", dest="cavi_max_iter", type=int)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    ds = simulate_dataset(args.grid_size, args.alpha, args.seed, args.holdout_scheme,
                          args.holdout_count)
    out = Path(args.out_dir)
    write_dataset(ds, out / "train.csv", out / "holdout.csv")
    log.info("wrote %d training and %d holdout rows to %s", ds.n, len(ds.holdout_locs), out)


def cmd_loglik(args):
    cfg = run_config(args)
    if cfg.alpha is None:
        raise ValidationError("loglik needs --alpha")
    ds = read_dataset(args.train)
    est = marginal_likelihood(build_model(ds, cfg.alpha), cfg.mc(), args.engine,
                              cfg.block_size, cfg.trunc_tol)
    write_json(args.out, {
        "alpha": cfg.alpha, "engine": args.engine, "n": ds.n, "R": cfg.R, "seed": cfg.seed,
        "estimate": est.value, "std_error": est.std_error,
        "log_estimate": est.log_value, "relative_std_error": est.rel_error,
    })


def cmd_fit_alpha(args):
    cfg = run_config(args)
    ds = read_dataset(args.train)
    alpha_hat, curve = estimate_alpha(ds, cfg.grid, cfg)
    write_json(args.out, {
        "alpha_hat": alpha_hat, "n": ds.n, "R": cfg.R, "seed": cfg.seed,
        "curve": [{"alpha": a, "log_estimate": lv, "relative_std_error": rel}
                  for a, lv, rel in curve],
    })


def _write_predictions(path, estimates):
    write_csv(path, ["id", "probability", "std_error"],
              [[i, _fmt(e.value), _fmt(e.std_error)] for i, e in enumerate(estimates)])


def cmd_predict(args):
    cfg = run_config(args)
    ds = read_dataset(args.train, args.holdout)
    estimates, report = predict_batch(ds, cfg)
    out = Path(args.out_dir)
    _write_predictions(out / "predictions.csv", estimates)
    write_json(out / "metrics.json", report.to_dict(timing=False))
    # wall-clock numbers are kept apart so the other outputs stay reproducible
    write_json(out / "timing.json", {
        "per_prediction_seconds": report.per_prediction_seconds,
        "setup_seconds": report.setup_seconds,
        "alpha_seconds": report.alpha_seconds,
    })


def cmd_benchmark(args):
    cfg = run_config(args)
    ds = simulate_dataset(args.grid_size, args.true_alpha, cfg.seed, args.holdout_scheme,
                          args.holdout_count)
    out = Path(args.out_dir)
    write_dataset(ds, out / "train.csv", out / "holdout.csv")
    if cfg.alpha is None:
        alpha_hat, curve = estimate_alpha(ds, cfg.grid, cfg)
        write_json(out / "alpha.json", {"alpha_hat": alpha_hat, "curve": [list(c) for c in curve]})
    else:
        alpha_hat = cfg.alpha
    timing = {}
    for method in args.methods.split(","):
        run = RunConfig.from_dict({**_as_dict(cfg), "method": method, "alpha": alpha_hat})
        estimates, report = predict_batch(ds, run)
        _write_predictions(out / f"predictions_{method}.csv", estimates)
        write_json(out / f"metrics_{method}.json", report.to_dict(timing=False))
        timing[method] = {"per_prediction_seconds": report.per_prediction_seconds,
                          "setup_seconds": report.setup_seconds}
        log.info("%s: mse=%s auc=%s %.3fs/prediction", method, report.mse, report.auc,
                 report.per_prediction_seconds)
    write_json(out / "timing.json", timing)


def _as_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probitgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a grid dataset with holdout points")
    p.add_argument("--grid-size", type=int, default=16)
    p.add_argument("--alpha", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-scheme", choices=["random", "grid"], default="random")
    p.add_argument("--holdout-count", type=int, default=100)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("loglik", help="estimate the marginal likelihood")
    p.add_argument("--train", required=True)
    p.add_argument("--engine", choices=["dense", "tlr"], default="tlr")
    p.add_argument("--out", required=True)
    _add_run_flags(p, method=False)
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("fit-alpha", help="grid search of the kernel decay")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p, method=False)
    p.set_defaults(func=cmd_fit_alpha)

    p = sub.add_parser("predict", help="predictive probabilities at holdout points")
    p.add_argument("--train", required=True)
    p.add_argument("--holdout", required=True)
    p.add_argument("--out-dir", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="simulate, fit and predict with each method")
    p.add_argument("--grid-size", type=int, default=16)
    p.add_argument("--true-alpha", type=float, default=30.0)
    p.add_argument("--holdout-scheme", choices=["random", "grid"], default="random")
    p.add_argument("--holdout-count", type=int, default=100)
    p.add_argument("--methods", default="tlr,vb")
    p.add_argument("--out-dir", required=True)
    _add_run_flags(p, method=False)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
