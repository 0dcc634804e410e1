"""Command-line sweeps over inference budgets.

Example::

    sdos --model glm_binomial --method vi --iters 100,1000 --K 100 --seed 1 --out vi.json

Each (iters, M) cell runs one diagnostic with K repetitions. JSON output has
the layout::

    {"model": str, "method": str,
     "cells": [{"iters", "M", "K", "seed", "mean", "std_error",
                "ci": [lo, hi], "failure_count", "d_values": [...]}]}

Undefined numbers (for example a cell where every repetition failed) are
written as ``null``. CSV output has one row per cell and omits d_values.
``--plot-data PATH`` additionally writes a list of
``{"x", "y", "y_lo", "y_hi", "series"}`` points.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import models as zoo
from .datasets import load_dataset
from .diagnostics import sdos_conditional, sdos_iw, sdos_joint
from .errors import AllRepetitionsFailed, SdosError
from .inference import ExactFitter, Fitter, LaplaceFitter, VIFitter

METHODS = ("laplace", "laplace-adjusted", "vi", "iw-laplace", "iwvi", "exact")
CSV_FIELDS = ("iters", "M", "K", "seed", "mean", "std_error", "ci_lo", "ci_hi", "failure_count")


@dataclass(frozen=True)
class RunConfig:
    model: str
    method: str
    iters: tuple[int, ...]
    M: tuple[int, ...] = (1,)
    K: int = 100
    seed: int = 0
    level: float = 0.95
    out: str | None = None
    format: str = "json"
    jobs: int = 1
    data: str | None = None
    standardize: bool = True
    plot_data: str | None = None


def _int_list(flag: str, minimum: int):
    def parse(text: str) -> tuple[int, ...]:
        try:
            values = tuple(int(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects comma-separated integers, got {text!r}") from None
        if not values:
            raise argparse.ArgumentTypeError(f"{flag} needs at least one value")
        if any(v < minimum for v in values):
            raise argparse.ArgumentTypeError(f"{flag} values must be >= {minimum}")
        return values

    return parse


def _bounded_int(flag: str, minimum: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects an integer, got {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"{flag} must be >= {minimum}")
        return value

    return parse


def _level(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--level expects a number, got {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("--level must lie strictly between 0 and 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdos", description="Simulation-based symmetric-KL diagnostics for approximate inference.")
    p.add_argument("--model", required=True, choices=zoo.MODEL_IDS)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--iters", type=_int_list("--iters", 1), default=(1000,), help="comma-separated iteration budgets")
    p.add_argument("--M", type=_int_list("--M", 1), default=(1,), help="comma-separated importance sample counts")
    p.add_argument("--K", type=_bounded_int("--K", 2), default=100, help="repetitions per cell")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--jobs", type=_bounded_int("--jobs", 1), default=1, help="worker processes")
    p.add_argument("--data", help="CSV file with covariates (ionosphere, concrete)")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--plot-data", dest="plot_data", help="also write plot points as JSON here")
    return p


def parse_args(argv=None) -> RunConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.model in zoo.DATASET_MODELS and ns.data is None:
        parser.error(f"--data is required for --model {ns.model}")
    if ns.method == "exact" and not _has_exact_posterior(ns.model):
        parser.error(f"--method exact needs a conjugate model; {ns.model} has no closed-form posterior")
    return RunConfig(
        model=ns.model,
        method=ns.method,
        iters=ns.iters,
        M=ns.M,
        K=ns.K,
        seed=ns.seed,
        level=ns.level,
        out=ns.out,
        format=ns.format,
        jobs=ns.jobs,
        data=ns.data,
        standardize=ns.standardize,
        plot_data=ns.plot_data,
    )


def _has_exact_posterior(model_id: str) -> bool:
    return model_id in ("gaussian_toy", "concrete")


def build_model(config: RunConfig) -> zoo.ModelSpec:
    factory = getattr(zoo, config.model)
    if config.model in zoo.DATASET_MODELS:
        return factory(load_dataset(config.data, config.model, standardize=config.standardize))
    return factory()


def build_fitter(method: str, iters: int, M: int) -> Fitter:
    if method == "laplace":
        return LaplaceFitter(iters)
    if method in ("laplace-adjusted", "iw-laplace"):
        return LaplaceFitter(iters, adjusted=True)
    if method == "vi":
        return VIFitter(iters)
    if method == "iwvi":
        return VIFitter(iters, M=M)
    if method == "exact":
        return ExactFitter()
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _number(x):
    x = float(x)
    return x if math.isfinite(x) else None


def run_cell(model, config: RunConfig, iters: int, M: int) -> dict:
    fitter = build_fitter(config.method, iters, M)
    common = dict(parallelism=config.jobs, level=config.level)
    cell = {"iters": iters, "M": M, "K": config.K, "seed": config.seed}
    try:
        if M > 1:
            res = sdos_iw(model, fitter, M, config.K, config.seed, **common)
        elif model.covariates is not None:
            res = sdos_conditional(model, fitter, config.K, config.seed, **common)
        else:
            res = sdos_joint(model, fitter, config.K, config.seed, **common)
    except AllRepetitionsFailed:
        cell.update(mean=None, std_error=None, ci=[None, None], failure_count=config.K, d_values=[])
        return cell
    cell.update(
        mean=_number(res.mean),
        std_error=_number(res.std_error),
        ci=[_number(res.ci[0]), _number(res.ci[1])],
        failure_count=res.failure_count,
        d_values=[_number(v) for v in res.d_values],
    )
    return cell


def run_sweep(config: RunConfig) -> dict:
    """Run every (iters, M) cell in sorted order and return the result document."""
    model = build_model(config)
    cells = [run_cell(model, config, it, M) for it in sorted(set(config.iters)) for M in sorted(set(config.M))]
    return {"model": config.model, "method": config.method, "cells": cells}


def render(results: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(results, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=("model", "method") + CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for c in results["cells"]:
        row = {k: c[k] for k in CSV_FIELDS if k in c}
        row.update(model=results["model"], method=results["method"], ci_lo=c["ci"][0], ci_hi=c["ci"][1])
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()


def plot_points(results: dict) -> list[dict]:
    """Plot points, one per cell, sorted by x.

    x is the iteration budget when the sweep has several budgets, otherwise
    M. Cells whose mean is undefined are skipped.
    """
    cells = results.get("cells", [])
    if not cells:
        raise ValueError("no cells to plot")
    by_iters = len({c["iters"] for c in cells}) > 1 or len({c["M"] for c in cells}) == 1
    points = []
    for c in cells:
        if c["mean"] is None:
            continue
        x, label = (c["iters"], f"{results['method']} M={c['M']}") if by_iters else (c["M"], f"{results['method']} iters={c['iters']}")
        points.append({"x": x, "y": c["mean"], "y_lo": c["ci"][0], "y_hi": c["ci"][1], "series": label})
    if not points:
        raise ValueError("every cell failed; nothing to plot")
    points.sort(key=lambda p: (p["x"], p["series"]))
    return points


def emit_plot_data(results: dict, path) -> list[dict]:
    """Write plot points to ``path``; nothing is written if there are none."""
    points = plot_points(results)
    Path(path).write_text(json.dumps(points, indent=2) + "\n", encoding="utf-8")
    return points


def main(argv=None) -> int:
    config = parse_args(argv)
    try:
        results = run_sweep(config)
    except (SdosError, OSError, ValueError) as exc:
        print(f"sdos: error: {exc}", file=sys.stderr)
        return 2
    text = render(results, config.format)
    if config.out:
        Path(config.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if config.plot_data:
        try:
            emit_plot_data(results, config.plot_data)
        except ValueError as exc:
            print(f"sdos: warning: {exc}", file=sys.stderr)
    if all(c["failure_count"] == c["K"] for c in results["cells"]):
        print("sdos: every cell failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
