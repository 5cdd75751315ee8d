"""Seeded sweeps over planted instances.

A benchmark config is a JSON object::

    {
      "dims": [30, 30, 30],
      "ranks": [3, 3, 3],
      "densities": [0.05],
      "row_cards": [6, 9, 12, 15, 20],   # same |I| on every mode, or per-mode lists
      "trials": 10,
      "seed": 0,
      "fixed_instance": true,            # one instance per density, trials vary sampling only
      "magnitude": null,                 # null: sized from the zeta0 bound
      "solver": {"gamma": 0.7, "epsilon": 1e-7, "max_iters": 150}
    }

Result rows do not carry wall time so that reruns are byte-identical;
timings go to a separate file.
"""
from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass

from ._io import atomic_writer
from .solver import ConfigError, SolverConfig, solve
from .synth import planted_instance, recovery_metrics

RESULT_COLUMNS = [
    "point", "density", "row_cards", "trial", "instance_seed", "sample_seed", "status",
    "iterations", "converged", "final_residual", "low_rank_error", "sparse_error",
    "precision", "recall", "decay_ratio", "decay_r2",
]
TIMING_COLUMNS = ["point", "trial", "wall_ms"]

_BENCH_KEYS = {"dims", "ranks", "densities", "row_cards", "trials", "seed", "fixed_instance",
               "magnitude", "solver"}


@dataclass(frozen=True)
class BenchConfig:
    dims: tuple[int, ...]
    ranks: tuple[int, ...]
    densities: tuple[float, ...]
    row_cards: tuple[tuple[int, ...], ...]
    trials: int = 1
    seed: int = 0
    fixed_instance: bool = True
    magnitude: float | None = None
    solver: dict | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchConfig":
        extra = set(doc) - _BENCH_KEYS
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown benchmark key")
        for key in ("dims", "ranks", "densities", "row_cards"):
            if key not in doc:
                raise ConfigError(key, "missing required key")
        dims = tuple(int(d) for d in doc["dims"])
        cards = tuple(
            tuple(int(x) for x in c) if isinstance(c, (list, tuple)) else (int(c),) * len(dims)
            for c in doc["row_cards"]
        )
        trials = int(doc.get("trials", 1))
        if trials < 1:
            raise ConfigError("trials", "must be at least 1")
        solver = dict(doc.get("solver") or {})
        bad = set(solver) & {"ranks", "row_cards", "seed"}
        if bad:
            raise ConfigError(f"solver.{sorted(bad)[0]}", "set at the top level of the benchmark")
        return cls(
            dims=dims,
            ranks=tuple(int(r) for r in doc["ranks"]),
            densities=tuple(float(x) for x in doc["densities"]),
            row_cards=cards,
            trials=trials,
            seed=int(doc.get("seed", 0)),
            fixed_instance=bool(doc.get("fixed_instance", True)),
            magnitude=doc.get("magnitude"),
            solver=solver,
        )


def run_benchmark(cfg: BenchConfig, results_path, timings_path=None) -> list[dict]:
    """Run every (density, row_cards, trial) combination and write one CSV row each.

    Infeasible points are recorded with ``status`` set to the error message.
    """
    rows, timings = [], []
    grid = list(itertools.product(enumerate(cfg.densities), cfg.row_cards))
    for point, ((di, density), cards) in enumerate(grid):
        for trial in range(cfg.trials):
            # instances are shared across row_cards values so sweeps are paired
            inst_seed = cfg.seed + 1000 * di + (0 if cfg.fixed_instance else trial)
            sample_seed = cfg.seed + trial
            row = {"point": point, "density": density, "row_cards": "x".join(map(str, cards)),
                   "trial": trial, "instance_seed": inst_seed, "sample_seed": sample_seed}
            tic = time.perf_counter()
            try:
                inst = planted_instance(cfg.dims, cfg.ranks, density, cfg.magnitude, seed=inst_seed)
                sc = SolverConfig(ranks=cfg.ranks, row_cards=cards, seed=sample_seed, **(cfg.solver or {}))
                res = solve(inst.observed, sc)
                m = recovery_metrics(res, inst, floor=sc.epsilon)
            except (ValueError, TypeError) as exc:
                row["status"] = f"error: {exc}"
            else:
                row.update(
                    status="ok", iterations=res.iterations, converged=int(res.converged),
                    final_residual=repr(res.trace[-1].residual),
                    low_rank_error=repr(m.low_rank_error), sparse_error=repr(m.sparse_error),
                    precision=repr(m.precision), recall=repr(m.recall),
                    decay_ratio=repr(m.decay_ratio), decay_r2=repr(m.decay_r2),
                )
            timings.append({"point": point, "trial": trial,
                            "wall_ms": f"{1e3 * (time.perf_counter() - tic):.3f}"})
            rows.append(row)
    _write_csv(results_path, RESULT_COLUMNS, rows)
    if timings_path is not None:
        _write_csv(timings_path, TIMING_COLUMNS, timings)
    return rows


def _write_csv(path, columns, rows) -> None:
    with atomic_writer(path, newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, restval="")
        w.writeheader()
        w.writerows(rows)


def load_bench_config(path) -> BenchConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON ({exc})") from None
    return BenchConfig.from_dict(doc)
