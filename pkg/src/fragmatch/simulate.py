"""Counterfactual batch: generate markets, run the four mechanisms, summarize.

Runs are independent and may execute in worker processes; results are
merged by run index, so output bytes do not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DecompositionUndefined
from .evaluation import (
    CELLS,
    border_classification,
    improvement_decomposition,
    subdivision_stats,
    welfare_stats,
)
from .io import write_csv, write_matching
from .market import RegionScheme
from .mechanisms import MechanismId, run_all_mechanisms
from .rng import run_rng, run_stream_id
from .synth import GenConfig, generate_market

STATS_COLUMNS = (
    "run", "mechanism", "population", "n", "match_rate", "interregional_match_rate",
    "avg_rank", "avg_utility", "improved_ratio",
)
DECOMPOSITION_COLUMNS = ("run", "mechanism", "n_improved", *CELLS, "multiplier")
SUBDIVISION_COLUMNS = ("subdivision", "mechanism", "runs", "mean_n", "interregional_rate", "utility_improvement")
MECHANISMS = tuple(MechanismId)


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    return f"{x:.12g}"


@dataclass
class RunResult:
    run: int
    stats: list[tuple]
    decomposition: list[tuple]
    subdivision: list[tuple]
    matchings: dict[str, np.ndarray]


def run_once(config: GenConfig, run_index: int) -> RunResult:
    """One synthetic market through all four mechanisms.

    The run's stream first generates the market, then draws border flags.
    """
    rng = run_rng(config.seed, run_index)
    sm = generate_market(config, run_index, rng)
    market = sm.market
    border_x = np.array([s.border_fraction for s in config.subdivisions])
    border = border_classification(sm.subdivision, border_x, rng)
    outcomes = run_all_mechanisms(market, sm.priorities, sm.m4_priorities)
    scheme = RegionScheme.cross_age(market)
    base = outcomes[MechanismId.M1_REGIONWISE_SD]

    stats, decomposition, subdivision = [], [], []
    for mech in MECHANISMS:
        mu = outcomes[mech]
        for pop, mask in (("all", None), ("border", border)):
            w = welfare_stats(mu, market, sm.utilities, scheme, baseline=base, population=mask)
            stats.append((run_index, mech.value, pop, w.n, w.match_rate, w.interregional_match_rate,
                          w.avg_rank, w.avg_utility, w.improved_ratio))
        if mech is MechanismId.M1_REGIONWISE_SD:
            continue
        try:
            d = improvement_decomposition(mu, base, border, scheme, market)
        except DecompositionUndefined:
            decomposition.append((run_index, mech.value, 0, *([float("nan")] * len(CELLS)), float("nan")))
        else:
            decomposition.append((run_index, mech.value, d.n_improved, *(d.shares[c] for c in CELLS), d.multiplier))
        for row in subdivision_stats(mu, base, sm.utilities, sm.subdivision, scheme):
            subdivision.append((row.subdivision, mech.value, row.n, row.interregional_rate, row.utility_improvement))
    return RunResult(
        run_index, stats, decomposition, subdivision, {m.value: outcomes[m].assign for m in MECHANISMS}
    )


def _run_star(args):
    return run_once(*args)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("FRAGMATCH_WORKERS", "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError:
        return default


def run_batch(config: GenConfig, runs: int | None = None, workers: int | None = None) -> list[RunResult]:
    runs = config.runs if runs is None else runs
    workers = worker_count() if workers is None else workers
    jobs = [(config, k) for k in range(runs)]
    if workers <= 1 or runs <= 1:
        return [run_once(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
        results = list(pool.map(_run_star, jobs))
    return sorted(results, key=lambda r: r.run)


def _mean_sd(values: np.ndarray) -> tuple[float, float]:
    v = values[~np.isnan(values)]
    mean = float(v.mean()) if v.size else float("nan")
    sd = float(v.std(ddof=1)) if v.size > 1 else float("nan")
    return mean, sd


def _summary_rows(rows: list[tuple], key_len: int) -> list[tuple]:
    """Mean and sample-sd rows per key (columns 1..key_len-1); NaN entries are skipped."""
    groups: dict[tuple, list[tuple]] = {}
    for r in rows:
        groups.setdefault(tuple(r[1:key_len]), []).append(r)
    means, sds = [], []
    for key, members in groups.items():
        vals = np.array([m[key_len:] for m in members], dtype=float)
        pairs = [_mean_sd(vals[:, j]) for j in range(vals.shape[1])]
        means.append(("mean", *key, *(p[0] for p in pairs)))
        sds.append(("sd", *key, *(p[1] for p in pairs)))
    return means + sds


def _cells(rows: list[tuple]) -> list[tuple]:
    return [tuple(v if isinstance(v, str) else fmt(v) for v in r) for r in rows]


def aggregate_subdivisions(results: list[RunResult]) -> list[tuple]:
    acc: dict[tuple[int, str], list[tuple[int, float, float]]] = {}
    for r in results:
        for sub, mech, n, rate, gain in r.subdivision:
            acc.setdefault((sub, mech), []).append((n, rate, gain))
    out = []
    for (sub, mech) in sorted(acc, key=lambda k: (k[0], MECHANISMS.index(MechanismId(k[1])))):
        v = np.array(acc[sub, mech], dtype=float)
        out.append((sub, mech, len(v), v[:, 0].mean(), v[:, 1].mean(), v[:, 2].mean()))
    return out


def write_outputs(results: list[RunResult], out: Path, config: GenConfig, save_matchings: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    stats = [r for res in results for r in res.stats]
    write_csv(out / "stats.csv", STATS_COLUMNS, _cells(stats + _summary_rows(stats, 3)))
    dec = [r for res in results for r in res.decomposition]
    write_csv(out / "decomposition.csv", DECOMPOSITION_COLUMNS, _cells(dec + _summary_rows(dec, 2)))
    write_csv(out / "subdivision.csv", SUBDIVISION_COLUMNS, _cells(aggregate_subdivisions(results)))
    paths = ["stats.csv", "decomposition.csv", "subdivision.csv"]
    if save_matchings:
        (out / "matchings").mkdir(exist_ok=True)
        for res in results:
            for mech, assign in res.matchings.items():
                name = f"matchings/run{res.run:04d}_{mech}.csv"
                write_matching(out / name, assign)
                paths.append(name)
    return {"outputs": paths, "stream_ids": [f"{run_stream_id(config.seed, r.run):016x}" for r in results]}


def simulate(config: GenConfig, out: Path, runs: int | None = None, seed: int | None = None,
             workers: int | None = None, save_matchings: bool = True) -> list[RunResult]:
    if seed is not None:
        config = replace(config, seed=seed)
    results = run_batch(config, runs, workers)
    write_outputs(results, Path(out), config, save_matchings)
    return results

