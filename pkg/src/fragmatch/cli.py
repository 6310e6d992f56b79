"""Command-line entry point. Errors go to stderr as one JSON object per line."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .behavior import DistanceMetric, UtilityForm, benchmark_cutoffs, market_distances
from .config import config_hash, load_config
from .errors import FragmatchError, InputError
from .estimation.data import from_market
from .estimation.fit import FitConfig, Model, fit
from .estimation.outside import fit_interval_mle, simulated_intervals
from .evaluation import area_level_fit, interregional
from .io import load_market, read_areas, read_matching, write_csv, write_matching
from .market import MarketInstance, RegionScheme, validate_market
from .mechanisms import MechanismId, run_mechanism
from .oracle import check_corpus
from .simulate import run_batch, write_outputs
from .synth import PriorityMode, build_priorities


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def cmd_validate(args) -> int:
    files = load_market(args.market)
    violations = validate_market(files.market)
    violations += RegionScheme.cross_age(files.market).violations()
    for v in violations:
        print(json.dumps(v.as_dict()))
    if not violations:
        print(json.dumps({"ok": True, "students": files.market.n_students, "schools": files.market.n_schools}))
    return 1 if violations else 0


def _scheme(market, name: str) -> RegionScheme:
    return RegionScheme.age_specific(market) if name == "age" else RegionScheme.cross_age(market)


def cmd_mech(args) -> int:
    files = load_market(args.market)
    market = files.market
    if args.seed is not None and not files.has_tiebreak:
        # no tie-break column: draw a uniform order among equal scores
        rng = np.random.default_rng(args.seed)
        ranks = rng.permutation(market.n_students) + 1
        students = [replace(s, tiebreak_rank=int(r)) for s, r in zip(market.students, ranks)]
        market = MarketInstance(students, market.schools)
    pri = market.priorities
    pri4 = None
    if args.m4_priority == "master":
        order = np.argsort(pri.master_rank, kind="stable")
        pri4 = build_priorities(order, market, PriorityMode.MASTER_DIRECT)
    mu = run_mechanism(args.mechanism, market, pri, pri4)
    write_matching(args.out, mu.assign)
    cross = interregional(mu, _scheme(market, args.scheme))
    print(json.dumps({
        "mechanism": args.mechanism, "matched": int((mu.assign >= 0).sum()),
        "interregional": int(cross.sum()), "out": str(args.out),
    }))
    return 0


def cmd_estimate(args) -> int:
    files = load_market(args.data)
    market = files.market
    model = Model(args.model)
    dist = market_distances(market, args.metric, files.travel)
    cutoffs = files.cutoffs
    if cutoffs is None and files.matching is not None:
        cutoffs = benchmark_cutoffs(files.matching, market)
    if model is Model.OETT and cutoffs is None:
        raise InputError("optimistic lists need a cutoff column or a matching.csv", path=str(args.data))
    if model is Model.USS and files.matching is None:
        raise InputError("the moment estimator needs matching.csv", path=str(args.data))
    data = from_market(market, dist, form=args.form, matching=files.matching, cutoffs=cutoffs,
                       k_max=args.k_max)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        kept = data.drop_unlisted()
    config = FitConfig(standard_errors=model is not Model.USS, bootstrap=args.bootstrap if model is Model.USS else 0,
                       seed=args.seed)
    res = fit(model, kept, config)
    theta = res.theta

    alpha_bar, divergent = 0.0, False
    if model in (Model.WTT, Model.OETT):
        V = theta.alpha[None, :] - theta.beta * kept.covariate
        avail = kept.available if kept.available is not None else np.ones_like(V, dtype=bool)
        upper, lower = simulated_intervals(
            V, avail, kept.lengths, np.random.default_rng(args.seed), args.sims, args.ell,
            cutoffs=kept.cutoffs, scores=kept.scores, psi=theta.psi if model is Model.OETT else None,
        )
        est = fit_interval_mle(upper, lower)
        divergent = est.divergent
        alpha_bar = est.alpha_bar if not divergent else float("nan")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    se = res.se
    free = [f for f in range(len(theta.alpha)) if f != res.reference]

    def se_at(k: int | None) -> str:
        return "" if se is None or k is None or not np.isfinite(se[k]) else repr(float(se[k]))

    rows = [("beta", "", repr(theta.beta), se_at(0), repr(theta.beta))]
    for f, a in enumerate(theta.alpha):
        k = 1 + free.index(f) if f in free else None
        shifted = a - alpha_bar if np.isfinite(alpha_bar) else float("nan")
        rows.append(("alpha", int(res.facility_ids[f]), repr(float(a)), se_at(k), repr(float(shifted))))
    if theta.psi is not None:
        n = 1 + len(free)
        rows.append(("kappa", "", repr(theta.psi.kappa), se_at(n), repr(theta.psi.kappa)))
        rows.append(("lambda", "", repr(theta.psi.lam), se_at(n + 1), repr(theta.psi.lam)))
    write_csv(out / "params.csv", ("parameter", "facility", "estimate", "se", "shifted"), rows)
    report = {
        "model": model.value, "form": args.form, "metric": args.metric, "n": kept.n,
        "facilities": int(len(theta.alpha)), "objective": res.objective, "gradient_norm": res.grad_norm,
        "iterations": res.iterations, "message": res.message, "reference_facility":
            None if res.reference is None else int(res.facility_ids[res.reference]),
        "outside_option_mean": None if np.isnan(alpha_bar) else alpha_bar, "outside_option_divergent": divergent,
        "ell": args.ell, "se_method": "bootstrap" if model is Model.USS else "inverse numerical Hessian",
        "trace": res.trace,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"model": model.value, "beta": theta.beta, "out": str(out)}))
    return 0


def cmd_fit_score(args) -> int:
    areas = read_areas(args.areas)
    school_ages = None
    populations = None
    if args.market is not None:
        market = load_market(args.market).market
        n, m = market.n_students, market.n_schools
        school_ages = market.school_age
        ages, counts = np.unique(market.student_age, return_counts=True)
        populations = {int(a): float(c) for a, c in zip(ages, counts)}
    else:
        n, m = None, max(areas, default=-1) + 1
    sim = read_matching(args.sim, n, m)
    actual = read_matching(args.actual, sim.n_students, m)
    missing = [s for s in range(m) if s not in areas]
    if missing:
        raise InputError(f"no area for school {missing[0]}", path=str(args.areas))
    if school_ages is None:
        school_ages = np.zeros(m, dtype=np.int64)
    area = np.array([areas[s] for s in range(m)])
    score = area_level_fit(sim, actual, area, school_ages, populations, weighted=not args.unweighted)
    print(repr(score))
    return 0


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    runs = args.runs if args.runs is not None else config.runs
    results = run_batch(config, runs, args.workers)
    info = write_outputs(results, Path(args.out), config, save_matchings=not args.no_matchings)
    manifest = {
        "tool": "fragmatch", "version": __version__, "seed": config.seed, "runs": runs,
        "config": str(args.config), "config_sha256": config_hash(args.config),
        "stream_ids": info["stream_ids"], "outputs": info["outputs"],
    }
    (Path(args.out) / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"runs": runs, "out": str(args.out)}))
    return 0


def cmd_oracle(args) -> int:
    report = check_corpus(args.corpus_seed, args.count)
    for k, problems in report.failures:
        print(json.dumps({"market": k, "problems": list(problems)}))
    print(json.dumps({"count": report.count, "passed": report.passed}))
    return 0 if not report.failures else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fragmatch", description="Regional daycare matching toolkit")
    p.add_argument("--version", action="version", version=f"fragmatch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a market directory")
    v.add_argument("--market", required=True, type=Path)
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("mech", help="run one mechanism")
    m.add_argument("--market", required=True, type=Path)
    m.add_argument("--mechanism", required=True, choices=[x.value for x in MechanismId])
    m.add_argument("--scheme", choices=["cross", "age"], default="cross",
                   help="regions used when counting interregional matches")
    m.add_argument("--seed", type=int, default=None, help="tie-break seed when students.csv has no tiebreak column")
    m.add_argument("--m4-priority", choices=["locals", "master"], default="locals")
    m.add_argument("--out", type=Path, default=Path("matching.csv"))
    m.set_defaults(func=cmd_mech)

    e = sub.add_parser("estimate", help="estimate preference parameters")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--model", required=True, choices=[x.value for x in Model])
    e.add_argument("--form", choices=[x.value for x in UtilityForm], default="log")
    e.add_argument("--metric", choices=[x.value for x in DistanceMetric], default="time")
    e.add_argument("--ell", type=int, default=5)
    e.add_argument("--k-max", type=int, default=10)
    e.add_argument("--sims", type=int, default=20, help="shock draws for the outside-option calibration")
    e.add_argument("--bootstrap", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=Path, default=Path("."))
    e.set_defaults(func=cmd_estimate)

    f = sub.add_parser("fit-score", help="area-level placement error between two matchings")
    f.add_argument("--sim", required=True, type=Path)
    f.add_argument("--actual", required=True, type=Path)
    f.add_argument("--areas", required=True, type=Path)
    f.add_argument("--market", type=Path, default=None, help="market directory supplying ages")
    f.add_argument("--unweighted", action="store_true")
    f.set_defaults(func=cmd_fit_score)

    s = sub.add_parser("simulate", help="counterfactual batch over synthetic markets")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--workers", type=int, default=None, help="default: FRAGMATCH_WORKERS or 1")
    s.add_argument("--no-matchings", action="store_true")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="brute-force check on random small markets")
    o.add_argument("--corpus-seed", type=int, default=0)
    o.add_argument("--count", type=int, default=1000)
    o.set_defaults(func=cmd_oracle)
    return p


def _warning_as_json(message, category, filename, lineno, file=None, line=None) -> None:
    print(json.dumps({"warning": category.__name__, "message": str(message)}), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    warnings.showwarning = _warning_as_json
    try:
        return args.func(args)
    except InputError as err:
        _emit_error("InputError", str(err), path=err.path, line=err.line)
        return 2
    except FragmatchError as err:
        _emit_error(type(err).__name__, str(err))
        return 3


if __name__ == "__main__":
    sys.exit(main())
