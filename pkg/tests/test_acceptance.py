"""Acceptance criteria C1 to C10, each logged as one pass/fail line."""

import time

import numpy as np
import pytest

from fragmatch.behavior import Assumption, OptimismParams, sample_gumbel
from fragmatch.cli import main
from fragmatch.estimation.data import EstimationDataset
from fragmatch.estimation.fit import Model, fit
from fragmatch.estimation.gradcheck import gradient_check
from fragmatch.estimation.likelihood import Theta, loglik_oett, loglik_stt, loglik_wtt
from fragmatch.evaluation import multiplier, travel_time_equivalent
from fragmatch.market import ExplicitPriorities, weakly_dominates
from fragmatch.mechanisms import deferred_acceptance, run_all_mechanisms, serial_dictatorship
from fragmatch.oracle import check_corpus
from fragmatch.simulate import run_batch
from fragmatch.synth import choice_data, generate_market, grid_city

pytestmark = pytest.mark.slow

MC_DRAWS = 10**6
BETA = 3.3


def test_c1_oracle_equivalence(record):
    t0 = time.perf_counter()
    report = check_corpus(seed=0, count=1000)
    elapsed = time.perf_counter() - t0
    ok = not report.failures and elapsed < 60
    record("C1 oracle equivalence", ok, f"{report.count - len(report.failures)}/1000 markets, {elapsed:.1f}s")
    assert ok, report.failures[:5]


def test_c2_dominance_chain(record):
    config = grid_city(scale=0.008, seed=2)
    chain = (("m4", "m1"), ("m4", "m2"), ("m4", "m3"), ("m2", "m1"), ("m3", "m1"))
    passed, sizes = 0, []
    for k in range(200):
        sm = generate_market(config, k)
        sizes.append(sm.market.n_students)
        out = run_all_mechanisms(sm.market, sm.priorities, sm.m4_priorities)
        passed += all(weakly_dominates(out[a], out[b], sm.market) for a, b in chain)
    ok = passed == 200
    record("C2 dominance chain", ok, f"{passed}/200 markets, mean size {np.mean(sizes):.0f} students")
    assert ok


def test_c3_da_equals_sd_under_master_priority(record):
    rng = np.random.default_rng(3)
    same = 0
    for _ in range(200):
        n, m = int(rng.integers(5, 60)), int(rng.integers(2, 12))
        caps = rng.integers(1, 5, m)
        rols = [tuple(int(s) for s in rng.permutation(m)[: rng.integers(0, m + 1)]) for _ in range(n)]
        master = [int(i) for i in rng.permutation(n)]
        da = deferred_acceptance(rols, ExplicitPriorities([master] * m, n), caps)
        same += da == serial_dictatorship(master, rols, caps)
    record("C3 DA equals SD", same == 200, f"{same}/200 instances")
    assert same == 200


# --- C4: likelihoods against simulated reports -------------------------------


def _fixture(k):
    rng = np.random.default_rng(100 + k)
    F = 4
    beta = float(rng.uniform(0.5, 2.0))
    alpha = rng.normal(0, 1, F)
    d = rng.uniform(0.1, 2.0, F)
    score = float(rng.uniform(0, 10))
    cut = np.concatenate([[0.0, 0.0], rng.uniform(score, score + 6, F - 2)])
    rng.shuffle(cut)
    psi = OptimismParams(float(rng.uniform(1, 3)), float(rng.uniform(0.3, 1.0)))
    v = alpha - beta * d
    rol = tuple(int(f) for f in np.argsort(-v)[:2])
    return Theta(beta, alpha), d, score, cut, psi, v, rol


def _within(p_hat, p, se):
    return abs(p_hat - p) <= 3 * se


def _report_frequencies(v, rol, score, cut, psi, rng):
    """Share of simulated lists equal to ``rol`` under each behavior, by direct list construction."""
    N, F = MC_DRAWS, v.size
    U = v + rng.gumbel(size=(N, F))
    outside = rng.gumbel(size=N)
    r1, r2 = rol

    # strict: everything above the outside option, best first, at most three entries
    order = np.argsort(-U, axis=1)
    top = np.take_along_axis(U, order, axis=1)
    stt = (order[:, 0] == r1) & (order[:, 1] == r2) & (top[:, 1] > outside) & (top[:, 2] < outside)
    # weak: the two best schools
    wtt = (order[:, 0] == r1) & (order[:, 1] == r2)
    # optimistic: the two best among schools whose cutoff is within reach
    o = rng.gamma(psi.kappa, 1 / psi.lam, N)
    reach = cut[None, :] <= score + o[:, None]
    Ur = np.where(reach, U, -np.inf)
    order_r = np.argsort(-Ur, axis=1)
    second = np.take_along_axis(Ur, order_r[:, 1:2], axis=1)[:, 0]
    oett = (order_r[:, 0] == r1) & (order_r[:, 1] == r2) & np.isfinite(second)
    return {"stt": stt.mean(), "wtt": wtt.mean(), "oett": oett.mean()}


def _oett_mc_integral(v, rol, score, cut, psi, rng):
    """Average over optimism draws of the closed-form list probability given the reachable set."""
    o = rng.gamma(psi.kappa, 1 / psi.lam, MC_DRAWS)
    reach = cut[None, :] <= score + o[:, None]
    ev = np.exp(v)
    r1, r2 = rol
    total = (reach * ev).sum(axis=1)
    prob = np.where(reach[:, r1] & reach[:, r2], ev[r1] / total * ev[r2] / (total - ev[r1]), 0.0)
    return prob.mean(), prob.std(ddof=1) / np.sqrt(MC_DRAWS)


def test_c4_likelihoods_match_simulation(record):
    rng = np.random.default_rng(4)
    checks, bad = 0, []
    for k in range(10):
        theta, d, score, cut, psi, v, rol = _fixture(k)
        base = dict(rols=(rol,), distance=d[None, :])
        exact = {
            "stt": np.exp(loglik_stt(theta, EstimationDataset(**base, k_max=3))),
            "wtt": np.exp(loglik_wtt(theta, EstimationDataset(**base))),
            "oett": np.exp(loglik_oett(theta, EstimationDataset(**base, scores=np.array([score]),
                                                                cutoffs=cut[None, :]), psi)),
        }
        freq = _report_frequencies(v, rol, score, cut, psi, rng)
        for model, p in exact.items():
            checks += 1
            if not _within(freq[model], p, np.sqrt(p * (1 - p) / MC_DRAWS)):
                bad.append((k, model, p, freq[model]))
        mean, se = _oett_mc_integral(v, rol, score, cut, psi, rng)
        checks += 1
        if not _within(mean, exact["oett"], se):
            bad.append((k, "oett-integral", exact["oett"], mean))
    ok = not bad
    record("C4 likelihood vs Monte Carlo", ok, f"{checks - len(bad)}/{checks} comparisons within 3 SE")
    assert ok, bad


def test_c5_gradients(record):
    rng = np.random.default_rng(5)
    F, worst = 6, 0.0
    for _ in range(20):
        for assumption, fn, with_psi in (
            (Assumption.STT, loglik_stt, False),
            (Assumption.WTT, loglik_wtt, False),
            (Assumption.OETT, loglik_oett, True),
        ):
            data, _ = choice_data(assumption, rng, n=50, n_facilities=F)
            x = np.concatenate([[rng.uniform(0.5, 5)], rng.normal(size=F)])
            if with_psi:
                x = np.concatenate([x, [rng.uniform(0.5, 4), rng.uniform(0.05, 1.0)]])

            def f(z, fn=fn, data=data, with_psi=with_psi):
                return fn(Theta.from_vector(z, F, with_psi), data, want_grad=True)

            worst = max(worst, gradient_check(f, x))
    ok = worst < 1e-4
    record("C5 gradient checks", ok, f"max relative error {worst:.2e} over 20 points x 3 likelihoods")
    assert ok


def test_c6_parameter_recovery(record):
    rng = np.random.default_rng(6)
    bands = {Model.STT: 0.05, Model.WTT: 0.05, Model.OETT: 0.05, Model.USS: 0.15}
    needed = {Model.STT: 90, Model.WTT: 90, Model.OETT: 90, Model.USS: 80}
    hits = {m: 0 for m in bands}
    for _ in range(100):
        for model, band in bands.items():
            data, _ = choice_data(Assumption(model.value), rng)
            hits[model] += abs(fit(model, data).theta.beta - BETA) <= band * BETA
    ok = all(hits[m] >= needed[m] for m in bands)
    detail = ", ".join(f"{m.value} {hits[m]}/100 (need {needed[m]})" for m in bands)
    record("C6 parameter recovery", ok, detail)
    assert ok


# --- C7 and C8 share one batch ------------------------------------------------


@pytest.fixture(scope="module")
def city_batch():
    config = grid_city(scale=0.1, seed=7)
    t0 = time.perf_counter()
    results = run_batch(config, runs=20, workers=1)
    return config, results, time.perf_counter() - t0


def _stat(results, mech, pop, column):
    idx = {"avg_utility": 7, "interregional_match_rate": 5}[column]
    return np.array([next(r[idx] for r in res.stats if r[1] == mech and r[2] == pop) for res in results])


def test_c7_counterfactual_pattern(record, city_batch):
    config, results, elapsed = city_batch
    u = {m: _stat(results, m, "all", "avg_utility").mean() for m in ("m1", "m2", "m3", "m4")}
    rate = {m: _stat(results, m, "all", "interregional_match_rate").mean() for m in ("m1", "m2", "m3", "m4")}
    capture = (u["m3"] - u["m1"]) / (u["m4"] - u["m1"])
    mult = [r[-1] for res in results for r in res.decomposition if r[1] in ("m2", "m3") and not np.isnan(r[-1])]
    students = sum(config.applicant_counts().values())
    regions = len({s.region for s in config.subdivisions})
    checks = {
        "utility order": u["m1"] < u["m2"] <= u["m3"] + 1e-9 and u["m3"] < u["m4"],
        "capture in (0,1)": 0 < capture < 1,
        "interregional order": rate["m2"] <= rate["m3"] < rate["m4"],
        "multiplier > 1": all(m > 1 for m in mult),
        "runtime": elapsed < 600,
        "shape": regions == 23 and 5000 <= students <= 7000,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    detail = (f"{regions} regions, {students} students, {elapsed:.0f}s; utility "
              + " ".join(f"{m}={u[m]:.4f}" for m in u) + f"; capture {capture:.3f}; "
              + f"{len(mult)} multipliers, min {min(mult, default=float('nan')):.3f}"
              + (f"; failed: {', '.join(failed)}" if failed else ""))
    record("C7 counterfactual pattern", ok, detail)
    assert ok


def test_c8_border_children_gain_more(record, city_batch):
    _, results, _ = city_batch
    gain_all = _stat(results, "m3", "all", "avg_utility") - _stat(results, "m1", "all", "avg_utility")
    gain_border = _stat(results, "m3", "border", "avg_utility") - _stat(results, "m1", "border", "avg_utility")
    wins = int((gain_border > gain_all).sum())
    record("C8 border heterogeneity", wins >= 18, f"border gain above overall gain in {wins}/20 runs")
    assert wins >= 18


def test_c9_plug_ins(record):
    m = multiplier(72.6, 27.4)
    tte = travel_time_equivalent(0.333, 3.945)
    x = sample_gumbel(np.random.default_rng(9), 10**6)
    checks = [
        abs(m - 1.378) <= 1e-3,
        abs(tte - 8.4) <= 0.05,
        abs(x.mean() - 0.5772) <= 0.01,
        abs(x.std() - 1.2825) <= 0.01,
    ]
    ok = all(checks)
    record("C9 plug-ins", ok, f"multiplier {m:.4f}, travel-time {tte:.3f}%, "
                               f"Gumbel mean {x.mean():.4f} sd {x.std():.4f}")
    assert ok


def test_c10_worker_count_does_not_change_output(record, tmp_path, capsys):
    cfg = tmp_path / "city.ini"
    cfg.write_text("[layout]\nkind = grid\nscale = 0.01\n\n[simulation]\nruns = 4\n")
    same = 0
    for seed in (1, 2, 3):
        outputs = []
        for workers in (1, 4):
            out = tmp_path / f"s{seed}w{workers}"
            assert main(["simulate", "--config", str(cfg), "--seed", str(seed), "--workers", str(workers),
                         "--out", str(out)]) == 0
            outputs.append((out / "stats.csv").read_bytes())
        same += outputs[0] == outputs[1]
    capsys.readouterr()
    record("C10 determinism", same == 3, f"{same}/3 seeds byte-identical across 1 and 4 workers")
    assert same == 3
