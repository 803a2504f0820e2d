"""Acceptance criteria, each at its stated tolerance and time budget.

Every test prints one ``CRITERION k: PASS|FAIL`` line (also collected in the
terminal summary) before asserting.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from pspin.cli import run
from pspin.constants import ModelParams, omega_fn, solve_constants, stieltjes_semicircle, theta_p, theta_p_prime
from pspin.critical_points import completeness_check
from pspin.hamiltonian import verify_covariance_structure
from pspin.kac_rice import KacRiceDensity, intensity_nu
from pspin.perturbation import run_extremal, run_perturb
from pspin.random_matrix import abs_det_gap, expected_det_hermite, expected_det_mc, plancherel_rotach_check


def _verdict(log, k, ok, elapsed, budget, detail):
    in_time = elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"CRITERION {k}: {status} ({elapsed:.1f}s of {budget:.0f}s) {detail}"
    print(line)
    log.append(line)
    assert ok, line
    assert in_time, line


def _strictly_decreasing(xs):
    return all(b < a for a, b in zip(xs, xs[1:]))


def _c0_quadrature(c):
    z = c.gamma_p * c.E_0
    f = lambda t: 2.0 * math.cos(t) ** 2 / math.pi / (z - 2.0 * math.sin(t))
    s, _ = integrate.quad(f, -math.pi / 2, math.pi / 2, epsabs=1e-14, epsrel=1e-14)
    return 0.5 * c.gamma_p * s


def test_criterion_1_constants(acceptance_log):
    t0 = time.perf_counter()
    worst = {"theta": 0.0, "c0": 0.0, "omega": 0.0, "theta_prime": 0.0}
    for p in range(3, 13):
        c = solve_constants(p, 100)
        worst["theta"] = max(worst["theta"], abs(theta_p(-c.E_0, p)))
        closed = 0.5 * c.gamma_p * stieltjes_semicircle(c.gamma_p * c.E_0)
        identity = 0.5 * c.E_0 - 0.5 * c.c_p
        quad = _c0_quadrature(c)
        worst["c0"] = max(worst["c0"], abs(closed - quad), abs(closed - identity), abs(quad - identity))
        # 20 points below zero, kept off the kink at -E_inf
        us = np.linspace(-3.5, -0.05, 20)
        us = np.where(np.abs(us + c.E_inf) < 1e-3, us + 2e-3, us)
        h = 1e-6
        for u in us:
            fd = (theta_p(u + h, p) - theta_p(u - h, p)) / (2 * h)
            worst["theta_prime"] = max(worst["theta_prime"], abs(theta_p_prime(u, p) - fd))
    for x in (2.0, -2.0):
        worst["omega"] = max(worst["omega"], abs(omega_fn(x * (1 + 5e-10)) - omega_fn(x * (1 - 5e-10))))
    ok = worst["theta"] < 1e-10 and worst["c0"] < 1e-8 and worst["omega"] < 1e-8 and worst["theta_prime"] < 1e-7
    detail = " ".join(f"{k}={v:.2e}" for k, v in worst.items())
    _verdict(acceptance_log, 1, ok, time.perf_counter() - t0, 1.0, detail)


def test_criterion_2_covariance(acceptance_log):
    t0 = time.perf_counter()
    max_z, max_fd, count = 0.0, 0.0, 0
    for p in (3, 4):
        rep = verify_covariance_structure(ModelParams(p, 5), trials=10_000, seed=0)
        for e in rep["entries"]:
            max_z = max(max_z, abs(e["z"]))
            max_fd = max(max_fd, abs(e["kernel_derivative"] - e["target"]))
            count += 1
    ok = max_z <= 3.0 and max_fd <= 1e-6
    _verdict(acceptance_log, 2, ok, time.perf_counter() - t0, 60.0, f"entries={count} max|z|={max_z:.2f} max_fd_err={max_fd:.1e}")


def test_criterion_3_hermite_determinant(acceptance_log):
    t0 = time.perf_counter()
    max_z = 0.0
    for n in range(1, 9):
        for v in (-3.0, -1.0, 0.0, 1.0, 3.0):
            s, la = expected_det_hermite(n, v)
            est, se = expected_det_mc(n, v, 10**6, seed=n)
            max_z = max(max_z, abs(est - s * math.exp(la)) / se)
    sym = 0.0
    for v in np.linspace(-3, 3, 13):
        s1, l1 = expected_det_hermite(1, float(v))
        s2, l2 = expected_det_hermite(2, float(v))
        sym = max(sym, abs(s1 * math.exp(l1) + v), abs(s2 * math.exp(l2) - (v * v - 0.5)))
    ok = max_z <= 3.0 and sym <= 1e-10
    _verdict(acceptance_log, 3, ok, time.perf_counter() - t0, 600.0, f"max|z|={max_z:.2f} symbolic_err={sym:.1e}")


def test_criterion_4_abs_det_gap(acceptance_log):
    t0 = time.perf_counter()
    table, ok = {}, True
    for v in (2.2, 2.5, 3.0):
        gaps = [abs_det_gap(n, v, 200_000, seed=7)["relative_gap"] for n in (10, 20, 40)]
        table[v] = gaps
        # an all-zero tail (no eigenvalue reached v in any sample) counts as non-increasing
        ok &= all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(gaps, gaps[1:]))
    detail = " ".join(f"v={v}:[" + ",".join(f"{g:.2e}" for g in gs) + "]" for v, gs in table.items())
    _verdict(acceptance_log, 4, ok, time.perf_counter() - t0, 600.0, detail)


def test_criterion_5_plancherel_rotach(acceptance_log):
    t0 = time.perf_counter()
    rows = plancherel_rotach_check([50, 100, 200], -1.5)["rows"]
    scaled = [abs(r["n_times_relative_error"]) for r in rows]
    errs = [abs(r["relative_error"]) for r in rows]
    bounded = max(scaled) <= 2.0 * min(scaled)
    signs = all(r["sign_matches"] for r in rows)
    ok = bounded and _strictly_decreasing(errs) and signs
    detail = (
        f"n*err={[round(s, 4) for s in scaled]} err_decreasing={_strictly_decreasing(errs)} "
        f"sign(-1)^(n-1)_matches={[r['sign_matches'] for r in rows]}"
    )
    _verdict(acceptance_log, 5, ok, time.perf_counter() - t0, 60.0, detail)


@pytest.mark.slow
def test_criterion_6_kac_rice_vs_enumeration(acceptance_log):
    t0 = time.perf_counter()
    ok, parts = True, []
    for p, N in ((3, 5), (4, 4)):
        r = completeness_check(ModelParams(p, N), 3.0, 200, 20_000, seed=2024)
        t = r["total"]
        ok &= t["within_3se"] and r["pair_identity_all"] and r["all_counts_even"]
        parts.append(
            f"p={p},N={N}: mean={t['empirical_mean']:.3f}+-{t['combined_se']:.3f} KR={t['kac_rice']:.3f} z={t['z']:.2f} "
            f"pairs={r['pair_identity_all']} even={r['all_counts_even']}"
        )
    _verdict(acceptance_log, 6, ok, time.perf_counter() - t0, 1800.0, "; ".join(parts))


@pytest.mark.slow
def test_criterion_7_intensity_convergence(acceptance_log):
    t0 = time.perf_counter()
    Ns = (20, 40, 80, 160)
    nu0, ratio = [], {-2.0: [], 2.0: []}
    for N in Ns:
        c = solve_constants(3, N)
        d = KacRiceDensity(ModelParams(3, N), c)
        nu0.append(intensity_nu(0.0, d)[0])
        for x in ratio:
            ratio[x].append(math.log(intensity_nu(x, d)[0]) / (c.c_p * x))
    monotone = _strictly_decreasing([abs(v - 1) for v in nu0]) and all(
        _strictly_decreasing([abs(r - 1) for r in rs]) for rs in ratio.values()
    )
    final = max(abs(rs[-1] - 1) for rs in ratio.values())
    ok = monotone and final <= 0.05
    detail = (
        f"nu(0)={[round(v, 4) for v in nu0]} "
        + " ".join(f"ratio(x={x:+g})={[round(r, 4) for r in rs]}" for x, rs in ratio.items())
        + f" max_rel_err(N=160)={final:.3f}"
    )
    _verdict(acceptance_log, 7, ok, time.perf_counter() - t0, 1800.0, detail)


@pytest.mark.slow
def test_criterion_8_perturbation(acceptance_log):
    t0 = time.perf_counter()
    ok, parts, medians = True, [], []
    for N in (12, 24, 48):
        s = run_perturb(ModelParams(3, N), 100, 3.0, 0.45, 100, seed=31)["shifts"]
        rate_ok = s["match_rate"] >= 0.9
        mean_ok = abs(s["mean_z"]) <= 3.0
        var_ok = abs(s["variance_z"]) <= 3.0
        corr_ok = abs(s["pair_correlation"]) <= 3.0 * s["pair_correlation_se"]
        ok &= rate_ok and mean_ok and var_ok and corr_ok
        medians.append(s["median_abs_residual"])
        parts.append(
            f"N={N}: rate={s['match_rate']:.3f} mean={s['mean']:.3f}(z={s['mean_z']:.2f}) "
            f"var={s['variance']:.3f}(z={s['variance_z']:.2f}) corr={s['pair_correlation']:.3f}+-{s['pair_correlation_se']:.3f} "
            f"med|res|={s['median_abs_residual']:.4f}"
        )
    ok &= _strictly_decreasing(medians)
    _verdict(acceptance_log, 8, ok, time.perf_counter() - t0, 7200.0, "; ".join(parts))


@pytest.mark.slow
def test_criterion_9_extremal(acceptance_log):
    t0 = time.perf_counter()
    ks, parts = [], []
    for N in (16, 24, 32):
        params = ModelParams(3, N)
        r = run_extremal(params, 500, 3.0, 100, seed=47, density=KacRiceDensity(params))
        ks.append(r["gumbel"]["ks_statistic"])
        last = r
        parts.append(f"N={N}: KS={ks[-1]:.4f} excluded={r['gumbel']['excluded']}")
    bins = last["poisson"]["bins"]
    disp = [b["dispersion"] for b in bins]
    smr = last["poisson"]["window"]["second_moment_ratio"]
    recorded = all("disorder_seed" in row for row in last["instances"]) and last["seed"] == 47
    ok = (
        all(0.7 <= d <= 1.3 for d in disp)
        and smr <= 1.2
        and all(b <= a for a, b in zip(ks, ks[1:]))
        and recorded
    )
    detail = "; ".join(parts) + f"; N=32 dispersion={[round(d, 3) for d in disp]} second_moment_ratio={smr:.3f}"
    _verdict(acceptance_log, 9, ok, time.perf_counter() - t0, 7200.0, detail)


def test_criterion_10_reproducibility(acceptance_log, tmp_path, monkeypatch):
    monkeypatch.delenv("PSPIN_THREADS", raising=False)
    t0 = time.perf_counter()
    commands = [
        ["rmt", "--dim", "4,10", "--shift", "0,2.5", "--samples", "5000", "--seed", "11"],
        ["kacrice", "--p", "3", "--N", "16", "--grid", "3", "--method", "mc", "--samples", "2000", "--seed", "11"],
        ["enumerate", "--p", "3", "--N", "5", "--restarts", "2000", "--seed", "11"],
        ["extremal", "--p", "3", "--N", "10", "--samples", "4", "--restarts", "40", "--seed", "11"],
        ["perturb", "--p", "3", "--N", "10", "--samples", "4", "--restarts", "40", "--seed", "11"],
    ]
    same = {}
    for argv in commands:
        outs = []
        for threads in ("1", "2"):
            path = tmp_path / f"{argv[0]}-{threads}.json"
            assert run(argv + ["--threads", threads, "--no-timing", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        same[argv[0]] = outs[0] == outs[1]
    ok = all(same.values())
    _verdict(acceptance_log, 10, ok, time.perf_counter() - t0, 60.0, " ".join(f"{k}={v}" for k, v in same.items()))
