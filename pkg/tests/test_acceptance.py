"""Acceptance criteria 1-12, one or more tests each.

A summary line per criterion is printed at the end of the session by the
hook in conftest.py.
"""

import json
import time

import numpy as np
import pytest

from contract_lab import cli
from contract_lab.bernoulli import phi_numeric
from contract_lab.contract import (
    k_star_expectation_form,
    mh_sign_predicate,
    risk_share_decomposition,
    sign_of_k,
    solve,
)
from contract_lab.mitigation import c_inv, decide_invest, mitigation_policy, solve_mitigation
from contract_lab.model import ConstantIntensity, FirstBest, Mitigation, ModelParams, MoralHazard
from contract_lab.simulate import SimConfig, policy_from_solution, simulate_paths
from contract_lab.verify import deviation_test, hamiltonian_argmin, hjb_residual, participation_binding

import oracles

N_TUPLES = 500
RK4_STEPS = 8192


def random_tuples(n, seed, gamma=(0.1, 5.0), kappa=(0.5, 4.0), lam=(0.0, 3.0), horizon=(0.25, 3.0)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p = ModelParams(
            float(rng.uniform(*gamma)),
            float(rng.uniform(*gamma)),
            float(rng.uniform(*kappa)),
            float(rng.uniform(*horizon)),
        )
        out.append((p, float(rng.uniform(*lam)), float(rng.uniform(0.5, 0.99)), float(rng.uniform(0.01, 0.5))))
    return out


TUPLES = random_tuples(N_TUPLES, 20240601)
BASE = ModelParams(1.0, 1.0, 1.0, 1.0)


def crit(n, title):
    return pytest.mark.criterion(n, title)


# -- 1 -----------------------------------------------------------------------


@crit(1, "closed form agrees with RK4 (500 tuples, FB/MH/mitigation, 1e-7, <= 60 s)")
def test_criterion_01_closed_form_matches_rk4():
    start = time.perf_counter()
    worst = 0.0
    for p, lam, theta, i in TUPLES:
        intensity = ConstantIntensity(lam)
        t = np.linspace(0.0, p.horizon, 1000)
        for variant in (FirstBest(), MoralHazard(), Mitigation(theta, i)):
            sol = solve(p, intensity, variant)
            rk4 = phi_numeric(sol.coef, p.horizon / RK4_STEPS)(t)
            worst = max(worst, float(np.max(np.abs(sol.phi0(t) - rk4) / rk4)))
    elapsed = time.perf_counter() - start
    print(f"max relative error {worst:.3g}, {elapsed:.1f} s")
    assert worst <= 1e-7
    assert elapsed <= 60.0


@crit(1, "closed form agrees with RK4 (500 tuples, FB/MH/mitigation, 1e-7, <= 60 s)")
def test_criterion_01_rk4_matches_raw_oracle():
    # the package RK4 itself against an adaptive solver on the raw equation
    for p, lam, _, _ in TUPLES[:25]:
        t = np.linspace(0.0, p.horizon, 50)
        for v, variant in (("fb", FirstBest()), ("mh", MoralHazard())):
            c1, c2 = oracles.coeffs(p.gamma_p, p.gamma_a, p.kappa, lam, v)
            ref = oracles.raw_phi(c1, c2, p.gamma_p, p.gamma_a, p.horizon, t)
            sol = solve(p, ConstantIntensity(lam), variant)
            rk4 = phi_numeric(sol.coef, p.horizon / RK4_STEPS)(t)
            np.testing.assert_allclose(rk4, ref, rtol=1e-9)


# -- 2 -----------------------------------------------------------------------


@crit(2, "terminal values, constant sign of K*, sign predicate (500 tuples)")
def test_criterion_02_terminal_and_sign():
    for p, lam, theta, i in TUPLES:
        intensity = ConstantIntensity(lam)
        for variant in (FirstBest(), MoralHazard(), Mitigation(theta, i)):
            sol = solve(p, intensity, variant)
            assert abs(sol.phi0(p.horizon) - 1.0) <= 1e-12
            assert abs(sol.k_star(p.horizon)) <= 1e-12
        for variant in (FirstBest(), MoralHazard()):
            sol = solve(p, intensity, variant)
            t = np.linspace(0.0, p.horizon, 101)[:-1]
            signs = set(np.sign(sol.k_star(t)).astype(int).tolist())
            expected = int(np.sign(float(sol.c1) + float(sol.c2)))
            assert signs == {expected}
            assert int(sign_of_k(p, variant)) == expected
        assert int(sign_of_k(p, MoralHazard())) == int(np.sign(mh_sign_predicate(p)))


# -- 3 -----------------------------------------------------------------------


@crit(3, "expectation form equals log-phi form within 1e-9 (100 points per tuple)")
def test_criterion_03_cross_representation():
    worst = 0.0
    for p, lam, _, _ in TUPLES:
        intensity = ConstantIntensity(lam)
        t = np.linspace(0.0, p.horizon, 100)
        for variant in (FirstBest(), MoralHazard()):
            sol = solve(p, intensity, variant)
            worst = max(worst, float(np.max(np.abs(k_star_expectation_form(p, intensity, variant, t) - sol.k_star(t)))))
    assert worst <= 1e-9


@crit(3, "expectation form equals log-phi form within 1e-9 (100 points per tuple)")
def test_criterion_03_expectation_by_quadrature():
    for p, lam, _, _ in TUPLES[:40]:
        for v, variant in (("fb", FirstBest()), ("mh", MoralHazard())):
            c1, c2 = oracles.coeffs(p.gamma_p, p.gamma_a, p.kappa, lam, v)
            sol = solve(p, ConstantIntensity(lam), variant)
            for t in (0.0, 0.5 * p.horizon):
                ref = oracles.k_expectation_quad(p.gamma_p, p.gamma_a, c1, c2, lam, p.horizon - t)
                assert abs(sol.k_star(t) - ref) <= 1e-9


# -- 4 -----------------------------------------------------------------------


@crit(4, "f is affine: chord deviation and slope within 1e-7")
def test_criterion_04_linearity():
    for p, lam, _, _ in TUPLES:
        for variant in (FirstBest(), MoralHazard()):
            sol = solve(p, ConstantIntensity(lam), variant)
            dec = risk_share_decomposition(sol, tol=np.inf)
            assert dec.max_chord_deviation <= 1e-7
            c1, c2 = oracles.coeffs(p.gamma_p, p.gamma_a, p.kappa, lam, "fb" if isinstance(variant, FirstBest) else "mh")
            assert abs(dec.measured_slope + (c1 + c2) / (p.gamma_p + p.gamma_a)) <= 1e-7


# -- 5 -----------------------------------------------------------------------

HJB_CASES = [
    (BASE, 1.0, FirstBest()),
    (BASE, 1.0, MoralHazard()),
    (ModelParams(1.0, 0.5, 1.0, 1.0), 1.0, Mitigation(0.9, 0.1)),
    (BASE, 0.0, MoralHazard()),
] + [(p, lam, v) for (p, lam, th, i) in TUPLES[:10] for v in (FirstBest(), MoralHazard(), Mitigation(th, i))]


@crit(5, "HJB residual <= 1e-5 x scale on 50x20x20; perturbed phi0 fails by >= 100x")
@pytest.mark.parametrize("case", range(len(HJB_CASES)))
def test_criterion_05_hjb_residual(case):
    p, lam, variant = HJB_CASES[case]
    intensity = ConstantIntensity(lam)
    rep = hjb_residual(p, intensity, variant)
    assert rep.grid["t"][2] == 50 and rep.grid["x"][2] == 20 and rep.grid["y"][2] == 20
    assert rep.passed, rep


@crit(5, "HJB residual <= 1e-5 x scale on 50x20x20; perturbed phi0 fails by >= 100x")
@pytest.mark.parametrize("case", range(4))
def test_criterion_05_negative_control(case):
    p, lam, variant = HJB_CASES[case]
    bad = hjb_residual(p, ConstantIntensity(lam), variant, phi_shift=0.01)
    print(f"perturbed residual / tolerance = {bad.max_rel_residual / bad.tolerance:.0f}")
    assert bad.max_rel_residual >= 100 * bad.tolerance


# -- 6 -----------------------------------------------------------------------


def _argmin_tuples():
    # controls must sit inside [-2, 2]: a* = 1/kappa < 2 and |K*| well below 2
    out = []
    for p, lam, th, i in random_tuples(200, 7, kappa=(0.6, 4.0)):
        sol = solve(p, ConstantIntensity(lam), FirstBest())
        if abs(sol.k_star(0.0)) < 1.5:
            out.append((p, lam))
        if len(out) == 20:
            break
    return out


ARGMIN_TUPLES = _argmin_tuples()


@crit(6, "grid argmin of the Hamiltonian within one cell of the closed form (20 tuples)")
@pytest.mark.parametrize("k", range(20))
def test_criterion_06_hamiltonian_argmin(k):
    p, lam = ARGMIN_TUPLES[k]
    intensity = ConstantIntensity(lam)
    for variant in (FirstBest(), MoralHazard()):
        sol = solve(p, intensity, variant)
        for t in (0.0, 0.5 * p.horizon, p.horizon):
            rep = hamiltonian_argmin(p, intensity, variant, t, sol=sol)
            assert rep.cell == 0.01
            assert rep.within_one_cell, rep
            assert rep.value_gap <= rep.gap_allowance, rep


# -- 7 -----------------------------------------------------------------------


@crit(7, "Monte-Carlo utilities match the closed-form targets (1e5 paths, 2048 steps)")
@pytest.mark.parametrize("variant", [MoralHazard(), FirstBest()], ids=["mh", "fb"])
def test_criterion_07_monte_carlo_values(variant):
    start = time.perf_counter()
    intensity = ConstantIntensity(1.0)
    v = "mh" if isinstance(variant, MoralHazard) else "fb"
    c1, c2 = oracles.coeffs(1.0, 1.0, 1.0, 1.0, v)
    target_phi = float(oracles.raw_phi(c1, c2, 1.0, 1.0, 1.0, [0.0])[0])
    assert abs(target_phi - (oracles.BASE_PHI0_MH if v == "mh" else oracles.BASE_PHI0_FB)) <= 1e-12
    sol = solve(BASE, intensity, variant)
    cfg = SimConfig(100_000, 2048, 20240601)
    rep = simulate_paths(BASE, intensity, policy_from_solution(sol), cfg)
    ua, ua_se = rep.agent_utility
    up, up_se = rep.principal_utility
    allowance = target_phi * (1.0 + BASE.gamma_p) * BASE.horizon / cfg.n_steps
    print(f"{v}: U_A={ua:.6f}+-{ua_se:.6f}  U_P={up:.6f}+-{up_se:.6f} target {-target_phi:.6f}")
    assert abs(ua + 1.0) <= 3 * ua_se
    assert abs(up + target_phi) <= 3 * up_se + allowance
    assert participation_binding(rep, BASE).binding
    assert time.perf_counter() - start <= 300


# -- 8 -----------------------------------------------------------------------


@crit(8, "optimal effort beats every default alternative by > 3 SE (1e5 paths)")
def test_criterion_08_incentive_compatibility():
    intensity = ConstantIntensity(1.0)
    sol = solve(BASE, intensity, MoralHazard())
    rep = deviation_test(BASE, intensity, sol, cfg=SimConfig(100_000, 512, 11))
    for e in rep.entries:
        print(f"{e.name}: z={e.z:.1f}")
    assert len(rep.entries) == 6
    assert all(e.status == "pass" and e.z > 3 for e in rep.entries)


# -- 9 -----------------------------------------------------------------------


@crit(9, "phi0 under first best <= phi0 under moral hazard, K0 ordering (500 tuples)")
def test_criterion_09_orderings():
    for p, lam, _, _ in TUPLES:
        intensity = ConstantIntensity(lam)
        fb = solve(p, intensity, FirstBest())
        mh = solve(p, intensity, MoralHazard())
        assert mh.phi0(0.0) / fb.phi0(0.0) >= 1 - 1e-12
        assert mh.k_star(0.0) >= fb.k_star(0.0) - 1e-9


# -- 10 ----------------------------------------------------------------------


@crit(10, "mitigation cutoff, K* after and before the cutoff, monotonicity of the cutoff")
def test_criterion_10_cutoff_example():
    c = c_inv(BASE, 1.0)
    assert abs(c - 1.0 / 6.0) <= 1e-15
    pol = mitigation_policy(BASE, 1.0, 0.1)
    assert abs(pol.t_max - (1.0 - 0.1 / (1.0 / 6.0))) <= 1e-12
    assert abs(pol.t_max - 0.4) <= 1e-12
    assert decide_invest(pol, 0.2) and not decide_invest(pol, 0.5)
    assert not decide_invest(pol, pol.t_max)


@crit(10, "mitigation cutoff, K* after and before the cutoff, monotonicity of the cutoff")
def test_criterion_10_k_star_against_plain():
    cases = [(ModelParams(1.0, 0.5, 1.0, 1.0), 1.0, 0.9, 0.1), (BASE, 1.0, 0.99, 0.1)]
    cases += [(p, lam, th, i) for p, lam, th, i in TUPLES]
    seen_cutoff = 0
    for p, lam, theta, i in cases:
        intensity = ConstantIntensity(lam)
        sol, pol = solve_mitigation(p, intensity, theta, i)
        plain = solve(p, intensity, MoralHazard())
        t = np.linspace(0.0, p.horizon, 401)
        km, kp = sol.k_star(t), plain.k_star(t)
        if pol.t_max is None:
            assert np.max(np.abs(km - kp)) <= 1e-10
            continue
        seen_cutoff += 1
        after = t >= pol.t_max
        assert np.max(np.abs(km[after] - kp[after]), initial=0.0) <= 1e-10
        assert np.all(km[~after] >= kp[~after] - 1e-12)
    assert seen_cutoff >= 2


@crit(10, "mitigation cutoff, K* after and before the cutoff, monotonicity of the cutoff")
def test_criterion_10_cutoff_monotone():
    p = ModelParams(1.0, 0.5, 1.0, 1.0)

    def tm(theta, i):
        # no cutoff sorts below every cutoff in [0, T]
        pol = mitigation_policy(p, theta, i)
        return -1.0 if pol.t_max is None else pol.t_max

    thetas = np.linspace(0.5, 0.99, 40)
    costs = np.linspace(0.005, 0.4, 40)
    grid = np.array([[tm(th, i) for i in costs] for th in thetas])
    assert np.all(np.diff(grid, axis=1) <= 0)  # nonincreasing in i
    assert np.all(np.diff(grid, axis=0) >= 0)  # nondecreasing in theta
    assert (grid >= 0).any() and (grid < 0).any()


# -- 11 ----------------------------------------------------------------------


@crit(11, "small-intensity limit: controls of the no-default contract and sup|K*| <= 1e-6")
@pytest.mark.parametrize("gp,ga", [(1.0, 1.0), (2.0, 0.5), (0.5, 3.0)])
def test_criterion_11_small_intensity_limit(gp, ga):
    p = ModelParams(gp, ga, 1.0, 1.0)
    sol = solve(p, ConstantIntensity(1e-8), MoralHazard())
    hm = (gp + 1.0) / (gp + ga + 1.0)
    assert abs(sol.z_star - hm) <= 1e-6
    assert abs(sol.a_star - hm) <= 1e-6
    sup_k = float(np.max(np.abs(sol.k_star(np.linspace(0.0, p.horizon, 1001)))))
    print(f"sup|K*| = {sup_k:.6g}")
    assert sup_k <= 1e-6


# -- 12 ----------------------------------------------------------------------


def _run_cli(argv, monkeypatch, threads):
    monkeypatch.setenv("CONTRACT_LAB_THREADS", str(threads))
    assert cli.main(argv) == 0


@crit(12, "simulate and sweep outputs byte-identical across runs and thread counts")
def test_criterion_12_reproducibility(tmp_path, monkeypatch):
    cfg = tmp_path / "mh.json"
    cfg.write_text(
        json.dumps(
            {"gamma_p": 1, "gamma_a": 1, "kappa": 1, "horizon": 1, "intensity": {"kind": "constant", "lambda": 1}}
        )
    )
    sweep = tmp_path / "sweep.json"
    sweep.write_text(
        json.dumps(
            {
                "base": json.loads(cfg.read_text()),
                "axes": [{"name": "gamma_p", "min": 0.5, "max": 3, "count": 6}, {"name": "lambda", "min": 0, "max": 2, "count": 3}],
                "metrics": ["sign_k0", "k0_mh", "expected_risk_share_mc", "ratio_phi"],
                "mc_draws": 20000,
            }
        )
    )
    outputs = {}
    for threads in (1, 4, 1):
        for name, argv in (
            ("sim", ["simulate", "--config", str(cfg), "--seed", "42", "--paths", "5000", "--steps", "128"]),
            ("simcsv", ["simulate", "--config", str(cfg), "--seed", "42", "--paths", "3000", "--steps", "64", "--format", "csv"]),
            ("sweep", ["sweep", "--config", str(sweep)]),
        ):
            out = tmp_path / f"{name}_{threads}_{len(outputs)}.out"
            _run_cli(argv + ["--out", str(out)], monkeypatch, threads)
            outputs.setdefault(name, []).append(out.read_bytes())
    for name, blobs in outputs.items():
        assert len(set(blobs)) == 1, name
        assert b"\r" not in blobs[0]
