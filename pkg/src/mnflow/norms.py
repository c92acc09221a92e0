"""Weighted space-time norms, the solution functionals and initial-data norms.

All time integrals use the trapezoid rule on the stored nodes with the weight
``<t>^b = (1 + t^2)^(b/2)`` evaluated exactly at each node.  Norms of pairs
and of intersections of spaces are sums of the individual norms.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math
from typing import Callable

import numpy as np

from .fields import FieldState, TrajectoryRecord
from .grid import DomainSpec, fft, grad, grad_from_hat, hessian_from_hat, lq_norm, sobolev_norm
from .params import ModelParams


def time_weight(t, b: float) -> np.ndarray:
    return (1.0 + np.asarray(t, dtype=float) ** 2) ** (0.5 * b)


def weighted_series_norm(times, values, p: float, b: float) -> float:
    """|| <t>^b f ||_{L_p(0, T)} for samples f(t_i) >= 0 at the given nodes."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        raise ValueError("empty trajectory")
    wv = time_weight(times, b) * values
    if p == math.inf:
        return float(wv.max())
    if p < 1:
        raise ValueError(f"time exponent p={p} must be >= 1")
    if times.size == 1:
        return 0.0
    return float(np.trapezoid(wv ** p, times) ** (1.0 / p))


def weighted_time_norm(traj: TrajectoryRecord, space_norm: Callable[[FieldState], float],
                       p: float, b: float, derivative: bool = False) -> float:
    """Weighted L_p-in-time norm of ``space_norm`` along ``traj``.

    With ``derivative=True`` the norm is applied to ``traj.dt_states``.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    seq = traj.dt_states if derivative else traj.states
    if derivative and not seq:
        raise ValueError("trajectory carries no time derivatives")
    return weighted_series_norm(traj.times, [space_norm(s) for s in seq], p, b)


# ---------------------------------------------------------------------------
# solution functional

@dataclass
class EnergyReport:
    components: dict
    total: float
    verdict: str
    epsilon: float
    p: float
    b: float
    T: float
    interpolation_constants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(theta_n: float, vel_n: float) -> float:
    return theta_n + vel_n


def _derivs(s: FieldState, domain: DomainSpec):
    """grad theta, grad v and grad^2 v, sharing one transform per field on the box."""
    if domain.periodic:
        th, vh = fft(s.theta), fft(s.vel)
        return grad_from_hat(th, domain), grad_from_hat(vh, domain), hessian_from_hat(vh, domain)
    gv = grad(s.vel, domain)
    return grad(s.theta, domain), gv, None


def state_norm_series(traj: TrajectoryRecord, domain: DomainSpec, sigma: float) -> dict:
    """Per-node spatial norms entering the solution functional."""
    q2s = 2.0 + sigma
    keys = ["L2", "L2s", "L6", "grad_H01_2", "grad_H01_6", "grad_H01_2s", "H12_6", "dt_L2", "dt_L6", "dt_grad_L2", "dt_grad_L6"]
    out = {k: [] for k in keys}
    for i, s in enumerate(traj.states):
        gt, gv, hv = _derivs(s, domain)

        def lq(f, q):
            return lq_norm(f, domain, q)

        def h2(q):
            # ||grad^2 v||_q; the radial grid goes through sobolev_norm
            if hv is not None:
                return lq(hv, q)
            return sobolev_norm(s.vel, domain, q, 2) - lq(s.vel, q) - lq(gv, q)

        sec = {q: h2(q) for q in (2.0, q2s, 6.0)}
        out["L2"].append(_pair(lq(s.theta, 2), lq(s.vel, 2)))
        out["L2s"].append(_pair(lq(s.theta, q2s), lq(s.vel, q2s)))
        out["L6"].append(_pair(lq(s.theta, 6), lq(s.vel, 6)))
        for key, q in (("grad_H01_2", 2.0), ("grad_H01_2s", q2s), ("grad_H01_6", 6.0)):
            out[key].append(_pair(lq(gt, q), lq(gv, q) + sec[q]))
        out["H12_6"].append(_pair(lq(s.theta, 6) + lq(gt, 6), lq(s.vel, 6) + lq(gv, 6) + sec[6.0]))
        d = traj.dt_states[i]
        out["dt_L2"].append(_pair(lq(d.theta, 2), lq(d.vel, 2)))
        out["dt_L6"].append(_pair(lq(d.theta, 6), lq(d.vel, 6)))
        if domain.periodic:
            gdt, gdv = grad_from_hat(fft(d.theta), domain), grad_from_hat(fft(d.vel), domain)
        else:
            gdt, gdv = grad(d.theta, domain), grad(d.vel, domain)
        out["dt_grad_L2"].append(_pair(lq(gdt, 2), lq(gdv, 2)))
        out["dt_grad_L6"].append(_pair(lq(gdt, 6), lq(gdv, 6)))
    return {k: np.asarray(v) for k, v in out.items()}


def energy_ET(traj: TrajectoryRecord, params: ModelParams, domain: DomainSpec,
              series: dict | None = None) -> EnergyReport:
    """All components of the weighted solution functional plus the d_t grad term.

    The d_t grad term is reported for q = 2 and q = 6 and both enter the total.
    """
    if not traj.has_derivatives:
        raise ValueError("energy_ET needs a trajectory with dt_states")
    p, b = params.p_time, params.b_weight
    s = series if series is not None else state_norm_series(traj, domain, params.sigma)
    t = traj.times
    comp = {
        "sup_state_L2_L6": weighted_series_norm(t, s["L2"] + s["L6"], math.inf, b),
        "grad_H01_2_2sigma": weighted_series_norm(t, s["grad_H01_2"] + s["grad_H01_2s"], p, b),
        "state_H12_6": weighted_series_norm(t, s["H12_6"], p, b),
        "dt_state_L2_L6": weighted_series_norm(t, s["dt_L2"] + s["dt_L6"], p, b),
        "dt_grad_L2": weighted_series_norm(t, s["dt_grad_L2"], p, b),
        "dt_grad_L6": weighted_series_norm(t, s["dt_grad_L6"], p, b),
    }
    total = float(sum(comp.values()))
    # measured C in ||.||_{2+sigma} <= C (||.||_2 + ||.||_6)
    interp = {
        "state": _max_ratio(s["L2s"], s["L2"] + s["L6"]),
        "grad_H01": _max_ratio(s["grad_H01_2s"], s["grad_H01_2"] + s["grad_H01_6"]),
    }
    verdict = "small" if total <= params.epsilon else "not-small"
    return EnergyReport(comp, total, verdict, params.epsilon, p, b, float(t[-1]), interp)


def _max_ratio(num, den) -> float:
    num, den = np.asarray(num), np.asarray(den)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


# ---------------------------------------------------------------------------
# initial data

@dataclass
class InitialDataNorm:
    theta_H1: dict
    vel_besov_surrogate: dict
    pair_Lr: float
    total: float
    r: float
    p: float
    surrogate: str = "||v0||_Lq^(1/p) * ||v0||_H2q^(1-1/p) in place of B^{2(1-1/p)}_{q,p}"

    def to_dict(self) -> dict:
        return asdict(self)


def besov_surrogate(v0: np.ndarray, domain: DomainSpec, q: float, p: float) -> float:
    lo = lq_norm(v0, domain, q)
    hi = sobolev_norm(v0, domain, q, 2)
    if lo == 0.0 or hi == 0.0:
        return 0.0
    return float(lo ** (1.0 / p) * hi ** (1.0 - 1.0 / p))


def initial_norm(state0: FieldState, params: ModelParams, domain: DomainSpec) -> InitialDataNorm:
    if state0.time != 0.0:
        raise ValueError(f"initial data must sit at t = 0, got t = {state0.time}")
    sig, p, r = params.sigma, params.p_time, params.r
    qs = (2.0, 2.0 + sig, 6.0)
    th = {"r": sobolev_norm(state0.theta, domain, r, 1)}
    for q in qs:
        th[_qkey(q)] = sobolev_norm(state0.theta, domain, q, 1)
    vb = {_qkey(q): besov_surrogate(state0.vel, domain, q, p) for q in qs}
    pair = th["r"] + lq_norm(state0.vel, domain, r)
    total = sum(th[_qkey(q)] for q in qs) + sum(vb.values()) + pair
    return InitialDataNorm(th, vb, float(pair), float(total), r, p)


def _qkey(q: float) -> str:
    return f"{q:g}"


def interpolation_weight(sigma: float) -> float:
    """theta in ||f||_{2+s} <= ||f||_2^theta ||f||_6^(1-theta) (Hoelder/Riesz-Thorin)."""
    return (4.0 - sigma) / (2.0 * (2.0 + sigma))


def bracket_series(traj: TrajectoryRecord, domain: DomainSpec, sigma: float, r: float) -> np.ndarray:
    """[[(eta, u)(t)]] at every node: the H^{1,0}_r norm plus, for q = 2, 2+sigma, 6,
    the H^{1,2}_q norm of the state and the H^{1,0}_q norm of its time derivative."""
    out = []
    for i, s in enumerate(traj.states):
        gt, gv, hv = _derivs(s, domain)
        d = traj.dt_states[i]
        gdt = grad_from_hat(fft(d.theta), domain) if domain.periodic else grad(d.theta, domain)
        val = lq_norm(s.theta, domain, r) + lq_norm(gt, domain, r) + lq_norm(s.vel, domain, r)
        for q in (2.0, 2.0 + sigma, 6.0):
            h2 = lq_norm(hv, domain, q) if hv is not None else sobolev_norm(s.vel, domain, q, 2) - \
                lq_norm(s.vel, domain, q) - lq_norm(gv, domain, q)
            val += lq_norm(s.theta, domain, q) + lq_norm(gt, domain, q)
            val += lq_norm(s.vel, domain, q) + lq_norm(gv, domain, q) + h2
            val += lq_norm(d.theta, domain, q) + lq_norm(gdt, domain, q) + lq_norm(d.vel, domain, q)
        out.append(val)
    return np.asarray(out)


def tilde_energy(traj: TrajectoryRecord, params: ModelParams, domain: DomainSpec) -> float:
    """|| <t>^b [[(eta, u)]] ||_{L_p(0, T)}."""
    s = bracket_series(traj, domain, params.sigma, params.r)
    return weighted_series_norm(traj.times, s, params.p_time, params.b_weight)
