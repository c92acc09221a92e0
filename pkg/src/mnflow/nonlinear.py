"""Nonlinear right-hand sides of the Lagrangian system and product-estimate monitors.

With ``S(w) = mu D(w) + nu div w I`` the Lagrangian system reads

    d_t eta + rho* div u = F,   rho* d_t u - Div S(u) + P'(rho*) grad eta = G,

where, writing ``V0 = V0(k)``, ``D_div = tr(V0 grad u)`` and ``D_D = V0 grad u +
(V0 grad u)^T``,

    F = -[rho* D_div + eta (div u + D_div)]
    G = -eta d_t u + V1 + V2 - (P'(rho*+eta) - P'(rho*)) grad eta
        - P'(rho*+eta) V0 grad eta.

``V1`` collects the viscous corrections at frozen ``k`` and ``V2`` the part
produced by differentiating ``V0(k)`` in space, which brings in
``K2 = int_0^t grad^2 u ds``.  Sign convention: these are the terms that
reproduce the Eulerian equations exactly; they are the negatives of the
"transport" form in which the corrections are sometimes displayed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .fields import TrajectoryRecord, AdmissibilityError
from .grid import DomainSpec, grad, lq_norm, sobolev_norm, fft, grad_from_hat, hessian_from_hat
from .lagrangian import DisplacementField, displacement_history, identity_field, matmul, matvec
from .norms import weighted_series_norm
from .params import ModelParams


def _sup(f: np.ndarray, lead: int) -> float:
    if lead == 0:
        return float(np.max(np.abs(f)))
    return float(np.max(np.sqrt(np.sum(np.abs(f) ** 2, axis=tuple(range(lead))))))


def d_div(v0: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """sum_ij V0_ij d_j u_i, with grad_u[j, i] = d_j u_i."""
    if v0.shape != grad_u.shape or v0.shape[:2] != (3, 3):
        raise ValueError(f"shape mismatch: V0 {v0.shape} vs grad u {grad_u.shape}")
    return np.einsum("ij...,ji...->...", v0, grad_u)


def d_deform(v0: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """V0 grad u + (V0 grad u)^T; symmetric by construction."""
    if v0.shape != grad_u.shape or v0.shape[:2] != (3, 3):
        raise ValueError(f"shape mismatch: V0 {v0.shape} vs grad u {grad_u.shape}")
    m = matmul(v0, grad_u)
    return m + np.swapaxes(m, 0, 1)


def _trace_l(a: np.ndarray) -> np.ndarray:
    return np.einsum("lii...->l...", a)


def _stress_l(a: np.ndarray, mu: float, nu: float) -> np.ndarray:
    """mu (A_l + A_l^T) + nu tr(A_l) I for a stack A[l, i, j]."""
    out = mu * (a + np.swapaxes(a, 1, 2))
    tr = nu * _trace_l(a)
    for i in range(3):
        out[:, i, i] += tr
    return out


def viscous_corrections(grad_u: np.ndarray, hess_u: np.ndarray, v0: np.ndarray, k: np.ndarray,
                        k2: np.ndarray | None, mu: float, nu: float):
    """Return (V1, V2) as vector fields.

    ``hess_u[l, i, j] = d_l d_i u_j`` and ``k2[l, i, j] = int d_l d_i u_j ds``.
    """
    a = np.einsum("im...,lmj...->lij...", v0, hess_u, optimize=True)
    ds0 = _stress_l(hess_u, mu, nu)
    ds1 = _stress_l(a, mu, nu)
    v1 = np.einsum("jji...->i...", ds1) + np.einsum("jl...,lji...->i...", v0, ds0 + ds1, optimize=True)
    if k2 is None:
        return v1, np.zeros_like(v1)
    inv = v0 + identity_field(v0.shape[2:])
    m = np.einsum("ia...,lab...,bc...->lic...", inv, k2, inv, optimize=True)
    b = -np.einsum("lic...,cj...->lij...", m, grad_u, optimize=True)
    v2 = np.einsum("jl...,lji...->i...", inv, _stress_l(b, mu, nu), optimize=True)
    return v1, v2


def pressure_terms(eta: np.ndarray, grad_eta: np.ndarray, v0: np.ndarray, params: ModelParams):
    """(-(P'(rho*+eta) - P'(rho*)) grad eta, -P'(rho*+eta) V0 grad eta)."""
    law, rs = params.pressure, params.rho_star
    pe = law.deriv(rs + eta)
    return -(pe - law.deriv(rs)) * grad_eta, -pe * matvec(v0, grad_eta)


def pressure_difference_integral(eta: np.ndarray, params: ModelParams, nodes: int = 8) -> np.ndarray:
    """int_0^1 P''(rho* + tau eta) dtau * eta by Gauss-Legendre quadrature."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    tau = 0.5 * (x + 1.0)
    acc = sum(0.5 * wi * params.pressure.deriv2(params.rho_star + ti * eta) for ti, wi in zip(tau, w))
    return acc * eta


@dataclass
class NonlinearTerms:
    F: np.ndarray
    G: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)


def _admissible(eta: np.ndarray, params: ModelParams) -> None:
    worst = float(np.max(np.abs(eta)))
    if worst > params.rho_star / 2:
        raise AdmissibilityError(f"sup|eta| = {worst:.3e} exceeds rho*/2 = {params.rho_star / 2:.3e}")


def assemble_F(eta: np.ndarray, u: np.ndarray, dfield: DisplacementField, params: ModelParams,
               domain: DomainSpec, grad_u: np.ndarray | None = None, diagnostics: dict | None = None) -> np.ndarray:
    _admissible(eta, params)
    g = grad(u, domain) if grad_u is None else grad_u
    dd = d_div(dfield.v0, g)
    divu = np.einsum("ii...->...", g)
    f_lin = -params.rho_star * dd
    f_eta = -eta * (divu + dd)
    if diagnostics is not None:
        diagnostics["F_rho_Ddiv"] = _sup(f_lin, 0)
        diagnostics["F_eta_div"] = _sup(f_eta, 0)
    return f_lin + f_eta


def assemble_G(eta: np.ndarray, u: np.ndarray, dt_u: np.ndarray, dfield: DisplacementField,
               params: ModelParams, domain: DomainSpec, grad_u: np.ndarray | None = None,
               hess_u: np.ndarray | None = None, diagnostics: dict | None = None) -> np.ndarray:
    if not domain.periodic:
        raise NotImplementedError("G is assembled on the periodic box only")
    _admissible(eta, params)
    g = grad(u, domain) if grad_u is None else grad_u
    h = grad(g, domain) if hess_u is None else hess_u
    k2 = dfield.k2
    if k2 is None and float(np.max(np.abs(dfield.k))) > 0:
        raise ValueError("nonzero k requires the accumulated second gradients k2")
    inertia = -eta * dt_u
    v1, v2 = viscous_corrections(g, h, dfield.v0, dfield.k, k2, params.mu, params.nu)
    p_diff, p_v0 = pressure_terms(eta, grad(eta, domain), dfield.v0, params)
    if diagnostics is not None:
        diagnostics["G_inertia"] = _sup(inertia, 1)
        diagnostics["G_V1"] = _sup(v1, 1)
        diagnostics["G_V2"] = _sup(v2, 1)
        diagnostics["G_pressure_diff"] = _sup(p_diff, 1)
        diagnostics["G_pressure_V0"] = _sup(p_v0, 1)
    return inertia + v1 + v2 + p_diff + p_v0


def assemble(eta, u, dt_u, dfield, params, domain, grad_u=None, hess_u=None) -> NonlinearTerms:
    diag: dict = {}
    g = grad(u, domain) if grad_u is None else grad_u
    f = assemble_F(eta, u, dfield, params, domain, grad_u=g, diagnostics=diag)
    gg = None
    if domain.periodic:
        gg = assemble_G(eta, u, dt_u, dfield, params, domain, grad_u=g, hess_u=hess_u, diagnostics=diag)
    for key, val in diag.items():
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite nonlinear term {key}")
    return NonlinearTerms(f, gg, diag)


class _NodeDerivs:
    """grad u or grad^2 u at the nodes of a trajectory, computed on access.

    Only the most recent nodes are kept so long runs do not hold every
    Hessian in memory; the velocity transform is shared between the two kinds.
    """

    def __init__(self, traj: TrajectoryRecord, domain: DomainSpec, shared: dict, kind: str):
        self.traj, self.domain, self.shared, self.kind = traj, domain, shared, kind
        self.cache: dict = {}

    def __len__(self):
        return len(self.traj)

    def __getitem__(self, n: int) -> np.ndarray:
        if n not in self.cache:
            u = self.traj.states[n].vel
            if self.domain.periodic:
                if n not in self.shared:
                    self.shared.clear()
                    self.shared[n] = fft(u)
                uh = self.shared[n]
                val = grad_from_hat(uh, self.domain) if self.kind == "grad" else hessian_from_hat(uh, self.domain)
            else:
                val = grad(u, self.domain)
            if len(self.cache) >= 2:
                self.cache.pop(min(self.cache))
            self.cache[n] = val
        return self.cache[n]


def velocity_derivatives(traj: TrajectoryRecord, domain: DomainSpec):
    """Lazy grad u and (box only) grad^2 u at every node, one transform per node."""
    shared: dict = {}
    hess = _NodeDerivs(traj, domain, shared, "hess") if domain.periodic else None
    return _NodeDerivs(traj, domain, shared, "grad"), hess


def trajectory_terms(traj: TrajectoryRecord, params: ModelParams, domain: DomainSpec,
                     derivs=None) -> list[NonlinearTerms]:
    """F and G at every node of a Lagrangian trajectory with derivatives."""
    if not traj.has_derivatives:
        raise ValueError("nonlinear terms need d_t u along the trajectory")
    grads, hess = derivs if derivs is not None else velocity_derivatives(traj, domain)
    out = []
    for n, df in enumerate(displacement_history(traj, domain, with_k2=domain.periodic, grads=grads, hessians=hess)):
        s = traj.states[n]
        out.append(assemble(s.theta, s.vel, traj.dt_states[n].vel, df, params, domain,
                            grad_u=grads[n], hess_u=None if hess is None else hess[n]))
    return out


# ---------------------------------------------------------------------------
# product-estimate monitor

NORM_ORDER_FLAG = ("the F-difference estimate is stated in L_{p,b}(L_r) while the F estimate uses "
                   "L_{p,b}(H^1_r); both are evaluated as stated")


def _series(traj: TrajectoryRecord, domain: DomainSpec, sigma: float) -> dict:
    qs = {"2": 2.0, "2s": 2.0 + sigma, "6": 6.0}
    out = {f"{name}_{qk}": [] for name in ("A", "Tt", "TtL", "vt", "gth", "g2v", "gv") for qk in qs}
    for s, d in zip(traj.states, traj.dt_states):
        gv = grad(s.vel, domain)
        g2v = grad(gv, domain)
        gth = grad(s.theta, domain)
        for qk, q in qs.items():
            out[f"A_{qk}"].append(sobolev_norm(gv, domain, q, 1))
            out[f"Tt_{qk}"].append(sobolev_norm(d.theta, domain, q, 1))
            out[f"TtL_{qk}"].append(lq_norm(d.theta, domain, q))
            out[f"vt_{qk}"].append(lq_norm(d.vel, domain, q))
            out[f"gth_{qk}"].append(lq_norm(gth, domain, q))
            out[f"gv_{qk}"].append(lq_norm(gv, domain, q))
            out[f"g2v_{qk}"].append(lq_norm(g2v, domain, q))
    return out


def _collapse(traj, domain, params) -> dict:
    ser = _series(traj, domain, params.sigma)
    n = {k: weighted_series_norm(traj.times, v, params.p_time, params.b_weight) for k, v in ser.items()}
    th0 = traj.states[0].theta
    for qk, q in (("2", 2.0), ("2s", 2.0 + params.sigma), ("6", 6.0)):
        n[f"T0_{qk}"] = sobolev_norm(th0, domain, q, 1)
        n[f"T0L_{qk}"] = lq_norm(th0, domain, q)
        n[f"P_{qk}"] = n[f"T0_{qk}"] + n[f"Tt_{qk}"]
    n["PL_2s"] = n["T0L_2s"] + n["TtL_2s"]
    return n


def _rhs_F_H1r(a):
    return (a["A_2s"] * a["A_2"] + a["P_2s"] * a["A_2"]
            + (a["P_6"] * a["A_2s"] + a["P_2s"] * a["A_6"]) * a["A_2"])


def _rhs_F_H1q(a, q):
    return (a[f"A_{q}"] * a["A_6"] + a[f"P_{q}"] * a["A_6"] + a["P_6"] * a[f"A_{q}"]
            + a[f"P_{q}"] * a["A_6"] ** 2 + a["P_6"] * a[f"A_{q}"] * a["A_6"])


def _rhs_G_Lr(a):
    return a["PL_2s"] * (a["vt_2"] + a["gth_2"]) + a["gv_2s"] * (a["g2v_2"] + a["gth_2"])


def _rhs_G_Lq(a, q):
    return a["P_6"] * (a[f"vt_{q}"] + a[f"gth_{q}"]) + a["A_6"] * (a[f"g2v_{q}"] + a[f"gth_{q}"])


def _rhs_F_diff_Lr(a1, a2, d):
    s2s = a1["A_2s"] + a2["A_2s"]
    s6 = a1["A_6"] + a2["A_6"]
    return ((d["A_2s"] + s2s * d["A_6"]) * a1["A_2"]
            + a2["A_2s"] * d["A_2"]
            + d["Tt_2s"] * a1["A_2"]
            + a2["P_2s"] * d["A_2"]
            + (d["Tt_6"] * a1["A_2s"] + d["Tt_2s"] * a1["A_6"]) * a1["A_2"]
            + (a2["P_6"] * (d["A_2s"] + s2s * d["A_6"]) + a2["P_2s"] * (d["A_6"] + s6 * d["A_6"])) * a1["A_2"]
            + (a2["P_6"] * a2["A_2s"] + a2["P_2s"] * a2["A_6"]) * d["A_2"])


def _rhs_F_diff_H1q(a1, a2, d, q):
    sq = a1[f"A_{q}"] + a2[f"A_{q}"]
    s6 = a1["A_6"] + a2["A_6"]
    return ((d[f"A_{q}"] + sq * d["A_6"]) * a1["A_6"]
            + (d["A_6"] + s6 * d["A_6"]) * a1[f"A_{q}"]
            + a2[f"A_{q}"] * d["A_6"] + a2["A_6"] * d[f"A_{q}"]
            + d[f"Tt_{q}"] * a1["A_6"] + d["Tt_6"] * a1[f"A_{q}"]
            + a2[f"P_{q}"] * d["A_6"] + a2["P_6"] * d[f"A_{q}"]
            + d[f"Tt_{q}"] * a1["A_6"] ** 2 + d["Tt_6"] * a1[f"A_{q}"] * a1["A_6"]
            + a2[f"P_{q}"] * (d["A_6"] + s6 * d["A_6"]) * a1["A_6"]
            + a2["P_6"] * (d[f"A_{q}"] + sq * d["A_6"]) * a1["A_6"]
            + a2["P_6"] * (d["A_6"] + s6 * d["A_6"]) * a1[f"A_{q}"]
            + a2[f"P_{q}"] * a2["A_6"] * d["A_6"]
            + a2["P_6"] * a2[f"A_{q}"] * d["A_6"]
            + a2["P_6"] * a2["A_6"] * d[f"A_{q}"])


def _rhs_G_diff_Lr(a1, a2, d):
    return (d["TtL_2s"] * a1["vt_2"]
            + a2["PL_2s"] * d["vt_2"]
            + d["gv_2"] * a1["g2v_2s"]
            + a2["gv_2s"] * d["g2v_2"]
            + d["gv_2"] * a1["g2v_2s"] * a1["A_6"]
            + d["g2v_2"] * a1["gv_2s"]
            + a2["g2v_2s"] * d["gv_2"]
            + d["TtL_2"] * a1["gth_2s"]
            + d["gv_2"] * a1["gth_2s"]
            + a2["gv_2s"] * d["gth_2"]
            + a2["PL_2s"] * d["gth_2"])


def _rhs_G_diff_Lq(a1, a2, d, q):
    return (d["Tt_6"] * a1[f"vt_{q}"]
            + a2["P_6"] * d[f"vt_{q}"]
            + d["A_6"] * a1[f"g2v_{q}"]
            + a2["A_6"] * d[f"g2v_{q}"]
            + d["A_6"] * a1["A_6"] * a1[f"g2v_{q}"]
            + d[f"g2v_{q}"] * a1["A_6"]
            + a2[f"g2v_{q}"] * d["A_6"]
            + d["Tt_6"] * a1[f"gth_{q}"]
            + d["A_6"] * a1[f"gth_{q}"]
            + a2["A_6"] * d[f"gth_{q}"]
            + a2["P_6"] * d[f"gth_{q}"])


def _ratio(lhs: float, rhs: float) -> float:
    if lhs == 0.0 and rhs == 0.0:
        return 0.0
    if rhs == 0.0:
        return math.inf
    return lhs / rhs


@dataclass
class MonitorReport:
    entries: dict
    max_ratio: float
    pressure_crosscheck: float
    flags: list

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_monitor(traj1: TrajectoryRecord, traj2: TrajectoryRecord, params: ModelParams,
                     domain: DomainSpec) -> MonitorReport:
    """Both sides of the product estimates for F and G with unit constants.

    Each entry holds ``lhs``, ``rhs`` and ``ratio = lhs / rhs`` (0 when both
    vanish).  The difference estimates use the second trajectory wherever
    the bound involves a single unindexed density.
    """
    if not domain.periodic:
        raise NotImplementedError("the estimate monitor runs on the periodic box")
    p, b, r = params.p_time, params.b_weight, params.r
    t = traj1.times
    terms1 = trajectory_terms(traj1, params, domain)
    terms2 = trajectory_terms(traj2, params, domain)
    a1, a2 = _collapse(traj1, domain, params), _collapse(traj2, domain, params)
    d = _collapse(traj1 - traj2, domain, params)

    def tn(vals):
        return weighted_series_norm(t, vals, p, b)

    qs = {"2": 2.0, "2s": 2.0 + params.sigma, "6": 6.0}
    e = {}

    def put(name, lhs, rhs):
        e[name] = {"lhs": float(lhs), "rhs": float(rhs), "ratio": _ratio(float(lhs), float(rhs))}

    for tag, terms, a in (("1", terms1, a1), ("2", terms2, a2)):
        put(f"F_H1r[{tag}]", tn([sobolev_norm(x.F, domain, r, 1) for x in terms]), _rhs_F_H1r(a))
        put(f"G_Lr[{tag}]", tn([lq_norm(x.G, domain, r) for x in terms]), _rhs_G_Lr(a))
        for qk, q in qs.items():
            put(f"F_H1q[{tag},q={q:g}]", tn([sobolev_norm(x.F, domain, q, 1) for x in terms]), _rhs_F_H1q(a, qk))
            put(f"G_Lq[{tag},q={q:g}]", tn([lq_norm(x.G, domain, q) for x in terms]), _rhs_G_Lq(a, qk))
    dF = [x.F - y.F for x, y in zip(terms1, terms2)]
    dG = [x.G - y.G for x, y in zip(terms1, terms2)]
    put("F_diff_Lr", tn([lq_norm(f, domain, r) for f in dF]), _rhs_F_diff_Lr(a1, a2, d))
    put("G_diff_Lr", tn([lq_norm(g, domain, r) for g in dG]), _rhs_G_diff_Lr(a1, a2, d))
    for qk, q in qs.items():
        put(f"F_diff_H1q[q={q:g}]", tn([sobolev_norm(f, domain, q, 1) for f in dF]), _rhs_F_diff_H1q(a1, a2, d, qk))
        put(f"G_diff_Lq[q={q:g}]", tn([lq_norm(g, domain, q) for g in dG]), _rhs_G_diff_Lq(a1, a2, d, qk))
    cross = 0.0
    for tr in (traj1, traj2):
        for s in tr.states:
            direct = params.pressure.deriv(params.rho_star + s.theta) - params.pressure.deriv(params.rho_star)
            cross = max(cross, float(np.max(np.abs(direct - pressure_difference_integral(s.theta, params)))))
    mx = max((v["ratio"] for v in e.values()), default=0.0)
    return MonitorReport(e, float(mx), cross, [NORM_ORDER_FLAG])
