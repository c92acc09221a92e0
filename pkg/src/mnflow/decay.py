"""Empirical Lp-Lq decay rates of the linear semigroup and the exponent bookkeeping.

The whole-space behaviour is surrogated by a large periodic box.  Norms are
recorded only before the first acoustic front wraps around, i.e. for
``t <= window_fraction * L / c``, and only for ``t >= 1`` where the decay
table applies.  The spatial mean of the data is removed first: the box zero
mode is conserved and would otherwise dominate every late-time norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .fields import FieldState, gaussian_bump
from .grid import DomainSpec, fft, ifft, grad_from_hat, hessian_from_hat, lq_norm
from .linstokes import LinearOp
from .params import ModelParams, PressureLaw, b_weight_for, conjugate

KINDS = ("state", "gradient", "hessian", "dt")


def predicted_exponent(kind: str, p: float, q: float) -> float:
    """Decay exponent of the semigroup table for t > 1, with 1 <= q <= 2 <= p < inf."""
    if not (1.0 <= q <= 2.0 <= p < math.inf):
        raise ValueError(f"(p, q) = ({p}, {q}) outside 1 <= q <= 2 <= p < inf")
    if kind == "state":
        return 1.5 * (1.0 / q - 1.0 / p)
    if kind == "gradient":
        if p <= 3.0:
            return 1.5 * (1.0 / q - 1.0 / p) + 0.5
        return 1.5 / q
    if kind in ("hessian", "dt"):
        return 1.5 / q
    raise ValueError(f"unknown decay quantity {kind!r}; expected one of {KINDS}")


@dataclass
class DecayConfig:
    n: int = 128
    L: float = 64.0
    mu: float = 0.25
    nu: float = 0.0
    rho_star: float = 1.0
    sound_speed: float = 1.0
    width: float = 0.5
    t_min: float = 1.0
    window_fraction: float = 0.4
    points_per_decade: int = 12
    rel_tol: float = 0.15
    min_r_squared: float = 0.98

    def params(self) -> ModelParams:
        # linear law: P'(rho) = c^2 independent of rho
        law = PressureLaw("linear", a=self.sound_speed ** 2)
        return ModelParams(mu=self.mu, nu=self.nu, rho_star=self.rho_star, pressure=law)

    def domain(self) -> DomainSpec:
        return DomainSpec("periodic", n=self.n, L=self.L)

    def window(self) -> tuple[float, float]:
        return max(1.0, self.t_min), self.window_fraction * self.L / self.sound_speed

    def times(self) -> np.ndarray:
        t0, t1 = self.window()
        if t1 <= t0:
            return np.array([t0])
        m = max(2, int(math.floor(self.points_per_decade * math.log10(t1 / t0))) + 1)
        return np.logspace(math.log10(t0), math.log10(t1), m)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecayFit:
    quantity: str
    window: tuple
    fitted_exponent: float
    predicted_exponent: float
    r_squared: float
    verdict: str
    p: float = 2.0
    q: float = 1.0
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)
    note: str = "spatial mean of the data removed before evolution"

    @property
    def relative_error(self) -> float:
        return abs(self.fitted_exponent - self.predicted_exponent) / self.predicted_exponent

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relative_error"] = self.relative_error
        return d


def decay_data(domain: DomainSpec, width: float, kind: str = "generic") -> FieldState:
    """Centred Gaussian data.

    ``generic``: density bump plus a velocity with both longitudinal and
    transverse parts.  ``transverse``: theta = 0 and v = curl(g e_3), which
    only feels the heat part of the semigroup.
    """
    g = gaussian_bump(domain, 1.0, width)
    if kind == "generic":
        return FieldState(g.copy(), np.stack([g, 0.5 * g, -0.3 * g]))
    if kind == "transverse":
        dg = grad_from_hat(fft(g), domain)
        return FieldState(np.zeros_like(g), np.stack([dg[1], -dg[0], np.zeros_like(g)]))
    raise ValueError(f"unknown decay data kind {kind!r}")


def remove_mean(state: FieldState) -> FieldState:
    vel = state.vel - state.vel.mean(axis=(1, 2, 3), keepdims=True)
    return FieldState(state.theta - state.theta.mean(), vel, state.frame, state.time)


def _pair(domain, a, b, p):
    return lq_norm(a, domain, p) + lq_norm(b, domain, p)


def decay_series(data0: FieldState, config: DecayConfig, cells) -> tuple[np.ndarray, dict]:
    """Norm time series for every (kind, p) in ``cells`` from one pass of T(t)."""
    domain, params = config.domain(), config.params()
    op = LinearOp(params, domain)
    uh0 = op.to_hat(remove_mean(data0))
    times = config.times()
    kinds = {k for k, _ in cells}
    out = {c: [] for c in cells}
    for t in times:
        uh = op.propagate_hat(uh0, float(t))
        f = ifft(uh, domain.n) if "state" in kinds else None
        g = grad_from_hat(uh, domain) if "gradient" in kinds else None
        h = hessian_from_hat(uh[1:], domain) if "hessian" in kinds else None
        d = ifft(op.apply_hat(uh), domain.n) if "dt" in kinds else None
        for kind, p in cells:
            if kind == "state":
                v = _pair(domain, f[0], f[1:], p)
            elif kind == "gradient":
                v = _pair(domain, g[:, 0], g[:, 1:], p)
            elif kind == "hessian":
                v = lq_norm(h, domain, p)
            else:
                v = _pair(domain, d[0], d[1:], p)
            out[(kind, p)].append(v)
    return times, {c: np.asarray(v) for c, v in out.items()}


def fit_exponent(times, values) -> tuple[float, float]:
    """Least-squares slope of -log(values) against log(times), and r^2."""
    lt, lv = np.log(np.asarray(times)), np.log(np.asarray(values))
    slope, icpt = np.polyfit(lt, lv, 1)
    ss = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 - float(np.sum((lv - (slope * lt + icpt)) ** 2)) / ss if ss > 0 else 1.0
    return float(-slope), r2


def _make_fit(kind, p, q, times, values, config: DecayConfig, predicted=None) -> DecayFit:
    t0, t1 = config.window()
    pred = predicted_exponent(kind, p, q) if predicted is None else predicted
    if t1 <= t0 or math.log10(t1 / t0) < 0.5 or len(times) < 3:
        return DecayFit(f"{kind}_L{p:g}", (t0, t1), math.nan, pred, math.nan, "inconclusive",
                        p, q, list(map(float, times)), list(map(float, values)))
    ok = np.asarray(values) > 0
    fitted, r2 = fit_exponent(np.asarray(times)[ok], np.asarray(values)[ok])
    good = abs(fitted - pred) <= config.rel_tol * pred and r2 >= config.min_r_squared
    return DecayFit(f"{kind}_L{p:g}", (t0, t1), fitted, pred, r2, "pass" if good else "fail",
                    p, q, list(map(float, times)), list(map(float, values)))


def run_decay_experiment(data0: FieldState, p: float, q: float, kind: str,
                         config: DecayConfig | None = None) -> DecayFit:
    config = config or DecayConfig()
    predicted_exponent(kind, p, q)
    times, series = decay_series(data0, config, [(kind, p)])
    return _make_fit(kind, p, q, times, series[(kind, p)], config)


def run_decay_table(data0: FieldState, cells, q: float = 1.0,
                    config: DecayConfig | None = None) -> list[DecayFit]:
    """Several (kind, p) cells sharing one evolution."""
    config = config or DecayConfig()
    cells = [(k, float(p)) for k, p in cells]
    for k, p in cells:
        predicted_exponent(k, p, q)
    times, series = decay_series(data0, config, cells)
    return [_make_fit(k, p, q, times, series[(k, p)], config) for k, p in cells]


def heat_reference_exponent(times, config: DecayConfig) -> float:
    """Fitted slope of the exact L2 decay of the transverse curl-Gaussian packet.

    Its spectrum is |xi|^2 exp(-w^2 |xi|^2) so ||v(t)||_2 ~ (w^2 + 2 mu t / rho)^(-5/4).
    """
    times = np.asarray(times, dtype=float)
    a = config.width ** 2 + 2.0 * config.mu * times / config.rho_star
    return fit_exponent(times, a ** -1.25)[0]


def heat_sanity(config: DecayConfig | None = None) -> DecayFit:
    """L2 decay of transverse-only data against the closed-form diffusion rate."""
    config = config or DecayConfig()
    data = decay_data(config.domain(), config.width, "transverse")
    times, series = decay_series(data, config, [("state", 2.0)])
    pred = heat_reference_exponent(times, config)
    fit = _make_fit("state", 2.0, 1.0, times, series[("state", 2.0)], config, predicted=pred)
    fit.quantity = "transverse_L2"
    fit.note = "prediction: fitted slope of (w^2 + 2 mu t / rho)^(-5/4) on the same nodes"
    return fit


# ---------------------------------------------------------------------------
# exponent bookkeeping

@dataclass
class BookkeepingReport:
    N: int
    sigma: float
    p: float
    b: float
    ell: float
    decay_margin: float
    weight_margin: float
    decay_holds: bool
    weight_holds: bool
    feasible: bool
    q3_lower: float
    q3_must_exceed: float
    q3: float
    verdict: str
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def exponent_bookkeeping(N: int, sigma: float, p: float, b: float | None = None) -> BookkeepingReport:
    """Check (1/2 + N/(2(2+sigma)) - b) p > 1 and b p' > 1.

    Both can hold for some b only if ell = 1/2 + N/(2(2+sigma)) > 1, since
    adding them gives ell > 1/p + 1/p' = 1.  ``b`` defaults to the weight
    paired with p = 2 or p = 1 + sigma.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    if b is None:
        b = b_weight_for(sigma, p)
    ell = 0.5 + N / (2.0 * (2.0 + sigma))
    m1 = (ell - b) * p - 1.0
    m2 = b * conjugate(p) - 1.0
    feasible = ell > 1.0
    if N == 2:
        q3_lower = math.inf
        q3 = math.nan
    else:
        q3_lower = 2.0 * N / (N - 2)
        # smallest integer with q3 > N and q3 >= 2N/(N-2)
        q3 = float(max(math.ceil(q3_lower), N + 1))
    ok = m1 > 0 and m2 > 0
    reason = ""
    if not feasible:
        reason = f"1/2 + N/(2(2+sigma)) = {ell:.4f} <= 1, no weight b satisfies both inequalities"
    elif not ok:
        reason = "chosen b violates an inequality"
    return BookkeepingReport(N, sigma, p, b, ell, m1, m2, m1 > 0, m2 > 0, feasible, q3_lower,
                             float(N), q3, "pass" if ok else "fail", reason)
