"""Scenario files: parsing, linting and the built-in scenarios."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict, fields
import copy
import json
import math
from pathlib import Path

import numpy as np

from .decay import DecayConfig, KINDS, decay_data, predicted_exponent
from .fields import FieldState, gaussian_state
from .grid import DomainSpec, fft, ifft, wavenumbers_sq
from .norms import initial_norm
from .params import ModelParams, PressureLaw
from .scheme import SchemeConfig

MODES = ("linear-decay", "picard", "monitor", "bookkeeping")
DATA_KINDS = ("gaussian", "zero", "random", "decay", "transverse")
TOP_KEYS = ("name", "mode", "seed", "output_dir", "params", "domain", "scheme", "data",
            "decay", "bookkeeping", "monitor")


class ConfigError(ValueError):
    """Malformed scenario; the message starts with the offending key."""


@dataclass
class DataSpec:
    kind: str = "gaussian"
    amplitude: float = 1.0
    width: float = 0.8
    vel_amplitude: float | None = None
    target_norm: float | None = None
    modes: int = 3

    def violations(self) -> list[str]:
        out = []
        if self.kind not in DATA_KINDS:
            out.append(f"data.kind: must be one of {list(DATA_KINDS)}")
        if not self.width > 0:
            out.append("data.width: must be > 0")
        if self.target_norm is not None and not self.target_norm > 0:
            out.append("data.target_norm: must be > 0")
        if not (isinstance(self.modes, int) and self.modes >= 1):
            out.append("data.modes: must be an integer >= 1")
        return out


@dataclass
class DecaySection:
    cells: list = field(default_factory=lambda: [["state", 2.0], ["gradient", 2.0], ["dt", 2.0]])
    q: float = 1.0
    t_min: float = 1.0
    window_fraction: float = 0.4
    points_per_decade: int = 12
    rel_tol: float = 0.15
    min_r_squared: float = 0.98
    heat_sanity: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.cells:
            out.append("decay.cells: need at least one [kind, p] cell")
        for cell in self.cells:
            if not (isinstance(cell, (list, tuple)) and len(cell) == 2 and cell[0] in KINDS):
                out.append(f"decay.cells: bad cell {cell!r}; expected [kind, p] with kind in {list(KINDS)}")
                continue
            try:
                predicted_exponent(cell[0], float(cell[1]), self.q)
            except (TypeError, ValueError) as exc:
                out.append(f"decay.cells: {exc}")
        if not self.t_min >= 1.0:
            out.append("decay.t_min: must be >= 1 (the decay table holds for t > 1)")
        if not 0 < self.window_fraction < 0.5:
            out.append("decay.window_fraction: must lie in (0, 0.5)")
        if not (isinstance(self.points_per_decade, int) and self.points_per_decade >= 2):
            out.append("decay.points_per_decade: must be an integer >= 2")
        return out


@dataclass
class BookkeepingSection:
    N: int = 3
    sigma: float = 0.1
    p: float = 2.0

    def violations(self) -> list[str]:
        out = []
        if not (isinstance(self.N, int) and self.N >= 2):
            out.append("bookkeeping.N: must be an integer >= 2")
        if not 0 < self.sigma < 1.0 / 6.0:
            out.append("bookkeeping.sigma: must satisfy 0 < sigma < 1/6")
        if not (math.isclose(self.p, 2.0) or math.isclose(self.p, 1.0 + self.sigma)):
            out.append("bookkeeping.p: must be 2 or 1+sigma")
        return out


@dataclass
class MonitorSection:
    perturbation: float = 0.5
    ratio_bound: float = math.inf

    def violations(self) -> list[str]:
        out = []
        if not self.perturbation > -1:
            out.append("monitor.perturbation: must be > -1")
        if not self.ratio_bound > 0:
            out.append("monitor.ratio_bound: must be > 0")
        return out


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "picard"
    seed: int = 0
    output_dir: str = "results"
    params: ModelParams = field(default_factory=ModelParams)
    domain: DomainSpec = field(default_factory=DomainSpec)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    data: DataSpec = field(default_factory=DataSpec)
    decay: DecaySection = field(default_factory=DecaySection)
    bookkeeping: BookkeepingSection = field(default_factory=BookkeepingSection)
    monitor: MonitorSection = field(default_factory=MonitorSection)

    def violations(self) -> list[str]:
        out = []
        if self.mode not in MODES:
            out.append(f"mode: must be one of {list(MODES)}")
        if not isinstance(self.seed, int):
            out.append("seed: must be an integer")
        out += [f"params.{v}" for v in self.params.violations()]
        out += [f"domain.{v}" for v in self.domain.violations()]
        out += [f"scheme.{v}" for v in self.scheme.violations()]
        out += self.data.violations()
        if self.mode in ("picard", "monitor") and not self.domain.periodic:
            out.append("domain.kind: the picard and monitor modes need the periodic box")
        if self.mode == "linear-decay":
            out += self.decay.violations()
            if not self.domain.periodic:
                out.append("domain.kind: linear-decay runs on the periodic box")
        if self.mode == "bookkeeping":
            out += self.bookkeeping.violations()
        if self.mode == "monitor":
            out += self.monitor.violations()
        return out

    def decay_config(self) -> DecayConfig:
        d = self.decay
        return DecayConfig(n=self.domain.n, L=self.domain.L, mu=self.params.mu, nu=self.params.nu,
                           rho_star=self.params.rho_star, sound_speed=self.params.sound_speed,
                           width=self.data.width, t_min=d.t_min, window_fraction=d.window_fraction,
                           points_per_decade=d.points_per_decade, rel_tol=d.rel_tol,
                           min_r_squared=d.min_r_squared)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    """JSON-safe copy: infinities become strings so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    return obj


def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    vals = {k: _number(v) for k, v in raw.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _number(v):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def scenario_from_dict(raw: dict) -> Scenario:
    """Build a Scenario; unknown or ill-typed keys raise ConfigError naming the key."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: scenario file must hold a JSON object")
    unknown = sorted(set(raw) - set(TOP_KEYS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    pr = raw.get("params") or {}
    if not isinstance(pr, dict):
        raise ConfigError("params: expected an object")
    pr = dict(pr)
    law = pr.pop("pressure", None)
    if law is not None:
        pr["pressure"] = _section(PressureLaw, law, "params.pressure")
    params = _section(ModelParams, pr, "params")
    sc = Scenario(
        name=str(raw.get("name", "scenario")),
        mode=raw.get("mode", "picard"),
        seed=raw.get("seed", 0),
        output_dir=str(raw.get("output_dir", "results")),
        params=params,
        domain=_section(DomainSpec, raw.get("domain"), "domain"),
        scheme=_section(SchemeConfig, raw.get("scheme"), "scheme"),
        data=_section(DataSpec, raw.get("data"), "data"),
        decay=_section(DecaySection, raw.get("decay"), "decay"),
        bookkeeping=_section(BookkeepingSection, raw.get("bookkeeping"), "bookkeeping"),
        monitor=_section(MonitorSection, raw.get("monitor"), "monitor"),
    )
    return sc


def load_scenario(path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: not valid JSON ({exc})") from exc
    return scenario_from_dict(raw)


def lint(path) -> list[str]:
    """Schema violations of a scenario file without running it."""
    try:
        sc = load_scenario(path)
    except ConfigError as exc:
        return [str(exc)]
    return sc.violations()


# ---------------------------------------------------------------------------
# initial data

def _random_smooth(domain: DomainSpec, rng: np.random.Generator, modes: int, lead: int) -> np.ndarray:
    """Random field with |k| <= modes * 2 pi / L, unit sup norm per component."""
    shape = (lead,) + domain.shape if lead else domain.shape
    noise = rng.standard_normal(shape)
    k2 = wavenumbers_sq(domain.n, domain.L)
    kmax = modes * 2 * math.pi / domain.L
    fh = fft(noise) * (k2 <= kmax ** 2) * (k2 > 0)
    f = ifft(fh, domain.n)
    peak = np.max(np.abs(f))
    return f / peak if peak > 0 else f


def build_initial_data(sc: Scenario, seed_offset: int = 0) -> FieldState:
    """Initial Lagrangian state described by the data section (box only)."""
    d, spec = sc.domain, sc.data
    if spec.kind == "zero":
        return FieldState.zeros(d)
    if spec.kind == "gaussian":
        s = gaussian_state(d, 1.0, spec.width, spec.vel_amplitude)
        if d.periodic:
            s = FieldState(s.theta - s.theta.mean(), s.vel)
    elif spec.kind in ("decay", "transverse"):
        s = decay_data(d, spec.width, "generic" if spec.kind == "decay" else "transverse")
    else:
        rng = np.random.default_rng(sc.seed + seed_offset)
        s = FieldState(_random_smooth(d, rng, spec.modes, 0), _random_smooth(d, rng, spec.modes, 3))
    if spec.target_norm is not None:
        total = initial_norm(s, sc.params, d).total
        return s.scaled(spec.target_norm / total) if total > 0 else s
    return s.scaled(spec.amplitude)


# ---------------------------------------------------------------------------
# built-in scenarios

BUILTIN = {
    "picard-small": ("Picard iteration, Gaussian data with I-norm 1e-4 on a 32^3 box, T = 2", {
        "mode": "picard", "domain": {"n": 32, "L": 12.0},
        "scheme": {"T_end": 2.0, "dt": 0.02},
        "data": {"kind": "gaussian", "width": 0.8, "target_norm": 1e-4}}),
    "picard-zero": ("Picard iteration from zero data (one iterate)", {
        "mode": "picard", "domain": {"n": 16, "L": 6.0},
        "scheme": {"T_end": 0.2, "dt": 0.05}, "data": {"kind": "zero"}}),
    "monitor-small": ("product-estimate monitor on two nearby linear trajectories", {
        "mode": "monitor", "domain": {"n": 16, "L": 8.0},
        "scheme": {"T_end": 0.5, "dt": 0.05},
        "data": {"kind": "gaussian", "width": 0.8, "target_norm": 1e-3}}),
    "decay-standard": ("Lp-Lq decay cells (p = 2, q = 1) on a 128^3 box, t in [1, 25.6]", {
        "mode": "linear-decay", "domain": {"n": 128, "L": 64.0},
        "params": {"mu": 0.25, "pressure": {"kind": "linear", "a": 1.0}},
        "data": {"kind": "decay", "width": 0.5},
        "decay": {"cells": [["state", 2.0], ["gradient", 2.0], ["dt", 2.0], ["dt", 2.5], ["hessian", 2.0]]}}),
    "decay-quick": ("same cells on a 64^3 box with L = 32 (t in [1, 12.8])", {
        "mode": "linear-decay", "domain": {"n": 64, "L": 32.0},
        "params": {"mu": 0.25, "pressure": {"kind": "linear", "a": 1.0}},
        "data": {"kind": "decay", "width": 0.5},
        "decay": {"cells": [["state", 2.0], ["gradient", 2.0], ["dt", 2.0]], "heat_sanity": True}}),
    "bookkeeping-N3": ("exponent inequalities for N = 3, sigma = 0.1, p = 2", {
        "mode": "bookkeeping", "bookkeeping": {"N": 3, "sigma": 0.1, "p": 2.0}}),
    "bookkeeping-N2": ("exponent inequalities for N = 2 (expected to fail)", {
        "mode": "bookkeeping", "bookkeeping": {"N": 2, "sigma": 0.1, "p": 2.0}}),
}


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTIN:
        raise ConfigError(f"name: no built-in scenario {name!r}")
    raw = copy.deepcopy(BUILTIN[name][1])
    raw["name"] = name
    raw.setdefault("output_dir", f"results/{name}")
    return scenario_from_dict(raw)
