"""Physical and scheme constants, plus the barotropic pressure law."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a physical law."""


def b_weight_for(sigma: float, p_time: float) -> float:
    """Time-weight exponent tied to the pair (sigma, p_time)."""
    if math.isclose(p_time, 2.0):
        return (3.0 - sigma) / (2.0 * (2.0 + sigma))
    if math.isclose(p_time, 1.0 + sigma):
        return (1.0 - sigma) / (2.0 * (2.0 + sigma))
    raise ValueError(f"p_time must be 2 or 1+sigma, got {p_time}")


def r_exponent(sigma: float) -> float:
    """Lebesgue exponent r with 1/r = 1/2 + 1/(2+sigma)."""
    return 2.0 * (2.0 + sigma) / (4.0 + sigma)


def conjugate(p: float) -> float:
    return p / (p - 1.0)


@dataclass(frozen=True)
class PressureLaw:
    """Barotropic law.

    ``kind="power"`` is ``a * rho**gamma``; ``kind="linear"`` is
    ``c0 + a * rho`` (so the sound speed is constant).
    """

    kind: str = "power"
    a: float = 1.0
    gamma: float = 1.4
    c0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("power", "linear"):
            raise ValueError(f"unknown pressure law {self.kind!r}")

    def _check(self, rho):
        import numpy as np

        if np.any(np.asarray(rho) <= 0):
            raise DomainError("pressure law evaluated at non-positive density")

    def value(self, rho):
        self._check(rho)
        if self.kind == "power":
            return self.a * rho ** self.gamma
        return self.c0 + self.a * rho

    def deriv(self, rho):
        self._check(rho)
        if self.kind == "power":
            return self.a * self.gamma * rho ** (self.gamma - 1.0)
        return self.a + 0.0 * rho

    def deriv2(self, rho):
        self._check(rho)
        if self.kind == "power":
            return self.a * self.gamma * (self.gamma - 1.0) * rho ** (self.gamma - 2.0)
        return 0.0 * rho


@dataclass(frozen=True)
class ModelParams:
    mu: float = 1.0
    nu: float = 0.0
    rho_star: float = 1.0
    pressure: PressureLaw = field(default_factory=PressureLaw)
    sigma: float = 0.1
    p_time: float = 2.0
    b_weight: float | None = None
    lambda1: float | None = None
    delta_diffeo: float = 0.1
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.b_weight is None:
            try:
                object.__setattr__(self, "b_weight", b_weight_for(self.sigma, self.p_time))
            except ValueError:
                object.__setattr__(self, "b_weight", float("nan"))

    @property
    def r(self) -> float:
        return r_exponent(self.sigma)

    @property
    def sound_speed(self) -> float:
        return math.sqrt(self.pressure.deriv(self.rho_star))

    def violations(self) -> list[str]:
        """Return human-readable rule violations; empty when valid."""
        out = []
        if not self.mu > 0:
            out.append("mu: viscosity must satisfy mu > 0")
        if not self.mu + self.nu > 0:
            out.append("nu: viscosities must satisfy mu + nu > 0")
        if not self.rho_star > 0:
            out.append("rho_star: reference density must be > 0")
        elif self.pressure.deriv(self.rho_star) <= 0:
            out.append("pressure: derivative of the pressure law must be > 0")
        for rho in (0.5 * self.rho_star, 1.5 * self.rho_star):
            if self.rho_star > 0 and self.pressure.deriv(rho) <= 0:
                out.append("pressure: derivative must be > 0 on [rho*/2, 3rho*/2]")
                break
        if not 0 < self.sigma < 1.0 / 6.0:
            out.append("sigma: must satisfy 0 < sigma < 1/6")
        if not (math.isclose(self.p_time, 2.0) or math.isclose(self.p_time, 1.0 + self.sigma)):
            out.append("p_time: must be 2 or 1+sigma")
        else:
            expected = b_weight_for(self.sigma, self.p_time)
            if not math.isclose(self.b_weight, expected, rel_tol=1e-12):
                out.append(f"b_weight: must equal {expected!r} for this (sigma, p_time)")
            elif not self.b_weight * conjugate(self.p_time) > 1:
                out.append("b_weight: must satisfy b * p' > 1")
        if self.lambda1 is not None and not self.lambda1 > 0:
            out.append("lambda1: shift must be > 0")
        if not 0 < self.delta_diffeo < 1:
            out.append("delta_diffeo: must lie in (0, 1)")
        if not self.epsilon > 0:
            out.append("epsilon: must be > 0")
        return out

    def validate(self) -> "ModelParams":
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        pr = d.pop("pressure", None)
        if isinstance(pr, dict):
            d["pressure"] = PressureLaw(**pr)
        elif pr is not None:
            d["pressure"] = pr
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown params key(s): {sorted(unknown)}")
        return cls(**d)


def pressure_deriv(params: ModelParams, rho):
    """Derivative of the pressure law at ``rho`` (must be positive)."""
    return params.pressure.deriv(rho)
