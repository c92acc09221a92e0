"""Lagrange transform x = y + int_0^t u(y, s) ds and field conversion.

Matrix fields carry their 3x3 axes first, matching ``grid.grad``:
``k[i, j] = int_0^t d_i u_j ds``.  With this convention the transformed
derivative is ``d/dx_i = sum_j (I + V0(k))_ij d/dy_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy import ndimage

from .fields import FieldState, TrajectoryRecord, AdmissibilityError, EULER, LAGRANGE
from .grid import DomainSpec, grad, hessian


class SingularMapError(AdmissibilityError):
    pass


def _last(m: np.ndarray) -> np.ndarray:
    return np.moveaxis(m, (0, 1), (-2, -1))


def _first(m: np.ndarray) -> np.ndarray:
    return np.moveaxis(m, (-2, -1), (0, 1))


def identity_field(shape) -> np.ndarray:
    eye = np.zeros((3, 3) + tuple(shape))
    for i in range(3):
        eye[i, i] = 1.0
    return eye


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise product of matrix fields (3, 3, *grid)."""
    return np.einsum("ik...,kj...->ij...", a, b)


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", a, v)


def pointwise_norm(m: np.ndarray) -> np.ndarray:
    """Frobenius norm of a matrix field; bounds the operator norm."""
    return np.sqrt(np.sum(m * m, axis=(0, 1)))


def inverse3(m: np.ndarray) -> np.ndarray:
    """Pointwise inverse of a (3, 3, *grid) field via the adjugate."""
    c = np.empty_like(m)
    for i in range(3):
        for j in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            # cofactor of entry (j, i) gives the adjugate entry (i, j)
            c[i, j] = m[j1, i1] * m[j2, i2] - m[j1, i2] * m[j2, i1]
    det = m[0, 0] * c[0, 0] + m[0, 1] * c[1, 0] + m[0, 2] * c[2, 0]
    return c / det


def v0_of(k: np.ndarray) -> np.ndarray:
    """V0(k) = (I + k)^{-1} - I by direct pointwise 3x3 inversion."""
    eye = identity_field(k.shape[2:])
    return inverse3(eye + k) - eye


def dv0(k: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Directional derivative of V0 at k along e: -(I+k)^{-1} e (I+k)^{-1}."""
    inv = inverse3(identity_field(k.shape[2:]) + k)
    return -matmul(matmul(inv, e), inv)


@dataclass
class DisplacementField:
    disp: np.ndarray
    k: np.ndarray
    k2: np.ndarray | None = None
    grad_integral: float = 0.0
    jac: np.ndarray | None = None
    v0: np.ndarray | None = None

    def __post_init__(self):
        if self.jac is None:
            self.jac = identity_field(self.k.shape[2:]) + self.k
        if self.v0 is None:
            if float(pointwise_norm(self.k).max(initial=0.0)) >= 1.0:
                raise SingularMapError("sup |k| >= 1: the Lagrange map may be singular")
            self.v0 = v0_of(self.k)

    @classmethod
    def zero(cls, domain: DomainSpec) -> "DisplacementField":
        if domain.periodic:
            g = domain.shape
            return cls(np.zeros((3,) + g), np.zeros((3, 3) + g), np.zeros((3, 3, 3) + g))
        return cls(np.zeros((1,) + domain.shape), np.zeros((3, 3) + domain.shape))

    @classmethod
    def from_k(cls, k: np.ndarray, k2: np.ndarray | None = None, disp=None) -> "DisplacementField":
        if disp is None:
            disp = np.zeros((3,) + k.shape[2:])
        gi = float(pointwise_norm(k).max(initial=0.0))
        return cls(disp, k, k2, gi)

    def sup_k(self) -> float:
        return float(pointwise_norm(self.k).max(initial=0.0))

    def det(self) -> np.ndarray:
        return np.linalg.det(_last(self.jac))

    def check(self, delta: float) -> "DisplacementField":
        if self.sup_k() >= 1.0:
            raise SingularMapError("sup |k| >= 1: the Lagrange map may be singular")
        if self.grad_integral >= delta:
            raise AdmissibilityError(
                f"int_0^t |grad u|_inf dt = {self.grad_integral:.3e} >= delta = {delta}")
        return self

    def det_bounds_hold(self, delta: float) -> bool:
        c = (1.0 - delta) ** -3
        d = self.det()
        return bool(np.all(d >= 1.0 / c) and np.all(d <= c))


def _grad_u(u: np.ndarray, domain: DomainSpec) -> np.ndarray:
    return grad(u, domain)


def displacement_history(traj: TrajectoryRecord, domain: DomainSpec, with_k2: bool = True,
                         grads=None, hessians=None):
    """Yield the DisplacementField at every node of ``traj`` (trapezoid rule).

    ``grads``/``hessians`` may supply precomputed grad u and grad^2 u.
    """
    if traj.frame != LAGRANGE:
        raise ValueError("displacement requires a Lagrangian trajectory")
    per = domain.periodic
    disp = np.zeros_like(traj.states[0].vel)
    k = np.zeros((3, 3) + domain.shape)
    k2 = np.zeros((3, 3, 3) + domain.shape) if (per and with_k2) else None
    gi = 0.0
    prev_u = traj.states[0].vel
    prev_g = grads[0] if grads is not None else _grad_u(prev_u, domain)
    prev_h = None
    if k2 is not None:
        prev_h = hessians[0] if hessians is not None else hessian(prev_u, domain)
    prev_gn = float(pointwise_norm(prev_g).max())
    yield DisplacementField(disp.copy(), k.copy(), None if k2 is None else k2.copy(), 0.0)
    for n in range(1, len(traj)):
        h = traj.times[n] - traj.times[n - 1]
        u = traj.states[n].vel
        g = grads[n] if grads is not None else _grad_u(u, domain)
        gn = float(pointwise_norm(g).max())
        disp = disp + 0.5 * h * (prev_u + u)
        k = k + 0.5 * h * (prev_g + g)
        gi += 0.5 * h * (prev_gn + gn)
        if k2 is not None:
            hh = hessians[n] if hessians is not None else hessian(u, domain)
            k2 = k2 + 0.5 * h * (prev_h + hh)
            prev_h = hh
        prev_u, prev_g, prev_gn = u, g, gn
        if float(pointwise_norm(k).max()) >= 1.0:
            raise SingularMapError(f"sup |k| >= 1 at t = {traj.times[n]:.4g}")
        yield DisplacementField(disp.copy(), k.copy(), None if k2 is None else k2.copy(), gi)


def accumulate_displacement(traj: TrajectoryRecord, domain: DomainSpec, delta: float | None = None,
                            with_k2: bool = True) -> DisplacementField:
    """Displacement data at the final time of ``traj``.

    Raises SingularMapError when sup|k| >= 1 and AdmissibilityError when the
    accumulated sup-gradient integral reaches ``delta``.
    """
    last = None
    for last in displacement_history(traj, domain, with_k2=with_k2):
        if delta is not None and last.grad_integral >= delta:
            last.check(delta)
    return last


def check_injectivity(dfield: DisplacementField, domain: DomainSpec, samples: int = 2000,
                      seed: int = 0) -> dict:
    """Sample point pairs and compare |x1 - x2| with |y1 - y2|.

    Returns the worst observed ratio and the guaranteed lower bound
    ``1 - int |grad u|_inf dt``.  Half of the pairs are grid neighbours.
    """
    rng = np.random.default_rng(seed)
    y = domain.coords()
    if domain.periodic:
        pts = y.reshape(3, -1)
        dsp = dfield.disp.reshape(3, -1)
    else:
        pts = y[None]
        dsp = dfield.disp.reshape(1, -1)
    npts = pts.shape[1]
    i1 = rng.integers(0, npts, samples)
    i2 = rng.integers(0, npts, samples)
    half = samples // 2
    if domain.periodic:
        n = domain.n
        idx = np.stack(np.unravel_index(i1[:half], domain.shape))
        step = rng.integers(-1, 2, size=idx.shape)
        step[:, np.all(step == 0, axis=0)] = np.array([[1], [0], [0]])
        i2[:half] = np.ravel_multi_index(tuple(np.clip(idx + step, 0, n - 1)), domain.shape)
    else:
        i2[:half] = np.clip(i1[:half] + 1, 0, npts - 1)
    keep = i1 != i2
    i1, i2 = i1[keep], i2[keep]
    dy = pts[:, i1] - pts[:, i2]
    dx = dy + dsp[:, i1] - dsp[:, i2]
    ratio = np.linalg.norm(dx, axis=0) / np.linalg.norm(dy, axis=0)
    worst = float(ratio.min()) if ratio.size else 1.0
    bound = 1.0 - dfield.grad_integral
    return {"worst_ratio": worst, "lower_bound": bound, "pairs": int(ratio.size),
            "ok": bool(worst >= bound - 1e-12)}


# ---------------------------------------------------------------------------
# interpolation and coordinate conversion

def _sample_periodic(f: np.ndarray, pts: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Cubic B-spline interpolation of a periodic scalar at physical points."""
    idx = pts / domain.spacing
    return ndimage.map_coordinates(f, idx, order=3, mode="grid-wrap", prefilter=True)


def _sample(f: np.ndarray, pts: np.ndarray, domain: DomainSpec) -> np.ndarray:
    if domain.periodic:
        if f.ndim == 3:
            return _sample_periodic(f, pts, domain)
        return np.stack([_sample(c, pts, domain) for c in f])
    r = domain.coords()
    if f.ndim == 1:
        return np.interp(pts[0], r, f)
    return np.stack([_sample(c, pts, domain) for c in f])


def inverse_map(dfield: DisplacementField, domain: DomainSpec, tol: float = 1e-10,
                max_iter: int = 50, damping: float = 1.0) -> np.ndarray:
    """Solve x = y + disp(y) for y at every grid point x by fixed-point iteration."""
    x = domain.coords()
    if not domain.periodic:
        x = x[None]
    y = x - dfield.disp
    for _ in range(max_iter):
        y_new = (1 - damping) * y + damping * (x - _sample(dfield.disp, y, domain))
        step = float(np.max(np.abs(y_new - y)))
        y = y_new
        if step < tol:
            break
    return y


def pullback_to_euler(state: FieldState, dfield: DisplacementField, domain: DomainSpec,
                      delta: float | None = None) -> FieldState:
    """theta(x) = eta(X_t(x)), v(x) = u(X_t(x)) with X_t the inverse Lagrange map."""
    if state.frame != LAGRANGE:
        raise ValueError("pullback expects a Lagrangian state")
    if delta is not None:
        dfield.check(delta)
    y = inverse_map(dfield, domain)
    return FieldState(_sample(state.theta, y, domain), _sample(state.vel, y, domain), EULER, state.time)


def pushforward_to_lagrange(state: FieldState, dfield: DisplacementField, domain: DomainSpec,
                            delta: float | None = None) -> FieldState:
    """eta(y) = theta(y + disp(y)), u(y) = v(y + disp(y))."""
    if state.frame != EULER:
        raise ValueError("pushforward expects an Eulerian state")
    if delta is not None:
        dfield.check(delta)
    y = domain.coords()
    if not domain.periodic:
        y = y[None]
    x = y + dfield.disp
    return FieldState(_sample(state.theta, x, domain), _sample(state.vel, x, domain), LAGRANGE, state.time)


def norm_change_constant(delta: float, q: float) -> float:
    """Constant in ||(theta, v)||_Lq <= C ||(eta, u)||_Lq for an admissible map."""
    if q == math.inf:
        return 1.0
    return (1.0 - delta) ** (-3.0 / q)
