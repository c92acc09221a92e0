"""Computational domains, discrete differential operators and discrete norms.

Two domain kinds are supported:

* ``periodic``: a cube of side ``L`` with ``n`` points per axis.  Derivatives
  are spectral (exact for resolved Fourier modes).
* ``radial``: the exterior of the unit ball truncated at radius ``R``,
  restricted to radially symmetric fields ``theta(r)``, ``w(r) e_r``.  The
  grid is vertex-centred, ``r_0 = R0`` and ``r_{n-1} = R``; derivatives use
  centred second-order stencils (one-sided second order at the ends).

Array conventions: a scalar field has the grid shape, a vector field has a
leading component axis (3 on the box, 1 on the radial grid) and a matrix
field two leading axes.  Gradients of vector fields follow
``grad(u)[i, j] = d u_j / d y_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache
import math

import numpy as np
from scipy import fft as sfft


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "periodic"
    n: int = 32
    L: float = 2 * math.pi
    R0: float = 1.0
    R: float = 20.0

    def __post_init__(self):
        if self.kind not in ("periodic", "radial"):
            raise ValueError(f"unknown domain kind {self.kind!r}")

    def violations(self) -> list[str]:
        out = []
        if self.n < 8:
            out.append("n: need at least 8 points per axis")
        if self.kind == "periodic" and not self.L > 0:
            out.append("L: box side must be > 0")
        if self.kind == "radial":
            if self.R0 != 1.0:
                out.append("R0: inner radius is fixed to 1")
            if not self.R > 4 * self.R0:
                out.append("R: outer radius must exceed 4*R0")
        return out

    def validate(self) -> "DomainSpec":
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))
        return self

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * 3 if self.periodic else (self.n,)

    @property
    def ndim_vec(self) -> int:
        return 3 if self.periodic else 1

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.L / self.n
        return (self.R - self.R0) / (self.n - 1)

    @property
    def volume(self) -> float:
        if self.periodic:
            return self.L ** 3
        return 4.0 / 3.0 * math.pi * (self.R ** 3 - self.R0 ** 3)

    def coords(self) -> np.ndarray:
        """Grid coordinates: (3, n, n, n) on the box, (n,) radii otherwise."""
        if self.periodic:
            x = np.arange(self.n) * self.spacing
            return np.stack(np.meshgrid(x, x, x, indexing="ij"))
        return np.linspace(self.R0, self.R, self.n)

    def weights(self) -> np.ndarray | float:
        """Quadrature weights (scalar cell volume on the box)."""
        if self.periodic:
            return self.spacing ** 3
        r = self.coords()
        w = np.full(self.n, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return 4.0 * math.pi * r ** 2 * w

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# spectral machinery (periodic box)

@lru_cache(maxsize=8)
def wavenumbers(n: int, L: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Broadcastable wavenumber arrays for an ``rfftn`` layout.

    The Nyquist wavenumber is zeroed in the first-derivative arrays.
    """
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    kr = 2 * np.pi * np.fft.rfftfreq(n, d=L / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
        kr[-1] = 0.0
    return k[:, None, None], k[None, :, None], kr[None, None, :]


@lru_cache(maxsize=8)
def wavenumbers_sq(n: int, L: float) -> np.ndarray:
    """|k|^2 on the rfftn layout, Nyquist included."""
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    kr = 2 * np.pi * np.fft.rfftfreq(n, d=L / n)
    return k[:, None, None] ** 2 + k[None, :, None] ** 2 + kr[None, None, :] ** 2


def fft(f: np.ndarray) -> np.ndarray:
    return sfft.rfftn(f, axes=(-3, -2, -1))


def ifft(fh: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(fh, s=(n, n, n), axes=(-3, -2, -1))


def _check(field: np.ndarray, domain: DomainSpec, lead: int):
    if field.shape[field.ndim - len(domain.shape):] != domain.shape or field.ndim != lead + len(domain.shape):
        raise ShapeError(f"field of shape {field.shape} does not match domain grid {domain.shape}")


def _kvec(domain: DomainSpec, lead: int) -> np.ndarray:
    kx, ky, kz = np.broadcast_arrays(*wavenumbers(domain.n, domain.L))
    return np.stack([kx, ky, kz]).reshape((3,) + (1,) * lead + kx.shape)


def _spectral_grad(f: np.ndarray, domain: DomainSpec) -> np.ndarray:
    # derivative direction becomes the new leading axis
    return ifft(1j * _kvec(domain, f.ndim - 3) * fft(f)[None], domain.n)


def _radial_d(f: np.ndarray, domain: DomainSpec) -> np.ndarray:
    return np.gradient(f, domain.spacing, axis=-1, edge_order=2)


def grad(field: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Gradient with the derivative direction as a new leading axis.

    Scalar -> vector; vector u -> matrix G with G[i, j] = d_i u_j; on the box
    this nests, so ``grad(grad(u))[l, i, j] = d_l d_i u_j``.

    On the radial grid a vector field ``w e_r`` has gradient
    ``diag(w', w/r, w/r)`` in the local spherical frame.
    """
    if domain.periodic:
        lead = field.ndim - 3
        if lead < 0:
            raise ShapeError(f"field of shape {field.shape} does not match domain grid {domain.shape}")
        _check(field, domain, lead)
        return _spectral_grad(field, domain)
    if field.ndim == 1:
        _check(field, domain, 0)
        return _radial_d(field, domain)[None]
    _check(field, domain, 1)
    w = field[0]
    r = domain.coords()
    out = np.zeros((3, 3) + domain.shape)
    out[0, 0] = _radial_d(w, domain)
    out[1, 1] = out[2, 2] = w / r
    return out


def div(vfield: np.ndarray, domain: DomainSpec) -> np.ndarray:
    _check(vfield, domain, 1)
    if domain.periodic:
        kx, ky, kz = wavenumbers(domain.n, domain.L)
        vh = fft(vfield)
        return ifft(1j * (kx * vh[0] + ky * vh[1] + kz * vh[2]), domain.n)
    w = vfield[0]
    r = domain.coords()
    return _radial_d(w, domain) + 2.0 * w / r


def div_matrix(mfield: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Row-wise divergence: (Div K)_i = sum_j d_j K_ij (periodic box only)."""
    _check(mfield, domain, 2)
    if not domain.periodic:
        raise NotImplementedError("matrix divergence is only defined on the periodic box")
    kx, ky, kz = wavenumbers(domain.n, domain.L)
    kh = fft(mfield)
    return ifft(1j * (kx * kh[:, 0] + ky * kh[:, 1] + kz * kh[:, 2]), domain.n)


def laplace(field: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Laplacian of a scalar, or of each component of a box vector field.

    For a radial vector field ``w e_r`` returns the radial component of the
    vector Laplacian, d/dr (w' + 2 w / r).
    """
    if domain.periodic:
        k2 = wavenumbers_sq(domain.n, domain.L)
        return ifft(-k2 * fft(field), domain.n)
    r = domain.coords()
    if field.ndim == 1:
        return _radial_d(_radial_d(field, domain), domain) + 2.0 / r * _radial_d(field, domain)
    _check(field, domain, 1)
    return _radial_d(div(field, domain), domain)[None]


def deform(u: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Deformation tensor D(u) = grad u + (grad u)^T."""
    g = grad(u, domain)
    return g + np.swapaxes(g, 0, 1)


def hessian(u: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Second derivatives of a box field: H[l, i, ...] = d_l d_i field."""
    if not domain.periodic:
        raise NotImplementedError("hessian is only implemented on the periodic box")
    return hessian_from_hat(fft(u), domain)


def hessian_from_hat(uh: np.ndarray, domain: DomainSpec) -> np.ndarray:
    ks = wavenumbers(domain.n, domain.L)
    pairs = [(l, i) for l in range(3) for i in range(l, 3)]
    d = ifft(np.stack([-(ks[l] * ks[i]) * uh for l, i in pairs]), domain.n)
    out = np.empty((3, 3) + d.shape[1:])
    for m, (l, i) in enumerate(pairs):
        out[l, i] = d[m]
        out[i, l] = d[m]
    return out


def grad_from_hat(fh: np.ndarray, domain: DomainSpec) -> np.ndarray:
    return ifft(1j * _kvec(domain, fh.ndim - 3) * fh[None], domain.n)


def spectral_filter_mean(f: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Subtract the spatial mean (box zero mode) of a scalar field."""
    return f - f.mean()


# ---------------------------------------------------------------------------
# norms

def _pointwise_abs(field: np.ndarray, domain: DomainSpec) -> np.ndarray:
    lead = field.ndim - len(domain.shape)
    if lead < 0 or field.shape[lead:] != domain.shape:
        raise ShapeError(f"field of shape {field.shape} does not match domain grid {domain.shape}")
    if lead == 0:
        return np.abs(field)
    axes = tuple(range(lead))
    return np.sqrt(np.sum(np.abs(field) ** 2, axis=axes))


def lq_norm(field: np.ndarray, domain: DomainSpec, q: float) -> float:
    """Discrete L_q norm of the pointwise Euclidean magnitude.

    ``q`` may be any real number >= 1 or ``inf``.
    """
    if not (q == math.inf or (isinstance(q, (int, float)) and q >= 1)):
        raise ValueError(f"unsupported Lebesgue exponent q={q!r}")
    a = _pointwise_abs(field, domain)
    if q == math.inf:
        return float(a.max())
    w = domain.weights()
    if q == 2:
        return float(math.sqrt(np.sum(w * a * a)))
    return float(np.sum(w * a ** q) ** (1.0 / q))


def sobolev_norm(field: np.ndarray, domain: DomainSpec, q: float, order: int = 1) -> float:
    """H^m_q norm as the sum of the L_q norms of derivatives up to ``order``."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if order == 2 and not domain.periodic and field.ndim > 1:
        # radial vector: |grad^2 (w e_r)| built from w'' and (w/r)'
        w = field[0]
        r = domain.coords()
        w1 = _radial_d(w, domain)
        w2 = _radial_d(w1, domain)
        d1 = _radial_d(w / r, domain)
        sec = np.stack([w2, d1, d1, (w1 - w / r) / r, (w1 - w / r) / r])
        return (lq_norm(field, domain, q) + lq_norm(grad(field, domain), domain, q)
                + lq_norm(sec, domain, q))
    total = lq_norm(field, domain, q)
    d = field
    for _ in range(order):
        d = grad(d, domain)
        total += lq_norm(d, domain, q)
    return total
