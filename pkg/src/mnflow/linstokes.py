"""Linearized compressible Stokes operator, its resolvent and semigroup.

State vectors are ``(zeta, w)`` and the generator acts as

    A(zeta, w) = (-rho* div w, (mu lap w + (mu+nu) grad div w - P' grad zeta) / rho*)

with ``P' = pressure'(rho*)``.  On the periodic box every Fourier mode
decouples into a 2x2 longitudinal block for ``(zeta, w . khat)`` and a
diagonal heat factor for the transverse velocity; exponentials of the 2x2
block are evaluated in closed form,

    exp(tM) = e^{mt} [cosh(st) I + sinh(st)/s (M - mI)],  m = tr M / 2,
    s^2 = m^2 - det M,

which stays exact and finite through the double root at the
sonic/viscous crossover.  On the radial domain the operator is a sparse
matrix with homogeneous Dirichlet rows for ``w`` at both radii.
"""
from __future__ import annotations

from functools import cached_property
import math

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .fields import FieldState, LAGRANGE
from .grid import DomainSpec, fft, ifft, div, grad, laplace, lq_norm
from .params import ModelParams


class SpectrumError(ArithmeticError):
    """The resolvent parameter hits (or nearly hits) the discrete spectrum."""


def _cosh_sinhc(m, s, t):
    """Return e^{mt} cosh(st) and e^{mt} sinh(st)/s elementwise (s complex)."""
    z = s * t
    small = np.abs(z) < 1e-3
    lp = np.exp((m + s) * t)
    lm = np.exp((m - s) * t)
    c = 0.5 * (lp + lm)
    with np.errstate(divide="ignore", invalid="ignore"):
        sn = (lp - lm) / (2.0 * s)
    if np.any(small):
        zz = z[small] ** 2
        em = np.exp(m[small] * t)
        c[small] = em * (1.0 + zz / 2.0 + zz * zz / 24.0)
        sn[small] = em * t * (1.0 + zz / 6.0 + zz * zz / 120.0)
    return c, sn


class LinearOp:
    """Generator of the linearized system on a periodic box or radial domain."""

    def __init__(self, params: ModelParams, domain: DomainSpec, dt_radial: float = 0.01):
        self.params = params
        self.domain = domain
        self.dt_radial = dt_radial
        self.rho = params.rho_star
        self.pp = float(params.pressure.deriv(params.rho_star))
        self._lu_cache = {}

    # ------------------------------------------------------------------
    # operator action in physical space (shared by both domains)

    def apply(self, state: FieldState) -> FieldState:
        """A(zeta, w) evaluated with the grid differential operators."""
        if np.iscomplexobj(state.theta) or np.iscomplexobj(state.vel):
            re = self.apply(FieldState(state.theta.real, state.vel.real, state.frame, state.time))
            im = self.apply(FieldState(state.theta.imag, state.vel.imag, state.frame, state.time))
            return FieldState(re.theta + 1j * im.theta, re.vel + 1j * im.vel, state.frame, state.time)
        p, d = self.params, self.domain
        w = state.vel
        dw = div(w, d)
        dz = -self.rho * dw
        if d.periodic:
            visc = p.mu * laplace(w, d) + (p.mu + p.nu) * grad(dw, d)
        else:
            # radial reduction: mu lap u + (mu+nu) grad div u = (2mu+nu) d_r div u
            visc = (2 * p.mu + p.nu) * grad(dw, d)
        dv = (visc - self.pp * grad(state.theta, d)) / self.rho
        if not d.periodic:
            dv[:, 0] = 0.0
            dv[:, -1] = 0.0
        return FieldState(dz, dv, state.frame, state.time)

    def energy(self, state: FieldState) -> float:
        """0.5 * int (rho* |w|^2 + P'/rho* zeta^2)."""
        d = self.domain
        return 0.5 * (self.rho * lq_norm(state.vel, d, 2) ** 2 + self.pp / self.rho * lq_norm(state.theta, d, 2) ** 2)

    # ------------------------------------------------------------------
    # periodic box: per-mode symbols

    def _symbols(self, full: bool):
        d = self.domain
        n, L = d.n, d.L
        k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
        kz = k if full else 2 * np.pi * np.fft.rfftfreq(n, d=L / n)
        kf2 = k[:, None, None] ** 2 + k[None, :, None] ** 2 + kz[None, None, :] ** 2
        kd = k.copy()
        kzd = kz.copy()
        if n % 2 == 0:
            kd[n // 2] = 0.0
            if full:
                kzd[n // 2] = 0.0
            else:
                kzd[-1] = 0.0
        kvec = np.broadcast_arrays(kd[:, None, None], kd[None, :, None], kzd[None, None, :])
        kvec = np.stack(kvec)
        kap = np.sqrt(np.sum(kvec ** 2, axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            khat = np.where(kap > 0, kvec / np.where(kap > 0, kap, 1.0), 0.0)
        p = self.params
        a12 = -1j * self.rho * kap
        a21 = -1j * self.pp * kap / self.rho
        a22 = -(p.mu * kf2 + (p.mu + p.nu) * kap ** 2) / self.rho
        heat = -p.mu * kf2 / self.rho
        return {"kap": kap, "khat": khat, "a12": a12, "a21": a21, "a22": a22, "heat": heat}

    @cached_property
    def _sym_r(self):
        return self._symbols(full=False)

    @cached_property
    def _sym_c(self):
        return self._symbols(full=True)

    def block(self, xi) -> np.ndarray:
        """The 4x4 complex block A(xi) acting on (zeta^, w^) for wavevector xi."""
        xi = np.asarray(xi, dtype=float)
        p = self.params
        k2 = float(xi @ xi)
        out = np.zeros((4, 4), dtype=complex)
        out[0, 1:] = -1j * self.rho * xi
        out[1:, 0] = -1j * self.pp * xi / self.rho
        out[1:, 1:] = -(p.mu * k2 * np.eye(3) + (p.mu + p.nu) * np.outer(xi, xi)) / self.rho
        return out

    def to_hat(self, state: FieldState) -> np.ndarray:
        return fft(state.pack())

    def from_hat(self, uh: np.ndarray, time: float = 0.0, frame: str = LAGRANGE) -> FieldState:
        return FieldState.unpack(ifft(uh, self.domain.n), frame, time)

    def propagate_hat(self, uh: np.ndarray, t: float, shift: float = 0.0) -> np.ndarray:
        """exp(t (A - shift)) applied to an rfftn-layout state (4, n, n, n//2+1)."""
        if t < 0:
            raise ValueError("semigroup time must be non-negative")
        if t == 0:
            # exact identity; the longitudinal/transverse split would round
            return uh.astype(complex)
        sym = self._sym_r
        return self._propagate(uh, t, shift, sym)

    def _propagate(self, uh, t, shift, sym):
        khat = sym["khat"]
        zeta = uh[0]
        w = uh[1:]
        wl = np.sum(khat * w, axis=0)
        wt = w - khat * wl
        m = 0.5 * sym["a22"]
        det = -sym["a12"] * sym["a21"]
        s = np.sqrt((m * m - det).astype(complex))
        c, sn = _cosh_sinhc(m.astype(complex), s, t)
        z_new = c * zeta + sn * (-m * zeta + sym["a12"] * wl)
        wl_new = c * wl + sn * (sym["a21"] * zeta + (sym["a22"] - m) * wl)
        wt_new = np.exp(sym["heat"] * t) * wt
        out = np.empty_like(uh, dtype=complex)
        out[0] = z_new
        out[1:] = khat * wl_new + wt_new
        if shift:
            out *= math.exp(-shift * t)
        return out

    def apply_hat(self, uh: np.ndarray) -> np.ndarray:
        """A applied in rfftn layout (used for time derivatives)."""
        sym = self._sym_r
        khat = sym["khat"]
        zeta, w = uh[0], uh[1:]
        wl = np.sum(khat * w, axis=0)
        wt = w - khat * wl
        out = np.empty_like(uh, dtype=complex)
        out[0] = sym["a12"] * wl
        out[1:] = khat * (sym["a21"] * zeta + sym["a22"] * wl) + sym["heat"] * wt
        return out

    # ------------------------------------------------------------------
    # public operations

    def semigroup_apply(self, t: float, state0: FieldState) -> FieldState:
        if t < 0:
            raise ValueError("semigroup time must be non-negative")
        if self.domain.periodic:
            if t == 0:
                return FieldState(state0.theta.copy(), state0.vel.copy(), state0.frame, state0.time)
            uh = self.propagate_hat(self.to_hat(state0), t)
            return self.from_hat(uh, state0.time + t, state0.frame)
        return self._radial_evolve(t, state0)

    def shifted_semigroup_apply(self, lambda1: float, t: float, state0: FieldState) -> FieldState:
        out = self.semigroup_apply(t, state0)
        f = math.exp(-lambda1 * t)
        return FieldState(f * out.theta, f * out.vel, out.frame, out.time)

    def resolvent_solve(self, lam: complex, f: np.ndarray, g: np.ndarray):
        """Solve lam zeta + rho* div w = f,  rho* lam w - Div(...) = g."""
        if self.domain.periodic:
            return self._resolvent_box(lam, f, g)
        return self._resolvent_radial(lam, f, g)

    def _resolvent_box(self, lam, f, g):
        sym = self._sym_c
        n = self.domain.n
        fh = np.fft.fftn(f, axes=(-3, -2, -1))
        gh = np.fft.fftn(g, axes=(-3, -2, -1)) / self.rho
        khat = sym["khat"]
        gl = np.sum(khat * gh, axis=0)
        gt = gh - khat * gl
        a11 = lam
        a12 = -sym["a12"]
        a21 = -sym["a21"]
        a22 = lam - sym["a22"]
        det = a11 * a22 - a12 * a21
        tdet = lam - sym["heat"]
        scale = max(1.0, abs(lam)) ** 2
        if np.min(np.abs(det)) < 1e-13 * scale or np.min(np.abs(tdet)) < 1e-13 * max(1.0, abs(lam)):
            raise SpectrumError(f"lambda = {lam} lies on the discrete spectrum")
        zh = (a22 * fh - a12 * gl) / det
        wl = (a11 * gl - a21 * fh) / det
        wh = khat * wl + gt / tdet
        zeta = np.fft.ifftn(zh, axes=(-3, -2, -1))
        w = np.fft.ifftn(wh, axes=(-3, -2, -1))
        if np.isrealobj(f) and np.isrealobj(g) and np.isreal(lam):
            return zeta.real, w.real
        return zeta, w

    def resolvent_residual(self, lam, f, g, zeta, w) -> tuple[float, float]:
        """Relative residuals of both resolvent equations via ``apply``."""
        a = self.apply(FieldState(zeta, w))
        r1 = lam * zeta - a.theta - f
        r2 = self.rho * (lam * w - a.vel) - g
        d = self.domain
        if not d.periodic:
            r2 = r2[:, 1:-1]
            g = g[:, 1:-1]
        n1 = np.linalg.norm(r1.ravel()) / max(np.linalg.norm(np.ravel(f)), 1e-300)
        n2 = np.linalg.norm(r2.ravel()) / max(np.linalg.norm(np.ravel(g)), 1e-300)
        return float(n1), float(n2)

    def spectral_abscissa(self) -> float:
        if self.domain.periodic:
            sym = self._sym_r
            m = 0.5 * sym["a22"]
            det = -sym["a12"] * sym["a21"]
            s = np.sqrt((m * m - det).astype(complex))
            return float(max(np.max((m + s).real), np.max(sym["heat"])))
        return self._radial_abscissa()

    def default_lambda1(self) -> float:
        return 2.0 * max(1.0, abs(self.spectral_abscissa()))

    def crank_nicolson_apply(self, t: float, state0: FieldState, dt: float) -> FieldState:
        """Implicit trapezoidal stepping (periodic: per-mode Cayley transform)."""
        if not self.domain.periodic:
            return self._radial_evolve(t, state0, dt)
        nsteps = max(1, int(math.ceil(t / dt - 1e-12)))
        h = t / nsteps
        sym = self._sym_r
        khat = sym["khat"]
        uh = self.to_hat(state0)
        zeta, w = uh[0], uh[1:]
        wl = np.sum(khat * w, axis=0)
        wt = w - khat * wl
        # (I - h/2 M)^{-1} (I + h/2 M) on the 2x2 block, explicit inverse
        a12, a21, a22 = sym["a12"], sym["a21"], sym["a22"]
        b11, b12, b21, b22 = 1.0, -0.5 * h * a12, -0.5 * h * a21, 1.0 - 0.5 * h * a22
        det = b11 * b22 - b12 * b21
        tf = (1 + 0.5 * h * sym["heat"]) / (1 - 0.5 * h * sym["heat"])
        for _ in range(nsteps):
            rz = zeta + 0.5 * h * a12 * wl
            rw = wl + 0.5 * h * (a21 * zeta + a22 * wl)
            zeta = (b22 * rz - b12 * rw) / det
            wl = (b11 * rw - b21 * rz) / det
            wt = tf * wt
        out = np.empty_like(uh)
        out[0] = zeta
        out[1:] = khat * wl + wt
        return self.from_hat(out, state0.time + t, state0.frame)

    # ------------------------------------------------------------------
    # radial domain

    @cached_property
    def _d1(self) -> sparse.csr_matrix:
        """First-derivative matrix identical to numpy.gradient(edge_order=2)."""
        n, h = self.domain.n, self.domain.spacing
        rows, cols, vals = [], [], []
        for i in range(1, n - 1):
            rows += [i, i]
            cols += [i - 1, i + 1]
            vals += [-0.5 / h, 0.5 / h]
        rows += [0, 0, 0, n - 1, n - 1, n - 1]
        cols += [0, 1, 2, n - 3, n - 2, n - 1]
        vals += [-1.5 / h, 2.0 / h, -0.5 / h, 0.5 / h, -2.0 / h, 1.5 / h]
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """Sparse generator on unknowns (zeta at all nodes, w at interior nodes)."""
        if self.domain.periodic:
            raise NotImplementedError("the sparse matrix form exists only on the radial domain")
        n = self.domain.n
        p = self.params
        r = self.domain.coords()
        d1 = self._d1
        prol = sparse.eye(n, n - 2, k=-1, format="csr")
        restr = prol.T.tocsr()
        divr = (d1 + sparse.diags(2.0 / r)) @ prol
        a_zw = -self.rho * divr
        a_wz = -(self.pp / self.rho) * (restr @ d1)
        a_ww = ((2 * p.mu + p.nu) / self.rho) * (restr @ d1 @ divr)
        return sparse.bmat([[None, a_zw], [a_wz, a_ww]], format="csr")

    def _radial_vec(self, state: FieldState) -> np.ndarray:
        return np.concatenate([state.theta, state.vel[0, 1:-1]])

    def _radial_state(self, x: np.ndarray, like: FieldState, time: float) -> FieldState:
        n = self.domain.n
        w = np.zeros((1, n), dtype=x.dtype)
        w[0, 1:-1] = x[n:]
        return FieldState(x[:n].copy(), w, like.frame, time)

    def _radial_evolve(self, t, state0, dt=None):
        dt = self.dt_radial if dt is None else dt
        if t == 0:
            return FieldState(state0.theta.copy(), state0.vel.copy(), state0.frame, state0.time)
        nsteps = max(1, int(math.ceil(t / dt - 1e-12)))
        h = t / nsteps
        key = round(h, 15)
        if key not in self._lu_cache:
            a = self.matrix
            eye = sparse.identity(a.shape[0], format="csc")
            self._lu_cache[key] = (spla.splu((eye - 0.5 * h * a).tocsc()), (eye + 0.5 * h * a).tocsr())
        lu, rhs_op = self._lu_cache[key]
        x = self._radial_vec(state0)
        for _ in range(nsteps):
            x = lu.solve(rhs_op @ x)
        return self._radial_state(x, state0, state0.time + t)

    def _resolvent_radial(self, lam, f, g):
        a = self.matrix
        n = self.domain.n
        m = lam * sparse.identity(a.shape[0], format="csc") - a
        rhs = np.concatenate([f, g[0, 1:-1] / self.rho])
        x = spla.spsolve(m.tocsc(), rhs.astype(complex if np.iscomplexobj(rhs) or not np.isreal(lam) else float))
        if not np.all(np.isfinite(x)):
            raise SpectrumError(f"lambda = {lam} lies on the discrete spectrum")
        w = np.zeros((1, n), dtype=x.dtype)
        w[0, 1:-1] = x[n:]
        return x[:n], w

    def _radial_abscissa(self, k: int = 8) -> float:
        """Largest real part of the spectrum without the static density modes.

        Dense for small operators, Arnoldi (shift-invert near 0) otherwise.

        Constant density at rest is an exact stationary state of the
        truncated problem (mass is conserved) and is not an L_q function on
        the true exterior domain; the collocated centred stencils add its
        odd-even twin.  Eigenpairs with zero eigenvalue and zero velocity are
        therefore deflated.
        """
        a = self.matrix
        n = self.domain.n
        if a.shape[0] <= 2000:
            # small enough for a dense solve, which never fails to converge
            vals, vecs = np.linalg.eig(a.toarray())
        else:
            try:
                vals, vecs = spla.eigs(a.tocsc(), k=k, sigma=1e-3, which="LM", ncv=4 * k,
                                       v0=np.ones(a.shape[0]), maxiter=20 * a.shape[0])
            except spla.ArpackNoConvergence as err:
                if len(err.eigenvalues) == 0:
                    raise
                vals, vecs = err.eigenvalues, err.eigenvectors
        keep = [lam.real for lam, v in zip(vals, vecs.T)
                if not (abs(lam) < 1e-8 and np.linalg.norm(v[n:]) < 1e-8 * np.linalg.norm(v))]
        return float(max(keep))
