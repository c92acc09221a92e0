"""Independent reference implementations used by the tests.

The nonlinear-term oracle evaluates analytic single-mode fields pointwise
and differentiates them by the complex-step method, so it shares no code
with the spectral assembly.
"""
import numpy as np

H = 1e-30


def mode_fields(seed=0, amp_u=0.3, amp_k=0.04, amp_eta=0.2):
    """Analytic u, eta, d_t u and k on the 2pi box, as callables of y (3, ...)."""
    rng = np.random.default_rng(seed)
    mu_ = rng.integers(-2, 3, size=(3, 3))
    mu_[np.all(mu_ == 0, axis=1)] = [1, 0, 0]
    ph = rng.uniform(0, 2 * np.pi, size=3)
    au = amp_u * rng.uniform(0.5, 1.0, size=3)
    me = rng.integers(-2, 3, size=3)
    me[0] = 1
    mk = rng.integers(-2, 3, size=(3, 3, 3))
    ak = amp_k * rng.uniform(-1, 1, size=(3, 3))
    pk = rng.uniform(0, 2 * np.pi, size=(3, 3))
    at = rng.uniform(-0.3, 0.3, size=3)

    def u(y):
        return np.stack([au[j] * np.sin(np.tensordot(mu_[j], y, 1) + ph[j]) for j in range(3)])

    def gradu(y):  # [i, j] = d_i u_j, exact
        return np.stack([np.stack([au[j] * mu_[j, i] * np.cos(np.tensordot(mu_[j], y, 1) + ph[j])
                                   for j in range(3)]) for i in range(3)])

    def dtu(y):
        return np.stack([at[j] * np.cos(np.tensordot(mu_[j], y, 1) + ph[j]) for j in range(3)])

    def eta(y):
        return amp_eta * np.cos(np.tensordot(me, y, 1))

    def k(y):
        out = np.empty((3, 3) + y.shape[1:], dtype=np.result_type(y, float))
        for i in range(3):
            for j in range(3):
                out[i, j] = ak[i, j] * np.sin(np.tensordot(mk[i, j], y, 1) + pk[i, j])
        return out

    return u, gradu, dtu, eta, k


def cs_grad(f, y):
    """Complex-step gradient: out[l, ...] = d_l f(y)."""
    out = []
    for l in range(3):
        yy = y.astype(complex)
        yy[l] = yy[l] + 1j * H
        out.append(np.imag(f(yy)) / H)
    return np.stack(out)


def _inv(m):
    return np.moveaxis(np.linalg.inv(np.moveaxis(m, (0, 1), (-2, -1))), (-2, -1), (0, 1))


def oracle_FG(y, gradu, dtu, eta, k, mu, nu, rho_star, dp):
    """F and G at points y (3, m) from the Eulerian form of the equations."""
    eye = np.eye(3)[:, :, None]

    def stress_x(yy):
        g = gradu(yy)
        kk = k(yy)
        a = np.einsum("im...,mj...->ij...", _inv(eye + kk), g)
        tr = np.einsum("ii...->...", a)
        return mu * (a + np.swapaxes(a, 0, 1)) + nu * tr * eye

    def stress_y(yy):
        g = gradu(yy)
        tr = np.einsum("ii...->...", g)
        return mu * (g + np.swapaxes(g, 0, 1)) + nu * tr * eye

    inv = _inv(eye + k(y))
    dsx = cs_grad(stress_x, y)    # [l, j, i]
    dsy = cs_grad(stress_y, y)
    divx = np.einsum("jl...,lji...->i...", inv, dsx)
    divy = np.einsum("jji...->i...", dsy)
    g = gradu(y)
    ge = cs_grad(eta, y)
    e = eta(y)
    gradx_eta = np.einsum("ij...,j...->i...", inv, ge)
    p_full = dp(rho_star + e) * gradx_eta
    G = -e * dtu(y) + (divx - divy) - (p_full - dp(rho_star) * ge)
    tr_x = np.einsum("ij...,ji...->...", inv, g)
    F = -((rho_star + e) * tr_x - rho_star * np.einsum("ii...->...", g))
    return F, G
