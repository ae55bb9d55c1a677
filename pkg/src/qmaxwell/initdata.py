"""Initial data, compatibility fields and solenoidal projection.

Scenarios are built from smooth compactly supported bumps placed inside the
box, so every boundary trace of the data and of its formal time derivatives
vanishes and the compatibility conditions hold by construction. The flux
densities are taken as discrete curls, which makes them exactly divergence
free; the fields follow by constitutive inversion.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NoConvergence
from .materials import eval_linearized, linearized_dxi
from .solver import _block_diag, _newton_nodes, boundary_residual

KINDS = ("gaussian_bump", "modulated_wave", "random_smooth")


@dataclass
class InitialData:
    E0: np.ndarray
    H0: np.ndarray
    E1: np.ndarray = None
    H1: np.ndarray = None
    E2: np.ndarray = None
    H2: np.ndarray = None
    r_proxy: float = 0.0
    sweeps: dict = field(default_factory=dict)
    compat: dict = field(default_factory=dict)


def _nodes(ops):
    return ops.domain.points().reshape(-1, 3)


def _flat(u):
    return u.reshape(3, -1).T


def _grid(f, shape):
    return f.T.reshape(3, *shape)


def _solve_nodes(mats, rhs):
    return np.linalg.solve(mats, rhs[..., None])[..., 0]


def build_compat_fields(E0, H0, law, ops):
    """Formal time derivatives ``(E1, H1, E2, H2)`` at ``t = 0``.

    ``E1 = eps^D(E0)^{-1} curl H0`` and ``H1 = -mu^D(H0)^{-1} curl E0``;
    the second derivatives subtract the contraction
    ``sum_{i,k} d_{xi_i} eps^D_jk E1_k E1_i`` before the solve.
    """
    x = _nodes(ops)
    shape = ops.shape
    e0, h0 = _flat(E0), _flat(H0)
    epsD = eval_linearized(law, "eps", x, e0)
    muD = eval_linearized(law, "mu", x, h0)
    _check_invertible(epsD)
    _check_invertible(muD)
    e1 = _solve_nodes(epsD, _flat(ops.curl(H0)))
    h1 = -_solve_nodes(muD, _flat(ops.curl(E0)))
    E1, H1 = _grid(e1, shape), _grid(h1, shape)
    de = linearized_dxi(law, "eps", x, e0)
    dm = linearized_dxi(law, "mu", x, h0)
    te = np.einsum("njki,nk,ni->nj", de, e1, e1)
    tm = np.einsum("njki,nk,ni->nj", dm, h1, h1)
    e2 = _solve_nodes(epsD, _flat(ops.curl(H1)) - te)
    h2 = -_solve_nodes(muD, _flat(ops.curl(E1)) + tm)
    return E1, H1, _grid(e2, shape), _grid(h2, shape)


def _check_invertible(mats):
    from .errors import SingularJacobian

    det = np.abs(np.linalg.det(mats))
    nrm = np.max(np.abs(mats), axis=(-1, -2))
    if np.any(det <= 1e-14 * nrm**3):
        raise SingularJacobian("linearized tensor is numerically singular")


def check_compatibility(E, H, impedance, ops):
    """Boundary quadrature norm of ``tr_t H + tr_t(lambda tr_t E)``."""
    return boundary_residual(E, H, impedance, ops)


def compatibility_residuals(data, impedance, ops):
    pairs = [(data.E0, data.H0), (data.E1, data.H1), (data.E2, data.H2)]
    return {k: check_compatibility(E, H, impedance, ops) for k, (E, H) in enumerate(pairs)}


# solenoidal projection


def poisson_matrix(ops, tensor):
    """Sparse ``div_h(tensor grad_h .)`` on C-ordered nodes."""
    A = _block_diag(tensor)
    return (ops.sparse_div @ A @ ops.sparse_grad).tocsc()


def solve_poisson(ops, tensor, rhs, target=None, tau=1e-6, rtol=1e-13, maxiter=50):
    """Least-squares solution of ``div_h(tensor grad_h phi) = rhs`` with zero mean.

    On the collocated grid the operator has null modes beyond the constants
    (discrete harmonic polynomials such as ``x_1`` or ``x_1 x_2``), so the
    solution is selected by closeness. A first solve minimizes
    ``|L phi - rhs|^2 + tau |grad_h phi - target|_T^2`` (weighted norms,
    ``tau`` relative to the operator scale, ``target`` zero by default). The
    remaining residual is removed by conjugate gradients on the normal
    equations preconditioned with that regularized matrix, which leaves the
    null-mode content fixed by the first solve untouched; ``maxiter=0``
    returns the regularized solution.
    """
    n = ops.n_nodes
    L = poisson_matrix(ops, tensor)
    w = ops.weights.ravel()
    TW = sp.diags(np.tile(w, 3)) @ _block_diag(tensor)
    G = ops.sparse_grad
    N = (L.T @ sp.diags(w) @ L).tocsr()
    A = G.T @ TW @ G
    tau = tau * spla.norm(N, 1) / spla.norm(A, 1)
    ones = sp.csc_matrix(np.full((n, 1), 1.0 / n))
    lu = spla.splu(sp.bmat([[(N + tau * A).tocsc(), ones], [ones.T, None]], format="csc"))

    def solve(v):
        return lu.solve(np.concatenate([v, [0.0]]))[:n]

    b = np.ravel(rhs)
    v = L.T @ (w * b)
    if target is not None:
        v = v + tau * (G.T @ (TW @ np.ravel(target)))
    phi = solve(v)
    # preconditioned CG on N delta = L^T W r, keeping the iterate with the
    # smallest residual of the original equation
    r = b - L @ phi
    best, best_res = phi, np.linalg.norm(r)
    g = L.T @ (w * r)
    z = solve(g)
    d, gz = z, g @ z
    delta = np.zeros(n)
    for _ in range(maxiter):
        if best_res <= rtol * (1.0 + np.linalg.norm(b)) or gz <= 0.0:
            break
        Nd = N @ d
        alpha = gz / (d @ Nd)
        delta = delta + alpha * d
        g = g - alpha * Nd
        res = np.linalg.norm(b - L @ (phi + delta))
        if res < best_res:
            best, best_res = phi + delta, res
        z = solve(g)
        gz, gz_old = g @ z, gz
        d = z + (gz / gz_old) * d
    phi = best
    return phi.reshape(ops.shape)


def project_solenoidal(E0, law, ops, which="eps", tol_div=None, max_sweeps=20):
    """Remove the gradient part of ``E0`` so that ``div_h(eps(E) E) = 0``.

    Each sweep linearizes at the current field, solves for the gradient
    correction ``grad_h phi`` closest to ``E`` that cancels the residual
    ``div_h(eps(E) E)`` (see :func:`solve_poisson`) and sets
    ``E <- E - grad_h phi``; a pure discrete gradient is thus removed
    entirely. Returns ``(E, sweeps)`` where ``sweeps`` counts residual
    evaluations, so an input that already meets the tolerance reports one
    sweep.
    """
    x = _nodes(ops)
    E = np.array(E0, dtype=float, copy=True)
    if tol_div is None:
        tol_div = 1e-10 * (1.0 + ops.norm(E))

    def residual(E):
        D = _grid(np.einsum("nij,nj->ni", law.evaluate(which, x, _flat(E)), _flat(E)), ops.shape)
        return ops.div(D)

    r = residual(E)
    first = np.sqrt(ops.integrate(r * r))
    for sweep in range(max_sweeps + 1):
        res = np.sqrt(ops.integrate(r * r))
        if res <= tol_div:
            return E, sweep + 1
        if sweep == max_sweeps:
            break
        T = eval_linearized(law, which, x, _flat(E))
        # for nonlinear laws the regularized step alone damps the update in
        # the near-null directions, which keeps the sweeps contracting
        phi = solve_poisson(ops, T, r, target=E, maxiter=50 if law.is_linear or sweep > 0 else 0)
        E = E - ops.grad(phi)
        r = residual(E)
    hint = "amplitude too large" if res < 0.5 * first and not law.is_linear else "the residual lies outside the range of gradient corrections"
    raise NoConvergence(
        f"solenoidal projection did not reach {tol_div:.3g} in {max_sweeps} sweeps "
        f"(residual {res:.3g}, initial {first:.3g}); {hint}"
    )


# scenarios


def bump(points, center, radius):
    """``exp(-1 / (1 - r^2))`` with ``r = |x - center| / radius``; zero for ``r >= 1``."""
    r2 = np.sum((points - np.asarray(center)) ** 2, axis=-1) / radius**2
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def _potential_curl(ops, potential):
    """Discrete curl of a vector potential given as ``(n1, n2, n3, 3)``."""
    return ops.curl(np.moveaxis(potential, -1, 0))


def _normalize(F, amplitude):
    peak = float(np.max(np.sqrt(np.sum(F * F, axis=0))))
    if peak == 0.0 or amplitude == 0.0:
        return np.zeros_like(F)
    return F * (amplitude / peak)


def scenario_fluxes(kind, domain, ops, amplitude=0.01, seed=0, radius=None, center=None, wavenumber=4.0):
    """Exactly solenoidal ``(D0, B0)`` for a scenario kind.

    The potentials are supported in the ball of ``radius`` about ``center``
    (default: a quarter of the shortest extent about the box center), so the
    fluxes vanish on a collar of the boundary.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown initial data kind {kind!r}; expected one of {', '.join(KINDS)}")
    pts = domain.points()
    lo, ext = np.asarray(domain.lower), np.asarray(domain.extents)
    if center is None:
        center = lo + 0.5 * ext
    if radius is None:
        radius = 0.25 * float(np.min(ext))
    center = np.asarray(center, dtype=float)
    if np.any(center - radius < lo) or np.any(center + radius > lo + ext):
        raise ConfigError("initial data support must lie inside the box")
    e3, e1 = np.eye(3)[2], np.eye(3)[0]
    if kind == "gaussian_bump":
        psi = bump(pts, center, radius)
        A = psi[..., None] * e3
        C = psi[..., None] * e1
    elif kind == "modulated_wave":
        psi = bump(pts, center, radius)
        phase = wavenumber * np.pi * (pts[..., 0] - center[0])
        A = (psi * np.cos(phase))[..., None] * e3
        C = (psi * np.sin(phase))[..., None] * e1
    else:
        rng = np.random.default_rng(seed)
        A = np.zeros(pts.shape)
        C = np.zeros(pts.shape)
        for _ in range(4):
            r = radius * rng.uniform(0.4, 0.7)
            c = center + rng.uniform(-1.0, 1.0, 3) * (radius - r)
            psi = bump(pts, c, r)
            A += psi[..., None] * rng.standard_normal(3)
            C += psi[..., None] * rng.standard_normal(3)
    D0 = _normalize(_potential_curl(ops, A), amplitude)
    B0 = _normalize(_potential_curl(ops, C), 0.5 * amplitude)
    return D0, B0


def invert_flux(F, law, which, ops, tol=1e-14, max_iter=50):
    E, _ = _newton_nodes(_flat(F), law, which, _nodes(ops), np.zeros((ops.n_nodes, 3)), tol, max_iter)
    return _grid(E, ops.shape)


def make_scenario(kind, law, ops, impedance=None, amplitude=0.01, seed=0, radius=None, center=None,
                  wavenumber=4.0, tol_div=None, max_sweeps=20):
    """Build compatible, solenoidal initial data with its compatibility fields."""
    D0, B0 = scenario_fluxes(kind, ops.domain, ops, amplitude, seed, radius, center, wavenumber)
    E0 = invert_flux(D0, law, "eps", ops)
    H0 = invert_flux(B0, law, "mu", ops)
    E0, se = project_solenoidal(E0, law, ops, "eps", tol_div, max_sweeps)
    H0, sh = project_solenoidal(H0, law, ops, "mu", tol_div, max_sweeps)
    E1, H1, E2, H2 = build_compat_fields(E0, H0, law, ops)
    r = float(np.sqrt(ops.sobolev_norm2(E0, 3) + ops.sobolev_norm2(H0, 3)))
    data = InitialData(E0, H0, E1, H1, E2, H2, r_proxy=r, sweeps={"eps": se, "mu": sh})
    if impedance is not None:
        data.compat = compatibility_residuals(data, impedance, ops)
    return data
