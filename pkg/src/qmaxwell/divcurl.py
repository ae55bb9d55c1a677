"""Div-curl regularity probes and normal-derivative reconstruction.

On a box face the frame ``(tau1, tau2, nu)`` is constant, so the curl splits
as ``curl u = J(nu) d_nu u + sum_i J(tau_i) d_tau_i u``. Inverting ``J(nu)``
on the tangent plane recovers the tangential part of the normal derivative
from the curl and tangential derivatives; the divergence of ``alpha u`` then
yields the remaining normal-normal component.

Reconstructions are evaluated on the node layer at a given graph distance
from the face. At depth zero the normal stencil is the one-sided boundary
closure (first order); from depth one on it is central.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SmallPivot, VerificationError, ZeroRhs
from .geometry import J_of, R_of

ZERO_RHS_TOL = 1e-14
ZERO_LHS_TOL = 1e-12


# manufactured fields


@dataclass
class ManufacturedField:
    """``u(x) = b + L x + sum_n a_n cos(k_n . x + p_n)`` with closed-form derivatives."""

    name: str
    const: np.ndarray = field(default_factory=lambda: np.zeros(3))
    linear: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    amps: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    waves: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.const = np.asarray(self.const, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float)
        self.amps = np.asarray(self.amps, dtype=float).reshape(-1, 3)
        self.waves = np.asarray(self.waves, dtype=float).reshape(-1, 3)
        self.phases = np.asarray(self.phases, dtype=float).ravel()

    def _arg(self, pts):
        return pts @ self.waves.T + self.phases

    def value(self, pts):
        """Values at points ``(..., 3)``, returned as ``(3, ...)``."""
        pts = np.asarray(pts, dtype=float)
        out = self.const + pts @ self.linear.T + np.cos(self._arg(pts)) @ self.amps
        return np.moveaxis(out, -1, 0)

    def jacobian(self, pts):
        """``G[i, j] = d_j u_i`` at points, shape ``(3, 3, ...)``."""
        pts = np.asarray(pts, dtype=float)
        s = -np.sin(self._arg(pts))
        G = self.linear + np.einsum("...n,ni,nj->...ij", s, self.amps, self.waves)
        return np.moveaxis(G, (-2, -1), (0, 1))

    def curl(self, pts):
        G = self.jacobian(pts)
        return np.stack([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])

    def div(self, pts):
        G = self.jacobian(pts)
        return G[0, 0] + G[1, 1] + G[2, 2]

    def normal_derivative(self, pts, nu):
        return np.einsum("ij...,j->i...", self.jacobian(pts), np.asarray(nu, dtype=float))

    def on_grid(self, domain):
        return self.value(domain.points())


def constant_field(c, name="constant"):
    return ManufacturedField(name, const=c)


def linear_field(L, b=(0.0, 0.0, 0.0), name="linear"):
    return ManufacturedField(name, const=b, linear=L)


def trig_field(seed=0, n_waves=3, max_wavenumber=2.0, name=None):
    """Random superposition of plane cosine waves (deterministic in ``seed``)."""
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal((n_waves, 3))
    waves = np.pi * rng.uniform(-max_wavenumber, max_wavenumber, (n_waves, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    return ManufacturedField(name or f"trig{seed}", amps=amps, waves=waves, phases=phases)


def helmholtz_field(seed=0, n_waves=2, max_wavenumber=1.5, name=None):
    """``curl A + grad psi`` for plane-wave potentials, as a plane-wave sum.

    With ``A = a sin(k.x + p)`` and ``psi = c sin(k.x + q)`` one has
    ``curl A = (k x a) cos(k.x + p)`` and ``grad psi = c k cos(k.x + q)``.
    """
    rng = np.random.default_rng(seed)
    amps, waves, phases = [], [], []
    for _ in range(n_waves):
        k = np.pi * rng.uniform(-max_wavenumber, max_wavenumber, 3)
        a = rng.standard_normal(3)
        amps += [np.cross(k, a) / np.pi, rng.standard_normal() * k / np.pi]
        waves += [k, k]
        phases += list(rng.uniform(0.0, 2.0 * np.pi, 2))
    return ManufacturedField(name or f"helmholtz{seed}", amps=amps, waves=waves, phases=phases)


def manufactured_corpus(seeds=(0, 1, 2)):
    """Trigonometric and curl-plus-gradient fields used by the refinement studies."""
    out = [trig_field(s) for s in seeds]
    out += [helmholtz_field(s) for s in seeds]
    return out


# H^1 bound


def _diff_along(u, axis, h):
    """SBP first derivative along ``axis`` of an arbitrary array."""
    u = np.moveaxis(np.asarray(u, dtype=float), axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[0] = (u[1] - u[0]) / h
    out[-1] = (u[-1] - u[-2]) / h
    return np.moveaxis(out, 0, axis)


def _tensor_apply(tensor, u):
    if tensor is None:
        return u
    return np.einsum("nij,jn->in", tensor, u.reshape(3, -1)).reshape(u.shape)


def boundary_datum(u, v, impedance, ops, face):
    """``h = v x nu + (lambda (u x nu)) x nu`` on ``face``, shape ``(m1, m2, 3)``."""
    idx = face.index(ops.shape)
    uf = np.moveaxis(u[idx], 0, -1)
    vf = np.moveaxis(v[idx], 0, -1)
    nu = face.normal
    lam = impedance.eval_lambda(ops.domain.points()[idx[1:]])
    ut = np.cross(uf, nu)
    return np.cross(vf, nu) + np.cross(np.einsum("...ij,...j->...i", lam, ut), nu)


def face_sobolev_norm2(ops, face, g, order):
    """``L^2`` (``order = 0``) or ``H^1`` (``order = 1``) face norm of ``g (m1, m2, ...)``."""
    w = ops.face_weights(face)
    a, b = sorted(face.tangent_axes)
    wg = w.reshape(w.shape + (1,) * (g.ndim - 2))
    total = float(np.sum(wg * g * g))
    if order >= 1:
        for ax2d, ax3d in ((0, a), (1, b)):
            dg = _diff_along(g, ax2d, ops.h[ax3d])
            total += float(np.sum(wg * dg * dg))
    return total


def half_norm_surrogate(ops, face_values):
    """``(||h||_{L2(Gamma)} ||h||_{H1(Gamma)})^{1/2}`` summed face by face."""
    l2 = sum(face_sobolev_norm2(ops, f, g, 0) for f, g in face_values)
    h1 = sum(face_sobolev_norm2(ops, f, g, 1) for f, g in face_values)
    return float(np.sqrt(np.sqrt(l2 * h1)))


@dataclass
class H1BoundResult:
    lhs: float
    rhs: float
    empirical_c: float
    terms: dict


def h1_bound_check(u, v, alpha, beta, impedance, ops):
    """Both sides of the div-curl ``H^1`` bound for grid fields ``u, v``.

    ``lhs = ||u||_{H1} + ||v||_{H1}`` and ``rhs`` collects the curls, the
    weighted divergences and the boundary datum in the surrogate trace norm.
    ``alpha``/``beta`` are node tensors ``(N, 3, 3)`` or ``None`` (identity).
    Raises :class:`ZeroRhs` when the right side vanishes (after checking that
    the left side vanishes too).
    """
    terms = {
        "curl_u": ops.norm(ops.curl(u)),
        "curl_v": ops.norm(ops.curl(v)),
        "div_alpha_u": float(np.sqrt(ops.norm2(ops.div(_tensor_apply(alpha, u))))),
        "div_beta_v": float(np.sqrt(ops.norm2(ops.div(_tensor_apply(beta, v))))),
        "h_half": half_norm_surrogate(
            ops, [(f, boundary_datum(u, v, impedance, ops, f)) for f in ops.domain.faces]
        ),
    }
    lhs = float(np.sqrt(ops.sobolev_norm2(u, 1)) + np.sqrt(ops.sobolev_norm2(v, 1)))
    rhs = float(sum(terms.values()))
    if rhs < ZERO_RHS_TOL:
        if lhs > ZERO_LHS_TOL:
            raise VerificationError(f"div-curl bound violated: rhs = {rhs:.3e} but lhs = {lhs:.3e}")
        raise ZeroRhs("right-hand side of the div-curl bound vanishes", lhs=lhs, rhs=rhs)
    return H1BoundResult(lhs, rhs, lhs / rhs, terms)


# normal-derivative reconstruction


def _layer(ops, face, depth):
    """Index tuple of the node layer at ``depth`` from ``face``."""
    sl = [slice(None)] * 3
    n = ops.shape[face.axis]
    if not 0 <= depth < n:
        raise ValueError(f"collar depth {depth} outside the grid")
    sl[face.axis] = depth if face.side < 0 else n - 1 - depth
    return (Ellipsis, *sl)


def layer_points(ops, face, depth):
    return ops.domain.points()[_layer(ops, face, depth)[1:]]


def _tangential_terms(ops, face, u):
    """``sum_i J(tau_i) d_tau_i u`` as a grid field."""
    out = np.zeros_like(u)
    for tau in (face.tau1, face.tau2):
        a = int(np.argmax(np.abs(tau)))
        out += np.einsum("ij,j...->i...", J_of(tau), ops.diff(u, a) * tau[a])
    return out


def normal_from_curl(u, ops, face, depth=1, curl_u=None):
    """Tangential part of ``d_nu u`` on a collar layer, from the curl.

    ``d_nu u^tau = R(nu) (curl u - sum_i J(tau_i) d_tau_i u)``; ``curl_u``
    defaults to the discrete curl. Returns ``(3, m1, m2)``.
    """
    if curl_u is None:
        curl_u = ops.curl(u)
    rest = curl_u - _tangential_terms(ops, face, u)
    return np.einsum("ij,j...->i...", R_of(face.normal), rest[_layer(ops, face, depth)])


def direct_normal_derivative(u, ops, face, depth=1):
    """``d_nu u = side * D1_axis u`` on a collar layer, ``(3, m1, m2)``."""
    return face.side * ops.diff(u, face.axis)[_layer(ops, face, depth)]


def normalnormal_from_div(u, alpha, ops, face, depth=1, eta=None, div_alpha_u=None):
    """``d_nu u_nu`` on a collar layer, solved from ``div(alpha u)``.

    With the constant frame, ``div w = d_nu w_nu + sum_i d_tau_i w_tau_i`` for
    ``w = alpha u`` and ``d_nu w_nu = (d_nu alpha u)_nu + alpha_nu . d_nu u^tau
    + alpha_nunu d_nu u_nu``. Raises :class:`SmallPivot` if ``alpha_nunu < eta/2``
    somewhere on the layer; ``eta`` defaults to the smallest eigenvalue of
    ``alpha`` over the grid.
    """
    nu = face.normal
    a = face.axis
    n = ops.n_nodes
    if alpha is None:
        alpha = np.broadcast_to(np.eye(3), (n, 3, 3))
    alpha = np.asarray(alpha, dtype=float)
    if eta is None:
        eta = float(np.min(np.linalg.eigvalsh(0.5 * (alpha + np.swapaxes(alpha, -1, -2)))))
    agrid = alpha.reshape(*ops.shape, 3, 3)
    lay = _layer(ops, face, depth)[1:]
    a_nu = agrid[lay] @ nu  # row alpha_{nu k} since alpha is symmetric
    a_nn = a_nu @ nu
    if np.any(a_nn < 0.5 * eta):
        raise SmallPivot(f"alpha_nunu = {a_nn.min():.3e} below eta/2 = {0.5 * eta:.3e}", face=face.name)
    w = _tensor_apply(alpha, u)
    if div_alpha_u is None:
        div_alpha_u = ops.div(w)
    tang = sum(face_tan * ops.diff(w[b], b) for b, face_tan in _tangent_axes(face))
    dalpha = face.side * _diff_along(agrid, a, ops.h[a])[lay]
    u_lay = np.moveaxis(u[_layer(ops, face, depth)], 0, -1)
    lower = np.einsum("...i,...ij,...j->...", np.broadcast_to(nu, u_lay.shape), dalpha, u_lay)
    dtau = np.moveaxis(normal_from_curl(u, ops, face, depth), 0, -1)
    coupling = np.einsum("...i,...i->...", a_nu, dtau)
    return (div_alpha_u[lay] - tang[lay] - lower - coupling) / a_nn


def _tangent_axes(face):
    return [(b, 1.0) for b in range(3) if b != face.axis]


def full_normal_derivative(u, alpha, ops, face, depth=1):
    """``d_nu u^tau + (d_nu u_nu) nu`` from the two reconstructions."""
    dtau = normal_from_curl(u, ops, face, depth)
    dnn = normalnormal_from_div(u, alpha, ops, face, depth)
    return dtau + np.multiply.outer(face.normal, dnn)


# refinement studies


def observed_orders(errors):
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return list(np.log2(e[:-1] / e[1:]))


@dataclass
class OrderRow:
    field: str
    cells: int
    err_curl: float
    err_div: float
    empirical_c: float


def reconstruction_errors(mf, ops, alpha=None, depth=1):
    """Max errors of both reconstructions against the analytic normal derivative."""
    u = mf.on_grid(ops.domain)
    err_t = err_n = 0.0
    for face in ops.domain.faces:
        exact = mf.normal_derivative(layer_points(ops, face, depth), face.normal)
        nu = face.normal
        exact_nn = np.einsum("i,i...->...", nu, exact)
        exact_t = exact - np.multiply.outer(nu, exact_nn)
        err_t = max(err_t, float(np.max(np.abs(normal_from_curl(u, ops, face, depth) - exact_t))))
        dnn = normalnormal_from_div(u, alpha, ops, face, depth)
        err_n = max(err_n, float(np.max(np.abs(dnn - exact_nn))))
    return err_t, err_n


def refinement_table(corpus, domain, impedance, cells=(8, 16, 32), alpha_fn=None, depth=1):
    """Reconstruction errors and empirical div-curl constants per field and grid.

    ``alpha_fn(points)`` returns node tensors for the weighted divergence
    (identity when omitted); ``v`` is taken as a second corpus field so that
    both slots of the bound are exercised.
    """
    from .sbp import SbpOperators

    rows = []
    for n in cells:
        dom = domain.with_cells(n)
        ops = SbpOperators(dom)
        alpha = None if alpha_fn is None else alpha_fn(dom.points().reshape(-1, 3))
        for i, mf in enumerate(corpus):
            u = mf.on_grid(dom)
            v = corpus[(i + 1) % len(corpus)].on_grid(dom)
            et, en = reconstruction_errors(mf, ops, alpha, depth)
            c = h1_bound_check(u, v, alpha, alpha, impedance, ops).empirical_c
            rows.append(OrderRow(mf.name, n, et, en, c))
    return rows


def summarize_table(rows):
    """Per-field observed orders and the spread of empirical constants."""
    out = {}
    for name in dict.fromkeys(r.field for r in rows):
        sub = sorted((r for r in rows if r.field == name), key=lambda r: r.cells)
        cs = [r.empirical_c for r in sub]
        out[name] = {
            "cells": [r.cells for r in sub],
            "order_curl": observed_orders([r.err_curl for r in sub]),
            "order_div": observed_orders([r.err_div for r in sub]),
            "c": cs,
            "c_ratio": max(cs) / min(cs),
        }
    return out
