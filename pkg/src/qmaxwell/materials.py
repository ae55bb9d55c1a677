"""Constitutive laws, boundary impedance and sampler-based assumption checks.

All evaluation functions are vectorized: positions ``x`` and field values
``xi`` have trailing dimension 3 and arbitrary (broadcastable) leading
dimensions; tensors come back with trailing shape ``(3, 3)``.

Derivative arrays follow the convention ``d[..., j, l, k] = d eps_jl / d xi_k``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import FailsAtZero, SingularReference

I3 = np.eye(3)
FD_STEP_SECOND = 1e-4


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _iso(scalar):
    return np.asarray(scalar)[..., None, None] * I3


class TensorLaw:
    """A tensor-valued constitutive map ``(x, xi) -> 3x3``.

    Subclasses implement :meth:`eval` and :meth:`dxi`; they may override
    :meth:`grad_x0` (spatial gradient at ``xi = 0``, shape ``(..., 3, 3, 3)``
    with the differentiation direction first) and :meth:`dlin_dxi`
    (``xi``-derivative of the linearization).
    """

    name = "tensor"

    def eval(self, x, xi):
        raise NotImplementedError

    def dxi(self, x, xi):
        raise NotImplementedError

    grad_x0 = None
    dlin_dxi = None

    def params(self):
        return {}


class ConstantIsotropic(TensorLaw):
    name = "isotropic"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def eval(self, x, xi):
        shape = np.broadcast_shapes(np.shape(x), np.shape(xi))[:-1]
        return np.broadcast_to(self.scale * I3, shape + (3, 3)).copy()

    def dxi(self, x, xi):
        shape = np.broadcast_shapes(np.shape(x), np.shape(xi))[:-1]
        return np.zeros(shape + (3, 3, 3))

    def grad_x0(self, x):
        return np.zeros(np.shape(x)[:-1] + (3, 3, 3))

    def dlin_dxi(self, x, xi):
        return self.dxi(x, xi)

    def params(self):
        return {"scale": self.scale}


class ConstantAnisotropic(ConstantIsotropic):
    name = "anisotropic"

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float).reshape(3, 3)

    def eval(self, x, xi):
        shape = np.broadcast_shapes(np.shape(x), np.shape(xi))[:-1]
        return np.broadcast_to(self.matrix, shape + (3, 3)).copy()

    def params(self):
        return {"matrix": self.matrix.ravel().tolist()}


class VaryingIsotropic(TensorLaw):
    """``a(x) I`` with a scalar profile relative to a center point.

    ``profile="quadratic"``: ``a = scale (1 + coeff |x - c|^2)``;
    ``profile="exponential"``: ``a = scale exp(coeff (x - c)_1)``.
    """

    name = "varying"

    def __init__(self, profile="quadratic", coeff=1.0, center=(0.5, 0.5, 0.5), scale=1.0):
        if profile not in ("quadratic", "exponential"):
            raise ValueError(f"unknown profile {profile!r}")
        self.profile = profile
        self.coeff = float(coeff)
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)

    def _a(self, x):
        r = np.asarray(x, dtype=float) - self.center
        if self.profile == "quadratic":
            return self.scale * (1.0 + self.coeff * np.sum(r * r, axis=-1))
        return self.scale * np.exp(self.coeff * r[..., 0])

    def _grad_a(self, x):
        r = np.asarray(x, dtype=float) - self.center
        if self.profile == "quadratic":
            return self.scale * 2.0 * self.coeff * r
        g = np.zeros_like(r)
        g[..., 0] = self.coeff * self._a(x)
        return g

    def eval(self, x, xi):
        a = self._a(x)
        shape = np.broadcast_shapes(np.shape(x), np.shape(xi))[:-1]
        return np.broadcast_to(_iso(a), shape + (3, 3)).copy()

    def dxi(self, x, xi):
        shape = np.broadcast_shapes(np.shape(x), np.shape(xi))[:-1]
        return np.zeros(shape + (3, 3, 3))

    def grad_x0(self, x):
        return self._grad_a(x)[..., :, None, None] * I3

    def dlin_dxi(self, x, xi):
        return self.dxi(x, xi)

    def params(self):
        return {"profile": self.profile, "coeff": self.coeff, "center": self.center.tolist(), "scale": self.scale}


class ScalarKerr(TensorLaw):
    """``(scale + kerr |xi|^2) I``; ``kerr < 0`` gives a defocusing medium."""

    name = "kerr"

    def __init__(self, kerr=1.0, scale=1.0):
        self.kerr = float(kerr)
        self.scale = float(scale)

    def eval(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), xi.shape)[:-1]
        val = self.scale + self.kerr * np.sum(xi * xi, axis=-1)
        return np.broadcast_to(_iso(val), shape + (3, 3)).copy()

    def dxi(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), xi.shape)[:-1]
        d = 2.0 * self.kerr * np.einsum("jl,...k->...jlk", I3, xi)
        return np.broadcast_to(d, shape + (3, 3, 3)).copy()

    def grad_x0(self, x):
        return np.zeros(np.shape(x)[:-1] + (3, 3, 3))

    def dlin_dxi(self, x, xi):
        # eps^D = (scale + a|xi|^2) I + 2 a xi xi^T; result[..., j, k, i] = d/dxi_i
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), xi.shape)[:-1]
        a = self.kerr
        d = 2 * a * np.einsum("jk,...i->...jki", I3, xi)
        d = d + 2 * a * (np.einsum("ij,...k->...jki", I3, xi) + np.einsum("ik,...j->...jki", I3, xi))
        return np.broadcast_to(d, shape + (3, 3, 3)).copy()

    def params(self):
        return {"kerr": self.kerr, "scale": self.scale}


class AnisotropicKerr(TensorLaw):
    """``A + kerr (xi xi^T + |xi|^2 I)``."""

    name = "aniso_kerr"

    def __init__(self, matrix, kerr=1.0):
        self.matrix = np.asarray(matrix, dtype=float).reshape(3, 3)
        self.kerr = float(kerr)

    def eval(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), xi.shape)[:-1]
        val = self.matrix + self.kerr * (
            np.einsum("...j,...k->...jk", xi, xi) + _iso(np.sum(xi * xi, axis=-1))
        )
        return np.broadcast_to(val, shape + (3, 3)).copy()

    def dxi(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), xi.shape)[:-1]
        a = self.kerr
        d = a * (
            np.einsum("jk,...l->...jlk", I3, xi)
            + np.einsum("lk,...j->...jlk", I3, xi)
            + 2 * np.einsum("jl,...k->...jlk", I3, xi)
        )
        return np.broadcast_to(d, shape + (3, 3, 3)).copy()

    def grad_x0(self, x):
        return np.zeros(np.shape(x)[:-1] + (3, 3, 3))

    def dlin_dxi(self, x, xi):
        # eps^D = A + 2a|xi|^2 I + 4a xi xi^T
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), xi.shape)[:-1]
        a = self.kerr
        d = 4 * a * np.einsum("jk,...i->...jki", I3, xi)
        d = d + 4 * a * (np.einsum("ij,...k->...jki", I3, xi) + np.einsum("ik,...j->...jki", I3, xi))
        return np.broadcast_to(d, shape + (3, 3, 3)).copy()

    def params(self):
        return {"matrix": self.matrix.ravel().tolist(), "kerr": self.kerr}


class CallableLaw(TensorLaw):
    """Wrap user callables; the ``xi``-derivative defaults to central differences."""

    name = "callable"

    def __init__(self, fn, dfn=None, grad_x0=None, step=1e-6):
        self.fn = fn
        self.dfn = dfn
        self.step = step
        if grad_x0 is not None:
            self.grad_x0 = grad_x0

    def eval(self, x, xi):
        return np.asarray(self.fn(np.asarray(x, float), np.asarray(xi, float)), dtype=float)

    def dxi(self, x, xi):
        if self.dfn is not None:
            return np.asarray(self.dfn(x, xi), dtype=float)
        xi = np.asarray(xi, dtype=float)
        cols = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = self.step
            cols.append((self.eval(x, xi + e) - self.eval(x, xi - e)) / (2 * self.step))
        return np.stack(cols, axis=-1)


@dataclass
class MaterialLaw:
    """Permittivity and permeability laws sharing one interface."""

    eps: TensorLaw
    mu: TensorLaw
    name: str = "material"

    def _law(self, which):
        if which == "eps":
            return self.eps
        if which == "mu":
            return self.mu
        raise ValueError(f"which must be 'eps' or 'mu', got {which!r}")

    def eval_eps(self, x, xi):
        return self.eps.eval(x, xi)

    def eval_mu(self, x, xi):
        return self.mu.eval(x, xi)

    def deps_dxi(self, x, xi):
        return self.eps.dxi(x, xi)

    def dmu_dxi(self, x, xi):
        return self.mu.dxi(x, xi)

    def evaluate(self, which, x, xi):
        return self._law(which).eval(x, xi)

    def derivative(self, which, x, xi):
        return self._law(which).dxi(x, xi)

    @property
    def is_linear(self):
        return all(isinstance(t, (ConstantIsotropic, VaryingIsotropic)) for t in (self.eps, self.mu))


def eval_linearized(law, which, x, xi):
    """``eps^D_jk = eps_jk + sum_l d eps_jl / d xi_k xi_l`` (same for ``mu``)."""
    t = law._law(which)
    xi = np.asarray(xi, dtype=float)
    return t.eval(x, xi) + np.einsum("...jlk,...l->...jk", t.dxi(x, xi), xi)


def linearized_dxi(law, which, x, xi, step=FD_STEP_SECOND):
    """``d eps^D_jk / d xi_i`` as ``[..., j, k, i]``.

    Uses the law's analytic form when available, central differences of
    :func:`eval_linearized` otherwise.
    """
    t = law._law(which)
    if t.dlin_dxi is not None:
        return t.dlin_dxi(x, xi)
    xi = np.asarray(xi, dtype=float)
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        cols.append((eval_linearized(law, which, x, xi + e) - eval_linearized(law, which, x, xi - e)) / (2 * step))
    return np.stack(cols, axis=-1)


# impedance


class Impedance:
    """Boundary impedance tensor ``lambda(x)``."""

    def __init__(self, matrix=None, scale=1.0, fn=None):
        self.fn = fn
        self.matrix = scale * I3 if matrix is None else np.asarray(matrix, dtype=float).reshape(3, 3)
        self.scale = float(scale)

    def eval_lambda(self, x):
        if self.fn is not None:
            return np.asarray(self.fn(np.asarray(x, float)), dtype=float)
        shape = np.shape(x)[:-1]
        return np.broadcast_to(self.matrix, shape + (3, 3)).copy()

    def scaled(self, factor):
        if self.fn is not None:
            return Impedance(fn=lambda x: factor * self.fn(x))
        return Impedance(matrix=factor * self.matrix)


# assumption checks


@dataclass
class AssumptionReport:
    eta: Optional[float] = None
    delta_tilde: Optional[float] = None
    kappa: Optional[float] = None
    eta_bar: Optional[float] = None
    passed: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    worst_samples: list = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.passed.values())

    def merge(self, other):
        for name in ("eta", "delta_tilde", "kappa", "eta_bar"):
            if getattr(other, name) is not None:
                setattr(self, name, getattr(other, name))
        self.passed.update(other.passed)
        self.margins.update(other.margins)
        self.worst_samples.extend(other.worst_samples)
        self.values.update(other.values)
        return self

    def lines(self):
        out = []
        for name in ("eta", "delta_tilde", "kappa", "eta_bar"):
            if getattr(self, name) is not None:
                out.append(f"{name}={getattr(self, name):.17g}")
        for key, val in self.values.items():
            out.append(f"{key}={val:.17g}" if isinstance(val, float) else f"{key}={val}")
        for key, ok in self.passed.items():
            out.append(f"{key}.passed={'true' if ok else 'false'}")
            if key in self.margins:
                out.append(f"{key}.margin={self.margins[key]:.17g}")
        for name, x, xi, margin in self.worst_samples:
            xs = " ".join(f"{v:.6g}" for v in np.ravel(x))
            xis = " ".join(f"{v:.6g}" for v in np.ravel(xi)) if xi is not None else "-"
            out.append(f"worst.{name}=x:[{xs}] xi:[{xis}] margin:{margin:.6g}")
        return out


def _box_of(domain):
    if domain is None:
        return np.zeros(3), np.ones(3)
    return np.asarray(domain.lower), np.asarray(domain.extents)


def sample_points(sample_count, seed, domain=None):
    """Deterministic scrambled-Halton samples ``(x, v)`` with ``|v| <= 1``.

    A quarter of the ``v`` samples lie on the unit sphere so that scaled
    copies probe the radius exactly.
    """
    n = max(int(sample_count), 1)
    u = qmc.Halton(d=6, scramble=True, seed=seed).random(n)
    lo, ext = _box_of(domain)
    x = lo + ext * u[:, :3]
    v = 2.0 * u[:, 3:] - 1.0
    norms = np.linalg.norm(v, axis=1)
    v = np.where(norms[:, None] > 1.0, v / np.maximum(norms[:, None], 1e-300), v)
    shell = np.arange(n) % 4 == 0
    v[shell] = v[shell] / np.maximum(np.linalg.norm(v[shell], axis=1)[:, None], 1e-300)
    return x, v


def check_linearized_symmetry(law, sample_count=1000, seed=0, domain=None, tol=1e-12):
    x, xi = sample_points(sample_count, seed, domain)
    report = AssumptionReport()
    for which in ("eps", "mu"):
        lin = eval_linearized(law, which, x, xi)
        asym = np.max(np.abs(lin - np.swapaxes(lin, -1, -2)), axis=(-1, -2))
        i = int(np.argmax(asym))
        worst = float(asym[i])
        report.values[f"{which}_asymmetry"] = worst
        report.passed[f"{which}_symmetry"] = worst <= tol
        report.margins[f"{which}_symmetry"] = tol - worst
        report.worst_samples.append((f"{which}_symmetry", x[i], xi[i], tol - worst))
    return report


def _min_eig(a):
    return np.linalg.eigvalsh(_sym(a))[..., 0]


def check_local_positivity(law, eta, sample_count=512, seed=0, domain=None, resolution=1024):
    """Largest ``delta`` on the grid ``k / resolution`` with all four tensors ``>= eta I``.

    Raises :class:`FailsAtZero` when ``eps(x, 0)`` or ``mu(x, 0)`` is below
    ``2 eta I`` at a sample.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    x, v = sample_points(sample_count, seed, domain)
    report = AssumptionReport(eta=float(eta))
    zero = np.zeros_like(x)
    for which in ("eps", "mu"):
        lam0 = _min_eig(law.evaluate(which, x, zero))
        i = int(np.argmin(lam0))
        if lam0[i] < 2 * eta:
            raise FailsAtZero(
                f"{which}(x, 0) >= 2 eta I violated at x = {x[i]}: min eigenvalue {lam0[i]:.6g} < {2 * eta:.6g}",
                x=x[i],
            )

    def margin(delta):
        xi = delta * v
        worst = (np.inf, None, None, None)
        for which in ("eps", "mu"):
            for label, mat in (
                (which, law.evaluate(which, x, xi)),
                (f"{which}_D", eval_linearized(law, which, x, xi)),
            ):
                lam = _min_eig(mat) - eta
                i = int(np.argmin(lam))
                if lam[i] < worst[0]:
                    worst = (float(lam[i]), label, x[i], xi[i])
        return worst

    lo, hi = 0, resolution
    if margin(1.0)[0] >= 0:
        lo = resolution
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if margin(mid / resolution)[0] >= 0:
                lo = mid
            else:
                hi = mid
    delta = lo / resolution
    report.delta_tilde = delta
    m, label, xw, xiw = margin(delta) if delta > 0 else margin(1.0 / resolution)
    report.passed["local_positivity"] = delta > 0
    report.margins["local_positivity"] = m if delta > 0 else -abs(m)
    report.worst_samples.append((f"local_positivity:{label}", xw, xiw, m))
    return report


def _spatial_gradient(t, pts, fd_step):
    if t.grad_x0 is not None:
        return t.grad_x0(pts)
    zero = np.zeros_like(pts)
    out = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = fd_step
        out.append((t.eval(pts + e, zero) - t.eval(pts - e, zero)) / (2 * fd_step))
    return np.stack(out, axis=-3)


def starshape_coercivity(tensor_law, pts, x0, fd_step=1e-5):
    """Pointwise smallest generalized eigenvalue of ``(T + (m.grad) T)`` w.r.t. ``T``."""
    pts = np.asarray(pts, dtype=float)
    zero = np.zeros_like(pts)
    ref = _sym(tensor_law.eval(pts, zero))
    lam = np.linalg.eigvalsh(ref)
    if np.any(lam[..., 0] <= 0) or np.any(lam[..., -1] / np.maximum(lam[..., 0], 1e-300) > 1e12):
        raise SingularReference("reference tensor at xi = 0 is numerically singular")
    m = pts - np.asarray(x0)
    grad = _spatial_gradient(tensor_law, pts, fd_step)
    lhs = _sym(ref + np.einsum("...i,...ijk->...jk", m, grad))
    L = np.linalg.cholesky(ref)
    Linv = np.linalg.inv(L)
    sand = Linv @ lhs @ np.swapaxes(Linv, -1, -2)
    return np.linalg.eigvalsh(_sym(sand))[..., 0]


def check_starshape_coercivity(law, domain, x0=None, fd_step=1e-5):
    x0 = domain.x0 if x0 is None else x0
    pts = domain.points().reshape(-1, 3)
    report = AssumptionReport()
    kappa = np.inf
    for which in ("eps", "mu"):
        vals = starshape_coercivity(law._law(which), pts, x0, fd_step)
        i = int(np.argmin(vals))
        report.values[f"kappa_{which}"] = float(vals[i])
        report.worst_samples.append((f"starshape_{which}", pts[i], None, float(vals[i])))
        kappa = min(kappa, float(vals[i]))
    report.kappa = kappa
    report.passed["starshape_coercivity"] = kappa > 0
    report.margins["starshape_coercivity"] = kappa
    return report


def check_impedance(impedance, domain, eta, tol=1e-12):
    """Tangentiality of ``lambda`` and the tangential lower bound ``lambda >= eta I``."""
    pts = domain.points()
    report = AssumptionReport(eta=float(eta))
    worst_t = (-np.inf, None)
    worst_p = (np.inf, None)
    for face in domain.faces:
        xs = pts[face.index(domain.shape)[1:]].reshape(-1, 3)
        lam = impedance.eval_lambda(xs)
        T = np.stack([face.tau1, face.tau2], axis=1)  # 3x2
        leak = np.abs(np.einsum("a,...ab,bt->...t", face.normal, lam, T)).max(axis=-1)
        i = int(np.argmax(leak))
        if leak[i] > worst_t[0]:
            worst_t = (float(leak[i]), xs[i])
        sym = np.linalg.norm(lam - np.swapaxes(lam, -1, -2), axis=(-1, -2))
        if np.any(sym > tol):
            j = int(np.argmax(sym))
            worst_t = max(worst_t, (float(sym[j]), xs[j]), key=lambda p: p[0])
        tang = np.einsum("ai,...ab,bj->...ij", T, lam, T)
        low = np.linalg.eigvalsh(_sym(tang))[..., 0]
        j = int(np.argmin(low))
        if low[j] < worst_p[0]:
            worst_p = (float(low[j]), xs[j])
    report.passed["impedance_tangential"] = worst_t[0] <= tol
    report.margins["impedance_tangential"] = tol - worst_t[0]
    report.worst_samples.append(("impedance_tangential", worst_t[1], None, tol - worst_t[0]))
    report.passed["impedance_lower_bound"] = worst_p[0] >= eta
    report.margins["impedance_lower_bound"] = worst_p[0] - eta
    report.worst_samples.append(("impedance_lower_bound", worst_p[1], None, worst_p[0] - eta))
    return report
