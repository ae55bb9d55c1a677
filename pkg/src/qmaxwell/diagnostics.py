"""Energies, norms and the balance/observability bookkeeping along a run.

A :class:`TraceRecorder` is attached to :func:`qmaxwell.solver.run`. At every
recorded time it forms the time-derivative stack ``d_t^j (E, H)``, ``j <= 3``,
by backward differences over the last four recorded states, and evaluates

* the higher-order energies ``e_k``, boundary dissipations ``d_k`` and full
  norms ``z_k`` for ``k = 0..3``,
* the integrands of the energy balance for the differentiated systems,
* the integrands of the multiplier (observability) estimate,
* divergence and boundary-condition residuals.

Everything is stored in an :class:`EnergyTrace`, whose main columns form the
CSV output; the integrands live in ``EnergyTrace.extra``.
"""

import csv
from collections import deque
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateFit, NonpositiveValues
from .geometry import multiplier
from .materials import eval_linearized
from .sbp import multi_indices

COLUMNS = (
    "t",
    "e0", "e1", "e2", "e3",
    "d0", "d1", "d2", "d3",
    "z0", "z1", "z2", "z3",
    "divD", "divB", "bc_residual",
)
KMAX = 3


# energy trace


@dataclass
class EnergyTrace:
    """Recorded rows; ``rows[:, i]`` is the column ``COLUMNS[i]``."""

    rows: np.ndarray
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float)).reshape(-1, len(COLUMNS))

    def __len__(self):
        return self.rows.shape[0]

    def __getitem__(self, name):
        if name in COLUMNS:
            return self.rows[:, COLUMNS.index(name)]
        return self.extra[name]

    @property
    def t(self):
        return self.rows[:, 0]

    def index_of(self, time, tol=1e-9):
        i = int(np.argmin(np.abs(self.t - time)))
        if abs(self.t[i] - time) > tol * max(1.0, abs(time)):
            raise ValueError(f"no recorded row at t = {time}")
        return i

    def window(self, t_lo, t_hi):
        return (self.t >= t_lo - 1e-12) & (self.t <= t_hi + 1e-12)

    def validate(self):
        if len(self) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trace times are not strictly increasing")
        body = self.rows[:, 1:]
        if not np.all(np.isfinite(body)) or np.any(body < 0):
            raise ValueError("trace entries must be finite and nonnegative")

    # CSV

    def to_csv(self, path):
        write_rows(path, COLUMNS, self.rows)

    def extra_to_csv(self, path):
        names = sorted(self.extra)
        write_rows(path, ("t", *names), np.column_stack([self.t] + [self.extra[n] for n in names]))

    @classmethod
    def from_csv(cls, path, extra_path=None):
        header, data = read_rows(path)
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        extra = {}
        if extra_path is not None:
            eh, ed = read_rows(extra_path)
            extra = {name: ed[:, i] for i, name in enumerate(eh) if name != "t"}
        return cls(data, extra)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader if row]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


# time-derivative stack


def fd_weights(offsets, order):
    """Finite-difference weights for the ``order``-th derivative at offset 0.

    ``offsets`` are the sample positions relative to the evaluation point
    (for backward differences they are ``0, -d1, -d2, ...``).
    """
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    V = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = np.prod(np.arange(1, order + 1))
    return np.linalg.solve(V, rhs)


def backward_derivatives(values, times, max_order=KMAX):
    """``d_t^j`` of the newest entry, ``j = 0..max_order``.

    ``values`` and ``times`` run from newest to oldest. With ``n`` samples the
    orders above ``n - 1`` are returned as zeros.
    """
    n = len(values)
    out = [values[0]]
    offsets = np.asarray(times, dtype=float) - times[0]
    for j in range(1, max_order + 1):
        if j >= n:
            out.append(np.zeros_like(values[0]))
            continue
        w = fd_weights(offsets[:n], j) if n > j else None
        out.append(sum(wi * v for wi, v in zip(w, values)))
    return out


@dataclass
class TimeDerivativeStack:
    """Time derivatives at one instant.

    ``E[j]``, ``H[j]`` are ``d_t^j E``, ``d_t^j H``; ``eps[j]``/``mu[j]`` are
    ``d_t^j eps(x, E)`` and ``epsD[j]``/``muD[j]`` the same for the
    linearizations, all with node-first tensor layout ``(N, 3, 3)``.
    """

    t: float
    E: list
    H: list
    eps: list
    mu: list
    epsD: list
    muD: list

    def weight(self, which, k, j=0):
        """``d_t^j`` of the weight tensor ``eps_hat_k`` (``mu_hat_k``)."""
        if which == "eps":
            return (self.eps if k == 0 else self.epsD)[j]
        return (self.mu if k == 0 else self.muD)[j]

    def scaled(self, s):
        """Stack of ``(s E, s H)`` for linear media (weights unchanged)."""
        return TimeDerivativeStack(
            self.t, [s * u for u in self.E], [s * u for u in self.H], self.eps, self.mu, self.epsD, self.muD
        )


def build_stack(states, law, x_nodes):
    """Stack from up to four states ordered newest first."""
    shape = states[0].E.shape
    times = [s.t for s in states]
    tens = {"eps": [], "mu": [], "epsD": [], "muD": []}
    for s in states:
        Ef = s.E.reshape(3, -1).T
        Hf = s.H.reshape(3, -1).T
        tens["eps"].append(law.evaluate("eps", x_nodes, Ef))
        tens["mu"].append(law.evaluate("mu", x_nodes, Hf))
        tens["epsD"].append(eval_linearized(law, "eps", x_nodes, Ef))
        tens["muD"].append(eval_linearized(law, "mu", x_nodes, Hf))
    dE = backward_derivatives([s.E for s in states], times)
    dH = backward_derivatives([s.H for s in states], times)
    dT = {k: backward_derivatives(v, times) for k, v in tens.items()}
    return TimeDerivativeStack(times[0], dE, dH, dT["eps"], dT["mu"], dT["epsD"], dT["muD"])


# pointwise helpers


def _apply(tensor, u):
    """``tensor (N, 3, 3)`` applied to a grid field ``u (3, n1, n2, n3)``."""
    flat = u.reshape(3, -1)
    return np.einsum("nij,jn->in", tensor, flat).reshape(u.shape)


def weighted_norm2(ops, tensor, u):
    """``|| tensor^{1/2} u ||_W^2 = int u . tensor u``."""
    return ops.inner(u, _apply(tensor, u))


def _face_fields(u, face, shape):
    return np.moveaxis(u[face.index(shape)], 0, -1)


def boundary_weighted(ops, fn):
    """Face-wise quadrature of ``fn(face) -> values on the face``."""
    return ops.boundary_integral(fn)


def tangential_norm2(ops, impedance, u):
    """``int_Gamma lambda (u x nu) . (u x nu)``."""
    pts = ops.domain.points()

    def f(face):
        ut = np.cross(_face_fields(u, face, ops.shape), face.normal)
        lam = impedance.eval_lambda(pts[face.index(ops.shape)[1:]])
        return np.einsum("...i,...ij,...j->...", ut, lam, ut)

    return ops.boundary_integral(f)


def sobolev_levels(ops, u, order):
    """``[sum_{|alpha| = m} ||D^alpha u||_W^2 for m = 0..order]``."""
    cache = {(0, 0, 0): u}
    levels = [ops.norm2(u)] + [0.0] * order
    for alpha in multi_indices(order):
        if sum(alpha) == 0:
            continue
        axis = next(a for a in range(3) if alpha[a] > 0)
        parent = tuple(alpha[a] - (a == axis) for a in range(3))
        d = ops.diff(cache[parent], axis)
        cache[alpha] = d
        levels[sum(alpha)] += ops.norm2(d)
    return levels


def interior_div_norm(ops, F):
    """``|| div F ||_W`` over interior nodes.

    Interior nodes are untouched by the boundary penalty, so this is the
    quantity the scheme keeps stationary.
    """
    d = ops.div(F)
    mask = ops.domain.interior_mask()
    return float(np.sqrt(np.sum(ops.weights[mask] * d[mask] ** 2)))


# k-indexed quantities


def energy_ek(ops, stack, k):
    """``e_k = 1/2 max_{j<=k} (||eps_hat_k^{1/2} d^j E||^2 + ||mu_hat_k^{1/2} d^j H||^2)``."""
    a, b = stack.weight("eps", k), stack.weight("mu", k)
    return 0.5 * max(weighted_norm2(ops, a, stack.E[j]) + weighted_norm2(ops, b, stack.H[j]) for j in range(k + 1))


def dissipation_dk(ops, stack, impedance, k):
    """``d_k = max_{j<=k} int_Gamma lambda (d^j E x nu) . (d^j E x nu)``."""
    return max(tangential_norm2(ops, impedance, stack.E[j]) for j in range(k + 1))


def z_norm_k(ops, stack, k, levels=None):
    """``z_k = max_{j<=k} (||d^j E||^2_{H^{k-j}} + ||d^j H||^2_{H^{k-j}})``."""
    if levels is None:
        levels = stack_levels(ops, stack, k)
    return max(sum(levels[j][: k - j + 1]) for j in range(k + 1))


def stack_levels(ops, stack, kmax=KMAX):
    out = []
    for j in range(kmax + 1):
        le = sobolev_levels(ops, stack.E[j], kmax - j)
        lh = sobolev_levels(ops, stack.H[j], kmax - j)
        out.append([p + q for p, q in zip(le, lh)])
    return out


def commutator_tilde(stack, which, k):
    """``f~_k = sum_{j=1}^k C(k, j) (d^j eps^D) d^{k+1-j} E`` (``g~_k`` for ``mu``)."""
    fields, tens = (stack.E, stack.epsD) if which == "eps" else (stack.H, stack.muD)
    out = np.zeros_like(fields[0])
    for j in range(1, k + 1):
        out += comb(k, j) * _apply(tens[j], fields[k + 1 - j])
    return out


def commutator(stack, which, k):
    """``(f_k, d_t f_k)`` for the flux-form differentiated system."""
    u, T = (stack.E, stack.epsD) if which == "eps" else (stack.H, stack.muD)
    z = np.zeros_like(u[0])
    if k < 2:
        return z, z.copy()
    if k == 2:
        f = _apply(T[1], u[1])
        df = _apply(T[2], u[1]) + _apply(T[1], u[2])
        return f, df
    f = _apply(T[2], u[1]) + 2 * _apply(T[1], u[2])
    df = _apply(T[3], u[1]) + 3 * _apply(T[2], u[2]) + 2 * _apply(T[1], u[3])
    return f, df


def balance_forcing(stack, k):
    """Right-hand sides ``(phi, psi)`` of ``alpha d_t u = curl v + phi``.

    For ``k >= 1`` these are ``-f~_k, -g~_k``. For ``k = 0`` the weight is
    ``eps(x, E)`` itself and the system reads
    ``eps d_t E = curl H - (d_t eps) E``.
    """
    if k == 0:
        return -_apply(stack.eps[1], stack.E[0]), -_apply(stack.mu[1], stack.H[0])
    return -commutator_tilde(stack, "eps", k), -commutator_tilde(stack, "mu", k)


def _spectral_max(tensor):
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (tensor + np.swapaxes(tensor, -1, -2))))))


def _full_trace_weighted(ops, a, u, b, v):
    """``int_Gamma (a u . u + b v . v)`` with the full (not tangential) trace."""
    au, bv = _apply(a, u), _apply(b, v)
    dens = np.sum(au * u + bv * v, axis=0)
    return ops.boundary_integral(lambda face: dens[face.index(ops.shape)[1:]])


def _tangential_plain(ops, u):
    def f(face):
        ut = np.cross(_face_fields(u, face, ops.shape), face.normal)
        return np.sum(ut * ut, axis=-1)

    return ops.boundary_integral(f)


def _pointwise_abs(u):
    return np.sqrt(np.sum(u * u, axis=0))


def row_quantities(solver, stack):
    """Main CSV values and extra integrands for one recorded time."""
    ops, imp = solver.ops, solver.impedance
    levels = stack_levels(ops, stack)
    row = {"t": stack.t}
    for k in range(KMAX + 1):
        row[f"e{k}"] = energy_ek(ops, stack, k)
        row[f"d{k}"] = dissipation_dk(ops, stack, imp, k)
        row[f"z{k}"] = z_norm_k(ops, stack, k, levels)
    extra = {}
    lam_max = 0.0
    for face in ops.domain.faces:
        lam = imp.eval_lambda(ops.domain.points()[face.index(ops.shape)[1:]])
        lam_max = max(lam_max, _spectral_max(lam))
    extra["lam_max"] = lam_max
    for k in range(KMAX + 1):
        u, v = stack.E[k], stack.H[k]
        a, b = stack.weight("eps", k), stack.weight("mu", k)
        da, db = stack.weight("eps", k, 1), stack.weight("mu", k, 1)
        phi, psi = balance_forcing(stack, k)
        extra[f"A{k}"] = weighted_norm2(ops, a, u) + weighted_norm2(ops, b, v)
        extra[f"D{k}"] = tangential_norm2(ops, imp, u)
        extra[f"N{k}"] = solver.numerical_dissipation(u, v)
        extra[f"S{k}"] = ops.inner(u, phi) + ops.inner(v, psi)
        extra[f"T{k}"] = weighted_norm2(ops, da, u) + weighted_norm2(ops, db, v)
        # multiplier estimate with phi = -f_k, psi = -g_k
        f, df = commutator(stack, "eps", k)
        g, dg = commutator(stack, "mu", k)
        au, av = _pointwise_abs(u), _pointwise_abs(v)
        extra[f"obs_bdy{k}"] = _full_trace_weighted(ops, a, u, b, v)
        extra[f"obs_tan{k}"] = _tangential_plain(ops, u)
        extra[f"obs_n{k}"] = ops.norm2(u) + ops.norm2(v)
        extra[f"obs_f1_{k}"] = ops.integrate(_pointwise_abs(df) * av + _pointwise_abs(dg) * au)
        extra[f"obs_f2_{k}"] = ops.integrate(np.abs(ops.div(f)) * au + np.abs(ops.div(g)) * av)
        extra[f"M{k}"] = max(_spectral_max(a), _spectral_max(b))
    return row, extra


class TraceRecorder:
    """Collects an :class:`EnergyTrace` while :func:`qmaxwell.solver.run` steps.

    Parameters
    ----------
    solver : MaxwellSolver
    """

    def __init__(self, solver):
        self.solver = solver
        self.ring = deque(maxlen=KMAX + 1)
        self.rows = []
        self.extras = []
        self.cum_diss = 0.0
        self.cum_num = 0.0
        self.steps = 0
        self.max_sweeps = 0
        self.max_newton = 0
        self.last_stack = None

    def seed(self, state):
        self.ring.appendleft(state.copy())

    def accumulate(self, info, dt):
        self.cum_diss += abs(dt) * self.solver.dissipation(info.E_mid)
        self.cum_num += abs(dt) * self.solver.numerical_dissipation(info.E_mid, info.H_mid)
        self.steps += 1
        self.max_sweeps = max(self.max_sweeps, info.sweeps)
        self.max_newton = max(self.max_newton, info.newton_iters)

    def record(self, state):
        self.ring.appendleft(state.copy())
        solver = self.solver
        stack = build_stack(list(self.ring), solver.law, solver.x_nodes)
        self.last_stack = stack
        row, extra = row_quantities(solver, stack)
        ops = solver.ops
        from .solver import boundary_residual

        row["divD"] = interior_div_norm(ops, state.D)
        row["divB"] = interior_div_norm(ops, state.B)
        row["bc_residual"] = boundary_residual(state.E, state.H, solver.impedance, ops)
        extra["diss_cum"] = self.cum_diss
        extra["num_cum"] = self.cum_num
        extra["divD_full"] = ops.norm(ops.div(state.D))
        extra["divB_full"] = ops.norm(ops.div(state.B))
        self.rows.append([row[c] for c in COLUMNS])
        self.extras.append(extra)

    def finish(self):
        extra = {k: np.array([e[k] for e in self.extras]) for k in (self.extras[0] if self.extras else {})}
        meta = {"steps": self.steps, "max_sweeps": self.max_sweeps, "max_newton": self.max_newton}
        return EnergyTrace(np.array(self.rows).reshape(-1, len(COLUMNS)), extra, meta)


# identities and inequalities along a trace


def _trapezoid(trace, name, i0, i1):
    t = trace.t[i0 : i1 + 1]
    y = trace[name][i0 : i1 + 1]
    return float(np.trapezoid(y, t)) if len(t) > 1 else 0.0


def energy_balance_residual(trace, k, s, t):
    """Normalized defect of the energy equality for the ``k``-th system.

    Evaluates ``A(t) + 2 int D - A(s) - 2 int S - int T`` with ``A`` the
    weighted energy of ``(d^k E, d^k H)``, ``D`` the boundary dissipation,
    ``S`` the forcing pairing and ``T`` the weight-derivative term, divided by
    ``e_k(s) + 1e-30``. When the solver runs with artificial dissipation, the
    energy it removes is counted together with ``D``. For ``k = 0`` the
    dissipation integrals are the ones accumulated at the stage midpoints of
    the integrator; the other time integrals use the trapezoidal rule on the
    recorded rows.
    """
    i0, i1 = trace.index_of(s), trace.index_of(t)
    A = trace[f"A{k}"]
    if k == 0:
        diss = trace["diss_cum"][i1] - trace["diss_cum"][i0]
        diss += trace["num_cum"][i1] - trace["num_cum"][i0]
    else:
        diss = _trapezoid(trace, f"D{k}", i0, i1) + _trapezoid(trace, f"N{k}", i0, i1)
    rhs = 2 * _trapezoid(trace, f"S{k}", i0, i1) + _trapezoid(trace, f"T{k}", i0, i1)
    res = A[i1] + 2 * diss - A[i0] - rhs
    return abs(res) / (trace[f"e{k}"][i0] + 1e-30)


@dataclass
class DissipativityResult:
    lhs: float
    rhs_without_c1: float
    z_integral: float
    minimal_c1: float
    minimal_c1_z2: float


def dissipativity_check(trace, s, t, k):
    """Minimal ``c1 >= 0`` with ``e_k(t) + int d_k <= e_k(s) + c1 int z^{3/2}``.

    ``z`` is ``z_3``; the variant with ``z_2`` is reported alongside. For
    ``k = 0`` the dissipation integral is taken at the integrator's stage
    midpoints.
    """
    i0, i1 = trace.index_of(s), trace.index_of(t)
    if k == 0 and "diss_cum" in trace.extra:
        dint = trace["diss_cum"][i1] - trace["diss_cum"][i0]
    else:
        dint = _trapezoid(trace, f"d{k}", i0, i1)
    lhs = trace[f"e{k}"][i1] + dint
    rhs = trace[f"e{k}"][i0]
    tt = trace.t[i0 : i1 + 1]
    z3 = float(np.trapezoid(trace["z3"][i0 : i1 + 1] ** 1.5, tt)) if i1 > i0 else 0.0
    z2 = float(np.trapezoid(trace["z2"][i0 : i1 + 1] ** 1.5, tt)) if i1 > i0 else 0.0
    excess = lhs - rhs
    c1 = max(0.0, excess / z3) if z3 > 0 else 0.0
    c1b = max(0.0, excess / z2) if z2 > 0 else 0.0
    return DissipativityResult(lhs, rhs, z3, c1, c1b)


def multiplier_functional(ops, u, v, alpha, beta, m):
    """``int (m x alpha u) . beta v`` by SBP quadrature.

    ``alpha`` and ``beta`` are node tensors ``(N, 3, 3)`` or ``None`` for the
    identity; ``m`` is a grid vector field.
    """
    au = u if alpha is None else _apply(alpha, u)
    bv = v if beta is None else _apply(beta, v)
    return ops.inner(np.cross(m, au, axis=0), bv)


def multiplier_field(domain):
    return np.moveaxis(multiplier(domain, domain.points()), -1, 0)


def curl_multiplier_identity_check(ops, beta, v, m=None, interior=False):
    """``|| curl(m x bv) - [div(bv) m - 2 bv - (m . grad)(bv)] ||_W``, ``bv = beta v``.

    With ``interior`` the norm runs over interior nodes only; the one-sided
    boundary rows are first order, which caps the full-grid norm at ``h^1.5``.
    """
    if m is None:
        m = multiplier_field(ops.domain)
    bv = v if beta is None else _apply(beta, v)
    lhs = ops.curl(np.cross(m, bv, axis=0))
    mgrad = sum(m[a] * ops.diff(bv, a) for a in range(3))
    rhs = ops.div(bv) * m - 2 * bv - mgrad
    if not interior:
        return ops.norm(lhs - rhs)
    mask = ops.domain.interior_mask()
    return float(np.sqrt(np.sum(ops.weights[mask] * np.sum((lhs - rhs) ** 2, axis=0)[mask])))


@dataclass
class ObservabilityReport:
    lhs: float
    rhs: float
    slack: float
    terms: dict

    @property
    def holds(self):
        return self.lhs <= self.rhs


def observability_check(trace, domain, kappa, eta_bar, k, s, t):
    """Both sides of the multiplier estimate for ``u = d^k E, v = d^k H``.

    ``M`` bounds the weights and ``lambda`` over the window; the forcing is
    ``phi = -f_k, psi = -g_k``.
    """
    i0, i1 = trace.index_of(s), trace.index_of(t)
    sl = slice(i0, i1 + 1)
    M = float(max(np.max(trace[f"M{k}"][sl]), np.max(trace["lam_max"][sl])))
    pts = domain.points()
    m_inf = float(np.max(np.linalg.norm(multiplier(domain, pts), axis=-1)))
    vol = _trapezoid(trace, f"A{k}", i0, i1)
    bdy = _trapezoid(trace, f"obs_bdy{k}", i0, i1)
    tan = _trapezoid(trace, f"obs_tan{k}", i0, i1)
    f1 = _trapezoid(trace, f"obs_f1_{k}", i0, i1)
    f2 = _trapezoid(trace, f"obs_f2_{k}", i0, i1)
    n_end = trace[f"obs_n{k}"][i1] + trace[f"obs_n{k}"][i0]
    lhs = kappa / 4 * vol + eta_bar / 4 * bdy
    terms = {
        "boundary": m_inf**2 / eta_bar * M * (1 + M) ** 2 * tan,
        "endpoints": M * m_inf / 2 * n_end,
        "forcing": m_inf * (M * f1 + f2),
    }
    rhs = sum(terms.values())
    return ObservabilityReport(lhs, rhs, rhs - lhs, terms)


# fits


@dataclass
class RegularityFit:
    c5: float
    c6: float
    max_violation: float
    rows: int


def regularity_fit(traces, tol=1e-14):
    """Smallest admissible ``(c5, c6)`` with ``z <= c5 e + c6 z^2`` on all rows.

    Solved as a linear program: minimize the summed relative slack
    ``sum (c5 e_i + c6 z_i^2) / z_i`` subject to the inequality on every row
    and ``c5, c6 >= 0``. ``e = e_3`` and ``z = z_3``. ``max_violation`` is the
    largest ``max(0, z - c5 e - c6 z^2) / z`` over the rows.
    """
    e = np.concatenate([tr["e3"] for tr in traces])
    z = np.concatenate([tr["z3"] for tr in traces])
    keep = z > tol * max(np.max(z, initial=0.0), 1e-300)
    if not np.any(keep) or np.max(z, initial=0.0) <= 1e-300:
        raise DegenerateFit("all z values vanish; the fit is undetermined")
    e, z = e[keep], z[keep]
    A = np.column_stack([e / z, z])  # row-normalized constraint c5 e/z + c6 z >= 1
    cost = A.sum(axis=0)
    res = linprog(cost, A_ub=-A, b_ub=-np.ones(len(z)), bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise DegenerateFit(f"regularity fit failed: {res.message}")
    c5, c6 = (float(v) for v in res.x)
    viol = np.maximum(0.0, z - c5 * e - c6 * z**2) / z
    return RegularityFit(c5, c6, float(viol.max()), int(len(z)))


@dataclass
class DecayFit:
    omega: float
    M: float
    window: tuple
    r2: float
    quantity: str = "e0"

    def lines(self):
        q = self.quantity
        return [
            f"{q}.omega={self.omega:.17g}",
            f"{q}.M={self.M:.17g}",
            f"{q}.r2={self.r2:.17g}",
            f"{q}.window={self.window[0]:.17g},{self.window[1]:.17g}",
        ]


def decay_fit(t, q, window=None, quantity="e0"):
    """Least-squares fit of ``log q = log M - omega t`` on ``window``."""
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float)
    if window is None:
        window = (float(t[0]), float(t[-1]))
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, q = t[sel], q[sel]
    if len(t) < 2:
        raise DegenerateFit("fewer than two rows inside the fit window")
    if np.any(q <= 0):
        raise NonpositiveValues(f"{quantity} has nonpositive values inside the window")
    y = np.log(q)
    slope, intercept = np.polyfit(t, y, 1)
    fit = intercept + slope * t
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(intercept)), (float(window[0]), float(window[1])), r2, quantity)


def trace_decay_fit(trace, quantity="e0", window=None):
    """:func:`decay_fit` on a trace column; ``"e"`` and ``"z"`` mean ``e3``, ``z3``."""
    col = {"e": "e3", "z": "z3"}.get(quantity, quantity)
    return decay_fit(trace.t, trace[col], window, quantity)
