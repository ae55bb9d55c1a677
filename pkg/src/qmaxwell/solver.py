"""Time stepping of the quasilinear Maxwell system on the box.

The evolved variables are the flux densities ``(D, B)``; the fields
``(E, H)`` are recovered node by node with Newton's method. Space is
discretized with the collocated SBP operators of :mod:`qmaxwell.sbp`, and the
Silver-Mueller condition ``H x nu + (lambda (E x nu)) x nu = 0`` is imposed
weakly through a penalty on the ``D`` equation::

    dD/dt = curl H + sigma / w_nu * g,   g = H x nu + (lambda (E x nu)) x nu
    dB/dt = -curl E

With ``sigma = 1`` the discrete energy rate is exactly the boundary
quadrature of ``-lambda (E x nu) . (E x nu)``.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CflViolation, ConfigError, NoConvergence, SingularJacobian, SolverError
from .geometry import J_of
from .materials import eval_linearized
from .sbp import SbpOperators

logger = logging.getLogger(__name__)

SWEEP_LIMIT = 50
STALL_FACTOR = 10.0
GMRES_RTOL = 1e-14


@dataclass
class SolverConfig:
    dt: float = 0.025
    t_final: float = 1.0
    scheme: str = "midpoint"
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    sat_strength: float = 1.0
    sat_split: float = 0.0
    dissipation: float = 0.0
    output_stride: int = 1
    cfl: float = 0.4
    allow_cfl_override: bool = False

    def validate(self, h_min):
        if self.scheme not in ("midpoint", "leapfrog"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.t_final < 0:
            raise ConfigError("t_final must be nonnegative")
        if self.dissipation < 0:
            raise ConfigError("dissipation must be nonnegative")
        if self.sat_split < 0:
            raise ConfigError("sat_split must be nonnegative")
        if self.output_stride < 1:
            raise ConfigError("output_stride must be >= 1")
        limit = self.cfl * h_min
        if self.dt > limit * (1 + 1e-12):
            if not self.allow_cfl_override:
                raise ConfigError(f"dt = {self.dt} exceeds the CFL bound {limit:.6g} (cfl = {self.cfl}, h_min = {h_min:.6g})")
            logger.warning("dt = %g exceeds the CFL bound %g; continuing on request", self.dt, limit)

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))


@dataclass
class FieldState:
    t: float
    E: np.ndarray
    H: np.ndarray
    D: np.ndarray
    B: np.ndarray

    def copy(self):
        return FieldState(self.t, self.E.copy(), self.H.copy(), self.D.copy(), self.B.copy())

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in (self.E, self.H, self.D, self.B))


# constitutive inversion


def constitutive_invert(D_target, law, which, x, guess=None, tol=1e-12, max_iter=25):
    """Solve ``eps(x, E) E = D_target`` for a single node (or a stack of nodes).

    Returns ``(E, iterations)``.
    """
    D = np.atleast_2d(np.asarray(D_target, dtype=float))
    X = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), D.shape)
    G = np.zeros_like(D) if guess is None else np.broadcast_to(np.atleast_2d(guess), D.shape).astype(float)
    E, iters = _newton_nodes(D, law, which, X, G, tol, max_iter)
    single = np.ndim(D_target) == 1
    return (E[0] if single else E), int(iters.max(initial=0))


def _newton_nodes(D, law, which, x, E, tol, max_iter):
    E = np.array(E, dtype=float, copy=True)
    iters = np.zeros(len(D), dtype=np.int64)
    active = np.arange(len(D))
    scale = np.max(np.abs(D), axis=1)
    for it in range(max_iter + 1):
        if active.size == 0:
            break
        Ea, xa = E[active], x[active]
        R = np.einsum("nij,nj->ni", law.evaluate(which, xa, Ea), Ea) - D[active]
        done = np.max(np.abs(R), axis=1) <= tol * scale[active]
        active, R, Ea, xa = active[~done], R[~done], Ea[~done], xa[~done]
        if active.size == 0:
            break
        if it == max_iter:
            raise NoConvergence(
                f"Newton inversion of {which} did not converge in {max_iter} iterations at {active.size} node(s); "
                "the field left the positivity radius",
                nodes=active,
            )
        Jac = eval_linearized(law, which, xa, Ea)
        det = np.abs(np.linalg.det(Jac))
        nrm = np.max(np.abs(Jac), axis=(1, 2))
        if np.any(det <= 1e-14 * nrm**3):
            raise SingularJacobian(f"linearized {which} tensor is numerically singular")
        E[active] = Ea - np.linalg.solve(Jac, R[..., None])[..., 0]
        iters[active] += 1
    return E, iters


def _block_diag(blocks):
    """Sparse matrix from per-node 3x3 blocks acting on component-major vectors."""
    n = blocks.shape[0]
    rows = (np.arange(3)[:, None, None] * n + np.arange(n)[None, None, :]) * np.ones((1, 3, 1), dtype=np.int64)
    cols = (np.arange(3)[None, :, None] * n + np.arange(n)[None, None, :]) * np.ones((3, 1, 1), dtype=np.int64)
    data = np.transpose(blocks, (1, 2, 0))
    return sp.csr_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, 3 * n))


def sat_boundary_flux(E, H, impedance, ops, sat_strength=1.0, sat_split=0.0):
    """Penalty contributions ``(dD/dt, dB/dt)`` from the weak boundary condition.

    With ``g = H x nu + (lambda (E x nu)) x nu`` the D equation receives
    ``sigma (1 + b) g / w`` and the B equation ``sigma b J(nu) T^+ g / w``,
    where ``T = J(nu) lambda J(nu)`` and ``w`` is the normal quadrature weight.
    """
    dD = np.zeros_like(E)
    dB = np.zeros_like(H)
    pts = ops.domain.points()
    for face in ops.domain.faces:
        idx = face.index(ops.shape)
        e = np.moveaxis(E[idx], 0, -1)
        h = np.moveaxis(H[idx], 0, -1)
        lam = impedance.eval_lambda(pts[idx[1:]])
        et = np.cross(e, face.normal)
        g = np.cross(h, face.normal) + np.cross(np.einsum("...ij,...j->...i", lam, et), face.normal)
        w = ops.normal_weight(face)
        dD[idx] += sat_strength * (1 + sat_split) / w * np.moveaxis(g, -1, 0)
        if sat_split > 0:
            Jn = J_of(face.normal)
            q = np.einsum("...ij,...j->...i", Jn @ np.linalg.pinv(Jn @ lam @ Jn, hermitian=True), g)
            dB[idx] += sat_strength * sat_split / w * np.moveaxis(q, -1, 0)
    return dD, dB


def boundary_residual(E, H, impedance, ops):
    """Boundary quadrature norm of ``H x nu + (lambda (E x nu)) x nu``."""
    pts = ops.domain.points()
    total = 0.0
    for face in ops.domain.faces:
        idx = face.index(ops.shape)
        e = np.moveaxis(E[idx], 0, -1)
        h = np.moveaxis(H[idx], 0, -1)
        lam = impedance.eval_lambda(pts[idx[1:]])
        g = np.cross(h, face.normal) + np.cross(np.einsum("...ij,...j->...i", lam, np.cross(e, face.normal)), face.normal)
        total += float(np.sum(ops.face_weights(face) * np.sum(g * g, axis=-1)))
    return float(np.sqrt(total))


def boundary_dissipation(E, impedance, ops):
    """``sum_faces int_face lambda (E x nu) . (E x nu)``."""
    pts = ops.domain.points()
    total = 0.0
    for face in ops.domain.faces:
        idx = face.index(ops.shape)
        et = np.cross(np.moveaxis(E[idx], 0, -1), face.normal)
        lam = impedance.eval_lambda(pts[idx[1:]])
        total += float(np.sum(ops.face_weights(face) * np.einsum("...i,...ij,...j->...", et, lam, et)))
    return total


def penalty_residual(E, H, impedance, ops):
    """``int_Gamma g . (-T^+) g`` with ``T = J(nu) lambda J(nu)``."""
    pts = ops.domain.points()
    total = 0.0
    for face in ops.domain.faces:
        idx = face.index(ops.shape)
        e = np.moveaxis(E[idx], 0, -1)
        h = np.moveaxis(H[idx], 0, -1)
        lam = impedance.eval_lambda(pts[idx[1:]])
        g = np.cross(h, face.normal) + np.cross(np.einsum("...ij,...j->...i", lam, np.cross(e, face.normal)), face.normal)
        Jn = J_of(face.normal)
        Tp = np.linalg.pinv(Jn @ lam @ Jn, hermitian=True)
        total -= float(np.sum(ops.face_weights(face) * np.einsum("...i,...ij,...j->...", g, Tp, g)))
    return total


@dataclass
class StepInfo:
    sweeps: int = 0
    newton_iters: int = 0
    E_mid: np.ndarray = None
    H_mid: np.ndarray = None


class MaxwellSolver:
    """Semi-discrete operator plus the two time integrators.

    Parameters
    ----------
    domain : BoxDomain
    law : MaterialLaw
    impedance : Impedance
    config : SolverConfig
    workers : int
        Thread count for the node-wise Newton inversion. Results do not
        depend on it: every node iterates independently.
    """

    def __init__(self, domain, law, impedance, config, workers=1):
        config.validate(domain.h_min)
        self.domain = domain
        self.ops = SbpOperators(domain)
        self.law = law
        self.impedance = impedance
        self.config = config
        self.workers = max(int(workers), 1)
        self.n = self.ops.n_nodes
        self.x_nodes = domain.points().reshape(-1, 3)
        self._build_operators()
        self._stage = {}

    # assembly

    def _build_operators(self):
        n = self.n
        sigma = self.config.sat_strength
        b = self.config.sat_split
        pee, peh, pbe, pbh = (np.zeros((n, 3, 3)) for _ in range(4))
        node_id = np.arange(n).reshape(self.ops.shape)
        pts = self.domain.points()
        for face in self.domain.faces:
            idx = face.index(self.ops.shape)
            ids = node_id[idx[1:]].ravel()
            Jn = J_of(face.normal)
            lam = self.impedance.eval_lambda(pts[idx[1:]].reshape(-1, 3))
            w = self.ops.normal_weight(face)
            T = Jn @ lam @ Jn
            # g = -Jn H + T E; the D equation receives (1 + b) g, the B
            # equation b Jn T^+ g, which keeps the energy rate free of cross terms
            pee[ids] += sigma * (1 + b) / w * T
            peh[ids] += -sigma * (1 + b) / w * Jn
            if b > 0:
                Tp = np.linalg.pinv(T, hermitian=True)
                pbe[ids] += sigma * b / w * Jn
                pbh[ids] += -sigma * b / w * (Jn @ Tp @ Jn)
        C = self.ops.sparse_curl
        self.P_EE = _block_diag(pee)
        self.P_EH = _block_diag(peh)
        self.P_BE = _block_diag(pbe)
        self.P_BH = _block_diag(pbh)
        sd = self.config.dissipation
        if sd > 0:
            self.A_diss = sd * sp.block_diag([self.ops.sparse_dissipation] * 3, format="csr")
        else:
            self.A_diss = sp.csr_matrix((3 * n, 3 * n))
        # d(D, B)/dt = M (E, H)
        self.M = sp.bmat(
            [[self.P_EE + self.A_diss, C + self.P_EH], [-C + self.P_BE, self.P_BH + self.A_diss]], format="csr"
        )
        zero = np.zeros_like(self.x_nodes)
        self.eps0_inv = np.linalg.inv(self.law.evaluate("eps", self.x_nodes, zero))
        self.mu0_inv = np.linalg.inv(self.law.evaluate("mu", self.x_nodes, zero))
        self.K_ref = sp.block_diag([_block_diag(self.eps0_inv), _block_diag(self.mu0_inv)], format="csr")

    def _stage_matrix(self, dt):
        key = float(dt)
        if key not in self._stage:
            self._stage[key] = (sp.identity(6 * self.n, format="csr") - 0.5 * dt * (self.M @ self.K_ref)).tocsr()
        return self._stage[key]

    def _stage_solve(self, A, F):
        """Solve the linearized midpoint stage ``A delta = F`` with GMRES.

        ``A = I - dt/2 M K`` is a small perturbation of the identity under the
        CFL bound, so unpreconditioned GMRES converges in a few dozen steps.
        """
        if not np.any(F):
            return np.zeros_like(F)
        x, info = spla.gmres(A, F, rtol=GMRES_RTOL, atol=0.0, restart=80, maxiter=20)
        if info != 0:
            raise NoConvergence("GMRES failed on the implicit midpoint stage")
        return x

    # field conversions

    def _flat(self, F):
        return F.reshape(3, -1)

    def _grid(self, f):
        return f.reshape(3, *self.ops.shape)

    def recover(self, which, Dflat, guess=None):
        """Recover ``E`` from ``D`` (component-major flat arrays, shape (3, N))."""
        if self.law.is_linear:
            inv = self.eps0_inv if which == "eps" else self.mu0_inv
            return np.einsum("nij,jn->in", inv, Dflat), 0
        D = Dflat.T
        G = np.zeros_like(D) if guess is None else guess.T
        cfg = self.config
        if self.workers == 1:
            E, it = _newton_nodes(D, self.law, which, self.x_nodes, G, cfg.newton_tol, cfg.newton_max_iter)
        else:
            chunks = np.array_split(np.arange(self.n), self.workers)
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(
                    pool.map(
                        lambda c: _newton_nodes(D[c], self.law, which, self.x_nodes[c], G[c], cfg.newton_tol, cfg.newton_max_iter),
                        chunks,
                    )
                )
            E = np.concatenate([p[0] for p in parts])
            it = np.concatenate([p[1] for p in parts])
        return E.T.copy(), int(it.max(initial=0))

    def make_state(self, t, E, H):
        """State from fields, caching ``D = eps(x, E) E`` and ``B = mu(x, H) H``."""
        E = np.asarray(E, dtype=float)
        H = np.asarray(H, dtype=float)
        D = self._grid(self._apply_law("eps", self._flat(E)))
        B = self._grid(self._apply_law("mu", self._flat(H)))
        return FieldState(float(t), E.copy(), H.copy(), D, B)

    def state_from_flux(self, t, D, B, guess=None):
        E, _ = self.recover("eps", self._flat(D), None if guess is None else self._flat(guess.E))
        H, _ = self.recover("mu", self._flat(B), None if guess is None else self._flat(guess.H))
        return FieldState(float(t), self._grid(E), self._grid(H), D.copy(), B.copy())

    def _apply_law(self, which, Fflat):
        mats = self.law.evaluate(which, self.x_nodes, Fflat.T)
        return np.einsum("nij,jn->in", mats, Fflat)

    def rhs(self, E, H):
        """Semi-discrete time derivative of ``(D, B)`` given grid fields."""
        y = self.M @ np.concatenate([E.ravel(), H.ravel()])
        return self._grid(y[: 3 * self.n]), self._grid(y[3 * self.n :])

    # integrators

    def step(self, state, dt=None):
        return self.advance(state, dt)[0]

    def advance(self, state, dt=None):
        """Advance one step; returns ``(new_state, StepInfo)``."""
        dt = self.config.dt if dt is None else dt
        try:
            if self.config.scheme == "midpoint":
                return self._midpoint(state, dt)
            return self._leapfrog(state, dt)
        except SolverError as exc:
            if getattr(exc, "time", None) is None:
                exc.time = state.t
                exc.args = (f"{exc.args[0]} (t = {state.t:.6g})",)
            raise

    def _midpoint(self, state, dt):
        n3 = 3 * self.n
        A = self._stage_matrix(dt)
        y0 = np.concatenate([state.D.ravel(), state.B.ravel()])
        y = y0.copy()
        Eg, Hg = self._flat(state.E), self._flat(state.H)
        info = StepInfo()
        scale = max(np.max(np.abs(y0)), 1e-300)
        prev = np.inf
        for sweep in range(1, SWEEP_LIMIT + 1):
            ybar = 0.5 * (y + y0)
            Eg, i1 = self.recover("eps", ybar[:n3].reshape(3, -1), Eg)
            Hg, i2 = self.recover("mu", ybar[n3:].reshape(3, -1), Hg)
            info.newton_iters = max(info.newton_iters, i1, i2)
            F = y - y0 - dt * (self.M @ np.concatenate([Eg.ravel(), Hg.ravel()]))
            delta = self._stage_solve(A, F)
            y = y - delta
            dmax = np.max(np.abs(delta))
            scale = max(scale, np.max(np.abs(y)))
            tol = self.config.newton_tol * scale
            if dmax <= tol or dmax == 0.0:
                break
            # the node-wise recovery leaves noise at the same relative level,
            # so a stalled update just above the tolerance is converged
            if dmax <= STALL_FACTOR * tol and dmax >= 0.5 * prev:
                break
            prev = dmax
        else:
            raise NoConvergence(f"implicit midpoint stage did not converge in {SWEEP_LIMIT} sweeps")
        info.sweeps = sweep
        ybar = 0.5 * (y + y0)
        Eg, _ = self.recover("eps", ybar[:n3].reshape(3, -1), Eg)
        Hg, _ = self.recover("mu", ybar[n3:].reshape(3, -1), Hg)
        y = y0 + dt * (self.M @ np.concatenate([Eg.ravel(), Hg.ravel()]))
        info.E_mid, info.H_mid = self._grid(Eg), self._grid(Hg)
        new = self.state_from_flux(state.t + dt, self._grid(y[:n3]), self._grid(y[n3:]), state)
        if not new.is_finite():
            raise SolverError("non-finite field values")
        return new, info

    def _leapfrog(self, state, dt):
        C = self.ops.sparse_curl
        info = StepInfo(sweeps=0)
        before = max(np.max(np.abs(state.E)), np.max(np.abs(state.H)), 1e-300)
        E0, H0 = state.E.ravel(), state.H.ravel()
        B_half = state.B.ravel() + 0.5 * dt * ((self.P_BE - C) @ E0 + (self.P_BH + self.A_diss) @ H0)
        H_half, _ = self.recover("mu", B_half.reshape(3, -1), self._flat(state.H))
        # the E-dependent penalty and damping terms are averaged over the step
        # with a predicted end value (Heun), which keeps the scheme second order
        PE = self.P_EE + self.A_diss
        D_curl = state.D.ravel() + dt * (C + self.P_EH) @ H_half.ravel()
        D_pred = D_curl + dt * (PE @ E0)
        E_pred, _ = self.recover("eps", D_pred.reshape(3, -1), self._flat(state.E))
        D_new = D_curl + 0.5 * dt * (PE @ (E0 + E_pred.ravel()))
        E_new, _ = self.recover("eps", D_new.reshape(3, -1), E_pred)
        B_new = B_half + 0.5 * dt * ((self.P_BE - C) @ E_new.ravel() + (self.P_BH + self.A_diss) @ H_half.ravel())
        H_new, _ = self.recover("mu", B_new.reshape(3, -1), H_half)
        info.E_mid = self._grid(0.5 * (self._flat(state.E) + E_new))
        info.H_mid = self._grid(H_half)
        new = FieldState(state.t + dt, self._grid(E_new), self._grid(H_new), self._grid(D_new), self._grid(B_new))
        after = max(np.max(np.abs(new.E)), np.max(np.abs(new.H)))
        if not new.is_finite() or after > 10.0 * before and before > 1e-280:
            raise CflViolation(f"field grew by more than 10x in one step ({after / before:.3g}x)")
        return new, info

    def dissipation(self, E):
        return boundary_dissipation(E, self.impedance, self.ops)

    def reversible(self):
        """This solver, or a copy without artificial dissipation and penalty split.

        Backward steps of the damped scheme amplify grid-scale content, and
        with the split penalty the backward midpoint stage becomes nearly
        singular on the boundary rows, so history before ``t = 0`` is
        integrated with the plain upwind operator.
        """
        if self.config.dissipation == 0 and self.config.sat_split == 0:
            return self
        cfg = replace(self.config, dissipation=0.0, sat_split=0.0)
        return MaxwellSolver(self.domain, self.law, self.impedance, cfg, self.workers)

    def numerical_dissipation(self, E, H):
        """Energy removed per unit time beyond the boundary dissipation.

        Sums the artificial dissipation ``-(E, A E)_W - (H, A H)_W`` and the
        penalty residual ``sigma b int_Gamma g . (-T^+) g``; both vanish with
        the default configuration.
        """
        total = 0.0
        if self.config.dissipation > 0:
            w = self.ops.weights.ravel()
            for F in (E, H):
                f = F.reshape(3, -1)
                af = (self.A_diss @ F.ravel()).reshape(3, -1)
                total -= float(np.sum(w * np.sum(f * af, axis=0)))
        if self.config.sat_split > 0:
            total += self.config.sat_strength * self.config.sat_split * penalty_residual(E, H, self.impedance, self.ops)
        return total


@dataclass
class RunResult:
    trace: object
    snapshots: list = field(default_factory=list)
    final: FieldState = None
    history: list = field(default_factory=list)


def run(solver, initial, recorder=None, keep_snapshots=False, seed_history=True):
    """Integrate from ``initial`` to ``config.t_final``.

    ``recorder`` receives every state (``recorder.observe``); the default is
    a :class:`qmaxwell.diagnostics.TraceRecorder`. When ``seed_history`` is
    set, three output strides are first integrated backward in time so that
    the time-derivative stencils are available from the first row on.
    """
    from .diagnostics import TraceRecorder

    cfg = solver.config
    if recorder is None:
        recorder = TraceRecorder(solver)
    stride = cfg.output_stride
    if seed_history:
        seeder = solver.reversible()
        past = []
        s = initial
        for _ in range(3 * stride):
            s = seeder.step(s, -cfg.dt)
            past.append(s)
        for s in reversed(past[stride - 1 :: stride]):
            recorder.seed(s)
    result = RunResult(trace=None)
    state = initial
    recorder.record(state)
    if keep_snapshots:
        result.snapshots.append(state.copy())
    for n in range(1, cfg.n_steps + 1):
        new, info = solver.advance(state)
        new.t = n * cfg.dt
        recorder.accumulate(info, cfg.dt)
        state = new
        if n % stride == 0 or n == cfg.n_steps:
            recorder.record(state)
            if keep_snapshots:
                result.snapshots.append(state.copy())
    result.final = state
    result.trace = recorder.finish()
    return result


# checkpoints

MAGIC = b"QMXW1"


def write_checkpoint(path, state):
    """Binary checkpoint: magic, u32 node counts, f64 time, then D, B, E, H.

    Each field is written component by component; within a component the
    node values are in x-fastest order, all as little-endian f64.
    """
    shape = state.E.shape[1:]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3I", *shape))
        fh.write(struct.pack("<d", state.t))
        for arr in (state.D, state.B, state.E, state.H):
            for c in range(3):
                fh.write(np.asarray(arr[c], dtype="<f8").ravel(order="F").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise SolverError(f"{path}: not a checkpoint file")
    shape = struct.unpack_from("<3I", data, 5)
    (t,) = struct.unpack_from("<d", data, 17)
    n = int(np.prod(shape))
    flat = np.frombuffer(data, dtype="<f8", offset=25)
    if flat.size != 12 * n:
        raise SolverError(f"{path}: truncated checkpoint")
    arrays = []
    for f in range(4):
        comps = [flat[(3 * f + c) * n : (3 * f + c + 1) * n].reshape(shape, order="F") for c in range(3)]
        arrays.append(np.stack(comps).astype(float))
    D, B, E, H = arrays
    return FieldState(float(t), E, H, D, B)
