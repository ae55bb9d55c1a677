"""Experiment pipelines shared by the command line and the acceptance suite."""

import time
from dataclasses import dataclass, replace

import numpy as np

from . import diagnostics as dg
from . import divcurl as dc
from .errors import FailsAtZero, SolverError
from .geometry import check_star_shaped
from .initdata import compatibility_residuals, make_scenario
from .materials import (
    check_impedance,
    check_linearized_symmetry,
    check_local_positivity,
    check_starshape_coercivity,
)
from .sbp import SbpOperators
from .solver import MaxwellSolver, constitutive_invert, run

TOL_BALANCE_LINEAR = 1e-8
TOL_C1_LINEAR = 1e-6
TOL_COMPAT = 1e-10
TOL_CONST_MULTIPLIER = 1e-12
MIN_ORDER = 1.9


def certify(sc):
    """Assumption report for a scenario (materials, impedance, geometry, amplitude)."""
    domain = sc.build_domain()
    law = sc.build_law(domain)
    a = sc.assumptions
    report = check_linearized_symmetry(law, a.samples, a.seed, domain)
    try:
        report.merge(check_local_positivity(law, a.eta, a.samples, a.seed, domain))
    except FailsAtZero as exc:
        # keep going so the report also covers the remaining assumptions
        report.eta = a.eta
        report.delta_tilde = 0.0
        report.passed["local_positivity"] = False
        report.margins["local_positivity"] = float("-inf")
        report.values["local_positivity.error"] = f"{exc.code}: {exc}"
    report.merge(check_starshape_coercivity(law, domain, fd_step=a.fd_step))
    report.merge(check_impedance(sc.build_impedance(), domain, a.eta))
    report.eta_bar = check_star_shaped(domain)
    report.passed["star_shaped"] = report.eta_bar > 0
    report.margins["star_shaped"] = report.eta_bar
    delta = report.delta_tilde or 0.0
    amp = max(field_amplitude(law, "eps", domain.x0, sc.initial.amplitude),
              field_amplitude(law, "mu", domain.x0, 0.5 * sc.initial.amplitude))
    report.values["field_amplitude"] = amp
    report.passed["amplitude_within_radius"] = amp <= delta
    report.margins["amplitude_within_radius"] = delta - amp
    return report


def field_amplitude(law, which, x, flux_amplitude):
    """Largest ``|E|`` with ``|eps(x, E) E| = flux_amplitude`` along the axes.

    The scenario amplitude prescribes the flux peak; the positivity radius
    bounds the field, so the two are compared after inversion. A failed
    inversion means no admissible field carries that flux (infinite).
    """
    out = 0.0
    for e in np.eye(3):
        try:
            E, _ = constitutive_invert(flux_amplitude * e, law, which, x)
        except SolverError:
            return float("inf")
        out = max(out, float(np.linalg.norm(E)))
    return out


def build_solver(sc, workers=1):
    domain = sc.build_domain()
    return MaxwellSolver(domain, sc.build_law(domain), sc.build_impedance(), sc.solver_config(), workers)


def initial_data(sc, solver):
    i = sc.initial
    return make_scenario(
        i.kind, solver.law, solver.ops, solver.impedance, amplitude=i.amplitude, seed=i.seed,
        radius=i.radius, wavenumber=i.wavenumber, tol_div=i.tol_div, max_sweeps=i.max_sweeps,
    )


@dataclass
class RunOutput:
    solver: MaxwellSolver
    data: object
    result: object
    wall_time: float

    @property
    def trace(self):
        return self.result.trace


def run_scenario(sc, workers=1, keep_snapshots=False):
    solver = build_solver(sc, workers)
    data = initial_data(sc, solver)
    t0 = time.perf_counter()
    result = run(solver, solver.make_state(0.0, data.E0, data.H0), keep_snapshots=keep_snapshots)
    return RunOutput(solver, data, result, time.perf_counter() - t0)


# checks


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    residual: float
    passed: bool
    note: str = ""

    def line(self):
        status = "pass" if self.passed else "fail"
        extra = f" note={self.note}" if self.note else ""
        return (
            f"check={self.name} lhs={self.lhs:.6e} rhs={self.rhs:.6e} "
            f"residual={self.residual:.6e} status={status}{extra}"
        )


def energy_checks(trace, law, k_max=0):
    """Energy balance and dissipativity along a trace, ``k = 0..k_max``."""
    s, t = float(trace.t[0]), float(trace.t[-1])
    out = []
    linear = law.is_linear
    for k in range(k_max + 1):
        res = dg.energy_balance_residual(trace, k, s, t)
        tol = TOL_BALANCE_LINEAR if linear else np.inf
        out.append(Check(f"energy_balance_k{k}", res, tol, res, res <= tol, "" if linear else "informational"))
        d = dg.dissipativity_check(trace, s, t, k)
        ok = d.minimal_c1 <= TOL_C1_LINEAR if linear else True
        out.append(Check(f"dissipativity_k{k}", d.lhs, d.rhs_without_c1, d.minimal_c1, ok,
                         f"c1_z2={d.minimal_c1_z2:.3e}"))
    e0 = trace["e0"]
    if linear and len(e0) > 1:
        rise = float(np.max(np.diff(e0) / np.maximum(e0[:-1], 1e-300)))
        out.append(Check("e0_nonincreasing", rise, 1e-10, rise, rise <= 1e-10))
    return out


def multiplier_checks(trace, sc, ops, k=0):
    out = []
    rng = np.random.default_rng(0)
    v = np.broadcast_to(rng.standard_normal(3)[:, None, None, None], (3, *ops.shape)).copy()
    r = dg.curl_multiplier_identity_check(ops, None, v)
    out.append(Check("curl_multiplier_constant", r, TOL_CONST_MULTIPLIER, r, r <= TOL_CONST_MULTIPLIER))
    order = multiplier_order(sc.build_domain())
    out.append(Check("curl_multiplier_order", order, MIN_ORDER, order, order >= MIN_ORDER))
    if trace is not None and len(trace) > 1:
        report = certify(sc)
        obs = dg.observability_check(trace, ops.domain, report.kappa, report.eta_bar, k,
                                     float(trace.t[0]), float(trace.t[-1]))
        out.append(Check(f"observability_k{k}", obs.lhs, obs.rhs, obs.slack, obs.holds))
    return out


def multiplier_order(domain, cells=(8, 16, 32), seed=0, interior=True):
    """Observed order of the curl-multiplier identity on a cosine field.

    Measured on interior nodes by default; the full-grid norm converges at
    order 1.5 because of the first-order boundary closure.
    """
    beta = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 1.0]])
    mf = dc.trig_field(seed, max_wavenumber=1.0)
    errs = []
    for n in cells:
        ops = SbpOperators(domain.with_cells(n))
        b = np.broadcast_to(beta, (ops.n_nodes, 3, 3))
        errs.append(dg.curl_multiplier_identity_check(ops, b, mf.on_grid(ops.domain), interior=interior))
    return float(dc.observed_orders(errs)[-1])


def divcurl_checks(domain, impedance, cells=(8, 16, 32)):
    rows = dc.refinement_table(dc.manufactured_corpus(), domain, impedance, cells)
    out = []
    for name, s in dc.summarize_table(rows).items():
        oc, od = s["order_curl"][-1], s["order_div"][-1]
        out.append(Check(f"normal_from_curl_{name}", oc, MIN_ORDER, oc, oc >= MIN_ORDER))
        out.append(Check(f"normalnormal_from_div_{name}", od, MIN_ORDER, od, od >= MIN_ORDER))
        out.append(Check(f"h1_constant_{name}", max(s["c"]), min(s["c"]), s["c_ratio"], s["c_ratio"] <= 2.0))
    return out


def compat_checks(sc, solver, data, dts=None):
    out = []
    for k, r in compatibility_residuals(data, solver.impedance, solver.ops).items():
        out.append(Check(f"compatibility_k{k}", r, TOL_COMPAT, r, r <= TOL_COMPAT))
    c = time_derivative_consistency(solver, data, dts)
    for key in ("first", "second"):
        o = c[f"order_{key}"][-1]
        out.append(Check(f"compat_{key}_derivative_order", o, 0.9, o, o >= 0.9))
    return out


def time_derivative_consistency(solver, data, dts=None):
    """Errors of one-step difference quotients against ``E1`` and ``E2``.

    First: ``||(E(dt) - E0)/dt - E1||``; second:
    ``||(E(dt) - 2 E0 + E(-dt))/dt^2 - E2||`` (the backward step uses the
    same time-reversible integrator). Norms combine E and H.
    """
    if dts is None:
        dt0 = solver.config.dt
        dts = [dt0, dt0 / 2, dt0 / 4, dt0 / 8]
    stepper = solver.reversible()
    ops = solver.ops
    s0 = solver.make_state(0.0, data.E0, data.H0)
    first, second = [], []
    for dt in dts:
        fwd = stepper.step(s0, dt)
        bwd = stepper.step(s0, -dt)
        e1 = ops.norm2((fwd.E - data.E0) / dt - data.E1) + ops.norm2((fwd.H - data.H0) / dt - data.H1)
        e2 = ops.norm2((fwd.E - 2 * data.E0 + bwd.E) / dt**2 - data.E2)
        e2 += ops.norm2((fwd.H - 2 * data.H0 + bwd.H) / dt**2 - data.H2)
        first.append(float(np.sqrt(e1)))
        second.append(float(np.sqrt(e2)))
    return {
        "dts": list(dts),
        "first": first,
        "second": second,
        "order_first": dc.observed_orders(first),
        "order_second": dc.observed_orders(second),
    }


def divergence_drift(sc, cells_list=(8, 12, 16), t_final=None, full_grid=True):
    """``| ||div D(T)|| - ||div D(0)|| |`` under joint refinement ``dt ~ h``.

    Returns ``(hs, drifts, orders)``; ``full_grid`` selects the norm over all
    nodes (boundary rows included) instead of the interior nodes.
    """
    hs, drifts = [], []
    base = sc.domain.cells[0]
    for n in cells_list:
        s2 = replace(sc, domain=replace(sc.domain, cells=(n, n, n)),
                     solver=replace(sc.solver, dt=sc.solver.dt * base / n,
                                    t_final=sc.solver.t_final if t_final is None else t_final,
                                    output_stride=10**9))
        solver = build_solver(s2)
        data = initial_data(s2, solver)
        state = solver.make_state(0.0, data.E0, data.H0)
        for _ in range(s2.solver_config().n_steps):
            state, _ = solver.advance(state)
        ops = solver.ops
        if full_grid:
            d0, d1 = ops.norm(ops.div(data_flux(solver, data))), ops.norm(ops.div(state.D))
        else:
            d0 = dg.interior_div_norm(ops, data_flux(solver, data))
            d1 = dg.interior_div_norm(ops, state.D)
        hs.append(solver.domain.h_min)
        drifts.append(abs(d1 - d0))
    hs, drifts = np.array(hs), np.array(drifts)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(drifts[:-1] / drifts[1:]) / np.log(hs[:-1] / hs[1:])
    return hs, drifts, orders


def data_flux(solver, data):
    return solver.make_state(0.0, data.E0, data.H0).D


def verify(sc, which, trace=None, run_output=None, workers=1):
    """Run the selected verification suites; returns a list of :class:`Check`."""
    suites = ("energy", "multiplier", "divcurl", "compat") if which == "all" else (which,)
    checks = []
    needs_run = any(s in ("energy", "multiplier") for s in suites) and trace is None
    if needs_run or "compat" in suites:
        run_output = run_output or (run_scenario(sc, workers) if needs_run else None)
        if trace is None and run_output is not None:
            trace = run_output.trace
    for suite in suites:
        if suite == "energy":
            checks += energy_checks(trace, sc.build_law())
        elif suite == "multiplier":
            checks += multiplier_checks(trace, sc, SbpOperators(sc.build_domain()))
        elif suite == "divcurl":
            checks += divcurl_checks(sc.build_domain(), sc.build_impedance())
        elif suite == "compat":
            solver = run_output.solver if run_output is not None else build_solver(sc, workers)
            data = run_output.data if run_output is not None else initial_data(sc, solver)
            checks += compat_checks(sc, solver, data)
        else:
            raise ValueError(f"unknown verification suite {suite!r}")
    return checks
