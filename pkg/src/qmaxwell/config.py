"""Line-oriented scenario configuration.

Every non-blank line reads ``section.key = value``; ``#`` starts a comment.
Vectors are whitespace- or comma-separated numbers, booleans are
``true``/``false`` and ``none`` leaves an optional value unset. Unknown
sections or keys are errors reported with line and column.

Keys::

    domain.lower, domain.extents, domain.cells, domain.x0
    material.eps_law, material.eps_scale, material.eps_kerr, material.eps_matrix,
    material.eps_profile, material.eps_coeff, material.eps_center  (and mu_*)
    impedance.scale, impedance.matrix
    initial.kind, initial.amplitude, initial.seed, initial.radius,
    initial.wavenumber, initial.tol_div, initial.max_sweeps
    solver.scheme, solver.dt, solver.t_final, solver.newton_tol,
    solver.newton_max_iter, solver.sat_strength, solver.sat_split, solver.dissipation,
    solver.output_stride, solver.cfl, solver.allow_cfl_override
    assumptions.eta, assumptions.samples, assumptions.seed, assumptions.fd_step
    analysis.fit_quantity, analysis.fit_lo, analysis.fit_hi
    output.dir, output.prefix
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .geometry import BoxDomain
from .materials import (
    AnisotropicKerr,
    ConstantAnisotropic,
    ConstantIsotropic,
    Impedance,
    MaterialLaw,
    ScalarKerr,
    VaryingIsotropic,
)
from .solver import SolverConfig

LAWS = ("constant", "anisotropic", "varying", "kerr", "aniso_kerr")


@dataclass
class DomainBlock:
    lower: tuple = (0.0, 0.0, 0.0)
    extents: tuple = (1.0, 1.0, 1.0)
    cells: tuple = (16, 16, 16)
    x0: tuple = None


@dataclass
class MaterialBlock:
    eps_law: str = "constant"
    eps_scale: float = 1.0
    eps_kerr: float = 1.0
    eps_matrix: tuple = None
    eps_profile: str = "quadratic"
    eps_coeff: float = 1.0
    eps_center: tuple = None
    mu_law: str = "constant"
    mu_scale: float = 1.0
    mu_kerr: float = 1.0
    mu_matrix: tuple = None
    mu_profile: str = "quadratic"
    mu_coeff: float = 1.0
    mu_center: tuple = None


@dataclass
class ImpedanceBlock:
    scale: float = 1.0
    matrix: tuple = None


@dataclass
class InitialBlock:
    kind: str = "gaussian_bump"
    amplitude: float = 0.01
    seed: int = 0
    radius: float = None
    wavenumber: float = 4.0
    tol_div: float = None
    max_sweeps: int = 20


@dataclass
class SolverBlock:
    scheme: str = "midpoint"
    dt: float = 0.025
    t_final: float = 5.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    sat_strength: float = 1.0
    sat_split: float = 0.0
    dissipation: float = 0.0
    output_stride: int = 1
    cfl: float = 0.4
    allow_cfl_override: bool = False


@dataclass
class AssumptionsBlock:
    eta: float = 0.5
    samples: int = 512
    seed: int = 0
    fd_step: float = 1e-5


@dataclass
class AnalysisBlock:
    fit_quantity: str = "e0"
    fit_lo: float = 1.0
    fit_hi: float = None


@dataclass
class OutputBlock:
    dir: str = "qmxw_out"
    prefix: str = "run"


SECTIONS = {
    "domain": DomainBlock,
    "material": MaterialBlock,
    "impedance": ImpedanceBlock,
    "initial": InitialBlock,
    "solver": SolverBlock,
    "assumptions": AssumptionsBlock,
    "analysis": AnalysisBlock,
    "output": OutputBlock,
}

# value kinds per key, derived from the dataclass defaults
_VECTOR_LEN = {"lower": 3, "extents": 3, "cells": 3, "x0": 3, "matrix": 9, "center": 3}


@dataclass
class Scenario:
    domain: DomainBlock = field(default_factory=DomainBlock)
    material: MaterialBlock = field(default_factory=MaterialBlock)
    impedance: ImpedanceBlock = field(default_factory=ImpedanceBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    assumptions: AssumptionsBlock = field(default_factory=AssumptionsBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    # builders

    def build_domain(self):
        d = self.domain
        return BoxDomain(d.lower, d.extents, d.cells, d.x0)

    def _tensor_law(self, which, domain):
        m = self.material
        get = lambda key: getattr(m, f"{which}_{key}")
        law = get("law")
        if law == "constant":
            return ConstantIsotropic(get("scale"))
        if law == "anisotropic":
            return ConstantAnisotropic(_matrix(get("matrix"), f"material.{which}_matrix"))
        if law == "varying":
            center = get("center")
            if center is None:
                center = domain.x0
            return VaryingIsotropic(get("profile"), get("coeff"), center, get("scale"))
        if law == "kerr":
            return ScalarKerr(get("kerr"), get("scale"))
        if law == "aniso_kerr":
            return AnisotropicKerr(_matrix(get("matrix"), f"material.{which}_matrix"), get("kerr"))
        raise ConfigError(f"unknown law {law!r} for material.{which}_law; expected one of {', '.join(LAWS)}")

    def build_law(self, domain=None):
        domain = domain or self.build_domain()
        name = f"{self.material.eps_law}/{self.material.mu_law}"
        return MaterialLaw(self._tensor_law("eps", domain), self._tensor_law("mu", domain), name)

    def build_impedance(self):
        if self.impedance.matrix is not None:
            return Impedance(matrix=self.impedance.scale * np.asarray(self.impedance.matrix).reshape(3, 3))
        return Impedance(scale=self.impedance.scale)

    def solver_config(self):
        s = self.solver
        return SolverConfig(**{f.name: getattr(s, f.name) for f in fields(SolverBlock)})

    @property
    def fit_window(self):
        hi = self.analysis.fit_hi
        return (self.analysis.fit_lo, self.solver.t_final if hi is None else hi)

    # text form

    def to_text(self):
        lines = []
        for sec in SECTIONS:
            block = getattr(self, sec)
            for f in fields(block):
                lines.append(f"{sec}.{f.name} = {_format(getattr(block, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _matrix(values, key):
    if values is None:
        raise ConfigError(f"{key} is required for this law")
    return np.asarray(values, dtype=float).reshape(3, 3)


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _kind(block_cls, name):
    default = {f.name: f.default for f in fields(block_cls)}[name]
    if name in _VECTOR_LEN or name.endswith(tuple(f"_{k}" for k in _VECTOR_LEN)):
        key = name.split("_")[-1] if name not in _VECTOR_LEN else name
        return ("ivec" if name == "cells" else "fvec"), _VECTOR_LEN[key]
    if isinstance(default, bool):
        return "bool", None
    if isinstance(default, int):
        return "int", None
    if isinstance(default, float) or default is None:
        return "float", None
    return "str", None


def _convert(text, kind, size, line, col):
    raw = text.strip()
    if raw.lower() == "none":
        return None
    try:
        if kind == "bool":
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind in ("fvec", "ivec"):
            parts = raw.replace(",", " ").split()
            conv = int if kind == "ivec" else float
            vals = tuple(conv(p) for p in parts)
            if len(vals) == 1 and size == 3:
                vals = vals * 3
            if len(vals) != size:
                raise ConfigError(f"expected {size} values, got {len(vals)}", line=line, column=col)
            return vals
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind}", line=line, column=col) from None


def parse_text(text, source="<config>"):
    """Parse configuration text into a :class:`Scenario`."""
    sc = Scenario()
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        col = len(body) - len(body.lstrip()) + 1
        if "=" not in body:
            raise ConfigError(f"{source}: expected 'section.key = value'", line=lineno, column=col)
        lhs, rhs = body.split("=", 1)
        key = lhs.strip()
        vcol = len(lhs) + 2 + (len(rhs) - len(rhs.lstrip()))
        if "." not in key:
            raise ConfigError(f"{source}: key {key!r} lacks a section", line=lineno, column=col)
        sec, name = key.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"{source}: unknown section {sec!r}", line=lineno, column=col)
        block_cls = SECTIONS[sec]
        if name not in {f.name for f in fields(block_cls)}:
            raise ConfigError(f"{source}: unknown key {key!r}", line=lineno, column=col + len(sec) + 1)
        if key in seen:
            raise ConfigError(f"{source}: duplicate key {key!r} (first on line {seen[key]})", line=lineno, column=col)
        seen[key] = lineno
        kind, size = _kind(block_cls, name)
        setattr(getattr(sc, sec), name, _convert(rhs, kind, size, lineno, vcol))
    return sc


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, str(path))


def validate(sc):
    """Cross-field checks that do not need a simulation; returns the built objects."""
    domain = sc.build_domain()
    law = sc.build_law(domain)
    impedance = sc.build_impedance()
    cfg = sc.solver_config()
    cfg.validate(domain.h_min)
    if sc.initial.amplitude < 0:
        raise ConfigError("initial.amplitude must be nonnegative")
    if sc.analysis.fit_quantity not in ("e0", "e", "z"):
        raise ConfigError("analysis.fit_quantity must be e0, e or z")
    return domain, law, impedance, cfg


DEMO = """\
# linear isotropic demo on the unit box
domain.cells = 16 16 16
material.eps_law = constant
material.mu_law = constant
impedance.scale = 1.0
initial.kind = gaussian_bump
initial.amplitude = 0.01
solver.dt = 0.025
solver.t_final = 5.0
solver.output_stride = 1
"""
