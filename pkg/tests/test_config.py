import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmaxwell import config as cfg
from qmaxwell.errors import ConfigError
from qmaxwell.materials import AnisotropicKerr, ScalarKerr, VaryingIsotropic


def test_demo_parses_and_validates():
    sc = cfg.parse_text(cfg.DEMO)
    domain, law, imp, solver = cfg.validate(sc)
    assert domain.cells == (16, 16, 16)
    assert law.is_linear
    assert solver.n_steps == 200
    assert sc.fit_window == (1.0, 5.0)


def test_values_and_broadcast():
    sc = cfg.parse_text(
        "domain.cells = 8\n"
        "domain.extents = 2, 1, 1   # comma separated\n"
        "material.eps_law = aniso_kerr\n"
        "material.eps_matrix = 2 0 0 0 1 0 0 0 1\n"
        "material.mu_law = varying\n"
        "solver.allow_cfl_override = true\n"
        "initial.radius = none\n"
    )
    assert sc.domain.cells == (8, 8, 8)
    assert sc.domain.extents == (2.0, 1.0, 1.0)
    assert sc.solver.allow_cfl_override is True
    law = sc.build_law()
    assert isinstance(law.eps, AnisotropicKerr)
    assert isinstance(law.mu, VaryingIsotropic)
    assert np.allclose(law.mu.center, (1.0, 0.5, 0.5))


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("domain.cells = 8\nbogus.key = 1\n", 2, 1),
        ("solver.dt = 0.01\n  solver.nope = 3\n", 2, 10),
        ("solver.dt = abc\n", 1, 13),
        ("solver.dt = 0.01\nsolver.dt = 0.02\n", 2, 1),
        ("domain.cells = 8 8\n", 1, 16),
        ("just text\n", 1, 1),
        ("solver.allow_cfl_override = maybe\n", 1, 29),
    ],
)
def test_parse_errors_carry_position(text, line, column):
    with pytest.raises(ConfigError) as ei:
        cfg.parse_text(text)
    assert ei.value.line == line
    assert ei.value.column == column
    assert f"line {line}" in str(ei.value)


def test_validate_errors():
    with pytest.raises(ConfigError):
        cfg.validate(cfg.parse_text("solver.dt = 0.5\n"))
    with pytest.raises(ConfigError):
        cfg.validate(cfg.parse_text("material.eps_law = magic\n"))
    with pytest.raises(ConfigError):
        cfg.validate(cfg.parse_text("material.eps_law = anisotropic\n"))
    with pytest.raises(ConfigError):
        cfg.validate(cfg.parse_text("analysis.fit_quantity = q\n"))
    with pytest.raises(ConfigError):
        cfg.validate(cfg.parse_text("initial.amplitude = -1\n"))


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfg.load(tmp_path / "absent.cfg")


@given(
    cells=st.integers(4, 40),
    dt=st.floats(1e-4, 0.01),
    kerr=st.floats(-2, 2, allow_nan=False),
    seed=st.integers(0, 2**31),
    prefix=st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True),
)
def test_text_roundtrip(cells, dt, kerr, seed, prefix):
    sc = cfg.Scenario()
    sc.domain.cells = (cells, cells, cells + 1)
    sc.solver.dt = dt
    sc.material.eps_law = "kerr"
    sc.material.eps_kerr = kerr
    sc.initial.seed = seed
    sc.output.prefix = prefix
    back = cfg.parse_text(sc.to_text())
    assert dataclasses.asdict(back) == dataclasses.asdict(sc)
    assert isinstance(back.build_law().eps, ScalarKerr)


def test_impedance_matrix_scaled():
    sc = cfg.parse_text("impedance.scale = 2\nimpedance.matrix = 1 0 0 0 1 0 0 0 1\n")
    assert np.allclose(sc.build_impedance().matrix, 2 * np.eye(3))
