import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmaxwell import divcurl as dc
from qmaxwell.errors import SmallPivot, ZeroRhs
from qmaxwell.geometry import BoxDomain
from qmaxwell.materials import Impedance
from qmaxwell.sbp import SbpOperators

point = st.lists(st.floats(0, 1), min_size=3, max_size=3).map(np.array)
ANISO = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 1.0]])


@pytest.mark.parametrize("mf", dc.manufactured_corpus((0, 1)), ids=lambda m: m.name)
@given(x=point)
def test_manufactured_jacobian_matches_finite_differences(mf, x):
    step = 1e-6
    fd = np.stack([(mf.value(x + step * e) - mf.value(x - step * e)) / (2 * step) for e in np.eye(3)], axis=1)
    assert np.allclose(mf.jacobian(x), fd, atol=1e-6)


@given(x=point, seed=st.integers(0, 50))
def test_helmholtz_field_curl_and_div(x, seed):
    """Curl sees only the rotational part and div only the gradient part."""
    mf = dc.helmholtz_field(seed)
    rot = dc.ManufacturedField("rot", amps=mf.amps[0::2], waves=mf.waves[0::2], phases=mf.phases[0::2])
    grad = dc.ManufacturedField("grad", amps=mf.amps[1::2], waves=mf.waves[1::2], phases=mf.phases[1::2])
    assert np.allclose(rot.div(x), 0.0, atol=1e-10)
    assert np.allclose(grad.curl(x), 0.0, atol=1e-10)


def test_reconstructions_exact_for_linear_fields():
    ops = SbpOperators(BoxDomain(cells=(6, 7, 8)))
    L = np.arange(9.0).reshape(3, 3) - 4
    mf = dc.linear_field(L, (1.0, -2.0, 0.5))
    alpha = np.broadcast_to(ANISO, (ops.n_nodes, 3, 3))
    et, en = dc.reconstruction_errors(mf, ops, alpha, depth=1)
    assert et < 1e-12 and en < 1e-12
    u = mf.on_grid(ops.domain)
    for face in ops.domain.faces:
        full = dc.full_normal_derivative(u, alpha, ops, face, depth=1)
        assert np.allclose(full, (L @ face.normal)[:, None, None], atol=1e-12)
        assert np.allclose(dc.direct_normal_derivative(u, ops, face, 0), (L @ face.normal)[:, None, None])


def test_normalnormal_small_pivot(ops8):
    alpha = np.broadcast_to(np.diag([0.1, 1.0, 1.0]), (ops8.n_nodes, 3, 3))
    u = dc.trig_field(0).on_grid(ops8.domain)
    x_face = next(f for f in ops8.domain.faces if f.axis == 0)
    with pytest.raises(SmallPivot):
        dc.normalnormal_from_div(u, alpha, ops8, x_face, eta=1.0)
    y_face = next(f for f in ops8.domain.faces if f.axis == 1)
    dc.normalnormal_from_div(u, alpha, ops8, y_face, eta=1.0)


def test_layer_bounds(ops8):
    face = ops8.domain.faces[0]
    with pytest.raises(ValueError):
        dc.layer_points(ops8, face, 9)
    assert dc.layer_points(ops8, face, 2).shape == (9, 9, 3)


def test_h1_bound_zero_rhs(ops8):
    z = np.zeros((3, *ops8.shape))
    with pytest.raises(ZeroRhs):
        dc.h1_bound_check(z, z, None, None, Impedance(), ops8)


def test_h1_bound_constant_field_only_boundary_term(ops8):
    u = dc.constant_field([1.0, 0.0, 0.0]).on_grid(ops8.domain)
    r = dc.h1_bound_check(u, np.zeros_like(u), None, None, Impedance(), ops8)
    assert r.terms["curl_u"] == 0.0 and r.terms["div_alpha_u"] == 0.0
    # h = (e1 x nu) x nu = -e1 on the four side faces: L2 norm^2 = 4, H1 adds nothing
    assert r.terms["h_half"] == pytest.approx(2.0)
    assert r.lhs == pytest.approx(1.0)
    assert r.empirical_c == pytest.approx(0.5)


def test_observed_orders():
    assert dc.observed_orders([1.0, 0.25, 0.0625]) == pytest.approx([2.0, 2.0])


def test_refinement_orders_and_constants():
    corpus = [dc.trig_field(0), dc.helmholtz_field(1)]
    rows = dc.refinement_table(corpus, BoxDomain(), Impedance(), cells=(8, 16, 32))
    summary = dc.summarize_table(rows)
    for name, s in summary.items():
        assert s["order_curl"][-1] >= 1.9, name
        assert s["order_div"][-1] >= 1.9, name
        assert s["c_ratio"] <= 2.0
