import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvbsde import monotone_ops as mo
from mvbsde.errors import DegenerateDomain, UnsupportedOperator

HALF_LINE = mo.NormalConeInterval(0.0, "inf")
UNIT = mo.NormalConeInterval(0.0, 1.0)
SYM = mo.NormalConeInterval(-1.0, 1.0)
IDENT = mo.LinearMonotone.scaled_identity(1.0)


@pytest.mark.parametrize(
    "op, eps, x, expected",
    [
        (HALF_LINE, 0.5, -1.0, 0.0),
        (mo.SubdiffAbs(), 0.5, 2.0, 1.5),
        (IDENT, 1.0, 4.0, 2.0),
    ],
)
def test_resolvent_examples(op, eps, x, expected):
    assert mo.resolvent(op, eps, x) == pytest.approx(expected, abs=1e-15)


def test_resolvent_examples_lie_in_graph():
    for op, eps, x in [(HALF_LINE, 0.5, -1.0), (mo.SubdiffAbs(), 0.5, 2.0), (IDENT, 1.0, 4.0)]:
        j = mo.resolvent(op, eps, x)
        assert mo.graph_contains(op, j, (x - j) / eps, 1e-9)


def test_yosida_examples():
    assert mo.yosida(IDENT, 1.0, 4.0) == pytest.approx(2.0)
    y = mo.yosida(mo.SubdiffAbs(), 0.5, 0.2)
    assert y == pytest.approx(0.4)
    assert mo.graph_contains(mo.SubdiffAbs(), 0.0, y, 0.0)
    assert mo.yosida(HALF_LINE, 0.25, -1.0) == pytest.approx(-4.0)


def test_minimal_section_examples():
    assert mo.minimal_section(mo.SubdiffAbs(), 0.0) == 0.0
    assert mo.minimal_section(UNIT, 0.0) == 0.0
    assert math.isinf(mo.minimal_section(UNIT, 2.0))


def test_project_domain_closure_examples():
    assert mo.project_domain_closure(UNIT, 3.0) == 1.0
    assert mo.project_domain_closure(mo.SubdiffAbs(), -7.0) == -7.0
    box = mo.NormalConeBox([0.0, 0.0], [1.0, 1.0])
    np.testing.assert_array_equal(mo.project_domain_closure(box, [2.0, -1.0]), [1.0, 0.0])


def test_projection_is_idempotent():
    xs = np.linspace(-5, 5, 101)
    for op in (UNIT, HALF_LINE, SYM):
        once = mo.project_domain_closure(op, xs)
        np.testing.assert_array_equal(mo.project_domain_closure(op, once), once)


def test_graph_contains_examples():
    assert mo.graph_contains(mo.SubdiffAbs(), 0.0, 0.7, 0.0)
    assert not mo.graph_contains(HALF_LINE, 1.0, -0.1, 0.0)
    assert mo.graph_contains(IDENT, 3.0, 3.0, 0.0)
    assert not mo.graph_contains(UNIT, 2.0, 0.0, 1.0)


def test_certificate_values():
    c = mo.coercivity_certificate(SYM)
    assert (c.a[0], c.m1, c.m2) == (0.0, 1.0, 0.0)
    c = mo.coercivity_certificate(mo.SubdiffAbs())
    assert (c.a[0], c.m1, c.m2) == (0.0, 1.0, 1.0)
    c = mo.coercivity_certificate(IDENT)
    assert (c.a[0], c.m1, c.m2) == (0.0, 1.0, 1.0)


@pytest.mark.parametrize("name", sorted(mo.shipped_operators()))
def test_certificate_holds_on_dense_grid(name):
    op = mo.shipped_operators()[name]
    cert = mo.coercivity_certificate(op)
    eps = np.geomspace(1e-4, 1.0, 60)
    if op.dim == 1:
        x = np.linspace(-10, 10, 2001)
        gap = mo.certificate_gap(op, cert, eps[:, None], x[None, :])
    else:
        g = np.linspace(-10, 10, 81)
        pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
        gap = np.stack([mo.certificate_gap(op, cert, e, pts) for e in eps])
    assert gap.min() >= -1e-9


def test_degenerate_interval_rejected():
    with pytest.raises(DegenerateDomain):
        mo.NormalConeInterval(1.0, 1.0)
    point = mo.NormalConeInterval(1.0, 1.0, degenerate=True)
    assert mo.resolvent(point, 0.3, 5.0) == 1.0
    with pytest.raises(DegenerateDomain):
        mo.coercivity_certificate(point)
    with pytest.raises(DegenerateDomain):
        mo.require_interior(point)


def test_non_monotone_matrix_rejected():
    with pytest.raises(UnsupportedOperator):
        mo.LinearMonotone([[-1.0]])


def test_sum_without_scalar_identity_rejected():
    with pytest.raises(UnsupportedOperator):
        mo.Sum(mo.SubdiffAbs(), HALF_LINE)
    with pytest.raises(UnsupportedOperator):
        mo.Sum(mo.LinearMonotone([[2.0]]) if False else mo.LinearMonotone([[1.0, 1.0], [0.0, 1.0]]),
               mo.NormalConeBox([0, 0], [1, 1]))


def test_sum_resolvent_satisfies_inclusion():
    op = mo.Sum(mo.LinearMonotone.scaled_identity(0.5), HALF_LINE)
    for x in np.linspace(-3, 3, 13):
        j = mo.resolvent(op, 0.7, x)
        assert mo.graph_contains(op, j, (x - j) / 0.7, 1e-12)


def test_yosida_of_yosida_closed_form_linear():
    # A = I: A_eps has slope 1/(1+eps), its Yosida approximation has slope 1/(1+eps+lam)
    eps, lam = 0.3, 0.45
    x = np.linspace(-4, 4, 9)
    y = mo.yosida_resolvent(IDENT, eps, lam, x)
    np.testing.assert_allclose((x - y) / lam, x / (1 + eps + lam), atol=1e-14)


@pytest.mark.parametrize("op", [IDENT, mo.SubdiffAbs()])
def test_yosida_of_yosida_equals_shifted_yosida(op):
    rng = np.random.default_rng(3)
    x = rng.uniform(-10, 10, 500)
    eps, lam = rng.uniform(0.01, 1, 500), rng.uniform(0.01, 1, 500)
    y = mo.yosida_resolvent(op, eps, lam, x)
    # defining equation of the resolvent of A_eps
    np.testing.assert_allclose(y + lam * mo.yosida(op, eps, y), x, atol=1e-9)
    np.testing.assert_allclose((x - y) / lam, mo.yosida(op, eps + lam, x), atol=1e-9)


def test_minimal_section_is_limit_of_yosida():
    op = SYM
    for x in (-1.0, -0.3, 0.0, 0.9, 1.0):
        norms = [abs(float(mo.yosida(op, e, x))) for e in (1.0, 0.1, 0.01, 0.001)]
        assert all(a <= b + 1e-15 for a, b in zip(norms, norms[1:]))
        assert norms[-1] == pytest.approx(abs(float(mo.minimal_section(op, x))), abs=1e-12)
    out = [abs(float(mo.yosida(op, e, 1.5))) for e in (1.0, 0.1, 0.01, 0.001)]
    assert out[-1] > 100 and out == sorted(out)
    sa = mo.SubdiffAbs()
    assert float(mo.yosida(sa, 1e-6, 0.5)) == pytest.approx(float(mo.minimal_section(sa, 0.5)))


def test_config_round_trip():
    for op in mo.shipped_operators().values():
        spec = mo.to_config(op)
        again = mo.from_config(spec)
        assert mo.to_config(again) == spec
    op = mo.from_config({"kind": "normal_cone_interval", "lo": 0, "hi": "inf"})
    assert op.lo == 0.0 and math.isinf(op.hi)


finite = st.floats(-50, 50, allow_nan=False)
eps_s = st.floats(1e-3, 1.0)


@settings(max_examples=200, deadline=None)
@given(x=finite, xp=finite, eps=eps_s, name=st.sampled_from(sorted(k for k, v in mo.shipped_operators().items() if v.dim == 1)))
def test_resolvent_nonexpansive_and_yosida_lipschitz(x, xp, eps, name):
    op = mo.shipped_operators()[name]
    dj = abs(float(mo.resolvent(op, eps, x) - mo.resolvent(op, eps, xp)))
    assert dj <= abs(x - xp) + 1e-12
    da = float(mo.yosida(op, eps, x) - mo.yosida(op, eps, xp))
    assert abs(da) <= abs(x - xp) / eps * (1 + 1e-12) + 1e-12
    assert da * (x - xp) >= -1e-12 * (1 + abs(da * (x - xp)))
