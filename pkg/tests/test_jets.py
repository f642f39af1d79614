"""Core tests for the truncated-jet engine.

Oracles here are frozen by hand (geometric series, exponential products,
termwise primitives) before the implementation is trusted anywhere else.
"""

import numpy as np
import pytest

from akquant.errors import ChartMismatchError, DomainError, SingularJetError
from akquant.jets import Chart, Jet


def chart1(order=3):
    return Chart.standard(1, (0.0, 0.0), jet_order=order)


def chart2(order=4):
    return Chart.standard(2, (0.1, -0.2, 0.8, 0.6), jet_order=order)


def rand_jet(chart, rng, scale=1.0):
    c = scale * (rng.standard_normal(chart.size) + 1j * rng.standard_normal(chart.size))
    return Jet(chart, c)


# ---------------------------------------------------------------------------
# frozen oracles


def test_geometric_series_inverse():
    # 1/(1+x1) = 1 - x1 + x1^2 - x1^3 at J=3
    ch = chart1(3)
    f = 1.0 + Jet.coordinate(ch, "x1")
    g = f.invert()
    for k in range(4):
        want = (-1.0) ** k
        got = g.coeff((k, 0))
        assert abs(got - want) < 1e-14, f"x1^{k} coefficient {got} != {want}"
    # all mixed/fiber coefficients vanish
    assert abs(g.coeff((0, 1))) < 1e-14
    assert abs(g.coeff((1, 1))) < 1e-14


def test_difference_of_squares():
    ch = chart1(3)
    x = Jet.coordinate(ch, "x1")
    prod = (1.0 + x) * (1.0 - x)
    want = 1.0 - x * x
    assert prod.max_abs_diff(want) < 1e-15


def test_truncation_drops_high_orders():
    # cubic monomial truncated away at J=2
    ch = chart1(2)
    x = Jet.coordinate(ch, "x1")
    cube = (x * x) * x
    assert cube.max_abs() < 1e-15


def test_exp_product_is_one():
    ch = chart2(6)
    x = Jet.coordinate(ch, "x1")
    prod = x.exp() * (-x).exp()
    assert prod.max_abs_diff(Jet.constant(ch, 1.0)) < 1e-12


def test_invert_postcondition():
    rng = np.random.default_rng(7)
    ch = chart2(5)
    for _ in range(5):
        f = rand_jet(ch, rng) + 3.0  # keep away from zero
        res = (f * f.invert()).max_abs_diff(Jet.constant(ch, 1.0))
        assert res < 1e-10, f"f * invert(f) deviates from 1 by {res}"


def test_coordinate_jet_structure():
    ch = chart2(4)
    y3 = Jet.coordinate(ch, "y3")
    assert abs(y3.value() - 0.8) < 1e-15
    assert abs(y3.coeff((0, 0, 1, 0)) - 1.0) < 1e-15
    assert abs(y3.coeff((0, 0, 0, 1))) < 1e-15


# ---------------------------------------------------------------------------
# ring laws and calculus, randomized


def test_ring_laws():
    rng = np.random.default_rng(11)
    ch = chart2(4)
    for _ in range(10):
        a, b, c = (rand_jet(ch, rng) for _ in range(3))
        assert ((a * b) - (b * a)).max_abs() < 1e-12
        assert ((a * (b * c)) - ((a * b) * c)).max_abs() < 1e-10
        assert ((a * (b + c)) - (a * b + a * c)).max_abs() < 1e-11


def test_leibniz_rule():
    rng = np.random.default_rng(13)
    ch = chart2(5)
    for name in ("x1", "y4"):
        f, g = rand_jet(ch, rng), rand_jet(ch, rng)
        lhs = (f * g).partial(name)
        rhs = f.partial(name) * g + f * g.partial(name)
        assert lhs.max_abs_diff(rhs) < 1e-10
        assert lhs.reliable == ch.jet_order - 1


def test_partials_commute():
    rng = np.random.default_rng(17)
    ch = chart2(5)
    f = rand_jet(ch, rng)
    d12 = f.partial("x1").partial("y3")
    d21 = f.partial("y3").partial("x1")
    assert d12.max_abs_diff(d21) < 1e-14
    assert d12.reliable == ch.jet_order - 2


def test_monomial_partial_factors():
    # d/dx (x^3) = 3 x^2 with the monomial-coefficient convention
    ch = chart1(4)
    x = Jet.coordinate(ch, "x1")
    d = (x**3).partial("x1")
    assert abs(d.coeff((2, 0)) - 3.0) < 1e-15


def test_antiderivative_inverts_partial():
    rng = np.random.default_rng(19)
    ch = chart2(5)
    f = rand_jet(ch, rng)
    F = f.antiderivative("y3")
    assert F.reliable == ch.jet_order  # capped, not raised past J
    assert abs(F.value()) < 1e-15  # vanishes at base point
    back = F.partial("y3")
    # degree-J part of f was dropped in the primitive, compare below it
    assert back.max_abs_diff(f, through_order=ch.jet_order - 1) < 1e-13


def test_antiderivative_termwise():
    ch = chart1(5)
    x = Jet.coordinate(ch, "x1")
    F = (x**3).antiderivative("x1")
    assert abs(F.coeff((4, 0)) - 0.25) < 1e-15


def test_reliability_bookkeeping():
    ch = chart2(4)
    f = Jet.coordinate(ch, "x1") * Jet.coordinate(ch, "y3")
    g = f.partial("x1")
    assert g.reliable == 3
    h = g * f
    assert h.reliable == 3
    k = g.antiderivative("y4")
    assert k.reliable == 4


# ---------------------------------------------------------------------------
# analytic functions


def test_exp_log_round_trip():
    rng = np.random.default_rng(23)
    ch = chart2(5)
    c = 0.3 * rand_jet(ch, rng).c
    c[0] = 0.0  # keep the base value on the positive real axis for log
    f = Jet(ch, c) + 2.0
    assert f.log().exp().max_abs_diff(f) < 1e-11
    assert f.exp().log().max_abs_diff(f) < 1e-11


def test_sqrt_squares():
    rng = np.random.default_rng(29)
    ch = chart2(5)
    f = Jet(ch, 0.2 * rng.standard_normal(ch.size)) + 1.5
    r = f.sqrt()
    assert (r * r).max_abs_diff(f) < 1e-11


def test_trig_pythagoras():
    rng = np.random.default_rng(31)
    ch = chart2(5)
    f = rand_jet(ch, rng, scale=0.4)
    s, c = f.sin(), f.cos()
    assert (s * s + c * c).max_abs_diff(Jet.constant(ch, 1.0)) < 1e-11
    sh, chh = f.sinh(), f.cosh()
    assert (chh * chh - sh * sh).max_abs_diff(Jet.constant(ch, 1.0)) < 1e-11


def test_exp_known_coefficients():
    # exp(2 x1) has monomial coefficients 2^k / k!
    ch = chart1(4)
    f = (2.0 * Jet.coordinate(ch, "x1")).exp()
    import math

    for k in range(5):
        want = 2.0**k / math.factorial(k)
        assert abs(f.coeff((k, 0)) - want) < 1e-13


def test_rational_power():
    ch = chart2(5)
    f = 2.0 + Jet.coordinate(ch, "x1")
    from fractions import Fraction

    g = f.rational_power(Fraction(3, 2))
    assert (g * g).max_abs_diff(f**3) < 1e-10


def test_absolute_branch():
    ch = chart2(4)
    f = -2.0 + Jet.coordinate(ch, "x1")
    g = f.absolute()
    assert g.value().real > 0
    assert (g + f).max_abs() < 1e-15


def test_eval_at():
    ch = chart2(6)
    x = Jet.coordinate(ch, "x1")
    f = x.exp()
    import math

    got = f.eval_at((0.3, -0.2, 0.8, 0.6))
    assert abs(got - math.exp(0.3)) < 1e-8


# ---------------------------------------------------------------------------
# error conditions


def test_invert_singular():
    ch = chart1(3)
    with pytest.raises(SingularJetError):
        Jet.coordinate(ch, "x1").invert()


def test_log_domain():
    ch = chart1(3)
    with pytest.raises(DomainError):
        (Jet.coordinate(ch, "x1") - 1.0).log()
    with pytest.raises(DomainError):
        (Jet.coordinate(ch, "x1") - 1.0).sqrt()


def test_abs_domain():
    ch = chart1(3)
    with pytest.raises(DomainError):
        Jet.coordinate(ch, "x1").absolute()


def test_chart_mismatch():
    a = Jet.coordinate(chart1(3), "x1")
    b = Jet.coordinate(chart1(4), "x1")
    with pytest.raises(ChartMismatchError):
        _ = a + b


def test_chart_validation():
    with pytest.raises(ValueError):
        Chart(names=("x1",), base_point=(0.0,), jet_order=3)
    with pytest.raises(ValueError):
        Chart(names=("x1", "x1"), base_point=(0.0, 0.0), jet_order=3)
    with pytest.raises(ValueError):
        Chart(names=("x1", "y2"), base_point=(0.0, 0.0), jet_order=1)
