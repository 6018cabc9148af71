import math

import numpy as np
import pytest
from scipy.integrate import quad

from measopt import Nonlinearity, nonlinearity_from_config


def test_power_values():
    g = Nonlinearity.power(3.0)
    assert float(g(2.0)) == 8.0
    assert float(g(-2.0)) == -8.0
    assert float(g(0.0)) == 0.0
    assert float(g.derivative(-2.0)) == 12.0
    assert float(g.primitive(2.0)) == 4.0
    assert float(g.primitive(-2.0)) == 4.0
    assert g.max_derivative(-1.0, 3.0) == 27.0
    assert g.reflected() is g


def test_power_q1_is_identity():
    g = Nonlinearity.power(1.0)
    t = np.linspace(-3, 3, 11)
    np.testing.assert_allclose(g(t), t, atol=0)
    np.testing.assert_allclose(g.derivative(t), 1.0, atol=0)
    assert g.max_derivative(-5.0, 5.0) == 1.0


def test_power_rejects_subunit_exponent():
    with pytest.raises(ValueError):
        Nonlinearity.power(0.5)
    with pytest.raises(ValueError):
        Nonlinearity.power(math.nan)


def test_linear_and_zero():
    g = Nonlinearity.linear(0.7)
    t = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(g(t), 0.7 * t, atol=0)
    np.testing.assert_allclose(g.derivative(t), 0.7, atol=0)
    np.testing.assert_allclose(g.primitive(t), 0.35 * t * t, rtol=0, atol=0)
    assert g.reflected() is g
    z = Nonlinearity.zero()
    assert float(z(5.0)) == 0.0
    assert z.max_derivative(-10, 10) == 0.0
    with pytest.raises(ValueError):
        Nonlinearity.linear(-0.1)


def test_table_interpolation_and_extension():
    g = Nonlinearity.table([-1.0, 0.0, 1.0, 2.0], [-2.0, 0.0, 0.5, 3.0])
    assert float(g(0.5)) == 0.25
    assert float(g(1.5)) == pytest.approx(1.75)
    # linear extension beyond both ends
    assert float(g(3.0)) == pytest.approx(5.5)
    assert float(g(-2.0)) == pytest.approx(-4.0)
    # right derivative at the kinks
    assert float(g.derivative(0.0)) == 0.5
    assert float(g.derivative(1.0)) == 2.5
    assert g.max_derivative(-0.5, 1.5) == 2.5
    assert g.max_derivative(0.1, 0.9) == 0.5


def _integrate_piecewise(fn, t, kinks):
    # quad each smooth piece so corners cost no accuracy
    lo, hi = min(0.0, t), max(0.0, t)
    pts = sorted({lo, hi, *(k for k in kinks if lo < k < hi)})
    total = sum(quad(fn, a, b)[0] for a, b in zip(pts, pts[1:]))
    return total if t >= 0.0 else -total


def test_table_primitive_matches_quadrature():
    kinks = [-1.0, 0.0, 1.0, 2.0]
    g = Nonlinearity.table(kinks, [-2.0, 0.0, 0.5, 3.0])
    assert float(g.primitive(0.0)) == 0.0
    for t in (-1.7, -0.3, 0.4, 1.2, 2.6):
        ref = _integrate_piecewise(lambda s: float(g(s)), t, kinks)
        assert float(g.primitive(t)) == pytest.approx(ref, abs=1e-10)


def test_table_validation():
    with pytest.raises(ValueError):
        Nonlinearity.table([0.0, 0.0, 1.0], [0.0, 1.0, 2.0])  # repeated t
    with pytest.raises(ValueError):
        Nonlinearity.table([-1.0, 0.0, 1.0], [0.0, 1.0, 0.5])  # decreasing g
    with pytest.raises(ValueError):
        Nonlinearity.table([1.0, 2.0], [0.0, 1.0])  # 0 outside range
    with pytest.raises(ValueError):
        Nonlinearity.table([-1.0, 1.0], [1.0, 2.0])  # g(0) != 0
    with pytest.raises(ValueError):
        Nonlinearity.table([0.0], [0.0])


def test_table_reflection():
    g = Nonlinearity.table([-1.0, 0.0, 2.0], [-3.0, 0.0, 1.0])
    r = g.reflected()
    for t in (-2.5, -1.0, 0.0, 0.7, 3.0):
        assert float(r(t)) == pytest.approx(-float(g(-t)), abs=1e-14)
    # reflecting twice recovers the original
    rr = r.reflected()
    for t in (-2.5, 0.7, 3.0):
        assert float(rr(t)) == pytest.approx(float(g(t)), abs=1e-14)


def test_from_callable_with_analytic_parts():
    g = Nonlinearity.from_callable(
        lambda t: t + 0.1 * np.sin(t),
        deriv=lambda t: 1.0 + 0.1 * np.cos(t),
        primitive=lambda t: 0.5 * np.asarray(t) ** 2 - 0.1 * np.cos(t) + 0.1)
    assert float(g(0.0)) == 0.0
    assert float(g(1.0)) == pytest.approx(1.0 + 0.1 * math.sin(1.0))
    assert float(g.derivative(2.0)) == pytest.approx(1.0 + 0.1 * math.cos(2.0))
    assert float(g.primitive(2.0)) == pytest.approx(2.0 - 0.1 * math.cos(2.0) + 0.1)
    assert g.max_derivative(-1.0, 1.0) == pytest.approx(1.1, abs=1e-6)


def test_from_callable_fallbacks():
    g = Nonlinearity.from_callable(lambda t: np.asarray(t) ** 3)
    assert float(g.derivative(2.0)) == pytest.approx(12.0, rel=1e-8)
    assert float(g.primitive(2.0)) == pytest.approx(4.0, rel=1e-12)
    r = g.reflected()
    assert float(r(2.0)) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        Nonlinearity.from_callable(lambda t: np.asarray(t) + 1.0)  # g(0) != 0


def test_monotone_sampled():
    rng = np.random.default_rng(41)
    fns = [Nonlinearity.power(1.5), Nonlinearity.power(3.0),
           Nonlinearity.linear(2.0),
           Nonlinearity.table([-2.0, -0.5, 0.0, 1.0], [-4.0, -1.0, 0.0, 0.0])]
    for g in fns:
        t = np.sort(rng.uniform(-5, 5, 64))
        assert np.all(np.diff(np.asarray(g(t))) >= -1e-12)
        assert np.all(np.asarray(g.derivative(t)) >= -1e-12)


def test_from_config():
    assert float(nonlinearity_from_config({"kind": "power", "q": 2.0})(3.0)) == 9.0
    assert float(nonlinearity_from_config({"kind": "linear", "lam": 2.0})(3.0)) == 6.0
    assert float(nonlinearity_from_config({"kind": "zero"})(3.0)) == 0.0
    tab = nonlinearity_from_config({"kind": "table", "t": [-1, 0, 1], "g": [-1, 0, 1]})
    assert float(tab(0.5)) == 0.5
    with pytest.raises(ValueError):
        nonlinearity_from_config({"kind": "cubic-spline"})
