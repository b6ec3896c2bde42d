"""Bump calculus: analytic derivatives against high-order finite differences."""

import math

import numpy as np
import pytest

from wavetomo.fields import Bump, ScaledField, SumField, ZeroField, sum_fields


def _fd(f, x, t, axis, n, step=1e-4):
    """Fourth-order centered first difference along one coordinate."""
    e = np.zeros(n + 1)
    e[axis] = 1.0

    def at(s):
        return f(x + s * e[:n], t + s * e[n])

    return (at(-2 * step) - 8 * at(-step) + 8 * at(step) - at(2 * step)) / (12 * step)


@pytest.fixture(scope="module")
def b1():
    return Bump(n=1, center_x=(0.2,), center_t=0.9, radius_x=0.5, radius_t=0.6, amplitude=0.7)


@pytest.fixture(scope="module")
def b2():
    return Bump(n=2, center_x=(0.1, -0.2), center_t=0.8, radius_x=0.55, radius_t=0.5, amplitude=-0.4)


def _cloud(rng, bump, m=40):
    lo = np.array(bump.support.x_lo)
    hi = np.array(bump.support.x_hi)
    x = rng.uniform(lo - 0.1, hi + 0.1, size=(m, bump.n))
    t = rng.uniform(bump.support.t_lo - 0.1, bump.support.t_hi + 0.1, size=m)
    return x, t


def test_first_derivatives_match_fd(b1, b2):
    rng = np.random.default_rng(11)
    for bump in (b1, b2):
        x, t = _cloud(rng, bump)
        for axis in range(bump.n + 1):
            got = bump(x, t, deriv=(axis,))
            ref = _fd(bump, x, t, axis, bump.n)
            assert np.max(np.abs(got - ref)) < 2e-7


def test_second_derivatives_match_fd(b1, b2):
    rng = np.random.default_rng(12)
    for bump in (b1, b2):
        x, t = _cloud(rng, bump)
        for ax1 in range(bump.n + 1):
            for ax2 in range(ax1, bump.n + 1):
                got = bump(x, t, deriv=(ax1, ax2))
                ref = _fd(lambda xx, tt: bump(xx, tt, deriv=(ax1,)), x, t, ax2, bump.n)
                assert np.max(np.abs(got - ref)) < 5e-6


def test_third_derivative_t(b1):
    rng = np.random.default_rng(13)
    x, t = _cloud(rng, b1)
    got = b1(x, t, deriv=(1, 1, 1))
    ref = _fd(lambda xx, tt: b1(xx, tt, deriv=(1, 1)), x, t, 1, 1)
    assert np.max(np.abs(got - ref)) < 5e-5


def test_support_is_sharp(b1):
    """Exactly zero outside the support box, nonzero well inside."""
    xs = np.array([[b1.center_x[0] + b1.radius_x + 1e-9], [b1.center_x[0] - 2.0]])
    ts = np.array([b1.center_t, b1.center_t])
    vals = b1(xs, ts)
    assert vals[0] == 0.0 and vals[1] == 0.0
    assert b1(np.array([b1.center_x]), np.array([b1.center_t]))[0] == pytest.approx(
        b1.amplitude
    )
    # derivatives vanish outside too
    for d in ((0,), (1,), (0, 0)):
        assert b1(xs, ts, deriv=d)[0] == 0.0


def test_boundary_smoothness(b1):
    """C^3 cutoff: value and first two derivatives fade to ~0 at the edge."""
    edge = b1.center_x[0] + b1.radius_x
    xs = np.array([[edge - 1e-3]])
    ts = np.array([b1.center_t])
    assert abs(b1(xs, ts)[0]) < 1e-6
    assert abs(b1(xs, ts, deriv=(0,))[0]) < 1e-2


def test_spatially_constant_bump():
    g = Bump(n=1, center_x=(0.0,), center_t=1.0, radius_x=math.inf, radius_t=0.5, amplitude=0.3)
    x = np.array([[0.0], [57.0], [-4.0]])
    t = np.full(3, 1.1)
    vals = g(x, t)
    assert vals[0] == vals[1] == vals[2]
    assert g(x, t, deriv=(0,)).max() == 0.0


def test_sum_and_scale_algebra(b1):
    two = sum_fields(b1, b1)
    x = np.array([[0.2], [0.4]])
    t = np.array([0.9, 1.0])
    assert np.allclose(two(x, t), 2 * b1(x, t), rtol=0, atol=0)
    s = ScaledField(b1, -2.5)
    assert np.allclose(s(x, t, deriv=(1,)), -2.5 * b1(x, t, deriv=(1,)), rtol=0, atol=0)
    z = ZeroField(n=1)
    assert sum_fields(z, b1) is not None
    assert np.all(z(x, t) == 0.0)


def test_sum_fields_collapses_zero():
    z = ZeroField(n=2)
    with pytest.raises(ValueError, match="ZeroField"):
        sum_fields(z, z)
    b = Bump(n=2, center_x=(0.0, 0.0), center_t=0.5, radius_x=0.4, radius_t=0.4, amplitude=1.0)
    assert sum_fields(z, b) is b
    assert isinstance(sum_fields(b, b), SumField)
