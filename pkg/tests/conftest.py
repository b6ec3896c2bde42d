import numpy as np
import pytest

from wavetomo.geometry import make_grid
from wavetomo.media import CoefficientSet


def bump(field, cx, ct, rx=0.5, rt=0.5, amp=0.1):
    """Shorthand for a bump spec dict; cx may be a scalar (1D) or list."""
    if np.isscalar(cx):
        cx = [cx]
    return {
        "field": field,
        "center_x": list(cx),
        "center_t": ct,
        "radius_x": rx,
        "radius_t": rt,
        "amplitude": amp,
    }


def medium(n, T, *specs):
    if not specs:
        return CoefficientSet.zero(n)
    return CoefficientSet.from_bumps(n, list(specs), T=T)


@pytest.fixture(scope="session")
def grid1():
    return make_grid(n=1, T=2.0, h=0.05, margin=4.0)


@pytest.fixture(scope="session")
def grid1_coarse():
    return make_grid(n=1, T=2.0, h=0.08, margin=4.0)


@pytest.fixture(scope="session")
def grid2():
    return make_grid(n=2, T=1.5, h=0.1, margin=3.5)


@pytest.fixture(scope="session")
def abc_medium1():
    """A smooth (a, b, c) medium used by several forward tests."""
    return medium(
        1,
        2.0,
        bump("a", 0.1, 0.8, amp=0.1),
        bump("b1", -0.2, 1.2, amp=0.1),
        bump("c", 0.25, 0.9, amp=0.2),
    )
