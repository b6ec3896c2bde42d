import math

import numpy as np
import pytest

from wavetomo.geometry import (
    Direction,
    GridError,
    NormParams,
    RectRegion,
    WedgeRegion,
    classify_wedge,
    h_face_region,
    l_face_region,
    make_grid,
    slab_region,
    weighted_norm,
)
from wavetomo.geometry import INTERIOR, ON_H, ON_L, OUTSIDE


def test_grid_1d_extent_and_cfl():
    g = make_grid(n=1, T=2.0, h=0.05, margin=4.0)
    assert g.x_min == pytest.approx(-5.0)
    assert g.x_max == pytest.approx(5.0)
    assert g.dt <= 0.045 + 1e-15
    assert g.x_axis[0] == pytest.approx(g.x_min)
    assert g.x_axis[-1] == pytest.approx(g.x_max)
    # T is hit exactly by the last time level
    assert g.t_axis[-1] == pytest.approx(g.T)


def test_grid_2d_cfl():
    g = make_grid(n=2, T=1.0, h=0.1, margin=3.0)
    assert g.dt <= 0.9 * 0.1 / math.sqrt(2.0) + 1e-15


def test_grid_rejects_3d():
    with pytest.raises(GridError, match="dimension"):
        make_grid(n=3, T=1.0, h=0.1, margin=3.0)


def test_direction_labels():
    d = Direction.from_label("-e2")
    assert d.axis == 1 and d.sign == -1
    assert d.label == "-e2"
    assert d.opposite().label == "+e2"
    with pytest.raises(ValueError):
        Direction.from_label("e1")


def test_wedge_1d_basic_shape(grid1):
    """omega=+e1, tau=0: Q is {x.omega <= t <= T} up to grid snapping."""
    g = grid1
    w = classify_wedge(g, Direction.from_label("+e1"), 0.0)
    x = g.x_axis
    for ix in (0, g.nx // 3, g.nx // 2, 2 * g.nx // 3):
        s = x[ix]
        for jt in (0, g.nt // 2, g.nt - 1):
            t = g.t_axis[jt]
            lab = w.labels[ix, jt]
            if t > s + 0.51 * g.dt and jt < g.nt - 1:
                assert lab == INTERIOR
            elif t < s - 0.51 * g.dt:
                assert lab == OUTSIDE


def test_wedge_corner_at_tau_T(grid1):
    """tau = T puts H and L on the same line t = T = tau + x.omega at x.omega = 0."""
    g = grid1
    w = classify_wedge(g, Direction.from_label("+e1"), g.T)
    # the snapped L plane at x = 0 lands exactly on the top level
    i0 = int(np.argmin(np.abs(g.x_axis)))
    assert w.l_tidx[i0] == g.nt - 1
    assert w.h_spatial_mask[i0]
    # strictly left of the corner H is open, right of it everything is outside
    assert w.h_spatial_mask[: i0 + 1].all()
    assert not w.h_spatial_mask[i0 + 1 :].any()


def test_wedge_far_tau_brute_force(grid1):
    """tau = T+1: the wedge survives only where x.omega <= -1.

    Checked against a direct point scan of the defining inequalities
    rather than the classifier's own arithmetic.
    """
    g = grid1
    tau = g.T + 1.0
    om = Direction.from_label("+e1")
    w = classify_wedge(g, om, tau)
    s_val = tau + g.x_axis  # x.omega for omega = +e1
    inside = (w.labels == INTERIOR) | (w.labels == ON_L) | (w.labels == ON_H)
    for ix in range(0, g.nx, 7):
        col_nonempty = inside[ix].any()
        # brute-force: some t in [0, T] with t >= tau + x.omega (snapped)
        expect = s_val[ix] <= g.T + 0.5 * g.dt
        assert col_nonempty == expect
        if col_nonempty:
            assert g.x_axis[ix] <= -1.0 + 0.5 * g.dt


def test_wedge_masks_partition(grid1):
    g = grid1
    w = classify_wedge(g, Direction.from_label("-e1"), 0.3 * g.dt * 4)
    c = w.counts()
    assert sum(c.values()) == g.nx * g.nt
    assert c["interior"] > 0 and c["on-H"] > 0 and c["on-L"] > 0


def test_weighted_norm_zero_everywhere(grid1):
    g = grid1
    w = classify_wedge(g, Direction.from_label("+e1"), 0.0)
    regions = [
        h_face_region(w),
        l_face_region(w),
        slab_region(g),
        WedgeRegion(w),
    ]
    for reg in regions:
        z = np.zeros(reg.shape)
        for sigma in (0.0, 1.0, 7.0):
            for order in (0, 1):
                assert weighted_norm(z, reg, NormParams(order, sigma)) == 0.0


def test_weighted_norm_unit_square_closed_form():
    """||1|| with sigma=1 on [0,1]x[0,1] is sqrt((e^2-1)/2)."""
    m = 401
    ax = np.linspace(0.0, 1.0, m)
    reg = RectRegion(
        name="M",
        axes=(ax, ax),
        spacings=(ax[1] - ax[0],) * 2,
        frame_scales=(1.0, 1.0),
        t_values=np.broadcast_to(ax, (m, m)).copy(),
    )
    got = weighted_norm(np.ones((m, m)), reg, NormParams(order=0, sigma=1.0))
    want = math.sqrt((math.e**2 - 1.0) / 2.0)
    assert got == pytest.approx(want, rel=1e-4)


def test_weighted_seminorm_linear_on_l_face(grid1):
    """Unit tangential slope on L integrates to the face's arclength.

    The tangential coordinate runs sqrt(2) faster than x, so w = sqrt(2) x
    has frame slope exactly 1 and the order-1, sigma=0 seminorm squared
    equals length(L) = sqrt(2) * x-span.
    """
    g = grid1
    w = classify_wedge(g, Direction.from_label("+e1"), 0.0)
    reg = l_face_region(w)
    xs = reg.axes[0]
    vals = math.sqrt(2.0) * xs
    norm = weighted_norm(vals, reg, NormParams(order=1, sigma=0.0))
    length = math.sqrt(2.0) * (xs[-1] - xs[0])
    assert norm**2 == pytest.approx(length, rel=1e-12)


def test_l_face_measure_constant_function(grid1):
    """||1||_{L2(L)}^2 = sqrt(2) * x-span: the induced measure is wired in."""
    g = grid1
    w = classify_wedge(g, Direction.from_label("+e1"), 0.0)
    reg = l_face_region(w)
    xs = reg.axes[0]
    norm = weighted_norm(np.ones(reg.shape), reg, NormParams(order=0, sigma=0.0))
    assert norm**2 == pytest.approx(math.sqrt(2.0) * (xs[-1] - xs[0]), rel=1e-12)


def test_wedge_region_weights_cover_triangle(grid1):
    """Quadrature of 1 over Q approximates the triangle area (1D wedge)."""
    g = grid1
    tau = 0.0
    w = classify_wedge(g, Direction.from_label("+e1"), tau)
    reg = WedgeRegion(w)
    got = float(np.sum(reg.weights))
    # area of {0 <= t <= T, t >= tau + x, x >= x_min}: trapezoid in x
    xs = g.x_axis
    col = np.clip(g.T - np.clip(tau + xs, 0.0, None), 0.0, None)
    want = np.trapezoid(col, xs)
    assert got == pytest.approx(want, rel=5e-3)


def test_h2_norm_requires_rect(grid1):
    g = grid1
    w = classify_wedge(g, Direction.from_label("+e1"), 0.0)
    reg = WedgeRegion(w)
    vals = np.zeros(reg.shape)
    with pytest.raises(Exception):
        weighted_norm(vals, reg, NormParams(order=2, sigma=None))
