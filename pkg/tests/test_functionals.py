"""Stability functionals and the weighted wedge inequality.

The heavy check here is a brute-force reproduction of both sides of the
wedge inequality with an independent trapezoid quadrature at ~4M nodes;
the stability functionals are pinned by scaling laws, by hand-computed
norm values for media whose difference is a single known bump, and by
exact cancellation for gauge-equivalent pairs.
"""

import csv
import json
import math

import numpy as np
import pytest

from conftest import bump, medium
from wavetomo.fields import Bump, ZeroField
from wavetomo.forward import PlaneWaveDataset, forward_data, make_tau_grid
from wavetomo.functionals import (
    FunctionalError,
    carleman_check,
    stability_directions,
    thm_ab_functional,
    thm_abc_functional,
    thm_q_functional,
    write_stability_csv,
)
from wavetomo.geometry import Direction, make_grid
from wavetomo.media import (
    GaugeFunction,
    apply_gauge,
    compute_q,
    drift_along,
    solve_psi,
    with_prescribed_q,
)

T = 2.0
OM = Direction.from_label("+e1")


def _dataset(med, grid, dirs=(OM,), dtau=0.5):
    return forward_data(med, list(dirs), grid, tau_values=make_tau_grid(grid, dtau=dtau))


# ---------------------------------------------------------------------------
# direction sets


def test_direction_sets_on_the_line_and_plane():
    ab1 = [d.label for d in stability_directions("ab", 1)]
    abc1 = [d.label for d in stability_directions("abc", 1)]
    assert sorted(ab1) == ["+e1", "-e1"] and len(ab1) == 2
    assert sorted(abc1) == ["+e1", "-e1"] and len(abc1) == 2
    ab2 = [d.label for d in stability_directions("ab", 2)]
    abc2 = [d.label for d in stability_directions("abc", 2)]
    assert sorted(ab2) == sorted(["+e1", "+e2", "-e2"])
    assert sorted(abc2) == sorted(["+e1", "+e2", "-e2"])
    with pytest.raises(FunctionalError):
        stability_directions("q", 1)


# ---------------------------------------------------------------------------
# the potential estimate


def test_q_functional_identical_media_is_exactly_zero(grid1):
    med = medium(1, T, bump("c", 0.2, 1.0, amp=0.1))
    ds = _dataset(med, grid1)
    rep = thm_q_functional(compute_q(med), compute_q(med), ds, ds)
    assert rep.lhs == 0.0
    assert rep.rhs == 0.0
    assert rep.ratio is None
    assert rep.problem == "q"


def test_q_functional_requires_single_direction(grid1):
    med = medium(1, T)
    ds = _dataset(med, grid1, dirs=(OM, Direction.from_label("-e1")))
    with pytest.raises(FunctionalError, match="single"):
        thm_q_functional(compute_q(med), compute_q(med), ds, ds)


def test_q_lhs_matches_independent_quadrature(grid1):
    # a = b = 0, so q = c and the lhs is the space-time L2 norm of the
    # c-difference; compare the grid trapezoid against Gauss panels.
    from numpy.polynomial.legendre import leggauss

    delta = dict(cx=0.2, ct=0.8, rx=0.4, rt=0.4, amp=0.01)
    base = medium(1, T, bump("c", -0.3, 1.1, rx=0.45, rt=0.45, amp=0.15))
    pert = medium(
        1,
        T,
        bump("c", -0.3, 1.1, rx=0.45, rt=0.45, amp=0.15),
        bump("c", delta["cx"], delta["ct"], rx=delta["rx"], rt=delta["rt"], amp=delta["amp"]),
    )
    ds0 = _dataset(base, grid1)
    ds1 = _dataset(pert, grid1)
    rep = thm_q_functional(compute_q(base), compute_q(pert), ds0, ds1)

    g = Bump(1, (delta["cx"],), delta["ct"], delta["rx"], delta["rt"], delta["amp"])
    xn, xw = leggauss(48)
    xs = delta["cx"] + delta["rx"] * xn
    ts = delta["ct"] + delta["rt"] * xn
    X, Tm = np.meshgrid(xs, ts, indexing="ij")
    vals = g.eval(X[..., None], Tm)
    w2 = np.outer(xw, xw) * delta["rx"] * delta["rt"]
    lhs_oracle = math.sqrt(float(np.sum(w2 * vals * vals)))
    assert rep.lhs == pytest.approx(lhs_oracle, rel=5e-3)
    assert rep.rhs > 0 and rep.ratio == pytest.approx(rep.lhs / rep.rhs)


def test_q_functional_scales_linearly(grid1):
    # lhs is exactly homogeneous in the coefficient difference; rhs is
    # homogeneous up to the quadratic remainder of the forward map.
    base = medium(1, T, bump("c", -0.3, 1.1, rx=0.45, rt=0.45, amp=0.15))
    ds0 = _dataset(base, grid1)
    reps = {}
    for lam in (1e-2, 5e-3):
        pert = medium(
            1,
            T,
            bump("c", -0.3, 1.1, rx=0.45, rt=0.45, amp=0.15),
            bump("c", 0.2, 0.8, rx=0.4, rt=0.4, amp=lam),
        )
        reps[lam] = thm_q_functional(
            compute_q(base), compute_q(pert), ds0, _dataset(pert, grid1)
        )
    assert reps[1e-2].lhs == pytest.approx(2.0 * reps[5e-3].lhs, rel=1e-12)
    assert reps[1e-2].rhs == pytest.approx(2.0 * reps[5e-3].rhs, rel=5e-3)


def test_q_rhs_stable_under_dataset_roundtrip(grid1, tmp_path):
    base = medium(1, T)
    pert = medium(1, T, bump("c", 0.1, 0.9, amp=0.05))
    ds0, ds1 = _dataset(base, grid1), _dataset(pert, grid1)
    rep = thm_q_functional(compute_q(base), compute_q(pert), ds0, ds1)
    ds1.save(tmp_path / "ds1")
    rep2 = thm_q_functional(
        compute_q(base), compute_q(pert), ds0, PlaneWaveDataset.load(tmp_path / "ds1")
    )
    assert rep2.rhs == rep.rhs
    assert rep2.lhs == rep.lhs


def test_q_detail_reports_computed_pairs(grid1):
    base = medium(1, T)
    pert = medium(1, T, bump("c", 0.1, 0.9, amp=0.05))
    rep = thm_q_functional(
        compute_q(base), compute_q(pert), _dataset(base, grid1), _dataset(pert, grid1)
    )
    assert set(rep.detail) >= {"per_direction", "computed_pairs", "background_pairs"}
    assert rep.detail["computed_pairs"] > 0
    assert "+e1" in rep.detail["per_direction"]


def test_stability_csv_round_trips(grid1, tmp_path):
    base = medium(1, T)
    pert = medium(1, T, bump("c", 0.1, 0.9, amp=0.05))
    rep = thm_q_functional(
        compute_q(base),
        compute_q(pert),
        _dataset(base, grid1),
        _dataset(pert, grid1),
        amplitude=0.05,
    )
    path = tmp_path / "sweep.csv"
    write_stability_csv([rep, rep], path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 2
    assert rows[0]["problem"] == "q"
    assert float(rows[0]["lhs"]) == rep.lhs
    assert float(rows[0]["ratio"]) == pytest.approx(rep.ratio, rel=1e-15)
    assert float(rows[0]["amplitude"]) == 0.05


# ---------------------------------------------------------------------------
# the drift estimate


def test_ab_functional_identical_media_is_zero(grid1):
    med = medium(1, T, bump("a", 0.1, 0.9, amp=0.1))
    ds = _dataset(med, grid1, dirs=stability_directions("ab", 1))
    rep = thm_ab_functional(med.a, med.b, med.a, med.b, ds, ds)
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.ratio is None


def test_ab_functional_shared_q_pair(grid1):
    # med2 carries the same potential as med1 but a different drift, the
    # regime the estimate is stated for; the lhs must equal the slab L2
    # norm of the a-difference alone (b is shared).
    from numpy.polynomial.legendre import leggauss

    med1 = medium(1, T, bump("a", 0.1, 0.9, rx=0.4, rt=0.4, amp=0.02))
    med2 = with_prescribed_q(ZeroField(1), (ZeroField(1),), compute_q(med1))
    dirs = stability_directions("ab", 1)
    rep = thm_ab_functional(
        med1.a, med1.b, med2.a, med2.b, _dataset(med1, grid1, dirs=dirs),
        _dataset(med2, grid1, dirs=dirs), amplitude=0.02,
    )
    xn, xw = leggauss(48)
    g = Bump(1, (0.1,), 0.9, 0.4, 0.4, 0.02)
    X, Tm = np.meshgrid(0.1 + 0.4 * xn, 0.9 + 0.4 * xn, indexing="ij")
    vals = g.eval(X[..., None], Tm)
    a_norm = math.sqrt(float(np.sum(np.outer(xw, xw) * 0.16 * vals * vals)))
    assert rep.lhs == pytest.approx(a_norm, rel=5e-3)
    assert rep.detail["lhs_components"]["b1"] == 0.0
    assert rep.detail["lhs_components"]["a"] == rep.lhs
    assert rep.rhs > 0 and rep.ratio is not None and math.isfinite(rep.ratio)


def test_drift_decomposition_recovers_a(abc_medium1):
    # the two signed line drifts average back to a: their sum evaluates
    # 2a pointwise because the b-projections cancel.
    plus = drift_along(abc_medium1, OM)
    minus = drift_along(abc_medium1, Direction.from_label("-e1"))
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, size=(40, 1))
    t = rng.uniform(0, T, size=40)
    total = plus.eval(x, t) + minus.eval(x, t)
    np.testing.assert_allclose(total, 2.0 * abc_medium1.a.eval(x, t), atol=1e-13)


# ---------------------------------------------------------------------------
# the gauge-invariant estimate


def test_abc_functional_identical_media_is_zero(grid1):
    med = medium(1, T, bump("c", 0.2, 1.0, amp=0.1))
    ds = _dataset(med, grid1, dirs=stability_directions("abc", 1))
    psi = solve_psi(med, grid1)
    rep = thm_abc_functional(med, med, ds, ds, psi, psi)
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.ratio is None


def test_abc_functional_vanishes_on_gauge_pairs(grid1):
    # a gauge with phi(T) = phi_t(T) = 0 changes (a, b) but none of the
    # invariant content: lhs cancels to quadrature roundoff while the
    # rhs keeps a small positive floor set by solver accuracy, so the
    # ratio collapses instead of contradicting the estimate.
    med1 = medium(1, T, bump("a", 0.1, 0.9, amp=0.08), bump("c", 0.2, 1.0, amp=0.1))
    gauge = GaugeFunction(phi=Bump(1, (0.0,), 1.2, 0.5, 0.5, 0.02))
    med2 = apply_gauge(med1, gauge)
    assert gauge.end_conditions(grid1)["data_invariant"]

    dirs = stability_directions("abc", 1)
    rep = thm_abc_functional(
        med1,
        med2,
        _dataset(med1, grid1, dirs=dirs),
        _dataset(med2, grid1, dirs=dirs),
        solve_psi(med1, grid1),
        solve_psi(med2, grid1),
    )
    assert rep.lhs < 1e-9
    assert rep.detail["lhs_components"]["c"] == 0.0
    assert 0 < rep.rhs < 0.05
    assert rep.ratio < 1e-6


def test_abc_ratio_stable_across_resolutions():
    # the lhs/rhs ratio is a discretization of a continuum quantity: it
    # must settle, not drift, when h shrinks.
    ratios = []
    for h in (0.05, 0.04):
        grid = make_grid(n=1, T=T, h=h, margin=4.0)
        base = medium(1, T)
        pert = medium(1, T, bump("c", 0.2, 1.0, rx=0.45, rt=0.45, amp=0.05))
        dirs = stability_directions("abc", 1)
        rep = thm_abc_functional(
            base,
            pert,
            _dataset(base, grid, dirs=dirs),
            _dataset(pert, grid, dirs=dirs),
            solve_psi(base, grid),
            solve_psi(pert, grid),
        )
        assert rep.ratio is not None
        assert rep.detail["psi_rhs"] > 0
        ratios.append(rep.ratio)
    assert ratios[1] == pytest.approx(ratios[0], rel=0.2)


# ---------------------------------------------------------------------------
# the weighted wedge inequality


def _brute_wedge(w, coeffs, omega, tau, sigma, grid, nx=1601, nt=2401):
    """Trapezoid evaluation of both sides on the support of w."""
    a_f, b_f, q_f = coeffs.a, coeffs.b[0], compute_q(coeffs)
    x_lo, x_hi = float(w.support.x_lo[0]), float(w.support.x_hi[0])
    t_cap = min(grid.T, float(w.support.t_hi))
    xg = np.linspace(x_lo, x_hi, nx)
    xw = np.full(nx, (x_hi - x_lo) / (nx - 1))
    xw[0] *= 0.5
    xw[-1] *= 0.5
    z = omega.sign * xg
    t_lo = np.maximum(tau + z, float(w.support.t_lo))
    span = np.maximum(t_cap - t_lo, 0.0)
    u = np.linspace(0.0, 1.0, nt)
    uw = np.full(nt, 1.0 / (nt - 1))
    uw[0] *= 0.5
    uw[-1] *= 0.5
    tt = t_lo[:, None] + span[:, None] * u
    tjac = span[:, None] * uw
    X = np.broadcast_to(xg[:, None, None], tt.shape + (1,))

    def ev(f, d=()):
        return np.asarray(f.eval(X, tt, d), float)

    wv, wx, wt = ev(w), ev(w, (0,)), ev(w, (1,))
    lw = ev(w, (1, 1)) - ev(w, (0, 0)) - 2 * ev(a_f) * wt + 2 * ev(b_f) * wx + ev(q_f) * wv
    ew = np.exp(2 * sigma * tt)
    q_energy = float(np.sum(xw[:, None] * tjac * ew * (wx**2 + wt**2 + sigma**2 * wv**2)))
    q_source = float(np.sum(xw[:, None] * tjac * ew * lw * lw))

    tl = tau + z
    Xl = xg[:, None]
    tang = omega.sign * np.asarray(w.eval(Xl, tl, (0,)), float) + np.asarray(
        w.eval(Xl, tl, (1,)), float
    )
    wlv = np.asarray(w.eval(Xl, tl), float)
    l_int = (0.5 * tang**2 + sigma**2 * wlv**2) * np.exp(2 * sigma * tl)
    l_term = float(np.sum(xw * np.where(tl <= grid.T, l_int, 0.0)) * math.sqrt(2.0))

    tT = np.full_like(xg, grid.T)
    h_int = (
        np.asarray(w.eval(Xl, tT, (0,)), float) ** 2
        + np.asarray(w.eval(Xl, tT, (1,)), float) ** 2
        + sigma**2 * np.asarray(w.eval(Xl, tT), float) ** 2
    ) * math.exp(2 * sigma * grid.T)
    h_term = float(np.sum(xw * np.where(z <= grid.T - tau, h_int, 0.0)))
    return {
        "lhs": sigma * (q_energy + l_term),
        "rhs": q_source + sigma * h_term,
        "l_term": l_term,
        "q_energy": q_energy,
    }


@pytest.fixture(scope="module")
def carleman_medium():
    return medium(
        1,
        T,
        bump("a", 0.1, 0.9, amp=0.1),
        bump("b1", -0.2, 1.1, amp=0.1),
        bump("c", 0.2, 1.0, amp=0.2),
    )


def test_carleman_matches_fine_quadrature(grid1, carleman_medium):
    # test function straddling the characteristic face so every one of
    # the four integrals is active.
    w = Bump(1, (0.2,), 0.9, 0.4, 0.6, 1.0)
    tau = 0.3
    rep = carleman_check(w, carleman_medium, OM, tau, [4.0, 8.0], grid1)
    for k, sigma in enumerate(rep.sigmas):
        brute = _brute_wedge(w, carleman_medium, OM, tau, sigma, grid1)
        assert rep.lhs[k] == pytest.approx(brute["lhs"], rel=1e-6)
        assert rep.rhs[k] == pytest.approx(brute["rhs"], rel=1e-6)
        # the characteristic-face energy is strictly positive and is
        # genuinely included in the reported lhs
        assert brute["l_term"] > 0
        assert sigma * brute["q_energy"] < rep.lhs[k]


def test_carleman_single_constant_zero_and_full(grid1, carleman_medium):
    w = Bump(1, (0.25,), 1.2, 0.25, 0.4, 1.0)  # interior of the tau=0 wedge
    sigmas = [4.0, 8.0, 16.0, 32.0, 64.0]
    for med in (medium(1, T), carleman_medium):
        rep = carleman_check(w, med, OM, 0.0, sigmas, grid1)
        assert rep.single_constant
        assert all(math.isfinite(r) and r > 0 for r in rep.ratios)
        assert rep.constant == max(rep.ratios)
        assert rep.monotone_tail and rep.sigma0 in sigmas


def test_carleman_contract_errors(grid1, grid2, carleman_medium):
    w = Bump(1, (0.25,), 1.2, 0.25, 0.4, 1.0)
    with pytest.raises(FunctionalError, match="line"):
        carleman_check(Bump(2, (0.0, 0.0), 1.0, 0.3, 0.3, 1.0), medium(2, 1.5), OM, 0.0, [4.0], grid2)
    with pytest.raises(FunctionalError, match="increasing"):
        carleman_check(w, carleman_medium, OM, 0.0, [8.0, 4.0], grid1)
    with pytest.raises(FunctionalError, match="increasing"):
        carleman_check(w, carleman_medium, OM, 0.0, [-1.0, 4.0], grid1)
    with pytest.raises(FunctionalError, match="vanishes"):
        carleman_check(ZeroField(1), carleman_medium, OM, 0.0, [4.0], grid1)


def test_carleman_report_round_trips(grid1, carleman_medium, tmp_path):
    w = Bump(1, (0.25,), 1.2, 0.25, 0.4, 1.0)
    rep = carleman_check(w, carleman_medium, OM, 0.0, [4.0, 8.0, 16.0], grid1)
    csv_path = tmp_path / "sweep.csv"
    rep.save_csv(csv_path)
    rows = list(csv.DictReader(csv_path.open()))
    assert [float(r["sigma"]) for r in rows] == rep.sigmas
    for row, lhs, rhs, ratio in zip(rows, rep.lhs, rep.rhs, rep.ratios):
        assert float(row["lhs"]) == pytest.approx(lhs, rel=1e-15)
        assert float(row["rhs"]) == pytest.approx(rhs, rel=1e-15)
        assert float(row["lhs_over_rhs"]) == pytest.approx(ratio, rel=1e-15)
    rep.save_json(tmp_path / "sweep.json")
    blob = json.loads((tmp_path / "sweep.json").read_text())
    assert blob["constant"] == rep.constant
    assert blob["single_constant"] is True
    assert blob["omega"] == "+e1" and blob["tau"] == 0.0
