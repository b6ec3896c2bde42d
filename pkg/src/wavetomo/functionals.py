"""Two-sided stability functionals and the weighted wedge inequality.

Each stability functional puts a coefficient-difference norm (lhs) next
to the boundary-trace functional that is supposed to dominate it (rhs)
and reports the pair and their ratio.  No constant is claimed; sweeps
over perturbation draws are what make the ratio meaningful.

The rhs quadratures consume the stored trace columns of two datasets,
never re-derived quantities: tangential derivatives on the final-time
face come straight out of the CSV columns, the delay integral is a
trapezoid on the dataset's own delay grid, and a pair of background
blocks contributes exactly zero by construction.

The weighted inequality check is separate: it integrates
e^{2 sigma t}-weighted energies of an analytic test function over the
wedge interior and its two faces.  A fixed space-time grid cannot see
that weight at the stiff end of the sigma sweep (the factor grows by
e^{2 sigma dt} per time step), so the check builds its own
Gauss-Legendre panels with a panel count proportional to sigma.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .fields import Field
from .forward import FLOAT_FMT, PlaneWaveDataset, TraceSet
from .geometry import (
    Direction,
    NormParams,
    RectRegion,
    SpaceTimeGrid,
    slab_region,
    space_region,
    weighted_norm,
)
from .media import CoefficientSet, PsiSolution, compute_q, curl_eta

log = logging.getLogger("wavetomo.functionals")

_TINY_RHS = 1e-14

_L2 = NormParams(order=0, sigma=None)
_H1 = NormParams(order=1, sigma=None)
_H2 = NormParams(order=2, sigma=None)

# trace columns entering the rhs of each estimate, with Sobolev order
_RHS_PARTS = {
    "q": (("v", 1), ("v_t", 0)),
    "ab": (("u", 1), ("u_t", 0)),
    "abc": (("u", 2), ("u_t", 1), ("u_tt", 0), ("v", 1), ("v_t", 0)),
}


class FunctionalError(ValueError):
    pass


def stability_directions(problem: str, n: int) -> list[Direction]:
    """Probing set of the two-sided estimate for `problem` in n dimensions.

    The drift estimate uses the n coordinate directions plus the reversed
    last axis; the potential/curl estimate uses the first n-1 axes plus
    both signs of the last one.  On the line both come out as {+e1, -e1}.
    """
    if problem == "ab":
        return [Direction(n - 1, -1)] + [Direction(i, 1) for i in range(n)]
    if problem == "abc":
        return [Direction(i, 1) for i in range(n)] + [Direction(n - 1, -1)]
    raise FunctionalError(f"no direction set for problem {problem!r}")


# ---------------------------------------------------------------------------
# reports


@dataclass
class StabilityReport:
    """One evaluation of a two-sided estimate.

    ratio is lhs/rhs, or None when the rhs is numerically zero (identical
    data); amplitude tags the perturbation size in sweep tables.
    """

    problem: str
    lhs: float
    rhs: float
    ratio: float | None
    amplitude: float | None
    grid: dict
    detail: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "amplitude": self.amplitude,
            "grid": self.grid,
            "detail": self.detail,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


_STAB_CSV_HEADER = "problem,amplitude,lhs,rhs,ratio,n,h,dt,T"


def write_stability_csv(reports: list[StabilityReport], path) -> None:
    """Flat sweep table, one row per report."""
    lines = [_STAB_CSV_HEADER]
    for r in reports:
        amp = "" if r.amplitude is None else FLOAT_FMT % r.amplitude
        rat = "" if r.ratio is None else FLOAT_FMT % r.ratio
        lines.append(
            ",".join(
                [
                    r.problem,
                    amp,
                    FLOAT_FMT % r.lhs,
                    FLOAT_FMT % r.rhs,
                    rat,
                    str(r.grid["n"]),
                    FLOAT_FMT % r.grid["h"],
                    FLOAT_FMT % r.grid["dt"],
                    FLOAT_FMT % r.grid["T"],
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class CarlemanReport:
    """Weighted-inequality sweep for one test function on one wedge.

    constant is max over the sweep of lhs/rhs; single_constant says that
    maximum is finite, i.e. one C covers the whole sigma list.  sigma0 is
    the first sigma from which rhs/lhs is nondecreasing to the end of the
    sweep (None when even the last step decreases, which is reported, not
    hidden).
    """

    sigmas: list[float]
    lhs: list[float]
    rhs: list[float]
    constant: float
    single_constant: bool
    sigma0: float | None
    monotone_tail: bool
    test_function: str
    omega: str
    tau: float
    grid: dict

    @property
    def ratios(self) -> list[float]:
        return [l / r if r > 0 else math.inf for l, r in zip(self.lhs, self.rhs)]

    def to_dict(self) -> dict:
        return {
            "sigmas": self.sigmas,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "lhs_over_rhs": [r if math.isfinite(r) else None for r in self.ratios],
            "constant": self.constant if math.isfinite(self.constant) else None,
            "single_constant": self.single_constant,
            "sigma0": self.sigma0,
            "monotone_tail": self.monotone_tail,
            "test_function": self.test_function,
            "omega": self.omega,
            "tau": self.tau,
            "grid": self.grid,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def save_csv(self, path) -> None:
        lines = ["sigma,lhs,rhs,lhs_over_rhs"]
        for s, l, r in zip(self.sigmas, self.lhs, self.rhs):
            q = (FLOAT_FMT % (l / r)) if r > 0 else "inf"
            lines.append(f"{FLOAT_FMT % s},{FLOAT_FMT % l},{FLOAT_FMT % r},{q}")
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# trace-difference quadrature


def _h_region(grid: SpaceTimeGrid, window) -> RectRegion:
    axes = tuple(grid.x_axis[lo : hi + 1] for lo, hi in window)
    shape = tuple(hi - lo + 1 for lo, hi in window)
    return RectRegion(
        name="H",
        axes=axes,
        spacings=(grid.h,) * grid.n,
        frame_scales=(1.0,) * grid.n,
        t_values=np.full(shape, grid.T),
    )


def _grad_name(base: str, i: int) -> str:
    sep = "" if base.endswith("t") else "_"
    return f"{base}{sep}x{i + 1}"


def _pair_term(t1: TraceSet, t2: TraceSet, grid: SpaceTimeGrid, parts) -> float | None:
    """Sum of trace-difference norms for one block pair.

    None flags a pair that cannot contribute (both background, or an
    empty window overlap); the caller adds exactly nothing.
    """
    if t1.background and t2.background:
        return None
    win = t1.intersect_window(t2)
    if any(hi < lo for lo, hi in win):
        return None
    r1 = t1.restricted(win)
    r2 = t2.restricted(win)
    reg = _h_region(grid, win)
    shape = reg.shape

    def d(name):
        return (r1.columns[name] - r2.columns[name]).reshape(shape)

    total = 0.0
    for base, order in parts:
        vals = d(base)
        if order == 0:
            total += weighted_norm(vals, reg, _L2)
            continue
        grads = [d(_grad_name(base, i)) for i in range(grid.n)]
        if order == 1:
            total += weighted_norm(vals, reg, _H1, grads=grads)
            continue
        seconds = []
        for i in range(grid.n):
            for j in range(i, grid.n):
                mult = 1.0 if i == j else 2.0
                seconds.append((mult, d(f"{base}_x{i + 1}x{j + 1}")))
        total += weighted_norm(vals, reg, _H2, grads=grads, second_grads=seconds)
    return total


def _tau_weights(tau_values: np.ndarray) -> np.ndarray:
    tv = np.asarray(tau_values, dtype=float)
    if tv.size < 2:
        return np.zeros(tv.size)
    steps = np.diff(tv)
    if not np.allclose(steps, steps[0], rtol=0.0, atol=1e-12):
        raise FunctionalError("delay grid must be uniform for the trapezoid rule")
    w = np.full(tv.size, steps[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _rhs_over_directions(
    ds1: PlaneWaveDataset,
    ds2: PlaneWaveDataset,
    directions: list[Direction],
    parts,
) -> tuple[float, dict]:
    grid = ds1.grid
    have = {d.label for d in ds1.directions}
    missing = [d.label for d in directions if d.label not in have]
    if missing:
        raise FunctionalError(f"datasets are missing probing directions {missing}")
    tw = _tau_weights(ds1.tau_values)
    per_dir = {}
    computed = 0
    background = 0
    for d in directions:
        acc = 0.0
        for ti, wt in enumerate(tw):
            term = _pair_term(ds1.block(d.label, ti), ds2.block(d.label, ti), grid, parts)
            if term is None:
                background += 1
                continue
            computed += 1
            acc += wt * term
        per_dir[d.label] = acc
    detail = {
        "per_direction": per_dir,
        "computed_pairs": computed,
        "background_pairs": background,
    }
    return float(sum(per_dir.values())), detail


# ---------------------------------------------------------------------------
# coefficient-difference norms


def _eval_slab(f: Field, grid: SpaceTimeGrid) -> np.ndarray:
    shape = grid.spatial_shape + (grid.nt,)
    x = np.broadcast_to(grid.points()[..., None, :], shape + (grid.n,))
    t = np.broadcast_to(grid.t_axis, shape)
    return np.asarray(f.eval(x, t), dtype=float)


def _slab_l2(values: np.ndarray, region: RectRegion) -> float:
    return weighted_norm(values, region, _L2)


# ---------------------------------------------------------------------------
# the three functionals


def thm_q_functional(
    q1: Field,
    q2: Field,
    ds1: PlaneWaveDataset,
    ds2: PlaneWaveDataset,
    *,
    amplitude: float | None = None,
) -> StabilityReport:
    """Potential difference against the second-wave trace functional.

    Both media must share the drift pair (a, b); only then do the two
    datasets differ through q alone and the estimate applies.  The
    datasets probe a single common direction.
    """
    ds1.check_compatible(ds2)
    if len(ds1.directions) != 1:
        raise FunctionalError("the q-estimate integrates a single probing direction")
    grid = ds1.grid
    rhs, detail = _rhs_over_directions(ds1, ds2, list(ds1.directions), _RHS_PARTS["q"])
    reg = slab_region(grid)
    lhs = _slab_l2(_eval_slab(q1, grid) - _eval_slab(q2, grid), reg)
    ratio = lhs / rhs if rhs > _TINY_RHS else None
    log.info("q functional: lhs=%.6e rhs=%.6e", lhs, rhs)
    return StabilityReport("q", lhs, rhs, ratio, amplitude, grid.header(), detail)


def thm_ab_functional(
    a1: Field,
    b1: tuple,
    a2: Field,
    b2: tuple,
    ds1: PlaneWaveDataset,
    ds2: PlaneWaveDataset,
    *,
    amplitude: float | None = None,
) -> StabilityReport:
    """Drift difference against leading-wave traces over the probing set.

    Both media must share the potential q; the datasets must contain the
    directions of stability_directions("ab", n).
    """
    ds1.check_compatible(ds2)
    grid = ds1.grid
    dirs = stability_directions("ab", grid.n)
    rhs, detail = _rhs_over_directions(ds1, ds2, dirs, _RHS_PARTS["ab"])
    reg = slab_region(grid)
    parts = [_slab_l2(_eval_slab(a1, grid) - _eval_slab(a2, grid), reg)]
    for f1, f2 in zip(b1, b2):
        parts.append(_slab_l2(_eval_slab(f1, grid) - _eval_slab(f2, grid), reg))
    lhs = float(np.sqrt(sum(p * p for p in parts)))
    detail["lhs_components"] = {"a": parts[0]}
    for i, p in enumerate(parts[1:]):
        detail["lhs_components"][f"b{i + 1}"] = p
    ratio = lhs / rhs if rhs > _TINY_RHS else None
    log.info("ab functional: lhs=%.6e rhs=%.6e", lhs, rhs)
    return StabilityReport("ab", lhs, rhs, ratio, amplitude, grid.header(), detail)


def thm_abc_functional(
    coeffs1: CoefficientSet,
    coeffs2: CoefficientSet,
    ds1: PlaneWaveDataset,
    ds2: PlaneWaveDataset,
    psi1: PsiSolution,
    psi2: PsiSolution,
    *,
    amplitude: float | None = None,
) -> StabilityReport:
    """Gauge-invariant content (c and the curl of the drift one-form)
    against the full trace family plus final-time normalizer traces.

    The rhs takes second tangential derivatives of the leading wave from
    the stored columns, so it needs datasets produced with the richer
    column set intact; the normalizer terms come from the two
    PsiSolution traces on the full spatial grid.
    """
    ds1.check_compatible(ds2)
    grid = ds1.grid
    if psi1.grid != grid or psi2.grid != grid:
        raise FunctionalError("normalizer traces live on a different grid")
    dirs = stability_directions("abc", grid.n)
    rhs_tr, detail = _rhs_over_directions(ds1, ds2, dirs, _RHS_PARTS["abc"])

    sreg = space_region(grid)
    dpsi = psi1.psi - psi2.psi
    dpsi_t = psi1.psi_t - psi2.psi_t
    dpsi_tt = psi1.psi_tt - psi2.psi_tt
    rhs_psi = (
        weighted_norm(dpsi, sreg, _H2)
        + weighted_norm(dpsi_t, sreg, _H1)
        + weighted_norm(dpsi_tt, sreg, _L2)
    )
    rhs = rhs_tr + rhs_psi
    detail["psi_rhs"] = rhs_psi

    reg = slab_region(grid)
    shape = grid.spatial_shape + (grid.nt,)
    x = np.broadcast_to(grid.points()[..., None, :], shape + (grid.n,))
    t = np.broadcast_to(grid.t_axis, shape)
    parts = [_slab_l2(coeffs1.c.eval(x, t) - coeffs2.c.eval(x, t), reg)]
    comp1 = curl_eta(coeffs1).components(x, t)
    comp2 = curl_eta(coeffs2).components(x, t)
    labels = curl_eta(coeffs1).labels
    detail["lhs_components"] = {"c": parts[0]}
    for k, lab in enumerate(labels):
        p = _slab_l2(comp1[k] - comp2[k], reg)
        parts.append(p)
        detail["lhs_components"][lab] = p
    lhs = float(np.sqrt(sum(p * p for p in parts)))
    ratio = lhs / rhs if rhs > _TINY_RHS else None
    log.info("abc functional: lhs=%.6e rhs=%.6e (psi part %.3e)", lhs, rhs, rhs_psi)
    return StabilityReport("abc", lhs, rhs, ratio, amplitude, grid.header(), detail)


# ---------------------------------------------------------------------------
# weighted wedge inequality


_GL_NODES, _GL_WTS = np.polynomial.legendre.leggauss(8)


def _panels(lo: float, hi: float, n_pan: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on [lo, hi]."""
    edges = np.linspace(lo, hi, n_pan + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    x = (mid[:, None] + half * _GL_NODES).ravel()
    w = np.broadcast_to(half * _GL_WTS, (n_pan, _GL_NODES.size)).ravel().copy()
    return x, w


def carleman_check(
    w: Field,
    coeffs: CoefficientSet,
    omega: Direction,
    tau: float,
    sigma_list,
    grid: SpaceTimeGrid,
    *,
    x_panels: int = 24,
    test_id: str | None = None,
) -> CarlemanReport:
    """Evaluate both sides of the weighted wedge inequality for a sweep
    of sigma values and one compactly supported C^3 test function.

    lhs = sigma * int_Q e^{2 sigma t} (|grad w|^2 + sigma^2 w^2)
        + sigma * int_L e^{2 sigma t} (|grad_L w|^2 + sigma^2 w^2)
    rhs = int_Q e^{2 sigma t} |L w|^2
        + sigma * int_H e^{2 sigma t} (|grad w|^2 + sigma^2 w^2)

    with full space-time gradients on Q and H and the tangential one on
    L.  Supported on the line only; the sigma-adapted time panels keep
    the quadrature honest where the weight is stiff.
    """
    if grid.n != 1:
        raise FunctionalError("the weighted inequality check runs on the line only")
    sigmas = [float(s) for s in sigma_list]
    if any(s <= 0 for s in sigmas) or any(
        s2 <= s1 for s1, s2 in zip(sigmas, sigmas[1:])
    ):
        raise FunctionalError("sigma list must be positive and strictly increasing")
    box = w.support
    if box.is_empty:
        raise FunctionalError("test function vanishes identically")
    x_lo, x_hi = float(box.x_lo[0]), float(box.x_hi[0])
    if not (math.isfinite(x_lo) and math.isfinite(x_hi)):
        raise FunctionalError("test function must have bounded spatial support")
    T = grid.T
    t_cap = min(T, float(box.t_hi))

    xg, xw = _panels(x_lo, x_hi, x_panels)
    z = omega.sign * xg
    t_lo = np.maximum(tau + z, float(box.t_lo))
    span = np.maximum(t_cap - t_lo, 0.0)
    span_max = float(span.max()) if span.size else 0.0

    a_f, b_f = coeffs.a, coeffs.b[0]
    q_f = compute_q(coeffs)

    def ev(f, X, Tm, deriv=()):
        return np.asarray(f.eval(X, Tm, deriv), dtype=float)

    lhs_list, rhs_list = [], []
    for sigma in sigmas:
        # wedge interior, per-x time panels mapped from a shared unit rule
        n_pan = max(16, 4 + math.ceil(2.0 * sigma * span_max / 3.0))
        ug, uw = _panels(0.0, 1.0, n_pan)
        tt = t_lo[:, None] + span[:, None] * ug
        tjac = span[:, None] * uw
        X = np.broadcast_to(xg[:, None, None], tt.shape + (1,))
        wv = ev(w, X, tt)
        wx = ev(w, X, tt, (0,))
        wt = ev(w, X, tt, (1,))
        lw = (
            ev(w, X, tt, (1, 1))
            - ev(w, X, tt, (0, 0))
            - 2.0 * ev(a_f, X, tt) * wt
            + 2.0 * ev(b_f, X, tt) * wx
            + ev(q_f, X, tt) * wv
        )
        ew = np.exp(2.0 * sigma * tt)
        q_energy = float(
            np.sum(xw[:, None] * tjac * ew * (wx * wx + wt * wt + sigma**2 * wv * wv))
        )
        q_source = float(np.sum(xw[:, None] * tjac * ew * lw * lw))

        # characteristic face, parameterized by x with measure sqrt(2) dx
        tl = tau + z
        mask = tl <= T
        Xl = xg[:, None]
        wlv = ev(w, Xl, tl)
        wlx = ev(w, Xl, tl, (0,))
        wlt = ev(w, Xl, tl, (1,))
        tang = omega.sign * wlx + wlt
        l_int = (0.5 * tang * tang + sigma**2 * wlv * wlv) * np.exp(2.0 * sigma * tl)
        l_term = float(np.sum(xw * np.where(mask, l_int, 0.0)) * math.sqrt(2.0))

        # flat top
        tT = np.full_like(xg, T)
        maskH = z <= T - tau
        whv = ev(w, Xl, tT)
        whx = ev(w, Xl, tT, (0,))
        wht = ev(w, Xl, tT, (1,))
        h_int = (whx * whx + wht * wht + sigma**2 * whv * whv) * math.exp(2.0 * sigma * T)
        h_term = float(np.sum(xw * np.where(maskH, h_int, 0.0)))

        lhs_list.append(sigma * (q_energy + l_term))
        rhs_list.append(q_source + sigma * h_term)
        log.debug(
            "sigma=%g: lhs=%.6e rhs=%.6e (%d time panels)", sigma, lhs_list[-1], rhs_list[-1], n_pan
        )

    ratios = [l / r if r > 0 else math.inf for l, r in zip(lhs_list, rhs_list)]
    constant = max(ratios)
    single = math.isfinite(constant)

    g = [1.0 / r if math.isfinite(r) and r > 0 else 0.0 for r in ratios]
    ok_from = len(g) - 1
    for k in range(len(g) - 1, 0, -1):
        if g[k] >= g[k - 1] * (1.0 - 1e-12):
            ok_from = k - 1
        else:
            break
    monotone_tail = ok_from < len(g) - 1
    sigma0 = sigmas[ok_from] if monotone_tail else None

    if test_id is None:
        test_id = (
            f"bump[{x_lo:.3g},{x_hi:.3g}]x[{float(box.t_lo):.3g},{float(box.t_hi):.3g}]"
        )
    return CarlemanReport(
        sigmas=sigmas,
        lhs=lhs_list,
        rhs=rhs_list,
        constant=constant,
        single_constant=single,
        sigma0=sigma0,
        monotone_tail=monotone_tail,
        test_function=test_id,
        omega=omega.label,
        tau=float(tau),
        grid=grid.header(),
    )
