"""Plane-wave probing: the characteristic solves for u and v, and the data map.

A probe H(t - tau - x.omega) entering the medium stays a jump wave
U = u H(t - tau - x.omega), with the smooth remainder u solving the
characteristic problem L u = 0 behind the front, u = alpha on the front
face L, u = 1 in the far past.  The delta probe gives
V = alpha delta + v H, where v picks up its front values from the
transport equation  v_t + omega.grad v - (a + omega.b) v = -L(alpha)/2
along L and then also solves L v = 0 behind it.

Two solver paths:

* n = 1: exact characteristic (Goursat) march.  In r = t - tau - x.omega,
  s = t + x.omega the operator is 4 d_r d_s - 2A d_r - 2B d_s + q with
  A = a + omega.b and B = a - omega.b, and a box scheme on the (r, s)
  lattice (step dt) is second order with no front smearing at all:
  the jump lives exactly on the lattice line r = 0.

* n = 2 (and 1D for cross-checks): the jump is mollified into a C^3 ramp
  of width eps = 4h, the full-grid leapfrog marches the smooth problem,
  and the remainder is read off at depth r >= 2 eps behind the ramp.

Blocks (omega, tau) whose wedge cannot see the coefficient support are
never solved: their traces are synthesized as exact background (u = 1,
v = 0 to the last bit), which is also what the scheme itself produces
point-by-point in the Goursat path wherever the dependency cone misses
the support.

Final-time traces are sampled on grid nodes of the face H: values, one
sided second-order time stencils for w_t and w_tt, and centered tangential
derivatives.  A sliver of width 3 dt (plus 2 eps on the mollified path)
next to the wedge corner is excluded, since there the time stencils would
reach across the characteristic face; background rows carry the full face.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import Direction, GridError, SpaceTimeGrid
from .media import CoefficientSet, compute_q, drift_along, l_on_alpha, log_alpha_field

log = logging.getLogger("wavetomo.forward")

# how far (in units of dt) the far-past characteristic sits below s = -1,
# the earliest characteristic level that can touch the coefficient support
_S_PAD = 0.5

# corner exclusion in time steps: w_tt needs four levels T, T-dt, ..., T-3dt
# inside the wedge
_CORNER_STEPS = 3

# fixed Gauss-Legendre panel count for the ray integrals behind alpha.  The
# integrands are analytic with features no finer than the bump radii, so a
# fixed fine subdivision is both cheaper and bit-reproducible compared to
# the adaptive doubling loop (which re-evaluates every refinement stage).
_RAY_PANELS = 32

FLOAT_FMT = "%.17e"


class SolverError(RuntimeError):
    """Numerical failure (CFL violation, corner mismatch, empty march)."""


def trace_columns(n: int) -> list[str]:
    """Canonical trace column order; x coordinates come separately."""
    ax = [f"x{i + 1}" for i in range(n)]
    cols = ["u"]
    cols += [f"u_{a}" for a in ax]
    cols += [f"u_{ax[i]}{ax[j]}" for i in range(n) for j in range(i, n)]
    cols += ["u_t"] + [f"u_t{a}" for a in ax] + ["u_tt"]
    cols += ["v"] + [f"v_{a}" for a in ax] + ["v_t"]
    return cols


def _grad_list(arr: np.ndarray, h: float, n: int) -> list[np.ndarray]:
    """Per-axis centered differences of an n-dimensional sample array."""
    g = np.gradient(arr, h, edge_order=2)
    return [g] if n == 1 else list(g)


# second-order one-sided stencils at the newest level, step dt
def _backward_dt(levels: list[np.ndarray], dt: float) -> np.ndarray:
    """w_t(T) from w(T), w(T-dt), w(T-2dt)."""
    return (3.0 * levels[0] - 4.0 * levels[1] + levels[2]) / (2.0 * dt)


def _backward_dtt(levels: list[np.ndarray], dt: float) -> np.ndarray:
    """w_tt(T) from four levels."""
    return (2.0 * levels[0] - 5.0 * levels[1] + 4.0 * levels[2] - levels[3]) / dt**2


@dataclass
class TraceSet:
    """Final-time data of one (omega, tau) block, sampled on grid nodes of H.

    window holds the inclusive grid-index box (per spatial axis) the arrays
    cover; columns are flat C-order over that box.
    """

    omega: str
    tau: float
    tau_index: int
    n: int
    background: bool
    window: tuple[tuple[int, int], ...]
    x: np.ndarray  # (npts, n)
    columns: dict[str, np.ndarray]

    @property
    def n_points(self) -> int:
        return self.x.shape[0]

    @property
    def window_shape(self) -> tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in self.window)

    def column_grid(self, name: str) -> np.ndarray:
        return self.columns[name].reshape(self.window_shape)

    def intersect_window(self, other: "TraceSet") -> tuple[tuple[int, int], ...]:
        return tuple(
            (max(a[0], b[0]), min(a[1], b[1]))
            for a, b in zip(self.window, other.window)
        )

    def restricted(self, window) -> "TraceSet":
        """View of the block on a sub-window (used when pairing blocks)."""
        if tuple(window) == self.window:
            return self
        sel = tuple(
            slice(lo - wlo, hi - wlo + 1)
            for (lo, hi), (wlo, _) in zip(window, self.window)
        )
        for lo, hi in window:
            if hi < lo:
                raise ValueError("empty window intersection")
        shape = self.window_shape
        cols = {
            k: v.reshape(shape)[sel].ravel() for k, v in self.columns.items()
        }
        xg = self.x.reshape(shape + (self.n,))[sel + (slice(None),)]
        return TraceSet(
            omega=self.omega, tau=self.tau, tau_index=self.tau_index, n=self.n,
            background=self.background, window=tuple(window),
            x=xg.reshape(-1, self.n), columns=cols,
        )

    def save_csv(self, path: Path) -> None:
        names = [f"x{i + 1}" for i in range(self.n)] + trace_columns(self.n)
        data = np.column_stack([self.x] + [self.columns[c] for c in trace_columns(self.n)])
        header = ",".join(names)
        meta = json.dumps(
            {
                "omega": self.omega, "tau": self.tau, "tau_index": self.tau_index,
                "background": self.background, "window": list(map(list, self.window)),
            },
            sort_keys=True,
        )
        with open(path, "w") as f:
            f.write(f"# {meta}\n")
            np.savetxt(f, data, fmt=FLOAT_FMT, delimiter=",", header=header, comments="")

    @classmethod
    def load_csv(cls, path: Path, n: int) -> "TraceSet":
        with open(path) as f:
            meta = json.loads(f.readline().lstrip("# ").strip())
            names = f.readline().strip().split(",")
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        if data.size == 0:
            data = np.zeros((0, len(names)))
        cols = {name: data[:, i].copy() for i, name in enumerate(names)}
        x = np.column_stack([cols.pop(f"x{i + 1}") for i in range(n)])
        return cls(
            omega=meta["omega"], tau=float(meta["tau"]), tau_index=int(meta["tau_index"]),
            n=n, background=bool(meta["background"]),
            window=tuple(tuple(w) for w in meta["window"]),
            x=x, columns=cols,
        )


# ---------------------------------------------------------------------------
# background handling


def interacts(coeffs: CoefficientSet, omega: Direction, tau: float, T: float) -> bool:
    """Whether the wedge (omega, tau) can see the coefficient support.

    The wedge is {x.omega - t <= -tau, t <= T}; the front amplitude and the
    remainders are exactly trivial when the support box misses it.
    """
    box = coeffs.support
    if box.is_empty or box.t_lo > T:
        return False
    xi1 = box.x_lo[omega.axis] if omega.sign > 0 else -box.x_hi[omega.axis]
    return xi1 - min(box.t_hi, T) <= -tau


def _h_window(grid: SpaceTimeGrid, omega: Direction, tau: float, trim: float) -> tuple | None:
    """Grid-index box of the H face, with `trim` shaved off at the corner side.

    Returns None when no grid column lies on H.
    """
    z_hi = grid.T - tau - trim  # keep x.omega <= z_hi
    ax = omega.axis
    n1 = grid.nx - 1
    lo, hi = 0, n1
    if omega.sign > 0:
        hi = math.floor((z_hi - grid.x_min) / grid.h + 1e-9)
        hi = min(hi, n1)
    else:
        lo = math.ceil((-z_hi - grid.x_min) / grid.h - 1e-9)
        lo = max(lo, 0)
    if hi < lo:
        return None
    win = [(lo, hi) if i == ax else (0, n1) for i in range(grid.n)]
    return tuple(win)


def _window_x(grid: SpaceTimeGrid, window) -> np.ndarray:
    axes = [grid.x_axis[lo: hi + 1] for lo, hi in window]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def background_traces(
    grid: SpaceTimeGrid, omega: Direction, tau: float, tau_index: int
) -> TraceSet:
    """The exact response of the empty medium: u = 1, v = 0, full H face."""
    window = _h_window(grid, omega, tau, trim=0.0)
    if window is None:
        window = tuple((0, -1) for _ in range(grid.n))
        x = np.zeros((0, grid.n))
        cols = {c: np.zeros(0) for c in trace_columns(grid.n)}
    else:
        x = _window_x(grid, window)
        npts = x.shape[0]
        cols = {c: np.zeros(npts) for c in trace_columns(grid.n)}
        cols["u"] = np.ones(npts)
    return TraceSet(
        omega=omega.label, tau=tau, tau_index=tau_index, n=grid.n,
        background=True, window=window, x=x, columns=cols,
    )


# ---------------------------------------------------------------------------
# the 1D characteristic (Goursat) path


@dataclass
class GoursatSolution:
    """u or v on the characteristic lattice r_i = i dt, s_j = s_min + j dt."""

    kind: str  # "u" | "v"
    omega: Direction
    tau: float
    grid: SpaceTimeGrid
    s_min: float
    m: int                       # lattice has (m+1)^2 nodes; i + j = m is t = T
    lattice: np.ndarray          # (m+1, m+1)
    l_row: np.ndarray            # data on the front face r = 0
    residual: float              # rms of the discrete L w on interior nodes
    scheme: str = "goursat-box"

    def node_zt(self, i, j):
        delta = self.grid.dt
        s = self.s_min + np.asarray(j) * delta
        r = np.asarray(i) * delta
        z = (s - r - self.tau) / 2.0
        t = (r + s + self.tau) / 2.0
        return z, t

    def level(self, m_back: int) -> np.ndarray:
        """Values on t = T - m_back dt, indexed by j; physical z = z0 + (j + m_back) dt."""
        k = self.m - 2 * m_back
        if k < 0:
            raise SolverError("wedge too small for the requested level")
        j = np.arange(k + 1)
        return self.lattice[k - j, j]

    @property
    def z0(self) -> float:
        return self.s_min - self.grid.T


@njit(cache=True, nogil=True)
def _box_march(w, dA, dB, q4):
    m = dA.shape[0]
    for i in range(m):
        for j in range(m):
            w00 = w[i, j]
            w10 = w[i + 1, j]
            w01 = w[i, j + 1]
            den = 4.0 - dA[i, j] - dB[i, j] + q4[i, j]
            num = (
                4.0 * (w10 + w01 - w00)
                + dA[i, j] * (w10 - w01 - w00)
                + dB[i, j] * (w01 - w10 - w00)
                - q4[i, j] * (w00 + w01 + w10)
            )
            w[i + 1, j + 1] = num / den


def _lattice_setup(tau, grid):
    delta = grid.dt
    jpad = math.ceil((1.0 + _S_PAD) / delta - 1e-9)
    s_min = -jpad * delta
    m = round((2.0 * grid.T - tau - s_min) / delta)
    if abs(m * delta - (2.0 * grid.T - tau - s_min)) > 1e-9 * max(1.0, grid.T):
        raise SolverError("tau is not aligned with the time lattice")
    if m < 2 * _CORNER_STEPS + 2:
        raise SolverError("wedge too thin for the characteristic march")
    return s_min, m


def _cell_coefficients(coeffs, omega, tau, grid, s_min, m):
    delta = grid.dt
    i = np.arange(m) + 0.5
    j = np.arange(m) + 0.5
    r_c = i[:, None] * delta
    s_c = s_min + j[None, :] * delta
    z = (s_c - r_c - tau) / 2.0
    t = (r_c + s_c + tau) / 2.0
    x = (omega.sign * z)[..., None]
    A = drift_along(coeffs, omega)(x, t)
    B = drift_along(coeffs, omega.opposite())(x, t)
    q = compute_q(coeffs)(x, t)
    return delta * A, delta * B, (delta * delta / 4.0) * q


def _l_face_points(omega, tau, s_min, n_half, delta):
    """Physical (x, t) of the half-step lattice along the front face r = 0."""
    s = s_min + 0.5 * delta * np.arange(n_half)
    z = (s - tau) / 2.0
    t = (s + tau) / 2.0
    return (omega.sign * z)[:, None], t


def _goursat_residual(sol_lattice, dA, dB, q4, delta):
    """Rms of the discrete operator on interior nodes with t <= T.

    Centered stencils; node coefficients are averages of the four adjacent
    cell values, which agree with point values to second order.
    """
    w = sol_lattice
    m = w.shape[0] - 1
    drds = (w[2:, 2:] - w[2:, :-2] - w[:-2, 2:] + w[:-2, :-2]) / (4.0 * delta**2)
    dr = (w[2:, 1:-1] - w[:-2, 1:-1]) / (2.0 * delta)
    ds = (w[1:-1, 2:] - w[1:-1, :-2]) / (2.0 * delta)
    A_n = 0.25 * (dA[1:, 1:] + dA[1:, :-1] + dA[:-1, 1:] + dA[:-1, :-1]) / delta
    B_n = 0.25 * (dB[1:, 1:] + dB[1:, :-1] + dB[:-1, 1:] + dB[:-1, :-1]) / delta
    q_n = 0.25 * (q4[1:, 1:] + q4[1:, :-1] + q4[:-1, 1:] + q4[:-1, :-1]) * 4.0 / delta**2
    res = 4.0 * drds - 2.0 * A_n * dr - 2.0 * B_n * ds + q_n * w[1:-1, 1:-1]
    ii, jj = np.meshgrid(np.arange(1, m), np.arange(1, m), indexing="ij")
    in_slab = ii + jj <= m
    return float(np.sqrt(np.mean(res[in_slab] ** 2)))


def solve_u_goursat(
    coeffs: CoefficientSet, omega: Direction, tau: float, grid: SpaceTimeGrid,
    _setup=None,
) -> GoursatSolution:
    if grid.n != 1:
        raise SolverError("the characteristic march is one-dimensional")
    if _setup is None:
        s_min, m = _lattice_setup(tau, grid)
        cells = _cell_coefficients(coeffs, omega, tau, grid, s_min, m)
    else:
        s_min, m, cells = _setup
    delta = grid.dt
    dA, dB, q4 = cells

    xl, tl = _l_face_points(omega, tau, s_min, 2 * m + 1, delta)
    I = log_alpha_field(coeffs, omega, n_panels=_RAY_PANELS)
    alpha_l = np.exp(I.eval(xl[::2], tl[::2]))
    if abs(alpha_l[0] - 1.0) > 1e-9:
        raise SolverError(
            f"front face enters the support: |alpha - 1| = {abs(alpha_l[0] - 1.0):.2e} "
            "at the far-past corner"
        )

    w = np.empty((m + 1, m + 1))
    w[0, :] = alpha_l
    w[:, 0] = 1.0
    _box_march(w, dA, dB, q4)
    residual = _goursat_residual(w, dA, dB, q4, delta)
    return GoursatSolution(
        kind="u", omega=omega, tau=tau, grid=grid, s_min=s_min, m=m,
        lattice=w, l_row=alpha_l, residual=residual,
    )


def _transport_rk4(g_half: np.ndarray, f_half: np.ndarray, step: float) -> np.ndarray:
    """March dv/ds = g v + f from v = 0 on the half-step sample arrays."""
    m = (len(g_half) - 1) // 2
    v = np.zeros(m + 1)
    h = step
    for j in range(m):
        vj = v[j]
        g0, gm, g1 = g_half[2 * j], g_half[2 * j + 1], g_half[2 * j + 2]
        f0, fm, f1 = f_half[2 * j], f_half[2 * j + 1], f_half[2 * j + 2]
        k1 = g0 * vj + f0
        k2 = gm * (vj + 0.5 * h * k1) + fm
        k3 = gm * (vj + 0.5 * h * k2) + fm
        k4 = g1 * (vj + h * k3) + f1
        v[j + 1] = vj + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return v


def solve_v_goursat(
    coeffs: CoefficientSet, omega: Direction, tau: float, grid: SpaceTimeGrid,
    _setup=None,
) -> GoursatSolution:
    if grid.n != 1:
        raise SolverError("the characteristic march is one-dimensional")
    if _setup is None:
        s_min, m = _lattice_setup(tau, grid)
        cells = _cell_coefficients(coeffs, omega, tau, grid, s_min, m)
    else:
        s_min, m, cells = _setup
    delta = grid.dt
    dA, dB, q4 = cells

    # front-face data: RK4 along the ray direction (omega, 1); one lattice
    # step along the face advances the ray parameter by dt / 2
    xl, tl = _l_face_points(omega, tau, s_min, 2 * m + 1, delta)
    g_half = drift_along(coeffs, omega)(xl, tl)
    f_half = -0.5 * l_on_alpha(coeffs, omega, xl, tl, n_panels=_RAY_PANELS)
    v_l = _transport_rk4(g_half, f_half, 0.5 * delta)

    w = np.empty((m + 1, m + 1))
    w[0, :] = v_l
    w[:, 0] = 0.0
    _box_march(w, dA, dB, q4)
    residual = _goursat_residual(w, dA, dB, q4, delta)
    return GoursatSolution(
        kind="v", omega=omega, tau=tau, grid=grid, s_min=s_min, m=m,
        lattice=w, l_row=v_l, residual=residual,
    )


def _goursat_trace_levels(sol: GoursatSolution) -> tuple[np.ndarray, list[np.ndarray]]:
    """Absolute z-lattice indices p and the four level arrays aligned to them.

    Level m_back covers p = m_back .. m - m_back at z = z0 + p dt; the
    common aligned range is p in [3, m - 3].
    """
    m = sol.m
    p = np.arange(_CORNER_STEPS, m - _CORNER_STEPS + 1)
    levels = []
    for mb in range(_CORNER_STEPS + 1):
        lev = sol.level(mb)  # index j, z = z0 + (j + mb) dt
        levels.append(lev[p - mb])
    return p, levels


def extract_traces_goursat(
    u_sol: GoursatSolution, v_sol: GoursatSolution, tau_index: int
) -> TraceSet:
    grid = u_sol.grid
    omega = u_sol.omega
    tau = u_sol.tau
    delta = grid.dt
    k = round(grid.h / delta)

    window = _h_window(grid, omega, tau, trim=_CORNER_STEPS * delta)
    if window is None:
        return background_traces(grid, omega, tau, tau_index)
    (lo, hi), = window
    x = _window_x(grid, window)
    npts = x.shape[0]

    cols = {c: np.zeros(npts) for c in trace_columns(1)}
    cols["u"] = np.ones(npts)

    p_all, u_levels = _goursat_trace_levels(u_sol)
    _, v_levels = _goursat_trace_levels(v_sol)

    # grid nodes sit at z = x.omega on multiples of h = k dt; the lattice
    # z-index is p with z = z0 + p dt
    z0i = round(u_sol.z0 / delta)
    z_grid = omega.sign * x[:, 0]
    p_grid = np.round((z_grid - u_sol.z0) / delta).astype(int)
    on_lattice = (p_grid >= p_all[0]) & (p_grid <= p_all[-1])
    pg = p_grid[on_lattice]
    if pg.size:
        assert np.all((z0i + pg) % k == 0), "grid nodes must land on the lattice"
        assert np.max(np.abs(u_sol.z0 + pg * delta - z_grid[on_lattice])) < 1e-9
        idx = pg - p_all[0]
        ug = [lev[idx] for lev in u_levels]
        vg = [lev[idx] for lev in v_levels]
        cols["u"][on_lattice] = ug[0]
        cols["u_t"][on_lattice] = _backward_dt(ug, delta)
        cols["u_tt"][on_lattice] = _backward_dtt(ug, delta)
        cols["v"][on_lattice] = vg[0]
        cols["v_t"][on_lattice] = _backward_dt(vg, delta)

    for base, deriv in (("u", "u_x1"), ("u_t", "u_tx1"), ("v", "v_x1")):
        cols[deriv] = np.gradient(cols[base], grid.h, edge_order=2)
    cols["u_x1x1"] = np.gradient(cols["u_x1"], grid.h, edge_order=2)

    return TraceSet(
        omega=omega.label, tau=tau, tau_index=tau_index, n=1,
        background=False, window=window, x=x, columns=cols,
    )


# ---------------------------------------------------------------------------
# the mollified full-grid path


def _ramp(xi: np.ndarray, eps: float) -> np.ndarray:
    """C^3 ramp: 0 below -eps/2, 1 above +eps/2, septic smoothstep between."""
    y = np.clip((np.asarray(xi, dtype=float) + 0.5 * eps) / eps, 0.0, 1.0)
    y4 = y * y * y * y
    return y4 * (35.0 - 84.0 * y + 70.0 * y * y - 20.0 * y * y * y)


def _ramp_deriv(xi: np.ndarray, eps: float) -> np.ndarray:
    y = np.clip((np.asarray(xi, dtype=float) + 0.5 * eps) / eps, 0.0, 1.0)
    y3 = y * y * y
    return y3 * (140.0 - 420.0 * y + 420.0 * y * y - 140.0 * y3) / eps


@dataclass
class LeapfrogSolution:
    """Mollified solve; keeps the last four time levels for trace stencils."""

    kind: str
    omega: Direction
    tau: float
    grid: SpaceTimeGrid
    eps: float
    levels: np.ndarray  # (4,) + spatial shape; levels[k] is t = T - k dt
    residual: float
    periodic: bool
    scheme: str = "mollified-leapfrog"


def _incident_profile(kind: str, z: np.ndarray, t: float, tau: float, eps: float):
    xi = t - tau - z
    if kind == "u":
        return _ramp(xi, eps)
    return _ramp_deriv(xi, eps)


def solve_leapfrog(
    coeffs: CoefficientSet,
    omega: Direction,
    tau: float,
    grid: SpaceTimeGrid,
    kind: str,
    *,
    eps_factor: float = 4.0,
    periodic_transverse: bool = False,
) -> LeapfrogSolution:
    if kind not in ("u", "v"):
        raise ValueError("kind must be 'u' or 'v'")
    n, h, dt = grid.n, grid.h, grid.dt
    if dt > 0.9 * h / math.sqrt(n) + 1e-12:
        raise SolverError("time step violates the CFL bound")
    eps = eps_factor * h
    pts = grid.points()
    z = omega.dot_x(grid)
    shape = grid.spatial_shape
    a_f, b_f, q_f = coeffs.a, coeffs.b, compute_q(coeffs)

    periodic_axes = set()
    if periodic_transverse:
        periodic_axes = {ax for ax in range(n) if ax != omega.axis}

    def held(arr, t):
        """Overwrite the non-periodic boundary ring with the exact incident wave."""
        inc = None
        for ax in range(n):
            if ax in periodic_axes:
                continue
            if inc is None:
                inc = _incident_profile(kind, z, t, tau, eps)
            for side in (0, -1):
                sl = tuple(side if a == ax else slice(None) for a in range(n))
                arr[sl] = inc[sl]
        return arr

    def grad_dot_b(arr, t):
        out = np.zeros(shape)
        any_b = False
        for ax in range(n):
            bf = b_f[ax]
            if bf.support.is_empty:
                continue
            any_b = True
            up = np.roll(arr, -1, axis=ax)
            dn = np.roll(arr, 1, axis=ax)
            out += bf(pts, t) * ((up - dn) / (2.0 * h))
        return out if any_b else None

    def lap(arr):
        out = np.zeros(shape)
        for ax in range(n):
            out += np.roll(arr, -1, axis=ax) + np.roll(arr, 1, axis=ax) - 2.0 * arr
        return out / (h * h)

    nt = grid.nt
    if nt < 5:
        raise SolverError("need at least four time levels above t = 0 for trace stencils")
    prev = held(np.array(_incident_profile(kind, z, -dt, tau, eps)), -dt)
    cur = held(np.array(_incident_profile(kind, z, 0.0, tau, eps)), 0.0)
    keep = {}
    t = 0.0
    for step in range(1, nt):
        av = a_f(pts, t)
        rhs = lap(cur) - q_f(pts, t) * cur
        gb = grad_dot_b(cur, t)
        if gb is not None:
            rhs -= 2.0 * gb
        adt = av * dt
        nxt = (2.0 * cur - prev - adt * prev + dt * dt * rhs) / (1.0 - adt)
        t += dt
        held(nxt, t)
        prev, cur = cur, nxt
        back = (nt - 1) - step
        if back <= 3:
            keep[back] = cur
    levels = np.stack([keep[kk] for kk in range(4)])  # levels[k] is t = T - k dt

    # interior residual with fourth-order space stencils, so it does not
    # simply restate the update rule the march satisfies by construction
    def lap4(arr):
        out = np.zeros(shape)
        for ax in range(n):
            p1, m1 = np.roll(arr, -1, axis=ax), np.roll(arr, 1, axis=ax)
            p2, m2 = np.roll(arr, -2, axis=ax), np.roll(arr, 2, axis=ax)
            out += (-p2 + 16.0 * p1 - 30.0 * arr + 16.0 * m1 - m2) / 12.0
        return out / (h * h)

    def grad_dot_b4(arr, tt):
        out = np.zeros(shape)
        any_b = False
        for ax in range(n):
            bf = b_f[ax]
            if bf.support.is_empty:
                continue
            any_b = True
            p1, m1 = np.roll(arr, -1, axis=ax), np.roll(arr, 1, axis=ax)
            p2, m2 = np.roll(arr, -2, axis=ax), np.roll(arr, 2, axis=ax)
            out += bf(pts, tt) * ((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
        return out if any_b else None

    res = 0.0
    cnt = 0
    for kk in (1, 2):
        tt = grid.T - kk * dt
        utt = (levels[kk - 1] - 2.0 * levels[kk] + levels[kk + 1]) / dt**2
        rhs = lap4(levels[kk]) - q_f(pts, tt) * levels[kk]
        gb = grad_dot_b4(levels[kk], tt)
        if gb is not None:
            rhs -= 2.0 * gb
        ut = (levels[kk - 1] - levels[kk + 1]) / (2.0 * dt)
        r = utt - rhs - 2.0 * a_f(pts, tt) * ut
        inner = tuple(slice(2, -2) for _ in range(n))
        res += float(np.mean(r[inner] ** 2))
        cnt += 1
    residual = math.sqrt(res / cnt)

    return LeapfrogSolution(
        kind=kind, omega=omega, tau=tau, grid=grid, eps=eps,
        levels=levels, residual=residual, periodic=periodic_transverse,
    )


def extract_traces_leapfrog(
    u_sol: LeapfrogSolution, v_sol: LeapfrogSolution, tau_index: int
) -> TraceSet:
    grid = u_sol.grid
    omega, tau = u_sol.omega, u_sol.tau
    dt, h, n = grid.dt, grid.h, grid.n
    trim = 2.0 * u_sol.eps + _CORNER_STEPS * dt
    window = _h_window(grid, omega, tau, trim=trim)
    if window is None:
        return background_traces(grid, omega, tau, tau_index)
    x = _window_x(grid, window)
    sel = tuple(slice(lo, hi + 1) for lo, hi in window)
    shape = tuple(hi - lo + 1 for lo, hi in window)

    # behind the ramp the mollified wave is the remainder itself: u = U, v = V
    ug = [u_sol.levels[kk][sel] for kk in range(4)]
    vg = [v_sol.levels[kk][sel] for kk in range(4)]

    cols: dict[str, np.ndarray] = {}
    cols["u"] = ug[0]
    cols["u_t"] = _backward_dt(ug, dt)
    cols["u_tt"] = _backward_dtt(ug, dt)
    cols["v"] = vg[0]
    cols["v_t"] = _backward_dt(vg, dt)

    ax_names = [f"x{i + 1}" for i in range(n)]
    for base, stem in (("u", "u_"), ("u_t", "u_t"), ("v", "v_")):
        for i, gi in enumerate(_grad_list(cols[base], h, n)):
            cols[f"{stem}{ax_names[i]}"] = gi
    for i in range(n):
        gi = _grad_list(cols[f"u_{ax_names[i]}"], h, n)
        for j in range(i, n):
            cols[f"u_{ax_names[i]}{ax_names[j]}"] = gi[j]

    flat = {k: np.asarray(v).ravel() for k, v in cols.items()}
    return TraceSet(
        omega=omega.label, tau=tau, tau_index=tau_index, n=n,
        background=False, window=window, x=x, columns=flat,
    )


# ---------------------------------------------------------------------------
# block solve + dataset


def solve_u(coeffs, omega, tau, grid, method=None, **kw):
    method = method or ("goursat" if grid.n == 1 else "leapfrog")
    if method == "goursat":
        return solve_u_goursat(coeffs, omega, tau, grid)
    return solve_leapfrog(coeffs, omega, tau, grid, "u", **kw)

def solve_v(coeffs, omega, tau, grid, method=None, **kw):
    method = method or ("goursat" if grid.n == 1 else "leapfrog")
    if method == "goursat":
        return solve_v_goursat(coeffs, omega, tau, grid)
    return solve_leapfrog(coeffs, omega, tau, grid, "v", **kw)


def extract_traces(u_sol, v_sol, tau_index: int = 0) -> TraceSet:
    if u_sol.kind != "u" or v_sol.kind != "v":
        raise ValueError("pass the u solution first, the v solution second")
    if isinstance(u_sol, GoursatSolution):
        return extract_traces_goursat(u_sol, v_sol, tau_index)
    return extract_traces_leapfrog(u_sol, v_sol, tau_index)


def solve_block(
    coeffs: CoefficientSet,
    omega: Direction,
    tau: float,
    tau_index: int,
    grid: SpaceTimeGrid,
    method: str | None = None,
    **kw,
) -> TraceSet:
    if not interacts(coeffs, omega, tau, grid.T):
        return background_traces(grid, omega, tau, tau_index)
    method = method or ("goursat" if grid.n == 1 else "leapfrog")
    if method == "goursat":
        # the u and v marches share one lattice and one set of cell coefficients
        s_min, m = _lattice_setup(tau, grid)
        setup = (s_min, m, _cell_coefficients(coeffs, omega, tau, grid, s_min, m))
        us = solve_u_goursat(coeffs, omega, tau, grid, _setup=setup)
        vs = solve_v_goursat(coeffs, omega, tau, grid, _setup=setup)
    else:
        us = solve_u(coeffs, omega, tau, grid, method=method, **kw)
        vs = solve_v(coeffs, omega, tau, grid, method=method, **kw)
    return extract_traces(us, vs, tau_index)


def make_tau_grid(grid: SpaceTimeGrid, dtau: float | None = None,
                  lo: float = -1.0, hi: float | None = None) -> np.ndarray:
    """Lattice-aligned delays covering [lo, hi] (default [-1, T+1]), step 2 dt."""
    if hi is None:
        hi = grid.T + 1.0
    dt = grid.dt
    stride = 2 if dtau is None else round(dtau / dt)
    if stride < 1 or (dtau is not None and abs(stride * dt - dtau) > 1e-9):
        raise GridError("tau step must be a positive multiple of dt")
    j_lo = round(lo / dt)
    j_hi = j_lo + stride * math.ceil((round(hi / dt) - j_lo) / stride)
    return dt * np.arange(j_lo, j_hi + 1, stride)


@dataclass
class PlaneWaveDataset:
    """The probing data: one TraceSet per (direction, delay)."""

    grid: SpaceTimeGrid
    directions: tuple[Direction, ...]
    tau_values: np.ndarray
    blocks: dict[tuple[str, int], TraceSet]
    coeff_hash: str = "unknown"
    meta: dict = field(default_factory=dict)

    def block(self, omega: Direction | str, tau_index: int) -> TraceSet:
        label = omega if isinstance(omega, str) else omega.label
        return self.blocks[(label, tau_index)]

    @property
    def all_background(self) -> bool:
        return all(b.background for b in self.blocks.values())

    def check_compatible(self, other: "PlaneWaveDataset") -> None:
        if self.grid != other.grid:
            raise ValueError("datasets live on different grids")
        if [d.label for d in self.directions] != [d.label for d in other.directions]:
            raise ValueError("datasets probe different direction sets")
        if not np.array_equal(self.tau_values, other.tau_values):
            raise ValueError("datasets use different delay grids")

    def save(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        block_index = []
        for (label, ti) in sorted(self.blocks):
            ts = self.blocks[(label, ti)]
            name = f"trace_{label.replace('+', 'p').replace('-', 'm')}_{ti:04d}.csv"
            ts.save_csv(out / name)
            files.append(out / name)
            block_index.append(
                {"omega": label, "tau_index": ti, "tau": ts.tau,
                 "background": ts.background, "file": name, "points": ts.n_points}
            )
        payload = {
            "grid": self.grid.header(),
            "directions": [d.label for d in self.directions],
            "tau_values": [float(t) for t in self.tau_values],
            "coeff_hash": self.coeff_hash,
            "background": self.all_background,
            "blocks": block_index,
            "meta": self.meta,
        }
        with open(out / "dataset.json", "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        files.append(out / "dataset.json")
        return files

    @classmethod
    def load(cls, in_dir) -> "PlaneWaveDataset":
        src = Path(in_dir)
        with open(src / "dataset.json") as f:
            payload = json.load(f)
        grid = SpaceTimeGrid.from_header(payload["grid"])
        directions = tuple(Direction.from_label(s) for s in payload["directions"])
        blocks = {}
        for entry in payload["blocks"]:
            ts = TraceSet.load_csv(src / entry["file"], grid.n)
            blocks[(entry["omega"], entry["tau_index"])] = ts
        return cls(
            grid=grid, directions=directions,
            tau_values=np.array(payload["tau_values"]),
            blocks=blocks, coeff_hash=payload["coeff_hash"],
            meta=payload.get("meta", {}),
        )


def forward_data(
    coeffs: CoefficientSet,
    directions,
    grid: SpaceTimeGrid,
    tau_values: np.ndarray | None = None,
    *,
    threads: int = 1,
    method: str | None = None,
    **kw,
) -> PlaneWaveDataset:
    """Solve every (omega, tau) block; fan out to a worker pool when asked.

    Results are assembled in sorted key order, so the thread count never
    changes a single bit of the output.
    """
    directions = tuple(directions)
    if tau_values is None:
        tau_values = make_tau_grid(grid)
    jobs = [(d, ti) for d in directions for ti in range(len(tau_values))]

    def run(job):
        d, ti = job
        return (d.label, ti), solve_block(
            coeffs, d, float(tau_values[ti]), ti, grid, method=method, **kw
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    blocks = dict(sorted(results, key=lambda kv: kv[0]))
    n_bg = sum(ts.background for ts in blocks.values())
    log.info("forward data: %d blocks (%d background)", len(blocks), n_bg)
    return PlaneWaveDataset(
        grid=grid, directions=directions, tau_values=np.asarray(tau_values, dtype=float),
        blocks=blocks, coeff_hash=coeffs.spec_hash(),
    )
