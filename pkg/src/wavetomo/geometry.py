"""Space-time grids, characteristic wedges, and weighted norms.

The probing geometry lives on a uniform grid over [x_min, x_max]^n x [0, T].
For a unit direction omega (always +/- a coordinate axis here) and a delay
tau, the wedge

    Q = { (x, t) : tau + x.omega <= t <= T }

is bounded below by the characteristic plane L = {t = tau + x.omega} and
above by the flat top H = {t = T}.  Data is read off on H; the incoming
front carries its amplitude along L.

Norms come in two families.  The Carleman family, for sigma >= 0,

    ||w||_{1,M,sigma}^2 = int_M e^{2 sigma t} (|grad_M w|^2 + sigma^2 |w|^2)
    ||w||_{0,M,sigma}^2 = int_M e^{2 sigma t} |w|^2

and the plain Sobolev norms H^0, H^1, H^2 (unweighted) used by the
stability functionals.  grad_M is the tangential gradient of the manifold
M; on L it is expressed in an orthonormal frame, so the characteristic
direction (omega, 1)/sqrt(2) carries a 1/sqrt(2) scale relative to the
graph parameterization by x.  All quadrature is composite trapezoid on the
grid restricted to the region, with the induced Euclidean measure
(sqrt(2) per unit x-measure on L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# wedge point labels
OUTSIDE = 0
INTERIOR = 1
ON_H = 2
ON_L = 3
CORNER = 4

LABEL_NAMES = {
    OUTSIDE: "outside",
    INTERIOR: "interior",
    ON_H: "on-H",
    ON_L: "on-L",
    CORNER: "corner",
}

_MAX_SAMPLES = 100_000_000


class GridError(ValueError):
    pass


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid on [x_min, x_max]^n x [0, T]."""

    n: int
    x_min: float
    x_max: float
    T: float
    h: float
    dt: float
    nx: int
    nt: int

    @cached_property
    def x_axis(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.nx)

    @cached_property
    def t_axis(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.n

    def spatial_mesh(self) -> list[np.ndarray]:
        """Coordinate arrays X_1, ..., X_n over the spatial grid."""
        if self.n == 1:
            return [self.x_axis]
        return list(np.meshgrid(*(self.x_axis for _ in range(self.n)), indexing="ij"))

    def points(self) -> np.ndarray:
        """Spatial grid points stacked as (..., n)."""
        return np.stack(self.spatial_mesh(), axis=-1)

    def header(self) -> dict:
        return {
            "n": self.n,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "T": self.T,
            "h": self.h,
            "dt": self.dt,
            "nx": self.nx,
            "nt": self.nt,
        }

    @classmethod
    def from_header(cls, d: dict) -> "SpaceTimeGrid":
        return cls(
            n=int(d["n"]),
            x_min=float(d["x_min"]),
            x_max=float(d["x_max"]),
            T=float(d["T"]),
            h=float(d["h"]),
            dt=float(d["dt"]),
            nx=int(d["nx"]),
            nt=int(d["nt"]),
        )


def make_grid(n: int, T: float, h: float, margin: float) -> SpaceTimeGrid:
    """Build a grid whose spatial extent covers the unit ball plus `margin`.

    The margin must be at least T + 2 so that no signal leaving the
    coefficient support (inside the unit ball, switched on during [0, T])
    reaches the spatial boundary before the final time.  The time step is
    the largest h/k, integer k, satisfying the CFL bound dt <= 0.9 h/sqrt(n)
    and dividing T exactly; dt dividing h keeps the characteristic planes
    aligned with lattice diagonals for axis directions.
    """
    if n not in (1, 2):
        raise GridError(f"unsupported dimension n={n}; only n=1 and n=2 are implemented")
    if h <= 0:
        raise GridError("h must be positive")
    if T <= 0:
        raise GridError("T must be positive")
    if margin < T + 2:
        raise GridError(f"margin must be >= T + 2 = {T + 2} (got {margin})")

    k = math.ceil(math.sqrt(n) / 0.9)
    while True:
        dt = h / k
        steps = T / dt
        if abs(steps - round(steps)) < 1e-9:
            break
        k += 1
        if k > 4096:
            raise GridError(
                "no admissible time step: need dt = h/k <= 0.9 h/sqrt(n) with T/dt integral"
            )
    nt = int(round(T / dt)) + 1

    x_lim = h * math.ceil((1.0 + margin) / h - 1e-12)
    nx = int(round(2.0 * x_lim / h)) + 1
    if nx**n * nt > _MAX_SAMPLES:
        raise GridError(
            f"grid of {nx}^{n} x {nt} samples exceeds the {_MAX_SAMPLES:.0e} sample budget; coarsen h"
        )
    return SpaceTimeGrid(n=n, x_min=-x_lim, x_max=x_lim, T=T, h=h, dt=dt, nx=nx, nt=nt)


@dataclass(frozen=True)
class Direction:
    """A signed coordinate direction +/- e_axis (axes are 0-based)."""

    axis: int
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if self.axis < 0:
            raise ValueError("axis must be >= 0")

    def vector(self, n: int) -> np.ndarray:
        if self.axis >= n:
            raise ValueError(f"direction axis {self.axis} out of range for n={n}")
        v = np.zeros(n)
        v[self.axis] = self.sign
        return v

    @property
    def label(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}e{self.axis + 1}"

    @classmethod
    def from_label(cls, s: str) -> "Direction":
        s = s.strip()
        if len(s) < 3 or s[0] not in "+-" or s[1] != "e":
            raise ValueError(f"bad direction label {s!r}; expected like '+e1' or '-e2'")
        return cls(axis=int(s[2:]) - 1, sign=1 if s[0] == "+" else -1)

    def opposite(self) -> "Direction":
        return Direction(axis=self.axis, sign=-self.sign)

    def dot_x(self, grid: SpaceTimeGrid) -> np.ndarray:
        """x . omega over the spatial mesh."""
        mesh = grid.spatial_mesh()
        return self.sign * mesh[self.axis]


def directions_for(n: int, labels) -> list[Direction]:
    out = [Direction.from_label(s) for s in labels]
    for d in out:
        if d.axis >= n:
            raise ValueError(f"direction {d.label} invalid for n={n}")
    return out


@dataclass
class Wedge:
    """Grid-point classification for one (omega, tau) wedge.

    labels has shape spatial_shape + (nt,).  l_tidx holds, per spatial
    point, the time index of the snapped L plane (-1 where L misses the
    time slab).  The snapping puts a point on L when |t - tau - x.omega|
    < dt/2, which is exact whenever tau is a multiple of dt.
    """

    grid: SpaceTimeGrid
    omega: Direction
    tau: float
    labels: np.ndarray
    l_tidx: np.ndarray
    s_val: np.ndarray  # tau + x.omega over the spatial mesh

    def counts(self) -> dict:
        c = {name: int(np.sum(self.labels == lab)) for lab, name in LABEL_NAMES.items()}
        return c

    @cached_property
    def h_spatial_mask(self) -> np.ndarray:
        """Spatial points whose t = T sample lies on H (or the corner)."""
        top = self.labels[..., -1]
        return (top == ON_H) | (top == CORNER)

    def h_axis_slice(self) -> tuple[slice, ...]:
        """The H set as an axis-aligned rectangle of spatial indices."""
        return _mask_to_box(self.h_spatial_mask)

    def l_spatial_mask(self) -> np.ndarray:
        return self.l_tidx >= 0


def _mask_to_box(mask: np.ndarray) -> tuple[slice, ...]:
    """Turn a rectangular boolean mask into index slices (error if not a box)."""
    if not mask.any():
        return tuple(slice(0, 0) for _ in range(mask.ndim))
    idx = np.nonzero(mask)
    box = tuple(slice(int(ax.min()), int(ax.max()) + 1) for ax in idx)
    if int(np.sum(mask)) != math.prod(s.stop - s.start for s in box):
        raise RegionError("mask is not an axis-aligned rectangle")
    return box


def classify_wedge(grid: SpaceTimeGrid, omega: Direction, tau: float) -> Wedge:
    s_val = tau + omega.dot_x(grid)
    dt = grid.dt
    jT = grid.nt - 1
    # nearest time level to the characteristic plane, per spatial point
    jL = np.floor(s_val / dt + 0.5).astype(np.int64)

    j = np.arange(grid.nt)
    jLb = jL[..., None]
    labels = np.full(grid.spatial_shape + (grid.nt,), OUTSIDE, dtype=np.uint8)
    labels[(j > jLb) & (j < jT)] = INTERIOR
    labels[(j == jLb) & (j <= jT) & (jLb >= 0)] = ON_L
    top_open = jLb[..., 0] < jT  # L strictly below the top
    labels[..., jT][top_open & (jLb[..., 0] < jT)] = ON_H
    labels[..., jT][jL == jT] = CORNER
    # columns whose snapped L lies above the slab are entirely outside
    labels[jL > jT, :] = OUTSIDE
    # columns that entered the wedge before t = 0 are interior from the bottom
    below = jL < 0
    labels[below, :jT] = INTERIOR
    labels[below, jT] = ON_H

    l_tidx = np.where((jL >= 0) & (jL <= jT), jL, -1)
    return Wedge(grid=grid, omega=omega, tau=tau, labels=labels, l_tidx=l_tidx, s_val=s_val)


# ---------------------------------------------------------------------------
# norm parameters and regions


@dataclass(frozen=True)
class NormParams:
    """order 0/1 with a Carleman weight sigma >= 0, or order 2 (unweighted H^2).

    sigma=None requests the plain Sobolev norm of the given order; with a
    numeric sigma the order-0/1 formulas above apply (so order 1 at
    sigma=0.0 is the tangential-gradient seminorm).
    """

    order: int
    sigma: float | None = 0.0

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.order == 2 and self.sigma not in (None, 0.0):
            raise ValueError("order-2 norms are unweighted; sigma must be 0 or None")


def _trap_weights(m: int, spacing: float) -> np.ndarray:
    if m == 1:
        return np.array([spacing])
    w = np.full(m, spacing)
    w[0] = w[-1] = 0.5 * spacing
    return w


@dataclass
class RectRegion:
    """A rectangle of grid samples on a d-dimensional manifold patch.

    axes are the parameter coordinates (always spatial axes, plus
    optionally time for slab regions); t_values gives the physical time of
    every sample for the e^{2 sigma t} weight.  frame_scales convert
    parameter-derivatives to orthonormal-frame components (1/sqrt(2) along
    the lattice diagonal of L).  measure multiplies the parameter volume
    element by the induced one (sqrt(2) on L).
    """

    name: str
    axes: tuple[np.ndarray, ...]
    spacings: tuple[float, ...]
    frame_scales: tuple[float, ...]
    t_values: np.ndarray
    measure: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.array(self.measure)
        for m, sp in zip(self.shape, self.spacings):
            w = np.multiply.outer(w, _trap_weights(m, sp))
        return w

    def _check(self, values: np.ndarray):
        if values.shape != self.shape:
            raise RegionError(f"values shape {values.shape} != region shape {self.shape}")

    def gradients(self, values: np.ndarray) -> list[np.ndarray]:
        """Orthonormal-frame tangential derivatives, one array per direction."""
        self._check(values)
        out = []
        for k, (sp, fs) in enumerate(zip(self.spacings, self.frame_scales)):
            if self.shape[k] < 2:
                raise RegionError(f"cannot differentiate along axis {k} of length {self.shape[k]}")
            eo = 2 if self.shape[k] >= 3 else 1
            out.append(fs * np.gradient(values, sp, axis=k, edge_order=eo))
        return out

    def second_gradients(self, values: np.ndarray) -> list[tuple[float, np.ndarray]]:
        """(multiplicity, d2w) over ordered pairs k <= l; mixed terms weigh twice."""
        self._check(values)
        firsts = self.gradients(values)
        out = []
        for k in range(self.dim):
            for l in range(k, self.dim):
                sp, fs = self.spacings[l], self.frame_scales[l]
                eo = 2 if self.shape[l] >= 3 else 1
                d2 = fs * np.gradient(firsts[k], sp, axis=l, edge_order=eo)
                out.append((1.0 if k == l else 2.0, d2))
        return out


def h_face_region(wedge: Wedge, shrink: tuple[slice, ...] | None = None) -> RectRegion:
    """The flat top H = Q intersect {t = T} as a region over spatial x."""
    box = shrink if shrink is not None else wedge.h_axis_slice()
    g = wedge.grid
    axes = tuple(g.x_axis[s] for s in box)
    if any(len(a) == 0 for a in axes):
        raise RegionError("empty H face")
    shape = tuple(len(a) for a in axes)
    return RectRegion(
        name="H",
        axes=axes,
        spacings=(g.h,) * len(axes),
        frame_scales=(1.0,) * len(axes),
        t_values=np.full(shape, g.T),
    )


def l_face_region(wedge: Wedge) -> RectRegion:
    """The characteristic face L, parameterized by x, with induced measure sqrt(2) dx."""
    g = wedge.grid
    box = _mask_to_box(wedge.l_spatial_mask())
    axes = tuple(g.x_axis[s] for s in box)
    if any(len(a) == 0 for a in axes):
        raise RegionError("L face misses the time slab")
    mesh = np.meshgrid(*axes, indexing="ij") if g.n > 1 else [axes[0]]
    t_values = wedge.tau + wedge.omega.sign * mesh[wedge.omega.axis]
    scales = tuple(
        1.0 / math.sqrt(2.0) if ax == wedge.omega.axis else 1.0 for ax in range(g.n)
    )
    return RectRegion(
        name="L",
        axes=axes,
        spacings=(g.h,) * g.n,
        frame_scales=scales,
        t_values=np.asarray(t_values, dtype=float),
        measure=math.sqrt(2.0),
    )


def slab_region(grid: SpaceTimeGrid) -> RectRegion:
    """All of [x_min, x_max]^n x [0, T] (for coefficient-difference norms)."""
    axes = tuple(grid.x_axis for _ in range(grid.n)) + (grid.t_axis,)
    t_values = np.broadcast_to(grid.t_axis, grid.spatial_shape + (grid.nt,)).copy()
    return RectRegion(
        name="slab",
        axes=axes,
        spacings=(grid.h,) * grid.n + (grid.dt,),
        frame_scales=(1.0,) * (grid.n + 1),
        t_values=t_values,
    )


def space_region(grid: SpaceTimeGrid, t: float | None = None) -> RectRegion:
    """The full spatial grid at a fixed time (default T), for final-time traces."""
    axes = tuple(grid.x_axis for _ in range(grid.n))
    tv = grid.T if t is None else t
    return RectRegion(
        name="space",
        axes=axes,
        spacings=(grid.h,) * grid.n,
        frame_scales=(1.0,) * grid.n,
        t_values=np.full(grid.spatial_shape, tv),
    )


@dataclass
class WedgeRegion:
    """Full-dimensional quadrature over Q = {snapped L <= t <= T} on the grid.

    values live on the whole grid array (spatial_shape + (nt,)); samples
    outside the wedge get zero weight.  The tangential gradient of a
    full-dimensional region is the space-time gradient, computed by
    centered differences on the grid (one order is lost within a cell of
    the wedge boundary, which is fine for the residual diagnostics this
    region backs).
    """

    wedge: Wedge

    @property
    def name(self) -> str:
        return "Q"

    @property
    def dim(self) -> int:
        return self.wedge.grid.n + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.wedge.grid.spatial_shape + (self.wedge.grid.nt,)

    @cached_property
    def t_values(self) -> np.ndarray:
        g = self.wedge.grid
        return np.broadcast_to(g.t_axis, self.shape).copy()

    @cached_property
    def weights(self) -> np.ndarray:
        g = self.wedge.grid
        jT = g.nt - 1
        jraw = np.floor(self.wedge.s_val / g.dt + 0.5).astype(np.int64)
        j0 = np.clip(jraw, 0, None)
        valid = j0 <= jT
        j = np.arange(g.nt)
        j0b = j0[..., None]
        in_col = (j >= j0b) & valid[..., None]
        wt = np.where(in_col, g.dt, 0.0)
        ends = (j == j0b) | (j == jT)
        wt = np.where(in_col & ends, 0.5 * wt, wt)
        wt = np.where(in_col & (j0b == jT), 0.0, wt)  # single-sample column: no measure
        wx = np.array(1.0)
        for _ in range(g.n):
            wx = np.multiply.outer(wx, _trap_weights(g.nx, g.h))
        return wx[..., None] * wt

    def _check(self, values: np.ndarray):
        if values.shape != self.shape:
            raise RegionError(f"values shape {values.shape} != region shape {self.shape}")

    def gradients(self, values: np.ndarray) -> list[np.ndarray]:
        self._check(values)
        g = self.wedge.grid
        sp = (g.h,) * g.n + (g.dt,)
        return [np.gradient(values, sp[k], axis=k, edge_order=2) for k in range(self.dim)]

    def second_gradients(self, values: np.ndarray):
        raise RegionError("order-2 norms are not defined on the wedge interior")


Region = RectRegion | WedgeRegion


def weighted_norm(
    values: np.ndarray,
    region: Region,
    params: NormParams,
    grads: list[np.ndarray] | None = None,
    second_grads: list[tuple[float, np.ndarray]] | None = None,
) -> float:
    """Quadrature of the requested norm of `values` over `region`.

    grads (and, at order 2, second_grads as (multiplicity, array) pairs)
    may supply precomputed tangential derivatives, e.g. analytic ones or
    stored trace columns; otherwise they are formed by centered
    differences on the region's lattice.
    """
    values = np.asarray(values, dtype=float)
    region._check(values)
    w = region.weights
    if params.sigma is None:
        weight = w
        sig = 0.0
        zero_term = values * values  # plain Sobolev includes |w|^2 at every order
    else:
        sig = params.sigma
        weight = w if sig == 0.0 else w * np.exp(2.0 * sig * region.t_values)
        zero_term = values * values

    if params.order == 0:
        return float(np.sqrt(np.sum(weight * zero_term)))

    if grads is None:
        grads = region.gradients(values)
    gsq = sum(np.asarray(gk, dtype=float) ** 2 for gk in grads)

    if params.order == 1:
        if params.sigma is None:
            integrand = zero_term + gsq
        else:
            integrand = gsq + sig * sig * zero_term
        return float(np.sqrt(np.sum(weight * integrand)))

    # order 2, always unweighted
    g2 = second_grads if second_grads is not None else region.second_gradients(values)
    g2sq = sum(mult * np.asarray(d2, dtype=float) ** 2 for mult, d2 in g2)
    return float(np.sqrt(np.sum(w * (zero_term + gsq + g2sq))))


def l2_norm(values: np.ndarray, region: Region) -> float:
    return weighted_norm(values, region, NormParams(order=0, sigma=0.0))


def h1_norm(values: np.ndarray, region: Region, grads=None) -> float:
    return weighted_norm(values, region, NormParams(order=1, sigma=None), grads=grads)


def h2_norm(values: np.ndarray, region: Region, grads=None, second_grads=None) -> float:
    return weighted_norm(
        values, region, NormParams(order=2, sigma=None), grads=grads, second_grads=second_grads
    )
