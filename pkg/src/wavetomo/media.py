"""Coefficient sets (a, b, c), derived quantities, gauges, and potentials.

The operator under study is

    L u = u_tt - Lap u - 2 a u_t + 2 b . grad u + q u,
    q = c - a_t + div b + a^2 - |b|^2,

equivalently (d_t - a)^2 - (grad - b)^2 + c.  A plane wave H(t - tau - x.omega)
sent through the medium picks up the front amplitude

    alpha(x, t) = exp( int_{-inf}^0 (a + omega.b)(x + s omega, t + s) ds ),

which satisfies the transport relation (d_t + omega.grad) alpha = (a + omega.b) alpha
along the ray.  Replacing (a, b) by (a + phi_t, b + grad phi) multiplies
progressing-wave solutions by e^phi and leaves q + ... the boundary data
unchanged when phi and phi_t vanish at the final time; only c and the curl
of the one-form eta = a dt + sum_i b^i dx^i are recoverable from the data.

The potential psi solves the forced wave equation

    Box psi = div b - a_t + c,   psi = 0 for t << 0,

so media normalized by c = a_t - div b have psi identically zero.  In 1D
psi comes from the d'Alembert cone integral; a leapfrog march covers both
dimensions and cross-checks the quadrature.

All coefficients are superpositions of the analytic bumps in
:mod:`wavetomo.fields`, so every derivative the solvers need is exact.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .fields import (
    Bump,
    Field,
    LineIntegralField,
    PartialField,
    ScaledField,
    SumField,
    SupportBox,
    ZeroField,
    sum_fields,
)
from .geometry import Direction, SpaceTimeGrid

BALL_RADIUS = 1.0


class MediumError(ValueError):
    pass


@dataclass(frozen=True)
class BumpSpec:
    """One bump of a named coefficient field, as it appears in config files."""

    field: str  # "a", "b1", ..., "bn", or "c"
    center_x: tuple[float, ...]
    center_t: float
    radius_x: float
    radius_t: float
    amplitude: float

    def to_json(self) -> dict:
        return {
            "field": self.field,
            "center_x": list(self.center_x),
            "center_t": self.center_t,
            "radius_x": self.radius_x if math.isfinite(self.radius_x) else "inf",
            "radius_t": self.radius_t,
            "amplitude": self.amplitude,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BumpSpec":
        rx = d["radius_x"]
        return cls(
            field=d["field"],
            center_x=tuple(float(v) for v in d["center_x"]),
            center_t=float(d["center_t"]),
            radius_x=math.inf if rx == "inf" else float(rx),
            radius_t=float(d["radius_t"]),
            amplitude=float(d["amplitude"]),
        )

    def make_bump(self, n: int) -> Bump:
        return Bump(
            n=n,
            center_x=self.center_x,
            center_t=self.center_t,
            radius_x=self.radius_x,
            radius_t=self.radius_t,
            amplitude=self.amplitude,
        )


def _field_names(n: int) -> list[str]:
    return ["a"] + [f"b{i + 1}" for i in range(n)] + ["c"]


@dataclass(frozen=True)
class CoefficientSet:
    """The triple (a, b, c); b is one scalar field per spatial axis.

    Sets built from bump specs keep them around for hashing and
    serialization; derived sets (gauged, slaved c) leave specs as None.
    """

    n: int
    a: Field
    b: tuple[Field, ...]
    c: Field
    specs: tuple[BumpSpec, ...] | None = None

    def __post_init__(self):
        if len(self.b) != self.n:
            raise MediumError("need one b component per spatial axis")

    @classmethod
    def zero(cls, n: int) -> "CoefficientSet":
        z = ZeroField(n)
        return cls(n=n, a=z, b=(z,) * n, c=z, specs=())

    @classmethod
    def from_bumps(
        cls,
        n: int,
        specs,
        T: float | None = None,
        check_support: bool = True,
    ) -> "CoefficientSet":
        """Assemble a medium; supports must sit inside the unit ball x [0, T].

        check_support=False admits unbounded test media (e.g. spatially
        constant coefficients) that deliberately break that invariant.
        """
        specs = tuple(
            s if isinstance(s, BumpSpec) else BumpSpec.from_json(s) for s in specs
        )
        names = _field_names(n)
        groups: dict[str, list[Bump]] = {name: [] for name in names}
        for s in specs:
            if s.field not in groups:
                raise MediumError(f"unknown coefficient field {s.field!r} for n={n}")
            if len(s.center_x) != n:
                raise MediumError(f"bump center_x must have {n} entries")
            if check_support:
                if math.isinf(s.radius_x):
                    raise MediumError("infinite spatial radius violates the support ball")
                r = math.sqrt(sum(cc * cc for cc in s.center_x))
                if r + s.radius_x > BALL_RADIUS + 1e-12:
                    raise MediumError(
                        f"bump of {s.field} leaves the unit ball "
                        f"(|center| + radius = {r + s.radius_x:.4f})"
                    )
                if s.center_t - s.radius_t < -1e-12:
                    raise MediumError("bump switches on before t = 0")
                if T is not None and s.center_t + s.radius_t > T + 1e-12:
                    raise MediumError("bump is still on after t = T")
            groups[s.field].append(s.make_bump(n))

        def build(name: str) -> Field:
            lst = groups[name]
            return sum_fields(*lst) if lst else ZeroField(n)

        return cls(
            n=n,
            a=build("a"),
            b=tuple(build(f"b{i + 1}") for i in range(n)),
            c=build("c"),
            specs=specs,
        )

    def fields(self) -> dict[str, Field]:
        out = {"a": self.a, "c": self.c}
        for i, bi in enumerate(self.b):
            out[f"b{i + 1}"] = bi
        return out

    @property
    def support(self) -> SupportBox:
        box = SupportBox.empty(self.n)
        for f in [self.a, *self.b, self.c]:
            box = box.union(f.support)
        return box

    def spec_hash(self) -> str:
        if self.specs is None:
            return "derived"
        payload = json.dumps([s.to_json() for s in self.specs], sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def with_slaved_c(self) -> "CoefficientSet":
        """Replace c by a_t - div b, the normalization with vanishing psi."""
        return replace(self, c=slaved_c(self.a, self.b), specs=None)


def slaved_c(a: Field, b: tuple[Field, ...]) -> Field:
    n = a.n
    terms: list[Field] = [PartialField(a, (n,))]
    terms += [ScaledField(PartialField(bi, (i,)), -1.0) for i, bi in enumerate(b)]
    return SumField(tuple(terms))


class CFromQ(Field):
    """c = q + a_t - div b - a^2 + |b|^2, so the medium's potential is q.

    Value-only, like QField; everything downstream of the solvers reads c
    through the potential anyway.
    """

    def __init__(self, a: Field, b: tuple[Field, ...], q: Field):
        self.a = a
        self.b = tuple(b)
        self.q = q
        self.n = a.n

    @property
    def support(self) -> SupportBox:
        box = self.q.support
        for f in (self.a, *self.b):
            box = box.union(f.support)
        return box

    def eval(self, x, t, deriv=()):
        if deriv:
            raise MediumError("c derived from a prescribed q has no stored derivatives")
        n = self.n
        av = self.a.eval(x, t)
        val = self.q.eval(x, t) + self.a.eval(x, t, (n,)) - av * av
        for i, bi in enumerate(self.b):
            bv = bi.eval(x, t)
            val = val - bi.eval(x, t, (i,)) + bv * bv
        return val


def with_prescribed_q(a: Field, b: tuple[Field, ...], q: Field) -> CoefficientSet:
    """The medium (a, b, c) whose potential equals q pointwise."""
    return CoefficientSet(n=a.n, a=a, b=tuple(b), c=CFromQ(a, b, q), specs=None)


@dataclass(frozen=True)
class PlanarField(Field):
    """A 1D field read as a function of x_1 alone in n spatial dimensions."""

    base: Field
    n: int

    def __post_init__(self):
        if self.base.n != 1:
            raise MediumError("planar extension starts from a one-dimensional field")

    @property
    def support(self) -> SupportBox:
        box = self.base.support
        if box.is_empty:
            return SupportBox.empty(self.n)
        x_lo = (box.x_lo[0],) + (-math.inf,) * (self.n - 1)
        x_hi = (box.x_hi[0],) + (math.inf,) * (self.n - 1)
        return SupportBox(x_lo, x_hi, box.t_lo, box.t_hi)

    def eval(self, x, t, deriv=()):
        # transverse derivatives vanish; x_1 and t map to the base field's
        # axis 0 and axis 1
        if any(0 < d < self.n for d in deriv):
            return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))
        mapped = tuple(0 if d == 0 else 1 for d in deriv)
        return self.base.eval(x[..., :1], t, mapped)


def planar_extension(coeffs: "CoefficientSet", n: int = 2) -> "CoefficientSet":
    """Extend a 1D medium to n dimensions, constant along the transverse axes.

    b keeps its axial component only.  The support becomes a transversally
    unbounded slab, so these sets are meant for solver cross-checks rather
    than the unit-ball medium class.
    """
    if coeffs.n != 1:
        raise MediumError("planar extension starts from a one-dimensional medium")
    b = (PlanarField(coeffs.b[0], n),) + tuple(ZeroField(n) for _ in range(n - 1))
    return CoefficientSet(
        n=n, a=PlanarField(coeffs.a, n), b=b, c=PlanarField(coeffs.c, n), specs=None
    )


class QField(Field):
    """q = c - a_t + div b + a^2 - |b|^2 as a value-only field.

    The solvers only ever need q pointwise; derivative requests are
    rejected rather than silently approximated.
    """

    def __init__(self, coeffs: CoefficientSet):
        self.coeffs = coeffs
        self.n = coeffs.n

    @property
    def support(self) -> SupportBox:
        return self.coeffs.support

    def eval(self, x, t, deriv=()):
        if deriv:
            raise NotImplementedError("q is available as values only; differentiate a, b, c")
        C = self.coeffs
        n = C.n
        out = C.c.eval(x, t) - C.a.eval(x, t, (n,)) + C.a.eval(x, t) ** 2
        for i, bi in enumerate(C.b):
            bv = bi.eval(x, t)
            out = out + bi.eval(x, t, (i,)) - bv * bv
        return out


def compute_q(coeffs: CoefficientSet) -> QField:
    return QField(coeffs)


def drift_along(coeffs: CoefficientSet, omega: Direction) -> Field:
    """a + omega . b, the reaction coefficient of the front transport."""
    bi = coeffs.b[omega.axis]
    terms = [coeffs.a, bi if omega.sign > 0 else ScaledField(bi, -1.0)]
    terms = [f for f in terms if not (isinstance(f, ZeroField) or f.support.is_empty)]
    if not terms:
        return ZeroField(coeffs.n)
    return sum_fields(*terms)


def log_alpha_field(
    coeffs: CoefficientSet, omega: Direction, *, tol: float = 1e-9, n_panels: int | None = None
) -> LineIntegralField:
    """The ray integral I with alpha = e^I."""
    vec = omega.vector(coeffs.n)
    return LineIntegralField(drift_along(coeffs, omega), vec, tol=tol, n_panels=n_panels)


def compute_alpha(
    coeffs: CoefficientSet,
    omega: Direction,
    x: np.ndarray,
    t: np.ndarray,
    *,
    tol: float = 1e-9,
    n_panels: int | None = None,
) -> np.ndarray:
    """Front amplitude alpha(x, t; omega), always positive."""
    I = log_alpha_field(coeffs, omega, tol=tol, n_panels=n_panels)
    return np.exp(I.eval(np.asarray(x, dtype=float), np.asarray(t, dtype=float)))


@dataclass
class AlphaBundle:
    """alpha and the ray-integral partials needed to act with L on it."""

    alpha: np.ndarray
    I_t: np.ndarray
    I_x: np.ndarray  # shape (n, ...) stacked over axes
    I_tt: np.ndarray | None = None
    I_xx: np.ndarray | None = None  # diagonal second partials, (n, ...)
    I_xt: np.ndarray | None = None  # (n, ...)


def alpha_bundle(
    coeffs: CoefficientSet,
    omega: Direction,
    x: np.ndarray,
    t: np.ndarray,
    *,
    upto: int = 2,
    mixed: bool = True,
    tol: float = 1e-9,
    n_panels: int | None = None,
) -> AlphaBundle:
    I = log_alpha_field(coeffs, omega, tol=tol, n_panels=n_panels)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    n = coeffs.n
    val = I.eval(x, t)
    out = AlphaBundle(
        alpha=np.exp(val),
        I_t=I.eval(x, t, (n,)),
        I_x=np.stack([I.eval(x, t, (i,)) for i in range(n)]),
    )
    if upto >= 2:
        out.I_tt = I.eval(x, t, (n, n))
        out.I_xx = np.stack([I.eval(x, t, (i, i)) for i in range(n)])
        if mixed:
            out.I_xt = np.stack([I.eval(x, t, (i, n)) for i in range(n)])
    return out


def l_on_alpha(
    coeffs: CoefficientSet,
    omega: Direction,
    x: np.ndarray,
    t: np.ndarray,
    *,
    tol: float = 1e-9,
    n_panels: int | None = None,
) -> np.ndarray:
    """L alpha, via differentiation of the ray integral under the sign.

    With alpha = e^I:  L alpha = alpha [ I_tt + I_t^2 - Lap I - |grad I|^2
    - 2 a I_t + 2 b . grad I + q ].
    """
    B = alpha_bundle(coeffs, omega, x, t, upto=2, mixed=False, tol=tol, n_panels=n_panels)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    q = compute_q(coeffs).eval(x, t)
    av = coeffs.a.eval(x, t)
    acc = B.I_tt + B.I_t**2 - 2.0 * av * B.I_t + q
    for i, bi in enumerate(coeffs.b):
        acc = acc - B.I_xx[i] - B.I_x[i] ** 2 + 2.0 * bi.eval(x, t) * B.I_x[i]
    return B.alpha * acc


def l_on_alpha_reduced(
    coeffs: CoefficientSet,
    omega: Direction,
    x: np.ndarray,
    t: np.ndarray,
    *,
    tol: float = 1e-9,
) -> np.ndarray:
    """L alpha for media normalized by c - a_t + div b = 0, via the identity

        L alpha = alpha (d_t - omega.grad)(a + omega.b)
                  - (Lap_perp - 2 b_perp . grad_perp + |b_perp|^2) alpha,

    grad_perp collecting the axes transverse to omega.  Used as the
    second, independent evaluation in consistency checks.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    n = coeffs.n
    mu = drift_along(coeffs, omega)
    first = mu.eval(x, t, (n,)) - omega.sign * mu.eval(x, t, (omega.axis,))
    B = alpha_bundle(coeffs, omega, x, t, upto=2, tol=tol)
    out = B.alpha * first
    for i in range(n):
        if i == omega.axis:
            continue
        bperp = coeffs.b[i].eval(x, t)
        lap_i = B.alpha * (B.I_xx[i] + B.I_x[i] ** 2)
        grad_i = B.alpha * B.I_x[i]
        out = out - lap_i + 2.0 * bperp * grad_i - bperp**2 * B.alpha
    return out


# ---------------------------------------------------------------------------
# gauges


@dataclass(frozen=True)
class GaugeFunction:
    """A gauge phi acting by (a, b, c) -> (a + phi_t, b + grad phi, c)."""

    phi: Field

    @property
    def n(self) -> int:
        return self.phi.n

    def phi_t(self) -> Field:
        return PartialField(self.phi, (self.n,))

    def grad(self) -> tuple[Field, ...]:
        return tuple(PartialField(self.phi, (i,)) for i in range(self.n))

    def end_conditions(self, grid: SpaceTimeGrid, tol: float = 1e-12) -> dict:
        """Whether phi and phi_t vanish on {t = T}, sampled on the grid."""
        pts = grid.points()
        tv = np.full(grid.spatial_shape, grid.T)
        m_phi = float(np.max(np.abs(self.phi.eval(pts, tv))))
        m_phit = float(np.max(np.abs(self.phi.eval(pts, tv, (self.n,)))))
        return {
            "max_phi_T": m_phi,
            "max_phi_t_T": m_phit,
            "data_invariant": bool(m_phi < tol and m_phit < tol),
        }

    @classmethod
    def from_bumps(cls, n: int, specs) -> "GaugeFunction":
        bumps = []
        for s in specs:
            s = s if isinstance(s, BumpSpec) else BumpSpec.from_json(s)
            bumps.append(s.make_bump(n))
        return cls(phi=sum_fields(*bumps))


def apply_gauge(coeffs: CoefficientSet, gauge: GaugeFunction) -> CoefficientSet:
    if gauge.n != coeffs.n:
        raise MediumError("gauge dimension mismatch")
    grads = gauge.grad()
    return CoefficientSet(
        n=coeffs.n,
        a=sum_fields(coeffs.a, gauge.phi_t()),
        b=tuple(sum_fields(bi, gi) for bi, gi in zip(coeffs.b, grads)),
        c=coeffs.c,
        specs=None,
    )


def gauge_phi(coeffs: CoefficientSet, omega: Direction | None = None, *, tol: float = 1e-9) -> GaugeFunction:
    """The ray gauge phi = -int_{-inf}^0 (a + omega.b)(x + s omega, t + s) ds.

    With the default omega = +e_n, applying it kills a + e_n . b
    identically (it is minus the log of the front amplitude).
    """
    if omega is None:
        omega = Direction(axis=coeffs.n - 1, sign=1)
    I = log_alpha_field(coeffs, omega, tol=tol)
    return GaugeFunction(phi=ScaledField(I, -1.0))


def gauge_residual(coeffs: CoefficientSet, omega: Direction, grid: SpaceTimeGrid) -> float:
    """max |a + omega.b| over the grid slab (zero after the ray gauge)."""
    mu = drift_along(coeffs, omega)
    pts = grid.points()[..., None, :]
    tv = grid.t_axis
    return float(np.max(np.abs(mu.eval(pts, tv))))


# ---------------------------------------------------------------------------
# the wave potential psi


def psi_source(coeffs: CoefficientSet) -> Field:
    """F = div b - a_t + c (zero exactly for slaved-c media up to rounding)."""
    n = coeffs.n
    terms: list[Field] = [PartialField(bi, (i,)) for i, bi in enumerate(coeffs.b)]
    terms.append(ScaledField(PartialField(coeffs.a, (n,)), -1.0))
    terms.append(coeffs.c)
    return SumField(tuple(terms))


@dataclass
class PsiSolution:
    """Final-time traces of psi (and what the norms need)."""

    grid: SpaceTimeGrid
    method: str
    psi: np.ndarray       # psi(., T) on the spatial mesh
    psi_t: np.ndarray
    psi_tt: np.ndarray


class _SourceValues(Field):
    """Adapter evaluating F by value even when c is derived (no derivatives)."""

    def __init__(self, coeffs: CoefficientSet):
        self.coeffs = coeffs
        self.n = coeffs.n

    @property
    def support(self) -> SupportBox:
        return self.coeffs.support

    def eval(self, x, t, deriv=()):
        if deriv:
            return psi_source(self.coeffs).eval(x, t, deriv)
        C = self.coeffs
        out = C.c.eval(x, t) - C.a.eval(x, t, (self.n,))
        for i, bi in enumerate(C.b):
            out = out + bi.eval(x, t, (i,))
        return out


def _psi_quadrature_1d(coeffs: CoefficientSet, grid: SpaceTimeGrid, tol: float) -> PsiSolution:
    """d'Alembert cone integrals; all traces are ray/cone quadratures of F."""
    F = _SourceValues(coeffs)
    box = coeffs.support
    t_lo = max(box.t_lo, 0.0)
    T = grid.T
    xs = grid.x_axis

    def cone_value(n_panels: int) -> np.ndarray:
        # outer integral over emission time s, inner over the cone section
        sp = np.arange(n_panels)[:, None]
        from .fields import _GL_NODES, _GL_WEIGHTS

        s_nodes = (t_lo + (T - t_lo) * ((sp + 0.5 * (_GL_NODES + 1.0)) / n_panels)).ravel()
        s_w = np.tile(0.5 * _GL_WEIGHTS * (T - t_lo) / n_panels, n_panels)
        vals = np.zeros(len(xs))
        for s_val, w_s in zip(s_nodes, s_w):
            half = T - s_val
            y_lo = np.maximum(xs - half, box.x_lo[0])
            y_hi = np.minimum(xs + half, box.x_hi[0])
            width = np.clip(y_hi - y_lo, 0.0, None)
            yn = y_lo[:, None] + width[:, None] * 0.5 * (_GL_NODES + 1.0)
            inner = np.sum(F.eval(yn[..., None], np.full_like(yn, s_val)) * (0.5 * _GL_WEIGHTS), axis=-1) * width
            vals += w_s * inner
        return 0.5 * vals

    if box.is_empty or t_lo >= T:
        z = np.zeros(len(xs))
        return PsiSolution(grid=grid, method="quadrature", psi=z, psi_t=z.copy(), psi_tt=F.eval(xs[:, None], np.full(len(xs), T)))

    n_panels = 8
    psi = cone_value(n_panels)
    while n_panels < 256:
        n_panels *= 2
        nxt = cone_value(n_panels)
        err = np.max(np.abs(nxt - psi) / (1.0 + np.abs(nxt)))
        psi = nxt
        if err <= tol:
            break

    # psi_t and psi_xx reduce to single ray integrals along the cone flanks
    def flank_integrals(n_panels: int, deriv: tuple[int, ...]) -> np.ndarray:
        from .fields import _GL_NODES, _GL_WEIGHTS

        sp = np.arange(n_panels)[:, None]
        s_nodes = (t_lo + (T - t_lo) * ((sp + 0.5 * (_GL_NODES + 1.0)) / n_panels)).ravel()
        s_w = np.tile(0.5 * _GL_WEIGHTS * (T - t_lo) / n_panels, n_panels)
        half = T - s_nodes
        xp = xs[:, None] + half
        xm = xs[:, None] - half
        tv = np.broadcast_to(s_nodes, xp.shape)
        plus = F.eval(xp[..., None], tv, deriv)
        minus = F.eval(xm[..., None], tv, deriv)
        if deriv == ():
            comb = plus + minus
        else:
            comb = plus - minus
        return 0.5 * np.sum(comb * s_w, axis=-1)

    psi_t = flank_integrals(64, ())
    psi_xx = flank_integrals(64, (0,))
    f_T = F.eval(xs[:, None], np.full(len(xs), T))
    return PsiSolution(grid=grid, method="quadrature", psi=psi, psi_t=psi_t, psi_tt=f_T + psi_xx)


def solve_psi(
    coeffs: CoefficientSet,
    grid: SpaceTimeGrid,
    method: str | None = None,
    *,
    tol: float = 1e-10,
) -> PsiSolution:
    """Solve Box psi = div b - a_t + c with psi = 0 in the far past.

    method defaults to the cone quadrature in 1D and the leapfrog in 2D.
    psi_tt(., T) is recovered from the equation as F(., T) + Lap psi(., T).
    """
    if method is None:
        method = "quadrature" if grid.n == 1 else "leapfrog"
    if method == "quadrature":
        if grid.n != 1:
            raise MediumError("the cone quadrature is one-dimensional only")
        return _psi_quadrature_1d(coeffs, grid, tol)
    if method != "leapfrog":
        raise MediumError(f"unknown psi method {method!r}")

    F = _SourceValues(coeffs)
    dt, h = grid.dt, grid.h
    if dt > 0.9 * h / math.sqrt(grid.n) + 1e-12:
        raise MediumError("time step violates the CFL bound for the leapfrog")
    pts = grid.points()
    shape = grid.spatial_shape
    interior = tuple(slice(1, -1) for _ in range(grid.n))
    levels = {}
    prev = np.zeros(shape)
    cur = np.zeros(shape)
    t = 0.0
    for j in range(grid.nt):  # last produced level is psi(T + dt)
        lap = _lap(cur, h, grid.n)
        f = F.eval(pts, np.full(shape, t))
        nxt = np.zeros(shape)
        nxt[interior] = (2.0 * cur - prev + dt * dt * (lap + f))[interior]
        prev, cur = cur, nxt
        t += dt
        j_t = j + 1  # cur now holds psi at time j_t * dt
        if j_t in (grid.nt - 2, grid.nt - 1, grid.nt):
            levels[j_t] = cur.copy()
    psi_T = levels[grid.nt - 1]
    psi_t = (levels[grid.nt] - levels[grid.nt - 2]) / (2.0 * dt)
    f_T = F.eval(pts, np.full(shape, grid.T))
    psi_tt = f_T + _lap(psi_T, h, grid.n)
    return PsiSolution(grid=grid, method="leapfrog", psi=psi_T, psi_t=psi_t, psi_tt=psi_tt)


def _lap(arr: np.ndarray, h: float, n: int) -> np.ndarray:
    lap = np.zeros_like(arr)
    for ax in range(n):
        lap += np.roll(arr, -1, axis=ax) + np.roll(arr, 1, axis=ax) - 2.0 * arr
    return lap / (h * h)


# ---------------------------------------------------------------------------
# the one-form and its curl


class CurlEta:
    """Components of d eta for eta = a dt + sum_i b^i dx^i.

    Stored as a_{x_i} - b^i_t for each axis i, then b^i_{x_j} - b^j_{x_i}
    for i < j; the full antisymmetric matrix carries no extra content.
    """

    def __init__(self, coeffs: CoefficientSet):
        self.coeffs = coeffs
        self.n = coeffs.n
        self.labels = [f"d(a,b{i + 1})" for i in range(self.n)]
        self.labels += [
            f"d(b{i + 1},b{j + 1})" for i in range(self.n) for j in range(i + 1, self.n)
        ]

    @property
    def n_components(self) -> int:
        return len(self.labels)

    def components(self, x, t) -> np.ndarray:
        """Stacked component values, shape (n_components, ...)."""
        C = self.coeffs
        n = self.n
        out = [C.a.eval(x, t, (i,)) - C.b[i].eval(x, t, (n,)) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                out.append(C.b[i].eval(x, t, (j,)) - C.b[j].eval(x, t, (i,)))
        return np.stack(out)


def curl_eta(coeffs: CoefficientSet) -> CurlEta:
    return CurlEta(coeffs)
