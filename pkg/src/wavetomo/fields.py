"""Analytic space-time scalar fields with exact partial derivatives.

Everything the solvers consume (coefficients, gauges, test functions) is a
Field: it evaluates itself and any partial derivative up to third order at
arbitrary points, exactly.  The building block is a separable bump

    A * g(|x - cx|^2 / rx^2) * g((t - ct)^2 / rt^2),
    g(p) = (1 - p)^4 * exp(1 - 1/(1 - p))   for p < 1, else 0,

a compactly supported C-infinity profile with peak value 1.  Derivatives
of g are closed-form; spatial/temporal partials follow from the chain rule
on the squared radius.  An infinite spatial radius degenerates the spatial
factor to 1 (used by tests that want a purely time-dependent coefficient).

Derivative requests are tuples of coordinate indices, with index n
standing for time: for n=2, (0, 2) means d^2/dx1 dt.  Tuples are sorted on
entry, so mixed partials are computed once per unordered multi-index and
symmetry holds bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

_SUPPORT_PAD = 0.25  # extra slack added to truncated line integrals


@dataclass(frozen=True)
class SupportBox:
    """Axis-aligned bounding box of a field's support (inf = unbounded)."""

    x_lo: tuple[float, ...]
    x_hi: tuple[float, ...]
    t_lo: float
    t_hi: float

    def union(self, other: "SupportBox") -> "SupportBox":
        return SupportBox(
            x_lo=tuple(min(a, b) for a, b in zip(self.x_lo, other.x_lo)),
            x_hi=tuple(max(a, b) for a, b in zip(self.x_hi, other.x_hi)),
            t_lo=min(self.t_lo, other.t_lo),
            t_hi=max(self.t_hi, other.t_hi),
        )

    @classmethod
    def empty(cls, n: int) -> "SupportBox":
        return cls(x_lo=(math.inf,) * n, x_hi=(-math.inf,) * n, t_lo=math.inf, t_hi=-math.inf)

    @property
    def is_empty(self) -> bool:
        return self.t_lo > self.t_hi


def _profile(p: np.ndarray, order: int) -> np.ndarray:
    """d^order/dp^order of g(p) = (1-p)^4 exp(1 - 1/(1-p)), supported on p < 1."""
    p = np.asarray(p, dtype=float)
    u = 1.0 - p
    inside = u > 1e-12
    us = np.where(inside, u, 1.0)
    E = np.exp(1.0 - 1.0 / us)
    if order == 0:
        val = us**4 * E
    elif order == 1:
        val = -E * (4.0 * us**3 + us**2)
    elif order == 2:
        val = E * (12.0 * us**2 + 6.0 * us + 1.0)
    elif order == 3:
        val = -E * (24.0 * us + 18.0 + 6.0 / us + 1.0 / us**2)
    else:
        raise ValueError("profile derivatives available up to order 3")
    return np.where(inside, val, 0.0)


class Field:
    """Base class; subclasses implement eval(x, t, deriv)."""

    n: int

    def eval(self, x: np.ndarray, t: np.ndarray, deriv: tuple[int, ...] = ()) -> np.ndarray:
        raise NotImplementedError

    @property
    def support(self) -> SupportBox:
        raise NotImplementedError

    def __call__(self, x, t, deriv: tuple[int, ...] = ()):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.n == 1 and (x.ndim == 0 or x.shape[-1:] != (1,)):
            x = x[..., None]
        return self.eval(x, t, tuple(sorted(deriv)))


@dataclass(frozen=True)
class Bump(Field):
    n: int
    center_x: tuple[float, ...]
    center_t: float
    radius_x: float  # math.inf for a spatially constant factor
    radius_t: float
    amplitude: float

    def __post_init__(self):
        if len(self.center_x) != self.n:
            raise ValueError("center_x length must equal n")
        if self.radius_t <= 0 or self.radius_x <= 0:
            raise ValueError("radii must be positive")

    @property
    def support(self) -> SupportBox:
        if math.isinf(self.radius_x):
            x_lo = (-math.inf,) * self.n
            x_hi = (math.inf,) * self.n
        else:
            x_lo = tuple(c - self.radius_x for c in self.center_x)
            x_hi = tuple(c + self.radius_x for c in self.center_x)
        return SupportBox(x_lo, x_hi, self.center_t - self.radius_t, self.center_t + self.radius_t)

    def eval(self, x, t, deriv=()):
        k_t = sum(1 for d in deriv if d == self.n)
        m_sp = tuple(d for d in deriv if d != self.n)
        if k_t + len(m_sp) > 3:
            raise ValueError("bump derivatives available up to total order 3")

        # time factor
        dt_ = t - self.center_t
        pt = (dt_ / self.radius_t) ** 2
        zt = 2.0 * dt_ / self.radius_t**2
        kt = 2.0 / self.radius_t**2
        if k_t == 0:
            Th = _profile(pt, 0)
        elif k_t == 1:
            Th = _profile(pt, 1) * zt
        elif k_t == 2:
            Th = _profile(pt, 2) * zt**2 + _profile(pt, 1) * kt
        else:
            Th = _profile(pt, 3) * zt**3 + 3.0 * _profile(pt, 2) * zt * kt

        # spatial factor
        if math.isinf(self.radius_x):
            X = np.ones(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))
            if m_sp:
                return np.zeros_like(X * Th)
            return self.amplitude * X * Th
        dx = x - np.asarray(self.center_x)
        px = np.sum(dx * dx, axis=-1) / self.radius_x**2
        kx = 2.0 / self.radius_x**2
        z = 2.0 * dx / self.radius_x**2  # per-axis chain factors, shape (..., n)
        if len(m_sp) == 0:
            X = _profile(px, 0)
        elif len(m_sp) == 1:
            (i,) = m_sp
            X = _profile(px, 1) * z[..., i]
        elif len(m_sp) == 2:
            i, j = m_sp
            X = _profile(px, 2) * z[..., i] * z[..., j]
            if i == j:
                X = X + _profile(px, 1) * kx
        else:
            i, j, k = m_sp
            X = _profile(px, 3) * z[..., i] * z[..., j] * z[..., k]
            g2 = _profile(px, 2)
            if j == k:
                X = X + g2 * kx * z[..., i]
            if i == k:
                X = X + g2 * kx * z[..., j]
            if i == j:
                X = X + g2 * kx * z[..., k]
        return self.amplitude * X * Th


@dataclass(frozen=True)
class ZeroField(Field):
    n: int

    @property
    def support(self) -> SupportBox:
        return SupportBox.empty(self.n)

    def eval(self, x, t, deriv=()):
        return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))


@dataclass(frozen=True)
class SumField(Field):
    terms: tuple[Field, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("SumField needs at least one term")
        object.__setattr__(self, "n", self.terms[0].n)

    @property
    def support(self) -> SupportBox:
        box = SupportBox.empty(self.n)
        for f in self.terms:
            box = box.union(f.support)
        return box

    def eval(self, x, t, deriv=()):
        out = self.terms[0].eval(x, t, deriv)
        for f in self.terms[1:]:
            out = out + f.eval(x, t, deriv)
        return out


@dataclass(frozen=True)
class ScaledField(Field):
    base: Field
    factor: float

    def __post_init__(self):
        object.__setattr__(self, "n", self.base.n)

    @property
    def support(self) -> SupportBox:
        return self.base.support

    def eval(self, x, t, deriv=()):
        return self.factor * self.base.eval(x, t, deriv)


@dataclass(frozen=True)
class PartialField(Field):
    """A fixed partial derivative of another field, e.g. phi_t."""

    base: Field
    extra: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "n", self.base.n)
        object.__setattr__(self, "extra", tuple(sorted(self.extra)))

    @property
    def support(self) -> SupportBox:
        return self.base.support

    def eval(self, x, t, deriv=()):
        return self.base.eval(x, t, tuple(sorted(deriv + self.extra)))


def sum_fields(*fields: Field) -> Field:
    fields = tuple(f for f in fields if not isinstance(f, ZeroField))
    if not fields:
        raise ValueError("all terms vanish; pass an explicit ZeroField instead")
    if len(fields) == 1:
        return fields[0]
    return SumField(fields)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class LineIntegralField(Field):
    """I(x, t) = integral_{s_lo}^{0} f(x + s omega_vec, t + s) ds.

    The integrand's time support truncates the ray: below t_lo the bump
    family vanishes identically, so s_lo = t_lo - t - pad.  Quadrature is
    composite Gauss-Legendre (10 nodes per panel), panels doubled until
    the relative change drops below tol; a fixed panel count can be forced
    for refinement studies.  Derivatives pass under the integral sign:
    translation along the ray commutes with every partial.
    """

    def __init__(self, integrand: Field, omega_vec: np.ndarray, tol: float = 1e-9,
                 n_panels: int | None = None, max_panels: int = 256):
        self.integrand = integrand
        self.n = integrand.n
        self.omega_vec = np.asarray(omega_vec, dtype=float)
        if self.omega_vec.shape != (self.n,):
            raise ValueError("omega_vec must have shape (n,)")
        self.tol = tol
        self.n_panels = n_panels
        self.max_panels = max_panels
        box = integrand.support
        if not box.is_empty and math.isinf(box.t_lo):
            raise ValueError("line integrals need an integrand with bounded past support")

    @property
    def support(self) -> SupportBox:
        # the integral is constant (possibly zero) outside the forward shadow of
        # the integrand support; report an unbounded box to stay conservative
        box = self.integrand.support
        if box.is_empty:
            return box
        return SupportBox(
            x_lo=(-math.inf,) * self.n, x_hi=(math.inf,) * self.n,
            t_lo=box.t_lo, t_hi=math.inf,
        )

    def _panel_eval(self, x, t, deriv, n_panels):
        box = self.integrand.support
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1])
        if box.is_empty:
            return np.zeros(shape)
        s_lo = np.minimum(box.t_lo - t - _SUPPORT_PAD, -_SUPPORT_PAD)
        # Gauss-Legendre nodes on [0, 1], concatenated over panels
        p = np.arange(n_panels)[:, None]
        theta = ((p + 0.5 * (_GL_NODES + 1.0)) / n_panels).ravel()
        wts = np.tile(0.5 * _GL_WEIGHTS / n_panels, n_panels)
        s = s_lo[..., None] * (1.0 - theta)  # runs from near s_lo up to near 0
        xs = x[..., None, :] + s[..., None] * self.omega_vec
        ts = t[..., None] + s
        vals = self.integrand.eval(xs, ts, deriv)
        return np.sum(vals * wts, axis=-1) * (-s_lo)

    def eval(self, x, t, deriv=()):
        if self.n_panels is not None:
            return self._panel_eval(x, t, deriv, self.n_panels)
        n_panels = 8
        prev = self._panel_eval(x, t, deriv, n_panels)
        while n_panels < self.max_panels:
            n_panels *= 2
            cur = self._panel_eval(x, t, deriv, n_panels)
            err = np.max(np.abs(cur - prev) / (1.0 + np.abs(cur)))
            prev = cur
            if err <= self.tol:
                break
        return prev
