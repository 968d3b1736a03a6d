"""Fundamental solution of the two-media divergence-form heat operator.

The operator is ``(1/2rho) d/dx (rho A d/dx)`` with ``A = a1, rho = rho1`` on
``x <= 0`` and ``A = a2, rho = rho2`` on ``x > 0``.  Its fundamental solution
is a combination of two Gaussians in the rescaled coordinate
``f(z) = z/sqrt(a1)`` (``z <= 0``) or ``z/sqrt(a2)`` (``z > 0``), weighted by
the skewness parameter ``beta``.

Everything in this module is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "Medium",
    "make_medium",
    "f_map",
    "heat_kernel",
    "e_minus",
    "e_plus",
    "green_fn",
    "t_product_integral",
    "time_integrated_t",
    "erfc",
    "gaussian_bound_fit",
    "KernelFn",
    "PiecewiseKernel",
    "NullKernel",
    "half_line_gaussian_product",
    "pde_residual",
]


class DomainError(ValueError):
    """Raised when a time argument is not strictly positive."""


def _check_time(u, name="u"):
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} must be > 0, got {u!r}")


@dataclass(frozen=True)
class Medium:
    """Piecewise-constant coefficients of the two-media operator.

    ``beta`` and ``satisfies_crhoa`` are derived; build instances with
    :func:`make_medium` so they are always consistent.
    """

    a1: float
    a2: float
    rho1: float
    rho2: float
    beta: float
    satisfies_crhoa: bool

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.a1, self.a2, self.rho1, self.rho2)

    def __str__(self) -> str:
        return "Medium(a1={:g}, a2={:g}, rho1={:g}, rho2={:g})".format(*self.coefficients)


def make_medium(a1: float, a2: float, rho1: float, rho2: float) -> Medium:
    """Validate the four coefficients and derive ``beta`` and the CrhoA flag.

    Raises
    ------
    ValueError
        If any coefficient is not a finite, strictly positive number.  The
        message names the offending field.
    """
    vals = {"a1": a1, "a2": a2, "rho1": rho1, "rho2": rho2}
    for name, v in vals.items():
        try:
            fv = float(v)
        except (TypeError, ValueError):
            raise ValueError(f"{name} must be a real number, got {v!r}") from None
        if not math.isfinite(fv) or fv <= 0:
            raise ValueError(f"{name} must be finite and > 0, got {v!r}")
        vals[name] = fv
    a1, a2, rho1, rho2 = vals["a1"], vals["a2"], vals["rho1"], vals["rho2"]
    s1, s2 = math.sqrt(a1), math.sqrt(a2)
    beta = (rho2 * s2 - rho1 * s1) / (rho2 * s2 + rho1 * s1)
    crhoa = max(1.0, s1 / s2) <= rho2 / rho1
    return Medium(a1, a2, rho1, rho2, beta, bool(crhoa))


def f_map(m: Medium, z):
    """Coordinate change ``z / sqrt(a1)`` for ``z <= 0``, ``z / sqrt(a2)`` otherwise."""
    z = np.asarray(z, dtype=float)
    out = np.where(z <= 0, z / math.sqrt(m.a1), z / math.sqrt(m.a2))
    return out[()] if out.ndim == 0 else out


def heat_kernel(t, x):
    """Gaussian density with variance ``t`` evaluated at ``x``."""
    _check_time(t, "t")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return out[()] if out.ndim == 0 else out


def e_minus(m: Medium, u, x, z):
    _check_time(u)
    u = np.asarray(u, dtype=float)
    d = f_map(m, z) - f_map(m, x)
    out = np.exp(-d * d / (2.0 * u))
    return out[()] if np.ndim(out) == 0 else out


def e_plus(m: Medium, u, x, z):
    _check_time(u)
    u = np.asarray(u, dtype=float)
    s = np.abs(f_map(m, z)) + np.abs(f_map(m, x))
    out = np.exp(-s * s / (2.0 * u))
    return out[()] if np.ndim(out) == 0 else out


def green_fn(m: Medium, u, x, z):
    """Fundamental solution ``G(u, x, z)`` of the two-media operator.

    At the interface ``z = 0`` the ``z <= 0`` branch is used.
    """
    _check_time(u)
    u = np.asarray(u, dtype=float)
    em = e_minus(m, u, x, z)
    ep = e_plus(m, u, x, z)
    left = (em - m.beta * ep) / math.sqrt(m.a1)
    right = (em + m.beta * ep) / math.sqrt(m.a2)
    out = np.where(np.asarray(z) <= 0, left, right) / np.sqrt(2.0 * np.pi * u)
    return out[()] if np.ndim(out) == 0 else out


def t_product_integral(x, y, u):
    """Closed form of ``int exp(-(v-y)^2/2u) exp(-(v-x)^2/2u) dv``."""
    _check_time(u)
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.sqrt(np.pi * u) * np.exp(-d * d / (4.0 * u))
    return out[()] if np.ndim(out) == 0 else out


def time_integrated_t(x, y, t):
    """``int_0^t t_product_integral(x, y, u) / (2 pi u) du`` in closed form.

    The integral is even in ``y - x``; the closed form is evaluated at
    ``|y - x|`` so that it is valid for both orderings.
    """
    _check_time(t, "t")
    d = np.abs(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    out = np.sqrt(t / np.pi) * np.exp(-d * d / (4.0 * t)) - 0.5 * d * special.erfc(
        d / (2.0 * np.sqrt(t))
    )
    return out[()] if np.ndim(out) == 0 else out


def erfc(x):
    """Complementary error function (scipy's Cephes-based implementation)."""
    out = special.erfc(np.asarray(x, dtype=float))
    return out[()] if np.ndim(out) == 0 else out


def half_line_gaussian_product(c1, c2, u, side):
    """``int exp(-(w-c1)^2/2u) exp(-(w-c2)^2/2u) dw`` over ``w > 0`` (side=+1) or ``w < 0`` (side=-1)."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    su = np.sqrt(u)
    return (
        np.exp(-((c1 - c2) ** 2) / (4.0 * u))
        * (0.5 * math.sqrt(math.pi))
        * su
        * special.erfc(-side * (c1 + c2) / (2.0 * su))
    )


class KernelFn:
    """Evaluator ``(u, x, z) -> G(u, x, z)`` consumed by the covariance code.

    Subclasses implement :meth:`__call__` (vectorised over numpy arrays).  The
    default :meth:`spatial_inner` integrates ``G(u,x,.) G(u,y,.)`` numerically
    on a window of half-width ``12 * sqrt(u * scale)`` around the two points,
    split at ``breakpoints``; subclasses with a closed form should override it.
    """

    #: diffusivity scale used to size quadrature windows
    scale: float = 1.0
    #: points in z where G(u, x, .) may jump
    breakpoints: tuple[float, ...] = ()
    # composite Gauss-Legendre rule on [0, 1]: 16 panels x 24 nodes
    _gl_x, _gl_w = np.polynomial.legendre.leggauss(24)
    _unit_nodes = ((np.arange(16)[:, None] + 0.5 * (_gl_x + 1.0)) / 16.0).ravel()
    _unit_weights = np.tile(_gl_w / 32.0, 16)

    def __call__(self, u, x, z):  # pragma: no cover - abstract
        raise NotImplementedError

    def spatial_inner(self, u, x, y):
        u = np.asarray(u, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u, x, y = np.broadcast_arrays(u, x, y)
        half = 12.0 * np.sqrt(u * self.scale)
        lo = np.minimum(x, y) - half
        hi = np.maximum(x, y) + half
        # split at discontinuities; segments outside the window have zero length
        cuts = [lo] + [np.clip(b, lo, hi) for b in sorted(self.breakpoints)] + [hi]
        total = np.zeros(u.shape)
        for s0, s1 in zip(cuts[:-1], cuts[1:]):
            width = (s1 - s0)[..., None]
            z = s0[..., None] + width * self._unit_nodes
            gx = self(u[..., None], x[..., None], z)
            gy = self(u[..., None], y[..., None], z)
            total += (gx * gy) @ self._unit_weights * width[..., 0]
        return total[()] if total.ndim == 0 else total

    def cache_token(self) -> dict | None:
        """Parameters identifying the kernel for on-disk caching, or ``None``."""
        return None


class PiecewiseKernel(KernelFn):
    """The explicit two-media kernel, with closed-form spatial products."""

    def __init__(self, medium: Medium):
        self.medium = medium
        self.scale = max(medium.a1, medium.a2)
        self.breakpoints = (0.0,)

    def __call__(self, u, x, z):
        return green_fn(self.medium, u, x, z)

    def __repr__(self) -> str:
        return f"PiecewiseKernel({self.medium})"

    def spatial_inner(self, u, x, y):
        """``int G(u,x,z) G(u,y,z) dz`` in closed form for arbitrary x, y."""
        m = self.medium
        u = np.asarray(u, dtype=float)
        fx = f_map(m, x)
        fy = f_map(m, y)
        ax, ay = np.abs(fx), np.abs(fy)
        b = m.beta
        H = half_line_gaussian_product
        # z > 0: centres f(x) and -|f(x)| in w = z/sqrt(a2)
        right = (
            H(fx, fy, u, 1)
            + b * H(fx, -ay, u, 1)
            + b * H(-ax, fy, u, 1)
            + b * b * H(-ax, -ay, u, 1)
        ) / math.sqrt(m.a2)
        # z <= 0: centres f(x) and +|f(x)| in w = z/sqrt(a1)
        left = (
            H(fx, fy, u, -1)
            - b * H(fx, ay, u, -1)
            - b * H(ax, fy, u, -1)
            + b * b * H(ax, ay, u, -1)
        ) / math.sqrt(m.a1)
        out = (left + right) / (2.0 * np.pi * u)
        return out[()] if np.ndim(out) == 0 else out

    def cache_token(self) -> dict:
        return {"kind": "piecewise", "medium": list(self.medium.coefficients)}


class NullKernel(KernelFn):
    """``G == 0``; drives every field to zero."""

    def __call__(self, u, x, z):
        return np.zeros(np.broadcast(np.asarray(u), np.asarray(x), np.asarray(z)).shape)

    def spatial_inner(self, u, x, y):
        return np.zeros(np.broadcast(np.asarray(u), np.asarray(x), np.asarray(y)).shape)

    def cache_token(self) -> dict:
        return {"kind": "null"}


def gaussian_bound_fit(
    m: Medium,
    t_grid: Sequence[float],
    xy_grid: Sequence[float],
    c2_sweep: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Fit ``G(t,x,y) <= C1/sqrt(2 pi t) exp(-C2 (x-y)^2 / t)`` on a grid.

    For each trial ``C2`` the smallest admissible ``C1`` is the maximum of the
    pointwise ratio over the grid.  Among the trials attaining the minimal
    ``C1`` (to 1e-12 relative), the largest ``C2`` is returned, i.e. the
    tightest Gaussian decay available at the best prefactor.

    Parameters
    ----------
    t_grid : sequence of float
        Times, all > 0.
    xy_grid : sequence of float
        Spatial points; every ordered pair ``(x, y)`` is tested.
    c2_sweep : sequence of float, optional
        Trial decay rates.  Defaults to ``0.5 * 2**(-k/4)`` for ``k = 0..16``.
    """
    t = np.asarray(t_grid, dtype=float).ravel()
    pts = np.asarray(xy_grid, dtype=float).ravel()
    if t.size == 0 or pts.size == 0:
        raise ValueError("grids must be nonempty")
    _check_time(t, "t")
    if c2_sweep is None:
        c2_sweep = 0.5 * 2.0 ** (-np.arange(17) / 4.0)
    c2s = np.asarray(c2_sweep, dtype=float)

    T, X, Y = np.meshgrid(t, pts, pts, indexing="ij")
    g = green_fn(m, T, X, Y)
    d2_over_t = (X - Y) ** 2 / T
    base = g * np.sqrt(2.0 * np.pi * T)
    c1s = np.array([np.max(base * np.exp(c2 * d2_over_t)) for c2 in c2s])
    best = c1s.min()
    ok = c1s <= best * (1.0 + 1e-12)
    i = int(np.flatnonzero(ok)[np.argmax(c2s[ok])])
    return float(c1s[i]), float(c2s[i])


def pde_residual(m: Medium, u: float, x: float, z: float, step: float) -> float:
    """Centred finite-difference residual of ``d_u G - (A(x)/2) d_xx G``.

    Valid away from ``x = 0`` where the operator acts with constant
    coefficients.
    """
    a = m.a1 if x <= 0 else m.a2
    dt = (green_fn(m, u + step, x, z) - green_fn(m, u - step, x, z)) / (2 * step)
    dxx = (
        green_fn(m, u, x + step, z) - 2 * green_fn(m, u, x, z) + green_fn(m, u, x - step, z)
    ) / step**2
    return float(dt - 0.5 * a * dxx)
