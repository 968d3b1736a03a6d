"""Gaussian law of the spatial slice ``u(t, .)`` of the mild solution.

By the Wiener isometry, ``E[u(t,x) u(t,y)] = int_0^t int G(u,x,z) G(u,y,z) dz du``.
The spatial integral is taken from the kernel (closed form for the two-media
kernel); the time integral is done adaptively after ``u = v**2``, which
removes the ``u**-1/2`` endpoint singularity.

For the two-media kernel on ``[0, inf)`` the time integral also has a closed
form (used by :func:`build_gram` by default, cross-checked against the
quadrature path in the test-suite).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, special

from .cache import GramCache
from .kernel import KernelFn, Medium, PiecewiseKernel, time_integrated_t

log = logging.getLogger(__name__)

DEFAULT_H_GRID = tuple(2.0 ** -k for k in range(3, 12))


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 200
    time_substitution: bool = True

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("quadrature tolerances must be > 0")
        if self.max_subdivisions < 64:
            raise ValueError("max_subdivisions must be >= 64")

    def as_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "max_subdivisions": self.max_subdivisions,
            "time_substitution": self.time_substitution,
        }


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimate, error, entry=None):
        super().__init__(f"{message}: estimate={estimate!r}, error bound={error!r}")
        self.estimate = estimate
        self.error = error
        self.entry = entry


class InvalidGramError(ValueError):
    pass


# --------------------------------------------------------------------------
# time quadrature


def _breakpoints(t: float, scales: Iterable[float]) -> list[float]:
    """Geometric breakpoints in ``v`` resolving features down to the smallest scale."""
    top = math.sqrt(t)
    positive = [s for s in scales if s > 0]
    smallest = min(positive) if positive else top
    floor = min(smallest, top) / 16.0
    pts = []
    v = top / 2.0
    while v > floor:
        pts.append(v)
        v /= 2.0
    return sorted(pts)


def _time_integral(
    inner, t: float, q: QuadratureSpec, scales: Iterable[float] = (), what: str = "integral"
) -> float:
    """``int_0^t inner(u) du`` where ``inner`` is the spatial integral at time ``u``."""
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t!r}")
    if q.time_substitution:
        pts = _breakpoints(t, scales)
        f = lambda v: 2.0 * v * float(inner(v * v)) if v > 0 else _limit_at_zero(inner)
        val, err, info = _quad(f, 0.0, math.sqrt(t), pts, q)
    else:
        pts = [p * p for p in _breakpoints(t, scales)]
        val, err, info = _quad(lambda u: float(inner(u)) if u > 0 else 0.0, 0.0, t, pts, q)
    if err > max(q.abs_tol, q.rel_tol * abs(val)) * 10 and info:
        raise QuadratureError(f"{what} did not converge ({info})", val, err)
    return val


def _limit_at_zero(inner) -> float:
    v = 1e-12
    return 2.0 * v * float(inner(v * v))


def _quad(f, a, b, pts, q):
    limit = max(q.max_subdivisions, 4 * (len(pts) + 1))
    out = integrate.quad(
        f, a, b, points=pts or None, epsabs=q.abs_tol, epsrel=q.rel_tol, limit=limit,
        full_output=1,
    )
    val, err = out[0], out[1]
    info = out[3] if len(out) > 3 else ""
    return val, err, info


def _scales(k: KernelFn, *dists: float) -> list[float]:
    a = getattr(k, "scale", 1.0)
    lo = 1.0 / (2.0 * math.sqrt(a))
    return [abs(d) * lo for d in dists if d != 0]


# --------------------------------------------------------------------------
# scalar covariance functionals


def cov_field(k: KernelFn, t: float, x: float, y: float, q: QuadratureSpec | None = None) -> float:
    """``E[u(t,x) u(t,y)]`` by adaptive quadrature."""
    q = q or QuadratureSpec()
    inner = lambda u: k.spatial_inner(u, x, y)
    return _time_integral(inner, t, q, _scales(k, x - y, x, y), "cov_field")


def increment_variance(
    k: KernelFn, t: float, x: float, y: float, q: QuadratureSpec | None = None
) -> float:
    """``E[(u(t,y) - u(t,x))^2]``, integrating the squared kernel difference directly."""
    if x == y:
        return 0.0
    q = q or QuadratureSpec()

    def inner(u):
        return k.spatial_inner(u, y, y) + k.spatial_inner(u, x, x) - 2.0 * k.spatial_inner(u, x, y)

    return _time_integral(inner, t, q, _scales(k, y - x, x, y), "increment_variance")


def cross_increment(
    k: KernelFn, t: float, x: float, y: float, h: float, q: QuadratureSpec | None = None
) -> float:
    """``E[(u(t,x+h) - u(t,x)) (u(t,y+h) - u(t,y))]``."""
    if not h > 0:
        raise ValueError(f"h must be > 0, got {h!r}")
    q = q or QuadratureSpec()
    p = k.spatial_inner

    def inner(u):
        return p(u, x + h, y + h) - p(u, x + h, y) - p(u, x, y + h) + p(u, x, y)

    scales = _scales(k, h, y - x, y - x + h, y - x - h, x, y)
    return _time_integral(inner, t, q, scales, "cross_increment")


# --------------------------------------------------------------------------
# closed form on the half line


def _coupling_integral(delta, sigma, t):
    """``int_0^t exp(-delta^2/4u) erfc(sigma/(2 sqrt u)) / (2 sqrt(pi u)) du`` for ``sigma >= |delta|``.

    Obtained after ``v = 1/(2 sqrt u)`` and one integration by parts; the
    remaining Gaussian-times-erfc integral is an Owen T function.
    """
    delta = np.abs(np.asarray(delta, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    delta, sigma = np.broadcast_arrays(delta, sigma)
    shape = delta.shape
    delta, sigma = delta.ravel(), sigma.ravel()
    v0 = 1.0 / (2.0 * math.sqrt(t))
    out = np.exp(-((delta * v0) ** 2)) * special.erfc(sigma * v0) / v0

    pos = delta > 0
    if np.any(pos):
        d = delta[pos]
        h = math.sqrt(2.0) * d * v0
        owen = special.owens_t(h, -sigma[pos] / d) + 0.5 * special.ndtr(-h)
        out[pos] -= 4.0 * math.sqrt(math.pi) * d * owen
    sp = sigma > 0
    if np.any(sp):
        s = sigma[sp]
        out[sp] -= s / math.sqrt(math.pi) * special.exp1((delta[sp] ** 2 + s * s) * v0 * v0)
    out = (out / (2.0 * math.sqrt(math.pi))).reshape(shape)
    return out[()] if out.ndim == 0 else out


def half_line_covariance(m: Medium, t: float, x, y):
    """Closed-form ``E[u(t,x) u(t,y)]`` for the two-media kernel, ``x, y >= 0``.

    With ``xi = x/sqrt(a2)``, ``eta = y/sqrt(a2)`` the spatial product splits
    into a translation-invariant part in ``xi - eta``, a reflected part in
    ``xi + eta`` and a coupling term that vanishes when ``rho1 == rho2``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("half_line_covariance requires x, y >= 0")
    s2 = math.sqrt(m.a2)
    xi, eta = x / s2, y / s2
    delta = xi - eta
    sigma = xi + eta
    b = m.beta
    kappa = 0.5 * ((b * b - 1.0) / s2 + (1.0 - b) ** 2 / math.sqrt(m.a1))
    out = (time_integrated_t(0.0, delta, t) + b * time_integrated_t(0.0, sigma, t)) / s2
    if kappa != 0.0:
        out = out + kappa * _coupling_integral(delta, sigma, t)
    return out


# --------------------------------------------------------------------------
# Gram matrices


@dataclass
class IncrementGram:
    """Inner products of the increment indicators on ``x_i = i/N``."""

    t: float
    grid_n: int
    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.entries).copy()

    @property
    def correlation(self) -> np.ndarray:
        s = np.sqrt(self.variances)
        r = self.entries / np.outer(s, s)
        np.fill_diagonal(r, 1.0)
        return r

    def check(self) -> None:
        v = self.variances
        if np.any(~(v > 0)):
            j = int(np.flatnonzero(~(v > 0))[0])
            raise InvalidGramError(f"nonpositive increment variance at j={j}: {v[j]!r}")


def _grid_covariance_closed(m: Medium, t: float, n: int, rows: int = 512) -> np.ndarray:
    x = np.arange(n + 1) / n
    c = np.empty((n + 1, n + 1))
    for start in range(0, n + 1, rows):
        stop = min(n + 1, start + rows)
        c[start:stop] = half_line_covariance(m, t, x[start:stop, None], x[None, :])
    return c


def _gram_closed(m: Medium, t: float, n: int) -> np.ndarray:
    c = _grid_covariance_closed(m, t, n)
    return np.diff(np.diff(c, axis=0), axis=1)


def _gram_quadrature(k: KernelFn, t: float, n: int, q: QuadratureSpec) -> np.ndarray:
    x = np.arange(n + 1) / n
    h = 1.0 / n
    g = np.empty((n, n))
    for j in range(n):
        for l in range(j, n):
            try:
                if j == l:
                    val = increment_variance(k, t, x[j], x[j + 1], q)
                else:
                    val = cross_increment(k, t, x[j], x[l], h, q)
            except QuadratureError as exc:
                exc.entry = (j, l)
                raise
            g[j, l] = g[l, j] = val
    return g


def build_gram(
    k: KernelFn,
    t: float,
    n: int,
    q: QuadratureSpec | None = None,
    cache: GramCache | None | bool = None,
    method: str = "auto",
) -> IncrementGram:
    """Increment Gram matrix on the uniform partition of ``[0, 1]`` into ``n`` cells.

    Parameters
    ----------
    method : {"auto", "closed", "quadrature"}
        ``closed`` uses :func:`half_line_covariance` (two-media kernel only);
        ``quadrature`` integrates every entry adaptively.  ``auto`` picks
        ``closed`` when available.
    cache : GramCache, None or False
        ``None`` uses a cache at the default location, ``False`` disables it.
    """
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t!r}")
    q = q or QuadratureSpec()
    if method == "auto":
        method = "closed" if isinstance(k, PiecewiseKernel) else "quadrature"
    if method == "closed" and not isinstance(k, PiecewiseKernel):
        raise ValueError("closed-form Gram is only available for PiecewiseKernel")
    if method not in ("closed", "quadrature"):
        raise ValueError(f"unknown method {method!r}")

    token = k.cache_token()
    params = None
    if cache is None:
        cache = GramCache()
    if cache is not False and token is not None:
        params = {"kernel": token, "t": float(t), "n": int(n), "method": method}
        if method == "quadrature":
            params["quadrature"] = q.as_dict()
        cached = cache.load(params)
        if cached is not None:
            return IncrementGram(t, n, cached, {"method": method, "cache": "hit"})

    if method == "closed":
        g = _gram_closed(k.medium, t, n)
    else:
        g = _gram_quadrature(k, t, n, q)
    g = 0.5 * (g + g.T)
    if n <= 2048:
        lam = np.linalg.eigvalsh(g)[0]
        if lam < -1e-10 * np.trace(g):
            log.warning("Gram N=%d has eigenvalue %.3e below PSD tolerance", n, lam)
    if params is not None:
        cache.store(params, g)
    return IncrementGram(t, n, g, {"method": method, "cache": "miss" if params else "off"})


def coarsen_gram(gram: IncrementGram, n: int) -> IncrementGram:
    """Gram on the coarser grid of ``n`` cells by summing blocks of children."""
    big = gram.grid_n
    if n < 1 or big % n:
        raise ValueError(f"{n} does not divide {big}")
    r = big // n
    g = gram.entries.reshape(n, r, n, r).sum(axis=(1, 3))
    return IncrementGram(gram.t, n, g, dict(gram.meta, coarsened_from=big))


# --------------------------------------------------------------------------
# conditions H1 / H2 / H3


@dataclass
class ConditionReport:
    condition: str
    constant: float
    worst_ratio: float
    passed: bool
    h_grid: tuple[float, ...]
    slope: float | None = None
    ratios: list[tuple[float, float, float, float]] = field(default_factory=list)
    note: str = ""

    def row(self) -> dict:
        return {
            "condition": self.condition,
            "constant": repr(self.constant),
            "worst_ratio": repr(self.worst_ratio),
            "passed": int(self.passed),
            "slope": "" if self.slope is None else repr(self.slope),
            "h_min": repr(min(self.h_grid)),
            "h_max": repr(max(self.h_grid)),
            "n_points": len(self.ratios),
        }


def _interior_points(h_max: float) -> np.ndarray:
    xs = 1.0 / 16.0 + np.arange(7) / 8.0
    return xs[xs + h_max <= 15.0 / 16.0 + 1e-12]


def loglog_slope(h, values) -> float:
    h = np.asarray(h, dtype=float)
    v = np.asarray(values, dtype=float)
    slope, _ = np.polyfit(np.log(h), np.log(v), 1)
    return float(slope)


def verify_condition(
    k: KernelFn,
    t: float,
    condition: str,
    h_grid: Sequence[float] = DEFAULT_H_GRID,
    q: QuadratureSpec | None = None,
) -> ConditionReport:
    """Fit the constant of H1, H2 or H3 on an interior sweep of ``[0, 1]``.

    H1: ``min var/h`` (lower constant).  H2: ``max var/h`` (upper constant).
    H3: ``max |cross|/h^2`` over pairs of non-overlapping increments
    (``y - x >= h``); overlapping increments are excluded because their
    covariance is of order ``h``, not ``h^2``.
    """
    condition = condition.upper()
    if condition not in ("H1", "H2", "H3"):
        raise ValueError(f"unknown condition {condition!r}")
    hs = tuple(float(h) for h in h_grid)
    if not hs or any(not (0 < h <= 1) for h in hs):
        raise ValueError("h_grid must be a nonempty subset of (0, 1]")
    q = q or QuadratureSpec()
    xs = _interior_points(max(hs))
    ratios = []
    if condition in ("H1", "H2"):
        for h in hs:
            for x in xs:
                var = increment_variance(k, t, x, x + h, q)
                ratios.append((x, x + h, h, var / h))
    else:
        for h in hs:
            for i, x in enumerate(xs):
                for y in xs[i:]:
                    if y - x < h - 1e-15:
                        continue
                    c = cross_increment(k, t, x, y, h, q)
                    ratios.append((x, y, h, c / h**2))
    r = np.array([row[3] for row in ratios])
    finite = bool(np.all(np.isfinite(r)))
    if condition == "H1":
        const = worst = float(r.min())
    elif condition == "H2":
        const = worst = float(r.max())
    else:
        # the bound is one-sided; cross terms are typically negative, so the
        # admissible positive constant is taken from the magnitude
        worst = float(r.max())
        const = float(np.abs(r).max())
    passed = finite and math.isfinite(const) and const > 0
    slope = None
    if condition in ("H1", "H2"):
        per_h = [np.mean([row[3] * row[2] for row in ratios if row[2] == h]) for h in hs]
        if len(hs) > 1:
            slope = loglog_slope(hs, per_h)
    return ConditionReport(condition, const, worst, passed, hs, slope, ratios)


def variogram(k: KernelFn, t: float, h_grid: Sequence[float], x: float = 0.5,
              q: QuadratureSpec | None = None) -> np.ndarray:
    """Increment variances ``E[(u(t,x+h) - u(t,x))^2]`` for each ``h``."""
    return np.array([increment_variance(k, t, x, x + h, q) for h in h_grid])


def write_condition_csv(reports: Sequence[ConditionReport], path) -> None:
    rows = [r.row() for r in reports]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------
# variance bound and the lower-bound constant for the E^- piece


@dataclass
class VarianceBound:
    max_variance: float
    c4: float
    horizon: float
    values: np.ndarray


def sup_variance_check(
    k: KernelFn, horizon: float, grid: Sequence[tuple[float, float]],
    q: QuadratureSpec | None = None,
) -> VarianceBound:
    """``max E[u(t,x)^2]`` over ``(t, x)`` pairs and the fitted ``C4 = max / sqrt(T)``."""
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    vals = np.array([cov_field(k, t, x, x, q) for t, x in grid])
    mx = float(vals.max())
    return VarianceBound(mx, mx / math.sqrt(horizon), horizon, vals)


def e_minus_piece(m: Medium, t: float, x: float, y: float, q: QuadratureSpec | None = None) -> float:
    """``int_0^t (2 pi u)^-1 int (E^-(u,y,z) - E^-(u,x,z))^2 dz du`` for ``x, y >= 0``."""
    q = q or QuadratureSpec()
    s1, s2 = math.sqrt(m.a1), math.sqrt(m.a2)
    fx, fy = x / s2, y / s2

    def prod(u, a, b):
        # E^-(a) E^-(b) integrated over z > 0 (w = z/s2) and z <= 0 (w = z/s1)
        d2 = (a - b) ** 2 / (4 * u)
        g = 0.5 * math.sqrt(math.pi * u) * math.exp(-d2)
        c = (a + b) / (2 * math.sqrt(u))
        return g * (s2 * special.erfc(-c) + s1 * special.erfc(c))

    def inner(u):
        return (prod(u, fy, fy) + prod(u, fx, fx) - 2 * prod(u, fx, fy)) / (2 * math.pi * u)

    return _time_integral(inner, t, q, [abs(y - x) / (2 * max(s1, s2))], "e_minus_piece")


def e_minus_lower_constant(m: Medium, t: float, a: float = 1.0) -> float:
    """Explicit lower constant ``c`` with ``e_minus_piece >= c |y - x|`` on ``[0, a]``."""
    si, _ = special.sici(1.0)
    tail = (1.0 - math.cos(1.0)) + (math.pi / 2.0 - si)  # int_1^inf (1 - cos z)/z^2 dz
    return 2.0 / (math.sqrt(m.a2) * math.pi) * (1.0 - math.exp(-t * m.a2 / a**2)) * tail
