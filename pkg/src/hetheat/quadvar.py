"""Renormalised quadratic variation and the limit-theorem experiments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from . import rng
from .cache import GramCache
from .chaos import berry_esseen_value, expected_vsq
from .covariance import (
    DEFAULT_H_GRID,
    IncrementGram,
    InvalidGramError,
    QuadratureSpec,
    build_gram,
    coarsen_gram,
    loglog_slope,
    variogram,
)
from .kernel import KernelFn
from .sampler import FieldSample, cholesky_factor, cholesky_increments, dyadic_levels

DEFAULT_N_LIST = (16, 32, 64, 128, 256, 512)
DEFAULT_M = 10_000


@dataclass(frozen=True)
class QuadVarStat:
    n: int
    v: float
    v_tilde: float


def _checked_variances(gram: IncrementGram) -> np.ndarray:
    s2 = gram.variances
    if np.any(~(s2 > 0)):
        j = int(np.flatnonzero(~(s2 > 0))[0])
        raise InvalidGramError(f"increment variance at j={j} is {s2[j]!r}; need > 0")
    return s2


def v_tilde_batch(increments: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """``V~_N`` for each row of ``increments`` (shape ``(..., N)``)."""
    n = increments.shape[-1]
    v = np.sum(increments**2 / variances - 1.0, axis=-1)
    return v / math.sqrt(2.0 * n)


def v_stat(sample: FieldSample, gram: IncrementGram) -> QuadVarStat:
    if sample.grid_n != gram.grid_n or not math.isclose(sample.t, gram.t):
        raise ValueError(
            f"sample (t={sample.t}, N={sample.grid_n}) does not match gram (t={gram.t}, N={gram.grid_n})"
        )
    s2 = _checked_variances(gram)
    v = float(np.sum(sample.increments**2 / s2 - 1.0))
    return QuadVarStat(gram.grid_n, v, v / math.sqrt(2.0 * gram.grid_n))


def ks_distance(samples, cdf: Callable = ndtr) -> float:
    """Two-sided Kolmogorov distance between the empirical law and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise ValueError("ks_distance needs at least one sample")
    f = cdf(x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - f), np.max(f - (i - 1) / m)))


def ks_null(m_replicas: int, seed: int) -> float:
    """KS distance of ``m_replicas`` exact N(0,1) draws: the Monte Carlo floor."""
    z = rng.normals(seed, 0, m_replicas, domain=rng.REFERENCE)
    return ks_distance(z)


# --------------------------------------------------------------------------
# CLT


@dataclass
class CltRow:
    n: int
    m: int
    ks: float
    mean: float
    var: float
    e_vsq: float
    be_value: float


@dataclass
class CltReport:
    rows: list[CltRow]
    slope: float              # log KS vs log N
    be_slope: float           # log berry_esseen_value vs log N
    ks_floor: float           # KS of M exact normal draws
    seed: int

    def write_csv(self, path, extra: Mapping | None = None) -> None:
        extra = dict(extra or {})
        cols = ["n", "m", "ks", "mean", "var", "e_vsq", "be_value", "ks_slope", "be_slope", "ks_floor"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols + list(extra))
            for r in self.rows:
                w.writerow(
                    [r.n, r.m] + [repr(float(v)) for v in (r.ks, r.mean, r.var, r.e_vsq, r.be_value,
                                                          self.slope, self.be_slope, self.ks_floor)]
                    + list(extra.values())
                )


def clt_experiment(
    k: KernelFn,
    t: float,
    n_list: Sequence[int] = DEFAULT_N_LIST,
    m_replicas: int = DEFAULT_M,
    seed: int = 0,
    q: QuadratureSpec | None = None,
    cache: GramCache | None | bool = None,
) -> CltReport:
    """KS distance of ``V~_N`` to N(0,1) over an increasing ladder of ``N``.

    Each ``N`` draws from its own seed derived from ``(seed, N)``.
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 1 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"n_list must be strictly increasing, got {n_list}")
    if m_replicas < 1000:
        raise ValueError(f"m_replicas must be >= 1000, got {m_replicas}")
    rows = []
    for n in n_list:
        gram = build_gram(k, t, n, q, cache)
        s2 = _checked_variances(gram)
        inc = cholesky_increments(gram, rng.derive(seed, n), m_replicas)
        vt = v_tilde_batch(inc, s2)
        rows.append(CltRow(
            n=n,
            m=m_replicas,
            ks=ks_distance(vt),
            mean=float(vt.mean()),
            var=float(vt.var(ddof=1)),
            e_vsq=expected_vsq(gram)[0],
            be_value=berry_esseen_value(gram),
        ))
    ns = [r.n for r in rows]
    if len(rows) > 1:
        slope = loglog_slope(ns, [r.ks for r in rows])
        be_slope = loglog_slope(ns, [r.be_value for r in rows])
    else:
        slope = be_slope = float("nan")
    return CltReport(rows, slope, be_slope, ks_null(m_replicas, seed), seed)


# --------------------------------------------------------------------------
# almost-sure CLT, lacunary form


def _clamped_abs(x, c=2.0):
    return np.minimum(np.abs(x), c)


#: bounded continuous test functions shipped with the experiment
SHIPPED_PHI: dict[str, Callable] = {
    "cos": np.cos,
    "sin": np.sin,
    "gauss": lambda x: np.exp(-0.5 * np.asarray(x) ** 2),
    "clamped_abs": _clamped_abs,
}


def gaussian_expectation(phi: Callable) -> float:
    """``E phi(Z)`` by adaptive quadrature against the standard normal density."""
    dens = lambda z: float(phi(z)) * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    total = 0.0
    for a, b in ((-math.inf, -8.0), (-8.0, 0.0), (0.0, 8.0), (8.0, math.inf)):
        val, _ = integrate.quad(dens, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += val
    return total


@dataclass
class AscltPath:
    replica_id: int
    v_tilde: np.ndarray                 # V~_{2^k}, k = 1..K
    averages: dict[str, np.ndarray]     # A_k(phi), k = 1..K


@dataclass
class AscltReport:
    """Lacunary almost-sure CLT check on ``i = 2**k`` with uniform weights.

    This is a log-density analogue of the harmonic average over all ``i``;
    whether it inherits the almost-sure limit is not established.
    """

    levels: list[int]
    targets: dict[str, float]
    paths: list[AscltPath]
    seed: int
    note: str = "lacunary average over i = 2**k, uniform weights"
    meta: dict = field(default_factory=dict)

    def errors(self, name: str) -> np.ndarray:
        """``|A_k(phi) - E phi(Z)|``, shape ``(n_paths, K)``."""
        return np.array([np.abs(p.averages[name] - self.targets[name]) for p in self.paths])

    def check(self, early: int = 4, tol: float = 0.15) -> dict[str, np.ndarray]:
        """Per path and test function: late error below early error and below ``tol``."""
        out = {}
        for name in self.targets:
            e = self.errors(name)
            out[name] = (e[:, -1] < e[:, early - 1]) & (e[:, -1] <= tol)
        return out

    def write_csv(self, path, extra: Mapping | None = None) -> None:
        extra = dict(extra or {})
        names = list(self.targets)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replica_id", "k", "n", "v_tilde"]
                       + [f"A_{nm}" for nm in names] + [f"E_{nm}" for nm in names] + list(extra))
            for p in self.paths:
                for i, k in enumerate(self.levels):
                    w.writerow(
                        [p.replica_id, k, 2**k, repr(float(p.v_tilde[i]))]
                        + [repr(float(p.averages[nm][i])) for nm in names]
                        + [repr(float(self.targets[nm])) for nm in names]
                        + list(extra.values())
                    )


def asclt_experiment(
    k: KernelFn,
    t: float,
    K: int = 12,
    phi_set: Mapping[str, Callable] | None = None,
    n_paths: int = 8,
    seed: int = 0,
    q: QuadratureSpec | None = None,
    cache: GramCache | None | bool = None,
) -> AscltReport:
    """Running averages ``A_k = (1/k) sum_{j<=k} phi(V~_{2^j})`` along single paths.

    Each path is one exact sample at level ``K``; coarser levels come from
    pairwise sums of its increments, so all levels are consistent.
    """
    if not 1 <= K <= 13:
        raise ValueError(f"K must be in [1, 13], got {K}")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    phi_set = dict(SHIPPED_PHI if phi_set is None else phi_set)
    targets = {name: gaussian_expectation(fn) for name, fn in phi_set.items()}
    top = build_gram(k, t, 2**K, q, cache)
    factor, _ = cholesky_factor(top)
    levels = list(range(1, K + 1))
    variances = {j: _checked_variances(coarsen_gram(top, 2**j)) for j in levels}
    fine = cholesky_increments(top, seed, n_paths, factor=factor)
    paths = []
    counts = np.arange(1, K + 1)
    for r in range(n_paths):
        nested = dyadic_levels(fine[r])
        vt = np.array([v_tilde_batch(nested[j], variances[j]) for j in levels])
        avgs = {name: np.cumsum(np.asarray(fn(vt), dtype=float) * np.ones(K)) / counts
                for name, fn in phi_set.items()}
        paths.append(AscltPath(r, vt, avgs))
    return AscltReport(levels, targets, paths, seed)


# --------------------------------------------------------------------------
# Hölder exponent


def holder_estimate(
    k: KernelFn,
    t: float,
    h_levels: Sequence[float] = DEFAULT_H_GRID,
    q: QuadratureSpec | None = None,
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
    x: float = 0.5,
) -> float:
    """Half the log-log slope of the variogram, ``gamma_hat``.

    ``transform`` maps the vector of increment variances before the fit
    (e.g. ``np.square`` doubles the estimate).
    """
    hs = np.asarray(h_levels, dtype=float)
    if hs.size < 2:
        raise ValueError("need at least two h levels")
    ex = np.log2(hs)
    if np.any(np.abs(ex - np.round(ex)) > 1e-12) or hs.min() < 2.0**-11 or hs.max() > 2.0**-3:
        raise ValueError("h_levels must be dyadic within [2^-11, 2^-3]")
    v = variogram(k, t, hs, x=x, q=q)
    if transform is not None:
        v = np.asarray(transform(v), dtype=float)
    return loglog_slope(hs, v) / 2.0
