"""Exact Gaussian sampling of spatial increments, and a noise-grid oracle."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .covariance import GramCache, IncrementGram, QuadratureSpec, build_gram
from .kernel import KernelFn

#: replicas are generated in aligned blocks of this size; a replica's bits
#: depend only on (gram, seed, replica_id)
BLOCK = 64

JITTER_STEPS = (0.0, 1e-14, 1e-12, 1e-10)


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, smallest_eigenvalue: float):
        super().__init__(
            f"Cholesky failed even with maximal jitter; smallest eigenvalue {smallest_eigenvalue:.3e}"
        )
        self.smallest_eigenvalue = smallest_eigenvalue


@dataclass
class FieldSample:
    t: float
    grid_n: int
    increments: np.ndarray
    seed: int
    replica_id: int
    values: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class DyadicSample:
    """Increments at level ``K`` and all coarser dyadic levels.

    ``levels[k]`` holds the ``2**k`` increments of the grid ``j / 2**k``.
    """

    t: float
    level: int
    levels: dict[int, np.ndarray]
    seed: int
    replica_id: int

    @property
    def finest(self) -> np.ndarray:
        return self.levels[self.level]


def cholesky_factor(gram: IncrementGram) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of the Gram, stepping through the jitter ladder."""
    g = gram.entries
    n = g.shape[0]
    scale = np.trace(g) / n
    for step in JITTER_STEPS:
        lam = step * scale
        try:
            return np.linalg.cholesky(g + lam * np.eye(n)), lam
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(float(np.linalg.eigvalsh(g)[0]))


def cholesky_increments(
    gram: IncrementGram,
    seed: int,
    n_replicas: int,
    start: int = 0,
    factor: np.ndarray | None = None,
) -> np.ndarray:
    """Array of shape ``(n_replicas, N)``; row ``i`` is replica ``start + i``."""
    if factor is None:
        factor, _ = cholesky_factor(gram)
    n = factor.shape[0]
    out = np.empty((n_replicas, n))
    stop = start + n_replicas
    first_block = start // BLOCK
    last_block = (stop - 1) // BLOCK if n_replicas else first_block - 1
    for b in range(first_block, last_block + 1):
        ids = range(b * BLOCK, (b + 1) * BLOCK)
        z = np.stack([rng.normals(seed, i, n) for i in ids])
        block = z @ factor.T
        lo = max(start, b * BLOCK)
        hi = min(stop, (b + 1) * BLOCK)
        out[lo - start : hi - start] = block[lo - b * BLOCK : hi - b * BLOCK]
    return out


def cholesky_sample(
    gram: IncrementGram, seed: int, n_replicas: int, start: int = 0
) -> list[FieldSample]:
    """Independent exact samples of the increment vector with covariance ``gram``."""
    inc = cholesky_increments(gram, seed, n_replicas, start)
    return [
        FieldSample(gram.t, gram.grid_n, inc[i], seed, start + i) for i in range(n_replicas)
    ]


def block_sums(fine: np.ndarray, n: int) -> np.ndarray:
    """Sum consecutive blocks of ``len(fine) // n`` children, left to right."""
    r = fine.shape[-1] // n
    blocks = fine.reshape(fine.shape[:-1] + (n, r))
    acc = blocks[..., 0].copy()
    for c in range(1, r):
        acc += blocks[..., c]
    return acc


def dyadic_sample(
    k: KernelFn,
    t: float,
    level: int,
    seed: int,
    replica_id: int = 0,
    gram: IncrementGram | None = None,
    q: QuadratureSpec | None = None,
    cache: GramCache | None | bool = None,
    factor: np.ndarray | None = None,
) -> DyadicSample:
    if not 0 <= level <= 13:
        raise ValueError(f"level must be in [0, 13], got {level}")
    n = 2**level
    if gram is None:
        gram = build_gram(k, t, n, q, cache)
    if gram.grid_n != n:
        raise ValueError(f"gram has N={gram.grid_n}, expected {n}")
    fine = cholesky_increments(gram, seed, 1, replica_id, factor)[0]
    return DyadicSample(t, level, dyadic_levels(fine), seed, replica_id)


def dyadic_levels(fine: np.ndarray) -> dict[int, np.ndarray]:
    """All coarser dyadic levels of ``fine``, each the pairwise sum of the next finer.

    Level ``k`` is bitwise equal to ``block_sums(level k+1, 2**k)``.
    """
    top = int(round(math.log2(fine.shape[-1])))
    if 2**top != fine.shape[-1]:
        raise ValueError("length must be a power of two")
    levels = {top: fine}
    for k in range(top - 1, -1, -1):
        levels[k] = block_sums(levels[k + 1], 2**k)
    return levels


# --------------------------------------------------------------------------
# noise-grid oracle


@dataclass
class NoiseGrid:
    """Cells of the discretised white noise and the kernel weights on them.

    Cell arrays are flat and aligned with the columns of ``weights``.
    """

    u: np.ndarray          # time-to-go at each cell's midpoint
    du: np.ndarray         # cell width in u
    y: np.ndarray          # spatial midpoint
    dy: np.ndarray         # spatial width
    weights: np.ndarray    # shape (len(x_grid), n_cells)

    def variance(self) -> np.ndarray:
        """Exact variance of the discretised field at each grid point."""
        return np.sum(self.weights**2, axis=1)

    def increment_covariance(self) -> np.ndarray:
        d = np.diff(self.weights, axis=0)
        return d @ d.T


def noise_grid(
    k: KernelFn,
    t: float,
    x_grid: Sequence[float],
    ds: float,
    dy: float,
    half_width: float,
    graded: bool = True,
    resolve: float = 0.25,
) -> NoiseGrid:
    """Discretise ``int_0^t int G(t-s, x, y) W(ds, dy)`` on cells.

    With ``graded`` the ``ceil(t/ds)`` time cells are uniform in
    ``v = sqrt(t - s)`` rather than in ``s``, which resolves the
    ``(t-s)**-1/2`` concentration of kernel mass near ``s = t``.

    In each time slab the spatial width is ``min(dy, resolve * sqrt(u * scale))``
    so the kernel is sampled at a fixed number of points per standard
    deviation even for small ``u``; only cells within
    ``min(half_width, 10 sqrt(u_hi * scale))`` of some grid point are kept.
    Cell edges are aligned to ``min(x_grid)``.
    """
    if not (ds > 0 and dy > 0 and half_width > 0 and resolve > 0):
        raise ValueError("ds, dy, half_width and resolve must be > 0")
    x = np.asarray(x_grid, dtype=float)
    scale = float(getattr(k, "scale", 1.0))
    n_t = max(1, math.ceil(t / ds))
    if graded:
        v_edges = np.linspace(0.0, math.sqrt(t), n_t + 1)
        u_edges = v_edges**2
        u_mid = (0.5 * (v_edges[:-1] + v_edges[1:])) ** 2
    else:
        u_edges = np.linspace(0.0, t, n_t + 1)
        u_mid = 0.5 * (u_edges[:-1] + u_edges[1:])
    du = np.diff(u_edges)
    x0 = x.min()

    cols_u, cols_du, cols_y, cols_dy, cols_w = [], [], [], [], []
    for j in range(n_t):
        h = min(dy, resolve * math.sqrt(u_mid[j] * scale))
        reach = min(half_width, 10.0 * math.sqrt(u_edges[j + 1] * scale))
        lo = math.floor((x.min() - reach - x0) / h)
        hi = math.ceil((x.max() + reach - x0) / h)
        y = x0 + (np.arange(lo, hi) + 0.5) * h
        near = np.min(np.abs(y[:, None] - x[None, :]), axis=1) <= reach + h
        y = y[near]
        g = np.asarray(k(u_mid[j], x[:, None], y[None, :]), dtype=float)
        cols_w.append(g * math.sqrt(du[j] * h))
        cols_u.append(np.full(y.size, u_mid[j]))
        cols_du.append(np.full(y.size, du[j]))
        cols_y.append(y)
        cols_dy.append(np.full(y.size, h))
    return NoiseGrid(
        np.concatenate(cols_u),
        np.concatenate(cols_du),
        np.concatenate(cols_y),
        np.concatenate(cols_dy),
        np.concatenate(cols_w, axis=1),
    )


def noise_grid_oracle(
    k: KernelFn,
    t: float,
    x_grid: Sequence[float],
    ds: float,
    dy: float,
    half_width: float,
    seed: int,
    n_replicas: int = 1,
    start: int = 0,
    graded: bool = True,
    grid: NoiseGrid | None = None,
) -> list[FieldSample]:
    """Monte Carlo samples of ``u(t, x_grid)`` from discretised white noise.

    Independent of the Gram/Cholesky route: each cell gets an i.i.d. normal
    scaled by ``sqrt(cell area)``.  The remaining bias comes from midpoint
    sampling of the kernel and from the tail beyond ``half_width``.
    """
    if grid is None:
        grid = noise_grid(k, t, x_grid, ds, dy, half_width, graded)
    n_cells = grid.weights.shape[1]
    x = np.asarray(x_grid, dtype=float)
    meta = {"ds": ds, "dy": dy, "half_width": half_width, "graded": graded, "x_grid": x.tolist()}
    out = []
    for r in range(start, start + n_replicas):
        xi = rng.normals(seed, r, n_cells, domain=rng.NOISE_GRID)
        vals = grid.weights @ xi
        out.append(FieldSample(t, x.size - 1, np.diff(vals), seed, r, vals, meta))
    return out


def write_samples_csv(samples: Sequence[FieldSample], path) -> None:
    """One replica per row: ``replica_id, seed, d_0, ..., d_{N-1}``."""
    n = samples[0].increments.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica_id", "seed"] + [f"d{j}" for j in range(n)])
        for s in samples:
            w.writerow([s.replica_id, s.seed] + [repr(float(v)) for v in s.increments])
