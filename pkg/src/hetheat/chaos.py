"""Exact second-chaos diagnostics for the renormalised quadratic variation.

``V~_N = (2N)^{-1/2} sum_j (D_j^2/s_j^2 - 1)`` lives in the second Wiener
chaos.  Writing ``R`` for the correlation matrix of the increments, every
moment-type quantity used by the normal-approximation bounds is a trace of a
power of ``R``:

* ``E[V~_N^2] = tr(R^2) / N``
* ``Var ||D V~_N||^2 = 8 tr(R^4) / N^2``
* ``||g_N (x)_1 g_N||^2 = tr(R^4) / (4 sigma_N^4 N^2)`` with ``sigma_N^2 = E[V~_N^2]``.

The quadruple sums are evaluated through matrix products in ``O(N^3)``;
brute-force loops are kept for small ``N`` as independent checks.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .covariance import IncrementGram, InvalidGramError, coarsen_gram


def hermite(q: int, x):
    """Hermite polynomial with the ``1/q!`` normalisation, so ``H_2(x) = (x^2 - 1)/2``."""
    if q < 0:
        raise ValueError(f"degree must be >= 0, got {q}")
    if q > 20:
        raise ValueError("degree above 20 is not supported")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if q == 0:
        return prev[()] if prev.ndim == 0 else prev
    cur = x.copy()
    for n in range(1, q):
        prev, cur = cur, (x * cur - prev) / (n + 1)
    return cur[()] if cur.ndim == 0 else cur


def _correlation(gram: IncrementGram | np.ndarray) -> np.ndarray:
    if isinstance(gram, IncrementGram):
        gram.check()
        return gram.correlation
    g = np.asarray(gram, dtype=float)
    d = np.diag(g)
    if np.any(~(d > 0)):
        raise InvalidGramError("Gram diagonal must be strictly positive")
    s = np.sqrt(d)
    r = g / np.outer(s, s)
    np.fill_diagonal(r, 1.0)
    return r


def expected_vsq(gram) -> tuple[float, float, float]:
    """``(E[V~_N^2], T1, T2)`` with ``T1 = 2N`` and ``T2 = 2 sum_{j != k} R_jk^2``."""
    r = _correlation(gram)
    n = r.shape[0]
    t1 = 2.0 * n
    off = r.copy()
    np.fill_diagonal(off, 0.0)
    t2 = 2.0 * float(np.sum(off * off))
    return (t1 + t2) / (2.0 * n), t1, t2


def _trace_r4(r: np.ndarray) -> float:
    r2 = r @ r
    return float(np.sum(r2 * r2))  # tr(R^4) = ||R^2||_F^2 for symmetric R


def contraction_norm_sq(gram) -> float:
    r = _correlation(gram)
    n = r.shape[0]
    e_vsq = float(np.sum(r * r)) / n
    return _trace_r4(r) / (4.0 * e_vsq**2 * n * n)


# --------------------------------------------------------------------------
# quadruple sums split by index coincidence


def _set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


_PARTITIONS = [tuple(tuple(sorted(b)) for b in sorted(p)) for p in _set_partitions(range(4))]


def _cycle_sum_merged(r: np.ndarray, partition) -> float:
    """``sum R_ab R_bc R_cd R_da`` with the positions in each block forced equal."""
    letter = {}
    for block, ch in zip(partition, "ijkl"):
        for pos in block:
            letter[pos] = ch
    a, b, c, d = (letter[p] for p in range(4))
    spec = f"{a}{b},{b}{c},{c}{d},{d}{a}->"
    return float(np.einsum(spec, r, r, r, r, optimize="optimal"))


def _coarsenings(partition):
    """All partitions that merge blocks of ``partition``, with the merge counts."""
    blocks = list(partition)
    for grouping in _set_partitions(range(len(blocks))):
        merged = tuple(
            tuple(sorted(itertools.chain.from_iterable(blocks[i] for i in grp)))
            for grp in grouping
        )
        yield tuple(sorted(merged)), [len(grp) for grp in grouping]


def cycle_sum_by_distinct(r: np.ndarray) -> dict[int, float]:
    """Split ``tr(R^4)`` by the number of distinct indices among ``(j, k, m, l)``.

    Partition-restricted sums are inverted with the Moebius function of the
    partition lattice, ``mu = prod (-1)^(n-1) (n-1)!``.
    """
    merged = {p: _cycle_sum_merged(r, p) for p in _PARTITIONS}
    out = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
    for p in _PARTITIONS:
        exact = 0.0
        for coarse, sizes in _coarsenings(p):
            mu = 1
            for n in sizes:
                mu *= (-1) ** (n - 1) * math.factorial(n - 1)
            exact += mu * merged[coarse]
        out[len(p)] += exact
    return out


def malliavin_variance(gram, decompose: bool = False):
    """``Var(||D V~_N||^2) = (8/N^2) sum_{j,k,m,l} R_jk R_ml R_jm R_kl``.

    With ``decompose=True`` also returns ``{4: D4, 3: D3, 2: D2, 1: D1}``
    where ``D_i`` collects the terms with ``5 - i`` distinct indices (``D4``
    is the all-equal diagonal part, ``8/N``).
    """
    r = _correlation(gram)
    n = r.shape[0]
    total = 8.0 * _trace_r4(r) / n**2
    if not decompose:
        return total
    parts = cycle_sum_by_distinct(r)
    return total, {5 - d: 8.0 * v / n**2 for d, v in parts.items()}


def berry_esseen_value(gram) -> float:
    """Constant-free value of the two-term Stein bound for ``V~_N``.

    ``sqrt(Var ||DV~||^2) + sqrt(|E||DV~||^2 - 2|)`` with
    ``E||DV~||^2 = 2 E[V~^2]``.
    """
    e_vsq, _, _ = expected_vsq(gram)
    return math.sqrt(malliavin_variance(gram)) + math.sqrt(abs(2.0 * e_vsq - 2.0))


@dataclass
class ChaosDiag:
    n: int
    e_vsq: float
    t1: float
    t2_over_2n: float
    d_var: float
    contraction_sq: float
    be_bound: float
    d4: float = 0.0
    d3: float = 0.0
    d2: float = 0.0
    d1: float = 0.0


def chaos_diagnostics(gram: IncrementGram, decompose: bool = True) -> ChaosDiag:
    e_vsq, t1, t2 = expected_vsq(gram)
    n = gram.grid_n
    if decompose and n <= 1024:
        d_var, parts = malliavin_variance(gram, decompose=True)
    else:
        d_var, parts = malliavin_variance(gram), {4: float("nan"), 3: float("nan"),
                                                  2: float("nan"), 1: float("nan")}
    return ChaosDiag(
        n=n,
        e_vsq=e_vsq,
        t1=t1 / (2.0 * n),
        t2_over_2n=t2 / (2.0 * n),
        d_var=d_var,
        contraction_sq=contraction_norm_sq(gram),
        be_bound=berry_esseen_value(gram),
        d4=parts[4], d3=parts[3], d2=parts[2], d1=parts[1],
    )


def write_diagnostics_csv(rows: Sequence[ChaosDiag], path, extra: dict | None = None) -> None:
    extra = extra or {}
    dicts = [dict(asdict(r), **extra) for r in rows]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(dicts[0]), lineterminator="\n")
        w.writeheader()
        for d in dicts:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()})


# --------------------------------------------------------------------------
# brute-force oracles (small N)


def brute_force_cycle_sum(r: np.ndarray) -> float:
    n = r.shape[0]
    total = 0.0
    for j in range(n):
        for k in range(n):
            for m in range(n):
                for l in range(n):
                    total += r[j, k] * r[m, l] * r[j, m] * r[k, l]
    return total


def brute_force_by_distinct(r: np.ndarray) -> dict[int, float]:
    n = r.shape[0]
    out = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
    for j, k, m, l in itertools.product(range(n), repeat=4):
        out[len({j, k, m, l})] += r[j, k] * r[m, l] * r[j, m] * r[k, l]
    return out


# --------------------------------------------------------------------------
# hypotheses of the almost-sure CLT criterion on dyadic levels


@dataclass
class AscltHypotheses:
    """Dyadic-level evaluation of the almost-sure CLT sufficient conditions.

    Only ``l = 2**k`` is available; the harmonic sums in conditions 3 and 4
    are restricted to dyadic indices, so finiteness is a trend, not a proof.
    """

    levels: list[int]
    contraction: list[float]             # ||g_l (x)_1 g_l||^2, condition 2
    cond3_partial: list[float]           # partial sums at N = 2**k
    cross: np.ndarray                    # E[G_i G_j] over dyadic i, j
    cond4_partial: list[float]
    note: str = "dyadic sub-sums only (l = 2**k)"
    e_vsq: list[float] = field(default_factory=list)


def _normalised_terms(gram: IncrementGram):
    g = gram.entries
    s2 = np.diag(g)
    e_vsq = expected_vsq(gram)[0]
    return g, s2, e_vsq


def asclt_hypotheses(grams: Sequence[IncrementGram] | IncrementGram) -> AscltHypotheses:
    """Conditions 2-4 of the almost-sure CLT criterion on a dyadic Gram ladder.

    ``grams`` is either the ladder itself (sizes ``1, 2, 4, ...``) or the
    finest Gram, from which coarser ones are obtained by exact block sums.
    """
    if isinstance(grams, IncrementGram):
        top = grams.grid_n
        kmax = int(round(math.log2(top)))
        if 2**kmax != top:
            raise ValueError("finest Gram size must be a power of two")
        ladder = [coarsen_gram(grams, 2**k) for k in range(kmax + 1)]
    else:
        ladder = sorted(grams, key=lambda g: g.grid_n)
    levels = [g.grid_n for g in ladder]
    for a, b in zip(levels, levels[1:]):
        if b % a:
            raise ValueError("ladder sizes must be nested")

    contraction = [contraction_norm_sq(g) for g in ladder]
    terms = [_normalised_terms(g) for g in ladder]
    sig = [math.sqrt(t[2]) for t in terms]

    nl = len(ladder)
    cross = np.empty((nl, nl))
    for a in range(nl):
        ga, s2a, _ = terms[a]
        i = levels[a]
        for b in range(a + 1):
            j = levels[b]
            s2b = terms[b][1]
            # inner products between level-i cells and level-j cells
            m = ga.reshape(i, j, i // j).sum(axis=2)
            ip = np.sum(m * m / np.outer(s2a, s2b)) / (2.0 * sig[a] * sig[b] * math.sqrt(i * j))
            cross[a, b] = cross[b, a] = 2.0 * ip

    top = levels[-1]
    cond3 = []
    cond4 = []
    s3 = s4 = 0.0
    lv = np.array(levels)
    for n in range(2, top + 1):
        mask = lv <= n
        inner3 = float(np.sum(np.array(contraction)[mask] / lv[mask]))
        sub = np.abs(cross[np.ix_(mask, mask)]) / np.outer(lv[mask], lv[mask])
        inner4 = float(sub.sum())
        ln = math.log(n)
        s3 += inner3 / (n * ln**2)
        s4 += inner4 / (n * ln**3)
        if n in levels:
            cond3.append(s3)
            cond4.append(s4)
    return AscltHypotheses(levels, contraction, cond3, cross, cond4,
                           e_vsq=[t[2] for t in terms])
