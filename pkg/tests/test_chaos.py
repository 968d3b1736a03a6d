import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetheat import chaos
from hetheat.covariance import IncrementGram, InvalidGramError, build_gram
from hetheat.sampler import cholesky_increments
from hetheat.quadvar import v_tilde_batch


def random_correlation(n, seed):
    a = np.random.default_rng(seed).normal(size=(n, n + 2))
    g = a @ a.T
    s = np.sqrt(np.diag(g))
    return g / np.outer(s, s)


def gram_of(matrix):
    matrix = np.asarray(matrix, dtype=float)
    return IncrementGram(1.0, matrix.shape[0], matrix)


def test_hermite_small_degrees():
    assert chaos.hermite(0, 2.5) == 1
    assert chaos.hermite(1, 2.5) == 2.5
    assert chaos.hermite(2, 3.0) == 4.0


@pytest.mark.parametrize("q", range(7))
def test_hermite_against_derivative_definition(q):
    mp.mp.dps = 40
    x = mp.mpf("1.3")
    f = lambda s: mp.exp(-s * s / 2)
    want = (-1) ** q / mp.factorial(q) * mp.exp(x * x / 2) * mp.diff(f, x, q)
    assert chaos.hermite(q, 1.3) == pytest.approx(float(want), rel=1e-12, abs=1e-14)


def test_hermite_recurrence_and_errors():
    x = np.linspace(-3, 3, 7)
    for q in range(1, 10):
        lhs = chaos.hermite(q + 1, x)
        rhs = (x * chaos.hermite(q, x) - chaos.hermite(q - 1, x)) / (q + 1)
        assert np.allclose(lhs, rhs, atol=1e-14)
    with pytest.raises(ValueError):
        chaos.hermite(-1, 0.0)


def test_expected_vsq_examples():
    e, t1, t2 = chaos.expected_vsq(gram_of(np.diag([0.3, 0.5, 2.0])))
    assert (e, t1, t2) == (1.0, 6.0, 0.0)
    rho = 0.4
    e, _, _ = chaos.expected_vsq(gram_of([[1, rho], [rho, 1]]))
    assert e == pytest.approx(1 + rho**2, rel=1e-15)
    with pytest.raises(InvalidGramError):
        chaos.expected_vsq(gram_of(np.diag([1.0, 0.0])))


def test_contraction_examples():
    for n in (1, 5):
        assert chaos.contraction_norm_sq(gram_of(np.eye(n))) == pytest.approx(1 / (4 * n))
    g = gram_of([[2.0]])
    assert chaos.contraction_norm_sq(g) == pytest.approx(0.25)


def test_malliavin_variance_diagonal():
    total, parts = chaos.malliavin_variance(gram_of(np.eye(10)), decompose=True)
    assert total == pytest.approx(0.8)
    assert parts[4] == pytest.approx(0.8) and parts[3] == parts[2] == parts[1] == 0
    assert chaos.berry_esseen_value(gram_of(np.eye(10))) == pytest.approx(math.sqrt(0.8))


@pytest.mark.parametrize("n", range(1, 9))
def test_trace_formulas_match_brute_force(n):
    r = random_correlation(n, n)
    brute = chaos.brute_force_cycle_sum(r)
    assert chaos._trace_r4(r) == pytest.approx(brute, rel=1e-10)
    parts = chaos.cycle_sum_by_distinct(r)
    ref = chaos.brute_force_by_distinct(r)
    for d in parts:
        assert parts[d] == pytest.approx(ref[d], rel=1e-10, abs=1e-12 * brute)
    g = gram_of(r)
    e = np.sum(r * r) / n
    assert chaos.contraction_norm_sq(g) == pytest.approx(brute / (4 * e * e * n * n), rel=1e-10)
    assert chaos.malliavin_variance(g) == pytest.approx(8 * brute / n**2, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_decomposition_sums_to_total(n, seed):
    g = gram_of(random_correlation(n, seed) * 3.0)
    total, parts = chaos.malliavin_variance(g, decompose=True)
    assert sum(parts.values()) == pytest.approx(total, rel=1e-10)
    assert total >= 0


def test_rates_two_media(twomedia):
    ns = [16, 32, 64, 128, 256, 512]
    diags = [chaos.chaos_diagnostics(build_gram(twomedia, 1.0, n)) for n in ns]
    e = np.array([d.e_vsq for d in diags])
    assert np.all(e >= 1) and np.all(np.diff(e) < 0)
    c = np.max((e - 1) * ns)
    assert np.all(np.abs(e - 1) <= c / np.array(ns) + 1e-15)
    nc = np.array([n * d.contraction_sq for n, d in zip(ns, diags)])
    nv = np.array([n * d.d_var for n, d in zip(ns, diags)])
    assert nc.max() < 1 and nv.max() < 10
    be = [d.be_bound for d in diags]
    slope = np.polyfit(np.log(ns), np.log(be), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)
    for d in diags:
        assert d.t1 == 1 and d.e_vsq == pytest.approx(1 + d.t2_over_2n)


def test_malliavin_variance_matches_fourth_cumulant(twomedia):
    # for a second-chaos variable F, Var(||DF||^2) = (2/3) kappa_4(F)
    gram = build_gram(twomedia, 1.0, 4)
    m = 100_000
    v = v_tilde_batch(cholesky_increments(gram, 11, m), gram.variances)
    c = v - v.mean()
    k2 = np.mean(c**2)
    k4 = np.mean(c**4) - 3 * k2**2
    # delta-method standard error of the fourth cumulant
    se = np.std(c**4 - 6 * k2 * c**2) / math.sqrt(m)
    exact = chaos.malliavin_variance(gram)
    assert abs(2 / 3 * k4 - exact) <= 4 * (2 / 3) * se
    assert k2 == pytest.approx(chaos.expected_vsq(gram)[0], rel=0.02)


def test_asclt_hypotheses(heat):
    hyp = chaos.asclt_hypotheses(build_gram(heat, 1.0, 256))
    assert hyp.levels == [2**k for k in range(9)]
    c = np.array(hyp.contraction)
    assert np.all(np.diff(c) < 0) and c[-1] < 1e-3
    assert np.all(np.diff(hyp.cond4_partial) > 0)
    inc = np.diff(hyp.cond4_partial)
    assert inc[-1] < inc[0] / 10
    # diagonal of the cross matrix is E[G_l^2] = 1
    assert np.allclose(np.diag(hyp.cross), 1.0)


def test_asclt_hypotheses_diagonal_ladder_closed_form():
    ladder = [gram_of(np.eye(2**k)) for k in range(6)]
    hyp = chaos.asclt_hypotheses(ladder)
    assert np.allclose(hyp.contraction, [1 / (4 * l) for l in hyp.levels])
    # condition 3 inner sum: sum_{l dyadic <= N} 1/(4 l^2)
    s = 0.0
    want = []
    for n in range(2, 33):
        inner = sum(1 / (4 * l * l) for l in hyp.levels if l <= n)
        s += inner / (n * math.log(n) ** 2)
        if n in hyp.levels:
            want.append(s)
    assert hyp.cond3_partial == pytest.approx(want, rel=1e-12)
    # bounded by (1/3) sum_N 1/(N log^2 N) over N >= 2
    assert hyp.cond3_partial[-1] < 1 / 3 * 2.2


def test_diagnostics_csv(tmp_path, heat):
    rows = [chaos.chaos_diagnostics(build_gram(heat, 1.0, n)) for n in (4, 8)]
    chaos.write_diagnostics_csv(rows, tmp_path / "d.csv", {"seed": 3})
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0].startswith("n,e_vsq,t1,t2_over_2n,d_var,contraction_sq,be_bound")
    assert lines[0].endswith(",seed") and len(lines) == 3
