import math

import numpy as np
import pytest
from scipy import integrate

from hetheat.cache import GramCache, content_key
from hetheat.covariance import (
    DEFAULT_H_GRID,
    IncrementGram,
    InvalidGramError,
    QuadratureError,
    QuadratureSpec,
    build_gram,
    coarsen_gram,
    cov_field,
    cross_increment,
    e_minus_lower_constant,
    e_minus_piece,
    half_line_covariance,
    increment_variance,
    loglog_slope,
    sup_variance_check,
    variogram,
    verify_condition,
    write_condition_csv,
)
from hetheat.kernel import KernelFn, PiecewiseKernel, make_medium


class NumericOnly(KernelFn):
    """Two-media kernel without the closed-form spatial product."""

    def __init__(self, medium):
        self._k = PiecewiseKernel(medium)
        self.scale = self._k.scale
        self.breakpoints = self._k.breakpoints

    def __call__(self, u, x, z):
        return self._k(u, x, z)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(max_subdivisions=10)
    with pytest.raises(ValueError):
        QuadratureSpec(rel_tol=0)


def test_cov_field_heat_matches_closed_form(heat):
    for t in (0.2, 1.0):
        assert cov_field(heat, t, 0.3, 0.3) == pytest.approx(math.sqrt(t / math.pi), rel=1e-8)


def test_cov_field_symmetric_and_nonnegative(twomedia):
    pts = [0.0, 0.2, 0.55, 1.0]
    for x in pts:
        for y in pts:
            a = cov_field(twomedia, 1.0, x, y)
            assert a >= 0
            assert a == pytest.approx(cov_field(twomedia, 1.0, y, x), abs=1e-12)


def test_cov_field_brute_force(twomedia):
    # double integral over (u, z) with scipy as an independent route
    t, x, y = 0.5, 0.1, 0.4

    def inner(v):
        u = v * v
        f = lambda z: twomedia(u, x, z) * twomedia(u, y, z)
        w = 12 * math.sqrt(u * 4)
        val = integrate.quad(f, min(x, y) - w, 0, epsabs=1e-14, limit=200)[0]
        val += integrate.quad(f, 0, max(x, y) + w, epsabs=1e-14, limit=200)[0]
        return 2 * v * val

    ref, _ = integrate.quad(inner, 0, math.sqrt(t), epsabs=1e-12, epsrel=1e-10, limit=200)
    assert cov_field(twomedia, t, x, y) == pytest.approx(ref, rel=1e-7)


def test_increment_variance_polarization(heat):
    t, x, y = 1.0, 0.4, 0.5
    iv = increment_variance(heat, t, x, y)
    pol = cov_field(heat, t, x, x) + cov_field(heat, t, y, y) - 2 * cov_field(heat, t, x, y)
    assert iv == pytest.approx(pol, rel=1e-8, abs=1e-12)
    assert increment_variance(heat, t, x, x) == 0


def test_increment_variance_linear_scaling(heat):
    hs = [2.0**-k for k in range(4, 11)]
    assert loglog_slope(hs, variogram(heat, 1.0, hs)) == pytest.approx(1, abs=0.05)


def test_cross_increment_properties(twomedia):
    h = 1 / 32
    assert cross_increment(twomedia, 1.0, 0.3, 0.3, h) == pytest.approx(
        increment_variance(twomedia, 1.0, 0.3, 0.3 + h), rel=1e-8)
    a = cross_increment(twomedia, 1.0, 0.25, 0.75, h)
    b = cross_increment(twomedia, 1.0, 0.75, 0.25, h)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-15)
    h3 = verify_condition(twomedia, 1.0, "H3", h_grid=[1 / 8, 1 / 32])
    assert abs(a) <= h3.constant * h * h
    with pytest.raises(ValueError):
        cross_increment(twomedia, 1.0, 0.1, 0.2, 0.0)


@pytest.mark.parametrize("medium", [(1, 4, 1, 2), (4, 1, 1, 2), (1, 1, 2, 2), (2, 3, 5, 1)])
def test_half_line_covariance_matches_quadrature(medium):
    m = make_medium(*medium)
    k = PiecewiseKernel(m)
    for x, y in [(0.0, 0.0), (0.1, 0.7), (0.5, 0.5), (1.0, 0.25)]:
        assert half_line_covariance(m, 0.8, x, y) == pytest.approx(
            cov_field(k, 0.8, x, y, QuadratureSpec(rel_tol=1e-11, abs_tol=1e-14)), rel=1e-8)
    with pytest.raises(ValueError):
        half_line_covariance(m, 1.0, -0.1, 0.2)


def test_gram_basic(twomedia):
    g1 = build_gram(twomedia, 1.0, 1, cache=False)
    assert g1.entries.shape == (1, 1)
    assert g1.entries[0, 0] == pytest.approx(increment_variance(twomedia, 1.0, 0, 1), rel=1e-8)
    g = build_gram(twomedia, 1.0, 16, cache=False)
    assert np.allclose(np.diag(g.correlation), 1)
    assert np.allclose(g.entries, g.entries.T)
    assert np.linalg.eigvalsh(g.entries)[0] > 0


def test_gram_closed_matches_quadrature(twomedia):
    a = build_gram(twomedia, 0.7, 8, cache=False, method="closed")
    b = build_gram(NumericOnly(twomedia.medium), 0.7, 8, cache=False)
    assert np.max(np.abs(a.entries - b.entries)) <= 1e-8 * np.max(np.abs(a.entries))


def test_gram_correlation_decay_and_bounded_t2(heat):
    g = build_gram(heat, 1.0, 16, cache=False)
    r = g.correlation
    lags = [np.mean(np.abs(np.diag(r, d))) for d in range(1, 8)]
    assert lags[0] > lags[-1]
    t2 = []
    for n in (16, 64, 256):
        r = build_gram(heat, 1.0, n, cache=False).correlation
        t2.append(np.sum(r * r) - n)
    assert max(t2) < 1.0


def test_gram_cache_roundtrip(tmp_path, twomedia):
    cache = GramCache(tmp_path)
    cold = build_gram(twomedia, 1.0, 32, cache=cache)
    warm = build_gram(twomedia, 1.0, 32, cache=cache)
    assert cache.misses == 1 and cache.hits == 1
    assert np.array_equal(cold.entries, warm.entries)
    files = sorted(p.suffix for p in (tmp_path / "gram").iterdir())
    assert files == [".bin", ".json"]


def test_content_key_ignores_order():
    assert content_key({"a": 1, "b": [1, 2]}) == content_key({"b": [1, 2], "a": 1})


def test_coarsen_gram_is_exact(twomedia):
    fine = build_gram(twomedia, 1.0, 32, cache=False)
    direct = build_gram(twomedia, 1.0, 8, cache=False)
    assert np.allclose(coarsen_gram(fine, 8).entries, direct.entries, rtol=1e-10, atol=1e-15)
    with pytest.raises(ValueError):
        coarsen_gram(fine, 5)


def test_gram_check_rejects_zero_diagonal():
    with pytest.raises(InvalidGramError):
        IncrementGram(1.0, 2, np.zeros((2, 2))).check()


def test_quadrature_error_reports_entry(twomedia):
    class Nasty(NumericOnly):
        def spatial_inner(self, u, x, y):
            return np.sin(1.0 / u) / u**0.99 * (1.0 + x * y)

    with pytest.raises(QuadratureError) as info:
        build_gram(Nasty(twomedia.medium), 1.0, 2, QuadratureSpec(max_subdivisions=64), cache=False,
                   method="quadrature")
    assert info.value.entry is not None


@pytest.mark.parametrize("cond", ["H1", "H2", "H3"])
def test_conditions_pass_heat(heat, cond):
    rep = verify_condition(heat, 1.0, cond, h_grid=[2.0**-k for k in (3, 5, 7)])
    assert rep.passed and rep.constant > 0 and math.isfinite(rep.constant)


def test_condition_h1_below_h2(twomedia, tmp_path):
    hs = [2.0**-k for k in (3, 6, 9)]
    h1 = verify_condition(twomedia, 1.0, "H1", hs)
    h2 = verify_condition(twomedia, 1.0, "H2", hs)
    assert 0 < h1.constant <= h2.constant
    write_condition_csv([h1, h2], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().count("\n") == 3
    with pytest.raises(ValueError):
        verify_condition(twomedia, 1.0, "H4")


def test_h2_ratio_near_small_h_limit(heat):
    # for the heat kernel var/h -> 1 as h -> 0
    rep = verify_condition(heat, 1.0, "H2", [2.0**-11])
    assert rep.constant == pytest.approx(1.0, abs=2e-3)


def test_sup_variance_check(heat):
    grid = [(t, 0.0) for t in (1e-6, 0.1, 0.5, 1.0)]
    rep = sup_variance_check(heat, 1.0, grid)
    assert rep.values[0] < 1e-3
    assert np.all(np.diff(rep.values) >= 0)
    assert rep.max_variance == pytest.approx(math.sqrt(1 / math.pi), rel=1e-8)


def test_e_minus_lower_constant():
    m = make_medium(1, 4, 1, 2)
    c = e_minus_lower_constant(m, 1.0)
    assert c > 0
    for x, y in [(0.1, 0.2), (0.0, 1.0), (0.3, 0.31)]:
        assert e_minus_piece(m, 1.0, x, y) >= c * abs(y - x)


def test_default_h_grid():
    assert DEFAULT_H_GRID[0] == 2.0**-3 and DEFAULT_H_GRID[-1] == 2.0**-11
