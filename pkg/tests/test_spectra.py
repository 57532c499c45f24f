"""Tests for spectral laws: moments, sampling, exclusion moments, JSON."""

import math

import numpy as np
import pytest

from rotamp import freeprob as fp
from rotamp import spectra as sp
from rotamp.errors import (
    InverseOutOfRange,
    QuantileUnavailable,
    TooFewEntries,
)

CATALAN = [1, 1, 2, 5, 14, 42, 132]


def test_semicircle_moments_are_interleaved_catalan():
    m = sp.Semicircle().moments(12)
    for k in range(1, 13):
        want = 0.0 if k % 2 else CATALAN[k // 2]
        assert m[k - 1] == pytest.approx(want, abs=1e-12)


def test_marchenko_pastur_even_moments_closed_form():
    g = 0.5
    m = sp.MarchenkoPastur(g).moments(4)
    want = [1.0, 1.0 + g, 1.0 + 3 * g + g**2, 1.0 + 6 * g + 6 * g**2 + g**3]
    assert np.allclose(m, want, atol=1e-12)
    # square case degenerates to Catalan numbers of s^2
    m1 = sp.MarchenkoPastur(1.0).moments(6)
    assert np.allclose(m1, CATALAN[1:], atol=1e-12)


def test_affine_beta_standardizers():
    law = sp.beta_mean0_var1(1.0, 2.0)
    # Beta(1,2): mean 1/3, variance 1/18, so scale sqrt(18), shift -sqrt(2)
    assert law.scale == pytest.approx(math.sqrt(18.0))
    assert law.shift == pytest.approx(-math.sqrt(18.0) / 3.0)
    m = law.moments(4)
    assert m[0] == pytest.approx(0.0, abs=1e-12)
    assert m[1] == pytest.approx(1.0, abs=1e-12)

    sv = sp.beta_secondmoment1(1.0, 2.0)
    assert sv.singular
    assert sv.moments(1)[0] == pytest.approx(1.0, abs=1e-12)


def test_atomic_signs_moments():
    law = sp.Atomic([-1.0, 1.0], [0.5, 0.5])
    m = law.moments(8)
    assert np.allclose(m[0::2], 0.0, atol=0)
    assert np.allclose(m[1::2], 1.0, atol=0)


def test_moments_positive_variance():
    laws = [
        sp.Semicircle(),
        sp.MarchenkoPastur(0.5),
        sp.beta_mean0_var1(1.0, 2.0),
        sp.beta_secondmoment1(1.0, 2.0),
        sp.Atomic([-1.0, 1.0], [0.5, 0.5]),
    ]
    for law in laws:
        assert law.moments(2)[1] > 0.0


def test_quadrature_agrees_with_closed_form_moments():
    laws = [
        sp.Semicircle(),
        sp.MarchenkoPastur(0.5),
        sp.MarchenkoPastur(1.0),
        sp.beta_mean0_var1(1.0, 2.0),
        sp.beta_secondmoment1(1.0, 2.0),
    ]
    for law in laws:
        m = law.moments(4)
        for k in range(1, 5):
            p = 2 * k if law.singular else k
            got = law.expect(lambda s, p=p: s**p)
            assert got == pytest.approx(m[k - 1], rel=1e-9, abs=1e-9), law.variant


def test_semicircle_cauchy_transform_closed_form():
    sc = sp.Semicircle()
    g3 = (3.0 - math.sqrt(5.0)) / 2.0
    assert fp.cauchy_transform(sc, 3.0) == pytest.approx(g3, abs=1e-10)
    assert fp.cauchy_transform_deriv(sc, 3.0) == pytest.approx(
        (1.0 - 3.0 / math.sqrt(5.0)) / 2.0, abs=1e-10
    )
    assert fp.cauchy_inverse(sc, g3) == pytest.approx(3.0, abs=1e-8)
    # the branch never attains values above its near-edge maximum
    with pytest.raises(InverseOutOfRange):
        fp.cauchy_inverse(sc, 1.5)


def test_semicircle_cdf_quantile_round_trip():
    sc = sp.Semicircle()
    u = np.linspace(0.01, 0.99, 25)
    x = sc.quantile(u)
    assert np.allclose(sc.cdf(x), u, atol=1e-9)
    assert sc.quantile(np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-12)


def test_quantile_sample_moments_near_law_moments():
    # deterministic grid at n=2000 reproduces the first four moments
    rng = np.random.default_rng(0)
    laws = [
        sp.Semicircle(),
        sp.MarchenkoPastur(0.5),
        sp.MarchenkoPastur(1.0),
        sp.beta_mean0_var1(1.0, 2.0),
        sp.beta_secondmoment1(1.0, 2.0),
        sp.Atomic([-1.0, 0.5, 2.0], [0.25, 0.25, 0.5]),
    ]
    for law in laws:
        s = sp.sample_spectrum(law, 2000, rng, mode="quantile")
        m = law.moments(4)
        for k in range(1, 5):
            p = 2 * k if law.singular else k
            assert abs(np.mean(s**p) - m[k - 1]) <= 0.02, (law.variant, k)


def test_quantile_sample_beta_mean_and_variance():
    rng = np.random.default_rng(0)
    law = sp.beta_mean0_var1(1.0, 2.0)
    s = sp.sample_spectrum(law, 2000, rng, mode="quantile")
    assert abs(np.mean(s)) <= 0.01
    assert abs(np.var(s) - 1.0) <= 0.01


def test_iid_sample_mp_second_moment_within_three_se():
    law = sp.MarchenkoPastur(0.5)
    n = 10_000
    rng = np.random.default_rng(1234)
    s = sp.sample_spectrum(law, n, rng, mode="iid")
    m2, m4 = law.moments(2)
    se = math.sqrt((m4 - m2**2) / n)
    assert abs(np.mean(s**2) - m2) <= 3.0 * se


def test_atomic_point_mass_sampling():
    rng = np.random.default_rng(0)
    law = sp.Atomic([0.0], [1.0])
    assert np.all(sp.sample_spectrum(law, 5, rng, mode="quantile") == 0.0)
    assert np.all(sp.sample_spectrum(law, 5, rng, mode="iid") == 0.0)


def test_empirical_quantile_mode_capped_by_sample_count():
    law = sp.Empirical(np.arange(10, dtype=float))
    rng = np.random.default_rng(0)
    with pytest.raises(QuantileUnavailable):
        sp.sample_spectrum(law, 20, rng, mode="quantile")
    s = sp.sample_spectrum(law, 10, rng, mode="quantile")
    assert len(s) == 10
    # iid mode resamples freely
    assert len(sp.sample_spectrum(law, 20, rng, mode="iid")) == 20


def test_exclusion_moment_examples():
    eigs = np.array([5.0, 1.0, -1.0, 1.0, -1.0])
    m = sp.empirical_moments_excluding_top(eigs, 1, 5)
    assert m[0] == pytest.approx(0.0, abs=1e-15)

    m = sp.empirical_moments_excluding_top(np.array([3.0, 1.0, 0.0]), 2, 3)
    assert m[1] == pytest.approx(1.0 / 3.0, abs=1e-15)

    m = sp.empirical_moments_excluding_top(
        np.array([2.0, 1.0]), 2, 2, kind="rectangular"
    )
    assert m[1] == pytest.approx(0.5, abs=1e-15)


def test_exclusion_moment_drops_largest_not_first():
    eigs = np.array([1.0, -4.0, 2.0])  # top by value, not magnitude
    m = sp.empirical_moments_excluding_top(eigs, 1, 3)
    assert m[0] == pytest.approx((1.0 - 4.0) / 3.0)


def test_exclusion_requires_two_entries():
    with pytest.raises(TooFewEntries):
        sp.empirical_moments_excluding_top(np.array([1.0]), 2, 1)


def test_law_validation():
    with pytest.raises(ValueError):
        sp.Atomic([1.0, 2.0], [0.7, 0.7])
    with pytest.raises(ValueError):
        sp.Empirical(np.array([]))
    with pytest.raises(ValueError):
        sp.AffineBeta(0.0, 2.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        sp.MarchenkoPastur(0.0)


def test_wide_mp_needs_transposition():
    law = sp.MarchenkoPastur(1.7)
    # moments stay well defined, but there is no density on this side
    assert law.moments(2)[0] == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sp.sample_spectrum(law, 10, rng, mode="quantile")
    with pytest.raises(ValueError):
        law.expect(lambda s: s**2)


def test_json_round_trips():
    rng = np.random.default_rng(3)
    laws = [
        sp.Semicircle(),
        sp.MarchenkoPastur(0.5),
        sp.beta_mean0_var1(1.0, 2.0),
        sp.beta_secondmoment1(1.0, 2.0),
        sp.Atomic([-1.0, 0.5, 2.0], [0.25, 0.25, 0.5]),
        sp.Empirical(rng.standard_normal(40)),
    ]
    for law in laws:
        back = sp.law_from_dict(sp.law_to_dict(law))
        assert np.allclose(back.moments(6), law.moments(6))
        assert back.singular == law.singular


def test_json_standardize_shortcuts():
    law = sp.law_from_dict(
        {"variant": "affine_beta", "a": 1, "b": 2, "standardize": "mean0_var1"}
    )
    assert np.allclose(law.moments(4), sp.beta_mean0_var1(1.0, 2.0).moments(4))
    law = sp.law_from_dict(
        {
            "variant": "affine_beta",
            "a": 1,
            "b": 2,
            "standardize": "secondmoment1",
            "singular": True,
        }
    )
    assert np.allclose(law.moments(4), sp.beta_secondmoment1(1.0, 2.0).moments(4))


def test_json_rejects_malformed_input():
    with pytest.raises(ValueError):
        sp.law_from_dict({"variant": "semicircle", "gamma": 1.0})
    with pytest.raises(ValueError):
        sp.law_from_dict({"variant": "marchenko_pastur", "gamma": 0.5, "x": 1})
    with pytest.raises(ValueError):
        sp.law_from_dict({"variant": "unheard_of"})
    with pytest.raises(ValueError):
        sp.law_from_dict(
            {"variant": "affine_beta", "a": 1, "b": 2, "standardize": "weird"}
        )


def test_limit_cumulants_collapse_to_unit_vectors():
    kap = sp.limit_cumulants(sp.Semicircle(), 16)
    want = np.zeros(16)
    want[1] = 1.0
    assert np.array_equal(kap, want)
    kap = sp.limit_cumulants(sp.MarchenkoPastur(0.5), 12, gamma=0.5)
    want = np.zeros(12)
    want[0] = 1.0
    assert np.array_equal(kap, want)


def test_limit_cumulants_stay_finite_at_high_order():
    # the float recursions cancel catastrophically past a few dozen
    # orders; the extended-precision route must stay geometric instead
    kap = sp.limit_cumulants(sp.beta_secondmoment1(1.0, 2.0), 160, gamma=0.5)
    assert np.all(np.isfinite(kap))
    tail = np.abs(kap[120:])
    ratios = tail[1:] / tail[:-1]
    assert np.all(ratios < 20.0)
    sym = sp.limit_cumulants(sp.beta_mean0_var1(1.0, 2.0), 160)
    assert np.all(np.isfinite(sym))


def test_limit_cumulants_wide_aspect_is_row_normalised():
    # dividing the min-side moments by gamma keeps the sequence consistent
    # with transposition: flipping it back recovers the tall-aspect one
    law = sp.beta_secondmoment1(1.0, 2.0)
    k_wide = sp.limit_cumulants(law, 30, gamma=2.0)
    k_tall = sp.limit_cumulants(law, 30, gamma=0.5)
    assert k_wide[0] == pytest.approx(0.5, abs=1e-15)
    from rotamp.state_evolution import _flip_rect_cumulants

    assert np.allclose(_flip_rect_cumulants(k_wide, 2.0), k_tall, atol=1e-10)


def test_limit_cumulants_argument_errors():
    with pytest.raises(ValueError):
        sp.limit_cumulants(sp.Semicircle(), 8, gamma=0.5)
    with pytest.raises(ValueError):
        sp.limit_cumulants(sp.beta_secondmoment1(1.0, 2.0), 8)
    with pytest.raises(ValueError):
        sp.limit_cumulants(sp.Semicircle(), 0)
