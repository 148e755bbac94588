import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from hmsq.hmm import HmmModel
from hmsq.quantizer import (Codebook, MixturePdf, cell_interval, cell_mass, clipped_support,
                            dequantize, empirical_lloyd, expected_distortion, lloyd_design,
                            lloyd_trace, mixture_moments, quantize, uniform_codebook)

STD = MixturePdf([1.0], [0.0], [1.0])


def quad_moments(pdf, lo, hi):
    lo, hi = max(lo, pdf.support[0]), min(hi, pdf.support[1])
    f = pdf.pdf
    m0 = integrate.quad(f, lo, hi, epsabs=1e-13, limit=200)[0]
    m1 = integrate.quad(lambda x: x * f(x), lo, hi, epsabs=1e-13, limit=200)[0]
    return m0, m1


def test_uniform_codebook_examples():
    cb = uniform_codebook(0, 1, 1)
    assert np.allclose(cb.codewords, [0.25, 0.75]) and np.allclose(cb.boundaries, [0.5])
    assert np.allclose(uniform_codebook(-1, 1, 2).codewords, [-0.75, -0.25, 0.25, 0.75])
    with pytest.raises(ValueError):
        uniform_codebook(0, math.inf, 2)


def test_one_bit_standard_normal():
    cb, trace = lloyd_trace(STD, 1, iters=500, tol=0)
    assert np.allclose(cb.codewords, [-math.sqrt(2 / math.pi), math.sqrt(2 / math.pi)], atol=1e-3)
    assert abs(trace[-1] - (1 - 2 / math.pi)) < 1e-3
    assert np.all(np.diff(trace) <= 1e-15)


def test_lloyd_fixed_point_is_centroid():
    pdf = MixturePdf([0.3, 0.7], [-1.5, 1.5], [1.0, 0.5])
    cb = lloyd_design(pdf, 3, iters=2000, tol=1e-15)
    for k in range(len(cb)):
        lo, hi = cell_interval(k, cb)
        m0, m1 = quad_moments(pdf, lo, hi)
        assert abs(m1 / m0 - cb.codewords[k]) < 1e-6


def test_distortion_matches_quadrature():
    pdf = MixturePdf([0.4, 0.6], [-1.0, 2.0], [0.7, 1.3], (-0.5, 4.0))
    cb = Codebook(np.array([-0.2, 0.9, 1.8, 3.0]), 2)
    d = 0.0
    for k in range(4):
        lo, hi = cell_interval(k, cb)
        lo, hi = max(lo, -0.5), min(hi, 4.0)
        d += integrate.quad(lambda x: (x - cb.codewords[k]) ** 2 * pdf.pdf(x), lo, hi, epsabs=1e-13)[0]
    assert abs(expected_distortion(pdf, cb) - d) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4), st.floats(0.01, 5), st.floats(0, 1))
def test_truncated_pdf_normalized(lo, width, w):
    pdf = MixturePdf([w, 1 - w], [-1.5, 1.5], [1.0, 0.6], (lo, lo + width))
    m0, _ = quad_moments(pdf, lo, lo + width)
    assert abs(m0 - 1) < 1e-9


def test_per_component_truncation_weights():
    # each component renormalized to the support separately
    pdf = MixturePdf([0.5, 0.5], [-1.5, 1.5], [1.0, 1.0], (0.0, math.inf))
    z1, z2 = norm.sf(1.5), norm.sf(-1.5)
    x = 0.7
    want = 0.5 * norm.pdf(x, -1.5) / z1 + 0.5 * norm.pdf(x, 1.5) / z2
    assert np.isclose(pdf.pdf(x), want, rtol=1e-12)
    assert np.isclose(pdf.normalizer, 0.5 * z1 + 0.5 * z2)


def test_mixture_moments_and_cell_mass():
    pdf = MixturePdf([0.2, 0.8], [-1.0, 1.0], [1.0, 2.0], (-2.0, 3.0))
    m0, m1 = quad_moments(pdf, -2, 3)
    mean, var = mixture_moments(pdf)
    assert np.isclose(mean, m1 / m0, atol=1e-10)
    v = integrate.quad(lambda x: (x - mean) ** 2 * pdf.pdf(x), -2, 3, epsabs=1e-13)[0]
    assert np.isclose(var, v, atol=1e-10)
    assert np.isclose(cell_mass(pdf, -1, 0.5), quad_moments(pdf, -1, 0.5)[0], atol=1e-11)
    assert cell_mass(pdf, 5, 6) == 0.0


def test_rate_zero_truncated_normal_mean():
    # N(0, 1) restricted to (0, 6): the single codeword is the truncated mean
    model = HmmModel.two_state(0.1, mean=0.0)
    pdf = MixturePdf.from_belief([1.0, 0.0], model, (0.0, 6.0))
    cb = lloyd_design(pdf, 0, uniform_codebook(0.0, 6.0, 0), iters=5)
    assert abs(cb.codewords[0] - math.sqrt(2 / math.pi)) < 1e-6


def test_semi_infinite_cell_clip_is_finite():
    model = HmmModel.two_state(0.1, mean=0.0)
    lo, hi = clipped_support(np.array([1.0, 0.0]), model, 6.0, cell=(0.0, math.inf))
    assert lo == 0.0 and math.isfinite(hi)
    # mean and std of the half normal: sqrt(2/pi), sqrt(1 - 2/pi)
    assert np.isclose(hi, math.sqrt(2 / math.pi) + 6 * math.sqrt(1 - 2 / math.pi))


def test_clip_keeps_finite_cells():
    model = HmmModel.two_state(0.1)
    assert clipped_support(np.array([0.5, 0.5]), model, 6.0, cell=(-1.0, 2.0)) == (-1.0, 2.0)
    lo, hi = clipped_support(np.array([0.5, 0.5]), model, 6.0, cell=(-math.inf, -3.0))
    assert lo < -3.0 and hi == -3.0
    # the clip follows the spread of the truncated tail, which is much narrower
    # than the source; the retained share of the cell mass is still > 99.9 %
    pdf = MixturePdf([0.5, 0.5], [-1.5, 1.5], [1.0, 1.0], (-math.inf, -3.0))
    assert cell_mass(pdf, lo, -3.0) / cell_mass(pdf, -math.inf, -3.0) > 0.999


def test_quantize_tie_goes_to_lower_cell():
    cb = Codebook(np.array([-1.0, 1.0]), 1)
    assert quantize(0.0, cb) == 0
    assert quantize(1e-12, cb) == 1
    assert cell_interval(0, cb) == (-math.inf, 0.0)
    assert cell_interval(1, cb) == (0.0, math.inf)


def test_dequantize_range_and_codebook_validation():
    cb = Codebook(np.array([-1.0, 0.0, 1.0, 2.0]), 2)
    assert dequantize(2, cb) == 1.0
    with pytest.raises(IndexError):
        dequantize(4, cb)
    with pytest.raises(ValueError):
        Codebook(np.array([0.0, 0.0]), 1)
    with pytest.raises(ValueError):
        Codebook(np.array([0.0, 1.0, 2.0]), 1)


def test_codebook_dict_roundtrip():
    cb = lloyd_design(STD, 3)
    back = Codebook.from_dict(cb.to_dict())
    assert np.array_equal(back.codewords, cb.codewords)
    d = cb.to_dict()
    d["boundaries"][0] += 0.1
    with pytest.raises(ValueError):
        Codebook.from_dict(d)


def test_bad_pdf_rejected():
    with pytest.raises(ValueError):
        MixturePdf([0.5, 0.6], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        MixturePdf([1.0], [0.0], [1.0], (1.0, 1.0))


def test_zero_mass_support_rejected():
    with pytest.raises(ValueError):
        MixturePdf([1.0], [0.0], [1.0], (100.0, 101.0))


def test_far_tail_cell_is_handled():
    # z > 13 for every component; closed forms must not produce nan
    pdf = MixturePdf([0.5, 0.5], [-1.5, 1.5], [1.0, 1.0], (15.0, math.inf))
    cb = lloyd_design(pdf, 2, uniform_codebook(*clipped_support(pdf), 2), iters=3, tol=0)
    assert np.all(np.isfinite(cb.codewords)) and cb.codewords[0] > 15.0


def test_underflowing_cell_is_an_error():
    with pytest.raises(ValueError):
        MixturePdf([0.5, 0.5], [-1.5, 1.5], [1.0, 1.0], (60.0, math.inf))


def test_empty_cells_are_repaired():
    pdf = MixturePdf([1.0], [0.0], [0.01])
    init = Codebook(np.array([-10.0, -9.0, 0.0, 10.0]), 2)
    cb = lloyd_design(pdf, 2, init, iters=2000, tol=1e-14)
    # optimal 4-level quantizer of N(0, 1) is +-0.4528, +-1.510; scaled by 0.1
    assert np.allclose(cb.codewords, 0.1 * np.array([-1.510, -0.4528, 0.4528, 1.510]), atol=1e-3)


def test_empirical_lloyd_matches_analytic_design():
    x = np.random.default_rng(0).standard_normal(400_000)
    emp = empirical_lloyd(x, 2)
    ana = lloyd_design(STD, 2)
    assert np.allclose(emp.codewords, ana.codewords, atol=0.02)


def test_mixture_sampling_respects_support():
    pdf = MixturePdf([0.3, 0.7], [-1.5, 1.5], [1.0, 1.0], (-0.5, 2.0))
    s = pdf.sample(50_000, seed=1)
    assert s.min() > -0.5 and s.max() <= 2.0
    mean, _ = mixture_moments(pdf)
    assert abs(s.mean() - mean) < 0.01
