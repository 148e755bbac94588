import itertools
import math

import numpy as np
import pytest
from scipy.stats import norm

from hmsq.hmm import HmmModel, sample
from hmsq.quantizer import cell_interval, quantize
from hmsq.scalable import (ScalableSystem, decode_enh, decode_enh_delayed, delayed_enh_belief,
                           enh_adapt_codebook, enh_belief_trace, enh_pdf, encode_scalable,
                           encode_scalable_delayed)
from hmsq.tracking import mse_db, train_system


def brute_marginal(model, cells, t):
    """P(q_t | every cell in ``cells``) by enumerating state paths."""
    n = len(cells)
    probs = np.zeros(model.n_states)
    for path in itertools.product(range(model.n_states), repeat=n):
        p = model.initial[path[0]]
        for s in range(1, n):
            p *= model.transition[path[s - 1], path[s]]
        for s, (lo, hi) in enumerate(cells):
            j = path[s]
            p *= norm.cdf(hi, model.means[j], model.sds[j]) - norm.cdf(lo, model.means[j], model.sds[j])
        probs[path[t]] += p
    return probs / probs.sum()


@pytest.fixture(scope="module")
def streams(system3, data):
    return encode_scalable(data[1][:20_000], ScalableSystem(system3, 2))


def test_enhancement_cells_nest_in_base_cells(streams, data):
    x = data[1][:20_000]
    b, e = streams.base_cells, streams.enh_cells
    assert np.all(e[:, 0] >= b[:, 0]) and np.all(e[:, 1] <= b[:, 1])
    assert np.all((x > e[:, 0]) & (x <= e[:, 1]))
    assert np.all((streams.enh_reconstruction >= b[:, 0]) & (streams.enh_reconstruction <= b[:, 1]))


def test_decoder_mimics_encoder(system3, streams):
    system = ScalableSystem(system3, 2)
    rec, cells = decode_enh(streams.base_indices, streams.enh_indices, system)
    assert np.array_equal(rec, streams.enh_reconstruction)
    assert np.array_equal(cells, streams.enh_cells)


def test_enhancement_improves_on_base(streams, data):
    x = data[1][:20_000]
    assert mse_db(x, streams.enh_reconstruction) < mse_db(x, streams.base_reconstruction) - 5


def test_python_codebook_matches_kernel(system3, streams, data):
    system = ScalableSystem(system3, 2)
    x = data[1][:300]
    beliefs = enh_belief_trace(streams.enh_cells[:300], system3.model)
    for t in range(300):
        assert np.allclose(streams.enh_weights[t], beliefs[t], atol=1e-12)
        cb = enh_adapt_codebook(beliefs[t], streams.base_cells[t], system)
        k = int(quantize(x[t], cb))
        assert k == streams.enh_indices[t]
        assert math.isclose(cb.codewords[k], streams.enh_reconstruction[t], abs_tol=1e-10)


def test_zero_lookahead_is_plain_enhancement_belief(system3, data):
    x = data[1][:3000]
    a = encode_scalable(x, ScalableSystem(system3, 2, L=0))
    b = encode_scalable(x, ScalableSystem(system3, 2, L=3), L=0)
    assert np.array_equal(a.enh_indices, b.enh_indices)
    assert np.allclose(delayed_enh_belief(a.enh_cells[:5], a.base_cells[5:], ScalableSystem(system3, 2)),
                       a.enh_weights[5], atol=1e-12)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_delayed_belief_matches_enumeration(L):
    model = HmmModel.two_state(0.2)
    rng = np.random.default_rng(L)
    x = rng.normal(np.repeat([-1.5, 1.5, -1.5], 3), 1.0)[:8]
    base = train_system(model, 2, n_classes=3, em_rounds=1, seed=0, obs=sample(model, 5000, 0)[1])
    system = ScalableSystem(base, 1, L)
    s = encode_scalable(x, system)
    T = 4
    for t in range(T):
        window = [tuple(c) for c in s.base_cells[t:t + L]]
        cells = [tuple(c) for c in s.enh_cells[:t]] + window
        want = brute_marginal(model, cells, t)
        got = delayed_enh_belief(s.enh_cells[:t], s.base_cells[t:], system)
        assert np.max(np.abs(got - want)) < 1e-10
        assert np.allclose(s.enh_weights[t], got, atol=1e-10)


def test_delayed_streams_decode(system3, data):
    x = data[1][:5000]
    system = ScalableSystem(system3, 2, L=2)
    s = encode_scalable_delayed(x, system)
    rec, _ = decode_enh_delayed(s.base_indices, s.enh_indices, system)
    assert np.array_equal(rec, s.enh_reconstruction)
    with pytest.raises(ValueError):
        encode_scalable_delayed(x, ScalableSystem(system3, 2, L=0))


def test_full_line_base_cell(system3):
    system = ScalableSystem(system3, 2)
    cb = enh_adapt_codebook([0.5, 0.5], (-math.inf, math.inf), system)
    assert np.all(np.isfinite(cb.codewords))
    assert enh_pdf([0.5, 0.5], (-math.inf, math.inf), system).support == (-math.inf, math.inf)
    assert cell_interval(0, cb)[0] == -math.inf


def test_layer_length_and_index_checks(system3, streams):
    system = ScalableSystem(system3, 2)
    with pytest.raises(ValueError):
        decode_enh(streams.base_indices[:10], streams.enh_indices[:9], system)
    with pytest.raises(IndexError):
        decode_enh(streams.base_indices[:3], np.array([0, 4, 1]), system)
    with pytest.raises(ValueError):
        ScalableSystem(system3, 0)


def test_converged_design_matches_kernel(system3, data):
    system = ScalableSystem(system3, 2, L=1, enh_online_lloyd_iters=500, enh_lloyd_tol=1e-6)
    x = data[1][:200]
    s = encode_scalable(x, system)
    for t in range(200):
        cb = enh_adapt_codebook(s.enh_weights[t], s.base_cells[t], system)
        assert int(quantize(x[t], cb)) == s.enh_indices[t]
        assert math.isclose(cb.codewords[s.enh_indices[t]], s.enh_reconstruction[t], abs_tol=1e-10)
    rec, _ = decode_enh(s.base_indices, s.enh_indices, system)
    assert np.array_equal(rec, s.enh_reconstruction)
