import math

import numpy as np
import pytest

from hmsq.baselines import (DpcmCodec, FsqCodec, bound_clean_history, bound_switched, dpcm_decode,
                            dpcm_encode, dpcm_train, fsq_decode, fsq_encode, fsq_train, lag1_coefficient,
                            load_codec, save_codec, scalable_dpcm_run, scalable_dpcm_train)
from hmsq.hmm import HmmModel, sample
from hmsq.quantizer import Codebook, MixturePdf, empirical_lloyd, expected_distortion, lloyd_design, quantize
from hmsq.tracking import run_encoder, static_distortion, train_system


@pytest.fixture(scope="module")
def long_data(model):
    return sample(model, 200_000, 11)[1]


def test_lag1_coefficient_of_switching_source(long_data):
    # (1 - 2a) * 1.5^2 / (1.5^2 + 1) for a = 0.1
    assert abs(lag1_coefficient(long_data) - 0.8 * 2.25 / 3.25) < 0.01


def test_lag1_coefficient_of_iid_source():
    _, x = sample(HmmModel.two_state(0.5), 200_000, 3)
    assert abs(lag1_coefficient(x)) < 0.01
    with pytest.raises(ValueError):
        lag1_coefficient(np.ones(10))


def test_dpcm_decoder_mimics_encoder(long_data):
    codec = dpcm_train(long_data[:50_000], 3)
    idx, rec = dpcm_encode(long_data, codec)
    assert np.array_equal(dpcm_decode(idx, codec), rec)
    with pytest.raises(IndexError):
        dpcm_decode(np.array([0, 9]), codec)


def test_dpcm_without_prediction_is_static_quantizer(long_data):
    cb = empirical_lloyd(long_data, 2)
    m = 0.3
    codec = DpcmCodec(0.0, Codebook(cb.codewords - m, 2), m)
    _, rec = dpcm_encode(long_data, codec)
    static = cb.codewords[quantize(long_data, cb)]
    assert np.max(np.abs(rec - static)) < 1e-9
    with pytest.raises(ValueError):
        DpcmCodec(1.0, cb)


def test_dpcm_lost_residual_uses_prediction(long_data):
    codec = dpcm_train(long_data[:50_000], 3)
    idx, rec = dpcm_encode(long_data[:100], codec)
    mask = np.ones(100, bool)
    mask[10] = False
    out = dpcm_decode(idx, codec, mask)
    assert np.array_equal(out[:10], rec[:10])
    a, m = codec.predictor_coeff, codec.mean
    assert math.isclose(out[10], m + a * (rec[9] - m))


def test_fsq_decoder_mimics_encoder(long_data):
    codec = fsq_train(long_data[:50_000], 4, 2, rounds=3)
    idx, rec, _ = fsq_encode(long_data, codec)
    got = fsq_decode(idx, codec)
    assert np.array_equal(got[0], rec)


def test_single_state_fsq_is_static_lloyd(long_data):
    codec = fsq_train(long_data[:50_000], 1, 3)
    cb = empirical_lloyd(long_data[:50_000], 3)
    assert np.array_equal(codec.codebooks[0].codewords, cb.codewords)
    _, rec, states = fsq_encode(long_data, codec)
    assert np.all(states == 0)
    assert np.array_equal(rec, cb.codewords[quantize(long_data, cb)])


def test_fsq_table_validation():
    cb = Codebook(np.array([-1.0, 1.0]), 1)
    with pytest.raises(ValueError):
        FsqCodec([cb, cb], np.array([[0, 2], [1, 0]]))
    with pytest.warns(UserWarning):
        FsqCodec([cb, cb], np.zeros((2, 2), dtype=int))


def test_codec_files_roundtrip(long_data, tmp_path):
    for codec in (dpcm_train(long_data[:20_000], 2), fsq_train(long_data[:20_000], 3, 2, rounds=2)):
        save_codec(codec, tmp_path / "c.json")
        back = load_codec(tmp_path / "c.json")
        enc = dpcm_encode if isinstance(codec, DpcmCodec) else fsq_encode
        assert np.array_equal(enc(long_data[:5000], back)[1], enc(long_data[:5000], codec)[1])


def test_bound_single_state_is_plain_lloyd():
    model = HmmModel.gaussian([0.0], [1.0], np.array([[1.0]]))
    pdf = MixturePdf([1.0], [0.0], [1.0])
    d = expected_distortion(pdf, lloyd_design(pdf, 2))
    assert math.isclose(bound_switched(model, 2, restarts=3), d, rel_tol=1e-6)


def test_bound_symmetric_states_agree():
    # both previous states see mirror-image mixtures, so the bound is one of them
    model = HmmModel.two_state(0.1)
    pdf = MixturePdf(model.transition[0], model.means, model.sds)
    d = expected_distortion(pdf, lloyd_design(pdf, 2, iters=2000))
    assert math.isclose(bound_switched(model, 2, 5), d, rel_tol=1e-6)


def test_bound_ordering(model, long_data):
    x = long_data[:50_000]
    system = train_system(model, 2, em_rounds=3, seed=0, obs=x)
    tracking = np.mean((x - run_encoder(x, system).reconstruction) ** 2)
    sw = bound_switched(model, 2)
    clean = bound_clean_history(model, 2, x)
    assert sw <= clean <= tracking <= static_distortion(model, 2)


def test_clean_bound_on_iid_source_is_static():
    model = HmmModel.two_state(0.5)
    _, x = sample(model, 100_000, 8)
    assert abs(10 * math.log10(bound_clean_history(model, 3, x) / static_distortion(model, 3))) < 0.05


def test_scalable_dpcm_refines(long_data):
    codec = scalable_dpcm_train(long_data[:50_000], 3, 2)
    _, eidx, brec, erec = scalable_dpcm_run(long_data, codec)
    assert eidx.max() < 4
    assert np.mean((long_data - erec) ** 2) < np.mean((long_data - brec) ** 2)
