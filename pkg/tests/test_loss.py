import numpy as np
import pytest

from hmsq.hmm import HmmModel, predict_belief, sample
from hmsq.loss import (LossChannel, PacketStream, conceal, decode_lossy, encode_lossy,
                       lossy_update_decoder, lossy_update_encoder, simulate_loss, train_lossy_system)
from hmsq.tracking import decode, encode, run_decoder, run_encoder, update_belief


@pytest.fixture(scope="module")
def lossy5(model, data):
    return train_lossy_system(model, 3, 0.05, em_rounds=3, seed=0, obs=data[0])


def test_zero_loss_reduces_to_lossless(system3, data):
    x = data[1]
    assert np.array_equal(encode_lossy(x, system3, 0.0), encode(x, system3))
    stream = simulate_loss(encode(x, system3), LossChannel(0.0, seed=1))
    assert np.array_equal(decode_lossy(stream, system3), decode(encode(x, system3), system3))


def test_encoder_update_is_expected_mixture(system3):
    b = np.array([0.3, 0.7])
    cell = (-0.5, 0.25)
    want = 0.9 * update_belief(b, cell, system3) + 0.1 * predict_belief(b, system3.model)
    assert np.allclose(lossy_update_encoder(b, cell, 0.1, system3), want)
    assert np.allclose(lossy_update_encoder(b, cell, 0.0, system3), update_belief(b, cell, system3))
    with pytest.raises(ValueError):
        lossy_update_encoder(b, cell, 1.5, system3)


def test_decoder_update_branches(system3):
    b = np.array([0.3, 0.7])
    assert np.allclose(lossy_update_decoder(b, None, system3), predict_belief(b, system3.model))
    assert np.allclose(lossy_update_decoder(b, (0.0, 1.0), system3), update_belief(b, (0.0, 1.0), system3))


def test_kernel_encoder_matches_reference(lossy5, data):
    x = data[1][:100]
    enc = run_encoder(x, lossy5, 0.05)
    b = lossy5.model.initial
    for t in range(len(x)):
        assert np.allclose(enc.beliefs[t], b, atol=1e-12)
        b = lossy_update_encoder(b, enc.cells[t], 0.05, lossy5)


def test_decoder_beliefs_stay_on_simplex(lossy5, data):
    x = data[1]
    stream = simulate_loss(encode_lossy(x, lossy5), LossChannel(0.1, seed=3))
    dec = run_decoder(stream.full_indices(), lossy5, stream.received_mask())
    assert np.all(dec.beliefs >= 0) and np.allclose(dec.beliefs.sum(1), 1)
    lost = ~stream.received_mask()
    assert np.allclose(dec.reconstruction[lost], dec.beliefs[lost] @ lossy5.model.means)


def test_concealment_beats_naive_fill(lossy5, data):
    x = data[1]
    stream = simulate_loss(encode_lossy(x, lossy5), LossChannel(0.05, seed=4))
    rec = decode_lossy(stream, lossy5)
    lost = np.flatnonzero(~stream.received_mask())
    lost = lost[lost > 0]
    ours = np.mean((x[lost] - rec[lost]) ** 2)
    zero = np.mean(x[lost] ** 2)
    repeat = np.mean((x[lost] - rec[lost - 1]) ** 2)
    assert ours <= zero and ours <= repeat


def test_distortion_grows_with_loss(lossy5):
    _, x = sample(lossy5.model, 200_000, 9)
    idx = encode_lossy(x, lossy5)
    d = [np.mean((x - decode_lossy(simulate_loss(idx, LossChannel(p, seed=5)), lossy5)) ** 2)
         for p in (0.0, 0.01, 0.05, 0.1)]
    assert np.all(np.diff(d) > 0)


def test_channel_rate_and_determinism():
    ch = LossChannel(0.1, seed=7)
    m = ch.erasures(100_000)
    assert abs(m.mean() - 0.1) < 0.005
    assert np.array_equal(m, LossChannel(0.1, seed=7).erasures(100_000))
    with pytest.raises(ValueError):
        LossChannel(-0.1)


def test_packet_stream_validation(system3):
    bad = PacketStream(np.array([0, 2, 1]), np.array([1, 1, 1]), 4)
    with pytest.raises(ValueError):
        decode_lossy(bad, system3)
    s = PacketStream(np.array([0, 2]), np.array([3, 5]), 4)
    assert s.full_indices().tolist() == [3, -1, 5, -1]
    assert s.received_mask().tolist() == [True, False, True, False]


def test_conceal_is_belief_weighted_mean(system3):
    assert np.isclose(conceal([0.25, 0.75], system3), 0.25 * -1.5 + 0.75 * 1.5)
