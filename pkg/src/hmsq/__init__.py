"""Quantization of hidden Markov sources by tracking the state belief."""
from .hmm import (HmmModel, GaussianEmissions, DiscreteEmissions, NumericalImpossibility,
                  forward, backward, gamma, predict_belief, stationary_distribution, sample, fit)
from .quantizer import (Codebook, MixturePdf, lloyd_design, quantize, dequantize, cell_interval,
                        uniform_codebook, expected_distortion)
from .tracking import CodecSystem, train_system, encode, decode, run_encoder, run_decoder
from .loss import LossChannel, PacketStream, simulate_loss, decode_lossy
from .scalable import ScalableSystem, encode_scalable, decode_base, decode_enh, delayed_enh_belief
from .bitstream import ingest_samples

__version__ = "0.1.0"
