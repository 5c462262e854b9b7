"""Channel-coding simulation toolkit.

Encoders and classical decoders for convolutional and LDPC codes, a
from-scratch CNN decoder trained on freshly sampled mixed-SNR batches, and a
deterministic Monte-Carlo harness for BER/BLER curves, hyperparameter
sweeps, and decode-latency benchmarks.
"""

from .channel import (ChannelModel, RandomStream, awgn_model, awgn_transmit,
                      bpsk_modulate, hard_slice, outage_model, outage_transmit,
                      snr_db_to_noise_variance, transmit)
from .classical import (LLR_MAX, bit_flip_decode, bit_flip_decode_batch,
                        bp_decode, bp_decode_batch, conv_codebook,
                        enumerate_codebook, llr_from_awgn, map_bruteforce_batch,
                        viterbi_hard, viterbi_hard_batch, viterbi_soft,
                        viterbi_soft_batch)
from .codes import (TRUNCATED, UNCODED, ZERO_TAIL, ConvCodeSpec, LdpcCode,
                    LdpcConstructionError, Trellis, build_trellis,
                    code_from_descriptor, code_shape, conv_encode,
                    conv_encode_batch, encode_batch, from_alist, gf2_rank,
                    ldpc_encode, ldpc_encode_batch, ldpc_generate,
                    parse_code_string, syndrome, to_alist)
from .evaluation import (EvalPoint, EvalReport, LatencyRecord, StopRule,
                         SweepResult, bench_latency, cnn_decoder, emit_csv,
                         emit_latency_csv, emit_loss_csv, evaluate,
                         make_decoder, parse_eval_csv, sweep_hyperparams,
                         wilson_halfwidth)
from .mist import (CheckpointError, LossHistory, TrainingConfig,
                   TrainingDivergedError, build_model, generate_batch,
                   load_checkpoint, save_checkpoint, train)
from .neural import (Adam, BatchNorm, CnnDecoder, Conv1d, DenseSigmoid, ReLU,
                     cnn_decode, mse_loss, sigmoid)

__version__ = "0.1.0"
