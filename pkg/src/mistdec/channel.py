"""BPSK modulation, SNR conversion, and seedable AWGN / outage channel simulation.

SNR is expressed in dB at every interface and converted internally to a
linear noise variance with unit symbol energy.  All randomness flows through
``RandomStream``: identical (seed, stream_id) reproduces the identical sample
sequence, and distinct stream ids give independent streams (numpy SeedSequence
spawn keys), so parallel workers stay deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RandomStream",
    "as_generator",
    "ChannelModel",
    "awgn_model",
    "outage_model",
    "bpsk_modulate",
    "snr_db_to_noise_variance",
    "awgn_transmit",
    "outage_transmit",
    "transmit",
    "hard_slice",
]

DEFAULT_OUTAGE_SNR_DB = -10.0


class RandomStream:
    """Deterministic random stream addressed by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))))

    def normal(self, size=None):
        return self.rng.standard_normal(size)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomStream or a bare numpy Generator."""
    return rng.rng if isinstance(rng, RandomStream) else rng


@dataclass(frozen=True)
class ChannelModel:
    """AWGN at ``snr_db``, or per-symbol i.i.d. outage mixture when alpha > 0.

    Under outage, each symbol independently drops to ``outage_snr_db`` with
    probability alpha; the remaining symbols see the nominal SNR.
    """

    snr_db: float
    alpha: float = 0.0
    outage_snr_db: float = DEFAULT_OUTAGE_SNR_DB

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be a probability")
        if self.alpha > 0 and self.outage_snr_db > self.snr_db:
            raise ValueError("outage SNR must not exceed the nominal SNR")

    @property
    def is_outage(self) -> bool:
        return self.alpha > 0.0

    def at_snr(self, snr_db: float) -> "ChannelModel":
        return ChannelModel(snr_db, self.alpha, self.outage_snr_db)

    def descriptor(self) -> str:
        if self.is_outage:
            return f"outage:alpha={self.alpha:g},outage_snr_db={self.outage_snr_db:g}"
        return "awgn"


def awgn_model(snr_db: float) -> ChannelModel:
    return ChannelModel(snr_db)


def outage_model(nominal_snr_db: float, alpha: float,
                 outage_snr_db: float = DEFAULT_OUTAGE_SNR_DB) -> ChannelModel:
    return ChannelModel(nominal_snr_db, alpha, outage_snr_db)


def bpsk_modulate(cw) -> np.ndarray:
    """Map bit 0 -> +1 and bit 1 -> -1."""
    bits = np.asarray(cw)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("codeword bits must be 0 or 1")
    return 1.0 - 2.0 * bits.astype(np.float64)


def snr_db_to_noise_variance(snr_db: float) -> float:
    """sigma^2 = 10^(-snr_db/10); +inf dB means the noiseless channel."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def awgn_transmit(b, snr_db: float, rng) -> np.ndarray:
    """y = b + z with z i.i.d. N(0, sigma^2(snr_db)) per entry.

    A noiseless channel (sigma^2 = 0) returns b unchanged without consuming
    any random draws.
    """
    b = np.asarray(b, dtype=np.float64)
    var = snr_db_to_noise_variance(snr_db)
    if var == 0.0:
        return b.copy()
    return b + math.sqrt(var) * as_generator(rng).standard_normal(b.shape)


def outage_transmit(b, model: ChannelModel, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-symbol mixture channel; returns (y, outage mask).

    The mask marks the symbols that saw the outage noise level.  It is
    diagnostic output only; decoders never see it.  alpha = 0 degenerates to
    plain AWGN at the nominal SNR, alpha = 1 to AWGN at the outage SNR.
    """
    b = np.asarray(b, dtype=np.float64)
    g = as_generator(rng)
    mask = g.random(b.shape) < model.alpha
    sigma = np.where(mask,
                     math.sqrt(snr_db_to_noise_variance(model.outage_snr_db)),
                     math.sqrt(snr_db_to_noise_variance(model.snr_db)))
    y = b + sigma * g.standard_normal(b.shape)
    return y, mask.astype(np.uint8)


def transmit(b, model: ChannelModel, rng) -> np.ndarray:
    """Transmit through the configured channel, discarding diagnostics."""
    if model.is_outage:
        return outage_transmit(b, model, rng)[0]
    return awgn_transmit(b, model.snr_db, rng)


def hard_slice(y) -> np.ndarray:
    """bit = 0 if sample >= 0 else 1 (ties go to 0)."""
    return (np.asarray(y) < 0).astype(np.uint8)
