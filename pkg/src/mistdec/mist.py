"""Mixed-SNR independent-sampling training for the CNN decoder.

Every iteration draws a brand-new batch: uniform random messages, encoding,
BPSK, and noise at a per-row SNR sampled uniformly from a configured set.
Nothing is ever reused, so the network cannot memorize a training set; at
ell = 50 a full default run touches well under 1% of the possible messages.

Also holds the binary checkpoint reader/writer (format documented in the
README: magic, version, JSON header, raw little-endian arrays, SHA-256).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import RandomStream, as_generator, snr_db_to_noise_variance
from .codes import ConvCodeSpec, LdpcCode, code_shape, encode_batch
from .neural import (DEFAULT_CHANNELS, DEFAULT_KERNEL_SIZE, Adam, CnnDecoder,
                     mse_loss)

__all__ = [
    "TrainingConfig",
    "LossHistory",
    "TrainingDivergedError",
    "CheckpointError",
    "generate_batch",
    "build_model",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "DEFAULT_SNR_SET_DB",
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_ITERATIONS",
]

DEFAULT_SNR_SET_DB = tuple(float(s) for s in range(9))
DEFAULT_BATCH_SIZE = 256
#: Iteration default sized so one n=100 training stays well under an hour of
#: single-core CPU time while clearing the accuracy gates; see README.
DEFAULT_ITERATIONS = 8000

_TRAIN_STREAM_ID = 17


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss.

    Carries the model (at its last finite parameter state) and the loss
    history logged so far.
    """

    def __init__(self, message: str, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history


class CheckpointError(ValueError):
    """Checkpoint file rejected: bad magic, version, truncation, or digest."""


@dataclass(frozen=True)
class TrainingConfig:
    """Everything a training run depends on; hashable and reproducible."""

    code: ConvCodeSpec | LdpcCode
    n: int | None = None
    snr_set_db: tuple[float, ...] = DEFAULT_SNR_SET_DB
    batch_size: int = DEFAULT_BATCH_SIZE
    iterations: int = DEFAULT_ITERATIONS
    learning_rate: float = 1e-3
    seed: int = 0
    alpha: float = 0.0
    outage_snr_db: float = -10.0
    kernel_size: int = DEFAULT_KERNEL_SIZE
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    loss_log_every: int = 10
    # optional step decay, off by default (factor 1 keeps the rate constant)
    lr_decay_every: int = 0
    lr_decay_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "snr_set_db", tuple(float(s) for s in self.snr_set_db))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.snr_set_db:
            raise ValueError("snr_set_db must be non-empty")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.loss_log_every < 1:
            raise ValueError("loss_log_every must be >= 1")
        self.block_shape()  # fail early on a code/n mismatch

    def block_shape(self) -> tuple[int, int]:
        """(n, ell) of the configured code."""
        return code_shape(self.code, self.n)

    def with_seed(self, seed: int) -> "TrainingConfig":
        return replace(self, seed=int(seed))


@dataclass
class LossHistory:
    """Logged (iteration, loss) pairs from one training run."""

    entries: list[tuple[int, float]] = field(default_factory=list)

    def append(self, iteration: int, loss: float):
        self.entries.append((int(iteration), float(loss)))

    def __len__(self):
        return len(self.entries)

    def losses(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.float64)

    def window_mean(self, first: bool, max_iteration: int) -> float:
        """Mean loss over entries in the first or last `max_iteration` steps."""
        if not self.entries:
            raise ValueError("empty loss history")
        last_it = self.entries[-1][0]
        if first:
            vals = [l for it, l in self.entries if it <= max_iteration]
        else:
            vals = [l for it, l in self.entries if it > last_it - max_iteration]
        return float(np.mean(vals))


def generate_batch(cfg: TrainingConfig, rng: np.random.Generator,
                   return_snrs: bool = False):
    """One fresh training batch: received tensor (B, n, 1) and messages (B, ell).

    Per row, independently: SNR uniform over cfg.snr_set_db, message uniform
    over {0,1}^ell, encode, BPSK, additive Gaussian noise at that row's SNR.
    With alpha > 0, each symbol independently drops to the outage SNR with
    probability alpha.  Draw order is fixed (messages, SNR indices, outage
    mask, noise) so batches are reproducible from the generator state.
    """
    rng = as_generator(rng)
    n, ell = cfg.block_shape()
    beta = cfg.batch_size
    msgs = rng.integers(0, 2, size=(beta, ell), dtype=np.uint8)
    snr_idx = rng.integers(0, len(cfg.snr_set_db), size=beta)
    snrs = np.array(cfg.snr_set_db, dtype=np.float64)[snr_idx]
    sigma = np.sqrt([snr_db_to_noise_variance(s) for s in cfg.snr_set_db])[snr_idx]
    sigma = sigma[:, None]
    if cfg.alpha > 0.0:
        outage = rng.random(size=(beta, n)) < cfg.alpha
        sigma_out = np.sqrt(snr_db_to_noise_variance(cfg.outage_snr_db))
        sigma = np.where(outage, sigma_out, sigma)
    x = 1.0 - 2.0 * encode_batch(cfg.code, msgs).astype(np.float64)
    y = x + sigma * rng.standard_normal(size=(beta, n))
    out = (y[:, :, None], msgs)
    return out + (snrs,) if return_snrs else out


def build_model(cfg: TrainingConfig, dtype=np.float32) -> CnnDecoder:
    """Fresh untrained model whose shapes match the configured code."""
    n, ell = cfg.block_shape()
    return CnnDecoder(n, ell, kernel_size=cfg.kernel_size, channels=cfg.channels,
                      seed=cfg.seed, dtype=dtype)


def train(model: CnnDecoder, cfg: TrainingConfig,
          progress=None) -> tuple[CnnDecoder, LossHistory]:
    """Run the full training loop; returns the model switched to infer mode.

    `progress`, if given, is called as progress(iteration, loss) at every
    logged step.  A non-finite loss aborts via TrainingDivergedError before
    any parameter update consumes the bad gradients.
    """
    n, ell = cfg.block_shape()
    if model.n != n or model.ell != ell:
        raise ValueError(f"model shapes (n={model.n}, ell={model.ell}) do not match "
                         f"code (n={n}, ell={ell})")
    rng = RandomStream(cfg.seed, _TRAIN_STREAM_ID)
    opt = Adam(lr=cfg.learning_rate)
    history = LossHistory()
    model.set_train()
    for it in range(1, cfg.iterations + 1):
        if cfg.lr_decay_every and it > 1 and (it - 1) % cfg.lr_decay_every == 0:
            opt.lr *= cfg.lr_decay_factor
        y, msgs = generate_batch(cfg, rng)
        p = model.forward(y)
        loss, dp = mse_loss(msgs.astype(model.dtype), p)
        if not np.isfinite(loss):
            model.set_infer()
            raise TrainingDivergedError(
                f"non-finite loss {loss} at iteration {it}; parameters kept at "
                f"the last finite state", model=model, history=history)
        grads = model.backward(dp)
        try:
            opt.step(model.params(), grads)
        except FloatingPointError as exc:
            model.set_infer()
            raise TrainingDivergedError(
                f"aborted at iteration {it}: {exc}", model=model, history=history
            ) from exc
        if it == 1 or it % cfg.loss_log_every == 0 or it == cfg.iterations:
            history.append(it, loss)
            if progress is not None:
                progress(it, loss)
    model.set_infer()
    return model, history


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------
_MAGIC = b"MISTCKPT"
_VERSION = 1


def _code_descriptor(code) -> str:
    return code.descriptor()


def _config_header(cfg: TrainingConfig) -> dict:
    return {
        "code": _code_descriptor(cfg.code),
        "n": cfg.block_shape()[0],
        "snr_set_db": list(cfg.snr_set_db),
        "batch_size": cfg.batch_size,
        "iterations": cfg.iterations,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "outage_snr_db": cfg.outage_snr_db,
        "loss_log_every": cfg.loss_log_every,
        "lr_decay_every": cfg.lr_decay_every,
        "lr_decay_factor": cfg.lr_decay_factor,
    }


def save_checkpoint(model: CnnDecoder, cfg: TrainingConfig | None, path) -> None:
    """Write model weights + metadata in the versioned binary format."""
    arrays = dict(model.params())
    arrays.update(model.running_stats())
    records = [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
               for k, v in arrays.items()]
    header = {
        "n": model.n,
        "ell": model.ell,
        "kernel_size": model.kernel_size,
        "channels": list(model.channels),
        "precision": str(model.dtype),
        "model_seed": model.seed,
        "arrays": records,
        "training": _config_header(cfg) if cfg is not None else None,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += np.uint32(_VERSION).tobytes()
    blob += np.uint32(len(hbytes)).tobytes()
    blob += hbytes
    for k in arrays:
        blob += np.ascontiguousarray(arrays[k]).astype(arrays[k].dtype.newbyteorder("<")).tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def checkpoint_digest(path) -> str:
    """Hex SHA-256 stored in a checkpoint's trailer."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return data[-32:].hex()


def load_checkpoint(path) -> tuple[CnnDecoder, dict]:
    """Read a checkpoint; returns an infer-mode model and the header metadata."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(_MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if data[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    stored = data[-32:]
    if hashlib.sha256(data[:-32]).digest() != stored:
        raise CheckpointError(f"{path}: SHA-256 digest mismatch (corrupt file)")
    off = len(_MAGIC)
    version = int(np.frombuffer(data, np.uint32, count=1, offset=off)[0])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off += 4
    hlen = int(np.frombuffer(data, np.uint32, count=1, offset=off)[0])
    off += 4
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    model = CnnDecoder(header["n"], header["ell"], kernel_size=header["kernel_size"],
                       channels=tuple(header["channels"]), seed=header["model_seed"],
                       dtype=np.dtype(header["precision"]))
    arrays = dict(model.params())
    arrays.update({k: None for k in model.running_stats()})
    stats = {}
    for rec in header["arrays"]:
        dt = np.dtype(rec["dtype"]).newbyteorder("<")
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        vals = np.frombuffer(data, dt, count=count, offset=off).astype(rec["dtype"])
        off += count * dt.itemsize
        vals = vals.reshape(rec["shape"])
        if rec["name"] not in arrays:
            raise CheckpointError(f"{path}: unknown array {rec['name']!r}")
        if rec["name"].endswith(("running_mean", "running_var")):
            stats[rec["name"]] = vals
        else:
            target = arrays[rec["name"]]
            if tuple(target.shape) != tuple(vals.shape):
                raise CheckpointError(f"{path}: shape mismatch for {rec['name']!r}")
            target[...] = vals
    model.set_running_stats(stats)
    if off != len(data) - 32:
        raise CheckpointError(f"{path}: payload length mismatch")
    return model.set_infer(), header
