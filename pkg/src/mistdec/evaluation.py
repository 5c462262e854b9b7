"""Monte-Carlo BER/BLER evaluation, hyperparameter sweeps, latency benchmarks.

Evaluation streams blocks in fixed-size chunks whose randomness is keyed by
(seed, SNR-point index, chunk index), so results are byte-identical for any
worker count and all decoders in a run score the exact same received vectors
(common random numbers).  Per point, simulation continues until both a
minimum block count and a minimum block-error count are reached, or a hard
cap; Wilson 95% intervals quantify what the counts support.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import RandomStream, snr_db_to_noise_variance
from .classical import (BpWorkspace, bit_flip_decode_batch, bp_decode_batch,
                        conv_codebook, llr_from_awgn, map_bruteforce_batch,
                        viterbi_hard_batch, viterbi_soft_batch)
from .codes import (ConvCodeSpec, LdpcCode, UNCODED, build_trellis, code_shape,
                    encode_batch)
from .mist import LossHistory, TrainingConfig, build_model, train

__all__ = [
    "StopRule",
    "EvalPoint",
    "EvalReport",
    "LatencyRecord",
    "SweepResult",
    "wilson_halfwidth",
    "make_decoder",
    "cnn_decoder",
    "decoder_names",
    "evaluate",
    "sweep_hyperparams",
    "bench_latency",
    "emit_csv",
    "emit_loss_csv",
    "emit_latency_csv",
    "parse_eval_csv",
    "EVAL_CSV_HEADER",
    "LOSS_CSV_HEADER",
    "LATENCY_CSV_HEADER",
]

EVAL_CSV_HEADER = ("decoder,code,n,l,snr_db,alpha,blocks,bit_errors,"
                   "block_errors,ber,bler,ber_ci95,bler_ci95,seed")
LOSS_CSV_HEADER = "config_id,iteration,loss"
LATENCY_CSV_HEADER = "decoder,n,batch,mean_ms,median_ms,p99_ms"

_CHUNK_STREAM_STRIDE = 1 << 20  # chunks per SNR point namespace


def wilson_halfwidth(successes: int, trials: int, z: float = 1.96) -> float:
    """Half-width of the Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0
    p = successes / trials
    z2n = z * z / trials
    return float(z / (1.0 + z2n) * np.sqrt(p * (1.0 - p) / trials
                                           + z2n / (4.0 * trials)))


@dataclass(frozen=True)
class StopRule:
    """Keep simulating a point until both minima are met, or the cap."""

    min_blocks: int = 10_000
    min_block_errors: int = 100
    max_blocks: int = 2_000_000

    def __post_init__(self):
        if self.min_blocks < 1 or self.max_blocks < self.min_blocks:
            raise ValueError("need 1 <= min_blocks <= max_blocks")

    def satisfied(self, blocks: int, block_errors: int) -> bool:
        if blocks >= self.max_blocks:
            return True
        return blocks >= self.min_blocks and block_errors >= self.min_block_errors


@dataclass
class EvalPoint:
    """Error counts for one (decoder, SNR) cell."""

    decoder: str
    code: str
    n: int
    ell: int
    snr_db: float
    alpha: float
    blocks: int
    bit_errors: int
    block_errors: int
    seed: int

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.blocks * self.ell) if self.blocks else 0.0

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks if self.blocks else 0.0

    @property
    def ber_ci95(self) -> float:
        return wilson_halfwidth(self.bit_errors, self.blocks * self.ell)

    @property
    def bler_ci95(self) -> float:
        return wilson_halfwidth(self.block_errors, self.blocks)


@dataclass
class EvalReport:
    """All points of one evaluation run, in deterministic row order."""

    points: list[EvalPoint] = field(default_factory=list)

    def rows(self) -> list[EvalPoint]:
        return sorted(self.points, key=lambda p: (p.decoder, p.snr_db))

    def point(self, decoder: str, snr_db: float) -> EvalPoint:
        for p in self.points:
            if p.decoder == decoder and p.snr_db == snr_db:
                return p
        raise KeyError((decoder, snr_db))

    def decoders(self) -> list[str]:
        return sorted({p.decoder for p in self.points})


@dataclass
class LatencyRecord:
    decoder: str
    n: int
    batch: int
    mean_ms: float
    median_ms: float
    p99_ms: float


@dataclass
class SweepResult:
    config_id: str
    kernel_size: int
    channels: tuple[int, ...]
    seed: int
    history: LossHistory


# ---------------------------------------------------------------------------
# decoder adapters
# ---------------------------------------------------------------------------

class _Decoder:
    """Adapter giving every decoder the same calling shape.

    ``decode(y, snr_db)`` maps received samples (B, n) to messages (B, ell).
    Soft decoders derive LLRs from the nominal SNR; under an outage channel
    they deliberately keep assuming the nominal noise level, mirroring a
    receiver unaware of the outage state.
    """

    def __init__(self, name: str, fn, n: int, ell: int):
        self.name = name
        self._fn = fn
        self.n = n
        self.ell = ell

    def decode(self, y: np.ndarray, snr_db: float) -> np.ndarray:
        out = self._fn(y, snr_db)
        if out.shape != (y.shape[0], self.ell):
            raise ValueError(f"{self.name}: decoder returned {out.shape}, "
                             f"expected {(y.shape[0], self.ell)}")
        return out


def decoder_names(code) -> list[str]:
    """Decoders applicable to a code, in report order."""
    if isinstance(code, LdpcCode):
        return ["bit-flip", "bp", "cnn"]
    if code is UNCODED:
        return ["hard-slice"]
    return ["viterbi-hard", "viterbi-soft", "map-oracle", "cnn"]


def make_decoder(name: str, code, n: int | None = None, model=None) -> _Decoder:
    """Build a named decoder adapter for a code.

    Names: viterbi-hard, viterbi-soft, map-oracle (conv codes);
    bit-flip, bp (LDPC); cnn (either, needs a trained model); hard-slice
    (uncoded passthrough).
    """
    n, ell = code_shape(code, n)
    if name == "cnn":
        if model is None:
            raise ValueError("cnn decoder needs a trained model")
        if model.train_mode:
            raise ValueError("cnn decoder must be in infer mode")
        if model.n != n or model.ell != ell:
            raise ValueError(f"model was trained for (n={model.n}, ell={model.ell}); "
                             f"this evaluation needs (n={n}, ell={ell})")
        return _Decoder(name, lambda y, s: model.decode_batch(y), n, ell)
    if name == "hard-slice":
        if ell != n:
            raise ValueError("hard-slice applies to the uncoded passthrough only")
        return _Decoder(name, lambda y, s: (y < 0).astype(np.uint8), n, ell)
    if isinstance(code, ConvCodeSpec):
        trellis = build_trellis(code)
        if name == "viterbi-hard":
            return _Decoder(name, lambda y, s: viterbi_hard_batch(
                (y < 0).astype(np.uint8), trellis, code), n, ell)
        if name == "viterbi-soft":
            return _Decoder(name, lambda y, s: viterbi_soft_batch(y, trellis, code), n, ell)
        if name == "map-oracle":
            book = conv_codebook(code, ell)
            return _Decoder(name, lambda y, s: map_bruteforce_batch(y, book), n, ell)
    if isinstance(code, LdpcCode):
        if name == "bit-flip":
            return _Decoder(name, lambda y, s: bit_flip_decode_batch(
                (y < 0).astype(np.uint8), code)[0], n, ell)
        if name == "bp":
            ws = BpWorkspace(code)
            return _Decoder(name, lambda y, s: bp_decode_batch(
                llr_from_awgn(y, s), code, workspace=ws)[0], n, ell)
    raise ValueError(f"unknown decoder {name!r} for code {code!r}")


def cnn_decoder(model) -> _Decoder:
    """Adapter around a bare infer-mode model, no code object required.

    Latency benchmarks use this: decode time depends on shapes, not weights.
    """
    if model.train_mode:
        raise ValueError("model must be in infer mode")
    return _Decoder("cnn", lambda y, s: model.decode_batch(y), model.n, model.ell)


# ---------------------------------------------------------------------------
# Monte-Carlo evaluation
# ---------------------------------------------------------------------------

def _simulate_chunk(code, n: int, ell: int, snr_db: float, alpha: float,
                    outage_snr_db: float, seed: int, point_index: int,
                    chunk_index: int, blocks: int):
    """Messages and received samples for one chunk; pure in its arguments."""
    rng = RandomStream(seed, point_index * _CHUNK_STREAM_STRIDE + chunk_index).rng
    msgs = rng.integers(0, 2, size=(blocks, ell), dtype=np.uint8)
    x = 1.0 - 2.0 * encode_batch(code, msgs).astype(np.float64)
    sigma = np.sqrt(snr_db_to_noise_variance(snr_db))
    if alpha > 0.0:
        mask = rng.random(size=(blocks, n)) < alpha
        sig = np.where(mask, np.sqrt(snr_db_to_noise_variance(outage_snr_db)), sigma)
        y = x + sig * rng.standard_normal(size=(blocks, n))
    elif sigma == 0.0:
        y = x
    else:
        y = x + sigma * rng.standard_normal(size=(blocks, n))
    return msgs, y


def _score(decoded: np.ndarray, msgs: np.ndarray) -> tuple[int, int]:
    wrong = decoded != msgs
    return int(wrong.sum()), int(wrong.any(axis=1).sum())


def evaluate(decoders, code, snr_grid_db, *, n: int | None = None,
             alpha: float = 0.0, outage_snr_db: float = -10.0,
             stop: StopRule = StopRule(), seed: int = 0, workers: int = 1,
             chunk_blocks: int = 2000, progress=None) -> EvalReport:
    """BER/BLER curves for one or more decoders over an SNR grid.

    ``decoders`` is a list of adapters from make_decoder (or one adapter).
    All decoders score identical received vectors.  Each decoder stops
    accumulating at the first chunk where the stop rule holds for it, so its
    counts do not depend on which other decoders run alongside.
    """
    if isinstance(decoders, _Decoder):
        decoders = [decoders]
    if not decoders:
        raise ValueError("no decoders given")
    n, ell = code_shape(code, n)
    for d in decoders:
        if d.n != n or d.ell != ell:
            raise ValueError(f"decoder {d.name} shaped (n={d.n}, ell={d.ell}), "
                             f"evaluation needs (n={n}, ell={ell})")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    desc = code.descriptor()
    report = EvalReport()
    for pi, snr_db in enumerate(snr_grid_db):
        snr_db = float(snr_db)
        counts = {d.name: [0, 0, 0] for d in decoders}  # blocks, bit err, blk err

        def run_chunk(ci: int):
            msgs, y = _simulate_chunk(code, n, ell, snr_db, alpha, outage_snr_db,
                                      seed, pi, ci, chunk_blocks)
            return {d.name: _score(d.decode(y, snr_db), msgs) for d in decoders}

        def done(name: str) -> bool:
            c = counts[name]
            return stop.satisfied(c[0], c[2])

        def commit(results: dict):
            for d in decoders:
                if done(d.name):
                    continue
                be, ble = results[d.name]
                c = counts[d.name]
                c[0] += chunk_blocks
                c[1] += be
                c[2] += ble

        if workers == 1:
            ci = 0
            while not all(done(d.name) for d in decoders):
                commit(run_chunk(ci))
                ci += 1
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                pending = {}
                next_submit = 0
                next_commit = 0
                while not all(done(d.name) for d in decoders):
                    while len(pending) < workers:
                        pending[next_submit] = pool.submit(run_chunk, next_submit)
                        next_submit += 1
                    commit(pending.pop(next_commit).result())
                    next_commit += 1
                for fut in pending.values():
                    fut.cancel()
        for d in decoders:
            c = counts[d.name]
            report.points.append(EvalPoint(
                decoder=d.name, code=desc, n=n, ell=ell, snr_db=snr_db,
                alpha=alpha, blocks=c[0], bit_errors=c[1], block_errors=c[2],
                seed=seed))
        if progress is not None:
            progress(snr_db, {d.name: tuple(counts[d.name]) for d in decoders})
    return report


# ---------------------------------------------------------------------------
# hyperparameter sweep
# ---------------------------------------------------------------------------

def sweep_hyperparams(base_cfg: TrainingConfig, kernel_sizes=None,
                      channel_grids=None, seeds=(0, 1, 2),
                      progress=None) -> list[SweepResult]:
    """Train every (kernel size, channel widths, seed) combination.

    Budgets (batch size, iterations, learning rate) come unchanged from
    ``base_cfg``, so loss curves are comparable across configurations.
    """
    kernel_sizes = list(kernel_sizes or [base_cfg.kernel_size])
    channel_grids = [tuple(c) for c in (channel_grids or [base_cfg.channels])]
    if not kernel_sizes or not channel_grids or not seeds:
        raise ValueError("sweep grid must be non-empty")
    results: list[SweepResult] = []
    for k in kernel_sizes:
        for ch in channel_grids:
            for s in seeds:
                cfg = replace(base_cfg, kernel_size=int(k), channels=ch, seed=int(s))
                config_id = f"k{k}-c{'-'.join(map(str, ch))}-s{s}"
                model, history = train(build_model(cfg), cfg)
                results.append(SweepResult(config_id, int(k), ch, int(s), history))
                if progress is not None:
                    progress(config_id, history)
    return results


# ---------------------------------------------------------------------------
# latency benchmarking
# ---------------------------------------------------------------------------

def bench_latency(decoder: _Decoder, *, snr_db: float = 4.0, batch_size: int = 1,
                  repetitions: int = 100, warmup: int = 10,
                  seed: int = 0) -> LatencyRecord:
    """Wall-clock decode time per dataword over repeated same-size batches.

    Uses a monotonic clock; warm-up batches are timed but discarded.  The
    measured quantity is batch decode time divided by batch size, so
    batch_size=1 gives single-dataword latency and larger batches show the
    amortized rate.
    """
    if repetitions < 1 or warmup < 0:
        raise ValueError("repetitions >= 1 and warmup >= 0 required")
    code_n, ell = decoder.n, decoder.ell
    rng = RandomStream(seed, 999).rng
    batches = []
    for _ in range(warmup + repetitions):
        y = rng.standard_normal(size=(batch_size, code_n))
        batches.append(y)
    times = []
    for i, y in enumerate(batches):
        t0 = time.perf_counter()
        decoder.decode(y, snr_db)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt / batch_size * 1e3)
    arr = np.array(times)
    return LatencyRecord(decoder=decoder.name, n=code_n, batch=batch_size,
                         mean_ms=float(arr.mean()),
                         median_ms=float(np.median(arr)),
                         p99_ms=float(np.percentile(arr, 99)))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6e}"


def _write_rows(path, header: str, rows: list[list[str]], comments=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments or []:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header.split(","))
        w.writerows(rows)


def emit_csv(report: EvalReport, path, comments=None) -> None:
    """Evaluation rows, sorted by (decoder, snr); header plus one row per point.

    Lines starting with '#' echo the run configuration and are ignored by
    readers.  Fields containing commas (code descriptors) are quoted.  Same
    report -> byte-identical file.
    """
    rows = [[p.decoder, p.code, str(p.n), str(p.ell), f"{p.snr_db:g}",
             f"{p.alpha:g}", str(p.blocks), str(p.bit_errors),
             str(p.block_errors), _fmt(p.ber), _fmt(p.bler),
             _fmt(p.ber_ci95), _fmt(p.bler_ci95), str(p.seed)]
            for p in report.rows()]
    _write_rows(path, EVAL_CSV_HEADER, rows, comments)


def emit_loss_csv(results, path, comments=None) -> None:
    """Loss curves; accepts SweepResults or (config_id, LossHistory) pairs."""
    rows = []
    for r in results:
        cid, hist = (r.config_id, r.history) if isinstance(r, SweepResult) else r
        for it, loss in hist.entries:
            rows.append([cid, str(it), _fmt(loss)])
    _write_rows(path, LOSS_CSV_HEADER, rows, comments)


def emit_latency_csv(records, path, comments=None) -> None:
    rows = [[r.decoder, str(r.n), str(r.batch), _fmt(r.mean_ms),
             _fmt(r.median_ms), _fmt(r.p99_ms)] for r in records]
    _write_rows(path, LATENCY_CSV_HEADER, rows, comments)


def parse_eval_csv(path) -> EvalReport:
    """Read back an emit_csv file (comments skipped); counts are exact."""
    report = EvalReport()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#")) if r]
    if not rows or rows[0] != EVAL_CSV_HEADER.split(","):
        raise ValueError(f"{path}: not an evaluation CSV")
    for f in rows[1:]:
        report.points.append(EvalPoint(
            decoder=f[0], code=f[1], n=int(f[2]), ell=int(f[3]),
            snr_db=float(f[4]), alpha=float(f[5]), blocks=int(f[6]),
            bit_errors=int(f[7]), block_errors=int(f[8]), seed=int(f[13])))
    return report
