"""Reference decoders: hard/unquantized Viterbi, brute-force MAP, bit flipping,
and log-domain sum-product belief propagation.

Every decoder is a pure deterministic function of its inputs.  The public
single-block operations wrap batched kernels that vectorise across blocks,
which is what the Monte-Carlo harness calls.
"""
from __future__ import annotations

import math

import numpy as np

from .channel import snr_db_to_noise_variance
from .codes import ConvCodeSpec, LdpcCode, Trellis, build_trellis, conv_encode_batch

__all__ = [
    "LLR_MAX",
    "llr_from_awgn",
    "viterbi_hard",
    "viterbi_soft",
    "viterbi_hard_batch",
    "viterbi_soft_batch",
    "enumerate_codebook",
    "map_bruteforce",
    "map_bruteforce_batch",
    "bit_flip_decode",
    "bit_flip_decode_batch",
    "bp_decode",
    "bp_decode_batch",
    "BpWorkspace",
]

#: LLR magnitudes are clamped here to keep tanh off its saturated plateau.
LLR_MAX = 30.0

_BIG = np.float64(1e30)  # unreachable-state path metric


def llr_from_awgn(y, snr_db: float) -> np.ndarray:
    """Standard AWGN LLR 2*y/sigma^2, clamped to +-LLR_MAX.

    Positive values favour bit 0 (the +1 symbol).
    """
    y = np.asarray(y, dtype=np.float64)
    var = snr_db_to_noise_variance(snr_db)
    if var == 0.0:
        return np.clip(np.sign(y) * LLR_MAX, -LLR_MAX, LLR_MAX)
    return np.clip(2.0 * y / var, -LLR_MAX, LLR_MAX)


# ---------------------------------------------------------------------------
# Viterbi
# ---------------------------------------------------------------------------

def _viterbi_core(metrics: np.ndarray, trellis: Trellis, zero_tail: bool,
                  memory: int) -> np.ndarray:
    """Shared add-compare-select over precomputed branch metrics.

    metrics: (B, T, S, 2) cost of taking (state, input) at each step.  Ties
    prefer the lower-indexed predecessor, which is deterministic.
    """
    B, T, S, _ = metrics.shape
    pm = np.full((B, S), _BIG)
    pm[:, 0] = 0.0  # encoder starts in the all-zero state
    in_state = trellis.in_state  # (S, 2)
    in_bit = trellis.in_bit
    bidx = np.arange(B)
    backptr = np.empty((T, B, S), dtype=np.uint8)
    for t in range(T):
        cand = pm[:, in_state] + metrics[:, t][:, in_state, in_bit]  # (B, S, 2)
        choice = np.argmin(cand, axis=2)
        backptr[t] = choice
        pm = np.take_along_axis(cand, choice[:, :, None], axis=2)[:, :, 0]
    if zero_tail:
        state = np.zeros(B, dtype=np.int64)
    else:
        state = np.argmin(pm, axis=1)
    bits = np.empty((B, T), dtype=np.uint8)
    for t in range(T - 1, -1, -1):
        j = backptr[t][bidx, state]
        bits[:, t] = in_bit[state, j]
        state = in_state[state, j].astype(np.int64)
    if zero_tail:
        bits = bits[:, :T - memory]
    return bits


def _check_block_shape(arr: np.ndarray, spec: ConvCodeSpec):
    r = spec.rate_inverse
    if arr.ndim != 2 or arr.shape[1] == 0 or arr.shape[1] % r:
        raise ValueError(f"block length {arr.shape[-1]} is not a multiple of {r}")


def viterbi_hard_batch(bits, trellis: Trellis, spec: ConvCodeSpec) -> np.ndarray:
    """ML messages under the Hamming metric on hard-sliced bits, (B, n) in."""
    bits = np.asarray(bits, dtype=np.uint8)
    _check_block_shape(bits, spec)
    B = bits.shape[0]
    r = spec.rate_inverse
    T = bits.shape[1] // r
    obs = bits.reshape(B, T, r).astype(np.float64)
    out = trellis.out_bits.reshape(-1, r).astype(np.float64)  # (S*2, r)
    # Hamming(o, c) = sum(c) - 2 o.c up to a per-step constant shared by all branches
    metrics = out.sum(axis=1)[None, None, :] - 2.0 * (
        obs.reshape(B * T, r) @ out.T).reshape(B, T, -1)
    metrics = metrics.reshape(B, T, trellis.num_states, 2)
    return _viterbi_core(metrics, trellis, spec.termination == "zero-tail", spec.memory)


def viterbi_soft_batch(y, trellis: Trellis, spec: ConvCodeSpec) -> np.ndarray:
    """ML messages under the squared-Euclidean metric on unquantized samples."""
    y = np.asarray(y, dtype=np.float64)
    _check_block_shape(y, spec)
    B = y.shape[0]
    r = spec.rate_inverse
    T = y.shape[1] // r
    obs = y.reshape(B, T, r)
    sym = 1.0 - 2.0 * trellis.out_bits.reshape(-1, r).astype(np.float64)
    # ||y - x||^2 = ||y||^2 + r - 2 y.x; the constants cancel across branches
    metrics = (-2.0 * (obs.reshape(B * T, r) @ sym.T)).reshape(
        B, T, trellis.num_states, 2)
    return _viterbi_core(metrics, trellis, spec.termination == "zero-tail", spec.memory)


def viterbi_hard(bits, trellis: Trellis, spec: ConvCodeSpec) -> np.ndarray:
    return viterbi_hard_batch(np.asarray(bits)[None, :], trellis, spec)[0]


def viterbi_soft(y, trellis: Trellis, spec: ConvCodeSpec) -> np.ndarray:
    return viterbi_soft_batch(np.asarray(y)[None, :], trellis, spec)[0]


# ---------------------------------------------------------------------------
# Brute-force MAP oracle
# ---------------------------------------------------------------------------

MAX_ORACLE_BITS = 16


def enumerate_codebook(encode_batch, ell: int) -> tuple[np.ndarray, np.ndarray]:
    """All 2^ell (message, BPSK symbol vector) pairs in message-index order.

    ``encode_batch`` maps (B, ell) messages to (B, n) codewords; for the
    standard codes pass a partial of conv_encode_batch / ldpc_encode_batch.
    """
    if ell > MAX_ORACLE_BITS:
        raise ValueError(f"codebook with ell={ell} > {MAX_ORACLE_BITS} refused")
    idx = np.arange(1 << ell, dtype=np.uint32)
    msgs = ((idx[:, None] >> np.arange(ell - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
    cws = encode_batch(msgs)
    return msgs, 1.0 - 2.0 * cws.astype(np.float64)


def conv_codebook(spec: ConvCodeSpec, ell: int) -> tuple[np.ndarray, np.ndarray]:
    return enumerate_codebook(lambda m: conv_encode_batch(m, spec), ell)


def map_bruteforce_batch(y, codebook: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """argmax_m P(m | y) on AWGN with uniform messages: the nearest codeword
    in Euclidean distance, ties broken by lowest message index."""
    msgs, symbols = codebook
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != symbols.shape[1]:
        raise ValueError(f"received length {y.shape[-1]} != codeword length {symbols.shape[1]}")
    corr = y @ symbols.T  # distance ranking flips to correlation ranking exactly
    return msgs[np.argmax(corr, axis=-1)]


def map_bruteforce(y, codebook) -> np.ndarray:
    return map_bruteforce_batch(np.asarray(y, dtype=np.float64)[None, :], codebook)[0]


# ---------------------------------------------------------------------------
# Bit flipping
# ---------------------------------------------------------------------------

def bit_flip_decode_batch(bits, code: LdpcCode, max_iter: int = 50
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Gallager parallel bit flipping.

    Each iteration flips every bit whose unsatisfied-check count strictly
    exceeds ceil(dv/2).  Stops on a zero syndrome, when an iteration flips
    nothing, or at max_iter.  Returns (messages, converged).
    """
    c = np.asarray(bits, dtype=np.uint8)
    if c.ndim != 2 or c.shape[1] != code.n:
        raise ValueError(f"expected (batch, {code.n}) bits, got {c.shape}")
    c = c.copy()
    B = c.shape[0]
    Hf = code.H.astype(np.float64)
    threshold = math.ceil(code.dv / 2)
    active = np.arange(B)
    converged = np.zeros(B, dtype=bool)
    synd = (c.astype(np.float64) @ Hf.T) % 2
    done = ~synd.any(axis=1)
    converged[done] = True
    active = active[~done]
    for _ in range(max_iter):
        if active.size == 0:
            break
        sub = c[active].astype(np.float64)
        synd = (sub @ Hf.T) % 2
        unsat = synd @ Hf  # (A, n) unsatisfied-check counts per bit
        flips = unsat > threshold
        stuck = ~flips.any(axis=1)
        c[active] ^= flips.astype(np.uint8)
        synd_after = (c[active].astype(np.float64) @ Hf.T) % 2
        ok = ~synd_after.any(axis=1)
        converged[active[ok]] = True
        active = active[~(ok | stuck)]
    return c[:, code.systematic_cols], converged


def bit_flip_decode(bits, code: LdpcCode, max_iter: int = 50
                    ) -> tuple[np.ndarray, bool]:
    msgs, conv = bit_flip_decode_batch(np.asarray(bits)[None, :], code, max_iter)
    return msgs[0], bool(conv[0])


# ---------------------------------------------------------------------------
# Belief propagation (log-domain sum-product, flooding schedule)
# ---------------------------------------------------------------------------

class BpWorkspace:
    """Edge index arrays for a parity-check matrix, grouped two ways.

    Check-ordered edges come in an (m, dc) grid; ``var_gather`` re-groups the
    same flat edges by variable into (n, dv) so both halves of the flooding
    update are plain gathers and reductions.
    """

    def __init__(self, code: LdpcCode):
        H = code.H
        m, n = H.shape
        rows, cols = np.nonzero(H)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        counts = np.bincount(rows, minlength=m)
        if not np.all(counts == counts[0]):
            raise ValueError("BP workspace requires constant row weight")
        self.dc = int(counts[0])
        self.check_vars = cols.reshape(m, self.dc)          # variable of each edge
        vcounts = np.bincount(cols, minlength=n)
        if not np.all(vcounts == vcounts[0]):
            raise ValueError("BP workspace requires constant column weight")
        self.dv = int(vcounts[0])
        vorder = np.lexsort((rows, cols))
        self.var_gather = np.argsort(vorder, kind="stable")  # unused; kept for clarity
        self.var_edges = vorder.reshape(n, self.dv)          # flat edge ids per variable
        self.m, self.n = m, n
        self.code = code


def _leave_one_out_prod(t: np.ndarray) -> np.ndarray:
    """Product over the last axis excluding each element, via prefix/suffix scans."""
    B = t.shape[:-1]
    k = t.shape[-1]
    pre = np.ones_like(t)
    suf = np.ones_like(t)
    np.cumprod(t[..., :-1], axis=-1, out=pre[..., 1:])
    np.cumprod(t[..., :0:-1], axis=-1, out=suf[..., -2::-1])
    return pre * suf


def bp_decode_batch(llrs, code: LdpcCode, max_iter: int = 50,
                    workspace: BpWorkspace | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Log-domain sum-product (tanh rule) with flooding schedule.

    Early-stops blocks whose hard decision satisfies every check; a block
    whose decision rests on an exactly-zero posterior is never flagged
    converged (a tie carries no decision).  Returns (messages, converged).
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.ndim != 2 or llrs.shape[1] != code.n:
        raise ValueError(f"expected (batch, {code.n}) LLRs, got {llrs.shape}")
    if not np.isfinite(llrs).all():
        raise ValueError("LLRs must be finite")
    ws = workspace or BpWorkspace(code)
    B = llrs.shape[0]
    Hf = code.H.astype(np.float64)

    hard = (llrs < 0).astype(np.uint8)
    out_bits = hard.copy()
    decided = (llrs != 0).all(axis=1)
    synd_ok = ~(((hard.astype(np.float64) @ Hf.T) % 2).any(axis=1))
    converged = decided & synd_ok
    active = np.nonzero(~converged)[0]
    if active.size == 0 or max_iter == 0:
        return out_bits[:, code.systematic_cols], converged

    prior = np.clip(llrs[active], -LLR_MAX, LLR_MAX)
    v2c = prior[:, ws.check_vars]  # (A, m, dc)
    for _ in range(max_iter):
        t = np.tanh(0.5 * np.clip(v2c, -LLR_MAX, LLR_MAX))
        c2v = 2.0 * np.arctanh(np.clip(_leave_one_out_prod(t), -1 + 1e-15, 1 - 1e-15))
        c2v = np.clip(c2v, -LLR_MAX, LLR_MAX)
        flat = c2v.reshape(c2v.shape[0], -1)
        posterior = prior + flat[:, ws.var_edges].sum(axis=2)  # (A, n)
        hard_a = (posterior < 0).astype(np.uint8)
        synd_ok = ~(((hard_a.astype(np.float64) @ Hf.T) % 2).any(axis=1))
        decided = (posterior != 0).all(axis=1)
        fin = synd_ok & decided
        out_bits[active] = hard_a
        if fin.any():
            converged[active[fin]] = True
            keep = ~fin
            active = active[keep]
            if active.size == 0:
                break
            prior = prior[keep]
            posterior = posterior[keep]
            c2v = c2v[keep]
        v2c = posterior[:, ws.check_vars] - c2v
    return out_bits[:, code.systematic_cols], converged


def bp_decode(llr, code: LdpcCode, max_iter: int = 50) -> tuple[np.ndarray, bool]:
    msgs, conv = bp_decode_batch(np.asarray(llr, dtype=np.float64)[None, :], code, max_iter)
    return msgs[0], bool(conv[0])
