"""Encoders and code descriptions: rate-1/2 convolutional codes and regular LDPC codes.

Bit vectors are numpy uint8 arrays with values in {0, 1}.  All constructions
are deterministic given their seed, and code objects are immutable after
construction (safe for concurrent shared reads).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

__all__ = [
    "ConvCodeSpec",
    "Trellis",
    "LdpcCode",
    "LdpcConstructionError",
    "UNCODED",
    "conv_encode",
    "conv_encode_batch",
    "build_trellis",
    "ldpc_generate",
    "ldpc_encode",
    "ldpc_encode_batch",
    "encode_batch",
    "code_shape",
    "syndrome",
    "gf2_rank",
    "to_alist",
    "from_alist",
    "parse_code_string",
    "code_from_descriptor",
    "ZERO_TAIL",
    "TRUNCATED",
]

ZERO_TAIL = "zero-tail"
TRUNCATED = "truncated"


class LdpcConstructionError(RuntimeError):
    """Raised when an LDPC parity-check matrix cannot be built within the retry budget."""


def _as_bits(x) -> np.ndarray:
    b = np.asarray(x, dtype=np.uint8)
    if b.size and b.max(initial=0) > 1:
        raise ValueError("bit vector entries must be 0 or 1")
    return b


@dataclass(frozen=True)
class ConvCodeSpec:
    """Feedforward convolutional code, one input bit per step.

    ``generator_polynomials`` are octal-coded tap masks; the most significant
    bit taps the current input, lower bits tap progressively older register
    contents.  The classic rate-1/2 code is ``(0o5, 0o7)`` with memory 2.
    """

    generator_polynomials: tuple[int, ...]
    memory: int
    termination: str = ZERO_TAIL

    def __post_init__(self):
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if not self.generator_polynomials:
            raise ValueError("need at least one generator polynomial")
        object.__setattr__(self, "generator_polynomials",
                           tuple(int(g) for g in self.generator_polynomials))
        for g in self.generator_polynomials:
            if g <= 0:
                raise ValueError(f"generator polynomial {g!r} must be positive")
            if g >= (1 << (self.memory + 1)):
                raise ValueError(
                    f"polynomial 0o{g:o} does not fit in {self.memory + 1} taps")
        if self.termination not in (ZERO_TAIL, TRUNCATED):
            raise ValueError(f"unknown termination {self.termination!r}")

    @property
    def rate_inverse(self) -> int:
        return len(self.generator_polynomials)

    def message_length(self, n: int) -> int:
        """Message bits carried by an n-bit codeword under this spec's termination."""
        r = self.rate_inverse
        if n % r:
            raise ValueError(f"blocklength {n} not divisible by {r}")
        steps = n // r
        ell = steps - (self.memory if self.termination == ZERO_TAIL else 0)
        if ell <= 0:
            raise ValueError(f"blocklength {n} too short for memory {self.memory}")
        return ell

    def block_length(self, ell: int) -> int:
        steps = ell + (self.memory if self.termination == ZERO_TAIL else 0)
        return steps * self.rate_inverse

    def tap_matrix(self) -> np.ndarray:
        """(rate_inverse, memory+1) 0/1 taps; column 0 taps the current input."""
        m = self.memory
        taps = np.zeros((self.rate_inverse, m + 1), dtype=np.uint8)
        for j, g in enumerate(self.generator_polynomials):
            for i in range(m + 1):
                taps[j, i] = (g >> (m - i)) & 1
        return taps

    def descriptor(self) -> str:
        if self.generator_polynomials == (1,) and self.memory == 0:
            return "uncoded"
        polys = ",".join(format(g, "o") for g in self.generator_polynomials)
        return f"conv:{polys}:{self.termination}"


#: Rate-1 identity "code": BPSK with no coding.  Lets the evaluation harness
#: measure raw-channel error rates through the same pipeline.
UNCODED = ConvCodeSpec((0o1,), memory=0, termination=TRUNCATED)


def conv_encode(msg, spec: ConvCodeSpec) -> np.ndarray:
    """Encode one message; zero-tail termination drives the register back to zero."""
    out = conv_encode_batch(_as_bits(msg)[None, :], spec)
    return out[0]


def conv_encode_batch(msgs, spec: ConvCodeSpec) -> np.ndarray:
    """Encode (B, ell) messages to (B, n) codewords; pure XOR convolution."""
    msgs = _as_bits(msgs)
    if msgs.ndim != 2 or msgs.shape[1] == 0:
        raise ValueError("expected a non-empty (batch, length) bit array")
    m = spec.memory
    u = msgs
    if spec.termination == ZERO_TAIL:
        u = np.concatenate([u, np.zeros((msgs.shape[0], m), dtype=np.uint8)], axis=1)
    steps = u.shape[1]
    padded = np.concatenate([np.zeros((u.shape[0], m), dtype=np.uint8), u], axis=1)
    # windows[b, t, i] = input at time t - m + i; taps column 0 is the current input
    win = np.lib.stride_tricks.sliding_window_view(padded, m + 1, axis=1)
    taps = spec.tap_matrix()[:, ::-1]  # align: window's last element is the current input
    coded = (win @ taps.T.astype(np.int64)) & 1  # (B, steps, rate_inverse)
    return coded.reshape(u.shape[0], steps * spec.rate_inverse).astype(np.uint8)


@dataclass(frozen=True)
class Trellis:
    """Transition table of a convolutional encoder.

    State index packs the register with the newest bit in the most
    significant position, so state ``0b10`` means the previous input was 1.
    ``in_state``/``in_bit`` list, per state, its two incoming transitions in
    a fixed order (lower predecessor state first) for traceback.
    """

    num_states: int
    rate_inverse: int
    next_state: np.ndarray   # (S, 2) int32
    out_bits: np.ndarray     # (S, 2, R) uint8
    in_state: np.ndarray     # (S, 2) int32
    in_bit: np.ndarray       # (S, 2) uint8


def build_trellis(spec: ConvCodeSpec) -> Trellis:
    m = spec.memory
    if m > 16:
        raise ValueError("memory > 16 not supported (trellis too large)")
    num_states = 1 << m
    r = spec.rate_inverse
    next_state = np.zeros((num_states, 2), dtype=np.int32)
    out_bits = np.zeros((num_states, 2, r), dtype=np.uint8)
    for s in range(num_states):
        for u in (0, 1):
            reg = (u << m) | s
            next_state[s, u] = (reg >> 1) if m else 0
            for j, g in enumerate(spec.generator_polynomials):
                out_bits[s, u, j] = bin(g & reg).count("1") & 1
    in_state = np.zeros((num_states, 2), dtype=np.int32)
    in_bit = np.zeros((num_states, 2), dtype=np.uint8)
    fill = np.zeros(num_states, dtype=np.int64)
    for s in range(num_states):
        for u in (0, 1):
            ns = next_state[s, u]
            in_state[ns, fill[ns]] = s
            in_bit[ns, fill[ns]] = u
            fill[ns] += 1
    assert np.all(fill == 2), "every state must have exactly 2 incoming transitions"
    return Trellis(num_states, r, next_state, out_bits, in_state, in_bit)


# ---------------------------------------------------------------------------
# LDPC codes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LdpcCode:
    """Regular LDPC code with a systematic generator.

    ``H`` keeps all n*dv/dc rows of the Gallager construction, so every
    column has weight dv and every row weight dc exactly.  Such a matrix is
    never of full row rank (the rows of each permutation block sum to the
    all-ones vector), so the encoder pins the rank-deficiency's extra free
    coordinates to zero: the code in use is the ell-dimensional systematic
    subcode spanned by ``G``, with H @ G.T = 0 over GF(2).
    """

    n: int
    ell: int
    dv: int
    dc: int
    seed: int
    H: np.ndarray = field(repr=False)          # (n - ell, n) uint8
    G: np.ndarray = field(repr=False)          # (ell, n) uint8
    systematic_cols: np.ndarray = field(repr=False)  # (ell,) positions carrying the message
    rank: int

    def descriptor(self) -> str:
        return f"ldpc:{self.dv},{self.dc}:n{self.n}:seed{self.seed}"


def gf2_rank(M) -> int:
    R, piv = _gf2_rref(np.asarray(M, dtype=np.uint8))
    return len(piv)


def _gf2_rref(M: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2), pivoting columns left to right."""
    R = M.copy()
    rows, cols = R.shape
    pivots: list[int] = []
    row = 0
    for col in range(cols):
        if row >= rows:
            break
        hit = np.nonzero(R[row:, col])[0]
        if hit.size == 0:
            continue
        swap = row + hit[0]
        if swap != row:
            R[[row, swap]] = R[[swap, row]]
        elim = np.nonzero(R[:, col])[0]
        elim = elim[elim != row]
        R[elim] ^= R[row]
        pivots.append(col)
        row += 1
    return R, pivots


def _count_shared_pairs(A: np.ndarray, B: np.ndarray) -> int:
    """Number of row pairs (one from A, one from B) sharing >= 2 columns (4-cycles)."""
    overlap = A.astype(np.int32) @ B.astype(np.int32).T
    return int(np.count_nonzero(overlap >= 2))


def ldpc_generate(n: int, dv: int, dc: int, seed: int, *, max_retries: int = 100,
                  require_girth6: bool = False) -> LdpcCode:
    """Gallager permutation construction of a regular (dv, dc) code.

    Stacks dv column-permuted copies of a block-diagonal base submatrix.
    Each permutation is redrawn up to ``max_retries`` times looking for a
    4-cycle-free stack; when that is infeasible (dense profiles such as
    (10, 20) force 4-cycles by pigeonhole) the candidate with the fewest
    4-cycles is kept unless ``require_girth6`` demands failure.  The whole
    construction is redone if the rank falls below the structural maximum
    rows - dv + 1.  Deterministic for a fixed seed.
    """
    if dv < 2 or dc <= dv:
        raise ValueError("need 2 <= dv < dc for a regular code with positive rate")
    if (n * dv) % dc:
        raise ValueError(f"n*dv must be divisible by dc (got n={n}, dv={dv}, dc={dc})")
    m = n * dv // dc
    ell = n - m
    rows_per_sub = m // dv
    if rows_per_sub * dv != m:
        raise ValueError("n must be divisible by dc")

    base = np.zeros((rows_per_sub, n), dtype=np.uint8)
    for i in range(rows_per_sub):
        base[i, i * dc:(i + 1) * dc] = 1

    for attempt in range(max_retries):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(attempt,))))
        blocks = [base]
        ok = True
        for _ in range(1, dv):
            stacked = np.concatenate(blocks, axis=0)
            best = None
            best_cycles = None
            for _try in range(max_retries):
                cand = base[:, rng.permutation(n)]
                cycles = _count_shared_pairs(stacked, cand)
                if cycles == 0:
                    best, best_cycles = cand, 0
                    break
                if best_cycles is None or cycles < best_cycles:
                    best, best_cycles = cand, cycles
            if best_cycles and require_girth6:
                ok = False
                break
            blocks.append(best)
        if not ok:
            continue
        H = np.concatenate(blocks, axis=0)
        R, pivots = _gf2_rref(H)
        rank = len(pivots)
        if rank < m - dv + 1:
            continue  # structurally short of rank; redraw everything
        piv = np.asarray(pivots, dtype=np.int64)
        free = np.setdiff1d(np.arange(n), piv)
        sys_cols = free[:ell]
        G = np.zeros((ell, n), dtype=np.uint8)
        G[np.arange(ell), sys_cols] = 1
        # pivot columns solve H*c = 0 given the free columns; extra free
        # columns beyond the message stay zero
        G[:, piv] = R[:rank, :][:, sys_cols].T
        assert not np.any((H.astype(np.int64) @ G.T.astype(np.int64)) % 2)
        H.setflags(write=False)
        G.setflags(write=False)
        sys_cols.setflags(write=False)
        return LdpcCode(n=n, ell=ell, dv=dv, dc=dc, seed=seed, H=H, G=G,
                        systematic_cols=sys_cols, rank=rank)
    raise LdpcConstructionError(
        f"no acceptable H for (n={n}, dv={dv}, dc={dc}, seed={seed}) "
        f"after {max_retries} attempts"
        + (" with girth-6 required" if require_girth6 else ""))


def ldpc_encode(msg, code: LdpcCode) -> np.ndarray:
    return ldpc_encode_batch(_as_bits(msg)[None, :], code)[0]


def ldpc_encode_batch(msgs, code: LdpcCode) -> np.ndarray:
    msgs = _as_bits(msgs)
    if msgs.ndim != 2 or msgs.shape[1] != code.ell:
        raise ValueError(f"expected (batch, {code.ell}) messages, got {msgs.shape}")
    cw = (msgs.astype(np.int64) @ code.G.astype(np.int64)) % 2
    return cw.astype(np.uint8)


def encode_batch(code, msgs) -> np.ndarray:
    """Encode (B, ell) messages with either code kind."""
    if isinstance(code, LdpcCode):
        return ldpc_encode_batch(msgs, code)
    if isinstance(code, ConvCodeSpec):
        return conv_encode_batch(msgs, code)
    raise TypeError(f"not a code: {type(code).__name__}")


def code_shape(code, n=None) -> tuple[int, int]:
    """(n, ell) for a code; convolutional specs need the blocklength n."""
    if isinstance(code, LdpcCode):
        if n is not None and n != code.n:
            raise ValueError(f"requested n={n} but LDPC code has n={code.n}")
        return code.n, code.ell
    if isinstance(code, ConvCodeSpec):
        if n is None:
            raise ValueError("convolutional codes need an explicit blocklength n")
        return n, code.message_length(n)
    raise TypeError(f"not a code: {type(code).__name__}")


def syndrome(word, H) -> np.ndarray:
    word = _as_bits(word)
    H = np.asarray(H, dtype=np.uint8)
    if word.shape[-1] != H.shape[1]:
        raise ValueError(f"word length {word.shape[-1]} != H columns {H.shape[1]}")
    s = (word.astype(np.int64) @ H.T.astype(np.int64)) % 2
    return s.astype(np.uint8)


# ---------------------------------------------------------------------------
# alist interchange format (MacKay style, zero-padded index lists)
# ---------------------------------------------------------------------------

def to_alist(M) -> str:
    M = _as_bits(M)
    rows, cols = M.shape
    col_idx = [np.nonzero(M[:, j])[0] + 1 for j in range(cols)]
    row_idx = [np.nonzero(M[i, :])[0] + 1 for i in range(rows)]
    max_cw = max((len(c) for c in col_idx), default=0)
    max_rw = max((len(r) for r in row_idx), default=0)
    lines = [f"{cols} {rows}", f"{max_cw} {max_rw}"]
    lines.append(" ".join(str(len(c)) for c in col_idx))
    lines.append(" ".join(str(len(r)) for r in row_idx))
    for c in col_idx:
        pad = list(c) + [0] * (max_cw - len(c))
        lines.append(" ".join(map(str, pad)))
    for r in row_idx:
        pad = list(r) + [0] * (max_rw - len(r))
        lines.append(" ".join(map(str, pad)))
    return "\n".join(lines) + "\n"


def from_alist(text: str) -> np.ndarray:
    tok = text.split()
    cols, rows = int(tok[0]), int(tok[1])
    pos = 4 + cols + rows  # skip max weights and the two weight lists
    max_cw = int(tok[2])
    M = np.zeros((rows, cols), dtype=np.uint8)
    for j in range(cols):
        for t in tok[pos + j * max_cw: pos + (j + 1) * max_cw]:
            i = int(t)
            if i:
                M[i - 1, j] = 1
    return M


def parse_code_string(text: str, termination: str = ZERO_TAIL):
    """Parse a code config string: ``conv:5,7`` or ``ldpc:10,20`` or ``uncoded``.

    Returns a ConvCodeSpec, or for LDPC a ``(dv, dc)`` tuple (the matrix is
    built later once n and the construction seed are known).
    """
    text = text.strip().lower()
    if text == "uncoded":
        return UNCODED
    kind, _, rest = text.partition(":")
    if kind == "conv":
        polys = tuple(int(p, 8) for p in rest.split(","))
        if not polys:
            raise ValueError("conv code needs at least one octal polynomial")
        memory = max(p.bit_length() for p in polys) - 1
        return ConvCodeSpec(polys, memory=memory, termination=termination)
    if kind == "ldpc":
        parts = rest.split(",")
        if len(parts) != 2:
            raise ValueError("ldpc code string must be 'ldpc:dv,dc'")
        dv, dc = int(parts[0]), int(parts[1])
        return (dv, dc)
    raise ValueError(f"unknown code string {text!r} (expected conv:..., ldpc:..., uncoded)")


def code_from_descriptor(desc: str):
    """Rebuild a code from a descriptor string (the inverse of .descriptor())."""
    if desc == "uncoded":
        return UNCODED
    kind, _, rest = desc.partition(":")
    if kind == "conv":
        polys_text, _, termination = rest.partition(":")
        polys = tuple(int(p, 8) for p in polys_text.split(","))
        memory = max(p.bit_length() for p in polys) - 1
        return ConvCodeSpec(polys, memory=memory,
                            termination=termination or ZERO_TAIL)
    if kind == "ldpc":
        try:
            degrees, n_part, seed_part = rest.split(":")
            dv, dc = (int(p) for p in degrees.split(","))
            n = int(n_part.removeprefix("n"))
            seed = int(seed_part.removeprefix("seed"))
        except ValueError as exc:
            raise ValueError(f"bad LDPC descriptor {desc!r}") from exc
        return ldpc_generate(n, dv, dc, seed=seed)
    raise ValueError(f"unknown code descriptor {desc!r}")
