"""Acceptance suite: twelve numbered criteria, one verdict line each.

Criteria needing a fully trained n=100 model load the committed checkpoints
under tests/artifacts/ (built by tools/build_artifacts.py with the shipped
defaults).  Set MISTDEC_ACCEPT_TRAIN=1 to retrain them from scratch inside
the run instead; that takes roughly 40 minutes per model on one CPU core.
"""
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from mistdec.channel import RandomStream, awgn_transmit, bpsk_modulate
from mistdec.classical import (conv_codebook, map_bruteforce_batch,
                               viterbi_soft_batch)
from mistdec.codes import (UNCODED, ConvCodeSpec, build_trellis,
                           conv_encode_batch, ldpc_generate)
from mistdec.evaluation import (StopRule, bench_latency, cnn_decoder,
                                emit_csv, evaluate, make_decoder,
                                sweep_hyperparams, wilson_halfwidth)
from mistdec.mist import (TrainingConfig, build_model, checkpoint_digest,
                          generate_batch, load_checkpoint, save_checkpoint,
                          train)
from mistdec.neural import BatchNorm, CnnDecoder, Conv1d, DenseSigmoid, mse_loss

from conftest import record_criterion

ARTIFACTS = Path(__file__).parent / "artifacts"
RETRAIN = os.environ.get("MISTDEC_ACCEPT_TRAIN") == "1"

CONV = ConvCodeSpec((0o5, 0o7), memory=2)
TRELLIS = build_trellis(CONV)
Q1 = 0.15865525393145707  # P(N(0,1) < -1)
CHI2_99_DF8 = 20.090235029663233


def check(number: int, name: str, ok: bool, detail: str):
    record_criterion(number, name, bool(ok), detail)
    assert ok, f"criterion {number} ({name}): {detail}"


@pytest.fixture(scope="module")
def ldpc():
    return ldpc_generate(100, 10, 20, seed=1)


def _trained(name: str, cfg: TrainingConfig):
    if RETRAIN:
        t0 = time.time()
        model, _ = train(build_model(cfg), cfg)
        return model, time.time() - t0
    path = ARTIFACTS / name
    if not path.exists():
        pytest.fail(f"missing {path}; run tools/build_artifacts.py or set "
                    f"MISTDEC_ACCEPT_TRAIN=1")
    model, header = load_checkpoint(path)
    tr = header["training"]
    assert tr["code"] == cfg.code.descriptor() and tr["alpha"] == cfg.alpha
    assert tr["iterations"] == cfg.iterations and tr["seed"] == cfg.seed
    assert header["kernel_size"] == cfg.kernel_size
    return model, None


@pytest.fixture(scope="module")
def conv_model():
    return _trained("conv_nominal.ckpt", TrainingConfig(code=CONV, n=100, seed=0))


@pytest.fixture(scope="module")
def ldpc_model(ldpc):
    return _trained("ldpc_nominal.ckpt", TrainingConfig(code=ldpc, seed=0))


@pytest.fixture(scope="module")
def conv_outage_model():
    return _trained("conv_outage.ckpt",
                    TrainingConfig(code=CONV, n=100, seed=0, alpha=0.5))


@pytest.fixture(scope="module")
def ldpc_outage_model(ldpc):
    return _trained("ldpc_outage.ckpt",
                    TrainingConfig(code=ldpc, seed=0, alpha=0.5))


def _sep(a, b):
    """True when point a is below point b beyond both 95% intervals."""
    return a.ber + a.ber_ci95 < b.ber - b.ber_ci95


# ---------------------------------------------------------------------------

def test_criterion_1_oracle_equivalence():
    t0 = time.time()
    ell, n = 8, 20
    book = conv_codebook(CONV, ell)
    rng = RandomStream(101)
    agree = total = 0
    for snr_db in (0.0, 3.0, 6.0):
        msgs = rng.rng.integers(0, 2, size=(120, ell), dtype=np.uint8)
        y = awgn_transmit(bpsk_modulate(conv_encode_batch(msgs, CONV)), snr_db, rng)
        v = viterbi_soft_batch(y, TRELLIS, CONV)
        m = map_bruteforce_batch(y, book)
        agree += int((v == m).all(axis=1).sum())
        total += len(msgs)
    dt = time.time() - t0
    check(1, "oracle equivalence", agree == total and total >= 300 and dt < 60,
          f"soft Viterbi matched brute-force MAP on {agree}/{total} receptions "
          f"in {dt:.1f}s")


def _layer_worst(layer_loss, pairs, floor):
    def numeric(arr):
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        h = 1e-6
        for _ in it:
            i = it.multi_index
            keep = arr[i]
            arr[i] = keep + h
            fp = layer_loss()
            arr[i] = keep - h
            fm = layer_loss()
            arr[i] = keep
            g[i] = (fp - fm) / (2 * h)
        return g

    worst = 0.0
    for arr, ana in pairs:
        num = numeric(arr)
        for a, b in zip(num.ravel(), np.asarray(ana).ravel()):
            worst = max(worst, abs(a - b) / max(floor, abs(a) + abs(b)))
    return worst


def test_criterion_2_gradient_suite():
    t0 = time.time()
    rng = np.random.Generator(np.random.PCG64(202))
    worst_layer = 0.0

    conv = Conv1d(3, 2, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 7, 2))
    r = rng.standard_normal((2, 7, 3))
    _, cache = conv.forward(x)
    dx, g = conv.backward(r, cache)
    worst_layer = max(worst_layer, _layer_worst(
        lambda: float((conv.forward(x)[0] * r).sum()),
        [(x, dx), (conv.W, g["W"]), (conv.b, g["b"])], 1e-6))

    bn = BatchNorm(2, dtype=np.float64)
    xb = rng.standard_normal((3, 5, 2))
    rb = rng.standard_normal((3, 5, 2))
    _, cache = bn.forward(xb, train=True)
    dxb, gb = bn.backward(rb, cache)
    worst_layer = max(worst_layer, _layer_worst(
        lambda: float((bn.forward(xb, train=True)[0] * rb).sum()),
        [(xb, dxb), (bn.gamma, gb["gamma"]), (bn.beta, gb["beta"])], 1e-6))

    head = DenseSigmoid(6, 3, rng, dtype=np.float64)
    xh = rng.standard_normal((4, 6))
    rh = rng.standard_normal((4, 3))
    _, cache = head.forward(xh)
    dxh, gh = head.backward(rh, cache)
    worst_layer = max(worst_layer, _layer_worst(
        lambda: float((head.forward(xh)[0] * rh).sum()),
        [(xh, dxh), (head.W, gh["W"]), (head.b, gh["b"])], 1e-6))

    model = CnnDecoder(12, 4, kernel_size=3, channels=(2, 3, 3), seed=1,
                       dtype=np.float64).set_train()
    y = rng.standard_normal((2, 12))
    targets = rng.integers(0, 2, size=(2, 4)).astype(np.float64)
    _, dp = mse_loss(targets, model.forward(y))
    grads = model.backward(dp)
    worst_e2e = 0.0
    for pname, arr in model.params().items():
        worst_e2e = max(worst_e2e, _layer_worst(
            lambda: mse_loss(targets, model.forward(y))[0],
            [(arr, grads[pname])], 1e-4))
    dt = time.time() - t0
    check(2, "gradient suite",
          worst_layer < 1e-5 and worst_e2e < 1e-4 and dt < 60,
          f"worst relative error {worst_layer:.2e} (layers), "
          f"{worst_e2e:.2e} (end-to-end) in {dt:.1f}s")


def test_criterion_3_uncoded_anchor():
    dec = make_decoder("hard-slice", UNCODED, n=100)
    p = evaluate([dec], UNCODED, [0.0], n=100, stop=StopRule(10_000, 100, 20_000),
                 seed=11).point("hard-slice", 0.0)
    bits = p.blocks * p.ell
    ok = bits >= 1_000_000 and abs(p.ber - Q1) <= p.ber_ci95
    check(3, "uncoded anchor", ok,
          f"BER {p.ber:.5f} vs Q(1)={Q1:.5f}, CI ±{p.ber_ci95:.5f}, {bits} bits")


def _crossing_snr(points, target=1e-3):
    pts = sorted(points)
    for (s1, b1), (s2, b2) in zip(pts, pts[1:]):
        if b1 >= target >= b2 and b2 > 0.0:
            l1, l2, lt = math.log10(b1), math.log10(b2), math.log10(target)
            return s1 + (s2 - s1) * (l1 - lt) / (l1 - l2)
    raise AssertionError(f"BER {target:g} not bracketed by {pts}")


def test_criterion_4_classical_gap():
    stop = StopRule(10_205, 100, 2_000_000)  # >= 1e6 bits at ell=98
    hard = evaluate([make_decoder("viterbi-hard", CONV, n=200)], CONV,
                    [4.5, 5.0, 5.5, 6.0, 6.5, 7.0], n=200, stop=stop, seed=12)
    soft = evaluate([make_decoder("viterbi-soft", CONV, n=200)], CONV,
                    [2.5, 3.0, 3.5, 4.0, 4.5, 5.0], n=200, stop=stop, seed=12)
    s_hard = _crossing_snr([(p.snr_db, p.ber) for p in hard.points])
    s_soft = _crossing_snr([(p.snr_db, p.ber) for p in soft.points])
    gap = s_hard - s_soft
    check(4, "classical gap", 1.5 <= gap <= 2.5,
          f"BER 1e-3 at {s_hard:.2f} dB (hard) vs {s_soft:.2f} dB (soft): "
          f"gap {gap:.2f} dB")


def test_criterion_5_cnn_vs_hard_viterbi(conv_model):
    model, train_secs = conv_model
    decs = [make_decoder("viterbi-hard", CONV, n=100),
            make_decoder("cnn", CONV, n=100, model=model)]
    report = evaluate(decs, CONV, [2.0, 3.0, 4.0, 5.0, 6.0], n=100,
                      stop=StopRule(20_834, 100, 2_000_000), seed=13)
    worst = []
    ok = True
    for snr in (2.0, 3.0, 4.0, 5.0, 6.0):
        c = report.point("cnn", snr)
        h = report.point("viterbi-hard", snr)
        fine = c.ber <= h.ber or (c.ber - c.ber_ci95) <= (h.ber + h.ber_ci95)
        ok &= fine
        worst.append(f"{snr:g}dB {c.ber:.2e}<= {h.ber:.2e}")
    budget = f"; retrained in {train_secs/60:.0f} min" if train_secs else ""
    if train_secs is not None:
        ok &= train_secs <= 3600
    check(5, "cnn vs hard viterbi", ok, "; ".join(worst) + budget)


def test_criterion_6_cnn_vs_bit_flip(ldpc, ldpc_model):
    # Expected red on the 8 dB BLER point: the CNN's residual bit errors
    # are independent (BLER tracks 1-(1-BER)^50), while bit flipping fails
    # bimodally and so reaches a lower BLER at high SNR despite a 10x worse
    # BER.  Matching it needs CNN BER@8 <= 4.3e-3 against a ~6.5e-3 training
    # plateau (a full-block receptive-field variant probed ~7% better).
    model, _ = ldpc_model
    decs = [make_decoder("bit-flip", ldpc),
            make_decoder("cnn", ldpc, model=model)]
    report = evaluate(decs, ldpc, [2.0, 4.0, 6.0, 8.0],
                      stop=StopRule(20_000, 100, 2_000_000), seed=14)
    ok = True
    lines = []
    # same discipline as criterion 5: lower, or within CI overlap — never
    # worse beyond overlapping CIs
    for snr in (4.0, 6.0, 8.0):
        c, b = report.point("cnn", snr), report.point("bit-flip", snr)
        ok &= c.ber <= b.ber or (c.ber - c.ber_ci95) <= (b.ber + b.ber_ci95)
        lines.append(f"BER@{snr:g} {c.ber:.2e}<{b.ber:.2e}")
    for snr in (6.0, 8.0):
        c, b = report.point("cnn", snr), report.point("bit-flip", snr)
        ok &= c.bler <= b.bler or (c.bler - c.bler_ci95) <= (b.bler + b.bler_ci95)
        lines.append(f"BLER@{snr:g} {c.bler:.2e} vs {b.bler:.2e}")
    check(6, "cnn vs bit flipping", ok, "; ".join(lines))


def test_criterion_7_soft_decoder_orderings(ldpc, conv_model, ldpc_model):
    stop = StopRule(20_000, 100, 2_000_000)
    cr = evaluate([make_decoder("viterbi-soft", CONV, n=100),
                   make_decoder("cnn", CONV, n=100, model=conv_model[0])],
                  CONV, [4.0], n=100, stop=stop, seed=15)
    lr = evaluate([make_decoder("bp", ldpc),
                   make_decoder("cnn", ldpc, model=ldpc_model[0])],
                  ldpc, [4.0], stop=stop, seed=15)
    soft, ccnn = cr.point("viterbi-soft", 4.0), cr.point("cnn", 4.0)
    bp, lcnn = lr.point("bp", 4.0), lr.point("cnn", 4.0)
    ok = _sep(soft, ccnn) and _sep(bp, lcnn)
    check(7, "soft decoder orderings", ok,
          f"conv@4dB soft {soft.ber:.2e} < cnn {ccnn.ber:.2e}; "
          f"ldpc@4dB bp {bp.ber:.2e} < cnn {lcnn.ber:.2e}")


def test_criterion_8_outage_robustness(ldpc, conv_outage_model, ldpc_outage_model):
    stop = StopRule(100_000, 100, 2_000_000)
    cr = evaluate([make_decoder("viterbi-soft", CONV, n=100),
                   make_decoder("cnn", CONV, n=100, model=conv_outage_model[0])],
                  CONV, [4.0, 6.0, 8.0], n=100, alpha=0.5, stop=stop, seed=16)
    lr = evaluate([make_decoder("bit-flip", ldpc),
                   make_decoder("cnn", ldpc, model=ldpc_outage_model[0])],
                  ldpc, [4.0, 6.0, 8.0], alpha=0.5, stop=stop, seed=16)
    ok = True
    lines = []
    for snr in (4.0, 6.0, 8.0):
        c, v = cr.point("cnn", snr), cr.point("viterbi-soft", snr)
        ok &= _sep(c, v) and c.blocks >= 100_000
        lines.append(f"conv@{snr:g} {c.ber:.2e}<{v.ber:.2e}")
        c, b = lr.point("cnn", snr), lr.point("bit-flip", snr)
        ok &= _sep(c, b) and c.blocks >= 100_000
        lines.append(f"ldpc@{snr:g} {c.ber:.2e}<{b.ber:.2e}")
    check(8, "outage robustness", ok, "; ".join(lines))


def test_criterion_9_sampling_properties(ldpc):
    cfg = TrainingConfig(code=ldpc, seed=0)  # ell = 50
    rng = RandomStream(cfg.seed, 17)
    snr_counts = np.zeros(9, dtype=np.int64)
    packed = []
    y_prev = None
    fresh = True
    for _ in range(cfg.iterations):
        y, msgs, snrs = generate_batch(cfg, rng, return_snrs=True)
        snr_counts += np.bincount(snrs.astype(int), minlength=9)
        packed.append(np.packbits(msgs, axis=1))
        if y_prev is not None and np.array_equal(y, y_prev):
            fresh = False
        y_prev = y
    draws = int(snr_counts.sum())
    expected = draws / 9.0
    chi2 = float(((snr_counts - expected) ** 2 / expected).sum())
    words = np.concatenate(packed)
    distinct = int(np.unique(words, axis=0).shape[0])
    frac = distinct / 2.0 ** 50
    ok = chi2 < CHI2_99_DF8 and fresh and frac < 0.01 and distinct > 0.99 * len(words)
    check(9, "sampling properties", ok,
          f"chi2 {chi2:.1f} over {draws} draws; {distinct} distinct datawords "
          f"= {frac:.2e} of 2^50")


SWEEP_BUDGET = 8000  # k=24 needs ~5000 iterations to clear k=12's plateau
SWEEP_WINDOW = 400


def test_criterion_10_kernel_size_ordering():
    # The kernel-size effect needs the receptive field (3(k-1)+1 symbols at
    # k=24 -> 70) to fit inside the block, hence n=100, and enough iterations
    # for the largest model to reach its plateau: at 4000 iterations k=24 and
    # k=12 sit within 3e-4 of each other, while by 8000 the gap is ~2e-3.
    # The full sweep takes ~3 h on one core, so like the model checkpoints it
    # ships as a committed artifact unless MISTDEC_ACCEPT_TRAIN=1.
    windows: dict[int, list[float]] = {3: [], 12: [], 24: []}
    if RETRAIN:
        base = TrainingConfig(code=CONV, n=100, kernel_size=24,
                              batch_size=256, iterations=SWEEP_BUDGET,
                              loss_log_every=10)
        results = sweep_hyperparams(base, kernel_sizes=[3, 12, 24],
                                    seeds=(0, 1, 2))
        for r in results:
            windows[r.kernel_size].append(
                r.history.window_mean(first=False, max_iteration=SWEEP_WINDOW))
    else:
        path = ARTIFACTS / "sweep_kernel.csv"
        if not path.exists():
            pytest.fail(f"missing {path}; run tools/build_artifacts.py or set "
                        f"MISTDEC_ACCEPT_TRAIN=1")
        rows = [ln.split(",") for ln in path.read_text().splitlines()[1:]]
        per_run: dict[tuple[int, int], list[tuple[int, float]]] = {}
        for _, kernel, seed, iteration, loss in rows:
            per_run.setdefault((int(kernel), int(seed)), []).append(
                (int(iteration), float(loss)))
        for (kernel, _), entries in sorted(per_run.items()):
            last = max(it for it, _ in entries)
            assert last == SWEEP_BUDGET, "artifact budget mismatch"
            tail = [l for it, l in entries if it > last - SWEEP_WINDOW]
            windows[kernel].append(float(np.mean(tail)))
    med = {k: float(np.median(v)) for k, v in windows.items()}
    ok = (len(windows[3]) == len(windows[12]) == len(windows[24]) == 3
          and med[24] < med[12] < med[3])
    check(10, "kernel size ordering", ok,
          f"median final-window loss k24 {med[24]:.4f} < k12 {med[12]:.4f} "
          f"< k3 {med[3]:.4f} ({SWEEP_BUDGET} iterations, 3 seeds)")


def test_criterion_11_latency_scaling():
    # Amortized per-dataword time at the default batch size: at batch 1 the
    # n=1000 head weight matrix (~100 MB) makes decode memory-bound, a regime
    # the reference ratio was never measured in.  Note the architecture's MAC
    # count per dataword already scales 13.0x from n=100 to n=1000 (the dense
    # head grows from 3% to 26% of the work), so on a serial CPU the measured
    # ratio cannot fall below ~13x; the reference ratio reflects a regime
    # where fixed per-call overhead dominates the arithmetic.
    small = cnn_decoder(CnnDecoder(100, 48).set_infer())
    large = cnn_decoder(CnnDecoder(1000, 498).set_infer())
    r_small = bench_latency(small, batch_size=256, repetitions=20, warmup=3)
    r_large = bench_latency(large, batch_size=256, repetitions=20, warmup=3)
    ratio = r_large.median_ms / r_small.median_ms
    check(11, "latency scaling", ratio < 12.0,
          f"per-dataword {r_small.median_ms:.3f} ms (n=100) vs "
          f"{r_large.median_ms:.3f} ms (n=1000): ratio {ratio:.1f}x "
          f"(MAC-count floor 13.0x on one core)")


def test_criterion_12_determinism(tmp_path):
    stop = StopRule(2000, 10, 6000)
    for i in (1, 2):
        emit_csv(evaluate([make_decoder("viterbi-hard", CONV, n=20)], CONV,
                          [2.0, 4.0], n=20, stop=stop, seed=17),
                 tmp_path / f"run{i}.csv", comments=["seed=17"])
    csv_ok = (tmp_path / "run1.csv").read_bytes() == (tmp_path / "run2.csv").read_bytes()

    cfg = TrainingConfig(code=CONV, n=24, kernel_size=3, channels=(4, 8),
                         batch_size=64, iterations=40, seed=18)
    digests = []
    for i in (1, 2):
        model, _ = train(build_model(cfg), cfg)
        save_checkpoint(model, cfg, tmp_path / f"m{i}.ckpt")
        digests.append(checkpoint_digest(tmp_path / f"m{i}.ckpt"))
    ckpt_ok = digests[0] == digests[1]

    art_ok = True
    art_note = ""
    manifest = ARTIFACTS / "DIGESTS.json"
    if not RETRAIN and manifest.exists():
        want = json.loads(manifest.read_text())
        got = {name: (checkpoint_digest(ARTIFACTS / name)
                      if name.endswith(".ckpt") else
                      hashlib.sha256((ARTIFACTS / name).read_bytes()).hexdigest())
               for name in want}
        art_ok = got == want
        art_note = f"; {len(want)} artifact digests verified"
    check(12, "determinism", csv_ok and ckpt_ok and art_ok,
          f"eval CSVs byte-identical: {csv_ok}; retrain digests equal: "
          f"{ckpt_ok}{art_note}")
