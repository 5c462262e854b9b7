#!/usr/bin/env python3
"""Rebuild the committed artifacts under tests/artifacts/.

Four trained checkpoints plus the kernel-size sweep loss curves.  Each model
trains with the shipped defaults (8000 iterations, batch 256, SNR set 0..8
dB) and therefore takes roughly 40 minutes on one desktop CPU core; the
sweep (three kernel sizes, three seeds, same budget) takes around three
hours, so the full set is most of a day.  Training is deterministic, so a
rebuild reproduces the committed bytes exactly (see DIGESTS.json).

Usage: build_artifacts.py [name ...] with names from the SPECS table or
"sweep_kernel.csv"; no arguments rebuilds everything.
"""
import hashlib
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from mistdec.codes import ConvCodeSpec, ldpc_generate
from mistdec.evaluation import sweep_hyperparams
from mistdec.mist import (TrainingConfig, build_model, checkpoint_digest,
                          save_checkpoint, train)

ARTIFACTS = Path(__file__).resolve().parents[1] / "tests" / "artifacts"

CONV = ConvCodeSpec((0o5, 0o7), memory=2)
LDPC = ldpc_generate(100, 10, 20, seed=1)

SPECS = {
    "conv_nominal.ckpt": TrainingConfig(code=CONV, n=100, seed=0),
    "ldpc_nominal.ckpt": TrainingConfig(code=LDPC, seed=0),
    "conv_outage.ckpt": TrainingConfig(code=CONV, n=100, seed=0, alpha=0.5),
    "ldpc_outage.ckpt": TrainingConfig(code=LDPC, seed=0, alpha=0.5),
}

SWEEP_NAME = "sweep_kernel.csv"
SWEEP_BASE = TrainingConfig(code=CONV, n=100, kernel_size=24, batch_size=256,
                            iterations=8000, loss_log_every=10)
SWEEP_KERNELS = [3, 12, 24]
SWEEP_SEEDS = (0, 1, 2)


def _write_digest(digest_path: Path, digests: dict):
    digest_path.write_text(json.dumps(digests, indent=2, sort_keys=True) + "\n")


def build_models(names, digests, digest_path):
    for name, cfg in SPECS.items():
        if names and name not in names:
            continue
        t0 = time.time()
        print(f"[{name}] training {cfg.code.descriptor()} alpha={cfg.alpha} "
              f"({cfg.iterations} iterations)", flush=True)

        def progress(it, loss, _name=name, _total=cfg.iterations, _t0=t0):
            if it % 500 == 0 or it == _total:
                print(f"[{_name}] {it}/{_total} loss={loss:.5f} "
                      f"t={(time.time() - _t0) / 60:.1f}min", flush=True)

        model, _ = train(build_model(cfg), cfg, progress=progress)
        out = ARTIFACTS / name
        save_checkpoint(model, cfg, out)
        digests[name] = checkpoint_digest(out)
        _write_digest(digest_path, digests)
        print(f"[{name}] saved, digest {digests[name][:16]}…", flush=True)


def build_sweep(digests, digest_path):
    t0 = time.time()
    print(f"[{SWEEP_NAME}] sweep kernels={SWEEP_KERNELS} seeds={SWEEP_SEEDS} "
          f"({SWEEP_BASE.iterations} iterations each)", flush=True)

    def progress(config_id, history):
        tail = history.window_mean(first=False, max_iteration=400)
        print(f"[{SWEEP_NAME}] {config_id} done, final-window loss "
              f"{tail:.5f} t={(time.time() - t0) / 60:.1f}min", flush=True)

    results = sweep_hyperparams(SWEEP_BASE, kernel_sizes=SWEEP_KERNELS,
                                seeds=SWEEP_SEEDS, progress=progress)
    lines = ["config_id,kernel,seed,iteration,loss"]
    for r in results:
        for it, loss in r.history.entries:
            lines.append(f"{r.config_id},{r.kernel_size},{r.seed},{it},{loss:.8f}")
    out = ARTIFACTS / SWEEP_NAME
    out.write_text("\n".join(lines) + "\n")
    digests[SWEEP_NAME] = hashlib.sha256(out.read_bytes()).hexdigest()
    _write_digest(digest_path, digests)
    print(f"[{SWEEP_NAME}] saved, digest {digests[SWEEP_NAME][:16]}…", flush=True)


def main(names=None):
    ARTIFACTS.mkdir(parents=True, exist_ok=True)
    digest_path = ARTIFACTS / "DIGESTS.json"
    digests = json.loads(digest_path.read_text()) if digest_path.exists() else {}
    if any(name in SPECS for name in (names or SPECS)):
        build_models(names, digests, digest_path)
    if names is None or SWEEP_NAME in names:
        build_sweep(digests, digest_path)


if __name__ == "__main__":
    main(set(sys.argv[1:]) or None)
