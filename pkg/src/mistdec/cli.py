"""Command-line entry point: train, eval, sweep, bench, show-config.

Every run is reproducible from its flags plus seed; the flags in effect are
echoed into output CSV headers as # comments.  A JSON config file may supply
any long-flag value (underscored keys); explicit flags override it.  Exit
codes: 0 success, 2 usage error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import evaluation, mist, plots
from .codes import (ConvCodeSpec, LdpcCode, UNCODED, code_from_descriptor,
                    code_shape, ldpc_generate, parse_code_string)
from .evaluation import StopRule, bench_latency, evaluate, make_decoder
from .mist import TrainingConfig, build_model, load_checkpoint, save_checkpoint, train
from .neural import DEFAULT_CHANNELS, DEFAULT_KERNEL_SIZE, CnnDecoder

__all__ = ["main"]

OUTDIR_ENV = "MISTDEC_OUTDIR"


def _outdir(args) -> str:
    d = args.outdir or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(d, exist_ok=True)
    return d


def parse_snr_spec(text: str) -> tuple[float, ...]:
    """SNR grid syntax: 'a:b' (step 1), 'a:b:s' (inclusive), or 'a,b,c'."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) == 2:
            lo, hi, step = parts[0], parts[1], 1.0
        elif len(parts) == 3:
            lo, hi, step = parts
        else:
            raise ValueError(f"bad SNR range {text!r}")
        if step <= 0 or hi < lo:
            raise ValueError(f"bad SNR range {text!r}")
        count = int(round((hi - lo) / step)) + 1
        return tuple(lo + i * step for i in range(count))
    return tuple(float(p) for p in text.split(","))


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace("-", ",").split(","))


def _resolve_code(args, ckpt_header=None):
    """Code object from --code/--n flags, or from checkpoint metadata."""
    code_text = getattr(args, "code", None)
    n = getattr(args, "n", None)
    if code_text is None:
        if ckpt_header is None:
            raise SystemExit2("--code is required")
        desc = (ckpt_header.get("training") or {}).get("code")
        if desc is None:
            raise SystemExit2("checkpoint lacks code metadata; pass --code")
        return code_from_descriptor(desc), ckpt_header["n"]
    parsed = parse_code_string(code_text)
    if isinstance(parsed, tuple):  # (dv, dc): build the matrix at this n
        if n is None:
            raise SystemExit2("LDPC codes need --n")
        dv, dc = parsed
        return ldpc_generate(n, dv, dc, seed=args.code_seed), n
    if parsed is not UNCODED and n is None:
        raise SystemExit2("convolutional codes need --n")
    return parsed, n


class SystemExit2(SystemExit):
    """Usage error carrying exit code 2."""

    def __init__(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def _training_config(args, code, n) -> TrainingConfig:
    return TrainingConfig(
        code=code, n=n, snr_set_db=parse_snr_spec(args.snr_set),
        batch_size=args.batch_size, iterations=args.iters,
        learning_rate=args.lr, seed=args.seed, alpha=args.alpha,
        outage_snr_db=args.outage_snr, kernel_size=args.kernel_size,
        channels=_parse_int_list(args.channels),
        loss_log_every=args.loss_log_every)


def _echo(args, keys) -> list[str]:
    out = []
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out.append(f"{k}={v}")
    return out


def _progress_printer(every: int = 1000):
    def cb(it, loss):
        if it == 1 or it % every == 0:
            print(f"  iteration {it}: loss {loss:.5f}", file=sys.stderr, flush=True)
    return cb


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    code, n = _resolve_code(args)
    cfg = _training_config(args, code, n)
    model = build_model(cfg)
    model, history = train(model, cfg, progress=_progress_printer() if not args.quiet else None)
    out = args.out if os.path.isabs(args.out) else os.path.join(_outdir(args), args.out)
    save_checkpoint(model, cfg, out)
    loss_csv = out + ".loss.csv"
    comments = _echo(args, ["code", "n", "snr_set", "batch_size", "iters", "lr",
                            "seed", "alpha", "outage_snr", "kernel_size", "channels"])
    evaluation.emit_loss_csv([("train", history)], loss_csv, comments)
    if not args.no_plot and len(history):
        plots.plot_loss_curves([("train", history)], out + ".loss.png")
    final = history.entries[-1][1] if len(history) else float("nan")
    print(f"final loss: {final:.6f}")
    print(f"checkpoint: {out}")
    print(f"loss curve: {loss_csv}")
    return 0


def cmd_eval(args) -> int:
    names = [d.strip() for d in args.decoders.split(",") if d.strip()]
    if not names:
        raise SystemExit2("--decoders must name at least one decoder")
    model = None
    header = None
    if args.ckpt:
        model, header = load_checkpoint(args.ckpt)
    code, n = _resolve_code(args, ckpt_header=header)
    n, ell = code_shape(code, n)
    decoders = []
    for name in names:
        try:
            decoders.append(make_decoder(name, code, n=n, model=model))
        except ValueError as exc:
            known = "viterbi-hard, viterbi-soft, map-oracle, bit-flip, bp, cnn, hard-slice"
            raise SystemExit2(f"{exc} (known decoders: {known})")
    alpha = args.alpha if args.channel == "outage" else 0.0
    if args.channel == "outage" and args.alpha == 0.0:
        print("note: outage channel with alpha=0 equals plain AWGN", file=sys.stderr)
    stop = StopRule(args.min_blocks, args.min_block_errors, args.max_blocks)
    grid = parse_snr_spec(args.snr)
    def progress(snr_db, counts):
        if not args.quiet:
            msg = " ".join(f"{k}:{v[2]}/{v[0]}" for k, v in sorted(counts.items()))
            print(f"  snr {snr_db:g} dB done ({msg})", file=sys.stderr, flush=True)
    report = evaluate(decoders, code, grid, n=n, alpha=alpha,
                      outage_snr_db=args.outage_snr, stop=stop, seed=args.seed,
                      workers=args.workers, progress=progress)
    out = args.out if os.path.isabs(args.out) else os.path.join(_outdir(args), args.out)
    comments = _echo(args, ["code", "n", "decoders", "snr", "channel", "alpha",
                            "outage_snr", "min_blocks", "min_block_errors",
                            "max_blocks", "seed", "ckpt"])
    evaluation.emit_csv(report, out, comments)
    print(f"evaluation: {out}")
    if not args.no_plot:
        stem = out[:-4] if out.endswith(".csv") else out
        for metric in ("ber", "bler"):
            p = plots.plot_error_curves(report, f"{stem}_{metric}.png", metric=metric,
                                        title=code.descriptor())
            print(f"figure: {p}")
    return 0


def cmd_sweep(args) -> int:
    code, n = _resolve_code(args)
    cfg = _training_config(args, code, n)
    kernel_sizes = _parse_int_list(args.kernel_sizes) if args.kernel_sizes else None
    grids = None
    if args.channel_grid:
        grids = [_parse_int_list(g) for g in args.channel_grid.split(";") if g]
    seeds = _parse_int_list(args.seeds)
    if (kernel_sizes is not None and not kernel_sizes) or not seeds:
        raise SystemExit2("sweep grid must be non-empty")
    def progress(cid, hist):
        if not args.quiet:
            print(f"  {cid}: final loss {hist.entries[-1][1]:.5f}", file=sys.stderr, flush=True)
    results = evaluation.sweep_hyperparams(cfg, kernel_sizes=kernel_sizes,
                                           channel_grids=grids, seeds=seeds,
                                           progress=progress)
    out = args.out if os.path.isabs(args.out) else os.path.join(_outdir(args), args.out)
    comments = _echo(args, ["code", "n", "kernel_sizes", "channel_grid", "seeds",
                            "snr_set", "batch_size", "iters", "lr"])
    evaluation.emit_loss_csv(results, out, comments)
    print(f"sweep losses: {out}")
    if not args.no_plot:
        stem = out[:-4] if out.endswith(".csv") else out
        p = plots.plot_loss_curves(results, stem + ".png")
        print(f"figure: {p}")
    return 0


def cmd_bench(args) -> int:
    n_list = _parse_int_list(args.n_list)
    if not n_list:
        raise SystemExit2("--n must list at least one blocklength")
    names = [d.strip() for d in args.decoders.split(",") if d.strip()]
    records = []
    for n in n_list:
        for name in names:
            if name == "cnn":
                # latency depends on shapes only, so untrained weights serve
                model = CnnDecoder(n, n // 2, kernel_size=args.kernel_size,
                                   channels=_parse_int_list(args.channels),
                                   seed=0).set_infer()
                dec = evaluation.cnn_decoder(model)
            else:
                code, _ = _resolve_code(argparse.Namespace(
                    code=args.code, n=n, code_seed=args.code_seed))
                dec = make_decoder(name, code, n=n)
            for batch in _parse_int_list(args.batch_sizes):
                records.append(bench_latency(dec, batch_size=batch,
                                             repetitions=args.repetitions,
                                             warmup=args.warmup, seed=args.seed))
    out = args.out if os.path.isabs(args.out) else os.path.join(_outdir(args), args.out)
    comments = _echo(args, ["decoders", "n_list", "batch_sizes", "repetitions",
                            "warmup", "code", "kernel_size", "channels"])
    evaluation.emit_latency_csv(records, out, comments)
    print(f"latency: {out}")
    if not args.no_plot:
        stem = out[:-4] if out.endswith(".csv") else out
        p = plots.plot_latency_bars(records, stem + ".png")
        print(f"figure: {p}")
    return 0


def cmd_show_config(args) -> int:
    defaults = {
        "train": _defaults_of(_build_parser(), "train"),
        "eval": _defaults_of(_build_parser(), "eval"),
        "sweep": _defaults_of(_build_parser(), "sweep"),
        "bench": _defaults_of(_build_parser(), "bench"),
        "outdir_env": OUTDIR_ENV,
    }
    print(json.dumps(defaults, indent=2, sort_keys=True))
    return 0


def _defaults_of(parser, sub: str) -> dict:
    sp = next(a for a in parser._subparsers._group_actions[0].choices.items()
              if a[0] == sub)[1]
    out = {}
    for action in sp._actions:
        if action.dest not in ("help", "config") and action.default != argparse.SUPPRESS:
            out[action.dest] = action.default
    return out


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON file of flag defaults (flags override)")
    p.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or .)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--no-plot", action="store_true", help="skip figure rendering")


def _add_code(p, required=False):
    p.add_argument("--code", required=required,
                   help="conv:5,7 | ldpc:10,20 | uncoded")
    p.add_argument("--n", type=int, help="blocklength")
    p.add_argument("--code-seed", type=int, default=1,
                   help="construction seed for LDPC matrices")


def _add_training(p):
    p.add_argument("--snr-set", default="0:8", dest="snr_set",
                   help="training SNR set, e.g. 0:8 or 0,2,4 (dB)")
    p.add_argument("--batch-size", type=int, default=mist.DEFAULT_BATCH_SIZE)
    p.add_argument("--iters", type=int, default=mist.DEFAULT_ITERATIONS)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=0.0,
                   help="per-symbol outage probability during training")
    p.add_argument("--outage-snr", type=float, default=-10.0, dest="outage_snr")
    p.add_argument("--kernel-size", type=int, default=DEFAULT_KERNEL_SIZE)
    p.add_argument("--channels", default=",".join(map(str, DEFAULT_CHANNELS)))
    p.add_argument("--loss-log-every", type=int, default=10, dest="loss_log_every")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mistdec",
        description="Channel-coding simulations: classical decoders and a "
                    "mixed-SNR-trained CNN decoder.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a CNN decoder, write checkpoint + loss CSV")
    _add_common(p); _add_code(p, required=True); _add_training(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="Monte-Carlo BER/BLER over an SNR grid")
    _add_common(p); _add_code(p)
    p.add_argument("--decoders", required=True,
                   help="comma list: viterbi-hard,viterbi-soft,map-oracle,"
                        "bit-flip,bp,cnn,hard-slice")
    p.add_argument("--ckpt", help="checkpoint for the cnn decoder")
    p.add_argument("--snr", default="0:6", help="evaluation grid, e.g. 0:6:1")
    p.add_argument("--channel", choices=["awgn", "outage"], default="awgn")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--outage-snr", type=float, default=-10.0, dest="outage_snr")
    p.add_argument("--min-blocks", type=int, default=10_000)
    p.add_argument("--min-block-errors", type=int, default=100)
    p.add_argument("--max-blocks", type=int, default=2_000_000)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="eval.csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="train a hyperparameter grid, write loss curves")
    _add_common(p); _add_code(p, required=True); _add_training(p)
    p.add_argument("--kernel-sizes", dest="kernel_sizes",
                   help="comma list, e.g. 3,6,12,24")
    p.add_argument("--channel-grid", dest="channel_grid",
                   help="semicolon-separated width lists, e.g. 10,50,50;5,10,10")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="decode-latency benchmark")
    _add_common(p)
    p.add_argument("--decoders", default="cnn")
    p.add_argument("--n", dest="n_list", default="100,200,1000",
                   help="comma list of blocklengths")
    p.add_argument("--batch-sizes", dest="batch_sizes", default="1,256")
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--code", default="conv:5,7")
    p.add_argument("--code-seed", type=int, default=1)
    p.add_argument("--kernel-size", type=int, default=DEFAULT_KERNEL_SIZE)
    p.add_argument("--channels", default=",".join(map(str, DEFAULT_CHANNELS)))
    p.add_argument("--out", default="latency.csv")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("show-config", help="print all defaults as JSON")
    p.set_defaults(fn=cmd_show_config)
    return ap


def _apply_config_file(ap: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold --config file values in as defaults; unknown keys are fatal."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv  # argparse reports the missing value
    path = argv[idx + 1]
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit2(f"cannot read config {path}: {exc}")
    if not isinstance(values, dict):
        raise SystemExit2(f"config {path} must be a JSON object")
    sub = next((a for a in argv if not a.startswith("-")), None)
    sp = ap._subparsers._group_actions[0].choices.get(sub)
    if sp is None:
        return argv
    known = {a.dest for a in sp._actions}
    unknown = set(values) - known
    if unknown:
        raise SystemExit2(f"unknown config keys in {path}: {sorted(unknown)}")
    sp.set_defaults(**values)
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = _build_parser()
    try:
        argv = _apply_config_file(ap, argv)
        args = ap.parse_args(argv)
        return args.fn(args)
    except SystemExit2 as exc:
        return exc.code
    except SystemExit as exc:  # argparse usage errors
        code = exc.code if isinstance(exc.code, int) else 2
        return code
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
