"""Command-line front end.

Subcommands: params (parameter accounting), train (single run or
warm-start from a sharing-only checkpoint), eval (loss of a saved model
on a toy task), gradcheck (finite-difference sweep of a small model),
loadsim (weight-traffic simulation).

Exit codes: 0 success, 1 a check failed, 2 usage error, 3 bad data or
file format.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .accounting import count_params, report_tables, rounded_millions
from .checkpoint import CheckpointError, read_checkpoint, save_checkpoint
from .config import EncoderConfig
from .gradcheck import finite_diff_report
from .loadsim import simulate_load
from .masks import ChunkMaskSpec
from .tensor import backward
from .training import ToyModel, ToyTask, TrainConfig, TrainingDiverged, eval_loss, train, two_stage

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DATA = 3


def _add_model_flags(p: argparse.ArgumentParser, layers=18, share_every=1, rank=0,
                     d_model=512, d_ff=2048, heads=8) -> None:
    p.add_argument("--layers", type=int, default=layers)
    p.add_argument("--share-every", type=int, default=share_every)
    p.add_argument("--rank", type=int, default=rank)
    p.add_argument("--d-model", type=int, default=d_model)
    p.add_argument("--d-ff", type=int, default=d_ff)
    p.add_argument("--heads", type=int, default=heads)
    p.add_argument("--diag", choices=("on", "off"), default="on")
    p.add_argument("--seed", type=int, default=0)


def _config_from(args, precision=64) -> EncoderConfig:
    chunk = getattr(args, "chunk", None)
    mask = None
    if chunk is not None:
        mask = ChunkMaskSpec(chunk=chunk, history=args.history, lookahead=args.lookahead)
    return EncoderConfig(
        layers=args.layers, share_every=args.share_every, rank=args.rank,
        d_model=args.d_model, d_ff=args.d_ff, heads=args.heads,
        enabled_diag=args.diag == "on", seed=args.seed, mask=mask,
        precision=getattr(args, "precision", precision),
    )


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=("copy", "reverse", "parity-tag"), default="reverse")
    p.add_argument("--vocab", type=int, default=16)
    p.add_argument("--length", type=int, default=24)
    p.add_argument("--data-seed", type=int, default=0)


def _cmd_params(args) -> int:
    if args.tables:
        print(report_tables())
        return EXIT_OK
    pc = count_params(_config_from(args))
    print(pc.to_text())
    print(f"shared_total: {pc.shared_total}")
    print(f"residual_total: {pc.residual_total}")
    print(f"norm_total: {pc.norm_total}")
    print(f"transformer_total: {pc.transformer_total}")
    print(f"transformer_millions: {rounded_millions(pc.transformer_total)}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(pc.to_csv())
        print(f"breakdown_csv: {args.csv}")
    return EXIT_OK


def _cmd_train(args) -> int:
    task = ToyTask(args.task, args.vocab, args.length, seed=args.data_seed)
    tconf = TrainConfig(
        total_steps=args.steps, peak_lr=args.peak_lr, batch_size=args.batch,
        task=task, warmup_fraction=args.warmup_fraction, seed=args.seed,
        stage="residual-from-checkpoint" if args.from_checkpoint else "scratch",
    )
    if args.from_checkpoint:
        if args.chunk is not None:
            print("--chunk applies to scratch training; a checkpoint already carries its mask spec",
                  file=sys.stderr)
            return EXIT_USAGE
        ckpt = read_checkpoint(args.from_checkpoint)
        model, result = two_stage(ckpt, args.rank, tconf, freeze_shared=args.freeze_shared)
    else:
        model = ToyModel(_config_from(args, precision=args.precision), args.vocab, args.length)
        result = train(model, tconf)
    print(f"steps: {len(result.losses)}")
    print(f"first_loss: {result.losses[0]:.6f}")
    print(f"last_loss: {result.losses[-1]:.6f}")
    print(f"eval_loss: {result.final_eval_loss:.6f}")
    if args.trace:
        result.write_csv(args.trace)
        print(f"trace_csv: {args.trace}")
    if args.out:
        save_checkpoint(model, args.out)
        print(f"checkpoint: {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    if ckpt.config.get("kind") != "toy":
        raise CheckpointError(f"eval needs a toy-model checkpoint, got {ckpt.config.get('kind')!r}")
    model = ToyModel.from_config_dict(ckpt.config)
    model.load_state({n: np.asarray(a, dtype=np.float64) for n, a in ckpt.tensors.items()})
    task = ToyTask(args.task, model.vocab, model.length, seed=args.data_seed)
    value = eval_loss(model, task, batches=args.batches, batch_size=args.batch)
    print(f"eval_loss: {value:.6f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = _config_from(args)
    if cfg.precision != 64:
        print("gradcheck runs in 64-bit mode", file=sys.stderr)
        return EXIT_USAGE
    model = ToyModel(cfg, args.vocab, args.length)
    rng = np.random.default_rng(args.seed)
    x = rng.integers(0, args.vocab, size=(args.batch, args.length))
    y = rng.integers(0, args.vocab, size=(args.batch, args.length))

    def f():
        return model.loss(x, y)

    tensors = model.named_tensors()
    # additive key biases shift every attention logit in a row equally, so
    # the softmax output is invariant and their true gradient is exactly
    # zero; a relative comparison of two roundoff-sized numbers says
    # nothing, so they are held to an absolute bound instead
    key_bias = {n: t for n, t in tensors.items() if n.endswith(".key.bias")}
    rest = {n: t for n, t in tensors.items() if n not in key_bias}
    report = finite_diff_report(f, rest, max_coords=args.max_coords, seed=args.seed)
    worst = max(report.values())
    for name, err in sorted(report.items(), key=lambda kv: -kv[1])[: args.show]:
        print(f"{err:12.3e}  {name}")
    print(f"max_rel_err: {worst:.3e}  (over {len(report)} tensors)")
    for t in tensors.values():
        t.zero_grad()
    backward(f())
    key_worst = max(float(np.abs(t.grad).max()) for t in key_bias.values()) if key_bias else 0.0
    print(f"key_bias_grad_max: {key_worst:.3e}  (mathematically zero)")
    ok = worst < args.tol and key_worst < 1e-8
    print(f"gradcheck: {'ok' if ok else 'FAILED'} (tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_loadsim(args) -> int:
    report = simulate_load(_config_from(args), args.bytes_per_param)
    for line in report.lines():
        print(line)
    if args.events:
        for name, b in report.load_events:
            print(f"{b:>12,}  {name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resshare", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="parameter accounting for one configuration")
    _add_model_flags(p)
    p.add_argument("--tables", action="store_true", help="print the fixed-size reference tables")
    p.add_argument("--csv", default=None, help="write the per-tensor breakdown as CSV")
    p.set_defaults(fn=_cmd_params)

    p = sub.add_parser("train", help="train a toy model, optionally from a checkpoint")
    _add_model_flags(p, d_model=64, d_ff=256, heads=4)
    _add_task_flags(p)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--warmup-fraction", type=float, default=0.1)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--chunk", type=int, default=None,
                   help="streaming chunk size in frames; enables the attention mask")
    p.add_argument("--history", type=int, default=0, help="look-back frames beyond the current chunk")
    p.add_argument("--lookahead", type=int, default=0, help="look-ahead frames beyond the current chunk")
    p.add_argument("--from-checkpoint", default=None,
                   help="warm-start: load shared weights, add rank-R adapters")
    p.add_argument("--freeze-shared", action="store_true",
                   help="diagnostic: train only adapters, norms, embedding, head")
    p.add_argument("--trace", default=None, help="write step,lr,loss CSV here")
    p.add_argument("--out", default=None, help="write the final checkpoint here")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a toy task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("copy", "reverse", "parity-tag"), default="reverse")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--batches", type=int, default=8)
    p.add_argument("--batch", type=int, default=16)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check on a small model")
    _add_model_flags(p, layers=4, share_every=2, rank=2, d_model=8, d_ff=16, heads=2)
    p.add_argument("--vocab", type=int, default=11)
    p.add_argument("--length", type=int, default=6)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--max-coords", type=int, default=None,
                   help="sample this many coordinates per tensor (default: all)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--show", type=int, default=5, help="print the worst N tensors")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("loadsim", help="simulate weight loading for one inference pass")
    _add_model_flags(p)
    p.add_argument("--bytes-per-param", type=int, default=4)
    p.add_argument("--events", action="store_true", help="print every load event")
    p.set_defaults(fn=_cmd_loadsim)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"run `{ap.prog} {args.command} --help` for usage", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
