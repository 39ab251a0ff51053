"""Multi-seed trend suite: does sharing cost quality, and do residual
adapters buy most of it back at a fraction of the parameters?

Five configurations on the reverse task (V=16, T=24, d_model=64,
d_ff=256, 4 heads): an unshared 18-layer baseline, K=3 and K=9 sharing,
K=3 warm-started with rank-4 adapters (the two-stage recipe), and an
unshared 6-layer stack whose parameter count matches K=3. The claim under
test is an ordering of mean final eval losses across seeds, not any
absolute number:

    full <= share3+res4 <= share3 <= share9      and      full6 > share3

All cells train under the package's streaming mask with bounded
look-ahead (chunk 1, full look-back, 3 frames ahead). Reversal needs
tokens from far ahead, and information moves forward at most 3 frames
per layer, so depth sets reach: 6 layers provably cannot route the
targets for the earliest output positions (a hard loss floor), while
18 layers can route everything. That makes the depth-vs-width
comparison a capacity fact; within the 18-layer family, per-layer
freedom sets how fast the relay circuits form, which the fixed step
budget converts into an ordering of final losses.

Every cell gets the same total optimization budget: the two-stage cell
spends half its steps on the sharing-only warm start and half with the
adapters enabled, so no configuration sees extra compute. Eval always
runs dropout-free on a held-out stream. Each (config, seed) cell is
deterministic, so results are cached as JSON next to the stage-1
checkpoints they depend on; rerunning a cell reproduces its numbers.
"""

from __future__ import annotations

import argparse
import json
import os
from dataclasses import dataclass, replace

from .config import EncoderConfig
from .checkpoint import read_checkpoint, save_checkpoint
from .masks import ChunkMaskSpec, attention_mask
from .training import ToyModel, ToyTask, TrainConfig, train, two_stage

TREND_TASK = ToyTask("reverse", vocab=16, length=24, seed=7)
TREND_STEPS = 10_000
TREND_BATCH = 8
TREND_LR = 1e-3
TREND_WARMUP = 0.1
TREND_DROPOUT = 0.0
TREND_LOOKAHEAD = 3
TREND_SEEDS = (0, 1, 2, 3, 4)
_CACHE_TAG = "v4"


def trend_mask(lookahead: int = TREND_LOOKAHEAD):
    """Per-frame streaming mask: full look-back, bounded look-ahead.

    Reversing position i needs the token at distance T-1-2i ahead; one
    attention layer reaches `lookahead` frames forward, so depth sets how
    far information can be relayed. At lookahead 3 an 18-layer stack can
    move any token to where it is needed, while 6 layers leave the first
    output positions blind to their targets no matter how they train."""
    spec = ChunkMaskSpec(chunk=1, history=TREND_TASK.length - 1, lookahead=lookahead)
    return attention_mask(TREND_TASK.length, spec)

_BASE = dict(d_model=64, d_ff=256, heads=4, precision=32)

# name -> (layers, share_every, rank); share3_res4 is stage-2 on top of share3
CELL_SPECS = {
    "full": (18, 1, 0),
    "share3": (18, 3, 0),
    "share9": (18, 9, 0),
    "share3_res4": (18, 3, 4),
    "full6": (6, 1, 0),
}
ORDER_CHAIN = ("full", "share3_res4", "share3", "share9")


def encoder_config(name: str, seed: int, dropout: float = TREND_DROPOUT) -> EncoderConfig:
    layers, k, rank = CELL_SPECS[name]
    return EncoderConfig(layers=layers, share_every=k, rank=rank, seed=seed,
                         dropout_rate=dropout, **_BASE)


def _train_config(seed: int, steps: int, lr: float, batch: int, warmup: float,
                  stage: str) -> TrainConfig:
    return TrainConfig(total_steps=steps, peak_lr=lr, batch_size=batch,
                       task=TREND_TASK, seed=seed, warmup_fraction=warmup,
                       stage=stage)


def _cell_path(cache_dir: str, name: str, seed: int, steps: int, lr: float,
               batch: int, dropout: float, lookahead: int,
               warmup: float = TREND_WARMUP) -> str:
    stem = (f"{_CACHE_TAG}_{name}_s{seed}_t{steps}_b{batch}"
            f"_lr{lr:g}_wu{warmup:g}_dr{dropout:g}_la{lookahead}")
    return os.path.join(cache_dir, stem)


def run_cell(name: str, seed: int, cache_dir: str, steps: int = TREND_STEPS,
             lr: float = TREND_LR, batch: int = TREND_BATCH,
             dropout: float = TREND_DROPOUT, lookahead: int = TREND_LOOKAHEAD,
             warmup: float = TREND_WARMUP, verbose: bool = False) -> dict:
    """Train one (config, seed) cell, or return its cached result. `steps`
    is the cell's total budget: the two-stage cell splits it between its
    warm-start parent (a half-length share3 cell, which leaves a
    checkpoint behind) and the adapter stage."""
    os.makedirs(cache_dir, exist_ok=True)
    stem = _cell_path(cache_dir, name, seed, steps, lr, batch, dropout, lookahead,
                      warmup)
    if os.path.exists(stem + ".json"):
        with open(stem + ".json") as f:
            return json.load(f)
    if verbose:
        print(f"[trend] running {name} seed={seed} steps={steps}", flush=True)
    mask = trend_mask(lookahead)
    if name == "share3_res4":
        stage1 = steps // 2
        parent = run_cell("share3", seed, cache_dir, stage1, lr, batch, dropout,
                          lookahead, warmup, verbose)
        ckpt = read_checkpoint(parent["checkpoint"])
        _, res = two_stage(ckpt, CELL_SPECS[name][2],
                           _train_config(seed, steps - stage1, lr, batch, warmup,
                                         "residual-from-checkpoint"),
                           mask=mask)
    else:
        cfg = encoder_config(name, seed, dropout)
        model = ToyModel(cfg, TREND_TASK.vocab, TREND_TASK.length)
        res = train(model, _train_config(seed, steps, lr, batch, warmup, "scratch"),
                    mask=mask)
    # 20-point summary of the training curve for convergence diagnostics
    span = max(1, len(res.losses) // 20)
    curve = [sum(res.losses[i:i + span]) / len(res.losses[i:i + span])
             for i in range(0, len(res.losses), span)]
    out = {
        "name": name, "seed": seed, "steps": steps, "batch": batch, "lr": lr,
        "warmup": warmup, "dropout": dropout, "lookahead": lookahead,
        "final_eval_loss": res.final_eval_loss,
        "last_train_loss": res.losses[-1],
        "train_curve": curve,
    }
    if name == "share3":
        out["checkpoint"] = stem + ".rtck"
        save_checkpoint(model, out["checkpoint"])
    with open(stem + ".json", "w") as f:
        json.dump(out, f, indent=1)
    return out


@dataclass
class TrendReport:
    means: dict[str, float]
    per_seed: dict[str, list[float]]
    chain_ok: bool
    depth_ok: bool

    def lines(self) -> list[str]:
        out = []
        for name in CELL_SPECS:
            vals = ", ".join(f"{v:.4f}" for v in self.per_seed[name])
            out.append(f"{name:12s} mean {self.means[name]:.4f}  [{vals}]")
        chain = " <= ".join(f"{n}({self.means[n]:.4f})" for n in ORDER_CHAIN)
        out.append(f"sharing chain: {chain}  -> {'ok' if self.chain_ok else 'VIOLATED'}")
        out.append(
            f"depth vs width: share3({self.means['share3']:.4f}) < full6({self.means['full6']:.4f})"
            f"  -> {'ok' if self.depth_ok else 'VIOLATED'}"
        )
        return out


def run_suite(cache_dir: str, seeds=TREND_SEEDS, steps: int = TREND_STEPS,
              lr: float = TREND_LR, batch: int = TREND_BATCH,
              dropout: float = TREND_DROPOUT, lookahead: int = TREND_LOOKAHEAD,
              warmup: float = TREND_WARMUP, verbose: bool = False) -> TrendReport:
    per_seed = {name: [] for name in CELL_SPECS}
    for name in CELL_SPECS:
        for seed in seeds:
            cell = run_cell(name, seed, cache_dir, steps, lr, batch, dropout,
                            lookahead, warmup, verbose)
            per_seed[name].append(cell["final_eval_loss"])
    means = {name: sum(v) / len(v) for name, v in per_seed.items()}
    chain_ok = all(means[a] <= means[b] for a, b in zip(ORDER_CHAIN, ORDER_CHAIN[1:]))
    depth_ok = means["share3"] < means["full6"]
    return TrendReport(means, per_seed, chain_ok, depth_ok)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="resshare-trend", description=__doc__.splitlines()[0])
    ap.add_argument("--cache-dir", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(TREND_SEEDS))
    ap.add_argument("--steps", type=int, default=TREND_STEPS)
    ap.add_argument("--lr", type=float, default=TREND_LR)
    ap.add_argument("--batch", type=int, default=TREND_BATCH)
    ap.add_argument("--dropout", type=float, default=TREND_DROPOUT)
    ap.add_argument("--lookahead", type=int, default=TREND_LOOKAHEAD)
    ap.add_argument("--warmup", type=float, default=TREND_WARMUP)
    ap.add_argument("--only", choices=list(CELL_SPECS), default=None,
                    help="run a single configuration instead of the suite")
    args = ap.parse_args(argv)
    if args.only is not None:
        for seed in args.seeds:
            cell = run_cell(args.only, seed, args.cache_dir, args.steps, args.lr,
                            args.batch, args.dropout, args.lookahead, args.warmup,
                            verbose=True)
            print(f"{args.only} seed={seed}: eval {cell['final_eval_loss']:.4f}")
        return 0
    report = run_suite(args.cache_dir, tuple(args.seeds), args.steps, args.lr,
                       args.batch, args.dropout, args.lookahead, args.warmup,
                       verbose=True)
    for line in report.lines():
        print(line)
    return 0 if (report.chain_ok and report.depth_ok) else 1


if __name__ == "__main__":
    raise SystemExit(main())
