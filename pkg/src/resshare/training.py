"""Training pipeline: Adam, warmup + linear-decay schedule, deterministic
toy sequence tasks, and the two-stage recipe (train a sharing-only model
from scratch, then warm-start a residual model from its checkpoint and
train every parameter).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import Checkpoint, ConfigMismatchError
from .config import EncoderConfig
from .encoder import Encoder, build_encoder, encoder_forward, sinusoidal_positions
from .masks import attention_mask
from .projection import SharedProjection, effective_apply
from .tensor import Tensor, add, backward, cross_entropy, embedding, np_dtype, reshape

TASK_KINDS = ("copy", "reverse", "parity-tag")
# held-out stream: batch indices far past any plausible training horizon
EVAL_STREAM_BASE = 1 << 40


@dataclass(frozen=True)
class ToyTask:
    kind: str
    vocab: int
    length: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}, expected one of {TASK_KINDS}")
        if self.vocab < 2 or self.length < 1:
            raise ValueError(f"need vocab >= 2 and length >= 1, got {self.vocab}, {self.length}")

    def batch(self, index: int, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic (inputs, targets) pair for a stream position.
        Targets are a pure function of inputs; the stream is a pure
        function of (seed, index)."""
        rng = np.random.default_rng((self.seed, index))
        x = rng.integers(0, self.vocab, size=(batch_size, self.length), dtype=np.int64)
        if self.kind == "copy":
            y = x.copy()
        elif self.kind == "reverse":
            y = x[:, ::-1].copy()
        else:
            # parity of the count of odd tokens seen so far, as class 0/1
            y = np.cumsum(x & 1, axis=1) & 1
        return x, y


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    peak_lr: float
    batch_size: int
    task: ToyTask
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    stage: str = "scratch"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.stage not in ("scratch", "residual-from-checkpoint"):
            raise ValueError(f"unknown stage {self.stage!r}")


def lr_at(step: int, config: TrainConfig) -> float:
    """Two-segment schedule: linear 0 -> peak over the warmup span, then
    linear decay to 0 at total_steps."""
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    total = float(config.total_steps)
    warm = config.warmup_fraction * total
    if step < warm:
        return config.peak_lr * step / warm
    if total == warm:
        return 0.0
    return config.peak_lr * (total - step) / (total - warm)


class Adam:
    """Standard Adam with bias correction over a fixed list of tensors."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"grad shape {g.shape} does not match param {p.data.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grads(self) -> None:
        for p in self.params:
            p.zero_grad()


class ToyModel:
    """Token embedding + sinusoidal positions, the shared-weight encoder,
    and a linear class head. Per-token cross-entropy training target.

    A mask spec in the config becomes the model's default attention mask,
    so checkpoints carry their streaming condition; an explicit mask
    argument to logits/loss overrides it."""

    def __init__(self, encoder_config: EncoderConfig, vocab: int, length: int):
        self.encoder_config = encoder_config
        self.vocab = vocab
        self.length = length
        self.dtype = np_dtype(encoder_config.precision)
        self.default_mask = (
            attention_mask(length, encoder_config.mask) if encoder_config.mask is not None else None
        )
        self.encoder = build_encoder(encoder_config)
        d = encoder_config.d_model
        rng = np.random.default_rng((encoder_config.seed, 0xE0B))
        self.embed = Tensor(
            rng.standard_normal((vocab, d)) / np.sqrt(d), requires_grad=True, dtype=self.dtype
        )
        self.head = SharedProjection(vocab, d, rng, self.dtype)
        self.positions = sinusoidal_positions(length, d, self.dtype)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"embed.weight": self.embed}
        out.update(self.encoder.named_tensors())
        out["head.weight"] = self.head.weight
        out["head.bias"] = self.head.bias
        return out

    def load_state(self, state: dict[str, np.ndarray], require_all: bool = True) -> list[str]:
        tensors = self.named_tensors()
        unknown = sorted(set(state) - set(tensors))
        if unknown:
            raise KeyError(f"unknown tensor names: {unknown}")
        missing = [n for n in tensors if n not in state]
        if require_all and missing:
            raise KeyError(f"missing tensor names: {missing}")
        for name, arr in state.items():
            t = tensors[name]
            arr = np.asarray(arr)
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data[...] = arr.astype(self.dtype)
        return missing

    def config_dict(self) -> dict:
        return {
            "kind": "toy",
            "vocab": self.vocab,
            "length": self.length,
            "encoder": self.encoder_config.to_dict(),
        }

    @classmethod
    def from_config_dict(cls, d: dict) -> "ToyModel":
        return cls(EncoderConfig.from_dict(d["encoder"]), int(d["vocab"]), int(d["length"]))

    def logits(self, tokens: np.ndarray, mask: np.ndarray | None = None, train: bool = False) -> Tensor:
        B, T = tokens.shape
        if T != self.length:
            raise ValueError(f"sequence length {T} does not match model length {self.length}")
        if mask is None:
            mask = self.default_mask
        x = add(embedding(self.embed, tokens), Tensor(self.positions))
        x = encoder_forward(self.encoder, x, mask, train=train)
        return effective_apply(self.head, None, x)

    def loss(self, tokens: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None,
             train: bool = False) -> Tensor:
        logits = self.logits(tokens, mask, train=train)
        B, T, V = logits.shape
        return cross_entropy(reshape(logits, (B * T, V)), targets.reshape(-1))


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    final_eval_loss: float = float("nan")

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "lr", "loss"])
            for i, (lr, loss) in enumerate(zip(self.lrs, self.losses)):
                w.writerow([i, f"{lr:.10g}", f"{loss:.10g}"])


def eval_loss(model: ToyModel, task: ToyTask, batches: int = 8, batch_size: int = 16,
              mask: np.ndarray | None = None) -> float:
    """Mean loss over a fixed held-out stream, dropout off."""
    total = 0.0
    for i in range(batches):
        x, y = task.batch(EVAL_STREAM_BASE + i, batch_size)
        total += float(model.loss(x, y, mask).data)
    return total / batches


def train(model: ToyModel, config: TrainConfig, mask: np.ndarray | None = None,
          trainable: list[str] | None = None, eval_batches: int = 8) -> TrainResult:
    """Run the loop: fresh Adam state, deterministic batch stream, loss
    and lr recorded every step. Non-finite loss aborts with its step."""
    tensors = model.named_tensors()
    if trainable is None:
        params = list(tensors.values())
    else:
        unknown = sorted(set(trainable) - set(tensors))
        if unknown:
            raise KeyError(f"unknown trainable names: {unknown}")
        params = [tensors[n] for n in trainable]
    opt = Adam(params, config.beta1, config.beta2, config.eps)
    result = TrainResult()
    for step in range(config.total_steps):
        x, y = config.task.batch(step, config.batch_size)
        opt.zero_grads()
        loss = model.loss(x, y, mask, train=True)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(step, value)
        backward(loss)
        lr = lr_at(step, config)
        opt.step(lr)
        result.losses.append(value)
        result.lrs.append(lr)
    result.final_eval_loss = eval_loss(model, config.task, batches=eval_batches,
                                       batch_size=config.batch_size, mask=mask)
    return result


# encoder fields that must agree between a checkpoint and a warm-start
# target; rank and seed are allowed to differ by design
_MATCH_FIELDS = ("layers", "share_every", "d_model", "d_ff", "heads",
                 "enabled_diag", "activation", "unique_layers", "precision")


def two_stage(shared_ckpt: Checkpoint, rank: int, config: TrainConfig,
              mask: np.ndarray | None = None, freeze_shared: bool = False,
              adapter_seed: int | None = None) -> tuple[ToyModel, TrainResult]:
    """Warm-start a rank-`rank` residual model from a sharing-only
    checkpoint and train it. Adapters start at zero effect, so the step-0
    model is functionally the checkpointed one. All parameters train
    unless freeze_shared (a diagnostic, off by default) restricts the
    update to adapters, norms, embedding, and head.
    """
    if shared_ckpt.config.get("kind") != "toy":
        raise ConfigMismatchError(f"expected a toy-model checkpoint, got kind {shared_ckpt.config.get('kind')!r}")
    base = EncoderConfig.from_dict(shared_ckpt.config["encoder"])
    if base.rank != 0:
        raise ConfigMismatchError(f"stage-1 checkpoint must be sharing-only, has rank {base.rank}")
    if rank < 1:
        raise ValueError(f"stage-2 rank must be >= 1, got {rank}")
    target = replace(base, rank=rank,
                     seed=base.seed if adapter_seed is None else adapter_seed)
    diffs = [f for f in _MATCH_FIELDS if getattr(base, f) != getattr(target, f)]
    if diffs:
        raise ConfigMismatchError(f"checkpoint does not match target, differing fields: {diffs}")
    model = ToyModel(target, int(shared_ckpt.config["vocab"]), int(shared_ckpt.config["length"]))
    state = {n: np.asarray(a, dtype=np.float64) for n, a in shared_ckpt.tensors.items()}
    missing = model.load_state(state, require_all=False)
    not_adapters = [n for n in missing if ".adapter." not in n]
    if not_adapters:
        raise ConfigMismatchError(f"checkpoint leaves non-adapter tensors unset: {not_adapters}")
    trainable = None
    if freeze_shared:
        trainable = [n for n in model.named_tensors()
                     if not (n.startswith("group") or n.startswith("unique"))]
    result = train(model, config, mask=mask, trainable=trainable)
    return model, result
