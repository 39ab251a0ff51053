"""Encoder hyperparameters: all knobs of the sharing / residual scheme."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .masks import ChunkMaskSpec


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of a weight-shared encoder.

    layers: encoder depth L.
    share_every: group size K; each run of K consecutive layers shares one
        set of projection weights (the last group may be smaller).
    rank: adapter rank R; 0 disables the per-layer residual adapters.
    enabled_diag: include the diagonal component of each adapter.
    unique_layers: layers given private full-rank weights instead of their
        group's (used for sharing-vs-unique comparisons).
    precision: 32 or 64, the scalar width used for compute.
    """

    layers: int
    share_every: int
    rank: int
    d_model: int
    d_ff: int
    heads: int
    enabled_diag: bool = True
    mask: ChunkMaskSpec | None = None
    activation: str = "relu"
    dropout_rate: float = 0.0
    seed: int = 0
    precision: int = 64
    unique_layers: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if not 1 <= self.share_every <= self.layers:
            raise ValueError(
                f"share_every must satisfy 1 <= K <= layers, got K={self.share_every} with layers={self.layers}"
            )
        if self.d_model < 1 or self.d_ff < 1:
            raise ValueError(f"d_model and d_ff must be positive, got {self.d_model}, {self.d_ff}")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model must be divisible by heads, got d_model={self.d_model}, heads={self.heads}"
            )
        if not 0 <= self.rank < min(self.d_model, self.d_ff):
            raise ValueError(
                f"rank must satisfy 0 <= R < min(d_model, d_ff), got R={self.rank} with dims {self.d_model}/{self.d_ff}"
            )
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.activation not in ("relu",):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        object.__setattr__(self, "unique_layers", tuple(sorted(set(self.unique_layers))))
        for l in self.unique_layers:
            if not 0 <= l < self.layers:
                raise ValueError(f"unique layer index {l} out of range [0, {self.layers})")
        if self.unique_layers and self.share_every == 1:
            raise ValueError("unique_layers requires share_every > 1 (every layer is already unique at K=1)")
        for g in range(self.n_groups):
            members = [l for l in self.group_members(g) if l not in self.unique_layers]
            if not members:
                raise ValueError(f"unique_layers would leave group {g} with no sharing members")

    @property
    def n_groups(self) -> int:
        return -(-self.layers // self.share_every)

    def group_members(self, group: int) -> range:
        start = group * self.share_every
        return range(start, min(start + self.share_every, self.layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unique_layers"] = list(self.unique_layers)
        if self.mask is not None:
            d["mask"] = {"chunk": self.mask.chunk, "history": self.mask.history, "lookahead": self.mask.lookahead}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        if d.get("mask"):
            d["mask"] = ChunkMaskSpec(**d["mask"])
        d["unique_layers"] = tuple(d.get("unique_layers", ()))
        return cls(**d)
