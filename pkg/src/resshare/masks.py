"""Chunk-wise attention masks for streaming inference.

Frames are grouped into fixed-size chunks; a frame may attend to its whole
chunk, a bounded look-back history, and a bounded look-ahead window. All
quantities are in frames; callers convert from milliseconds themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChunkMaskSpec:
    """chunk: frames per chunk; history/lookahead: extra frames visible
    before the chunk start / after the chunk end."""

    chunk: int
    history: int = 0
    lookahead: int = 0

    def __post_init__(self):
        if self.chunk < 1:
            raise ValueError(f"chunk must be >= 1, got {self.chunk}")
        if self.history < 0:
            raise ValueError(f"history must be >= 0, got {self.history}")
        if self.lookahead < 0:
            raise ValueError(f"lookahead must be >= 0, got {self.lookahead}")


def attention_mask(T: int, spec: ChunkMaskSpec) -> np.ndarray:
    """Boolean T x T matrix; entry (i, j) is True when position i may
    attend to position j.

    Position i in chunk c = i // chunk sees columns j with
    c*chunk - history <= j < (c+1)*chunk + lookahead, clipped to [0, T).
    Every row keeps at least its own position.
    """
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    chunks = np.arange(T) // spec.chunk
    lo = chunks * spec.chunk - spec.history
    hi = (chunks + 1) * spec.chunk + spec.lookahead
    cols = np.arange(T)
    return (cols[None, :] >= lo[:, None]) & (cols[None, :] < hi[:, None])


def mask_to_bias(mask: np.ndarray | None, dtype) -> np.ndarray | None:
    """Additive attention bias: 0 where allowed, a large negative number
    where masked. Finite (rather than -inf) so softmax backward stays
    clean; exp() of the biased logit still underflows to exactly 0."""
    if mask is None:
        return None
    bias = np.zeros(mask.shape, dtype=dtype)
    bias[~mask] = -1e30
    return bias
