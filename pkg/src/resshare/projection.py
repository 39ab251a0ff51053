"""Projection weights composed of a group-shared full-rank matrix plus a
per-layer low-rank pair and a rectangular diagonal.

The effective weight of a layer is U + A@B + diag(D), but the forward pass
never materializes A@B: it applies U@x, A@(B@x) and the elementwise
diagonal separately, so the cost stays at M*N + R*(M+N) + min(M,N)
multiply-accumulates per input vector. Materialization exists only as a
test oracle.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .tensor import Tensor, _make, _record_macs


class ProjectionSite(Enum):
    """The six per-layer linear maps that carry the shared + residual
    treatment."""

    QUERY = "query"
    KEY = "key"
    VALUE = "value"
    ATTN_OUT = "attn_out"
    FFN_IN = "ffn_in"
    FFN_OUT = "ffn_out"

    def dims(self, d_model: int, d_ff: int) -> tuple[int, int]:
        """(out_dim, in_dim) of this site's weight matrix."""
        if self is ProjectionSite.FFN_IN:
            return d_ff, d_model
        if self is ProjectionSite.FFN_OUT:
            return d_model, d_ff
        return d_model, d_model


SITES: tuple[ProjectionSite, ...] = tuple(ProjectionSite)


def group_index(layer: int, share_every: int) -> int:
    """Group owning `layer` when every run of `share_every` consecutive
    layers shares one weight set: floor(layer / K)."""
    if layer < 0:
        raise ValueError(f"layer index must be >= 0, got {layer}")
    if share_every < 1:
        raise ValueError(f"group size must be >= 1, got {share_every}")
    return layer // share_every


class SharedProjection:
    """One group-owned weight matrix U (out_dim x in_dim) plus its bias.

    Exactly one instance exists per (group, site); every layer of the
    group holds a reference to it.
    """

    def __init__(self, out_dim: int, in_dim: int, rng: np.random.Generator, dtype=np.float64):
        std = np.sqrt(2.0 / (in_dim + out_dim))
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.weight = Tensor(rng.normal(0.0, std, size=(out_dim, in_dim)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)


class ResidualAdapter:
    """Per-layer residual triple (A, B, D): delta = A@B + diag(D).

    A is out_dim x R, B is R x in_dim, D holds the min(out_dim, in_dim)
    entries of a rectangular diagonal matrix (absent when the diagonal is
    disabled). Adapters are never shared between layers. Starts at zero
    effect: call `init_adapter` to give A its noise.
    """

    def __init__(self, out_dim: int, in_dim: int, rank: int, enabled_diag: bool = True, dtype=np.float64):
        if not 1 <= rank < min(out_dim, in_dim):
            raise ValueError(
                f"rank must satisfy 1 <= R < min(out_dim, in_dim), got R={rank} for {out_dim}x{in_dim}"
            )
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.rank = rank
        self.enabled_diag = enabled_diag
        self.a = Tensor(np.zeros((out_dim, rank), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros((rank, in_dim), dtype=dtype), requires_grad=True)
        self.d = (
            Tensor(np.zeros(min(out_dim, in_dim), dtype=dtype), requires_grad=True)
            if enabled_diag
            else None
        )


def init_adapter(adapter: ResidualAdapter, seed: int, scale: float) -> None:
    """Fill A with zero-mean noise of std `scale`; B and D stay zero so
    the adapter contributes nothing until trained."""
    rng = np.random.default_rng(seed)
    adapter.a.data[...] = rng.normal(0.0, 1.0, size=adapter.a.shape) * scale
    adapter.b.data[...] = 0
    if adapter.d is not None:
        adapter.d.data[...] = 0


def materialize_delta(adapter: ResidualAdapter) -> np.ndarray:
    """Dense out_dim x in_dim residual matrix A@B + diag(D). Test oracle
    only; never used on the forward path."""
    delta = adapter.a.data @ adapter.b.data
    if adapter.d is not None:
        m = min(adapter.out_dim, adapter.in_dim)
        delta[np.arange(m), np.arange(m)] += adapter.d.data
    return delta


def effective_apply(shared: SharedProjection, adapter: ResidualAdapter | None, x: Tensor) -> Tensor:
    """y = (U + A@B + diag(D)) @ x + bias, factored: U@x + A@(B@x) + D*x.

    x has shape (..., in_dim); the result has shape (..., out_dim). With
    no adapter (or an all-zero one) this equals the shared-only product in
    a fixed evaluation order. Implemented as a single graph node with a
    hand-derived backward rule; gradients accumulate into U and bias from
    every layer of the group that references them.
    """
    out_dim, in_dim = shared.out_dim, shared.in_dim
    if x.shape[-1] != in_dim:
        raise ValueError(f"effective_apply: input extent {x.shape} does not match in_dim {in_dim}")
    if adapter is not None and (adapter.out_dim, adapter.in_dim) != (out_dim, in_dim):
        raise ValueError(
            f"effective_apply: adapter dims {adapter.out_dim}x{adapter.in_dim} "
            f"do not match projection {out_dim}x{in_dim}"
        )

    squeeze = x.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    n_vec = xd.size // in_dim

    y = xd @ shared.weight.data.T
    _record_macs(n_vec * out_dim * in_dim)
    bx = None
    if adapter is not None:
        bx = xd @ adapter.b.data.T
        y = y + bx @ adapter.a.data.T
        _record_macs(n_vec * adapter.rank * (in_dim + out_dim))
        if adapter.d is not None:
            m = adapter.d.shape[0]
            y[..., :m] += adapter.d.data * xd[..., :m]
            _record_macs(n_vec * m)
    y = y + shared.bias.data
    if squeeze:
        y = y[0]

    if adapter is None:
        parents = (x, shared.weight, shared.bias)
    elif adapter.d is None:
        parents = (x, shared.weight, shared.bias, adapter.a, adapter.b)
    else:
        parents = (x, shared.weight, shared.bias, adapter.a, adapter.b, adapter.d)

    def bwd(g):
        gd = g[None, :] if squeeze else g
        g2 = gd.reshape(-1, out_dim)
        x2 = xd.reshape(-1, in_dim)
        gx = gU = gbias = ga = gb = gdiag = None
        if shared.weight.requires_grad:
            gU = g2.T @ x2
        if shared.bias.requires_grad:
            gbias = g2.sum(axis=0)
        if x.requires_grad:
            gx = gd @ shared.weight.data
        if adapter is not None:
            gbx = gd @ adapter.a.data
            if adapter.a.requires_grad:
                ga = g2.T @ bx.reshape(-1, adapter.rank)
            if adapter.b.requires_grad:
                gb = gbx.reshape(-1, adapter.rank).T @ x2
            if gx is not None:
                gx = gx + gbx @ adapter.b.data
            if adapter.d is not None:
                m = adapter.d.shape[0]
                if adapter.d.requires_grad:
                    gdiag = (g2[:, :m] * x2[:, :m]).sum(axis=0)
                if gx is not None:
                    gx[..., :m] += adapter.d.data * gd[..., :m]
        if gx is not None and squeeze:
            gx = gx[0]
        if adapter is None:
            return gx, gU, gbias
        if adapter.d is None:
            return gx, gU, gbias, ga, gb
        return gx, gU, gbias, ga, gb, gdiag

    return _make(np.ascontiguousarray(y), parents, bwd)
