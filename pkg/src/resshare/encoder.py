"""Pre-norm Transformer encoder over grouped-shared projections.

Layers are wired group-wise: all layers of a group reference the same
SharedProjection instances at every site, while adapters, LayerNorm
parameters and dropout streams stay per-layer. Positional information is
absolute sinusoidal, added by the caller before the first layer.
"""

from __future__ import annotations

import numpy as np

from .config import EncoderConfig
from .masks import mask_to_bias
from .projection import (
    SITES,
    ProjectionSite,
    ResidualAdapter,
    SharedProjection,
    effective_apply,
    group_index,
    init_adapter,
)
from .tensor import (
    Tensor,
    _make,
    _record_macs,
    add,
    dropout,
    layer_norm,
    matmul,
    np_dtype,
    relu,
    reshape,
    scale,
    softmax_rows,
    transpose,
)

LN_EPS = 1e-5


def sinusoidal_positions(T: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Absolute sinusoidal position table (T, d_model):
    sin(pos / 10000^(2i/d)) on even columns, cos on odd."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * (2 * (np.arange(d_model) // 2)) / d_model)
    angles = pos * freq[None, :]
    table = np.where(np.arange(d_model) % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class EncoderLayer:
    """One encoder layer: references to its (possibly shared) projection
    sets, its own adapters, and its own LayerNorm parameters."""

    def __init__(
        self,
        index: int,
        shared: dict[ProjectionSite, SharedProjection],
        adapters: dict[ProjectionSite, ResidualAdapter | None],
        d_model: int,
        heads: int,
        dropout_rate: float,
        dropout_seed: int,
        dtype,
    ):
        self.index = index
        self.shared = shared
        self.adapters = adapters
        self.heads = heads
        self.d_model = d_model
        self.dropout_rate = dropout_rate
        self._dropout_rng = np.random.default_rng(dropout_seed)
        self.norm1_gain = Tensor(np.ones(d_model, dtype=dtype), requires_grad=True)
        self.norm1_bias = Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)
        self.norm2_gain = Tensor(np.ones(d_model, dtype=dtype), requires_grad=True)
        self.norm2_bias = Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)

    def apply_site(self, site: ProjectionSite, x: Tensor) -> Tensor:
        return effective_apply(self.shared[site], self.adapters[site], x)


def attention_core(q: Tensor, k: Tensor, v: Tensor, heads: int,
                   bias: np.ndarray | None) -> Tensor:
    """Scaled-dot-product attention over (B, T, d) projections as one
    graph node: head split, masked softmax, weighting, and head merge,
    with a hand-derived backward. One node instead of a dozen keeps the
    per-step interpreter overhead down on long stacks."""
    B, T, d = q.shape
    dh = d // heads
    inv = 1.0 / np.sqrt(dh)

    def split(a: np.ndarray) -> np.ndarray:
        return a.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)

    def merge(a4: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(a4.transpose(0, 2, 1, 3)).reshape(B, T, d)

    q4, k4, v4 = split(q.data), split(k.data), split(v.data)
    scores = (q4 @ k4.swapaxes(-1, -2)) * inv
    if bias is not None:
        scores += bias
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    probs = scores
    _record_macs(2 * B * heads * T * T * dh)

    def bwd(g):
        g4 = split(g)
        gp = g4 @ v4.swapaxes(-1, -2)
        gv4 = probs.swapaxes(-1, -2) @ g4
        gs = probs * (gp - (gp * probs).sum(axis=-1, keepdims=True))
        gs *= inv
        return merge(gs @ k4), merge(gs.swapaxes(-1, -2) @ q4), merge(gv4)

    return _make(merge(probs @ v4), (q, k, v), bwd)


def mha_forward(layer: EncoderLayer, x: Tensor, mask: np.ndarray | None,
                fused: bool = True) -> Tensor:
    """Multi-head scaled-dot-product self-attention.

    x is (B, T, d_model) or (T, d_model); mask is a boolean (T, T) matrix
    (True = may attend) or None for full attention. Masked positions get a
    large negative additive logit, so their softmax weight underflows to
    exactly zero. All four projections run through the shared + residual
    path. fused=False composes the core from primitive ops instead; the
    two routes must agree and tests hold them together.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    B, T, d = x.shape
    h = layer.heads
    dh = d // h
    if mask is not None and mask.shape != (T, T):
        raise ValueError(f"mask shape {mask.shape} does not match sequence length {T}")

    q = layer.apply_site(ProjectionSite.QUERY, x)
    k = layer.apply_site(ProjectionSite.KEY, x)
    v = layer.apply_site(ProjectionSite.VALUE, x)

    if fused:
        ctx = attention_core(q, k, v, h, mask_to_bias(mask, x.dtype))
    else:
        def split_heads(t: Tensor) -> Tensor:
            return transpose(reshape(t, (B, T, h, dh)), (0, 2, 1, 3))

        q4, k4, v4 = split_heads(q), split_heads(k), split_heads(v)
        scores = scale(matmul(q4, transpose(k4)), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = add(scores, Tensor(mask_to_bias(mask, x.dtype)))
        attn = softmax_rows(scores)
        ctx = reshape(transpose(matmul(attn, v4), (0, 2, 1, 3)), (B, T, d))
    out = layer.apply_site(ProjectionSite.ATTN_OUT, ctx)
    if squeeze:
        out = reshape(out, (T, d))
    return out


class Encoder:
    """Stack of weight-shared encoder layers with a final LayerNorm."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        self.dtype = np_dtype(config.precision)
        rng = np.random.default_rng(config.seed)
        d, dff = config.d_model, config.d_ff

        self.groups: list[dict[ProjectionSite, SharedProjection]] = []
        for _ in range(config.n_groups):
            self.groups.append(
                {site: SharedProjection(*site.dims(d, dff), rng, self.dtype) for site in SITES}
            )
        self.unique_sets: dict[int, dict[ProjectionSite, SharedProjection]] = {}
        for l in config.unique_layers:
            self.unique_sets[l] = {
                site: SharedProjection(*site.dims(d, dff), rng, self.dtype) for site in SITES
            }

        self.layers: list[EncoderLayer] = []
        for l in range(config.layers):
            if l in self.unique_sets:
                shared = self.unique_sets[l]
            else:
                shared = self.groups[group_index(l, config.share_every)]
            adapters: dict[ProjectionSite, ResidualAdapter | None] = {}
            for site in SITES:
                if config.rank > 0:
                    out_dim, in_dim = site.dims(d, dff)
                    adapter = ResidualAdapter(out_dim, in_dim, config.rank, config.enabled_diag, self.dtype)
                    init_adapter(
                        adapter,
                        seed=int(rng.integers(0, 2**31 - 1)),
                        scale=float(np.sqrt(2.0 / (out_dim + config.rank))),
                    )
                    adapters[site] = adapter
                else:
                    adapters[site] = None
            self.layers.append(
                EncoderLayer(
                    l,
                    shared,
                    adapters,
                    d,
                    config.heads,
                    config.dropout_rate,
                    dropout_seed=config.seed * 1_000_003 + l,
                    dtype=self.dtype,
                )
            )
        self.final_norm_gain = Tensor(np.ones(d, dtype=self.dtype), requires_grad=True)
        self.final_norm_bias = Tensor(np.zeros(d, dtype=self.dtype), requires_grad=True)

    def named_tensors(self) -> dict[str, Tensor]:
        """Every trainable tensor exactly once, shared sets under
        group-scoped names, in the canonical accounting order."""
        out: dict[str, Tensor] = {}
        for g, group in enumerate(self.groups):
            for site in SITES:
                out[f"group{g}.{site.value}.weight"] = group[site].weight
                out[f"group{g}.{site.value}.bias"] = group[site].bias
        for l, uset in self.unique_sets.items():
            for site in SITES:
                out[f"unique{l}.{site.value}.weight"] = uset[site].weight
                out[f"unique{l}.{site.value}.bias"] = uset[site].bias
        if self.config.rank > 0:
            for l, layer in enumerate(self.layers):
                for site in SITES:
                    adapter = layer.adapters[site]
                    out[f"layer{l}.{site.value}.adapter.a"] = adapter.a
                    out[f"layer{l}.{site.value}.adapter.b"] = adapter.b
                    if adapter.d is not None:
                        out[f"layer{l}.{site.value}.adapter.d"] = adapter.d
        for l, layer in enumerate(self.layers):
            out[f"layer{l}.norm1.gain"] = layer.norm1_gain
            out[f"layer{l}.norm1.bias"] = layer.norm1_bias
            out[f"layer{l}.norm2.gain"] = layer.norm2_gain
            out[f"layer{l}.norm2.bias"] = layer.norm2_bias
        out["final_norm.gain"] = self.final_norm_gain
        out["final_norm.bias"] = self.final_norm_bias
        return out

    def trainable(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def zero_grads(self) -> None:
        for t in self.named_tensors().values():
            t.zero_grad()

    def load_state(self, state: dict[str, np.ndarray], require_all: bool = True) -> list[str]:
        """Copy arrays into the encoder's tensors by name. Unknown names
        are rejected; returns the list of tensor names `state` did not
        cover (empty unless require_all is False)."""
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

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors().items()}

    def config_dict(self) -> dict:
        return {"kind": "encoder", "encoder": self.config.to_dict()}

    def forward(self, x: Tensor, mask: np.ndarray | None = None, train: bool = False) -> Tensor:
        return encoder_forward(self, x, mask, train=train)

    __call__ = forward


def build_encoder(config: EncoderConfig) -> Encoder:
    """Construct an encoder: ceil(L/K) shared weight sets, L layers wired
    by group, adapters iff rank > 0, deterministic under config.seed."""
    return Encoder(config)


def _ffn(layer: EncoderLayer, x: Tensor) -> Tensor:
    h = relu(layer.apply_site(ProjectionSite.FFN_IN, x))
    return layer.apply_site(ProjectionSite.FFN_OUT, h)


def encoder_forward(encoder: Encoder, x: Tensor, mask: np.ndarray | None = None, train: bool = False,
                    fused: bool = True) -> Tensor:
    """Apply all layers: pre-norm attention and feed-forward sublayers,
    each wrapped in a residual connection, then the final norm."""
    if x.shape[-1] != encoder.config.d_model:
        raise ValueError(f"input width {x.shape} does not match d_model {encoder.config.d_model}")
    rate = encoder.config.dropout_rate if train else 0.0
    for layer in encoder.layers:
        a = layer_norm(x, layer.norm1_gain, layer.norm1_bias, LN_EPS)
        a = mha_forward(layer, a, mask, fused=fused)
        if rate > 0:
            a = dropout(a, rate, layer._dropout_rng)
        x = add(x, a)
        f = layer_norm(x, layer.norm2_gain, layer.norm2_bias, LN_EPS)
        f = _ffn(layer, f)
        if rate > 0:
            f = dropout(f, rate, layer._dropout_rng)
        x = add(x, f)
    return layer_norm(x, encoder.final_norm_gain, encoder.final_norm_bias, LN_EPS)
