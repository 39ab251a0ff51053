"""Exact parameter accounting for shared / residual encoder configurations.

The breakdown lists every trainable encoder tensor by name, in the same
canonical order the encoder itself enumerates them, so checkpoints and
reports can be cross-checked against it. Full-rank weight sets (group
sets plus any private per-layer sets) count as shared; adapters count as
residual; LayerNorm vectors are tallied separately and never shared.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .config import EncoderConfig
from .projection import SITES

MILLION = 1_000_000


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    kind: str  # shared | residual | norm

    @property
    def count(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


@dataclass(frozen=True)
class ParamCount:
    """Accounting record for one encoder configuration."""

    config: EncoderConfig
    breakdown: tuple[TensorSpec, ...]

    def _total(self, kind: str) -> int:
        return sum(t.count for t in self.breakdown if t.kind == kind)

    @property
    def shared_total(self) -> int:
        return self._total("shared")

    @property
    def residual_total(self) -> int:
        return self._total("residual")

    @property
    def norm_total(self) -> int:
        return self._total("norm")

    @property
    def transformer_total(self) -> int:
        """Projection parameters (shared + residual), the comparable
        model-size figure; norm vectors are excluded as negligible."""
        return self.shared_total + self.residual_total

    @property
    def per_layer_residual(self) -> int:
        if self.config.rank == 0:
            return 0
        return self.residual_total // self.config.layers

    def names(self) -> list[str]:
        return [t.name for t in self.breakdown]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("name,shape,count,kind\n")
        for t in self.breakdown:
            out.write(f"{t.name},{'x'.join(map(str, t.shape))},{t.count},{t.kind}\n")
        out.write(f"shared_total,,{self.shared_total},\n")
        out.write(f"residual_total,,{self.residual_total},\n")
        out.write(f"norm_total,,{self.norm_total},\n")
        out.write(f"transformer_total,,{self.transformer_total},\n")
        return out.getvalue()

    def to_text(self) -> str:
        c = self.config
        lines = [
            f"encoder L={c.layers} K={c.share_every} R={c.rank} "
            f"d_model={c.d_model} d_ff={c.d_ff} heads={c.heads} "
            f"diag={'on' if c.enabled_diag else 'off'}",
            f"  weight sets           : {c.n_groups} group + {len(c.unique_layers)} private",
            f"  shared params         : {self.shared_total:>12,} ({rounded_millions(self.shared_total):.1f}M)",
            f"  residual params       : {self.residual_total:>12,} ({rounded_millions(self.residual_total):.1f}M)",
            f"  transformer total     : {self.transformer_total:>12,} ({rounded_millions(self.transformer_total):.1f}M)",
            f"  layernorm params      : {self.norm_total:>12,}",
        ]
        return "\n".join(lines)


def rounded_millions(count: int) -> float:
    """Parameter count rounded to 0.1M, the granularity used in reports."""
    return round(count / MILLION, 1)


def count_params(config: EncoderConfig) -> ParamCount:
    """Enumerate every trainable encoder tensor for `config`."""
    specs: list[TensorSpec] = []
    d, dff = config.d_model, config.d_ff
    for g in range(config.n_groups):
        for site in SITES:
            out_dim, in_dim = site.dims(d, dff)
            specs.append(TensorSpec(f"group{g}.{site.value}.weight", (out_dim, in_dim), "shared"))
            specs.append(TensorSpec(f"group{g}.{site.value}.bias", (out_dim,), "shared"))
    for l in config.unique_layers:
        for site in SITES:
            out_dim, in_dim = site.dims(d, dff)
            specs.append(TensorSpec(f"unique{l}.{site.value}.weight", (out_dim, in_dim), "shared"))
            specs.append(TensorSpec(f"unique{l}.{site.value}.bias", (out_dim,), "shared"))
    if config.rank > 0:
        for l in range(config.layers):
            for site in SITES:
                out_dim, in_dim = site.dims(d, dff)
                specs.append(TensorSpec(f"layer{l}.{site.value}.adapter.a", (out_dim, config.rank), "residual"))
                specs.append(TensorSpec(f"layer{l}.{site.value}.adapter.b", (config.rank, in_dim), "residual"))
                if config.enabled_diag:
                    specs.append(
                        TensorSpec(f"layer{l}.{site.value}.adapter.d", (min(out_dim, in_dim),), "residual")
                    )
    for l in range(config.layers):
        for norm in ("norm1", "norm2"):
            specs.append(TensorSpec(f"layer{l}.{norm}.gain", (d,), "norm"))
            specs.append(TensorSpec(f"layer{l}.{norm}.bias", (d,), "norm"))
    specs.append(TensorSpec("final_norm.gain", (d,), "norm"))
    specs.append(TensorSpec("final_norm.bias", (d,), "norm"))
    return ParamCount(config=config, breakdown=tuple(specs))


def report_tables(d_model: int = 512, d_ff: int = 2048, layers: int = 18) -> str:
    """Reference tables at the published architecture size: sharing-only
    and sharing-plus-rank-16 totals for K in {1,3,6,9,18}, then the
    residual budget for R in {16,8,4,2,1} at K in {3,9}. Exact integers
    with 0.1M roundings."""

    def cfg(k: int, r: int) -> EncoderConfig:
        return EncoderConfig(layers=layers, share_every=k, rank=r,
                             d_model=d_model, d_ff=d_ff, heads=8)

    lines = [f"architecture: d_model={d_model}  d_ff={d_ff}  layers={layers}", ""]
    lines.append("sharing period K vs transformer parameters")
    lines.append(f"{'K':>4}  {'sharing only':>14} {'(M)':>6}  {'+ rank-16':>14} {'(M)':>6}")
    for k in (1, 3, 6, 9, 18):
        a = count_params(cfg(k, 0)).transformer_total
        b = count_params(cfg(k, 16)).transformer_total
        lines.append(f"{k:>4}  {a:>14,} {rounded_millions(a):>6.1f}  {b:>14,} {rounded_millions(b):>6.1f}")
    lines.append("")
    lines.append("residual rank R vs adapter budget")
    lines.append(f"{'R':>4}  {'adapters':>12} {'(M)':>6}  {'K=3 total':>14} {'(M)':>6}  {'K=9 total':>14} {'(M)':>6}")
    for r in (16, 8, 4, 2, 1):
        pc3 = count_params(cfg(3, r))
        pc9 = count_params(cfg(9, r))
        res = pc3.residual_total
        lines.append(
            f"{r:>4}  {res:>12,} {rounded_millions(res):>6.1f}"
            f"  {pc3.transformer_total:>14,} {rounded_millions(pc3.transformer_total):>6.1f}"
            f"  {pc9.transformer_total:>14,} {rounded_millions(pc9.transformer_total):>6.1f}"
        )
    return "\n".join(lines)
