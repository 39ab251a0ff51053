"""Weight-loading simulator for streaming layer-by-layer inference.

Walks the layers in order. A shared projection set (weights + biases) is
fetched once, at the first layer that needs it; adapters are fetched at
their own layer. Per-layer norm vectors are outside the model: they are
never shared, so counting them would break the exact ceil(L/K)/L ratio
that sharing alone produces, and they are negligible next to the
projections. Activations are likewise out of scope; the quantity under
study is weight traffic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import EncoderConfig
from .projection import SITES, group_index


@dataclass
class LoadReport:
    bytes_loaded_total: int = 0
    bytes_loaded_shared: int = 0
    bytes_loaded_residual: int = 0
    load_events: list[tuple[str, int]] = field(default_factory=list)
    baseline_bytes: int = 0

    @property
    def ratio_vs_baseline(self) -> float:
        return self.bytes_loaded_total / self.baseline_bytes

    def lines(self) -> list[str]:
        return [
            f"load events          : {len(self.load_events)}",
            f"bytes shared sets    : {self.bytes_loaded_shared:,}",
            f"bytes adapters       : {self.bytes_loaded_residual:,}",
            f"bytes total          : {self.bytes_loaded_total:,}",
            f"baseline (K=1, R=0)  : {self.baseline_bytes:,}",
            f"ratio vs baseline    : {self.ratio_vs_baseline:.6f}",
        ]


def _set_tensor_sizes(config: EncoderConfig) -> list[tuple[str, int]]:
    """(suffix, scalar count) for one full projection set, site order."""
    out = []
    for site in SITES:
        o, i = site.dims(config.d_model, config.d_ff)
        out.append((f"{site.value}.weight", o * i))
        out.append((f"{site.value}.bias", o))
    return out


def _adapter_tensor_sizes(config: EncoderConfig) -> list[tuple[str, int]]:
    out = []
    for site in SITES:
        o, i = site.dims(config.d_model, config.d_ff)
        out.append((f"{site.value}.adapter.a", o * config.rank))
        out.append((f"{site.value}.adapter.b", config.rank * i))
        if config.enabled_diag:
            out.append((f"{site.value}.adapter.d", min(o, i)))
    return out


def simulate_load(config: EncoderConfig, bytes_per_param: int = 4) -> LoadReport:
    """One inference pass: returns ordered load events and totals, with
    the unshared zero-rank stack at the same dims as the baseline."""
    if bytes_per_param <= 0:
        raise ValueError(f"bytes_per_param must be positive, got {bytes_per_param}")
    bpp = int(bytes_per_param)
    report = LoadReport()
    set_sizes = _set_tensor_sizes(config)
    adapter_sizes = _adapter_tensor_sizes(config) if config.rank > 0 else []
    loaded_groups: set[int] = set()
    for layer in range(config.layers):
        if layer in config.unique_layers:
            prefix = f"unique{layer}"
            fresh = True
        else:
            g = group_index(layer, config.share_every)
            prefix = f"group{g}"
            fresh = g not in loaded_groups
            if fresh:
                loaded_groups.add(g)
        if fresh:
            for suffix, n in set_sizes:
                b = n * bpp
                report.load_events.append((f"{prefix}.{suffix}", b))
                report.bytes_loaded_shared += b
        for suffix, n in adapter_sizes:
            b = n * bpp
            report.load_events.append((f"layer{layer}.{suffix}", b))
            report.bytes_loaded_residual += b
    report.bytes_loaded_total = report.bytes_loaded_shared + report.bytes_loaded_residual
    per_set = sum(n for _, n in set_sizes)
    report.baseline_bytes = config.layers * per_set * bpp
    return report
