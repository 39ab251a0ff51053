import numpy as np
import pytest

from resshare.accounting import count_params, report_tables, rounded_millions
from resshare.config import EncoderConfig
from resshare.encoder import build_encoder


def _cfg(k, r, layers=18, diag=True, unique=()):
    return EncoderConfig(layers=layers, share_every=k, rank=r, d_model=512,
                         d_ff=2048, heads=8, enabled_diag=diag, unique_layers=unique)


@pytest.mark.parametrize("k,total", [
    (1, 56_706_048),
    (3, 18_902_016),
    (6, 9_451_008),
    (9, 6_300_672),
    (18, 3_150_336),
])
def test_sharing_only_totals(k, total):
    pc = count_params(_cfg(k, 0))
    assert pc.transformer_total == total
    assert pc.residual_total == 0


@pytest.mark.parametrize("r,res", [
    (16, 2_709_504),
    (8, 1_382_400),
    (4, 718_848),
    (2, 387_072),
    (1, 221_184),
])
def test_residual_budgets(r, res):
    pc = count_params(_cfg(3, r))
    assert pc.residual_total == res
    assert pc.per_layer_residual == res // 18


@pytest.mark.parametrize("k,r,total", [
    (3, 16, 21_611_520),
    (6, 16, 12_160_512),
    (9, 16, 9_010_176),
    (18, 16, 5_859_840),
    (9, 1, 6_521_856),
])
def test_combined_totals(k, r, total):
    assert count_params(_cfg(k, r)).transformer_total == total


def test_share3_rank2_fraction_of_baseline():
    frac = count_params(_cfg(3, 2)).transformer_total / count_params(_cfg(1, 0)).transformer_total
    assert abs(frac - 0.340) < 0.001


def test_rounded_millions():
    assert rounded_millions(56_706_048) == 56.7
    assert rounded_millions(3_150_336) == 3.2
    assert rounded_millions(221_184) == 0.2
    assert rounded_millions(9_451_008) == 9.5


def test_diag_toggle_delta():
    # min(out, in) scalars per site: 4*512 + 512 + 512 = 3072 per layer
    on = count_params(_cfg(3, 16, diag=True)).transformer_total
    off = count_params(_cfg(3, 16, diag=False)).transformer_total
    assert on - off == 18 * 3072 == 55_296


def test_unique_last_layer_total():
    # one extra private full set on top of K=3 sharing
    pc = count_params(_cfg(3, 0, unique=(17,)))
    assert pc.transformer_total == 18_902_016 + 3_150_336 == 22_052_352


def test_uneven_grouping_k5():
    # 18 layers at K=5 -> 4 sets, the last covering 3 layers
    assert count_params(_cfg(5, 0)).transformer_total == 4 * 3_150_336 == 12_601_344


def test_norm_total_counts_all_layers_plus_final():
    pc = count_params(_cfg(3, 0))
    assert pc.norm_total == (18 * 2 * 2 * 512) + 2 * 512 == 37_888


def test_breakdown_names_match_encoder_exactly():
    cfg = EncoderConfig(layers=5, share_every=2, rank=3, d_model=8, d_ff=16,
                        heads=2, unique_layers=(3,))
    pc = count_params(cfg)
    enc = build_encoder(cfg)
    assert pc.names() == list(enc.named_tensors())
    for spec, (name, t) in zip(pc.breakdown, enc.named_tensors().items()):
        assert spec.name == name
        assert spec.shape == t.shape, name


def test_breakdown_sums_are_consistent():
    pc = count_params(_cfg(3, 16))
    assert pc.shared_total + pc.residual_total + pc.norm_total == sum(s.count for s in pc.breakdown)


def test_csv_and_text_render():
    pc = count_params(EncoderConfig(layers=2, share_every=2, rank=1, d_model=8, d_ff=16, heads=2))
    csv = pc.to_csv()
    assert csv.splitlines()[0] == "name,shape,count,kind"
    # breakdown rows plus four trailing total rows
    assert len(csv.splitlines()) == 1 + len(pc.breakdown) + 4
    assert csv.splitlines()[1] == "group0.query.weight,8x8,64,shared"
    assert f"transformer_total,,{pc.transformer_total}," in csv
    text = pc.to_text()
    assert "transformer total" in text


def test_report_tables_contains_reference_rows():
    text = report_tables()
    for token in ("56,706,048", "18,902,016", "21,611,520", "2,709,504", "221,184", "9,010,176"):
        assert token in text


def test_runtime_is_fast():
    import time
    t0 = time.time()
    for k in (1, 3, 6, 9, 18):
        for r in (0, 16, 8, 4, 2, 1):
            count_params(_cfg(k, r))
    assert time.time() - t0 < 1.0
