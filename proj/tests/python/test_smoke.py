"""End-to-end smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import hssnet


def test_scan_order_is_a_permutation():
    for mode in ("temporal", "spatial", "diagonal", "antidiagonal"):
        for direction in ("forward", "backward"):
            order = hssnet.scan_order(mode, t=2, rows=3, cols=4, direction=direction)
            assert sorted(order) == list(range(24))


def test_scan_order_temporal_identity():
    assert hssnet.scan_order("temporal", t=2, rows=2, cols=2) == list(range(8))
    fwd = hssnet.scan_order("spatial", t=2, rows=2, cols=2)
    bwd = hssnet.scan_order("spatial", t=2, rows=2, cols=2, direction="backward")
    assert bwd == fwd[::-1]


def test_dice_and_hd95_closed_forms():
    a = np.zeros((8, 8))
    a[2:6, 2:6] = 1.0
    b = np.zeros((8, 8))
    b[2:6, 2:4] = 1.0
    # |A|=16, |B|=8, |A∩B|=8 -> dice = 16/24
    assert hssnet.dice(a, b) == pytest.approx(16.0 / 24.0, abs=1e-12)
    assert hssnet.dice(a, a) == 1.0
    assert hssnet.hd95(a, a) == 0.0


def test_total_loss_worked_example():
    probs = np.array([[0.5, 0.5], [0.5, 0.5]])
    target = np.array([[1.0, 0.0], [1.0, 0.0]])
    # dice part 1 - (2*1+1)/(3+1) = 0.4; bce part ln 2
    expected = 0.8 * 0.4 + 0.2 * math.log(2.0)
    assert hssnet.total_loss(probs, target, alpha=0.8) == pytest.approx(expected, abs=1e-12)
    assert hssnet.total_loss(probs, target) == pytest.approx(0.4586, abs=1e-4)


def test_ef_pipeline_on_synthetic_masks():
    clip = hssnet.synth_clip(size=64, frames=6, a0=20, b0=13, ca=0.8, cb=0.8, sigma=0.0, seed=3)
    rep = hssnet.ef_from_masks(clip["ed_mask"], clip["es_mask"])
    assert rep["edv"] > rep["esv"] > 0
    assert rep["ef"] == pytest.approx(clip["true_ef"], abs=2.0)
    both = hssnet.ef_from_masks_biplane(
        clip["ed_mask"], clip["ed_mask"], clip["es_mask"], clip["es_mask"]
    )
    assert both["ef"] == rep["ef"]

    geom = hssnet.extract_geometry(clip["ed_mask"])
    assert len(geom["diameters"]) == 20
    assert geom["length"] > 0


def test_ef_stats_closed_forms():
    s = hssnet.ef_stats([1.0, 2.0, 3.0], [2.0, 4.0, 6.0])
    assert s["corr_defined"]
    assert s["corr"] == pytest.approx(1.0, abs=1e-12)
    assert s["bias"] == pytest.approx(-2.0, abs=1e-12)


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0.0, 1.0, 64).reshape(8, 8)
    path = str(tmp_path / "img.pgm")
    hssnet.write_pgm(path, img)
    back = hssnet.read_pgm(path)
    assert back.shape == (8, 8)
    assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12


def test_model_shape_law_and_save_load(tmp_path):
    model = hssnet.Model(
        channels=(4, 8, 16, 32),
        enc_blocks=(1, 1, 1, 1),
        dec_blocks=(1, 1, 1, 1),
        ffn_ratio=2,
        conv_ratio=2,
        d_state=2,
        seed=7,
    )
    clip = hssnet.synth_clip(size=32, frames=2, a0=9, b0=6, ring_px=3, sigma=0.0, seed=1)
    x = clip["frames"]
    y = model.forward(x)
    assert y.shape == (2, 1, 32, 32)

    shapes = model.stage_shapes(x)
    assert shapes == [[2, 4, 8, 8], [2, 8, 4, 4], [2, 16, 2, 2], [2, 32, 1, 1]]

    path = str(tmp_path / "model.ckpt")
    model.save(path)
    again = hssnet.Model.load(path)
    y2 = again.forward(x)
    assert np.array_equal(y, y2)
    assert again.manifest == model.manifest
    assert again.n_parameters == model.n_parameters


def test_model_rejects_bad_config():
    with pytest.raises(ValueError):
        hssnet.Model(mamba_stages=(5,))
