import numpy as np
import pytest

import matter


def test_config_round_trip():
    text = matter.default_config()
    assert matter.normalize_config(text) == text
    changed = matter.normalize_config(text, {"train.iterations": "7"})
    assert "7" in changed and changed != text
    with pytest.raises(matter.ConfigError):
        matter.normalize_config("", {"train.iterations": "-1"})


def test_kernel_properties():
    rng = np.random.default_rng(0)
    window = rng.uniform(0.1, 1.0, size=(4, 3, 3))
    w = matter.tern_kernel(window)
    assert w.shape == (3, 3)
    assert abs(np.abs(w).sum() - 1.0) < 1e-9
    assert np.allclose(w, matter.tern_kernel(window * 7.0), atol=1e-9)
    flat = matter.tern_kernel(np.ones((2, 3, 3)))
    assert np.allclose(flat, -1.0 / 9.0)


def test_refine_preserves_shape():
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(5, 12, 10)).astype(np.float32)
    guide = rng.uniform(0.1, 1.0, size=(3, 12, 10)).astype(np.float32)
    out = matter.refine(feats, guide, blocks=2)
    assert out.shape == feats.shape
    assert np.isfinite(out).all()
    assert np.array_equal(matter.refine(feats, guide, blocks=0), feats)


def test_otsu_and_metrics():
    values = np.concatenate([np.zeros(50), np.ones(50)]).astype(np.float32)
    threshold, edge, degenerate = matter.otsu(values)
    assert not degenerate and 0.0 < threshold < 1.0 and edge > 0
    assert matter.otsu(np.full(10, 3.0, dtype=np.float32))[2]
    assert matter.f1_score(37.52, 72.65) == pytest.approx(49.48, abs=0.01)
    pred = np.array([[1, 0], [1, 1]], dtype=np.float32)
    truth = np.array([[1, 0], [0, 1]], dtype=np.float32)
    r = matter.prf1(pred, truth)
    assert (r["tp"], r["fp"], r["fn"]) == (2, 1, 0)


def test_nce_loss_prefers_aligned_positive():
    a = np.array([1, 0, 0], dtype=np.float32)
    negs = np.array([[0, 1, 0], [0, 0, 1]], dtype=np.float32)
    good = matter.nce_loss(a, a, negs, 0.05)
    bad = matter.nce_loss(a, negs[0], np.stack([a, negs[1]]), 0.05)
    assert good < bad


def test_raster_round_trip(tmp_path):
    img = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    matter.write_raster(tmp_path / "a.msr", img)
    assert np.array_equal(matter.read_raster(tmp_path / "a.msr"), img)
    with pytest.raises(matter.DataError):
        matter.read_raster(tmp_path / "missing.msr")


def test_end_to_end_small(tmp_path):
    overrides = {
        "synth.regions": "2",
        "synth.timesteps": "3",
        "synth.height": "24",
        "synth.width": "24",
        "synth.heldout_pairs": "1",
        "backbone.stem_channels": "4",
        "backbone.block_channels": "4,8",
        "backbone.descriptor_dim": "8",
        "tern.blocks": "1",
        "resenc.clusters": "6",
        "train.batch_size": "2",
        "train.patches_per_triplet": "2",
        "train.iterations": "3",
    }
    out = matter.synth(tmp_path / "data", "", overrides)
    ckpt = tmp_path / "model.mtck"
    steps = []
    losses = matter.pretrain(out["catalog"], ckpt, "", overrides,
                             lambda i, loss: steps.append(i))
    assert len(losses) == 3 and steps == [1, 2, 3]
    model = matter.load_checkpoint(ckpt)
    assert model.iteration == 3

    pair = out["pairs"][0]
    before = matter.read_raster(pair["before"])
    score, mask, _ = model.change(before, before, window=5)
    assert score.shape == before.shape[1:]
    assert not mask.any()

    mosaic = matter.read_raster(out["mosaic"])
    words = model.word_map(mosaic, window=5)
    assert words.shape == mosaic.shape[1:]
    labels = matter.read_raster(out["mosaic_labels"])[0]
    purity = matter.word_map_purity(words, labels)
    assert all(0.0 <= p <= 1.0 for p in purity)
