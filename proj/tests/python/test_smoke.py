import numpy as np
import pytest

import snsteg


def test_detection_error_exact():
    labels = [1] * 10 + [0] * 10
    preds = [0, 0] + [1] * 8 + [1] + [0] * 9
    e = snsteg.detection_error(preds, labels)
    assert e["pmd"] == 0.2
    assert e["pfa"] == 0.1
    assert e["pe"] == 0.15
    assert snsteg.detection_error([0] * 20, labels)["pe"] == 0.5


def test_cover_and_embedding():
    cover = snsteg.synth_cover(3, 32, 5.0)
    assert cover.shape == (32, 32) and cover.dtype == np.uint8
    assert np.array_equal(cover, snsteg.synth_cover(3, 32, 5.0))
    stego = snsteg.embed_pm1(cover, 1.0, 9)
    assert np.all(np.abs(stego.astype(int) - cover.astype(int)) == 1)
    with pytest.raises(ValueError):
        snsteg.embed_pm1(cover, 2.0, 9)


def test_bn_standardizes_each_channel():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, size=(4, 3, 8, 8))
    y = snsteg.bn_forward(x)
    assert y.shape == x.shape
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.std(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_sn_uses_fixed_statistics():
    x = np.full((2, 2, 3, 3), 5.0)
    y = snsteg.sn_forward(x, [1.0, 5.0], [2.0, 1.0], eps=0.0)
    np.testing.assert_allclose(y[:, 0], 2.0)
    np.testing.assert_allclose(y[:, 1], 0.0)


def test_ema_matches_numpy():
    mean, std = [0.5], [2.0]
    batches = [(0.1 * k, 1.0 + 0.01 * k) for k in range(20)]
    for bm, bs in batches:
        mean, std = snsteg.sn_update_stats(mean, std, [bm], [bs], 0.05)
    ref_m, ref_s = 0.5, 2.0
    for bm, bs in batches:
        ref_m = 0.95 * ref_m + 0.05 * bm
        ref_s = 0.95 * ref_s + 0.05 * bs
    assert mean[0] == pytest.approx(ref_m, abs=1e-12)
    assert std[0] == pytest.approx(ref_s, abs=1e-12)


def test_lr_schedule_drop():
    assert snsteg.lr_schedule(0, 40) == pytest.approx(0.01)
    assert snsteg.lr_schedule(39, 40) == pytest.approx(0.001)


def test_gradcheck_passes():
    rows = snsteg.gradcheck()
    assert rows and all(r["passed"] for r in rows)


def test_network_parameters_and_prediction():
    net = snsteg.Network({"norm": "sn"}, seed=2)
    assert net.parameter_count() == 226490
    assert not net.norm_stats_ready()
    imgs = np.stack([snsteg.synth_cover(s, 64, 5.0) for s in range(6)]).astype(np.float32)
    net.init_norm_stats(imgs)
    labels, probs = net.predict(imgs[:3])
    assert len(labels) == 3
    assert all(0.0 <= p <= 1.0 for p in probs)
    logits = net.forward(imgs[:3])
    assert logits.shape == (3, 2, 1, 1)
    assert snsteg.Network({"norm": "bn-batch"}).parameter_count() == 227210


def test_experiment_registry():
    assert "fig7" in snsteg.experiment_names()
    assert snsteg.experiment_defaults("fig7")["batch_size"] == "2"
    with pytest.raises(ValueError):
        snsteg.experiment_defaults("nope")


def test_fig2_experiment(tmp_path):
    summary = snsteg.run_experiment("fig2", {"pairs": "10"}, tmp_path)
    assert "ratio" in summary
    assert (tmp_path / "fig2_hist_ws.csv").exists()
