import math

import numpy as np
import pytest

import xmsleep


@pytest.fixture(scope="module")
def dataset():
    return xmsleep.generate_synthetic(2, 63, 3)


def quick(**extra):
    cfg = {"steps": 2, "batch_size": 2, "seed": 17, "dropout": False}
    cfg.update(extra)
    return cfg


def test_synthetic_is_deterministic(dataset):
    again = xmsleep.generate_synthetic(2, 63, 3)
    assert dataset == again
    assert len(dataset) == 126
    raw = dataset.raw()
    assert raw.shape == (126, xmsleep.EPOCH_SAMPLES)
    labels = dataset.labels()
    assert set(np.unique(labels)) <= set(range(5))


def test_dataset_roundtrip(tmp_path, dataset):
    path = tmp_path / "ds.slpd"
    xmsleep.write_dataset(dataset, str(path))
    assert xmsleep.read_dataset(str(path)) == dataset
    assert xmsleep.decode_dataset(xmsleep.encode_dataset(dataset)) == dataset
    with pytest.raises(xmsleep.FormatError):
        xmsleep.decode_dataset(b"garbage")


def test_spectrogram_shape_and_peak():
    t = np.arange(xmsleep.EPOCH_SAMPLES) / 100.0
    tone = np.sin(2 * np.pi * 10.0 * t).astype(np.float32)
    mags = xmsleep.frame_magnitudes(tone)
    assert mags.shape == (xmsleep.FRAMES, xmsleep.BINS)
    assert int(np.argmax(mags[0])) == round(10.0 * 256 / 100)
    spec = xmsleep.stft_spectrogram(tone)
    assert spec.shape == (xmsleep.FRAMES, xmsleep.BINS)
    assert abs(float(spec.mean())) < 1e-4
    assert np.all(xmsleep.stft_spectrogram(np.zeros(3000, np.float32)) == 0)
    with pytest.raises(xmsleep.DimensionError):
        xmsleep.stft_spectrogram(np.zeros(10, np.float32))


def test_info_nce_identical_pairs():
    batch = 8
    z = np.zeros((batch, 1, 4))
    assert xmsleep.info_nce_loss(z, z, 0.1) == pytest.approx(math.log(batch), abs=1e-9)
    eye = np.eye(batch)[:, None, :]
    expected = -1 / 0.1 + math.log(math.exp(1 / 0.1) + (batch - 1))
    assert xmsleep.info_nce_loss(eye, eye, 0.1) == pytest.approx(expected, abs=1e-9)


def test_sequence_loss_uniform_logits():
    logits = np.zeros((1, 3, 5))
    loss = xmsleep.sequence_loss(logits, logits, logits, [0, 1, 2], (1.0, 0.1, 0.1))
    assert loss == pytest.approx(1.2 * math.log(5), abs=1e-9)


def test_masks():
    assert xmsleep.mask_count(21, 0.5) == 11
    sg, sp = xmsleep.sample_masks(21, 0.5, "independent", 4)
    assert sg.sum() == 11 and sp.sum() == 11
    sg, sp = xmsleep.sample_masks(20, 0.5, "complementary", 4)
    assert not np.any(sg & sp)


def test_metrics():
    m = xmsleep.compute_metrics([0, 1, 1, 0], [0, 1, 0, 0])
    assert m["accuracy"] == pytest.approx(0.75)
    with pytest.raises(xmsleep.EvaluationError):
        xmsleep.compute_metrics([], [])


def test_stage_chain(tmp_path, dataset):
    s0, summary = xmsleep.stage0_train(dataset, quick())
    assert math.isfinite(summary["final_loss"])
    with pytest.raises(xmsleep.StateError):
        xmsleep.pretrain_run(dataset, quick())
    pt, log = xmsleep.pretrain_run(dataset, quick(), s0)
    assert log["steps_run"] == 2
    ft, _ = xmsleep.finetune_run(dataset, quick(), pt)
    prefixes = ["cnn.", "spec.", "pool_sg.", "pool_sp."]
    assert ft.hash(prefixes) == pt.hash(prefixes)
    metrics = xmsleep.evaluate(dataset, ft)
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert len(metrics["per_class_f1"]) == 5

    xmsleep.save_model(tmp_path / "ft.ckpt", ft, "finetune")
    back = xmsleep.load_model(tmp_path / "ft.ckpt")
    assert back.hash() == ft.hash()
    assert xmsleep.evaluate(dataset, back) == metrics
    assert xmsleep.model_config(back)["d_model"] > 0


def test_bad_config_is_an_input_error(dataset):
    with pytest.raises(xmsleep.InputError):
        xmsleep.stage0_train(dataset, {"batch_size": 0})


def test_gradcheck_suite_passes():
    results = xmsleep.run_gradcheck_suite(7)
    assert len(results) > 30
    assert all(r["passed"] for r in results)
