import json

import numpy as np
import pytest

import sfbnet


def test_presets_and_config_errors():
    tiny = sfbnet.preset("tiny")
    assert tiny["model"]["height"] == 32
    paper = sfbnet.preset("paper")
    assert paper["train"]["lr"] == 1e-4
    assert paper["train"]["epochs"] == 1000
    cfg = sfbnet.load_config(overrides=["train.lr=0.01"])
    assert cfg["train"]["lr"] == 0.01
    with pytest.raises(sfbnet.ConfigError):
        sfbnet.load_config(overrides=["train.epochs=0"])
    with pytest.raises(sfbnet.ConfigError):
        sfbnet.preset("huge")


def test_costs():
    full = sfbnet.count_parameters("full")
    assert abs(full - 23e6) <= 0.25 * 23e6
    assert sfbnet.count_parameters("no_sfb") < full
    assert sfbnet.count_flops("no_sfb", "tiny") < sfbnet.count_flops("full", "tiny")


def test_phantom_and_postprocess():
    s = sfbnet.phantom(3, 64, 64)
    assert s["image"].shape == (64, 64)
    assert s["image"].dtype == np.float32
    assert set(np.unique(s["labels"])) == {0, 1, 2, 3}
    np.testing.assert_array_equal(sfbnet.phantom(3, 64, 64)["labels"], s["labels"])

    labels = s["labels"].copy()
    labels[0:2, 0:2] = 1  # detached blob
    kept = sfbnet.largest_component_filter(labels)
    assert kept[0, 0] == 0
    np.testing.assert_array_equal(kept, s["labels"])
    batch = sfbnet.largest_component_filter(np.stack([labels, labels]))
    assert batch.shape == (2, 64, 64)

    assert sfbnet.dice_score(s["labels"], s["labels"], 2) == 1.0
    assert sfbnet.dice_score(np.zeros((4, 4)), np.zeros((4, 4)), 1) == 1.0


def test_train_eval_predict(tmp_path):
    train_dir, val_dir, out = tmp_path / "train", tmp_path / "val", tmp_path / "run"
    sfbnet.write_phantoms(str(train_dir), count=3, seed=0)
    sfbnet.write_phantoms(str(val_dir), count=2, seed=1)
    assert len(sfbnet.load_split(str(val_dir))) == 2
    overrides = [
        "train.epochs=1",
        "train.iterations_per_epoch=2",
        "train.batch=2",
        f"data.train_dir={train_dir}",
        f"data.val_dir={val_dir}",
        f"output_dir={out}",
    ]
    run = sfbnet.train(overrides=overrides)
    assert len(run["losses"]) == 2
    assert all(np.isfinite(run["losses"]))
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert "mean_dice" in json.loads(lines[0])

    report = sfbnet.evaluate("", run["checkpoint"], tta=True, postprocess=True, overrides=overrides)
    assert set(report["per_class_dice"]) == {"RV", "MYO", "LV"}
    assert report["n_images"] == 2
    assert 0.0 <= report["mean_dice"] <= 1.0

    p = sfbnet.Predictor("", run["checkpoint"], overrides)
    images = np.stack([s["image"] for s in sfbnet.load_split(str(val_dir))])
    probs = p.probabilities(images)
    assert probs.shape == (2, 4, 32, 32)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    labels = p.predict(images, postprocess=True)
    assert labels.shape == (2, 32, 32)
    assert labels.dtype == np.int32

    with pytest.raises(sfbnet.ConfigError):
        sfbnet.Predictor("", run["checkpoint"], ["model.base_channels=4"])
    with pytest.raises(sfbnet.DataError):
        sfbnet.Predictor("", str(tmp_path / "missing.sfbn"))
