import math

import numpy as np
import pytest

import nrdfer


def test_class_names():
    assert len(nrdfer.CLASS_NAMES) == 7
    assert nrdfer.CLASS_NAMES[nrdfer.NEUTRAL] == "neutral"


def test_plan_snippets():
    assert nrdfer.plan_snippets(8, 3, 2) == [(0, 3), (2, 3), (4, 3)]
    with pytest.raises(ValueError):
        nrdfer.plan_snippets(4, 5, 1)


def test_filter_excludes_neutral_when_a_snippet_is_confident():
    seq = [0.0, 0.0, 3.0, 0.0, 1.0, 0.0, 0.0]
    confident = [0.0, 0.0, -5.0, 0.0, 6.0, 0.0, 0.0]
    d = nrdfer.apply_filter(seq, [confident], 0.7, 0.05)
    assert d["triggered"] and d["trigger_index"] == 0
    assert d["sequence_class"] == nrdfer.NEUTRAL
    assert d["predicted"] == 4
    assert d["probabilities"][nrdfer.NEUTRAL] == 0.0
    untouched = nrdfer.apply_filter(seq, [])
    assert not untouched["triggered"] and untouched["predicted"] == nrdfer.NEUTRAL


def test_metrics():
    cm = np.zeros((7, 7), dtype=np.uint64)
    cm[0, 0], cm[0, 1], cm[1, 1] = 3, 1, 2
    assert nrdfer.war(cm) == pytest.approx(5 / 6)
    assert nrdfer.uar(cm) == pytest.approx((0.75 + 1.0) / 2)


def test_attention_rollout_single_layer():
    layer = np.array([[[0.5, 0.3, 0.2], [1, 0, 0], [0, 0, 1]]])
    weights, degenerate = nrdfer.attention_rollout([layer])
    assert not degenerate
    assert weights == pytest.approx([0.6, 0.4])


def test_generate_is_deterministic():
    spec = {"image_size": 16, "min_frames": 6, "max_frames": 8, "n1_rate": 0.25, "seed": 3}
    a = nrdfer.generate(spec, 7)
    b = nrdfer.generate(spec, 7)
    assert [s["label"] for s in a] == list(range(7))
    assert a[0]["frames"].shape[1:] == (3, 16, 16)
    assert len(a[0]["mask"]) == a[0]["frames"].shape[0]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x["frames"], y["frames"])


def test_model_forward_and_checkpoint(tmp_path):
    config = nrdfer.default_config("gradient_check")
    model = nrdfer.Model(config)
    assert model.parameter_count <= 5000
    rng = np.random.default_rng(0)
    frames = rng.random((2, 4, 3, 4, 4), dtype=np.float32)
    out = model.forward(frames)
    assert out["logits"].shape == (2, 7)
    assert len(out["attention"]) == config["temporal_layers"]
    path = tmp_path / "model.nrdf"
    model.save(path)
    again = nrdfer.Model.load(path).forward(frames)
    np.testing.assert_array_equal(out["logits"], again["logits"])


def test_learned_token_is_input_independent():
    model = nrdfer.Model(nrdfer.default_config("gradient_check"))
    rng = np.random.default_rng(1)
    a = rng.random((1, 4, 3, 4, 4), dtype=np.float32)
    b = rng.random((1, 4, 3, 4, 4), dtype=np.float32)
    assert not np.array_equal(model.forward(a)["class_token"], model.forward(b)["class_token"])
    model.set_use_dct(False)
    np.testing.assert_array_equal(model.forward(a)["class_token"], model.forward(b)["class_token"])


def test_errors_surface_as_exceptions(tmp_path):
    with pytest.raises(nrdfer.CheckpointError):
        nrdfer.Model.load(tmp_path / "missing.nrdf")
    model = nrdfer.Model(nrdfer.default_config("gradient_check"))
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 4, 3, 5, 5), dtype=np.float32))
    assert math.isfinite(model.forward(np.zeros((1, 4, 3, 4, 4), dtype=np.float32))["logits"].sum())
