"""Smoke tests for the pybind11 surface of the toolkit."""

import json
import math

import pytest

import _deca as deca


def test_kl_values():
    assert deca.kl_bernoulli(0.3, 0.3) == pytest.approx(0.0, abs=1e-14)
    assert deca.kl_bernoulli(0.9, 0.1) == pytest.approx(1.7577796618689755, rel=1e-12)
    assert deca.kl_categorical([0.25] * 4, [0.25] * 4) == pytest.approx(0.0, abs=1e-14)
    # the categorical form collapses to the Bernoulli form at two classes
    assert deca.kl_categorical([0.7, 0.3], [0.4, 0.6]) == pytest.approx(
        deca.kl_bernoulli(0.3, 0.6), abs=1e-12
    )


def test_planted_generator_determinism_and_truth():
    a = deca.gen_planted_implicit(20, 15, 4, 0.2, 0.0, 7)
    b = deca.gen_planted_implicit(20, 15, 4, 0.2, 0.0, 7)
    assert a.to_json() == b.to_json()
    assert a.num_users == 20 and a.num_items == 15
    flipped = sum(
        1 for it in a.interactions if not a.true_positive(it.user, it.item)
    )
    assert 0 < flipped < len(a.interactions)


def test_blob_noise_is_exact():
    data = deca.gen_multiclass_blobs(4, 100, 2, 1.0, 0.4, 5)
    assert len(data) == 400
    flips = sum(1 for n, t in zip(data.noisy_labels, data.true_labels) if n != t)
    assert flips == 160


def test_model_forward_and_checkpoint_roundtrip():
    spec = json.dumps(
        {"kind": "mf", "num_users": 6, "num_items": 5, "latent_dim": 3, "seed": 11}
    )
    model = deca.build_model(spec)
    p = model.forward_pair(2, 3)[0]
    assert 0.0 < p < 1.0
    restored = deca.model_from_checkpoint(model.checkpoint_json())
    assert restored.params() == model.params()
    assert restored.forward_pair(2, 3)[0] == p


def test_gradients_match_finite_differences():
    spec = json.dumps(
        {"kind": "gmf", "num_users": 5, "num_items": 4, "latent_dim": 3,
         "init_scale": 0.4, "seed": 3}
    )
    model = deca.build_model(spec)
    passed, max_err = deca.grad_check_pairs(model, [(u, i) for u in range(5) for i in range(4)])
    assert passed and max_err < 1e-3


def test_classifier_outputs_form_a_simplex():
    spec = json.dumps(
        {"kind": "mlp-classifier", "input_dim": 2, "hidden": [8], "num_classes": 3,
         "seed": 2}
    )
    model = deca.build_model(spec)
    out = model.forward_features([0.3, -0.8])
    assert len(out) == 3
    assert math.isclose(sum(out), 1.0, abs_tol=1e-9)
    assert min(out) >= 0.0


def test_end_to_end_experiment(tmp_path):
    config = {
        "task": "multi-class",
        "trainer": "deca_p",
        "dataset": {"generator": "blobs", "num_classes": 3, "per_class": 40, "dim": 2,
                    "spread": 0.6, "noise_ratio": 0.3},
        "model": {"hidden": [8]},
        "deca": {"c1": 1.0, "c2": 1.0, "learn_rate": 0.05, "epochs": 4,
                 "batch_size": 32, "patience": 0},
        "seeds": [1, 2],
    }
    paths = deca.run_experiment(json.dumps(config), str(tmp_path))
    assert len(paths) == 2
    report = json.loads(open(paths[0]).read())
    assert report["trainer"] == "deca_p"
    assert "accuracy" in report["final_metrics"]
    assert report["schema_version"].startswith("1.")


def test_invalid_config_raises_config_error():
    with pytest.raises(deca.ConfigError):
        deca.run_experiment(json.dumps({"task": "nope"}), "/tmp/deca_nope")


def test_package_reexports_the_extension():
    import deca_toolkit

    assert deca_toolkit.kl_bernoulli(0.4, 0.4) == pytest.approx(0.0, abs=1e-14)
    assert deca_toolkit.Model is deca.Model


def test_pair_inputs_are_range_checked():
    spec = json.dumps(
        {"kind": "mf", "num_users": 4, "num_items": 3, "latent_dim": 2, "seed": 1}
    )
    model = deca.build_model(spec)
    with pytest.raises(deca.DataError):
        model.forward_pair(9, 0)
    with pytest.raises(deca.DataError):
        model.forward_pair(0, -1)
