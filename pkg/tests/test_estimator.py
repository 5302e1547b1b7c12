import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from bleedsense.sim import FlowClass, InfusionScenario, NoiseModel, run_recording, windowize, with_background
from bleedsense.tinynn import estimator as est_mod
from bleedsense.tinynn.estimator import (
    ChannelZScore,
    ModelSchemaError,
    TinyCNNClassifier,
    TrainingDivergedError,
    log_centered,
)
from bleedsense.tinynn.model import ModelParams


def test_get_params_and_clone():
    clf = TinyCNNClassifier(learning_rate=5e-4, input_clip=None)
    params = clf.get_params()
    assert params["learning_rate"] == 5e-4 and params["input_clip"] is None
    assert clone(clf).get_params() == params


def test_predictions_shapes(small_model, small_bundle):
    X, y, _ = small_bundle.arrays("test")
    proba = small_model.predict_proba(X)
    assert proba.shape == (len(X), 6)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(small_model.predict(X), proba.argmax(axis=1))
    emb = small_model.transform(X)
    assert emb.shape == (len(X), 64) and np.all(emb >= 0)
    assert small_model.predict(X[0]).shape == (1,)


def test_history_and_checkpoint(small_model):
    h = small_model.history_
    assert 1 <= len(h) <= 4
    assert {"epoch", "train_loss", "train_acc", "val_loss", "val_acc"} <= set(h[0])
    best = max(h, key=lambda r: (r["val_acc"], -r["val_loss"]))
    assert small_model.best_epoch_ == best["epoch"]


def test_single_epoch_on_ten_windows(small_bundle):
    X, y, _ = small_bundle.arrays("train")
    clf = TinyCNNClassifier(max_epochs=1, random_state=0).fit(X[:10], y[:10], X[10:14], y[10:14])
    assert len(clf.history_) == 1
    assert np.isfinite(clf.history_[0]["train_loss"])


def test_same_seed_same_weights(small_bundle):
    X, y, _ = small_bundle.arrays("train")
    a = TinyCNNClassifier(max_epochs=2, random_state=5).fit(X, y)
    b = TinyCNNClassifier(max_epochs=2, random_state=5).fit(X, y)
    assert a.params_.flatten().tobytes() == b.params_.flatten().tobytes()
    c = TinyCNNClassifier(max_epochs=2, random_state=6).fit(X, y)
    assert not np.array_equal(a.params_.flatten(), c.params_.flatten())


def test_normalizer_fit_on_training_windows_only(small_model, small_bundle):
    X, _, _ = small_bundle.arrays("train", stride=3)
    ref = ChannelZScore().fit(log_centered(X))
    assert np.allclose(small_model.normalizer_.mean_, ref.mean_)
    assert np.allclose(small_model.normalizer_.scale_, ref.scale_)
    assert np.all(small_model.normalizer_.scale_ > 0)


def test_save_load_round_trip(tmp_path, small_model, small_bundle):
    X, _, _ = small_bundle.arrays("test")
    path = tmp_path / "m.json"
    small_model.save(path)
    back = TinyCNNClassifier.load(path)
    assert back.decision_function(X).tobytes() == small_model.decision_function(X).tobytes()
    d = json.loads(path.read_text())
    assert d["schema_version"] == 1 and d["normalizer"]["kind"] == "corpus_zscore"
    assert d["layers"]["fc1_w"]["shape"] == [64, 48]
    assert len(d["config_hash"]) == 64


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(schema_version=99),
    lambda d: d.update(format="other"),
    lambda d: d["layers"]["conv1_w"].update(shape=[4, 1, 3, 4]),
    lambda d: d["normalizer"].update(std=[0.0] * 24),
    lambda d: d.pop("hyperparams"),
])
def test_schema_errors(tmp_path, small_model, mutate):
    d = small_model.to_dict()
    mutate(d)
    with pytest.raises(ModelSchemaError):
        TinyCNNClassifier.from_dict(d)


def test_not_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_bytes(b"\x00\x01")
    with pytest.raises(ModelSchemaError):
        TinyCNNClassifier.load(p)


def test_input_validation(small_model):
    with pytest.raises(ValueError):
        small_model.predict(np.zeros((2, 6, 23)))
    with pytest.raises(ValueError):
        small_model.predict(np.full((1, 6, 24), np.nan))
    with pytest.raises(ValueError):
        TinyCNNClassifier().fit(np.ones((3, 6, 24)), np.array([0, 1, 7]))
    with pytest.raises(ValueError):
        TinyCNNClassifier().fit(np.ones((0, 6, 24)), np.array([], dtype=int))


def test_nonfinite_loss_aborts(monkeypatch, small_bundle):
    X, y, _ = small_bundle.arrays("train")

    def broken(params, x, yb):
        return float("nan"), params

    monkeypatch.setattr(est_mod, "loss_and_grad", broken)
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        TinyCNNClassifier(max_epochs=1).fit(X[:20], y[:20])


@settings(max_examples=60, deadline=None)
@given(
    data=arrays(np.float64, (5, 6, 24), elements=st.floats(-1e3, 1e3)),
    a=arrays(np.float64, 24, elements=st.floats(0.01, 100.0)),
    b=arrays(np.float64, 24, elements=st.floats(-1e3, 1e3)),
)
def test_zscore_affine_invariance(data, a, b):
    # keep every channel away from zero variance so the statistics are well conditioned
    data = data + np.linspace(0, 50, 6)[None, :, None] * np.arange(1, 25)
    corpus, inputs = data[:4], data[4:]
    z1 = ChannelZScore().fit(corpus).transform(inputs)
    z2 = ChannelZScore().fit(a * corpus + b).transform(a * inputs + b)
    assert np.max(np.abs(z1 - z2)) < 1e-9


def test_zscore_constant_channel_and_inverse():
    X = np.random.default_rng(0).normal(size=(10, 6, 24))
    X[..., 3] = 7.0
    z = ChannelZScore().fit(X)
    assert z.scale_[3] == 1.0
    assert np.allclose(z.inverse_transform(z.transform(X)), X)


def test_background_factors_do_not_change_logits(small_model):
    sc = InfusionScenario(FlowClass(4), 0.7)
    quiet = NoiseModel.noiseless()
    factors = np.random.default_rng(2).uniform(0.6, 1.0, 24)
    a = run_recording(sc, noise=quiet)
    b = run_recording(with_background(sc, factors), noise=quiet)
    Xa = np.stack([w.matrix for w in windowize(a)])
    Xb = np.stack([w.matrix for w in windowize(b)])
    assert np.max(np.abs(small_model.normalize(Xa) - small_model.normalize(Xb))) < 1e-9
    la, lb = small_model.decision_function(Xa), small_model.decision_function(Xb)
    assert np.max(np.abs(la - lb)) < 1e-9
    assert np.array_equal(la.argmax(axis=1), lb.argmax(axis=1))


def test_zero_model_gives_zero_embeddings(small_model, small_bundle):
    X, _, _ = small_bundle.arrays("test")
    zero = clone(small_model)
    zero.params_ = ModelParams.zeros()
    zero.normalizer_ = small_model.normalizer_
    assert np.all(zero.transform(X) == 0)
    assert np.all(zero.predict(X) == 0)  # uniform logits, ties to the lowest index
