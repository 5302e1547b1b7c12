"""scikit-learn style wrappers around the tiny CNN."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import layers
from .model import N_CLASSES, Adam, ModelParams, cross_entropy, forward, loss_and_grad

log = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
MODEL_FORMAT = "bleedsense.tinycnn"
N_CHANNELS = 24
WINDOW_SHAPE = (6, 24)
COUNT_FLOOR = 1.0


class ModelSchemaError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


def check_windows(X, name="X") -> np.ndarray:
    """Validate a stack of 6x24 windows; a single window is promoted to a batch."""
    X = np.asarray(X, dtype=float)
    if X.shape == WINDOW_SHAPE:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != WINDOW_SHAPE:
        raise ValueError(f"{name} must have shape (n, 6, 24), got {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def log_counts(X):
    """Natural log of detector counts (floored at one count)."""
    return np.log(np.maximum(np.asarray(X, dtype=float), COUNT_FLOOR))


def log_centered(X):
    """Log counts minus each window's per-channel mean over its time steps.

    Static per-channel gains (LED drift, background medium) become additive
    offsets in log space and cancel; only the in-window trend survives.
    """
    L = log_counts(X)
    return L - L.mean(axis=-2, keepdims=True)


PREPROCESSORS = {
    "log_centered": log_centered,
    "log": log_counts,
    "counts": lambda X: np.asarray(X, dtype=float),
}


class ChannelZScore(TransformerMixin, BaseEstimator):
    """Per-channel z-score over the last axis, statistics pooled over all other axes."""

    def __init__(self, source: str = ""):
        self.source = source

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != N_CHANNELS or X.size == 0:
            raise ValueError(f"expected non-empty data with {N_CHANNELS} channels on the last axis")
        flat = X.reshape(-1, N_CHANNELS)
        self.mean_ = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels on the last axis")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X, dtype=float) * self.scale_ + self.mean_


def _fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


class TinyCNNClassifier(ClassifierMixin, BaseEstimator):
    """Flow-rate classifier on raw 6x24 count windows.

    Windows pass through a fixed preprocessing step, are z-scored per channel
    with statistics from the training windows, then fed to the CNN. Training uses Adam with minibatches
    and keeps the epoch with the best validation accuracy (ties broken by lower
    validation loss); it stops after ``patience`` epochs without improvement.

    Parameters
    ----------
    learning_rate, batch_size, max_epochs, patience
        Optimiser settings.
    random_state : int
        Seeds weight init and batch order; fixed data + seed gives fixed weights.
    preprocess : {"log_centered", "log", "counts"}
        Applied before z-scoring. Log space turns exponential attenuation
        into a linear trend; centering removes each window's static level.
    input_clip : float or None
        Network inputs saturate at +-input_clip (z units). Bounds the input
        range seen by int8 calibration; None disables.
    validation_fraction : float
        Share of training windows held out when ``fit`` gets no validation set.
    """

    def __init__(self, learning_rate=1e-3, batch_size=32, max_epochs=100, patience=10,
                 random_state=0, preprocess="log_centered", input_clip=4.0, validation_fraction=0.15):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state
        self.preprocess = preprocess
        self.input_clip = input_clip
        self.validation_fraction = validation_fraction

    # -- preprocessing -----------------------------------------------------

    def _pre(self, X):
        try:
            fn = PREPROCESSORS[self.preprocess]
        except KeyError:
            raise ValueError(f"unknown preprocess {self.preprocess!r}") from None
        return fn(X)

    def _clip(self, Z):
        return Z if self.input_clip is None else np.clip(Z, -self.input_clip, self.input_clip)

    def normalize(self, X):
        """Raw count windows -> network inputs."""
        check_is_fitted(self, "params_")
        return self._clip(self.normalizer_.transform(self._pre(check_windows(X))))

    # -- training ------------------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_windows(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= N_CLASSES:
            raise ValueError(f"labels must be integers in 0..{N_CLASSES - 1}")
        rng = np.random.default_rng(self.random_state)
        if X_val is None:
            n_val = int(round(self.validation_fraction * len(X)))
            perm = rng.permutation(len(X))
            val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
            X, y, X_val, y_val = X[tr_idx], y[tr_idx], X[val_idx], y[val_idx]
        elif y_val is None:
            raise ValueError("y_val is required with X_val")
        if len(X) == 0:
            raise ValueError("empty training split")

        self.classes_ = np.arange(N_CLASSES)
        self.normalizer_ = ChannelZScore(source=f"train:{_fingerprint(X)[:16]}").fit(self._pre(X))
        Z = self._clip(self.normalizer_.transform(self._pre(X)))
        has_val = X_val is not None and len(X_val) > 0
        if has_val:
            X_val = check_windows(X_val, "X_val")
            y_val = np.asarray(y_val)
            Z_val = self._clip(self.normalizer_.transform(self._pre(X_val)))

        params = ModelParams.init(rng)
        opt = Adam(lr=self.learning_rate)
        best = None
        best_key = None
        stale = 0
        history = []
        for epoch in range(1, self.max_epochs + 1):
            order = rng.permutation(len(Z))
            losses = []
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                loss, grads = loss_and_grad(params, Z[idx], y[idx])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch starting {start}")
                opt.step(params, grads)
                losses.append(loss * len(idx))
            row = {"epoch": epoch, "train_loss": float(np.sum(losses) / len(Z))}
            row["train_acc"] = float(np.mean(self._predict_z(params, Z) == y))
            if has_val:
                logits = forward(params, Z_val)
                row["val_loss"] = cross_entropy(logits, y_val)
                row["val_acc"] = float(np.mean(np.argmax(logits, axis=1) == y_val))
                key = (row["val_acc"], -row["val_loss"])
            else:
                key = (row["train_acc"], -row["train_loss"])
            history.append(row)
            log.info("epoch %d %s", epoch, row)
            if best_key is None or key > best_key:
                best_key, best, stale = key, (epoch, params.copy()), 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.best_epoch_, self.params_ = best
        self.history_ = history
        self.n_features_in_ = N_CHANNELS
        self.config_hash_ = self._config_hash(X, y)
        return self

    def _config_hash(self, X, y) -> str:
        params = json.dumps(self.get_params(), sort_keys=True)
        return hashlib.sha256(params.encode() + _fingerprint(X, y).encode()).hexdigest()

    @staticmethod
    def _predict_z(params, Z, batch=2048):
        out = [np.argmax(forward(params, Z[i:i + batch]), axis=1) for i in range(0, len(Z), batch)]
        return np.concatenate(out)

    # -- inference ---------------------------------------------------------

    def decision_function(self, X):
        """Logits, shape (n, 6)."""
        return forward(self.params_, self.normalize(X))

    def predict_proba(self, X):
        return layers.softmax(self.decision_function(X))

    def predict(self, X):
        # np.argmax returns the first maximum, so ties go to the lower class index
        return np.argmax(self.decision_function(X), axis=1)

    def transform(self, X):
        """Penultimate (fc1, post-ReLU) 64-d embeddings."""
        _, cache = forward(self.params_, self.normalize(X), capture=True)
        return cache["fc1"]

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "format": MODEL_FORMAT,
            "schema_version": MODEL_SCHEMA_VERSION,
            "hyperparams": self.get_params(),
            "normalizer": {
                "kind": "corpus_zscore",
                "source": self.normalizer_.source,
                "mean": self.normalizer_.mean_.tolist(),
                "std": self.normalizer_.scale_.tolist(),
            },
            "layers": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params_.as_dict().items()},
            "best_epoch": self.best_epoch_,
            "config_hash": self.config_hash_,
            "history": self.history_,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "TinyCNNClassifier":
        if d.get("format") != MODEL_FORMAT:
            raise ModelSchemaError(f"not a tiny-CNN model file (format={d.get('format')!r})")
        if d.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise ModelSchemaError(f"unsupported model schema_version {d.get('schema_version')!r}")
        try:
            clf = cls(**d["hyperparams"])
            arrays = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["layers"].items()}
            clf.params_ = ModelParams(**arrays)
            norm = ChannelZScore(source=d["normalizer"]["source"])
            norm.mean_ = np.array(d["normalizer"]["mean"], dtype=float)
            norm.scale_ = np.array(d["normalizer"]["std"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelSchemaError(f"malformed model file: {exc}") from exc
        if norm.mean_.shape != (N_CHANNELS,) or norm.scale_.shape != (N_CHANNELS,) or np.any(norm.scale_ <= 0):
            raise ModelSchemaError("normalizer must hold 24 means and 24 positive std values")
        clf.normalizer_ = norm
        clf.classes_ = np.arange(N_CLASSES)
        clf.best_epoch_ = d.get("best_epoch")
        clf.config_hash_ = d.get("config_hash", "")
        clf.history_ = d.get("history", [])
        clf.n_features_in_ = N_CHANNELS
        return clf

    @classmethod
    def load(cls, path: str | Path) -> "TinyCNNClassifier":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ModelSchemaError(f"{path}: not a JSON model file ({exc})") from exc
        return cls.from_dict(d)
