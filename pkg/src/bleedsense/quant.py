"""Post-training int8 quantization and an integer-only inference path.

Scheme: per-tensor affine. Weights are symmetric int8 (zero point 0),
activations asymmetric int8 calibrated by min/max over a calibration set,
biases int32 with scale ``input_scale * weight_scale``. Each layer output is
requantized with a fixed-point multiplier ``m * 2**-shift`` (``m`` in
[2**30, 2**31)) and round-half-away-from-zero, so any implementation that
follows the same integer recipe produces identical bytes.

Container layout (all little-endian)::

    0   4s   magic b"BSQ8"
    4   u16  schema_version
    6   u8   preprocess code (0 counts, 1 log, 2 log_centered)
    7   u8   number of layers (4)
    8   f64  input scale
    16  i8   input zero point, then 3 zero bytes
    20  f32  input saturation in z units (0 = none)
    24  24 x f32 normalizer mean, 24 x f32 normalizer std
    216 layers, each:
          u8 kind (0 conv3x3, 1 dense), u8 relu, u8 ndim, u8 0
          4 x u16 weight dims (unused dims 0)
          f64 weight scale, f64 output scale, i8 output zero point, 3 zero bytes
          i32 multiplier, i32 shift, u32 n_weights, u32 n_bias
          n_weights x i8 weights, n_bias x i32 bias, zero padding to 4 bytes
    end u32  CRC-32 (zlib) of everything before it
"""

from __future__ import annotations

import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .tinynn import layers
from .tinynn.estimator import PREPROCESSORS, ChannelZScore, TinyCNNClassifier, check_windows
from .tinynn.model import N_CLASSES, SHAPE_CHAIN, ModelParams, as_input_batch, forward

QMIN, QMAX = -128, 127
SCALE_FLOOR = 1e-6
QMODEL_MAGIC = b"BSQ8"
QMODEL_SCHEMA_VERSION = 1
PREPROCESS_CODES = {"counts": 0, "log": 1, "log_centered": 2}
LAYER_NAMES = ("conv1", "conv2", "fc1", "fc2")
CALIBRATION_MARGIN = 1.5


class QuantizationWarning(UserWarning):
    pass


class QModelFormatError(ValueError):
    pass


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class QParams:
    scale: float
    zero_point: int

    def quantize(self, x) -> np.ndarray:
        q = np.round(np.asarray(x, dtype=float) / self.scale) + self.zero_point
        return np.clip(q, QMIN, QMAX).astype(np.int8)

    def dequantize(self, q) -> np.ndarray:
        return (np.asarray(q, dtype=np.int64) - self.zero_point) * self.scale


def symmetric_qparams(w, name="tensor") -> QParams:
    amax = float(np.max(np.abs(w))) if np.size(w) else 0.0
    if amax == 0.0:
        warnings.warn(f"{name}: all-zero tensor, scale floored", QuantizationWarning, stacklevel=2)
        return QParams(1.0, 0)
    return QParams(max(amax / QMAX, SCALE_FLOOR), 0)


def asymmetric_qparams(lo: float, hi: float, name="tensor") -> QParams:
    lo, hi = min(lo, 0.0), max(hi, 0.0)  # real zero must be representable
    scale = (hi - lo) / (QMAX - QMIN)
    if scale < SCALE_FLOOR:
        warnings.warn(f"{name}: degenerate range [{lo}, {hi}], scale floored", QuantizationWarning, stacklevel=2)
        scale = SCALE_FLOOR
    zp = int(np.clip(round(QMIN - lo / scale), QMIN, QMAX))
    return QParams(scale, zp)


def quantize_multiplier(real: float) -> tuple[int, int]:
    """Express ``real > 0`` as ``m * 2**-shift`` with ``m`` in [2**30, 2**31)."""
    if not real > 0:
        raise ValueError("multiplier must be positive")
    frac, exp = math.frexp(real)  # real = frac * 2**exp, frac in [0.5, 1)
    m = int(round(frac * (1 << 31)))
    if m == 1 << 31:
        m //= 2
        exp += 1
    shift = 31 - exp
    if not 0 < shift < 63:
        raise ValueError(f"multiplier {real} out of representable range")
    return m, shift


def rounding_rshift(x: np.ndarray, shift: int) -> np.ndarray:
    """``x / 2**shift`` rounded half away from zero, on int64."""
    x = np.asarray(x, dtype=np.int64)
    mag = (np.abs(x) + (np.int64(1) << (shift - 1))) >> shift
    return np.where(x < 0, -mag, mag)


def requantize(acc: np.ndarray, multiplier: int, shift: int) -> np.ndarray:
    return rounding_rshift(acc.astype(np.int64) * np.int64(multiplier), shift)


@dataclass
class QLayer:
    name: str
    kind: str  # "conv" or "dense"
    relu: bool
    weight: np.ndarray  # int8
    weight_scale: float
    bias: np.ndarray  # int32
    out: QParams
    multiplier: int
    shift: int


@dataclass
class QuantizedModel:
    input: QParams
    layers: list[QLayer]
    normalizer_mean: np.ndarray
    normalizer_std: np.ndarray
    preprocess: str = "log_centered"
    input_clip: float | None = None
    report: dict = field(default_factory=dict)

    def layer(self, name: str) -> QLayer:
        for lay in self.layers:
            if lay.name == name:
                return lay
        raise KeyError(name)

    def normalize(self, X) -> np.ndarray:
        """Raw count windows -> float network inputs (same as the float model)."""
        X = check_windows(X)
        Z = (PREPROCESSORS[self.preprocess](X) - self.normalizer_mean) / self.normalizer_std
        return Z if self.input_clip is None else np.clip(Z, -self.input_clip, self.input_clip)

    def quantize_input(self, Z) -> np.ndarray:
        return self.input.quantize(as_input_batch(Z))

    def input_saturated(self, Z) -> np.ndarray:
        """Per window: does any network input fall outside the int8 input range?"""
        Z = as_input_batch(Z).reshape(len(as_input_batch(Z)), -1)
        lo = (QMIN - self.input.zero_point - 0.5) * self.input.scale
        hi = (QMAX - self.input.zero_point + 0.5) * self.input.scale
        return ((Z < lo) | (Z > hi)).any(axis=1)

    def to_bytes(self) -> bytes:
        return dump_qmodel(self)


# --------------------------------------------------------------------------- quantization

def _accumulator_bound(lay: QLayer) -> int:
    w = lay.weight.astype(np.int64).reshape(len(lay.weight), -1)
    return int(np.max(np.abs(w).sum(axis=1) * (QMAX - QMIN) + np.abs(lay.bias.astype(np.int64))))


def _snr_db(ref, approx) -> float:
    ref = np.asarray(ref, dtype=float)
    err = np.sum((ref - approx) ** 2)
    sig = np.sum(ref ** 2)
    if err == 0:
        return math.inf
    if sig == 0:
        return -math.inf
    return float(10 * np.log10(sig / err))


def quantize(model, X_calib, *, normalized: bool = False) -> QuantizedModel:
    """Quantize a fitted float model using ``X_calib`` to observe activation ranges.

    ``model`` is a fitted :class:`TinyCNNClassifier`. ``X_calib`` holds raw
    count windows, or network inputs when ``normalized`` is true.
    """
    check_is_fitted(model, "params_")
    params: ModelParams = model.params_
    Z = as_input_batch(X_calib if normalized else model.normalize(X_calib))
    if len(Z) == 0:
        raise ValueError("calibration set is empty")
    logits, cache = forward(params, Z, capture=True)

    in_qp = asymmetric_qparams(float(Z.min()), float(Z.max()), "input")
    specs = [
        ("conv1", "conv", True, params.conv1_w, params.conv1_b, cache["relu1"]),
        ("conv2", "conv", True, params.conv2_w, params.conv2_b, cache["relu2"]),
        ("fc1", "dense", True, params.fc1_w, params.fc1_b, cache["fc1"]),
        ("fc2", "dense", False, params.fc2_w, params.fc2_b, logits),
    ]
    qlayers = []
    report = {"calibration_windows": int(len(Z)), "calibration": "minmax", "snr_db": {}, "ranges": {}}
    report["ranges"]["input"] = [float(Z.min()), float(Z.max())]
    prev = in_qp
    for name, kind, relu, w, b, act in specs:
        wq_params = symmetric_qparams(w, f"{name}.weight")
        wq = wq_params.quantize(w)
        bias_scale = prev.scale * wq_params.scale
        bq = np.round(b / bias_scale).astype(np.int64)
        if np.any(np.abs(bq) > 2**31 - 1):
            raise OverflowError(f"{name}: bias does not fit int32")
        out_qp = asymmetric_qparams(float(act.min()), float(act.max()), f"{name}.output")
        m, shift = quantize_multiplier(bias_scale / out_qp.scale)
        lay = QLayer(name, kind, relu, wq, wq_params.scale, bq.astype(np.int32), out_qp, m, shift)
        if _accumulator_bound(lay) >= 2**31:
            raise OverflowError(f"{name}: int32 accumulator could overflow")
        qlayers.append(lay)
        report["snr_db"][f"{name}.weight"] = _snr_db(w, wq_params.dequantize(wq))
        report["ranges"][name] = [float(act.min()), float(act.max())]
        prev = out_qp

    qm = QuantizedModel(in_qp, qlayers, model.normalizer_.mean_.astype(np.float32).astype(float),
                        model.normalizer_.scale_.astype(np.float32).astype(float), model.preprocess,
                        None if model.input_clip is None else _f32(model.input_clip), report)

    q_logits, trace = qforward(qm, qm.quantize_input(Z))
    for name, act in (("conv1", cache["relu1"]), ("conv2", cache["relu2"]), ("fc1", cache["fc1"])):
        report["snr_db"][f"{name}.activation"] = _snr_db(act, qm.layer(name).out.dequantize(trace[name]))
    report["snr_db"]["logits"] = _snr_db(logits, q_logits)
    report["calibration_max_logit_error"] = float(np.max(np.abs(q_logits - logits)))
    report["calibration_saturated_windows"] = int((trace["saturated"] | qm.input_saturated(Z)).sum())
    report["worst_case_logit_error_bound"] = worst_case_logit_error_bound(qm, params)
    report["logit_error_bound"] = calibrated_logit_error_bound(report["calibration_max_logit_error"], qm)
    report["calibration_top1_agreement"] = float(np.mean(np.argmax(q_logits, 1) == np.argmax(logits, 1)))
    return qm


def _real_span(qp: QParams) -> float:
    """Largest magnitude representable by an int8 tensor with these parameters."""
    return max(abs(QMIN - qp.zero_point), abs(QMAX - qp.zero_point)) * qp.scale


def calibrated_logit_error_bound(calibration_error: float, qm: QuantizedModel,
                                 margin: float = CALIBRATION_MARGIN) -> float:
    """Empirical bound: the calibration-set maximum with a safety margin plus one output step.

    Meant for windows drawn from the calibration distribution. Windows that
    push an activation past its calibrated range can exceed it.
    """
    return float(margin * calibration_error + qm.layers[-1].out.scale)


def worst_case_logit_error_bound(qm: QuantizedModel, params: ModelParams) -> float:
    """Worst-case |float logit - int8 logit| for windows that saturate nothing.

    Propagates an infinity-norm error bound layer by layer: input rounding,
    weight and bias rounding, the fixed-point multiplier and output rounding.
    ReLU and max pooling are 1-Lipschitz and do not grow the error. The bound
    holds for windows with no input outside the input range and no clipped
    activation (see ``input_saturated`` and the ``qforward`` trace).
    """
    floats = params.as_dict()
    err = qm.input.scale / 2
    span = _real_span(qm.input)
    prev = qm.input
    for lay in qm.layers:
        w = floats[f"{lay.name}_w"].reshape(len(lay.weight), -1)
        wq = lay.weight.astype(float).reshape(len(lay.weight), -1) * lay.weight_scale
        propagated = np.abs(wq).sum(axis=1) * err + np.abs(w - wq).sum(axis=1) * (span + err)
        out_span = _real_span(lay.out)
        err = (float(propagated.max()) + prev.scale * lay.weight_scale / 2
               + lay.out.scale / 2 + (out_span + lay.out.scale) * 2.0 ** -31)
        span, prev = out_span, lay.out
    return err


# --------------------------------------------------------------------------- integer inference

def _int_conv3x3(xq: np.ndarray, zp: int, w: np.ndarray) -> np.ndarray:
    """Integer 3x3 same convolution of (N,C,H,W) int8 input; returns int64 accumulators (N,O,H,W)."""
    x = xq.astype(np.int64) - zp  # padding with 0 here is padding with real zero
    cols = layers.im2col3x3(x)
    acc = cols @ w.astype(np.int64).reshape(len(w), -1).T
    n, _, h, wd = x.shape
    return acc.reshape(n, h, wd, -1).transpose(0, 3, 1, 2)


def _maxpool_int(q: np.ndarray) -> np.ndarray:
    n, c, h, w = q.shape
    h2, w2 = h // 2, w // 2
    return q[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).max(axis=(3, 5))


def _finish(acc: np.ndarray, lay: QLayer) -> tuple[np.ndarray, np.ndarray]:
    """Requantize to int8 (ReLU fused as a clamp at the zero point); also flag saturation per window."""
    if np.any(np.abs(acc) >= 2**31):
        raise OverflowError(f"{lay.name}: accumulator overflow")
    y = requantize(acc, lay.multiplier, lay.shift) + lay.out.zero_point
    # below the zero point a fused ReLU clamps anyway, so only the top rail saturates there
    over = (y > QMAX) if lay.relu else (y > QMAX) | (y < QMIN)
    clipped = over.reshape(len(y), -1).any(axis=1)
    lo = lay.out.zero_point if lay.relu else QMIN
    return np.clip(y, lo, QMAX).astype(np.int8), clipped


def qforward(qm: QuantizedModel, xq) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Integer-only inference on quantized inputs (N,1,6,24) int8.

    Returns dequantized logits (N, 6) and the int8 activation trace. The
    trace's ``saturated`` entry flags windows with an activation clipped to
    the int8 range (input clipping is checked by ``QuantizedModel.input_saturated``).
    """
    xq = np.asarray(xq)
    if xq.dtype != np.int8:
        raise TypeError("qforward expects int8 input; use QuantizedModel.quantize_input")
    if xq.ndim == 3:
        xq = xq[:, None]
    if xq.ndim != 4 or xq.shape[1:] != (1, 6, 24):
        raise ValueError(f"expected (N,1,6,24) int8 input, got {xq.shape}")
    trace = {"input": xq}
    saturated = np.zeros(len(xq), dtype=bool)
    c1, c2, f1, f2 = (qm.layer(n) for n in LAYER_NAMES)

    acc = _int_conv3x3(xq, qm.input.zero_point, c1.weight) + c1.bias.astype(np.int64)[None, :, None, None]
    trace["conv1"], sat = _finish(acc, c1)
    saturated |= sat
    trace["pool1"] = _maxpool_int(trace["conv1"])
    acc = _int_conv3x3(trace["pool1"], c1.out.zero_point, c2.weight) + c2.bias.astype(np.int64)[None, :, None, None]
    trace["conv2"], sat = _finish(acc, c2)
    saturated |= sat
    trace["pool2"] = _maxpool_int(trace["conv2"])
    flat = trace["pool2"].reshape(len(xq), -1)
    if flat.shape[1:] != SHAPE_CHAIN["flat"]:
        raise AssertionError("flattened width mismatch")
    acc = (flat.astype(np.int64) - c2.out.zero_point) @ f1.weight.astype(np.int64).T + f1.bias.astype(np.int64)
    trace["fc1"], sat = _finish(acc, f1)
    saturated |= sat
    acc = (trace["fc1"].astype(np.int64) - f1.out.zero_point) @ f2.weight.astype(np.int64).T + f2.bias.astype(np.int64)
    trace["fc2"], sat = _finish(acc, f2)
    trace["saturated"] = saturated | sat
    return f2.out.dequantize(trace["fc2"]), trace


class QuantizedTinyCNN(ClassifierMixin, BaseEstimator):
    """int8 counterpart of a fitted :class:`TinyCNNClassifier`; ``fit`` calibrates."""

    def __init__(self, estimator=None):
        self.estimator = estimator

    def fit(self, X, y=None):
        if self.estimator is None:
            raise ValueError("QuantizedTinyCNN needs a fitted float estimator")
        self.qmodel_ = quantize(self.estimator, X)
        self.classes_ = np.arange(N_CLASSES)
        return self

    @classmethod
    def from_qmodel(cls, qm: QuantizedModel) -> "QuantizedTinyCNN":
        obj = cls()
        obj.qmodel_ = qm
        obj.classes_ = np.arange(N_CLASSES)
        return obj

    def decision_function(self, X):
        check_is_fitted(self, "qmodel_")
        qm = self.qmodel_
        return qforward(qm, qm.quantize_input(qm.normalize(X)))[0]

    def predict_proba(self, X):
        return layers.softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


# --------------------------------------------------------------------------- container

_HEADER = struct.Struct("<4sHBBdb3xf")
_LAYER = struct.Struct("<BBBx4HddbxxxiiII")


def dump_qmodel(qm: QuantizedModel) -> bytes:
    out = bytearray()
    out += _HEADER.pack(QMODEL_MAGIC, QMODEL_SCHEMA_VERSION, PREPROCESS_CODES[qm.preprocess],
                        len(qm.layers), qm.input.scale, qm.input.zero_point, qm.input_clip or 0.0)
    out += np.asarray(qm.normalizer_mean, dtype="<f4").tobytes()
    out += np.asarray(qm.normalizer_std, dtype="<f4").tobytes()
    for lay in qm.layers:
        dims = list(lay.weight.shape) + [0] * (4 - lay.weight.ndim)
        out += _LAYER.pack(0 if lay.kind == "conv" else 1, int(lay.relu), lay.weight.ndim, *dims,
                           lay.weight_scale, lay.out.scale, lay.out.zero_point,
                           lay.multiplier, lay.shift, lay.weight.size, lay.bias.size)
        out += lay.weight.astype(np.int8).tobytes()
        out += lay.bias.astype("<i4").tobytes()
        out += b"\0" * (-len(out) % 4)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def load_qmodel_bytes(buf: bytes) -> QuantizedModel:
    if len(buf) < _HEADER.size + 4 or buf[:4] != QMODEL_MAGIC:
        raise QModelFormatError("not a quantized model container")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise QModelFormatError("container CRC mismatch")
    magic, version, pre, n_layers, in_scale, in_zp, clip = _HEADER.unpack_from(buf, 0)
    if version != QMODEL_SCHEMA_VERSION:
        raise QModelFormatError(f"unsupported schema_version {version}")
    codes = {v: k for k, v in PREPROCESS_CODES.items()}
    if pre not in codes:
        raise QModelFormatError(f"unknown preprocess code {pre}")
    if n_layers != len(LAYER_NAMES):
        raise QModelFormatError(f"expected {len(LAYER_NAMES)} layers, header says {n_layers}")
    try:
        pos = _HEADER.size
        mean = np.frombuffer(buf, "<f4", 24, pos).astype(float)
        pos += 96
        std = np.frombuffer(buf, "<f4", 24, pos).astype(float)
        pos += 96
        qlayers = []
        for name in LAYER_NAMES[:n_layers]:
            kind, relu, ndim, d0, d1, d2, d3, ws, os_, ozp, m, shift, nw, nb = _LAYER.unpack_from(buf, pos)
            pos += _LAYER.size
            shape = (d0, d1, d2, d3)[:ndim]
            w = np.frombuffer(buf, np.int8, nw, pos).reshape(shape).copy()
            pos += nw
            b = np.frombuffer(buf, "<i4", nb, pos).astype(np.int32)
            pos += 4 * nb
            pos += -pos % 4
            qlayers.append(QLayer(name, "conv" if kind == 0 else "dense", bool(relu), w, ws, b,
                                  QParams(os_, ozp), m, shift))
    except (struct.error, ValueError) as exc:
        raise QModelFormatError(f"corrupt layer table: {exc}") from exc
    if pos != len(buf) - 4:
        raise QModelFormatError("trailing or missing bytes in container")
    return QuantizedModel(QParams(in_scale, in_zp), qlayers, mean, std, codes[pre], clip or None)


def save_qmodel(qm: QuantizedModel, path: str | Path) -> None:
    Path(path).write_bytes(dump_qmodel(qm))


def load_qmodel(path: str | Path) -> QuantizedModel:
    return load_qmodel_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------- footprint

@dataclass(frozen=True)
class FootprintReport:
    param_count: int
    float_weight_bytes: int
    int8_weight_bytes: int
    int8_payload_bytes: int  # int8 weights + int32 biases as actually stored
    peak_activation_elements: int
    peak_activation_bytes_float: int
    peak_activation_bytes_int8: int
    macs: int
    layer_macs: dict


def footprint_report(model) -> FootprintReport:
    """Exact counts from layer shapes of a float or quantized model."""
    if isinstance(model, QuantizedModel):
        shapes = {lay.name: (lay.weight.shape, lay.bias.shape) for lay in model.layers}
        payload = sum(lay.weight.size + 4 * lay.bias.size for lay in model.layers)
    else:
        params = model.params_ if isinstance(model, TinyCNNClassifier) else model
        d = params.as_dict()
        shapes = {n: (d[f"{n}_w"].shape, d[f"{n}_b"].shape) for n in LAYER_NAMES}
        payload = sum(int(np.prod(w)) + 4 * int(np.prod(b)) for w, b in shapes.values())
    n_params = sum(int(np.prod(w)) + int(np.prod(b)) for w, b in shapes.values())
    out_hw = {"conv1": SHAPE_CHAIN["conv1"][1:], "conv2": SHAPE_CHAIN["conv2"][1:]}
    layer_macs = {}
    for name, (w, _) in shapes.items():
        if name in out_hw:
            h, wd = out_hw[name]
            layer_macs[name] = h * wd * int(np.prod(w))
        else:
            layer_macs[name] = int(np.prod(w))
    # live tensors per stage: input + output of each layer
    stages = [
        (1, 6, 24), SHAPE_CHAIN["conv1"], SHAPE_CHAIN["pool1"], SHAPE_CHAIN["conv2"],
        SHAPE_CHAIN["pool2"], SHAPE_CHAIN["fc1"], SHAPE_CHAIN["logits"],
    ]
    sizes = [int(np.prod(s)) for s in stages]
    peak = max(a + b for a, b in zip(sizes, sizes[1:]))
    return FootprintReport(
        param_count=n_params,
        float_weight_bytes=4 * n_params,
        int8_weight_bytes=n_params,
        int8_payload_bytes=payload,
        peak_activation_elements=peak,
        peak_activation_bytes_float=4 * peak,
        peak_activation_bytes_int8=peak,
        macs=sum(layer_macs.values()),
        layer_macs=layer_macs,
    )


__all__ = [
    "QParams", "QLayer", "QuantizedModel", "QuantizedTinyCNN", "FootprintReport",
    "quantize", "qforward", "footprint_report", "calibrated_logit_error_bound", "worst_case_logit_error_bound",
    "quantize_multiplier", "requantize",
    "dump_qmodel", "load_qmodel", "load_qmodel_bytes", "save_qmodel", "ChannelZScore",
]
