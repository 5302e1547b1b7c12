"""Binary frame codec for the capsule link and a packed recording file format.

Frame layout (little-endian)::

    0  2   magic 0xCA 0x75
    2  u8  version (1)
    3  u16 seq
    5  u32 timestamp_ms
    9  u8  payload_kind (0 raw channels, 1 classification result)
    10 payload
         kind 0: 24 x u16 channel counts (48 bytes)
         kind 1: u8 class, u8 confidence_q8 (2 bytes)
    .. u16 CRC-16/CCITT-FALSE over every preceding byte

A kind-0 frame is 60 bytes and a kind-1 frame is 14 bytes.

Packed recording file::

    0  4s  magic b"BSPK"
    4  u16 version (1)
    6  u16 reserved (0)
    8  u32 frame count
    12 u32 sample period in ms
    16 count x 60-byte kind-0 frames
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"\xca\x75"
VERSION = 1
KIND_RAW = 0
KIND_RESULT = 1
N_CHANNELS = 24

_HEAD = struct.Struct("<2sBHIB")
_RAW = struct.Struct(f"<{N_CHANNELS}H")
_RESULT = struct.Struct("<BB")
_CRC = struct.Struct("<H")
FRAME_SIZE = {KIND_RAW: _HEAD.size + _RAW.size + 2, KIND_RESULT: _HEAD.size + _RESULT.size + 2}
MIN_FRAME_SIZE = min(FRAME_SIZE.values())

FILE_MAGIC = b"BSPK"
FILE_VERSION = 1
_FILE_HEAD = struct.Struct("<4sHHII")


class TelemetryError(ValueError):
    pass


class BadMagic(TelemetryError):
    pass


class UnsupportedVersion(TelemetryError):
    pass


class BadPayloadKind(TelemetryError):
    pass


class Truncated(TelemetryError):
    pass


class CrcMismatch(TelemetryError):
    pass


class LengthMismatch(TelemetryError):
    """Buffer holds more bytes than the frame it starts with."""


def crc16_ccitt_false(data: bytes, crc: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor."""
    # crc_hqx is the same non-reflected 0x1021 CRC with a caller-chosen initial value
    return binascii.crc_hqx(bytes(data), crc)


@dataclass(frozen=True)
class TelemetryFrame:
    seq: int
    timestamp_ms: int
    payload_kind: int = KIND_RAW
    channels: tuple[int, ...] = ()
    class_id: int = 0
    confidence_q8: int = 0
    version: int = VERSION

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    @classmethod
    def raw(cls, seq: int, timestamp_ms: int, channels) -> "TelemetryFrame":
        return cls(seq, timestamp_ms, KIND_RAW, tuple(int(v) for v in channels))

    @classmethod
    def result(cls, seq: int, timestamp_ms: int, class_id: int, confidence_q8: int) -> "TelemetryFrame":
        return cls(seq, timestamp_ms, KIND_RESULT, (), int(class_id), int(confidence_q8))

    @property
    def size(self) -> int:
        return FRAME_SIZE[self.payload_kind]


def confidence_q8(proba) -> int:
    """8-bit fixed-point top-class probability."""
    p = float(np.max(proba))
    if not 0.0 <= p <= 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return int(np.floor(255.0 * p + 0.5))


def _check_range(name: str, value: int, hi: int) -> None:
    if not isinstance(value, (int, np.integer)) or not 0 <= value <= hi:
        raise ValueError(f"{name} must be an integer in [0, {hi}], got {value!r}")


def encode(frame: TelemetryFrame) -> bytes:
    if frame.version != VERSION:
        raise ValueError(f"cannot encode version {frame.version}")
    _check_range("seq", frame.seq, 0xFFFF)
    _check_range("timestamp_ms", frame.timestamp_ms, 0xFFFFFFFF)
    head = _HEAD.pack(MAGIC, frame.version, frame.seq, frame.timestamp_ms, frame.payload_kind)
    if frame.payload_kind == KIND_RAW:
        if len(frame.channels) != N_CHANNELS:
            raise ValueError(f"raw payload needs {N_CHANNELS} channels, got {len(frame.channels)}")
        for v in frame.channels:
            _check_range("channel value", v, 0xFFFF)
        body = head + _RAW.pack(*frame.channels)
    elif frame.payload_kind == KIND_RESULT:
        if frame.channels:
            raise ValueError("result frames carry no channel data")
        _check_range("class_id", frame.class_id, 0xFF)
        _check_range("confidence_q8", frame.confidence_q8, 0xFF)
        body = head + _RESULT.pack(frame.class_id, frame.confidence_q8)
    else:
        raise ValueError(f"unknown payload_kind {frame.payload_kind}")
    return body + _CRC.pack(crc16_ccitt_false(body))


def decode_prefix(buf: bytes, offset: int = 0) -> tuple[TelemetryFrame, int]:
    """Decode the frame starting at ``offset``; return it with its byte length."""
    view = memoryview(buf)[offset:]
    if len(view) < 2:
        raise Truncated(f"need at least 2 bytes for the magic, have {len(view)}")
    if bytes(view[:2]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(view[:2]).hex()}")
    if len(view) < _HEAD.size:
        raise Truncated(f"need {_HEAD.size} header bytes, have {len(view)}")
    _, version, seq, ts, kind = _HEAD.unpack_from(view)
    if version != VERSION:
        raise UnsupportedVersion(f"frame version {version}")
    if kind not in FRAME_SIZE:
        raise BadPayloadKind(f"payload kind {kind}")
    size = FRAME_SIZE[kind]
    if len(view) < size:
        raise Truncated(f"kind-{kind} frame needs {size} bytes, have {len(view)}")
    (crc,) = _CRC.unpack_from(view, size - 2)
    if crc16_ccitt_false(view[:size - 2]) != crc:
        raise CrcMismatch(f"CRC mismatch in frame seq={seq}")
    if kind == KIND_RAW:
        frame = TelemetryFrame(seq, ts, kind, _RAW.unpack_from(view, _HEAD.size), version=version)
    else:
        cls_id, conf = _RESULT.unpack_from(view, _HEAD.size)
        frame = TelemetryFrame(seq, ts, kind, (), cls_id, conf, version)
    return frame, size


def decode(buf: bytes) -> TelemetryFrame:
    """Decode a buffer that holds exactly one frame."""
    frame, used = decode_prefix(buf)
    if used != len(buf):
        raise LengthMismatch(f"frame is {used} bytes but buffer has {len(buf)}")
    return frame


def iter_frames(buf: bytes) -> Iterator[TelemetryFrame]:
    """Decode back-to-back frames; any error aborts the stream."""
    pos = 0
    while pos < len(buf):
        frame, used = decode_prefix(buf, pos)
        pos += used
        yield frame


def decode_stream(buf: bytes) -> list[TelemetryFrame]:
    return list(iter_frames(buf))


# -- packed recordings -------------------------------------------------------

def recording_frames(timestamps_s, values) -> list[TelemetryFrame]:
    """Kind-0 frames for a (n, 24) count matrix; counts are rounded and must fit u16."""
    values = np.asarray(values, dtype=float)
    ts = np.asarray(timestamps_s, dtype=float)
    if values.ndim != 2 or values.shape[1] != N_CHANNELS or len(ts) != len(values):
        raise ValueError("expected (n, 24) values with one timestamp per row")
    counts = np.rint(values)
    if np.any(counts < 0) or np.any(counts > 0xFFFF):
        raise ValueError("channel counts must lie in [0, 65535]")
    ms = np.rint(ts * 1000.0)
    return [TelemetryFrame.raw(k & 0xFFFF, int(m), row.astype(int).tolist())
            for k, (m, row) in enumerate(zip(ms, counts))]


def pack_recording(timestamps_s, values, sample_period_s: float) -> bytes:
    frames = recording_frames(timestamps_s, values)
    period_ms = int(round(sample_period_s * 1000))
    head = _FILE_HEAD.pack(FILE_MAGIC, FILE_VERSION, 0, len(frames), period_ms)
    return head + b"".join(encode(f) for f in frames)


@dataclass(frozen=True)
class PackedRecording:
    sample_period_ms: int
    frames: list[TelemetryFrame]

    @property
    def timestamps_s(self) -> np.ndarray:
        return np.array([f.timestamp_ms / 1000.0 for f in self.frames])

    @property
    def values(self) -> np.ndarray:
        return np.array([f.channels for f in self.frames], dtype=float).reshape(-1, N_CHANNELS)


def unpack_recording(buf: bytes) -> PackedRecording:
    if len(buf) < _FILE_HEAD.size:
        raise Truncated("file shorter than its 16-byte header")
    magic, version, _, count, period_ms = _FILE_HEAD.unpack_from(buf)
    if magic != FILE_MAGIC:
        raise BadMagic(f"not a packed recording (magic {magic!r})")
    if version != FILE_VERSION:
        raise UnsupportedVersion(f"packed recording version {version}")
    expected = _FILE_HEAD.size + count * FRAME_SIZE[KIND_RAW]
    if len(buf) < expected:
        raise Truncated(f"header announces {count} frames, file is {len(buf)} bytes")
    if len(buf) > expected:
        raise LengthMismatch(f"{len(buf) - expected} trailing bytes")
    frames = decode_stream(buf[_FILE_HEAD.size:])
    if any(f.payload_kind != KIND_RAW for f in frames):
        raise BadPayloadKind("packed recordings hold raw frames only")
    return PackedRecording(period_ms, frames)


def save_packed(path: str | Path, timestamps_s, values, sample_period_s: float) -> None:
    Path(path).write_bytes(pack_recording(timestamps_s, values, sample_period_s))


def load_packed(path: str | Path) -> PackedRecording:
    return unpack_recording(Path(path).read_bytes())
