"""Wavelength channels, absorption spectra and Beer-Lambert transmission.

Units used throughout: concentration in g/L, path length in mm, intensity
in detector counts, absorption coefficient in 1/(g/L*mm) (natural log).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

CHANNEL_CENTERS_NM = (405, 425, 450, 475, 515, 550, 555, 600, 640, 690, 745, 855)
N_SENSOR_CHANNELS = 12
N_CHANNELS = 24  # two illumination states x 12 sensor channels
DEFAULT_PATH_LENGTH_MM = 3.0

# ch1..ch12 under state A (violet + green + NIR LEDs), ch13..ch24 under state B (white LED)
STATE_A = 0
STATE_B = 1


@dataclass(frozen=True)
class Channel:
    index: int
    center_nm: float


@dataclass(frozen=True)
class ChannelBank:
    channels: tuple[Channel, ...]

    def __post_init__(self):
        if len(self.channels) != N_SENSOR_CHANNELS:
            raise ValueError(f"expected {N_SENSOR_CHANNELS} channels, got {len(self.channels)}")
        if [c.index for c in self.channels] != list(range(1, N_SENSOR_CHANNELS + 1)):
            raise ValueError("channel indices must run 1..12 in order")
        if tuple(c.center_nm for c in self.channels) != CHANNEL_CENTERS_NM:
            raise ValueError("channel centers do not match the sensor layout")

    @classmethod
    def default(cls) -> "ChannelBank":
        return cls(tuple(Channel(i, nm) for i, nm in enumerate(CHANNEL_CENTERS_NM, 1)))

    @property
    def centers_nm(self) -> np.ndarray:
        return np.array([c.center_nm for c in self.channels], dtype=float)

    def __len__(self):
        return len(self.channels)


def sensor_channel(index: int) -> int:
    """Map a 1..24 measurement channel to its 1..12 sensor channel."""
    if not 1 <= index <= N_CHANNELS:
        raise ValueError(f"channel index {index} outside 1..{N_CHANNELS}")
    return (index - 1) % N_SENSOR_CHANNELS + 1


def illumination_state(index: int) -> int:
    if not 1 <= index <= N_CHANNELS:
        raise ValueError(f"channel index {index} outside 1..{N_CHANNELS}")
    return STATE_A if index <= N_SENSOR_CHANNELS else STATE_B


@dataclass(frozen=True)
class AbsorptionSpectrum:
    """Absorption coefficient of one substance at the 12 sensor channels."""

    substance_id: str
    mu: np.ndarray = field(repr=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (N_SENSOR_CHANNELS,):
            raise ValueError(f"{self.substance_id}: need {N_SENSOR_CHANNELS} coefficients, got shape {mu.shape}")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0):
            raise ValueError(f"{self.substance_id}: absorption coefficients must be finite and >= 0")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    def at(self, index: int) -> float:
        """Coefficient for a 1..24 measurement channel (both states share wavelengths)."""
        return float(self.mu[sensor_channel(index) - 1])

    def per_channel(self) -> np.ndarray:
        """Coefficients expanded to all 24 measurement channels."""
        return np.tile(self.mu, 2)


class SpectrumFileError(ValueError):
    pass


def parse_spectrum(text: str, substance_id: str, bank: ChannelBank | None = None) -> AbsorptionSpectrum:
    """Parse a ``channel_index, center_nm, mu`` table; ``#`` starts a comment."""
    bank = bank or ChannelBank.default()
    rows: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise SpectrumFileError(f"{substance_id}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            idx, center, mu = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise SpectrumFileError(f"{substance_id}:{lineno}: {exc}") from None
        if not 1 <= idx <= N_SENSOR_CHANNELS:
            raise SpectrumFileError(f"{substance_id}:{lineno}: channel {idx} outside 1..12")
        if idx in rows:
            raise SpectrumFileError(f"{substance_id}:{lineno}: duplicate channel {idx}")
        if center != bank.channels[idx - 1].center_nm:
            raise SpectrumFileError(
                f"{substance_id}:{lineno}: channel {idx} center {center} nm, expected {bank.channels[idx - 1].center_nm}"
            )
        rows[idx] = mu
    missing = sorted(set(range(1, N_SENSOR_CHANNELS + 1)) - rows.keys())
    if missing:
        raise SpectrumFileError(f"{substance_id}: missing channels {missing}")
    return AbsorptionSpectrum(substance_id, np.array([rows[i] for i in range(1, N_SENSOR_CHANNELS + 1)]))


def load_spectrum(path: str | Path, substance_id: str | None = None) -> AbsorptionSpectrum:
    path = Path(path)
    return parse_spectrum(path.read_text(), substance_id or path.stem)


def builtin_spectrum(name: str) -> AbsorptionSpectrum:
    """Load one of the spectra shipped in ``bleedsense/data/spectra``."""
    res = resources.files("bleedsense") / "data" / "spectra" / f"{name}.txt"
    if not res.is_file():
        raise KeyError(f"no shipped spectrum named {name!r}")
    return parse_spectrum(res.read_text(), name)


@dataclass(frozen=True)
class OpticalPath:
    """Path length plus the incident baseline intensity of each of the 24 channels."""

    incident: np.ndarray = field(repr=False)
    path_length_mm: float = DEFAULT_PATH_LENGTH_MM

    def __post_init__(self):
        incident = np.asarray(self.incident, dtype=float)
        if incident.shape != (N_CHANNELS,):
            raise ValueError(f"incident baseline needs {N_CHANNELS} values, got shape {incident.shape}")
        if np.any(incident <= 0):
            raise ValueError("incident intensities must be > 0")
        if self.path_length_mm <= 0:
            raise ValueError("path length must be > 0")
        incident.setflags(write=False)
        object.__setattr__(self, "incident", incident)


@dataclass(frozen=True)
class RatioModelParams:
    C: float
    delta_mu: float
    L: float = DEFAULT_PATH_LENGTH_MM

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be > 0")
        if self.L <= 0:
            raise ValueError("L must be > 0")

    @classmethod
    def from_channels(cls, incident: Sequence[float], spectrum: AbsorptionSpectrum, i: int, j: int,
                      L: float = DEFAULT_PATH_LENGTH_MM) -> "RatioModelParams":
        return cls(C=incident[i - 1] / incident[j - 1], delta_mu=spectrum.at(i) - spectrum.at(j), L=L)


def transmit(I0, mu, c, L):
    """Beer-Lambert transmitted intensity ``I0 * exp(-mu * c * L)``.

    Broadcasts over numpy arrays.
    """
    I0, mu, c, L = (np.asarray(v, dtype=float) for v in (I0, mu, c, L))
    if np.any(c < 0):
        raise ValueError("concentration must be >= 0")
    if np.any(L <= 0):
        raise ValueError("path length must be > 0")
    if np.any(mu < 0):
        raise ValueError("absorption coefficient must be >= 0")
    if np.any(I0 <= 0):
        raise ValueError("incident intensity must be > 0")
    out = I0 * np.exp(-mu * c * L)
    return float(out) if out.ndim == 0 else out


def intensity_ratio(frame, i: int, j: int) -> float:
    """Ratio of channel ``i`` to channel ``j`` (1-based) within one illumination state."""
    values = getattr(frame, "values", frame)
    values = np.asarray(values, dtype=float)
    if values.shape != (N_CHANNELS,):
        raise ValueError(f"frame must hold {N_CHANNELS} values")
    if illumination_state(i) != illumination_state(j):
        raise ValueError(f"channels {i} and {j} come from different illumination states")
    if values[j - 1] <= 0:
        raise ZeroDivisionError(f"channel {j} reads {values[j - 1]}")
    return float(values[i - 1] / values[j - 1])


def ratio_predict(p: RatioModelParams, c):
    """Two-wavelength ratio ``C * exp(-delta_mu * c * L)``."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("concentration must be >= 0")
    out = p.C * np.exp(-p.delta_mu * c * p.L)
    return float(out) if out.ndim == 0 else out


class MonotoneCheck(NamedTuple):
    ok: bool
    first_violation: int | None


def check_monotone_decreasing(series, tolerance: float = 0.0) -> MonotoneCheck:
    """Check that every step decreases, allowing an upward slack of ``tolerance``.

    ``first_violation`` is the index of the first element that fails to drop
    below its predecessor.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("series needs at least 2 values")
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    bad = np.flatnonzero(~(np.diff(s) < tolerance))
    if bad.size:
        return MonotoneCheck(False, int(bad[0]) + 1)
    return MonotoneCheck(True, None)
