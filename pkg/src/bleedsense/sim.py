"""In-vitro bleeding simulator: stirred beaker, syringe-pump infusion, two-state acquisition.

The beaker is a well-mixed tank that accumulates volume (no outflow). Blood
or an interference fluid is infused at a constant rate; every sample period
the sensor records 12 channels under the violet/green/NIR LEDs followed by
12 channels under the white LED.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .spectral import (
    N_CHANNELS,
    AbsorptionSpectrum,
    OpticalPath,
    builtin_spectrum,
)

SCHEMA_VERSION = 1
WINDOW_LENGTH = 6
ADC_FULL_SCALE = 65535

INTERFERENCE_MIXTURES = (
    "tea", "coffee", "grape_juice", "cola", "kvass",
    "fresh_milk", "chocolate_milk", "beetroot", "tomato_sauce", "grapefruit_juice",
)


class FlowClass(IntEnum):
    """Six ordered classes: non-bleeding interference plus five bleeding rates."""

    INTERFERENCE = 0
    Q0_1 = 1
    Q0_3 = 2
    Q0_5 = 3
    Q0_7 = 4
    Q0_9 = 5

    @property
    def rate(self) -> float:
        """Bleeding flow rate in mL/min (0.0 for the interference class)."""
        return _RATES[self]

    @property
    def is_bleeding(self) -> bool:
        return self is not FlowClass.INTERFERENCE

    @property
    def label(self) -> str:
        return f"{self.rate:.1f}"

    def adjacent(self, other: "FlowClass") -> bool:
        """True for consecutive bleeding levels; the interference class has no neighbours."""
        other = FlowClass(other)
        return self.is_bleeding and other.is_bleeding and abs(int(self) - int(other)) == 1

    @classmethod
    def from_rate(cls, rate: float) -> "FlowClass":
        for fc, r in _RATES.items():
            if math.isclose(r, rate, abs_tol=1e-9):
                return fc
        raise ValueError(f"{rate} mL/min is not one of the flow classes")


_RATES = {
    FlowClass.INTERFERENCE: 0.0,
    FlowClass.Q0_1: 0.1,
    FlowClass.Q0_3: 0.3,
    FlowClass.Q0_5: 0.5,
    FlowClass.Q0_7: 0.7,
    FlowClass.Q0_9: 0.9,
}

# Incident baselines in counts. State A: violet (405), green (515-555) and NIR (850) LEDs;
# state B: 6000 K white LED (blue pump peak plus broad phosphor band).
STATE_A_BASELINE = (40000, 30000, 2500, 1500, 20000, 25000, 24000, 4000, 800, 400, 1200, 28000)
STATE_B_BASELINE = (3000, 12000, 30000, 18000, 15000, 22000, 22000, 20000, 14000, 8000, 3000, 600)
DEFAULT_INCIDENT = STATE_A_BASELINE + STATE_B_BASELINE

# Static per-channel transmission of the background media (same for both states).
MEDIUM_TRANSMISSION = {
    "water": (1.0,) * 12,
    "SGF": (0.975, 0.98, 0.985, 0.99, 0.99, 0.99, 0.99, 0.995, 0.995, 0.995, 0.995, 0.99),
}


def default_optical_path() -> OpticalPath:
    return OpticalPath(np.array(DEFAULT_INCIDENT, dtype=float))


def default_library() -> dict[str, AbsorptionSpectrum]:
    lib = {"hemoglobin": builtin_spectrum("hemoglobin")}
    for name in INTERFERENCE_MIXTURES:
        lib[name] = builtin_spectrum(name)
    return lib


def concentration_at(t, Q, V0, c_blood):
    """Concentration in a stirred, accumulating tank after infusing for ``t`` seconds.

    ``Q`` is in mL/min, ``V0`` in mL; returns ``c_blood * Q t / (V0 + Q t)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    if Q < 0:
        raise ValueError("flow rate must be >= 0")
    if V0 <= 0:
        raise ValueError("initial volume must be > 0")
    infused = Q * t / 60.0
    out = c_blood * infused / (V0 + infused)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NoiseModel:
    """Sensor noise surrogate. ``ideal`` disables ADC rounding as well."""

    multiplicative_sigma: float = 0.01
    additive_sigma: float = 5.0
    adc_bits: int = 16
    ideal: bool = False

    def __post_init__(self):
        if self.multiplicative_sigma < 0 or self.additive_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 8 <= self.adc_bits <= 16:
            raise ValueError("adc_bits must be in 8..16")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 16, ideal=True)

    @property
    def is_noisy(self) -> bool:
        return self.multiplicative_sigma > 0 or self.additive_sigma > 0

    def quantize(self, x: np.ndarray) -> np.ndarray:
        if self.ideal:
            return np.clip(x, 0.0, ADC_FULL_SCALE) + 0.0
        step = 2 ** (16 - self.adc_bits)
        # "+ 0.0" turns -0.0 from rounding tiny negatives into 0.0
        return np.clip(np.round(x / step) * step, 0, ADC_FULL_SCALE) + 0.0


@dataclass(frozen=True)
class InfusionScenario:
    label: FlowClass
    flow_rate_Q: float
    blood_hb_conc: float = 150.0
    initial_volume_V0: float = 250.0
    duration_s: float = 120.0
    sample_period_s: float = 1.0
    medium: str = "SGF"
    mixture: str | None = None
    background_transmission: tuple[float, ...] = (1.0,) * N_CHANNELS
    rng_seed: int = 0
    # interference fluid concentration is a volume fraction of the undiluted stock
    interference_stock_conc: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "label", FlowClass(self.label))
        object.__setattr__(self, "background_transmission", tuple(float(v) for v in self.background_transmission))
        if self.flow_rate_Q < 0:
            raise ValueError("flow rate must be >= 0")
        if self.initial_volume_V0 <= 0 or self.duration_s <= 0 or self.sample_period_s <= 0:
            raise ValueError("V0, duration and sample period must be > 0")
        if len(self.background_transmission) != N_CHANNELS:
            raise ValueError(f"background transmission needs {N_CHANNELS} factors")
        if any(not 0 < v <= 1 for v in self.background_transmission):
            raise ValueError("background transmission factors must lie in (0, 1]")
        if self.label.is_bleeding:
            if self.mixture is not None:
                raise ValueError("bleeding scenarios cannot carry an interference mixture")
            if not math.isclose(self.flow_rate_Q, self.label.rate, abs_tol=1e-9):
                raise ValueError(f"flow rate {self.flow_rate_Q} inconsistent with class {self.label.label}")
        elif self.mixture is None and self.flow_rate_Q != 0:
            raise ValueError("a non-bleeding scenario with nonzero inflow needs an interference mixture")

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.duration_s / self.sample_period_s + 1e-9))

    def hb_concentration(self, t):
        if not self.label.is_bleeding:
            return 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else 0.0
        return concentration_at(t, self.flow_rate_Q, self.initial_volume_V0, self.blood_hb_conc)

    def interference_concentration(self, t):
        if self.mixture is None:
            return 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else 0.0
        return concentration_at(t, self.flow_rate_Q, self.initial_volume_V0, self.interference_stock_conc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = int(self.label)
        d["background_transmission"] = list(self.background_transmission)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InfusionScenario":
        d = dict(d)
        d["label"] = FlowClass(d["label"])
        d["background_transmission"] = tuple(d["background_transmission"])
        return cls(**d)


@dataclass(frozen=True)
class SpectralFrame:
    timestamp_s: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_CHANNELS,):
            raise ValueError(f"frame must hold {N_CHANNELS} values")
        if np.any(v < 0) or np.any(v > ADC_FULL_SCALE):
            raise ValueError("frame values outside ADC range")
        object.__setattr__(self, "values", v)


def acquire_frame(t, scenario: InfusionScenario, library=None, optical_path=None,
                  noise: NoiseModel | None = None, rng: np.random.Generator | None = None) -> SpectralFrame:
    """One acquisition cycle at time ``t`` (seconds since infusion start)."""
    library = library if library is not None else default_library()
    optical_path = optical_path if optical_path is not None else default_optical_path()
    noise = noise if noise is not None else NoiseModel()
    mu_total = library["hemoglobin"].per_channel() * scenario.hb_concentration(t)
    if scenario.mixture is not None:
        if scenario.mixture not in library:
            raise KeyError(f"no absorption spectrum for {scenario.mixture!r}")
        mu_total = mu_total + library[scenario.mixture].per_channel() * scenario.interference_concentration(t)
    background = np.asarray(scenario.background_transmission)
    clean = optical_path.incident * background * np.exp(-mu_total * optical_path.path_length_mm)
    if noise.is_noisy:
        if rng is None:
            raise ValueError("a noisy acquisition needs an rng")
        eps_mult = rng.standard_normal(N_CHANNELS) * noise.multiplicative_sigma
        eps_add = rng.standard_normal(N_CHANNELS) * noise.additive_sigma
        clean = clean * (1.0 + eps_mult) + eps_add
    return SpectralFrame(float(t), noise.quantize(clean))


@dataclass
class Recording:
    scenario: InfusionScenario
    timestamps: np.ndarray
    values: np.ndarray  # (n_frames, 24)
    recording_id: str = "rec"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.timestamps)
        if self.values.shape != (n, N_CHANNELS):
            raise ValueError(f"values must be ({n}, {N_CHANNELS}), got {self.values.shape}")
        if n < WINDOW_LENGTH:
            raise ValueError(f"a recording needs at least {WINDOW_LENGTH} frames")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    @property
    def frames(self) -> list[SpectralFrame]:
        return [SpectralFrame(t, v) for t, v in zip(self.timestamps, self.values)]

    @property
    def label(self) -> FlowClass:
        return self.scenario.label

    def ratio_series(self, i: int = 1, j: int = 12) -> np.ndarray:
        return self.values[:, i - 1] / self.values[:, j - 1]

    def metadata(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "recording_id": self.recording_id,
            "label": int(self.label),
            "flow_class": self.label.label,
            "rng_seed": self.scenario.rng_seed,
            "scenario": self.scenario.to_dict(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s"] + [f"ch{k}" for k in range(1, N_CHANNELS + 1)])
        for t, row in zip(self.timestamps, self.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def save(self, csv_path: str | Path) -> None:
        """Write the CSV plus a ``.json`` metadata sidecar next to it."""
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv())
        csv_path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path: str | Path) -> "Recording":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{csv_path}: unsupported schema_version {meta.get('schema_version')}")
        times, values = read_recording_csv(csv_path)
        return cls(InfusionScenario.from_dict(meta["scenario"]), times, values, meta["recording_id"])


def read_recording_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["t_s"] + [f"ch{k}" for k in range(1, N_CHANNELS + 1)]
        if header != expected:
            raise ValueError(f"{path}: unexpected header")
        rows = [[float(x) for x in r] for r in reader if r]
    arr = np.array(rows, dtype=float).reshape(-1, N_CHANNELS + 1)
    return arr[:, 0], arr[:, 1:]


def run_recording(scenario: InfusionScenario, library=None, optical_path=None,
                  noise: NoiseModel | None = None, recording_id: str = "rec") -> Recording:
    """Simulate the whole experiment; deterministic given ``scenario.rng_seed``."""
    n = scenario.n_samples
    if n < WINDOW_LENGTH:
        raise ValueError(f"scenario yields {n} samples, need at least {WINDOW_LENGTH}")
    library = library if library is not None else default_library()
    optical_path = optical_path if optical_path is not None else default_optical_path()
    noise = noise if noise is not None else NoiseModel()
    rng = np.random.default_rng(scenario.rng_seed)
    times = np.arange(n) * scenario.sample_period_s
    values = np.empty((n, N_CHANNELS))
    for k, t in enumerate(times):
        values[k] = acquire_frame(t, scenario, library, optical_path, noise, rng).values
    return Recording(scenario, times, values, recording_id)


@dataclass(frozen=True)
class Window:
    matrix: np.ndarray = field(repr=False)  # (6, 24)
    label: FlowClass
    recording_id: str
    start: int

    def __post_init__(self):
        if np.shape(self.matrix) != (WINDOW_LENGTH, N_CHANNELS):
            raise ValueError(f"window must be {WINDOW_LENGTH}x{N_CHANNELS}")


def windowize(rec: Recording, length: int = WINDOW_LENGTH, stride: int | None = None) -> list[Window]:
    stride = length if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if length != WINDOW_LENGTH:
        raise ValueError(f"the classifier consumes {WINDOW_LENGTH}-step windows")
    if len(rec) < length:
        raise ValueError(f"recording has {len(rec)} frames, need {length}")
    starts = range(0, len(rec) - length + 1, stride)
    return [Window(rec.values[s:s + length].copy(), rec.label, rec.recording_id, s) for s in starts]


def stack_windows(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """Windows to estimator arrays: X (n, 6, 24) and integer class labels y."""
    if not windows:
        return np.empty((0, WINDOW_LENGTH, N_CHANNELS)), np.empty(0, dtype=int)
    X = np.stack([w.matrix for w in windows])
    y = np.array([int(w.label) for w in windows], dtype=int)
    return X, y


# --------------------------------------------------------------------------- datasets

@dataclass
class DatasetConfig:
    recordings_per_class: int = 40
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    duration_s: float = 120.0
    sample_period_s: float = 1.0
    window_length: int = WINDOW_LENGTH
    window_stride: int = WINDOW_LENGTH
    initial_volume_V0: float = 250.0
    blood_hb_conc: float = 150.0
    interference_rate_range: tuple[float, float] = (2.0, 3.5)
    background_jitter: float = 0.15
    multiplicative_sigma: float = 0.01
    additive_sigma: float = 5.0
    adc_bits: int = 16
    mixtures: tuple[str, ...] = INTERFERENCE_MIXTURES

    def __post_init__(self):
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        self.interference_rate_range = tuple(float(f) for f in self.interference_rate_range)
        self.mixtures = tuple(self.mixtures)
        if self.recordings_per_class < 1:
            raise ValueError("every class needs at least one recording")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ValueError("split_fractions must be three non-negative numbers")
        if not math.isclose(sum(self.split_fractions), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions sum to {sum(self.split_fractions)}, not 1")
        lo, hi = self.interference_rate_range
        if not 0 < lo <= hi:
            raise ValueError("interference rates must be positive")
        if not 0 <= self.background_jitter < 1:
            raise ValueError("background_jitter must be in [0, 1)")
        if not self.mixtures:
            raise ValueError("at least one interference mixture is required")

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.multiplicative_sigma, self.additive_sigma, self.adc_bits)

    def split_counts(self) -> tuple[int, int, int]:
        n = self.recordings_per_class
        n_train = int(round(self.split_fractions[0] * n))
        n_val = int(round(self.split_fractions[1] * n))
        n_val = min(n_val, n - n_train)
        return n_train, n_val, n - n_train - n_val

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["interference_rate_range"] = list(self.interference_rate_range)
        d["mixtures"] = list(self.mixtures)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    recording_id: str
    label: int
    split: str
    mixture: str
    seed: int


@dataclass
class DatasetBundle:
    config: DatasetConfig
    master_seed: int
    recordings: list[Recording]
    manifest: list[ManifestRow]

    def split_of(self) -> dict[str, str]:
        return {r.recording_id: r.split for r in self.manifest}

    def recordings_in(self, split: str) -> list[Recording]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        where = self.split_of()
        return [r for r in self.recordings if where[r.recording_id] == split]

    def windows(self, split: str, stride: int | None = None) -> list[Window]:
        stride = stride or self.config.window_stride
        out: list[Window] = []
        for rec in self.recordings_in(split):
            out.extend(windowize(rec, self.config.window_length, stride))
        return out

    def arrays(self, split: str, stride: int | None = None):
        """(X, y, recording_ids) for one split."""
        ws = self.windows(split, stride)
        X, y = stack_windows(ws)
        return X, y, np.array([w.recording_id for w in ws])

    def mixture_of(self) -> dict[str, str]:
        return {r.recording_id: r.mixture for r in self.manifest}

    def manifest_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["recording_id", "class", "flow_rate", "split", "mixture", "seed"])
        for r in self.manifest:
            w.writerow([r.recording_id, r.label, FlowClass(r.label).label, r.split, r.mixture, r.seed])
        return buf.getvalue()

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "recordings").mkdir(parents=True, exist_ok=True)
        for rec in self.recordings:
            rec.save(out / "recordings" / f"{rec.recording_id}.csv")
        (out / "manifest.csv").write_text(self.manifest_csv())
        classes = "index,flow_rate,name\n" + "".join(
            f"{int(fc)},{fc.label},{fc.name}\n" for fc in FlowClass)
        (out / "classes.csv").write_text(classes)
        meta = {"schema_version": SCHEMA_VERSION, "master_seed": self.master_seed, "config": self.config.to_dict()}
        (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, out_dir: str | Path) -> "DatasetBundle":
        out = Path(out_dir)
        meta = json.loads((out / "dataset.json").read_text())
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{out}: unsupported dataset schema_version {meta.get('schema_version')}")
        config = DatasetConfig.from_dict(meta["config"])
        manifest = []
        with open(out / "manifest.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                manifest.append(ManifestRow(row["recording_id"], int(row["class"]), row["split"],
                                            row["mixture"], int(row["seed"])))
        recordings = [Recording.load(out / "recordings" / f"{r.recording_id}.csv") for r in manifest]
        return cls(config, int(meta["master_seed"]), recordings, manifest)


def _background(rng: np.random.Generator, medium: str, jitter: float) -> tuple[float, ...]:
    base = np.tile(MEDIUM_TRANSMISSION[medium], 2)
    factors = rng.uniform(1.0 - jitter, 1.0, size=N_CHANNELS)
    return tuple(float(v) for v in base * factors)


def make_scenarios(config: DatasetConfig, master_seed: int) -> list[tuple[InfusionScenario, str]]:
    """All scenarios of a dataset, class-major, each with its recording id.

    Scenario ``k`` draws its parameters and noise seed from
    ``SeedSequence([master_seed, k])`` only, so generation order is irrelevant.
    """
    out = []
    idx = 0
    for fc in FlowClass:
        for r in range(config.recordings_per_class):
            param_seq, noise_seq = np.random.SeedSequence([master_seed, idx]).spawn(2)
            prng = np.random.default_rng(param_seq)
            common = dict(
                blood_hb_conc=config.blood_hb_conc,
                initial_volume_V0=config.initial_volume_V0,
                duration_s=config.duration_s,
                sample_period_s=config.sample_period_s,
                rng_seed=int(noise_seq.generate_state(1)[0]),
            )
            if fc.is_bleeding:
                sc = InfusionScenario(fc, fc.rate, medium="SGF",
                                      background_transmission=_background(prng, "SGF", config.background_jitter),
                                      **common)
            else:
                mixture = config.mixtures[r % len(config.mixtures)]
                rate = float(prng.uniform(*config.interference_rate_range))
                sc = InfusionScenario(fc, rate, medium="water", mixture=mixture,
                                      background_transmission=_background(prng, "water", config.background_jitter),
                                      **common)
            out.append((sc, f"rec{idx:04d}"))
            idx += 1
    return out


def _assign_splits(config: DatasetConfig, master_seed: int, scenarios) -> list[str]:
    n_train, n_val, _ = config.split_counts()
    srng = np.random.default_rng(np.random.SeedSequence([master_seed, 2**31 - 1]))
    splits = [""] * len(scenarios)
    per_class = config.recordings_per_class
    n_mix = len(config.mixtures)
    for c in range(len(FlowClass)):
        members = list(range(c * per_class, (c + 1) * per_class))
        order = list(srng.permutation(per_class))
        if c == int(FlowClass.INTERFERENCE):
            # one recording of every mixture goes first so the training split covers all of them
            order.sort(key=lambda r: r // n_mix)
        for pos, r in enumerate(order):
            splits[members[r]] = "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
    return splits


def generate_dataset(config: DatasetConfig | None = None, master_seed: int = 42,
                     library=None, optical_path=None) -> DatasetBundle:
    config = config or DatasetConfig()
    library = library if library is not None else default_library()
    missing = [m for m in config.mixtures if m not in library]
    if missing:
        raise KeyError(f"no spectra for mixtures {missing}")
    scenarios = make_scenarios(config, master_seed)
    splits = _assign_splits(config, master_seed, scenarios)
    noise = config.noise
    recordings, manifest = [], []
    for (sc, rid), split in zip(scenarios, splits):
        recordings.append(run_recording(sc, library, optical_path, noise, rid))
        manifest.append(ManifestRow(rid, int(sc.label), split, sc.mixture or "", sc.rng_seed))
    return DatasetBundle(config, master_seed, recordings, manifest)


def iter_class_scenarios(duration_s: float = 120.0, sample_period_s: float = 1.0) -> Iterator[InfusionScenario]:
    """Noise-free reference scenarios, one per flow class (class 0 = plain medium, no inflow)."""
    for fc in FlowClass:
        yield InfusionScenario(fc, fc.rate, duration_s=duration_s, sample_period_s=sample_period_s,
                               medium="SGF" if fc.is_bleeding else "water")


def physics_check(duration_s: float = 120.0, sample_period_s: float = 1.0, library=None, optical_path=None):
    """ch1/ch12 ratio series per flow class from noise-free recordings.

    Returns ``(times, {FlowClass: series}, passed)``. Passing requires every
    bleeding series to decrease strictly, the zero-flow series to stay flat,
    and higher flow to give a lower ratio at every t > 0.
    """
    from .spectral import check_monotone_decreasing

    noise = NoiseModel.noiseless()
    series = {}
    times = None
    for sc in iter_class_scenarios(duration_s, sample_period_s):
        rec = run_recording(sc, library, optical_path, noise)
        times = rec.timestamps
        series[sc.label] = rec.ratio_series(1, 12)
    passed = True
    for fc, s in series.items():
        if fc.is_bleeding:
            passed &= check_monotone_decreasing(s).ok
        else:
            passed &= bool(np.all(s == s[0]))
    bleeding = [series[fc] for fc in FlowClass if fc.is_bleeding]
    for lo, hi in zip(bleeding, bleeding[1:]):
        passed &= bool(np.all(hi[1:] < lo[1:]))
    return times, series, bool(passed)


def with_background(scenario: InfusionScenario, factors: Sequence[float]) -> InfusionScenario:
    return replace(scenario, background_transmission=tuple(factors))
