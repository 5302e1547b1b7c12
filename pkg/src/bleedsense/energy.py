"""Duty-cycle energy accounting for one-minute operating cycles.

Energies are in microampere-hours, charges in microcoulombs, currents in
microamperes and times in seconds. Component energies are the inputs;
currents are derived.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

SECONDS_PER_HOUR = 3600.0
MISMATCH_TOLERANCE = 0.005
LOW_POWER_MODES = ("standby", "stop")


class CasesFileError(ValueError):
    pass


@dataclass(frozen=True)
class DutyCycleCase:
    name: str
    active_time: float
    mcu_active_energy: float
    low_power_mode: str
    standby_current: float
    standby_time: float
    reference_total_energy: float | None = None
    reference_standby_energy: float | None = None
    reference_total_charge: float | None = None

    def __post_init__(self):
        for field in ("active_time", "mcu_active_energy", "standby_time"):
            v = getattr(self, field)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{self.name}: {field} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.standby_current) and self.standby_current > 0):
            raise ValueError(f"{self.name}: standby_current must be > 0")
        if self.low_power_mode not in LOW_POWER_MODES:
            raise ValueError(f"{self.name}: low_power_mode must be one of {LOW_POWER_MODES}")


@dataclass(frozen=True)
class EnergySummary:
    name: str
    standby_energy: float
    total_energy: float
    total_charge: float
    implied_active_current: float | None
    reference_total_energy: float | None = None

    @property
    def relative_mismatch(self) -> float | None:
        ref = self.reference_total_energy
        if ref is None or ref == 0:
            return None
        return abs(self.total_energy - ref) / ref

    @property
    def mismatch(self) -> bool:
        """True when the computed total disagrees with the reference by more than 0.5%."""
        rel = self.relative_mismatch
        return rel is not None and rel > MISMATCH_TOLERANCE


def implied_active_current(case: DutyCycleCase) -> float:
    if case.active_time == 0:
        raise ZeroDivisionError(f"{case.name}: active_time is zero")
    return case.mcu_active_energy * SECONDS_PER_HOUR / case.active_time


def cycle_energy(case: DutyCycleCase) -> EnergySummary:
    standby = case.standby_current * case.standby_time / SECONDS_PER_HOUR
    total = case.mcu_active_energy + standby
    current = implied_active_current(case) if case.active_time > 0 else None
    return EnergySummary(case.name, standby, total, total * SECONDS_PER_HOUR, current,
                         case.reference_total_energy)


@dataclass(frozen=True)
class ScenarioComparison:
    n_infer: int
    n_tx: int
    energy_mixed: float
    energy_all_tx: float
    reduction: float


def _case_total(case, use_reference: bool) -> float:
    if isinstance(case, (int, float)):
        return float(case)
    if use_reference and case.reference_total_energy is not None:
        return case.reference_total_energy
    return cycle_energy(case).total_energy


def scenario_compare(infer_case, tx_case, n_infer: int, n_tx: int, *, use_reference: bool = True
                     ) -> ScenarioComparison:
    """Energy of ``n_infer`` inference cycles plus ``n_tx`` transmissions vs transmitting every cycle.

    Cases may be :class:`DutyCycleCase` or plain per-cycle energies. With
    ``use_reference`` a case's published total is used when it has one.
    """
    if n_infer < 0 or n_tx < 0:
        raise ValueError("counts must be >= 0")
    if n_infer == 0 and n_tx == 0:
        raise ValueError("at least one cycle is required")
    e_inf = _case_total(infer_case, use_reference)
    e_tx = _case_total(tx_case, use_reference)
    mixed = n_infer * e_inf + n_tx * e_tx
    all_tx = (n_infer + n_tx) * e_tx
    if all_tx == 0:
        raise ZeroDivisionError("all-transmit energy is zero")
    # same as 1 - mixed/all_tx, but exactly zero when the two energies match
    return ScenarioComparison(n_infer, n_tx, mixed, all_tx, n_infer * (e_tx - e_inf) / all_tx)


def battery_lifetime(cycle_energy_uah: float, capacity_mah: float) -> float:
    """Hours of operation for one cycle per minute."""
    if capacity_mah < 0:
        raise ValueError("capacity must be >= 0")
    if cycle_energy_uah <= 0:
        raise ZeroDivisionError("cycle energy must be positive")
    return capacity_mah * 1000.0 / (cycle_energy_uah * 60.0)


# -- cases files ------------------------------------------------------------

_REQUIRED = ("name", "active_time", "mcu_active_energy", "low_power_mode", "standby_current", "standby_time")
_OPTIONAL = ("reference_total_energy", "reference_standby_energy", "reference_total_charge")


def parse_cases(text: str, source: str = "<cases>") -> list[DutyCycleCase]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    if reader.fieldnames is None:
        raise CasesFileError(f"{source}: empty cases file")
    missing = [c for c in _REQUIRED if c not in reader.fieldnames]
    if missing:
        raise CasesFileError(f"{source}: missing columns {missing}")
    cases = []
    for lineno, row in enumerate(reader, start=2):
        try:
            kw = {k: float(row[k]) for k in _REQUIRED if k not in ("name", "low_power_mode")}
            for k in _OPTIONAL:
                v = (row.get(k) or "").strip()
                kw[k] = float(v) if v else None
            cases.append(DutyCycleCase(name=row["name"].strip(), low_power_mode=row["low_power_mode"].strip(), **kw))
        except (TypeError, ValueError) as exc:
            raise CasesFileError(f"{source}: row {lineno}: {exc}") from exc
    if not cases:
        raise CasesFileError(f"{source}: no cases")
    names = [c.name for c in cases]
    if len(set(names)) != len(names):
        raise CasesFileError(f"{source}: duplicate case names")
    return cases


def load_cases(path: str | Path | None = None) -> list[DutyCycleCase]:
    """Read a cases CSV; ``None`` loads the built-in one-minute cycle table."""
    if path is None:
        text = resources.files("bleedsense").joinpath("data/duty_cycle_cases.csv").read_text()
        return parse_cases(text, "duty_cycle_cases.csv")
    return parse_cases(Path(path).read_text(), str(path))


def energy_table_csv(summaries: list[EnergySummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "standby_energy_uAh", "total_energy_uAh", "total_charge_uC",
                "implied_active_current_uA", "reference_total_uAh", "relative_mismatch", "flag"])
    for s in summaries:
        rel = s.relative_mismatch
        w.writerow([s.name, f"{s.standby_energy:.6g}", f"{s.total_energy:.6g}", f"{s.total_charge:.6g}",
                    "" if s.implied_active_current is None else f"{s.implied_active_current:.6g}",
                    "" if s.reference_total_energy is None else s.reference_total_energy,
                    "" if rel is None else f"{rel:.4%}", "MISMATCH" if s.mismatch else "ok"])
    return buf.getvalue()
