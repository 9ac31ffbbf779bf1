"""Energy (kWh-PUE) and CO2-equivalent accounting for search runs."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

PUE = 1.58
CO2_LBS_PER_KWH = 0.954


@dataclass(frozen=True)
class PowerProfile:
    """Average power draw in watts; ``g`` is the GPU count."""

    name: str
    p_c: float = 0.0
    p_r: float = 0.0
    p_g: float = 0.0
    g: int = 0

    def __post_init__(self):
        if min(self.p_c, self.p_r, self.p_g) < 0 or self.g < 0:
            raise ValueError(f"profile {self.name!r}: power and GPU count must be non-negative")


# GPU figures are 1.5x TDP.  "desk" is a CPU-only laptop/workstation guess.
BUILTIN_PROFILES = {
    p.name: p for p in (
        PowerProfile("gtx1080", p_g=270.0, g=1),
        PowerProfile("gtx1080ti", p_g=375.0, g=1),
        PowerProfile("rtx2080ti", p_g=375.0, g=1),
        PowerProfile("titanxp", p_g=375.0, g=1),
        PowerProfile("desk", p_c=65.0, p_r=5.0),
    )
}


@dataclass(frozen=True)
class EnergyReport:
    t: float
    kwh_pue: float
    co2_lbs: float
    profile: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def kwh_pue(t: float, profile: PowerProfile, pue: float = PUE) -> float:
    """Energy in kWh for ``t`` hours at ``profile``'s average draw."""
    if t < 0:
        raise ValueError("runtime must be non-negative")
    return pue * t * (profile.p_c + profile.p_r + profile.g * profile.p_g) / 1000.0


def co2_lbs(kwh: float) -> float:
    if kwh < 0:
        raise ValueError("energy must be non-negative")
    return CO2_LBS_PER_KWH * kwh


def report(t_hours: float, profile: PowerProfile, pue: float = PUE) -> EnergyReport:
    kwh = kwh_pue(t_hours, profile, pue)
    return EnergyReport(t_hours, kwh, co2_lbs(kwh), profile.name)


class Meter:
    """Context manager timing a block with a monotonic clock.

    >>> with Meter(BUILTIN_PROFILES["desk"]) as m:
    ...     pass
    >>> m.report.co2_lbs >= 0
    True
    """

    def __init__(self, profile: PowerProfile, pue: float = PUE):
        self.profile = profile
        self.pue = pue
        self.report: EnergyReport | None = None
        self._start = None

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        hours = (time.perf_counter() - self._start) / 3600.0
        self.report = report(hours, self.profile, self.pue)
        return False


def meter(run, profile: PowerProfile, pue: float = PUE):
    """Call ``run()`` and return ``(result, EnergyReport)``."""
    with Meter(profile, pue) as m:
        result = run()
    return result, m.report


def load_profiles(path) -> dict[str, PowerProfile]:
    """Read a profile registry: a JSON list of {name, p_c, p_r, p_g, g}."""
    items = json.loads(Path(path).read_text())
    if not isinstance(items, list):
        raise ValueError("profile registry must be a JSON list")
    profiles = {}
    for item in items:
        p = PowerProfile(str(item["name"]), float(item.get("p_c", 0.0)),
                         float(item.get("p_r", 0.0)), float(item.get("p_g", 0.0)),
                         int(item.get("g", 0)))
        profiles[p.name] = p
    return profiles


def save_profiles(profiles, path) -> None:
    Path(path).write_text(json.dumps([asdict(p) for p in profiles], indent=2) + "\n")


def resolve_profile(name: str, registry=None) -> PowerProfile:
    registry = {**BUILTIN_PROFILES, **(registry or {})}
    try:
        return registry[name]
    except KeyError:
        raise KeyError(f"unknown power profile {name!r}; known: {sorted(registry)}") from None
