"""Seeded synthetic smart-meter population with injectable EV charging.

A household's base load is a daily double-peak (morning, evening) over an
overnight floor, with per-household scale, day-to-day jitter, Gaussian noise
and short appliance spikes. EV households get the same kind of base plus
rectangular charging pulses at a low- or high-demand power level.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np

from .errors import ConfigError, DataError
from .pipeline import DEFAULT_START, ConsumerSeries

SLOTS_PER_DAY = 48
KWH_PER_KW_SLOT = 0.5  # 30-minute slot


@dataclass(frozen=True)
class BaseProfile:
    morning_peak_kw: float = 1.2
    evening_peak_kw: float = 2.0
    overnight_floor_kw: float = 0.3
    noise_std_kw: float = 0.12
    daytime_kw: float = 0.4
    spike_rate_per_day: float = 0.8
    spike_kw: tuple[float, float] = (1.0, 2.5)
    household_scale_sigma: float = 0.25


@dataclass(frozen=True)
class EvProfile:
    high_demand_share: float = 0.5
    low_kw: float = 1.8
    high_kw: float = 7.2
    charge_prob: float = 0.4
    duration_hours: tuple[float, float] = (2.0, 6.0)
    offpeak_share: float = 0.7
    amplitude_jitter: float = 0.1


@dataclass(frozen=True)
class SynthConfig:
    n_non_ev: int = 1106
    n_ev: int = 139
    days: int = 92
    base: BaseProfile = field(default_factory=BaseProfile)
    ev: EvProfile = field(default_factory=EvProfile)
    seed: int = 0
    start: datetime = DEFAULT_START

    def __post_init__(self):
        if self.n_non_ev < 0 or self.n_ev < 0 or self.n_non_ev + self.n_ev == 0:
            raise ConfigError("need at least one consumer and non-negative counts")
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        b, e = self.base, self.ev
        powers = (
            b.morning_peak_kw, b.evening_peak_kw, b.overnight_floor_kw, b.noise_std_kw,
            b.daytime_kw, b.spike_rate_per_day, *b.spike_kw, b.household_scale_sigma,
            e.low_kw, e.high_kw,
        )
        if any(p < 0 for p in powers) or b.spike_kw[0] > b.spike_kw[1]:
            raise ConfigError("powers, rates and spreads must be non-negative")
        for p in (e.high_demand_share, e.charge_prob, e.offpeak_share):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability {p} outside [0, 1]")
        lo, hi = e.duration_hours
        if not (0 < lo <= hi <= 24):
            raise ConfigError(f"duration range {e.duration_hours} must lie within (0, 24]")
        if not 0 <= e.amplitude_jitter < 1:
            raise ConfigError("amplitude_jitter must be in [0, 1)")

    @property
    def n_slots(self) -> int:
        return self.days * SLOTS_PER_DAY


PRESETS = {
    "full": dict(n_non_ev=1106, n_ev=139, days=92),
    "small": dict(n_non_ev=260, n_ev=40, days=28),
    "tiny": dict(n_non_ev=80, n_ev=10, days=28),
}


def preset(name: str, **overrides) -> SynthConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SynthConfig(**{**PRESETS[name], **overrides})


def with_ev(config: SynthConfig, **ev_overrides) -> SynthConfig:
    return replace(config, ev=replace(config.ev, **ev_overrides))


@dataclass(frozen=True)
class ChargeEvent:
    day: int
    start_slot: int
    duration_slots: int
    amplitude_kw: float

    @property
    def absolute_start(self) -> int:
        return self.day * SLOTS_PER_DAY + self.start_slot


InjectionLog = dict[str, list[ChargeEvent]]


def inject_event(readings, start: int, duration: int, amplitude_kw: float) -> np.ndarray:
    """Add a rectangular pulse of ``amplitude_kw`` over ``duration`` slots."""
    x = np.array(readings, dtype=np.float64)
    if start < 0 or duration < 0 or start + duration > x.size:
        raise DataError(
            f"event [{start}, {start + duration}) outside series of length {x.size}"
        )
    x[start : start + duration] += amplitude_kw * KWH_PER_KW_SLOT
    return x


def _bump(hours: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def base_load(profile: BaseProfile, days: int, rng: np.random.Generator) -> np.ndarray:
    """Half-hourly kWh of a household without an EV."""
    hours = (np.arange(SLOTS_PER_DAY) + 0.5) / 2.0
    scale = rng.lognormal(0.0, profile.household_scale_sigma)
    morning_at = rng.normal(7.5, 0.5)
    evening_at = rng.normal(19.0, 0.75)
    out = np.empty((days, SLOTS_PER_DAY))
    for d in range(days):
        weekend = d % 7 >= 5
        m_at = morning_at + rng.normal(0, 0.4) + (1.5 if weekend else 0.0)
        e_at = evening_at + rng.normal(0, 0.4)
        kw = (
            profile.overnight_floor_kw
            + profile.daytime_kw * _bump(hours, 13.0, 3.5) * (1.5 if weekend else 1.0)
            + profile.morning_peak_kw * rng.uniform(0.7, 1.3) * _bump(hours, m_at, 1.0)
            + profile.evening_peak_kw * rng.uniform(0.7, 1.3) * _bump(hours, e_at, 1.5)
        )
        kw = scale * kw + rng.normal(0.0, profile.noise_std_kw, SLOTS_PER_DAY)
        for _ in range(rng.poisson(profile.spike_rate_per_day)):
            at = rng.integers(14, 44)
            kw[at : at + rng.integers(1, 3)] += rng.uniform(*profile.spike_kw)
        out[d] = kw
    return np.clip(out.ravel(), 0.0, None) * KWH_PER_KW_SLOT


def _draw_events(ev: EvProfile, days: int, amplitude: float, rng) -> list[ChargeEvent]:
    horizon = days * SLOTS_PER_DAY
    events: list[ChargeEvent] = []
    busy_until = 0
    lo, hi = (round(h * 2) for h in ev.duration_hours)
    for day in range(days):
        if rng.random() >= ev.charge_prob:
            continue
        if rng.random() < ev.offpeak_share:
            # 22:00-06:00 of this day: slots 44..47 or 0..11
            slot = int(rng.integers(0, 16))
            start_slot = 44 + slot if slot < 4 else slot - 4
        else:
            start_slot = int(rng.integers(12, 44))
        duration = int(rng.integers(max(lo, 1), max(hi, 1) + 1))
        amp = amplitude * rng.uniform(1 - ev.amplitude_jitter, 1 + ev.amplitude_jitter)
        start = day * SLOTS_PER_DAY + start_slot
        duration = min(duration, horizon - start)
        if start < busy_until or duration < 1:
            continue
        busy_until = start + duration
        events.append(ChargeEvent(day, start_slot, duration, float(amp)))
    return events


def _consumer(args) -> tuple[ConsumerSeries, list[ChargeEvent]]:
    config, index, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    readings = base_load(config.base, config.days, rng)
    is_ev = index >= config.n_non_ev
    cid = f"H{index:05d}"
    events: list[ChargeEvent] = []
    if is_ev:
        ev = config.ev
        high = rng.random() < ev.high_demand_share
        amplitude = ev.high_kw if high else ev.low_kw
        if ev.charge_prob > 0 and amplitude > 0:
            for _ in range(10_000):
                events = _draw_events(ev, config.days, amplitude, rng)
                if events:
                    break
            else:
                raise ConfigError(f"could not schedule any charging event for {cid}")
        for e in events:
            readings = inject_event(readings, e.absolute_start, e.duration_slots, e.amplitude_kw)
    return ConsumerSeries(cid, readings, int(is_ev), config.start), events


def generate(config: SynthConfig, workers: int = 1) -> tuple[list[ConsumerSeries], InjectionLog]:
    """Build the population. Output is identical for any ``workers`` count."""
    n = config.n_non_ev + config.n_ev
    children = np.random.SeedSequence(config.seed).spawn(n)
    jobs = [(config, i, children[i]) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_consumer, jobs, chunksize=16))
    else:
        results = [_consumer(j) for j in jobs]
    series = [r[0] for r in results]
    log = {s.consumer_id: ev for s, ev in results if ev}
    return series, log


def write_injection_log(log: InjectionLog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id", "day", "start_slot", "duration_slots", "amplitude_kw"])
        for cid in sorted(log):
            for e in log[cid]:
                w.writerow([cid, e.day, e.start_slot, e.duration_slots, format(e.amplitude_kw, ".17g")])


def read_injection_log(path) -> InjectionLog:
    log: InjectionLog = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            log.setdefault(row["consumer_id"], []).append(
                ChargeEvent(
                    int(row["day"]), int(row["start_slot"]),
                    int(row["duration_slots"]), float(row["amplitude_kw"]),
                )
            )
    return log
