"""Per-agent probabilistic location, power, and running profiles.

A power profile holds one slot per minute of the week (7*1440 = 10,080); a
location profile one slot per quarter hour of the week (7*96 = 672).  Slot
counts never change after creation; update procedures recompute slot
statistics from the raw record history by grouping and counting, so every
stored probability is a count/total ratio.

Slots are keyed in the agent's local civil time; each profile stores its
UTC offset so a coordinator can align agents across zones.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .power_model import MetricsSample, PowerModel, predict

MINUTES_PER_DAY = 1440
QUARTERS_PER_DAY = 96
POWER_SLOTS = 7 * MINUTES_PER_DAY  # 10,080
LOCATION_SLOTS = 7 * QUARTERS_PER_DAY  # 672

ACTIVITY_INTERVAL_MS = 90_000
# Raw record histories are pruned to a sliding window of 8 weeks.
RETENTION_MS = 8 * 7 * 24 * 3600 * 1000

_EPOCH_WEEKDAY = 3  # 1970-01-01 was a Thursday (Monday = 0)


def minute_slot(timestamp_ms: int, utc_offset_min: int = 0) -> tuple[int, int]:
    """(weekday, minute_of_day) of a timestamp in local civil time."""
    total_min = timestamp_ms // 60_000 + utc_offset_min
    weekday = (total_min // MINUTES_PER_DAY + _EPOCH_WEEKDAY) % 7
    return int(weekday), int(total_min % MINUTES_PER_DAY)


def quarter_slot(timestamp_ms: int, utc_offset_min: int = 0) -> tuple[int, int]:
    """(weekday, quarter_of_day) of a timestamp in local civil time."""
    weekday, minute = minute_slot(timestamp_ms, utc_offset_min)
    return weekday, minute // 15


def _check_probability(name: str, p: float) -> None:
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"{name}={p!r} outside [0, 1]")


@dataclass
class PowerProfileSlot:
    weekday: int
    minute_of_day: int
    p_running: float
    p_app_running: float
    p_plugged: float
    mean_power_normal: float
    mean_power_save: float

    def __post_init__(self):
        if not (0 <= self.weekday <= 6 and 0 <= self.minute_of_day < MINUTES_PER_DAY):
            raise ValueError("slot key out of range")
        for name in ("p_running", "p_app_running", "p_plugged"):
            _check_probability(name, getattr(self, name))


@dataclass
class LocationProfileSlot:
    weekday: int
    quarter_of_day: int
    latitude: float
    longitude: float
    accuracy: float
    zip: str
    p_present: float

    def __post_init__(self):
        if not (0 <= self.weekday <= 6 and 0 <= self.quarter_of_day < QUARTERS_PER_DAY):
            raise ValueError("slot key out of range")
        if abs(self.latitude) > 90.0 or abs(self.longitude) > 180.0:
            raise ValueError("slot coordinates out of range")
        _check_probability("p_present", self.p_present)


@dataclass(frozen=True)
class LocationFix:
    """One geolocation reading with its zip code attached."""

    timestamp: int  # ms
    latitude: float
    longitude: float
    accuracy: float  # meters
    zip: str

    def __post_init__(self):
        if abs(self.latitude) > 90.0 or abs(self.longitude) > 180.0:
            raise ValueError(f"invalid fix ({self.latitude}, {self.longitude})")
        if self.accuracy < 0.0:
            raise ValueError("accuracy must be non-negative")


@dataclass(frozen=True)
class ActivityRecord:
    timestamp: int  # ms
    running: bool


@dataclass(frozen=True)
class PowerReading:
    """Model-estimated consumption in both modes plus the charger status."""

    timestamp: int  # ms
    power_normal: float
    power_save: float
    plugged: bool

    def __post_init__(self):
        if self.power_normal < 0.0 or self.power_save < 0.0:
            raise ValueError("powers must be non-negative")


class PowerProfile:
    """Dense per-minute-of-week profile; slot count is fixed at 10,080."""

    def __init__(self, slots: list[PowerProfileSlot], utc_offset_min: int = 0):
        if len(slots) != POWER_SLOTS:
            raise ValueError(f"power profile needs exactly {POWER_SLOTS} slots")
        self.utc_offset_min = utc_offset_min
        self._slots = slots

    @property
    def slots(self) -> list[PowerProfileSlot]:
        return self._slots

    def slot(self, weekday: int, minute_of_day: int) -> PowerProfileSlot:
        return self._slots[weekday * MINUTES_PER_DAY + minute_of_day]

    def slot_at(self, timestamp_ms: int) -> PowerProfileSlot:
        weekday, minute = minute_slot(timestamp_ms, self.utc_offset_min)
        return self.slot(weekday, minute)

    def _set(self, slot: PowerProfileSlot) -> None:
        self._slots[slot.weekday * MINUTES_PER_DAY + slot.minute_of_day] = slot


class LocationProfile:
    """Dense per-quarter-hour-of-week profile; slot count is fixed at 672."""

    def __init__(self, slots: list[LocationProfileSlot], utc_offset_min: int = 0):
        if len(slots) != LOCATION_SLOTS:
            raise ValueError(f"location profile needs exactly {LOCATION_SLOTS} slots")
        self.utc_offset_min = utc_offset_min
        self._slots = slots

    @property
    def slots(self) -> list[LocationProfileSlot]:
        return self._slots

    def slot(self, weekday: int, quarter_of_day: int) -> LocationProfileSlot:
        return self._slots[weekday * QUARTERS_PER_DAY + quarter_of_day]

    def slot_at(self, timestamp_ms: int) -> LocationProfileSlot:
        weekday, quarter = quarter_slot(timestamp_ms, self.utc_offset_min)
        return self.slot(weekday, quarter)

    def _set(self, slot: LocationProfileSlot) -> None:
        self._slots[slot.weekday * QUARTERS_PER_DAY + slot.quarter_of_day] = slot


def init_profiles(
    model_normal: PowerModel,
    model_save: PowerModel,
    sample: MetricsSample,
    fix: LocationFix,
    utc_offset_min: int = 0,
) -> tuple[PowerProfile, LocationProfile]:
    """Initial profiles: every power slot takes the two model predictions for
    the startup sample with 50% probabilities; every location slot takes the
    startup fix with 100% presence."""
    if model_normal.spec.os != model_save.spec.os:
        raise ValueError("normal and save models must target the same OS")
    p_normal = predict(model_normal, sample)
    p_save = predict(model_save, sample)
    power_slots = [
        PowerProfileSlot(
            weekday=d,
            minute_of_day=m,
            p_running=0.5,
            p_app_running=0.5,
            p_plugged=0.5,
            mean_power_normal=p_normal,
            mean_power_save=p_save,
        )
        for d in range(7)
        for m in range(MINUTES_PER_DAY)
    ]
    location_slots = [
        LocationProfileSlot(
            weekday=d,
            quarter_of_day=q,
            latitude=fix.latitude,
            longitude=fix.longitude,
            accuracy=fix.accuracy,
            zip=fix.zip,
            p_present=1.0,
        )
        for d in range(7)
        for q in range(QUARTERS_PER_DAY)
    ]
    return (
        PowerProfile(power_slots, utc_offset_min),
        LocationProfile(location_slots, utc_offset_min),
    )


def update_location_profile(
    profile: LocationProfile,
    history: Sequence[LocationFix],
    new_fix: LocationFix,
) -> LocationProfileSlot:
    """Recompute the slot matching new_fix from the fixes in that slot.

    The new fix counts with the history.  Fixes are grouped by zip; the
    largest group (ties to the lexicographically smallest zip) supplies the
    slot centroid, and presence is that group's share of all matching fixes.
    """
    weekday, quarter = quarter_slot(new_fix.timestamp, profile.utc_offset_min)
    matching = [
        f
        for f in history
        if quarter_slot(f.timestamp, profile.utc_offset_min) == (weekday, quarter)
    ]
    matching.append(new_fix)

    groups: dict[str, list[LocationFix]] = {}
    for f in matching:
        groups.setdefault(f.zip, []).append(f)
    winner_zip = min(groups, key=lambda z: (-len(groups[z]), z))
    group = groups[winner_zip]

    slot = LocationProfileSlot(
        weekday=weekday,
        quarter_of_day=quarter,
        latitude=sum(f.latitude for f in group) / len(group),
        longitude=sum(f.longitude for f in group) / len(group),
        accuracy=sum(f.accuracy for f in group) / len(group),
        zip=winner_zip,
        p_present=len(group) / len(matching),
    )
    profile._set(slot)
    return slot


def update_power_profile(
    profile: PowerProfile,
    history: Sequence[PowerReading],
    new_reading: PowerReading,
) -> PowerProfileSlot:
    """Recompute the slot matching new_reading from readings in that slot.

    Readings are grouped by charger status; the slot takes the per-mode
    means of the new reading's group, and p_plugged is the plugged group's
    share of all matching readings.
    """
    weekday, minute = minute_slot(new_reading.timestamp, profile.utc_offset_min)
    matching = [
        r
        for r in history
        if minute_slot(r.timestamp, profile.utc_offset_min) == (weekday, minute)
    ]
    matching.append(new_reading)

    own_group = [r for r in matching if r.plugged == new_reading.plugged]
    n_plugged = sum(1 for r in matching if r.plugged)

    old = profile.slot(weekday, minute)
    slot = replace(
        old,
        p_plugged=n_plugged / len(matching),
        mean_power_normal=sum(r.power_normal for r in own_group) / len(own_group),
        mean_power_save=sum(r.power_save for r in own_group) / len(own_group),
    )
    profile._set(slot)
    return slot


def record_activity_and_backfill(
    history: Sequence[ActivityRecord], now: int
) -> list[ActivityRecord]:
    """Records to insert for an activity heartbeat at ``now``.

    Emits one running record at now, preceded by one not-running record per
    whole 90 s interval strictly inside the gap since the previous record
    (that is, max(0, gap//90s - 1) backfills).  A repeated timestamp is a
    no-op; a clock regression is an error.
    """
    inserted: list[ActivityRecord] = []
    if history:
        last = history[-1].timestamp
        if now < last:
            raise ValueError(f"clock regression: now={now} < last record {last}")
        if now == last:
            return []
        gap = now - last
        n_backfill = max(0, gap // ACTIVITY_INTERVAL_MS - 1)
        for i in range(1, int(n_backfill) + 1):
            inserted.append(
                ActivityRecord(timestamp=last + i * ACTIVITY_INTERVAL_MS, running=False)
            )
    inserted.append(ActivityRecord(timestamp=now, running=True))
    return inserted


def running_probabilities(
    activity: Sequence[ActivityRecord], utc_offset_min: int = 0
) -> dict[tuple[int, int], float]:
    """Per (weekday, minute) share of running records among all records."""
    counts: dict[tuple[int, int], list[int]] = {}
    for rec in activity:
        key = minute_slot(rec.timestamp, utc_offset_min)
        bucket = counts.setdefault(key, [0, 0])
        bucket[0] += 1 if rec.running else 0
        bucket[1] += 1
    return {key: running / total for key, (running, total) in counts.items()}


def update_running_probability(
    profile: PowerProfile, activity: Sequence[ActivityRecord]
) -> dict[tuple[int, int], float]:
    """Write running probabilities into the matching power slots.

    Slots without activity records are untouched.  The app-running
    probability tracks the same record stream.
    """
    probs = running_probabilities(activity, profile.utc_offset_min)
    for (weekday, minute), p in probs.items():
        old = profile.slot(weekday, minute)
        profile._set(replace(old, p_running=p, p_app_running=p))
    return probs


def _bucket(records, key_fn, utc_offset_min):
    buckets: dict[tuple[int, int], list] = {}
    for rec in records:
        buckets.setdefault(key_fn(rec.timestamp, utc_offset_min), []).append(rec)
    return buckets


class AgentProfiler:
    """Stateful per-agent profile owner: holds the raw record histories,
    applies the update procedures, and prunes records beyond the retention
    window.  Single writer; snapshots are plain dicts safe to share."""

    def __init__(
        self,
        agent_id: str,
        model_normal: PowerModel,
        model_save: PowerModel,
        utc_offset_min: int = 0,
    ):
        self.agent_id = agent_id
        self.model_normal = model_normal
        self.model_save = model_save
        self.utc_offset_min = utc_offset_min
        self.power_profile: PowerProfile | None = None
        self.location_profile: LocationProfile | None = None
        self.fixes: list[LocationFix] = []
        self.readings: list[PowerReading] = []
        self.activity: list[ActivityRecord] = []
        # Per-slot buckets mirror the flat histories so updates touch only
        # the records in the matching slot instead of rescanning everything.
        self._fix_buckets: dict[tuple[int, int], list[LocationFix]] = {}
        self._reading_buckets: dict[tuple[int, int], list[PowerReading]] = {}
        self._activity_buckets: dict[tuple[int, int], list[ActivityRecord]] = {}
        self.updated_at: int = 0

    def initialize(self, sample: MetricsSample, fix: LocationFix) -> None:
        self.power_profile, self.location_profile = init_profiles(
            self.model_normal, self.model_save, sample, fix, self.utc_offset_min
        )
        self.updated_at = sample.timestamp

    def _prune(self, now: int) -> None:
        horizon = now - RETENTION_MS
        if self.fixes and self.fixes[0].timestamp < horizon:
            self.fixes = [f for f in self.fixes if f.timestamp >= horizon]
            self._fix_buckets = _bucket(self.fixes, quarter_slot, self.utc_offset_min)
        if self.readings and self.readings[0].timestamp < horizon:
            self.readings = [r for r in self.readings if r.timestamp >= horizon]
            self._reading_buckets = _bucket(self.readings, minute_slot, self.utc_offset_min)
        if self.activity and self.activity[0].timestamp < horizon:
            self.activity = [a for a in self.activity if a.timestamp >= horizon]
            self._activity_buckets = _bucket(self.activity, minute_slot, self.utc_offset_min)

    def record_fix(self, fix: LocationFix) -> LocationProfileSlot:
        key = quarter_slot(fix.timestamp, self.utc_offset_min)
        slot = update_location_profile(
            self.location_profile, self._fix_buckets.get(key, ()), fix
        )
        self.fixes.append(fix)
        self._fix_buckets.setdefault(key, []).append(fix)
        self.updated_at = fix.timestamp
        self._prune(fix.timestamp)
        return slot

    def record_power(self, reading: PowerReading) -> PowerProfileSlot:
        key = minute_slot(reading.timestamp, self.utc_offset_min)
        slot = update_power_profile(
            self.power_profile, self._reading_buckets.get(key, ()), reading
        )
        self.readings.append(reading)
        self._reading_buckets.setdefault(key, []).append(reading)
        self.updated_at = reading.timestamp
        self._prune(reading.timestamp)
        return slot

    def record_activity(self, now: int) -> list[PowerProfileSlot]:
        """Insert the heartbeat (plus backfills) and refresh touched slots."""
        inserted = record_activity_and_backfill(self.activity, now)
        self.activity.extend(inserted)
        touched_keys = set()
        for rec in inserted:
            key = minute_slot(rec.timestamp, self.utc_offset_min)
            self._activity_buckets.setdefault(key, []).append(rec)
            touched_keys.add(key)
        updated = []
        for weekday, minute in sorted(touched_keys):
            group = self._activity_buckets[(weekday, minute)]
            p = sum(1 for a in group if a.running) / len(group)
            old = self.power_profile.slot(weekday, minute)
            slot = replace(old, p_running=p, p_app_running=p)
            self.power_profile._set(slot)
            updated.append(slot)
        if inserted:
            self.updated_at = now
            self._prune(now)
        return updated

    def snapshot(self) -> dict:
        return profile_snapshot(
            self.agent_id,
            self.power_profile,
            self.location_profile,
            self.updated_at,
        )


def power_slot_to_dict(slot: PowerProfileSlot) -> dict:
    return {
        "weekday": slot.weekday,
        "minute_of_day": slot.minute_of_day,
        "p_running": slot.p_running,
        "p_app_running": slot.p_app_running,
        "p_plugged": slot.p_plugged,
        "mean_power_normal": slot.mean_power_normal,
        "mean_power_save": slot.mean_power_save,
    }


def location_slot_to_dict(slot: LocationProfileSlot) -> dict:
    return {
        "weekday": slot.weekday,
        "quarter_of_day": slot.quarter_of_day,
        "latitude": slot.latitude,
        "longitude": slot.longitude,
        "accuracy": slot.accuracy,
        "zip": slot.zip,
        "p_present": slot.p_present,
    }


def profile_snapshot(
    agent_id: str,
    power: PowerProfile,
    location: LocationProfile,
    updated_at: int,
) -> dict:
    """Full snapshot document; slot arrays dense and ordered by (weekday, index)."""
    return {
        "agent_id": agent_id,
        "utc_offset_min": power.utc_offset_min,
        "power_slots": [power_slot_to_dict(s) for s in power.slots],
        "location_slots": [location_slot_to_dict(s) for s in location.slots],
        "updated_at": updated_at,
    }


def power_profile_from_snapshot(doc: dict) -> PowerProfile:
    slots = [PowerProfileSlot(**{k: s[k] for k in (
        "weekday", "minute_of_day", "p_running", "p_app_running", "p_plugged",
        "mean_power_normal", "mean_power_save")}) for s in doc["power_slots"]]
    return PowerProfile(slots, doc.get("utc_offset_min", 0))


def location_profile_from_snapshot(doc: dict) -> LocationProfile:
    slots = [LocationProfileSlot(**{k: s[k] for k in (
        "weekday", "quarter_of_day", "latitude", "longitude", "accuracy",
        "zip", "p_present")}) for s in doc["location_slots"]]
    return LocationProfile(slots, doc.get("utc_offset_min", 0))
