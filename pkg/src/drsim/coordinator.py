"""Demand-response coordinator.

Keeps the agent registry fed by bus messages (registrations, profile slot
deltas, heartbeats, statuses), selects curtailment candidates by great-circle
radius around a turbine, estimates each candidate's curtailable watts from
its power profile over the pre-event window, publishes per-agent schedules
greedily until the requested reduction is covered, and tracks event
participation and latencies.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .profiles import (
    LocationProfile,
    LocationProfileSlot,
    PowerProfile,
    PowerProfileSlot,
    quarter_slot,
)
from .simclock import WallClock

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_RADIUS_M = 1000.0
# Two missed 90 s heartbeats mark an agent offline.
ONLINE_WINDOW_MS = 180_000
CONTRIBUTION_WINDOW_MIN = 20
# Trailing reference for supply-drop detection.
SUPPLY_REFERENCE_WINDOW_MS = 300_000
COMPLETION_GRACE_MS = 30_000

SCHEDULED = "scheduled"
ACTIVE = "active"
COMPLETED = "completed"
ABORTED = "aborted"

_TRANSITIONS = {
    (SCHEDULED, ACTIVE),
    (ACTIVE, COMPLETED),
    (SCHEDULED, ABORTED),
    (ACTIVE, ABORTED),
}


def geo_distance(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle (haversine) distance in meters."""
    for lat, lon in ((lat1, lon1), (lat2, lon2)):
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError("coordinates must be finite")
        if abs(lat) > 90.0 or abs(lon) > 180.0:
            raise ValueError(f"invalid coordinates ({lat}, {lon})")
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return EARTH_RADIUS_M * 2.0 * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))


@dataclass(frozen=True)
class DRSchedule:
    """One agent's curtailment assignment within an event."""

    schedule_id: str
    event_id: str
    agent_id: str
    start: int  # ms
    duration_s: int
    estimated_contribution: float  # watts

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("schedule duration must be positive")

    @property
    def end(self) -> int:
        return self.start + self.duration_s * 1000

    def to_payload(self) -> dict:
        return {
            "schedule_id": self.schedule_id,
            "event_id": self.event_id,
            "agent_id": self.agent_id,
            "start_ms": self.start,
            "duration_s": self.duration_s,
            "estimated_contribution_w": self.estimated_contribution,
        }

    @classmethod
    def from_payload(cls, doc: dict) -> "DRSchedule":
        return cls(
            schedule_id=doc["schedule_id"],
            event_id=doc["event_id"],
            agent_id=doc["agent_id"],
            start=doc["start_ms"],
            duration_s=doc["duration_s"],
            estimated_contribution=doc["estimated_contribution_w"],
        )


@dataclass
class DREvent:
    """Coordinator-side record of one curtailment event."""

    event_id: str
    turbine_lat: float
    turbine_lon: float
    requested_reduction_w: float
    duration_min: float
    start: int  # ms (resolved; "immediate" requests resolve to the request time)
    requested_at: int
    state: str = SCHEDULED
    selected: list[tuple[str, float]] = field(default_factory=list)
    published_at: int | None = None
    schedule_latency_ms: int | None = None
    join_latency_ms: int | None = None
    under_supplied: bool = False
    partial_participation: bool = False
    outcome: str | None = None
    joins: dict[str, int] = field(default_factory=dict)
    leaves: dict[str, int] = field(default_factory=dict)
    declines: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.requested_reduction_w <= 0:
            raise ValueError("requested reduction must be positive")
        if self.duration_min <= 0:
            raise ValueError("event duration must be positive")

    @property
    def end(self) -> int:
        return self.start + int(self.duration_min * 60_000)

    @property
    def selected_ids(self) -> list[str]:
        return [agent_id for agent_id, _ in self.selected]

    def advance(self, new_state: str) -> None:
        if (self.state, new_state) not in _TRANSITIONS:
            raise ValueError(f"illegal event transition {self.state} -> {new_state}")
        self.state = new_state

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "turbine": {"lat": self.turbine_lat, "lon": self.turbine_lon},
            "requested_reduction_w": self.requested_reduction_w,
            "duration_min": self.duration_min,
            "start_ms": self.start,
            "requested_at_ms": self.requested_at,
            "published_at_ms": self.published_at,
            "state": self.state,
            "selected": [
                {"agent_id": a, "estimated_contribution_w": w} for a, w in self.selected
            ],
            "schedule_latency_ms": self.schedule_latency_ms,
            "join_latency_ms": self.join_latency_ms,
            "under_supplied": self.under_supplied,
            "partial_participation": self.partial_participation,
            "outcome": self.outcome,
            "joins": dict(self.joins),
            "leaves": dict(self.leaves),
            "declines": dict(self.declines),
        }


@dataclass(frozen=True)
class SupplyTrace:
    """Simulated renewable output: ordered (timestamp ms, watts) pairs."""

    points: tuple[tuple[int, float], ...]
    drop_threshold_w: float

    def __post_init__(self):
        if self.drop_threshold_w <= 0:
            raise ValueError("drop threshold must be positive")
        last = None
        for ts, out in self.points:
            if out < 0:
                raise ValueError("supply output must be non-negative")
            if last is not None and ts <= last:
                raise ValueError("supply timestamps must be increasing")
            last = ts


@dataclass(frozen=True)
class DRRequest:
    """A curtailment request emitted when supply drops."""

    at: int  # ms
    requested_reduction_w: float
    duration_min: float


def monitor_supply(
    trace: SupplyTrace,
    duration_min: float,
    reference_window_ms: int = SUPPLY_REFERENCE_WINDOW_MS,
) -> list[DRRequest]:
    """Emit one request per drop that exceeds the threshold.

    The reference is the maximum output over the trailing window; a request
    fires on the sample where the drop first crosses the threshold.
    """
    requests: list[DRRequest] = []
    in_drop = False
    points = trace.points
    for i, (ts, out) in enumerate(points):
        window = [
            o for t, o in points[:i] if ts - reference_window_ms <= t < ts
        ]
        reference = max(window) if window else out
        drop = reference - out
        if drop > trace.drop_threshold_w:
            if not in_drop:
                requests.append(
                    DRRequest(at=ts, requested_reduction_w=drop, duration_min=duration_min)
                )
            in_drop = True
        else:
            in_drop = False
    return requests


def estimate_contribution(
    profile: PowerProfile, start: int, window_min: int = CONTRIBUTION_WINDOW_MIN
) -> float:
    """Curtailable watts from the profile slots covering the pre-event window.

    Per slot the curtailable load is (normal - save mode mean) discounted by
    the running and plugged probabilities; the estimate is the slot mean over
    [start - window, start), floored at zero.
    """
    if window_min < 1:
        raise ValueError("window must be at least one minute")
    total = 0.0
    for j in range(window_min):
        slot = profile.slot_at(start - (window_min - j) * 60_000)
        total += (
            (slot.mean_power_normal - slot.mean_power_save)
            * slot.p_running
            * slot.p_plugged
        )
    return max(0.0, total / window_min)


def track_participation(
    event: DREvent,
    statuses: Iterable[dict],
    now: int | None = None,
    grace_ms: int = COMPLETION_GRACE_MS,
) -> DREvent:
    """Fold agent status messages into the event record.

    join_latency is the delta from schedule publication to the last selected
    agent's join.  When ``now`` is given and lies past the event end plus the
    grace period, the event completes, flagged partial if anyone never joined.
    """
    selected = set(event.selected_ids)
    for status in statuses:
        agent_id = status["agent_id"]
        if status.get("event_id") != event.event_id or agent_id not in selected:
            continue
        kind = status["status"]
        at = status["at_ms"]
        if kind == "joined":
            event.joins.setdefault(agent_id, at)
        elif kind == "left":
            event.leaves.setdefault(agent_id, at)
        elif kind == "declined":
            event.declines.setdefault(agent_id, at)
            event.partial_participation = True

    if event.published_at is not None and selected and set(event.joins) == selected:
        if event.join_latency_ms is None:
            event.join_latency_ms = max(event.joins.values()) - event.published_at
        if event.state == SCHEDULED:
            event.advance(ACTIVE)

    if now is not None and event.state in (SCHEDULED, ACTIVE) and now >= event.end + grace_ms:
        if set(event.joins) != selected:
            event.partial_participation = True
        if event.state == SCHEDULED:
            event.advance(ACTIVE)
        event.advance(COMPLETED)
    return event


@dataclass
class RegistryEntry:
    """One registered agent as the coordinator sees it."""

    agent_id: str
    os: str
    utc_offset_min: int
    last_heartbeat: int
    power_profile: PowerProfile
    location_profile: LocationProfile
    save_drop_fraction: float | None = None
    committed_event: str | None = None

    def online(self, now: int, window_ms: int = ONLINE_WINDOW_MS) -> bool:
        return now - self.last_heartbeat <= window_ms

    def location_at(self, at: int) -> LocationProfileSlot:
        return self.location_profile.slot_at(at)


class Coordinator:
    """Registry, scheduling, and event bookkeeping over a bus.

    Event creation is serialized behind one lock; registry reads and status
    ingestion are safe from bus delivery threads.
    """

    def __init__(
        self,
        bus,
        clock=None,
        scheduler=None,
        radius_m: float = DEFAULT_RADIUS_M,
        online_window_ms: int = ONLINE_WINDOW_MS,
        contribution_window_min: int = CONTRIBUTION_WINDOW_MIN,
        grace_ms: int = COMPLETION_GRACE_MS,
    ):
        self.bus = bus
        self.clock = clock or WallClock()
        self.scheduler = scheduler
        self.radius_m = radius_m
        self.online_window_ms = online_window_ms
        self.contribution_window_min = contribution_window_min
        self.grace_ms = grace_ms
        self._lock = threading.RLock()
        self._registry: dict[str, RegistryEntry] = {}
        self._events: dict[str, DREvent] = {}
        # Event ids carry the coordinator's start time so ids from a prior
        # incarnation replayed off the bus can never collide with new ones.
        self._era = self.clock.now_ms()
        self._event_counter = 0
        self._schedule_counter = 0
        self._frame_seq = 0
        self._listeners: list[Callable[[dict], None]] = []
        self.supply_trace: SupplyTrace | None = None

    def attach(self) -> None:
        """Subscribe to the agent-facing topics with full catch-up, so a
        coordinator joining (or restarting) after agents rebuilds its registry
        from the retained bus history."""
        self.bus.subscribe("registry/*", self._on_registration, from_seq=1)
        self.bus.subscribe("profiles/*", self._on_profile_delta, from_seq=1)
        self.bus.subscribe("heartbeats/*", self._on_heartbeat, from_seq=1)
        self.bus.subscribe("status/*", self._on_status, from_seq=1)

    # -- listeners (admin stream) -------------------------------------------

    def add_listener(self, fn: Callable[[dict], None]) -> None:
        with self._lock:
            self._listeners.append(fn)

    def remove_listener(self, fn: Callable[[dict], None]) -> None:
        with self._lock:
            if fn in self._listeners:
                self._listeners.remove(fn)

    def _emit(self, frame_type: str, data: dict) -> None:
        with self._lock:
            self._frame_seq += 1
            frame = {"seq": self._frame_seq, "type": frame_type, "data": data}
            listeners = list(self._listeners)
        for fn in listeners:
            try:
                fn(frame)
            except Exception:
                pass

    # -- bus ingestion -------------------------------------------------------

    def _touch(self, agent_id: str, at: int) -> None:
        entry = self._registry.get(agent_id)
        if entry is not None:
            entry.last_heartbeat = max(entry.last_heartbeat, at)

    def _on_registration(self, env) -> None:
        doc = env.payload
        power_init = doc["power_init"]
        location_init = doc["location_init"]
        utc_offset = doc.get("utc_offset_min", 0)
        power = PowerProfile(
            [
                PowerProfileSlot(
                    weekday=d,
                    minute_of_day=m,
                    p_running=0.5,
                    p_app_running=0.5,
                    p_plugged=0.5,
                    mean_power_normal=power_init["mean_power_normal"],
                    mean_power_save=power_init["mean_power_save"],
                )
                for d in range(7)
                for m in range(1440)
            ],
            utc_offset,
        )
        location = LocationProfile(
            [
                LocationProfileSlot(
                    weekday=d,
                    quarter_of_day=q,
                    latitude=location_init["latitude"],
                    longitude=location_init["longitude"],
                    accuracy=location_init["accuracy"],
                    zip=location_init["zip"],
                    p_present=1.0,
                )
                for d in range(7)
                for q in range(96)
            ],
            utc_offset,
        )
        with self._lock:
            self._registry[doc["agent_id"]] = RegistryEntry(
                agent_id=doc["agent_id"],
                os=doc["os"],
                utc_offset_min=utc_offset,
                last_heartbeat=doc["at_ms"],
                power_profile=power,
                location_profile=location,
                save_drop_fraction=doc.get("save_drop_fraction"),
            )
        self._emit("agent_status", {"agent_id": doc["agent_id"], "status": "registered",
                                    "at_ms": doc["at_ms"]})

    def _on_profile_delta(self, env) -> None:
        doc = env.payload
        with self._lock:
            entry = self._registry.get(doc["agent_id"])
            if entry is None:
                return
            slot = doc["slot"]
            if doc["kind"] == "power":
                entry.power_profile._set(PowerProfileSlot(**slot))
            elif doc["kind"] == "location":
                entry.location_profile._set(LocationProfileSlot(**slot))
            self._touch(doc["agent_id"], doc["updated_at"])

    def _on_heartbeat(self, env) -> None:
        doc = env.payload
        with self._lock:
            self._touch(doc["agent_id"], doc["at_ms"])
        self._emit("agent_status", {"agent_id": doc["agent_id"], "status": "heartbeat",
                                    "at_ms": doc["at_ms"]})

    def _on_status(self, env) -> None:
        doc = env.payload
        with self._lock:
            self._touch(doc["agent_id"], doc["at_ms"])
            event = self._events.get(doc.get("event_id"))
            if event is None:
                return
            before = event.state
            track_participation(event, [doc])
            changed = event.state != before
            if event.state in (COMPLETED, ABORTED):
                self._release(event)
        self._emit("agent_status", doc)
        if changed:
            self._emit("event_state", event.to_dict())

    # -- selection and scheduling ---------------------------------------------

    def select_candidates(
        self,
        turbine_lat: float,
        turbine_lon: float,
        radius_m: float | None = None,
        at: int | None = None,
    ) -> list[str]:
        """Online agents whose profiled location at ``at`` is within radius."""
        radius = self.radius_m if radius_m is None else radius_m
        if radius <= 0:
            raise ValueError("radius must be positive")
        now = self.clock.now_ms() if at is None else at
        with self._lock:
            out = []
            for agent_id in sorted(self._registry):
                entry = self._registry[agent_id]
                if not entry.online(self.clock.now_ms(), self.online_window_ms):
                    continue
                slot = entry.location_at(now)
                d = geo_distance(turbine_lat, turbine_lon, slot.latitude, slot.longitude)
                if d <= radius:
                    out.append(agent_id)
            return out

    def _next_event_id(self) -> str:
        self._event_counter += 1
        return f"ev-{self._era}-{self._event_counter:04d}"

    def _next_schedule_id(self, event_id: str, agent_id: str) -> str:
        self._schedule_counter += 1
        return f"{event_id}/{agent_id}/{self._schedule_counter:04d}"

    def schedule_event(
        self,
        turbine_lat: float,
        turbine_lon: float,
        requested_reduction_w: float,
        duration_min: float,
        start="immediate",
        radius_m: float | None = None,
    ) -> DREvent:
        """Create an event: select by radius, sort by estimated contribution,
        pick greedily until the request is covered (or flag under-supply),
        and publish one schedule per selected agent."""
        with self._lock:
            requested_at = self.clock.now_ms()
            start_ms = requested_at if start == "immediate" else int(start)
            event = DREvent(
                event_id=self._next_event_id(),
                turbine_lat=turbine_lat,
                turbine_lon=turbine_lon,
                requested_reduction_w=requested_reduction_w,
                duration_min=duration_min,
                start=start_ms,
                requested_at=requested_at,
            )
            candidates = [
                a
                for a in self.select_candidates(turbine_lat, turbine_lon, radius_m, start_ms)
                if self._registry[a].committed_event is None
            ]
            if not candidates:
                event.outcome = "no-candidates"
                event.state = ABORTED
                self._events[event.event_id] = event
                self._emit("event_state", event.to_dict())
                return event

            estimates = [
                (a, estimate_contribution(
                    self._registry[a].power_profile, start_ms, self.contribution_window_min))
                for a in candidates
            ]
            estimates.sort(key=lambda kv: (-kv[1], kv[0]))
            selected: list[tuple[str, float]] = []
            total = 0.0
            for agent_id, contribution in estimates:
                if total >= requested_reduction_w:
                    break
                selected.append((agent_id, contribution))
                total += contribution
            if total < requested_reduction_w:
                selected = estimates
                event.under_supplied = True
            event.selected = list(selected)

            duration_s = max(1, int(round(duration_min * 60)))
            published_at = requested_at
            for agent_id, contribution in selected:
                schedule = DRSchedule(
                    schedule_id=self._next_schedule_id(event.event_id, agent_id),
                    event_id=event.event_id,
                    agent_id=agent_id,
                    start=start_ms,
                    duration_s=duration_s,
                    estimated_contribution=contribution,
                )
                env = self.bus.publish(f"schedules/{agent_id}", schedule.to_payload())
                published_at = max(published_at, env.published_at)
                self._registry[agent_id].committed_event = event.event_id
            event.published_at = published_at
            event.schedule_latency_ms = published_at - requested_at
            self._events[event.event_id] = event
            if self.scheduler is not None:
                self.scheduler.call_at(event.end, lambda e=event: self._on_event_end(e))
                self.scheduler.call_at(
                    max(event.start, self.clock.now_ms()),
                    lambda e=event: self._on_event_start(e),
                )
        self._emit("event_state", event.to_dict())
        return event

    def _on_event_start(self, event: DREvent) -> None:
        with self._lock:
            if event.state == SCHEDULED:
                event.advance(ACTIVE)
        self._emit("event_state", event.to_dict())

    def _on_event_end(self, event: DREvent) -> None:
        with self._lock:
            if event.state in (COMPLETED, ABORTED):
                return
            if set(event.joins) != set(event.selected_ids):
                event.partial_participation = True
            if event.state == SCHEDULED:
                event.advance(ACTIVE)
            event.advance(COMPLETED)
            self._release(event)
        self._emit("event_state", event.to_dict())

    def _release(self, event: DREvent) -> None:
        for agent_id in event.selected_ids:
            entry = self._registry.get(agent_id)
            if entry is not None and entry.committed_event == event.event_id:
                entry.committed_event = None

    def load_supply_trace(self, trace: SupplyTrace, duration_min: float) -> list[DRRequest]:
        """Store the trace and return the requests its drops imply."""
        with self._lock:
            self.supply_trace = trace
        return monitor_supply(trace, duration_min)

    # -- read side -------------------------------------------------------------

    def event(self, event_id: str) -> DREvent | None:
        with self._lock:
            return self._events.get(event_id)

    def events(self) -> list[DREvent]:
        with self._lock:
            return list(self._events.values())

    def agents_overview(self) -> list[dict]:
        now = self.clock.now_ms()
        with self._lock:
            return [
                {
                    "agent_id": e.agent_id,
                    "os": e.os,
                    "utc_offset_min": e.utc_offset_min,
                    "last_heartbeat_ms": e.last_heartbeat,
                    "online": e.online(now, self.online_window_ms),
                    "committed_event": e.committed_event,
                }
                for e in (self._registry[a] for a in sorted(self._registry))
            ]

    def agent_profiles(self, agent_id: str) -> dict | None:
        from .profiles import profile_snapshot

        with self._lock:
            entry = self._registry.get(agent_id)
            if entry is None:
                return None
            return profile_snapshot(
                agent_id, entry.power_profile, entry.location_profile, entry.last_heartbeat
            )

    def registry_entry(self, agent_id: str) -> RegistryEntry | None:
        with self._lock:
            return self._registry.get(agent_id)
