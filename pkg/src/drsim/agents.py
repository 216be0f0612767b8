"""Simulated demand-side laptop agents.

Each agent runs the demand-manager loops against an injectable clock and
scheduler: metrics sampling at the OS cadence (1 s ubuntu, 3 s windows),
location/activity/heartbeat ticks every 90 s, profile maintenance, schedule
reception with join/leave/declined/stale statuses, and power-save actuation
modeled as a fractional consumption drop.

Ground-truth consumption (the power-meter stand-in) comes from the synthetic
generating model plus Gaussian noise, clamped to the meter band; it is kept
strictly separate from the model-estimated readings that feed the profiles.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .bus import BusUnreachableError
from .coordinator import DRSchedule
from .power_model import MetricsSample, PowerModel, predict
from .profiles import (
    AgentProfiler,
    LocationFix,
    PowerReading,
    location_slot_to_dict,
    power_slot_to_dict,
)
from .synthetic import SAVE_DROP_FRACTIONS, default_true_model

OS_SAMPLE_INTERVAL_MS = {"ubuntu": 1000, "windows": 3000}
LOCATION_INTERVAL_MS = 90_000
ACTIVITY_INTERVAL_MS = 90_000
HEARTBEAT_INTERVAL_MS = 90_000

METER_NOISE_SD_W = 0.6


@dataclass
class AgentDescriptor:
    """Static identity and capability of one simulated laptop."""

    agent_id: str
    os: str
    home_fix: LocationFix
    work_fix: LocationFix | None = None
    save_drop_fraction: float | None = None
    opt_out: bool = False
    online: bool = True
    last_heartbeat: int = 0
    utc_offset_min: int = 0

    def __post_init__(self):
        if self.os not in OS_SAMPLE_INTERVAL_MS:
            raise ValueError(f"unknown os {self.os!r}")
        if self.save_drop_fraction is None:
            self.save_drop_fraction = SAVE_DROP_FRACTIONS[self.os]
        if not (0.0 <= self.save_drop_fraction <= 1.0):
            raise ValueError("save_drop_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class WorkloadPhase:
    """One stretch of synthetic load driven onto the machine."""

    duration_s: int
    cpu: float
    mem: float = 35.0
    net_kb: float = 0.0
    disk_req: float = 0.0
    disk_kb: float = 0.0
    brightness: float = 70.0
    plugged: bool = True

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("phase duration must be positive")


def apply_power_mode(agent: AgentDescriptor, mode: str, watts: float) -> float:
    """Consumption under a power mode: save scales by (1 - drop), normal is
    the identity."""
    if mode == "save":
        return watts * (1.0 - agent.save_drop_fraction)
    if mode == "normal":
        return watts
    raise ValueError(f"unknown power mode {mode!r}")


class Battery:
    """Minimal battery: linear charge while plugged below full, linear
    load-proportional discharge otherwise."""

    def __init__(self, remaining_pct: float = 80.0, charge_w: float = 15.0,
                 capacity_wh: float = 56.0):
        self.remaining = remaining_pct
        self.charge_w = charge_w
        self.capacity_wh = capacity_wh

    def step(self, dt_ms: int, plugged: bool, load_w: float) -> tuple[float, bool]:
        """Advance by dt; returns (batt_rate watts, charging flag)."""
        hours = dt_ms / 3_600_000.0
        if plugged and self.remaining < 100.0:
            self.remaining = min(100.0, self.remaining + 100.0 * self.charge_w * hours / self.capacity_wh)
            return self.charge_w, True
        if plugged:
            return 0.0, False
        self.remaining = max(0.0, self.remaining - 100.0 * load_w * hours / self.capacity_wh)
        return -load_w, False


def generate_metrics(
    agent: AgentDescriptor,
    phase: WorkloadPhase,
    start_ms: int,
    rng: np.random.Generator,
    battery: Battery | None = None,
    noise_sd: float = METER_NOISE_SD_W,
) -> list[MetricsSample]:
    """Sample stream for one phase at the agent's OS cadence.

    real_power is the generating model's mean for the sampled metrics plus
    Gaussian noise, clamped to the [8, 65] W meter band.
    """
    interval = OS_SAMPLE_INTERVAL_MS[agent.os]
    battery = battery or Battery()
    truth = default_true_model(agent.os, "normal", noise_sd)
    out = []
    for i in range(phase.duration_s * 1000 // interval):
        ts = start_ms + i * interval
        out.append(
            _sample_tick(agent, phase, ts, interval, rng, battery, truth, noise_sd)
        )
    return out


def _sample_tick(agent, phase, ts, interval, rng, battery, truth, noise_sd):
    cpu = float(np.clip(phase.cpu + rng.normal(0.0, 2.0), 0.0, 100.0))
    mem = float(np.clip(phase.mem + rng.normal(0.0, 1.0), 0.0, 100.0))
    net_kb = float(max(0.0, phase.net_kb + rng.normal(0.0, 1.0) * (phase.net_kb > 0)))
    disk_req = float(max(0.0, phase.disk_req + rng.normal(0.0, 0.5) * (phase.disk_req > 0)))
    disk_kb = float(max(0.0, phase.disk_kb))
    approx_load = 15.0 + 0.2 * cpu
    batt_rate, charging = battery.step(interval, phase.plugged, approx_load)
    sample = MetricsSample(
        timestamp=ts,
        cpu=cpu,
        brightness=phase.brightness,
        batt_rate=batt_rate,
        charging=charging,
        batt_remaining=battery.remaining,
        mem=mem,
        disk_req=disk_req,
        disk_kb=disk_kb,
        net_kb=net_kb,
    )
    power = truth.mean_power(sample) + float(rng.normal(0.0, noise_sd))
    power = float(np.clip(power, 8.0, 65.0))
    return replace(sample, real_power=power)


class SimAgent:
    """One agent process: loops, profile pushes, and schedule handling.

    All cross-agent communication goes through the bus; messages that fail
    to send are buffered in order and flushed on the next successful send.
    """

    def __init__(
        self,
        descriptor: AgentDescriptor,
        model_normal: PowerModel,
        model_save: PowerModel,
        bus,
        clock,
        scheduler,
        workload: list[WorkloadPhase] | None = None,
        seed: int = 0,
        noise_sd: float = METER_NOISE_SD_W,
    ):
        self.descriptor = descriptor
        self.bus = bus
        self.clock = clock
        self.scheduler = scheduler
        self.rng = np.random.default_rng(
            np.random.SeedSequence((seed, zlib.crc32(descriptor.agent_id.encode())))
        )
        self.noise_sd = noise_sd
        self.workload = list(workload) if workload else [WorkloadPhase(duration_s=3600, cpu=30.0)]
        self.battery = Battery()
        self.truth = default_true_model(descriptor.os, "normal", noise_sd)
        self.profiler = AgentProfiler(
            descriptor.agent_id, model_normal, model_save, descriptor.utc_offset_min
        )
        self.schedules: dict[str, DRSchedule] = {}
        self.active_windows: list[tuple[int, int, str]] = []  # (start, end, event_id)
        self.demand_log: list[tuple[int, float]] = []
        self.status_log: list[dict] = []
        self._outbox: list[tuple[str, dict]] = []
        self._tasks = []
        self._phase_index = 0
        self._phase_elapsed_ms = 0
        self._last_sample: MetricsSample | None = None

    # -- lifecycle -----------------------------------------------------------

    def register(self) -> None:
        """Initial profiling: build local profiles, announce to the provider,
        subscribe for schedules."""
        now = self.clock.now_ms()
        sample = self._tick_sample(now)
        fix = self.descriptor.home_fix
        fix = replace(fix, timestamp=now)
        self.profiler.initialize(sample, fix)
        self.descriptor.last_heartbeat = now
        self._send(
            f"registry/{self.descriptor.agent_id}",
            {
                "agent_id": self.descriptor.agent_id,
                "os": self.descriptor.os,
                "utc_offset_min": self.descriptor.utc_offset_min,
                "at_ms": now,
                "save_drop_fraction": self.descriptor.save_drop_fraction,
                "power_init": {
                    "mean_power_normal": self.profiler.power_profile.slot(0, 0).mean_power_normal,
                    "mean_power_save": self.profiler.power_profile.slot(0, 0).mean_power_save,
                },
                "location_init": {
                    "latitude": fix.latitude,
                    "longitude": fix.longitude,
                    "accuracy": fix.accuracy,
                    "zip": fix.zip,
                },
            },
        )
        self.bus.subscribe(f"schedules/{self.descriptor.agent_id}", self._on_schedule_env)

    def start_loops(self) -> None:
        interval = OS_SAMPLE_INTERVAL_MS[self.descriptor.os]
        self._tasks = [
            self.scheduler.every(interval, self._metrics_tick),
            self.scheduler.every(LOCATION_INTERVAL_MS, self._location_tick),
            self.scheduler.every(ACTIVITY_INTERVAL_MS, self._activity_tick),
            self.scheduler.every(HEARTBEAT_INTERVAL_MS, self._heartbeat_tick),
        ]

    def stop(self) -> None:
        for t in self._tasks:
            t.cancel()
        self._tasks = []

    # -- workload ------------------------------------------------------------

    def _current_phase(self) -> WorkloadPhase:
        return self.workload[self._phase_index % len(self.workload)]

    def _advance_phase(self, dt_ms: int) -> None:
        self._phase_elapsed_ms += dt_ms
        while self._phase_elapsed_ms >= self._current_phase().duration_s * 1000:
            self._phase_elapsed_ms -= self._current_phase().duration_s * 1000
            self._phase_index += 1

    def _tick_sample(self, ts: int) -> MetricsSample:
        interval = OS_SAMPLE_INTERVAL_MS[self.descriptor.os]
        sample = _sample_tick(
            self.descriptor, self._current_phase(), ts, interval,
            self.rng, self.battery, self.truth, self.noise_sd,
        )
        self._advance_phase(interval)
        self._last_sample = sample
        return sample

    # -- periodic loops --------------------------------------------------------

    def current_mode(self, now: int | None = None) -> str:
        now = self.clock.now_ms() if now is None else now
        return "save" if any(s <= now < e for s, e, _ in self.active_windows) else "normal"

    def demand_w(self, sample: MetricsSample, now: int | None = None) -> float:
        """Ground-truth grid draw right now (save drop applied when active)."""
        return apply_power_mode(self.descriptor, self.current_mode(now), sample.real_power)

    def _metrics_tick(self) -> None:
        now = self.clock.now_ms()
        sample = self._tick_sample(now)
        self.demand_log.append((now, self.demand_w(sample, now)))
        reading = PowerReading(
            timestamp=now,
            power_normal=predict(self.profiler.model_normal, sample),
            power_save=predict(self.profiler.model_save, sample),
            plugged=self._current_phase().plugged,
        )
        slot = self.profiler.record_power(reading)
        self._send(
            f"profiles/{self.descriptor.agent_id}",
            {
                "agent_id": self.descriptor.agent_id,
                "kind": "power",
                "slot": power_slot_to_dict(slot),
                "updated_at": now,
            },
        )

    def _location_tick(self) -> None:
        now = self.clock.now_ms()
        home = self.descriptor.home_fix
        fix = LocationFix(
            timestamp=now,
            latitude=home.latitude + float(self.rng.normal(0.0, 1e-5)),
            longitude=home.longitude + float(self.rng.normal(0.0, 1e-5)),
            accuracy=max(5.0, float(self.rng.normal(20.0, 3.0))),
            zip=home.zip,
        )
        slot = self.profiler.record_fix(fix)
        self._send(
            f"profiles/{self.descriptor.agent_id}",
            {
                "agent_id": self.descriptor.agent_id,
                "kind": "location",
                "slot": location_slot_to_dict(slot),
                "updated_at": now,
            },
        )

    def _activity_tick(self) -> None:
        now = self.clock.now_ms()
        for slot in self.profiler.record_activity(now):
            self._send(
                f"profiles/{self.descriptor.agent_id}",
                {
                    "agent_id": self.descriptor.agent_id,
                    "kind": "power",
                    "slot": power_slot_to_dict(slot),
                    "updated_at": now,
                },
            )

    def _heartbeat_tick(self) -> None:
        now = self.clock.now_ms()
        self.descriptor.last_heartbeat = now
        self._send(
            f"heartbeats/{self.descriptor.agent_id}",
            {"agent_id": self.descriptor.agent_id, "at_ms": now},
        )

    # -- schedules -------------------------------------------------------------

    def _on_schedule_env(self, env) -> None:
        self.handle_schedule(DRSchedule.from_payload(env.payload))

    def handle_schedule(self, schedule: DRSchedule) -> list[dict]:
        """Apply one schedule; duplicate ids are ignored.  Returns the status
        messages emitted immediately (stale / declined)."""
        if schedule.agent_id != self.descriptor.agent_id:
            return []
        if schedule.schedule_id in self.schedules:
            return []
        self.schedules[schedule.schedule_id] = schedule
        now = self.clock.now_ms()
        if schedule.end <= now:
            return [self._status(schedule.event_id, "stale")]
        if self.descriptor.opt_out:
            return [self._status(schedule.event_id, "declined")]
        self.active_windows.append((schedule.start, schedule.end, schedule.event_id))
        self.scheduler.call_at(max(schedule.start, now),
                               lambda: self._join(schedule))
        self.scheduler.call_at(schedule.end, lambda: self._leave(schedule))
        return []

    def _join(self, schedule: DRSchedule) -> None:
        self._status(schedule.event_id, "joined")

    def _leave(self, schedule: DRSchedule) -> None:
        try:
            self.active_windows.remove((schedule.start, schedule.end, schedule.event_id))
        except ValueError:
            pass
        self._status(schedule.event_id, "left")

    def set_opt_out(self, value: bool) -> None:
        self.descriptor.opt_out = value

    def _status(self, event_id: str, status: str) -> dict:
        message = {
            "agent_id": self.descriptor.agent_id,
            "event_id": event_id,
            "status": status,
            "at_ms": self.clock.now_ms(),
        }
        self.status_log.append(message)
        self._send(f"status/{self.descriptor.agent_id}", message)
        return message

    # -- transport -------------------------------------------------------------

    def _send(self, topic: str, payload: dict) -> None:
        """Publish in order, buffering locally while the bus is unreachable."""
        self._outbox.append((topic, payload))
        while self._outbox:
            t, p = self._outbox[0]
            try:
                self.bus.publish(t, p)
            except BusUnreachableError:
                return
            self._outbox.pop(0)

    @property
    def buffered(self) -> int:
        return len(self._outbox)
