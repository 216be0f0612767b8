"""Agent simulation: metrics cadence, power modes, schedules, loops."""

import numpy as np
import pytest

from drsim.agents import (
    AgentDescriptor,
    Battery,
    SimAgent,
    WorkloadPhase,
    apply_power_mode,
    generate_metrics,
)
from drsim.bus import BusUnreachableError, MessageBus
from drsim.coordinator import Coordinator, DRSchedule
from drsim.profiles import LocationFix
from drsim.simclock import SimScheduler, VirtualClock
from drsim.synthetic import default_true_model

from helpers import MONDAY_MS, TURBINE, intercept_model

HOME = LocationFix(MONDAY_MS, TURBINE[0], TURBINE[1], 10.0, "80333")


def descriptor(os="ubuntu", **kw):
    return AgentDescriptor(agent_id=f"{os}-1", os=os, home_fix=HOME, **kw)


def make_agent(os="ubuntu", start_ms=MONDAY_MS, workload=None, **desc_kw):
    clock = VirtualClock(start_ms)
    scheduler = SimScheduler(clock)
    bus = MessageBus(clock=clock)
    agent = SimAgent(
        descriptor(os, **desc_kw),
        intercept_model(os, "normal", 30.0),
        intercept_model(os, "save", 25.0),
        bus,
        clock,
        scheduler,
        workload=workload,
        seed=7,
    )
    return agent, bus, clock, scheduler


# ---------------------------------------------------------------------------
# Descriptor and power modes
# ---------------------------------------------------------------------------

def test_save_drop_defaults():
    assert descriptor("windows").save_drop_fraction == 0.2646
    assert descriptor("ubuntu").save_drop_fraction == 0.0695


def test_apply_power_mode_windows():
    assert apply_power_mode(descriptor("windows"), "save", 40.0) == pytest.approx(29.416)


def test_apply_power_mode_ubuntu():
    assert apply_power_mode(descriptor("ubuntu"), "save", 40.0) == pytest.approx(37.22)


def test_apply_power_mode_normal_identity():
    for os in ("windows", "ubuntu"):
        assert apply_power_mode(descriptor(os), "normal", 40.0) == 40.0


# ---------------------------------------------------------------------------
# Metrics generation
# ---------------------------------------------------------------------------

def test_metrics_cadence_matches_os():
    rng = np.random.default_rng(0)
    phase = WorkloadPhase(duration_s=60, cpu=50.0)
    ubuntu = generate_metrics(descriptor("ubuntu"), phase, MONDAY_MS, rng)
    windows = generate_metrics(descriptor("windows"), phase, MONDAY_MS, rng)
    assert len(ubuntu) == 60
    assert len(windows) == 20
    assert [s.timestamp for s in ubuntu[:3]] == [MONDAY_MS, MONDAY_MS + 1000, MONDAY_MS + 2000]
    assert [s.timestamp for s in windows[:3]] == [MONDAY_MS, MONDAY_MS + 3000, MONDAY_MS + 6000]


def test_metrics_power_in_meter_band():
    rng = np.random.default_rng(1)
    phase = WorkloadPhase(duration_s=300, cpu=95.0, net_kb=1500.0, disk_req=200.0)
    for s in generate_metrics(descriptor("windows"), phase, MONDAY_MS, rng):
        assert 8.0 <= s.real_power <= 65.0


def test_metrics_idle_phase_is_baseline_plus_noise():
    rng = np.random.default_rng(2)
    idle = WorkloadPhase(duration_s=600, cpu=0.0, mem=0.0, net_kb=0.0, disk_req=0.0,
                         brightness=50.0, plugged=True)
    agent = descriptor("ubuntu")
    battery = Battery(remaining_pct=100.0)  # full: no charging load
    samples = generate_metrics(agent, idle, MONDAY_MS, rng, battery=battery, noise_sd=0.5)
    truth = default_true_model("ubuntu", "normal", 0.5)
    expected = [truth.mean_power(s) for s in samples]
    residuals = [s.real_power - e for s, e in zip(samples, expected)]
    assert abs(float(np.mean(residuals))) < 0.1
    assert float(np.std(residuals)) < 1.0


def test_battery_state_machine():
    battery = Battery(remaining_pct=99.9)
    rate, charging = battery.step(60_000, plugged=True, load_w=20.0)
    assert charging and rate > 0
    battery.remaining = 100.0
    rate, charging = battery.step(60_000, plugged=True, load_w=20.0)
    assert not charging and rate == 0.0
    rate, charging = battery.step(60_000, plugged=False, load_w=20.0)
    assert not charging and rate == -20.0
    assert battery.remaining < 100.0


# ---------------------------------------------------------------------------
# Schedule handling
# ---------------------------------------------------------------------------

def schedule_for(agent, start, duration_s=300, sid="s-1", event="ev-0001"):
    return DRSchedule(
        schedule_id=sid,
        event_id=event,
        agent_id=agent.descriptor.agent_id,
        start=start,
        duration_s=duration_s,
        estimated_contribution=5.0,
    )


def test_schedule_window_activation():
    agent, _, clock, scheduler = make_agent()
    agent.register()
    t0 = clock.now_ms() + 60_000
    agent.handle_schedule(schedule_for(agent, t0, duration_s=300))
    assert agent.current_mode() == "normal"
    scheduler.run_until(t0)
    assert agent.current_mode() == "save"
    scheduler.run_until(t0 + 299_999)
    assert agent.current_mode() == "save"
    scheduler.run_until(t0 + 300_000)
    assert agent.current_mode() == "normal"
    statuses = [(m["status"], m["at_ms"]) for m in agent.status_log]
    assert statuses == [("joined", t0), ("left", t0 + 300_000)]


def test_schedule_duplicate_is_idempotent():
    agent, _, clock, scheduler = make_agent()
    agent.register()
    t0 = clock.now_ms() + 10_000
    s = schedule_for(agent, t0)
    agent.handle_schedule(s)
    agent.handle_schedule(s)
    scheduler.run_until(t0 + 400_000)
    kinds = [m["status"] for m in agent.status_log]
    assert kinds == ["joined", "left"]


def test_schedule_opt_out_declines():
    agent, _, clock, scheduler = make_agent(opt_out=True)
    agent.register()
    t0 = clock.now_ms() + 10_000
    agent.handle_schedule(schedule_for(agent, t0))
    scheduler.run_until(t0 + 400_000)
    assert [m["status"] for m in agent.status_log] == ["declined"]
    assert agent.current_mode() == "normal"


def test_schedule_stale_rejected():
    agent, _, clock, _ = make_agent()
    agent.register()
    old = schedule_for(agent, clock.now_ms() - 600_000, duration_s=60)
    agent.handle_schedule(old)
    assert [m["status"] for m in agent.status_log] == ["stale"]


def test_schedule_for_other_agent_ignored():
    agent, _, clock, _ = make_agent()
    agent.register()
    s = DRSchedule("x", "ev", "someone-else", clock.now_ms() + 1000, 60, 1.0)
    agent.handle_schedule(s)
    assert agent.status_log == []


def test_overlapping_schedules_union_semantics():
    agent, _, clock, scheduler = make_agent()
    agent.register()
    t0 = clock.now_ms() + 10_000
    agent.handle_schedule(schedule_for(agent, t0, duration_s=300, sid="s1", event="e1"))
    agent.handle_schedule(
        schedule_for(agent, t0 + 120_000, duration_s=300, sid="s2", event="e2"))
    scheduler.run_until(t0 + 310_000)  # first window over, second still open
    assert agent.current_mode() == "save"
    scheduler.run_until(t0 + 420_000)
    assert agent.current_mode() == "normal"
    # Matched join/leave per event, join before leave.
    for event in ("e1", "e2"):
        mine = [m for m in agent.status_log if m["event_id"] == event]
        assert [m["status"] for m in mine] == ["joined", "left"]


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def test_loops_cadence_nine_minutes():
    agent, bus, clock, scheduler = make_agent()
    agent.register()
    agent.start_loops()
    scheduler.run_for(9 * 60_000)
    topic = f"profiles/{agent.descriptor.agent_id}"
    deltas = bus.read(topic)
    location_updates = [e for e in deltas if e.payload["kind"] == "location"]
    assert len(location_updates) == 6
    assert len(agent.profiler.activity) == 6
    heartbeats = bus.read(f"heartbeats/{agent.descriptor.agent_id}")
    assert len(heartbeats) == 6
    # Metrics cadence: one power reading per second on ubuntu.
    assert len(agent.profiler.readings) == 9 * 60


def test_loops_pause_backfills_activity():
    agent, _, clock, scheduler = make_agent()
    agent.register()
    agent.start_loops()
    scheduler.run_for(3 * 60_000)
    agent.stop()
    scheduler.run_for(10 * 60_000)  # paused
    agent.start_loops()
    scheduler.run_for(2 * 60_000)
    backfills = [a for a in agent.profiler.activity if not a.running]
    # Gap between last pre-pause tick and first post-pause tick is 690 s.
    assert len(backfills) == 690_000 // 90_000 - 1


def test_offline_buffering_preserves_messages():
    class FlakyBus:
        def __init__(self):
            self.bus = MessageBus()
            self.down = False

        def publish(self, topic, payload):
            if self.down:
                raise BusUnreachableError("down")
            return self.bus.publish(topic, payload)

        def subscribe(self, pattern, callback, from_seq=None):
            return self.bus.subscribe(pattern, callback, from_seq)

    clock = VirtualClock(MONDAY_MS)
    scheduler = SimScheduler(clock)
    flaky = FlakyBus()
    coordinator = Coordinator(flaky, clock=clock, scheduler=scheduler)
    coordinator.attach()
    agent = SimAgent(descriptor(), intercept_model("ubuntu", "normal", 30.0),
                     intercept_model("ubuntu", "save", 25.0), flaky, clock, scheduler,
                     seed=3)
    agent.register()
    agent.start_loops()
    scheduler.run_for(60_000)
    published_before = len(flaky.bus.read(f"profiles/{agent.descriptor.agent_id}"))
    flaky.down = True
    scheduler.run_for(60_000)
    assert agent.buffered > 0
    buffered = agent.buffered
    published_during = len(flaky.bus.read(f"profiles/{agent.descriptor.agent_id}"))
    assert published_during == published_before
    flaky.down = False
    scheduler.run_for(2_000)  # next ticks flush the backlog in order
    assert agent.buffered == 0
    deltas = flaky.bus.read(f"profiles/{agent.descriptor.agent_id}")
    assert len(deltas) >= published_before + buffered
    ts = [e.payload["updated_at"] for e in deltas]
    assert ts == sorted(ts)
    # No profile loss: the coordinator's replica equals the agent's snapshot.
    entry = coordinator.registry_entry(agent.descriptor.agent_id)
    assert entry.power_profile.slots == agent.profiler.power_profile.slots
    assert entry.location_profile.slots == agent.profiler.location_profile.slots


def test_fleet_reproducibility_identical_status_logs():
    import json

    def run():
        clock = VirtualClock(MONDAY_MS)
        scheduler = SimScheduler(clock)
        bus = MessageBus(clock=clock)
        coordinator = Coordinator(bus, clock=clock, scheduler=scheduler)
        coordinator.attach()
        agents = []
        for i, os in enumerate(("windows", "ubuntu")):
            a = SimAgent(
                AgentDescriptor(agent_id=f"{os}-{i}", os=os, home_fix=HOME),
                intercept_model(os, "normal", 40.0),
                intercept_model(os, "save", 30.0),
                bus, clock, scheduler, seed=42,
            )
            a.register()
            a.start_loops()
            agents.append(a)
        scheduler.run_for(5 * 60_000)
        coordinator.schedule_event(*TURBINE, requested_reduction_w=100.0, duration_min=2.0)
        scheduler.run_for(5 * 60_000)
        return json.dumps([m for a in agents for m in a.status_log], sort_keys=True)

    assert run() == run()
