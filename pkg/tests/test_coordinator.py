"""Coordinator selection, estimation, scheduling, and tracking tests."""

import pytest

from drsim.bus import MessageBus
from drsim.coordinator import (
    ABORTED,
    ACTIVE,
    COMPLETED,
    SCHEDULED,
    Coordinator,
    DREvent,
    DRRequest,
    SupplyTrace,
    estimate_contribution,
    geo_distance,
    monitor_supply,
    track_participation,
)
from drsim.profiles import PowerProfile, PowerProfileSlot
from drsim.simclock import SimScheduler, VirtualClock

from helpers import MONDAY_MS, TURBINE, registration_payload

# Frozen from an independent high-precision haversine computation.
MUNICH_PAIR_METERS = 1008.9478066985482


def make_coordinator(start_ms=MONDAY_MS):
    clock = VirtualClock(start_ms)
    scheduler = SimScheduler(clock)
    bus = MessageBus(clock=clock)
    coordinator = Coordinator(bus, clock=clock, scheduler=scheduler)
    coordinator.attach()
    return coordinator, bus, clock, scheduler


def uniform_power_profile(mean_normal, mean_save, p_running=0.5, p_plugged=0.5):
    return PowerProfile(
        [
            PowerProfileSlot(
                weekday=d,
                minute_of_day=m,
                p_running=p_running,
                p_app_running=p_running,
                p_plugged=p_plugged,
                mean_power_normal=mean_normal,
                mean_power_save=mean_save,
            )
            for d in range(7)
            for m in range(1440)
        ]
    )


# ---------------------------------------------------------------------------
# geo_distance
# ---------------------------------------------------------------------------

def test_geo_distance_zero_at_same_point():
    assert geo_distance(48.15, 11.5667, 48.15, 11.5667) == 0.0


def test_geo_distance_reference_pair():
    d = geo_distance(48.1500, 11.5667, 48.1500, 11.5803)
    assert d == pytest.approx(MUNICH_PAIR_METERS, abs=1e-6)
    assert round(d) == 1009


def test_geo_distance_symmetry():
    a = (48.1, 11.5)
    b = (48.9, 12.1)
    assert geo_distance(*a, *b) == pytest.approx(geo_distance(*b, *a), abs=1e-9)


def test_geo_distance_invalid_coordinates():
    with pytest.raises(ValueError):
        geo_distance(91.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        geo_distance(0.0, 0.0, 0.0, 181.0)
    with pytest.raises(ValueError):
        geo_distance(float("nan"), 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------

def test_select_candidates_radius_and_liveness():
    coordinator, bus, clock, _ = make_coordinator()
    lat, lon = TURBINE
    now = clock.now_ms()
    bus.publish("registry/at-turbine", registration_payload("at-turbine", lat, lon, now))
    # ~1.2 km east of the turbine (1 deg lon ~ 74.2 km at this latitude).
    far_lon = lon + 1200 / 74_200
    bus.publish("registry/far-away", registration_payload("far-away", lat, far_lon, now))
    assert geo_distance(lat, lon, lat, far_lon) > 1000
    # Inside the radius but silent for longer than the online window.
    bus.publish("registry/silent", registration_payload("silent", lat, lon, now - 300_000))

    got = coordinator.select_candidates(lat, lon, 1000.0, now)
    assert got == ["at-turbine"]


# ---------------------------------------------------------------------------
# Contribution estimation
# ---------------------------------------------------------------------------

def test_estimate_contribution_equal_means_is_zero():
    profile = uniform_power_profile(40.0, 40.0, p_running=1.0, p_plugged=1.0)
    assert estimate_contribution(profile, MONDAY_MS + 3_600_000, 20) == 0.0


def test_estimate_contribution_slot_average():
    profile = uniform_power_profile(40.0, 30.0, p_running=1.0, p_plugged=1.0)
    assert estimate_contribution(profile, MONDAY_MS + 3_600_000, 20) == pytest.approx(10.0)


def test_estimate_contribution_unplugged_is_zero():
    profile = uniform_power_profile(40.0, 30.0, p_running=1.0, p_plugged=0.0)
    assert estimate_contribution(profile, MONDAY_MS + 3_600_000, 20) == 0.0


def test_estimate_contribution_window_slots():
    # Only the 20 minutes before the start count.
    profile = uniform_power_profile(40.0, 30.0, p_running=1.0, p_plugged=1.0)
    start = MONDAY_MS + 3_600_000
    for j in range(1, 21):
        slot = profile.slot_at(start - j * 60_000)
        profile._set(
            PowerProfileSlot(
                weekday=slot.weekday,
                minute_of_day=slot.minute_of_day,
                p_running=1.0,
                p_app_running=1.0,
                p_plugged=1.0,
                mean_power_normal=20.0 + j,  # window slots differ from the rest
                mean_power_save=20.0,
            )
        )
    expected = sum(j for j in range(1, 21)) / 20
    assert estimate_contribution(profile, start, 20) == pytest.approx(expected)


def test_estimate_contribution_window_validation():
    profile = uniform_power_profile(40.0, 30.0)
    with pytest.raises(ValueError):
        estimate_contribution(profile, MONDAY_MS, window_min=0)


def test_estimate_contribution_monotone_in_normal_mean():
    profile = uniform_power_profile(40.0, 30.0, p_running=0.7, p_plugged=0.6)
    start = MONDAY_MS + 3_600_000
    base = estimate_contribution(profile, start, 20)
    slot = profile.slot_at(start - 5 * 60_000)
    profile._set(
        PowerProfileSlot(
            weekday=slot.weekday,
            minute_of_day=slot.minute_of_day,
            p_running=slot.p_running,
            p_app_running=slot.p_app_running,
            p_plugged=slot.p_plugged,
            mean_power_normal=slot.mean_power_normal + 15.0,
            mean_power_save=slot.mean_power_save,
        )
    )
    assert estimate_contribution(profile, start, 20) >= base


# ---------------------------------------------------------------------------
# Event scheduling
# ---------------------------------------------------------------------------

def register_fleet(bus, clock, contributions):
    """Register agents whose initial-profile contribution is as given.

    Initial probabilities are 0.5*0.5, so contribution = 0.25*(normal-save).
    """
    lat, lon = TURBINE
    now = clock.now_ms()
    for agent_id, watts in contributions.items():
        diff = watts / 0.25
        bus.publish(
            f"registry/{agent_id}",
            registration_payload(agent_id, lat, lon, now,
                                 mean_normal=30.0 + diff, mean_save=30.0),
        )


def test_schedule_event_greedy_selection():
    coordinator, bus, clock, _ = make_coordinator()
    register_fleet(bus, clock, {"a7": 7.0, "a5": 5.0, "a3": 3.0})
    event = coordinator.schedule_event(*TURBINE, requested_reduction_w=10.0,
                                       duration_min=5.0)
    assert [a for a, _ in event.selected] == ["a7", "a5"]
    assert sum(w for _, w in event.selected) == pytest.approx(12.0)
    assert not event.under_supplied
    assert event.state == SCHEDULED
    # Greedy minimality: removing any selected agent (selection sorted
    # descending) drops the sum below the request.
    total = sum(w for _, w in event.selected)
    for _, watts in event.selected:
        assert total - watts < event.requested_reduction_w


def test_schedule_event_under_supply_selects_everyone():
    coordinator, bus, clock, _ = make_coordinator()
    register_fleet(bus, clock, {"a7": 7.0, "a5": 5.0, "a3": 3.0})
    event = coordinator.schedule_event(*TURBINE, requested_reduction_w=50.0,
                                       duration_min=5.0)
    assert sorted(a for a, _ in event.selected) == ["a3", "a5", "a7"]
    assert event.under_supplied


def test_schedule_event_immediate_start_and_schedules_published():
    coordinator, bus, clock, _ = make_coordinator()
    register_fleet(bus, clock, {"a7": 7.0})
    event = coordinator.schedule_event(*TURBINE, requested_reduction_w=1.0,
                                       duration_min=5.0, start="immediate")
    assert event.start == clock.now_ms()
    published = bus.read("schedules/a7")
    assert len(published) == 1
    doc = published[0].payload
    assert doc["event_id"] == event.event_id
    assert doc["duration_s"] == 300
    assert event.schedule_latency_ms is not None and event.schedule_latency_ms >= 0


def test_schedule_event_no_candidates_aborts():
    coordinator, _, _, _ = make_coordinator()
    event = coordinator.schedule_event(*TURBINE, requested_reduction_w=10.0,
                                       duration_min=5.0)
    assert event.state == ABORTED
    assert event.outcome == "no-candidates"
    assert event.selected == []


def test_schedule_event_excludes_committed_agents():
    coordinator, bus, clock, _ = make_coordinator()
    register_fleet(bus, clock, {"a7": 7.0, "a5": 5.0})
    first = coordinator.schedule_event(*TURBINE, requested_reduction_w=6.0,
                                       duration_min=5.0)
    assert [a for a, _ in first.selected] == ["a7"]
    second = coordinator.schedule_event(*TURBINE, requested_reduction_w=1.0,
                                        duration_min=5.0)
    assert [a for a, _ in second.selected] == ["a5"]


def test_event_lifecycle_via_scheduler_timers():
    coordinator, bus, clock, scheduler = make_coordinator()
    register_fleet(bus, clock, {"a7": 7.0})
    event = coordinator.schedule_event(*TURBINE, requested_reduction_w=1.0,
                                       duration_min=5.0)
    # No joins arrive; start passing still activates, end completes (partial).
    scheduler.run_for(1)
    assert event.state == ACTIVE
    scheduler.run_for(5 * 60_000)
    assert event.state == COMPLETED
    assert event.partial_participation
    assert coordinator.registry_entry("a7").committed_event is None


# ---------------------------------------------------------------------------
# Supply monitoring
# ---------------------------------------------------------------------------

def trace_of(*outputs, step_ms=10_000, threshold=50.0):
    return SupplyTrace(
        points=tuple((i * step_ms, float(o)) for i, o in enumerate(outputs)),
        drop_threshold_w=threshold,
    )


def test_monitor_supply_flat_trace():
    assert monitor_supply(trace_of(*([500] * 30)), duration_min=5.0) == []


def test_monitor_supply_single_step():
    requests = monitor_supply(trace_of(500, 500, 500, 430, 430, 430), duration_min=5.0)
    assert len(requests) == 1
    assert requests[0].requested_reduction_w == pytest.approx(70.0)
    assert requests[0].duration_min == 5.0


def test_monitor_supply_two_separated_drops():
    # Drops separated by more than the 5-minute reference window.
    outputs = [500] * 3 + [430] * 40 + [340] * 3
    requests = monitor_supply(trace_of(*outputs), duration_min=5.0)
    assert len(requests) == 2
    assert requests[0].requested_reduction_w == pytest.approx(70.0)
    assert requests[1].requested_reduction_w == pytest.approx(90.0)


def test_supply_trace_validation():
    with pytest.raises(ValueError):
        SupplyTrace(points=((0, 500.0), (0, 400.0)), drop_threshold_w=50.0)
    with pytest.raises(ValueError):
        SupplyTrace(points=((0, -1.0),), drop_threshold_w=50.0)


# ---------------------------------------------------------------------------
# Participation tracking
# ---------------------------------------------------------------------------

def make_event(**overrides):
    fields = dict(
        event_id="ev-0001",
        turbine_lat=TURBINE[0],
        turbine_lon=TURBINE[1],
        requested_reduction_w=10.0,
        duration_min=5.0,
        start=MONDAY_MS,
        requested_at=MONDAY_MS - 10,
        selected=[("a1", 6.0), ("a2", 5.0)],
        published_at=MONDAY_MS - 5,
    )
    fields.update(overrides)
    return DREvent(**fields)


def test_track_participation_join_latency():
    event = make_event()
    statuses = [
        {"agent_id": "a1", "event_id": "ev-0001", "status": "joined", "at_ms": MONDAY_MS + 20},
        {"agent_id": "a2", "event_id": "ev-0001", "status": "joined", "at_ms": MONDAY_MS + 45},
    ]
    track_participation(event, statuses)
    assert event.state == ACTIVE
    assert event.join_latency_ms == 50  # last join minus publish


def test_track_participation_declined_flags_partial():
    event = make_event()
    track_participation(event, [
        {"agent_id": "a1", "event_id": "ev-0001", "status": "joined", "at_ms": MONDAY_MS},
        {"agent_id": "a2", "event_id": "ev-0001", "status": "declined", "at_ms": MONDAY_MS},
    ])
    assert event.partial_participation
    assert event.state == SCHEDULED


def test_track_participation_grace_completion():
    event = make_event()
    track_participation(event, [
        {"agent_id": "a1", "event_id": "ev-0001", "status": "joined", "at_ms": MONDAY_MS},
    ], now=event.end + 31_000)
    assert event.state == COMPLETED
    assert event.partial_participation


def test_track_participation_ignores_foreign_statuses():
    event = make_event()
    track_participation(event, [
        {"agent_id": "zz", "event_id": "ev-0001", "status": "joined", "at_ms": MONDAY_MS},
        {"agent_id": "a1", "event_id": "ev-9999", "status": "joined", "at_ms": MONDAY_MS},
    ])
    assert event.joins == {}


def test_event_state_machine_rejects_illegal_transitions():
    event = make_event()
    with pytest.raises(ValueError):
        event.advance(COMPLETED)  # scheduled -> completed skips active
    event.advance(ACTIVE)
    event.advance(COMPLETED)
    with pytest.raises(ValueError):
        event.advance(ABORTED)


def test_event_validation():
    with pytest.raises(ValueError):
        make_event(requested_reduction_w=0.0)
    with pytest.raises(ValueError):
        make_event(duration_min=0.0)
