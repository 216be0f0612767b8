"""Coordinator HTTP/WS surface via the in-process ASGI test client."""

import pytest
from fastapi.testclient import TestClient

from drsim.bus import MessageBus
from drsim.coordinator import Coordinator
from drsim.server import create_app
from drsim.simclock import SimScheduler, VirtualClock

from helpers import MONDAY_MS, TURBINE, registration_payload


@pytest.fixture()
def rig():
    clock = VirtualClock(MONDAY_MS)
    scheduler = SimScheduler(clock)
    bus = MessageBus(clock=clock)
    coordinator = Coordinator(bus, clock=clock, scheduler=scheduler)
    coordinator.attach()
    lat, lon = TURBINE
    for i in range(3):
        bus.publish(
            f"registry/agent-{i}",
            registration_payload(f"agent-{i}", lat, lon, clock.now_ms(),
                                 mean_normal=38.0, mean_save=30.0),
        )
    client = TestClient(create_app(coordinator))
    return client, coordinator, scheduler, bus


def test_get_agents(rig):
    client, *_ = rig
    resp = client.get("/agents")
    assert resp.status_code == 200
    agents = resp.json()
    assert [a["agent_id"] for a in agents] == ["agent-0", "agent-1", "agent-2"]
    assert all(a["online"] for a in agents)


def test_get_agent_profiles(rig):
    client, *_ = rig
    resp = client.get("/agents/agent-1/profiles")
    assert resp.status_code == 200
    doc = resp.json()
    assert len(doc["power_slots"]) == 10_080
    assert len(doc["location_slots"]) == 672
    assert client.get("/agents/nobody/profiles").status_code == 404


def test_post_event_and_get_event(rig):
    client, coordinator, scheduler, _ = rig
    body = {"lat": TURBINE[0], "lon": TURBINE[1], "reduction_w": 5.0,
            "duration_min": 5.0, "start": "immediate"}
    resp = client.post("/events", json=body)
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["state"] == "scheduled"
    assert doc["selected"]
    got = client.get(f"/events/{doc['event_id']}")
    assert got.status_code == 200
    assert got.json()["event_id"] == doc["event_id"]
    assert client.get("/events/ev-9999").status_code == 404


def test_post_event_validation(rig):
    client, *_ = rig
    bad = {"lat": TURBINE[0], "lon": TURBINE[1], "reduction_w": -5.0,
           "duration_min": 5.0}
    assert client.post("/events", json=bad).status_code == 422
    bad_coords = {"lat": 95.0, "lon": 0.0, "reduction_w": 5.0, "duration_min": 5.0}
    assert client.post("/events", json=bad_coords).status_code == 422


def test_post_supply_trace(rig):
    client, *_ = rig
    body = {
        "lat": TURBINE[0],
        "lon": TURBINE[1],
        "points": [[MONDAY_MS - 20_000, 500.0], [MONDAY_MS - 10_000, 500.0],
                   [MONDAY_MS - 5_000, 430.0]],
        "drop_threshold_w": 50.0,
        "duration_min": 5.0,
    }
    resp = client.post("/supply/trace", json=body)
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["accepted"]
    assert len(doc["requests"]) == 1
    assert doc["requests"][0]["requested_reduction_w"] == pytest.approx(70.0)
    assert len(doc["issued_event_ids"]) == 1  # drop is in the past: issued now


def test_post_supply_trace_rejects_bad_points(rig):
    client, *_ = rig
    body = {"lat": 0.0, "lon": 0.0, "points": [[5, 1.0], [5, 2.0]],
            "drop_threshold_w": 10.0, "duration_min": 5.0}
    assert client.post("/supply/trace", json=body).status_code == 400


def test_websocket_stream_pushes_event_frames(rig):
    client, coordinator, scheduler, _ = rig
    with client.websocket_connect("/stream") as ws:
        body = {"lat": TURBINE[0], "lon": TURBINE[1], "reduction_w": 5.0,
                "duration_min": 1.0, "start": "immediate"}
        created = client.post("/events", json=body).json()
        frame = ws.receive_json()
        assert frame["type"] == "event_state"
        assert frame["data"]["event_id"] == created["event_id"]
        assert frame["seq"] >= 1
        # Drive the event to completion; the stream must carry the transitions.
        scheduler.run_for(2 * 60_000)
        states = [frame["data"]["state"]]
        while states[-1] != "completed":
            message = ws.receive_json()
            if message["type"] == "event_state":
                states.append(message["data"]["state"])
        assert states[0] == "scheduled"
        assert states[-1] == "completed"
        seqs = [frame["seq"]]
        assert all(isinstance(s, int) for s in seqs)
