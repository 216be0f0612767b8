"""HTTP and WebSocket surface of the coordinator.

A thin adapter: all decisions stay in the Coordinator; handlers translate
JSON bodies to calls and registry/event state to JSON.  The /stream socket
pushes the coordinator's event-state and agent-status frames with their
sequence numbers.
"""

from __future__ import annotations

import asyncio
from typing import Literal, Union

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field

from .coordinator import Coordinator, SupplyTrace


class EventRequest(BaseModel):
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    reduction_w: float = Field(gt=0)
    duration_min: float = Field(gt=0)
    start: Union[Literal["immediate"], int] = "immediate"


class SupplyTraceRequest(BaseModel):
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    points: list[tuple[int, float]]
    drop_threshold_w: float = Field(gt=0)
    duration_min: float = Field(gt=0)


def create_app(coordinator: Coordinator) -> FastAPI:
    app = FastAPI(title="drsim coordinator", version="1")

    @app.post("/events")
    def create_event(body: EventRequest) -> dict:
        event = coordinator.schedule_event(
            body.lat,
            body.lon,
            requested_reduction_w=body.reduction_w,
            duration_min=body.duration_min,
            start=body.start,
        )
        return event.to_dict()

    @app.get("/events/{event_id}")
    def get_event(event_id: str) -> dict:
        event = coordinator.event(event_id)
        if event is None:
            raise HTTPException(status_code=404, detail=f"no event {event_id}")
        return event.to_dict()

    @app.get("/agents")
    def get_agents() -> list[dict]:
        return coordinator.agents_overview()

    @app.get("/agents/{agent_id}/profiles")
    def get_agent_profiles(agent_id: str) -> dict:
        snapshot = coordinator.agent_profiles(agent_id)
        if snapshot is None:
            raise HTTPException(status_code=404, detail=f"no agent {agent_id}")
        return snapshot

    @app.post("/supply/trace")
    def post_supply_trace(body: SupplyTraceRequest) -> dict:
        try:
            trace = SupplyTrace(
                points=tuple((int(t), float(w)) for t, w in body.points),
                drop_threshold_w=body.drop_threshold_w,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        requests = coordinator.load_supply_trace(trace, body.duration_min)
        issued = []
        now = coordinator.clock.now_ms()
        for request in requests:
            if coordinator.scheduler is not None and request.at > now:
                coordinator.scheduler.call_at(
                    request.at,
                    lambda r=request: coordinator.schedule_event(
                        body.lat, body.lon,
                        requested_reduction_w=r.requested_reduction_w,
                        duration_min=r.duration_min,
                    ),
                )
            else:
                event = coordinator.schedule_event(
                    body.lat, body.lon,
                    requested_reduction_w=request.requested_reduction_w,
                    duration_min=request.duration_min,
                )
                issued.append(event.event_id)
        return {
            "accepted": True,
            "requests": [
                {
                    "at_ms": r.at,
                    "requested_reduction_w": r.requested_reduction_w,
                    "duration_min": r.duration_min,
                }
                for r in requests
            ],
            "issued_event_ids": issued,
        }

    @app.websocket("/stream")
    async def stream(ws: WebSocket) -> None:
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue()
        loop = asyncio.get_running_loop()

        def listener(frame: dict) -> None:
            loop.call_soon_threadsafe(queue.put_nowait, frame)

        coordinator.add_listener(listener)
        try:
            while True:
                frame = await queue.get()
                await ws.send_json(frame)
        except WebSocketDisconnect:
            pass
        finally:
            coordinator.remove_listener(listener)

    return app


def serve(coordinator: Coordinator, host: str = "127.0.0.1", port: int = 8800):
    """Run the app under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(coordinator), host=host, port=port, log_level="warning")
