"""End-to-end experiment harness.

Boots bus, coordinator, and an agent fleet under a virtual clock from a
scenario file, replays a supply trace or issues the scenario's events, and
writes the experiment report (per-event estimated vs measured reduction and
latencies, plus fleet averages) together with per-event demand-load time
series CSVs covering ten minutes before and after each activation.

Measured reductions come from the simulator's ground-truth consumption (the
reference-meter stand-in) and never from model estimates, so estimation
error stays observable in the report.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .agents import SimAgent, AgentDescriptor, WorkloadPhase
from .bus import MessageBus
from .coordinator import ABORTED, Coordinator, SupplyTrace, geo_distance, monitor_supply
from .power_model import model_from_dict, model_to_dict, fit, train_test_split
from .profiles import LocationFix
from .simclock import SimScheduler, VirtualClock
from .synthetic import default_true_model, generate_training_log

SCENARIO_FORMAT = 1
REPORT_FORMAT = 1
SERIES_WINDOW_MS = 600_000  # ten minutes on each side of activation
SERIES_STEP_MS = 1000

DEFAULT_START_MS = 4 * 24 * 3600 * 1000  # a Monday 00:00 UTC
DEFAULT_WARMUP_S = 1500


class ScenarioError(ValueError):
    """Scenario schema violations; carries the full error list."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {e}" for e in errors))


def validate_scenario(doc: dict) -> list[str]:
    """All schema violations found (empty list when the scenario is valid)."""
    errors = []
    if not isinstance(doc, dict):
        return ["scenario must be a JSON object"]
    if doc.get("format") != SCENARIO_FORMAT:
        errors.append(f"format must be {SCENARIO_FORMAT}")
    if not isinstance(doc.get("seed"), int):
        errors.append("seed must be an integer")
    turbine = doc.get("turbine")
    if not (isinstance(turbine, dict) and "lat" in turbine and "lon" in turbine):
        errors.append("turbine must carry lat and lon")
    agents = doc.get("agents")
    if not isinstance(agents, list):
        errors.append("agents must be a list")
        agents = []
    seen_ids = set()
    for i, agent in enumerate(agents):
        where = f"agents[{i}]"
        if not isinstance(agent, dict):
            errors.append(f"{where} must be an object")
            continue
        agent_id = agent.get("agent_id")
        if not agent_id:
            errors.append(f"{where}.agent_id is required")
        elif agent_id in seen_ids:
            errors.append(f"{where}.agent_id {agent_id!r} is duplicated")
        else:
            seen_ids.add(agent_id)
        if agent.get("os") not in ("windows", "ubuntu"):
            errors.append(f"{where}.os must be windows or ubuntu")
        home = agent.get("home")
        if not (isinstance(home, dict) and {"lat", "lon", "zip"} <= set(home)):
            errors.append(f"{where}.home must carry lat, lon, zip")
        for j, phase in enumerate(agent.get("workload", [])):
            if not isinstance(phase, dict) or phase.get("duration_s", 0) <= 0:
                errors.append(f"{where}.workload[{j}] needs a positive duration_s")
    events = doc.get("events", [])
    supply = doc.get("supply")
    if not events and supply is None:
        errors.append("scenario needs events or a supply trace")
    for i, event in enumerate(events):
        where = f"events[{i}]"
        if not isinstance(event, dict):
            errors.append(f"{where} must be an object")
            continue
        if event.get("at_s", -1) < 0:
            errors.append(f"{where}.at_s must be non-negative")
        if event.get("reduction_w", 0) <= 0:
            errors.append(f"{where}.reduction_w must be positive")
        if event.get("duration_min", 0) <= 0:
            errors.append(f"{where}.duration_min must be positive")
    if supply is not None:
        if not isinstance(supply.get("points"), list) or len(supply["points"]) < 2:
            errors.append("supply.points must list at least two [ms, watts] pairs")
        if supply.get("drop_threshold_w", 0) <= 0:
            errors.append("supply.drop_threshold_w must be positive")
        if supply.get("duration_min", 0) <= 0:
            errors.append("supply.duration_min must be positive")
    return errors


def column_average(values) -> float | None:
    """Average of a report column, rounded to two decimals (table style)."""
    values = [v for v in values if v is not None]
    if not values:
        return None
    return round(sum(values) / len(values), 2)


def fit_scenario_models(bus: MessageBus, os_list, models_cfg: dict, seed: int) -> dict:
    """Fit one model per OS/mode from synthetic known-model logs and publish
    each artifact on models/{os}/{mode}; returns {(os, mode): PowerModel}."""
    n = models_cfg.get("n_train", 2500)
    noise = {"normal": models_cfg.get("noise_sd_normal", 2.0),
             "save": models_cfg.get("noise_sd_save", 1.0)}
    out = {}
    offsets = {("ubuntu", "normal"): 1, ("ubuntu", "save"): 2,
               ("windows", "normal"): 3, ("windows", "save"): 4}
    for os_name in sorted(set(os_list)):
        for mode in ("normal", "save"):
            truth = default_true_model(os_name, mode, noise[mode])
            log = generate_training_log(truth, n, seed=seed + offsets[(os_name, mode)])
            train, _ = train_test_split(log, 0.8, seed=seed)
            model = fit(train, truth.spec, seed=seed)
            bus.publish(f"models/{os_name}/{mode}", model_to_dict(model))
            out[(os_name, mode)] = model
    return out


def resample_demand(points, t0: int, t1: int, step_ms: int = SERIES_STEP_MS):
    """Zero-order-hold resampling of a (ts, watts) series onto a regular grid."""
    grid = []
    i = 0
    last = points[0][1] if points else 0.0
    for t in range(t0, t1, step_ms):
        while i < len(points) and points[i][0] <= t:
            last = points[i][1]
            i += 1
        grid.append((t, last))
    return grid


def run_experiment(scenario: dict, out_dir) -> dict:
    """Run the scenario under a virtual clock and write report + series CSVs."""
    errors = validate_scenario(scenario)
    if errors:
        raise ScenarioError(errors)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    seed = scenario["seed"]
    start_ms = scenario.get("start_ms", DEFAULT_START_MS)
    warmup_s = scenario.get("warmup_s", DEFAULT_WARMUP_S)
    turbine = (scenario["turbine"]["lat"], scenario["turbine"]["lon"])
    radius_m = scenario.get("radius_m", 1000.0)

    clock = VirtualClock(start_ms)
    scheduler = SimScheduler(clock)
    bus = MessageBus(clock=clock)
    coordinator = Coordinator(bus, clock=clock, scheduler=scheduler, radius_m=radius_m)
    coordinator.attach()

    models = fit_scenario_models(
        bus, [a["os"] for a in scenario["agents"]], scenario.get("models", {}), seed
    )
    # Agents take their models off the bus (the distribution path).
    published = {
        (os_name, mode): model_from_dict(bus.read(f"models/{os_name}/{mode}")[-1].payload)
        for (os_name, mode) in models
    }

    agents: dict[str, SimAgent] = {}
    for spec in scenario["agents"]:
        home = spec["home"]
        fix = LocationFix(start_ms, home["lat"], home["lon"],
                          home.get("accuracy", 10.0), home["zip"])
        workload = [WorkloadPhase(**phase) for phase in spec.get("workload", [])] or None
        agent = SimAgent(
            AgentDescriptor(
                agent_id=spec["agent_id"],
                os=spec["os"],
                home_fix=fix,
                opt_out=spec.get("opt_out", False),
                save_drop_fraction=spec.get("save_drop_fraction"),
                utc_offset_min=scenario.get("utc_offset_min", 0),
            ),
            published[(spec["os"], "normal")],
            published[(spec["os"], "save")],
            bus,
            clock,
            scheduler,
            workload=workload,
            seed=seed,
        )
        agent.register()
        agent.start_loops()
        agents[spec["agent_id"]] = agent

    # Resolve the event plan: admin-issued events or supply-trace driven.
    plan = []
    for event in scenario.get("events", []):
        plan.append(
            {
                "at_ms": start_ms + (warmup_s + event["at_s"]) * 1000,
                "reduction_w": event["reduction_w"],
                "duration_min": event["duration_min"],
            }
        )
    if scenario.get("supply") is not None:
        supply = scenario["supply"]
        trace = SupplyTrace(
            points=tuple((start_ms + int(t), float(w)) for t, w in supply["points"]),
            drop_threshold_w=supply["drop_threshold_w"],
        )
        for request in coordinator.load_supply_trace(trace, supply["duration_min"]):
            plan.append(
                {
                    "at_ms": max(request.at, start_ms + warmup_s * 1000),
                    "reduction_w": request.requested_reduction_w,
                    "duration_min": request.duration_min,
                }
            )
    plan.sort(key=lambda p: p["at_ms"])

    issued: list = []
    for entry in plan:
        def issue(entry=entry):
            issued.append(
                coordinator.schedule_event(
                    *turbine,
                    requested_reduction_w=entry["reduction_w"],
                    duration_min=entry["duration_min"],
                    start="immediate",
                )
            )
        scheduler.call_at(entry["at_ms"], issue)

    horizon = max(
        (p["at_ms"] + int(p["duration_min"] * 60_000) for p in plan),
        default=start_ms,
    )
    scheduler.run_until(horizon + SERIES_WINDOW_MS + 60_000)

    # -- reporting -----------------------------------------------------------
    rows = []
    series_files = {}
    for index, event in enumerate(issued, start=1):
        row = {
            "index": index,
            "event_id": event.event_id,
            "state": event.state,
            "start_ms": event.start,
            "duration_min": event.duration_min,
            "requested_reduction_w": event.requested_reduction_w,
            "under_supplied": event.under_supplied,
            "partial_participation": event.partial_participation,
            "outcome": event.outcome,
            "scheduling_latency_ms": event.schedule_latency_ms,
            "join_latency_ms": event.join_latency_ms,
            "agents": [],
        }
        estimated_raw = sum(w for _, w in event.selected)
        measured_raw = 0.0
        if event.state != ABORTED:
            series_path = out_dir / f"event_{index:02d}_timeseries.csv"
            grids = _write_event_series(series_path, event, agents)
            series_files[event.event_id] = series_path.name
            for agent_id, contribution in event.selected:
                participated = agent_id in event.joins
                pre, during = _window_means(grids[agent_id], event)
                reduction = (pre - during) if participated else 0.0
                measured_raw += reduction
                entry = coordinator.registry_entry(agent_id)
                slot = entry.location_at(event.start)
                row["agents"].append(
                    {
                        "agent_id": agent_id,
                        "estimated_contribution_w": contribution,
                        "participated": participated,
                        "pre_mean_w": pre,
                        "during_mean_w": during,
                        "measured_reduction_w": reduction,
                        "save_drop_fraction": agents[agent_id].descriptor.save_drop_fraction,
                        "distance_m": geo_distance(*turbine, slot.latitude, slot.longitude),
                    }
                )
        row["estimated_reduction_w_raw"] = estimated_raw
        row["measured_reduction_w_raw"] = measured_raw
        row["estimated_reduction_w"] = round(estimated_raw, 2)
        row["measured_reduction_w"] = round(measured_raw, 2)
        rows.append(row)

    report = {
        "format": REPORT_FORMAT,
        "seed": seed,
        "start_ms": start_ms,
        "turbine": {"lat": turbine[0], "lon": turbine[1]},
        "radius_m": radius_m,
        "events": rows,
        "averages": {
            "estimated_reduction_w": column_average(
                [r["estimated_reduction_w"] for r in rows]),
            "measured_reduction_w": column_average(
                [r["measured_reduction_w"] for r in rows]),
            "scheduling_latency_ms": column_average(
                [r["scheduling_latency_ms"] for r in rows]),
            "join_latency_ms": column_average(
                [r["join_latency_ms"] for r in rows]),
        },
        "series_files": series_files,
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report


def _window_means(grid, event) -> tuple[float, float]:
    """Mean demand over the 10 minutes before activation and over the event."""
    pre = [w for t, w in grid if event.start - SERIES_WINDOW_MS <= t < event.start]
    during = [w for t, w in grid if event.start <= t < event.end]
    pre_mean = sum(pre) / len(pre) if pre else 0.0
    during_mean = sum(during) / len(during) if during else 0.0
    return pre_mean, during_mean


def _write_event_series(path, event, agents: dict[str, SimAgent]):
    """Demand-load CSV around the activation; returns each agent's grid."""
    t0 = event.start - SERIES_WINDOW_MS
    t1 = event.start + SERIES_WINDOW_MS
    agent_ids = sorted(agents)
    grids = {
        agent_id: resample_demand(agents[agent_id].demand_log, t0, t1)
        for agent_id in agent_ids
    }
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t_ms"] + agent_ids + ["all"])
        for i, t in enumerate(range(t0, t1, SERIES_STEP_MS)):
            values = [grids[a][i][1] for a in agent_ids]
            writer.writerow([t] + [repr(v) for v in values] + [repr(sum(values))])
    return grids


def load_scenario(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    errors = validate_scenario(doc)
    if errors:
        raise ScenarioError(errors)
    return doc


def paper_shape_scenario(seed: int = 42) -> dict:
    """The reference scenario: three agents (two windows, one ubuntu) within
    the turbine radius and five immediate events, two of ten minutes and
    three of five minutes."""
    lat, lon = 48.2650, 11.6710

    def agent(agent_id, os, dlat, dlon):
        return {
            "agent_id": agent_id,
            "os": os,
            "home": {"lat": lat + dlat, "lon": lon + dlon, "zip": "85748",
                     "accuracy": 10.0},
            "workload": [
                {"duration_s": 86400, "cpu": 45.0, "mem": 40.0, "net_kb": 120.0,
                 "disk_req": 8.0, "brightness": 70.0, "plugged": True}
            ],
        }

    return {
        "format": SCENARIO_FORMAT,
        "seed": seed,
        "start_ms": DEFAULT_START_MS,
        "warmup_s": DEFAULT_WARMUP_S,
        "turbine": {"lat": lat, "lon": lon},
        "radius_m": 1000.0,
        "agents": [
            agent("win-1", "windows", 0.0020, 0.0010),
            agent("win-2", "windows", -0.0015, 0.0025),
            agent("ubu-1", "ubuntu", 0.0005, -0.0030),
        ],
        "events": [
            {"at_s": 0, "reduction_w": 40.0, "duration_min": 10},
            {"at_s": 2100, "reduction_w": 40.0, "duration_min": 10},
            {"at_s": 4200, "reduction_w": 40.0, "duration_min": 5},
            {"at_s": 5700, "reduction_w": 40.0, "duration_min": 5},
            {"at_s": 7200, "reduction_w": 40.0, "duration_min": 5},
        ],
    }
