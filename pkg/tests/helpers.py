"""Shared test harness pieces: cheap models and in-process fleet wiring."""

from drsim.power_model import PowerModel, builtin_spec

MONDAY_MS = 4 * 24 * 3600 * 1000  # 1970-01-05 00:00 UTC, a Monday

# Munich-ish coordinates for geo tests.
TURBINE = (48.2650, 11.6710)


def intercept_model(os="ubuntu", mode="normal", watts=30.0):
    """A model that predicts a constant, handy for profile plumbing tests."""
    spec = builtin_spec(os, mode)
    k = len(spec.terms)
    return PowerModel(
        spec=spec,
        intercept=watts,
        coefficients=(0.0,) * k,
        feature_means=(0.0,) * k,
        feature_stds=(1.0,) * k,
        fitted_on=100,
    )


def registration_payload(agent_id, lat, lon, at_ms, os="ubuntu", zip_code="80333",
                         mean_normal=40.0, mean_save=30.0, utc_offset_min=0):
    return {
        "agent_id": agent_id,
        "os": os,
        "utc_offset_min": utc_offset_min,
        "at_ms": at_ms,
        "power_init": {"mean_power_normal": mean_normal, "mean_power_save": mean_save},
        "location_init": {"latitude": lat, "longitude": lon, "accuracy": 10.0,
                          "zip": zip_code},
    }
