"""Synthetic metrics/power logs drawn from a known linear ground truth.

Stands in for instrumented training hardware: metrics are sampled from
plausible laptop ranges and the meter column is generated from an explicit
linear model plus Gaussian noise, so fits can be checked against the
generating coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .power_model import FeatureSpec, MetricsSample, Term, builtin_spec

# Measured average power drop of the OS save mode, as a fraction.
SAVE_DROP_FRACTIONS = {"windows": 0.2646, "ubuntu": 0.0695}


@dataclass(frozen=True)
class TrueModel:
    """Generating model: intercept + coefficients over a spec's raw terms."""

    spec: FeatureSpec
    intercept: float
    coefficients: tuple[float, ...]
    noise_sd: float

    def __post_init__(self):
        if len(self.coefficients) != len(self.spec.terms):
            raise ValueError("one coefficient per term required")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    def mean_power(self, sample: MetricsSample) -> float:
        return self.intercept + sum(
            c * t.value(sample) for c, t in zip(self.coefficients, self.spec.terms)
        )


def default_true_model(os: str, mode: str, noise_sd: float = 2.0) -> TrueModel:
    """A plausible generating model over the built-in terms for os/mode.

    Coefficients are chosen so that generated powers stay well inside the
    (8, 65) W meter band and the signal variance dominates the noise.
    """
    spec = builtin_spec(os, mode)
    drop = (1.0 - SAVE_DROP_FRACTIONS[os]) if mode == "save" else 1.0
    by_label = {
        "batt_rate": 0.30,
        "batt_rate^2": 0.004,
        "batt_rate*brightness": 0.0012,
        "batt_rate*batt_remaining": 0.0015,
        "charging": 3.0,
        "cpu": 0.16,
        "mem": 0.03,
        "batt_remaining": 0.01,
        "net_kb": 0.0020,
        "disk_req": 0.012,
    }
    base = 24.0 if os == "windows" else 21.0
    coefs = tuple(drop * by_label[t.label] for t in spec.terms)
    return TrueModel(spec=spec, intercept=drop * base, coefficients=coefs, noise_sd=noise_sd)


def random_sample(rng: np.random.Generator, timestamp: int) -> MetricsSample:
    """One metrics sample with fields drawn from plausible laptop ranges."""
    charging = bool(rng.random() < 0.5)
    batt_rate = float(rng.uniform(4.0, 18.0) if charging else -rng.uniform(4.0, 22.0))
    return MetricsSample(
        timestamp=timestamp,
        cpu=float(rng.uniform(0.0, 100.0)),
        brightness=float(rng.uniform(10.0, 100.0)),
        batt_rate=batt_rate,
        charging=charging,
        batt_remaining=float(rng.uniform(5.0, 100.0)),
        mem=float(rng.uniform(10.0, 90.0)),
        disk_req=float(rng.uniform(0.0, 200.0)),
        disk_kb=float(rng.uniform(0.0, 4000.0)),
        net_kb=float(rng.uniform(0.0, 1500.0)),
    )


def generate_training_log(
    true_model: TrueModel,
    n: int,
    seed: int,
    start_ms: int = 0,
    interval_ms: int = 1000,
) -> list[MetricsSample]:
    """n samples with real_power = true_model(metrics) + N(0, noise_sd)."""
    rng = np.random.default_rng(seed)
    out = []
    ts = start_ms
    for _ in range(n):
        s = random_sample(rng, ts)
        power = true_model.mean_power(s) + float(rng.normal(0.0, true_model.noise_sd))
        out.append(
            MetricsSample(
                timestamp=s.timestamp,
                cpu=s.cpu,
                brightness=s.brightness,
                batt_rate=s.batt_rate,
                charging=s.charging,
                batt_remaining=s.batt_remaining,
                mem=s.mem,
                disk_req=s.disk_req,
                disk_kb=s.disk_kb,
                net_kb=s.net_kb,
                real_power=power,
            )
        )
        ts += interval_ms
    return out


def planted_subset_log(
    candidate_terms: tuple[Term, ...],
    planted: dict[Term, float],
    n: int,
    seed: int,
    intercept: float = 30.0,
    noise_sd: float = 1.0,
) -> list[MetricsSample]:
    """Samples whose power depends only on the planted terms.

    All candidate terms vary across samples, but only the planted ones carry
    signal, so subset search has a known best answer.
    """
    unknown = [t for t in planted if t not in set(candidate_terms)]
    if unknown:
        raise ValueError(f"planted terms not in candidates: {unknown}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        s = random_sample(rng, i * 1000)
        power = intercept + sum(c * t.value(s) for t, c in planted.items())
        power += float(rng.normal(0.0, noise_sd))
        out.append(
            MetricsSample(
                timestamp=s.timestamp,
                cpu=s.cpu,
                brightness=s.brightness,
                batt_rate=s.batt_rate,
                charging=s.charging,
                batt_remaining=s.batt_remaining,
                mem=s.mem,
                disk_req=s.disk_req,
                disk_kb=s.disk_kb,
                net_kb=s.net_kb,
                real_power=power,
            )
        )
    return out
