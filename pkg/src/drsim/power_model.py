"""Regression power modeling from system utilization metrics.

Ingests metrics/power CSV logs, engineers feature vectors (raw, squared and
interaction terms), fits per-OS/per-mode linear power models by ordinary
least squares on standardized features, and evaluates them with MAPE,
Min/Max accuracy, Pearson correlation and adjusted R-squared.  Also provides
k-fold cross-validation and exhaustive best-subset search ranked by adjusted
R-squared and BIC.
"""

from __future__ import annotations

import io
import itertools
import json
import math
import random
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

# Power readings outside this band are meter outliers (band edges kept).
POWER_MIN_W = 8.0
POWER_MAX_W = 65.0

# How many subsets per size the exhaustive search reports.
SUBSET_TOP_K = 5
# Exhaustive enumeration refuses above this many candidate terms.
SUBSET_MAX_CANDIDATES = 16

METRIC_NAMES = (
    "cpu",
    "brightness",
    "batt_rate",
    "charging",
    "batt_remaining",
    "mem",
    "disk_req",
    "disk_kb",
    "net_kb",
)

# Canonical CSV header, in order.  real_power_w is optional (inference logs).
CSV_METRIC_COLUMNS = {
    "cpu": "cpu_pct",
    "brightness": "brightness_pct",
    "batt_rate": "batt_rate_w",
    "charging": "charging",
    "batt_remaining": "batt_remaining_pct",
    "mem": "mem_pct",
    "disk_req": "disk_req_s",
    "disk_kb": "disk_kb_s",
    "net_kb": "net_kb_s",
}
CSV_HEADER = (
    "timestamp_ms",
    "cpu_pct",
    "brightness_pct",
    "batt_rate_w",
    "charging",
    "batt_remaining_pct",
    "mem_pct",
    "disk_req_s",
    "disk_kb_s",
    "net_kb_s",
    "real_power_w",
)

_PERCENT_FIELDS = ("cpu", "brightness", "batt_remaining", "mem")
_RATE_FIELDS = ("disk_req", "disk_kb", "net_kb")

_TRUE_STRINGS = frozenset({"1", "true", "True", "TRUE"})
_FALSE_STRINGS = frozenset({"0", "false", "False", "FALSE"})


class SchemaError(ValueError):
    """The input log does not match the documented CSV schema."""


class EmptyDatasetError(ValueError):
    """The input log contains no data."""


class SingularFitError(ValueError):
    """The design matrix is rank deficient; names the collinear terms."""

    def __init__(self, collinear: Sequence[str]):
        self.collinear = tuple(collinear)
        super().__init__(
            "singular fit: collinear feature terms: " + ", ".join(self.collinear)
        )


@dataclass(frozen=True)
class MetricsSample:
    """One timestamped reading of system utilization metrics.

    ``real_power`` (watts, from the reference meter) is present only in
    training logs.
    """

    timestamp: int  # ms since epoch
    cpu: float
    brightness: float
    batt_rate: float  # signed watts; negative means discharging
    charging: bool
    batt_remaining: float
    mem: float
    disk_req: float
    disk_kb: float
    net_kb: float
    real_power: float | None = None

    def __post_init__(self):
        for name in _PERCENT_FIELDS:
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0):
                raise ValueError(f"{name}={v!r} outside [0, 100]")
        for name in _RATE_FIELDS:
            v = getattr(self, name)
            if v < 0.0:
                raise ValueError(f"{name}={v!r} must be non-negative")

    def metric(self, name: str) -> float:
        """Numeric value of a metric; the charging flag is encoded 1.0/0.0."""
        if name == "charging":
            return 1.0 if self.charging else 0.0
        return float(getattr(self, name))


@dataclass(frozen=True)
class Term:
    """One feature term: a raw metric, its square, or a pairwise product."""

    kind: str  # "raw" | "squared" | "interaction"
    metrics: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("raw", "squared", "interaction"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        n_expected = 2 if self.kind == "interaction" else 1
        if len(self.metrics) != n_expected:
            raise ValueError(f"{self.kind} term takes {n_expected} metric(s)")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise ValueError(f"unknown metric {m!r}")

    @classmethod
    def raw(cls, metric: str) -> "Term":
        return cls("raw", (metric,))

    @classmethod
    def squared(cls, metric: str) -> "Term":
        return cls("squared", (metric,))

    @classmethod
    def interaction(cls, a: str, b: str) -> "Term":
        return cls("interaction", (a, b))

    @property
    def label(self) -> str:
        if self.kind == "raw":
            return self.metrics[0]
        if self.kind == "squared":
            return f"{self.metrics[0]}^2"
        return f"{self.metrics[0]}*{self.metrics[1]}"

    def value(self, sample: MetricsSample) -> float:
        if self.kind == "raw":
            return sample.metric(self.metrics[0])
        if self.kind == "squared":
            v = sample.metric(self.metrics[0])
            return v * v
        return sample.metric(self.metrics[0]) * sample.metric(self.metrics[1])

    def column(self, arrays: dict[str, np.ndarray]) -> np.ndarray:
        if self.kind == "raw":
            return arrays[self.metrics[0]]
        if self.kind == "squared":
            return arrays[self.metrics[0]] ** 2
        return arrays[self.metrics[0]] * arrays[self.metrics[1]]


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered feature-term list for one OS and power mode."""

    os: str  # "windows" | "ubuntu"
    mode: str  # "normal" | "save"
    terms: tuple[Term, ...]

    def __post_init__(self):
        if self.os not in ("windows", "ubuntu"):
            raise ValueError(f"unknown os {self.os!r}")
        if self.mode not in ("normal", "save"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.terms:
            raise ValueError("feature spec needs at least one term")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("feature spec contains duplicate terms")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    def metrics_used(self) -> set[str]:
        return {m for t in self.terms for m in t.metrics}


# Built-in term lists.  Windows adds the batt_rate*brightness interaction;
# Ubuntu omits it.
WINDOWS_TERMS = (
    Term.raw("batt_rate"),
    Term.squared("batt_rate"),
    Term.interaction("batt_rate", "brightness"),
    Term.interaction("batt_rate", "batt_remaining"),
    Term.raw("charging"),
    Term.raw("cpu"),
    Term.raw("mem"),
    Term.raw("batt_remaining"),
    Term.raw("net_kb"),
    Term.raw("disk_req"),
)
UBUNTU_TERMS = tuple(
    t for t in WINDOWS_TERMS if t != Term.interaction("batt_rate", "brightness")
)


def builtin_spec(os: str, mode: str) -> FeatureSpec:
    """The built-in feature spec for an OS/mode pair."""
    terms = WINDOWS_TERMS if os == "windows" else UBUNTU_TERMS
    return FeatureSpec(os=os, mode=mode, terms=terms)


@dataclass(frozen=True)
class PowerModel:
    """Fitted linear power model with its standardization statistics.

    Coefficients apply to standardized features; prediction is therefore
    self-contained given the stored means and stds.
    """

    spec: FeatureSpec
    intercept: float
    coefficients: tuple[float, ...]
    feature_means: tuple[float, ...]
    feature_stds: tuple[float, ...]
    fitted_on: int
    seed: int | None = None

    def __post_init__(self):
        k = len(self.spec.terms)
        if not (len(self.coefficients) == len(self.feature_means) == len(self.feature_stds) == k):
            raise ValueError("coefficient/statistic lengths must match the term count")
        if any(s <= 0.0 for s in self.feature_stds):
            raise ValueError("feature stds must be positive")

    def destandardized(self) -> tuple[float, tuple[float, ...]]:
        """Intercept and coefficients re-expressed in raw feature units."""
        coefs = tuple(c / s for c, s in zip(self.coefficients, self.feature_stds))
        intercept = self.intercept - sum(
            c * m / s
            for c, m, s in zip(self.coefficients, self.feature_means, self.feature_stds)
        )
        return intercept, coefs


@dataclass(frozen=True)
class EvalReport:
    """Out-of-sample evaluation of a power model."""

    adj_r2: float
    mape: float
    minmax_acc: float
    corr_acc: float
    n_test: int

    def __post_init__(self):
        if self.mape < 0.0:
            raise ValueError("mape must be non-negative")
        if not (0.0 <= self.minmax_acc <= 1.0):
            raise ValueError("minmax_acc must lie in [0, 1]")
        if not (-1.0 <= self.corr_acc <= 1.0 + 1e-12):
            raise ValueError("corr_acc must lie in [-1, 1]")


@dataclass
class IngestResult:
    """Parsed samples plus the count of malformed rows that were skipped."""

    samples: list[MetricsSample]
    skipped: int

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def ingest_metrics_log(
    source: BinaryIO | io.TextIOBase,
    spec: FeatureSpec,
    require_power: bool = False,
) -> IngestResult:
    """Parse a metrics-log CSV stream into samples, in timestamp order.

    Malformed rows (wrong field count, unparsable values, invariant
    violations, non-increasing timestamps) are counted and skipped.
    Raises SchemaError when a required column is missing and
    EmptyDatasetError when the stream holds no data rows.
    """
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    else:
        text = source

    header_line = text.readline()
    if not header_line.strip():
        raise EmptyDatasetError("metrics log is empty")
    header = [h.strip() for h in header_line.rstrip("\r\n").split(",")]

    expected = list(CSV_HEADER)
    if header != expected and header != expected[:-1]:
        required = {CSV_METRIC_COLUMNS[m] for m in spec.metrics_used()}
        required.add("timestamp_ms")
        missing = sorted(required - set(header))
        if missing:
            raise SchemaError(f"missing required column(s): {', '.join(missing)}")
        raise SchemaError(f"unexpected header {header!r}")
    has_power = header == expected
    if require_power and not has_power:
        raise SchemaError("missing required column(s): real_power_w")

    col = {name: i for i, name in enumerate(header)}
    n_cols = len(header)
    samples: list[MetricsSample] = []
    skipped = 0
    last_ts: int | None = None

    for line in text:
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != n_cols:
            skipped += 1
            continue
        try:
            ts = int(fields[col["timestamp_ms"]])
            charging_raw = fields[col["charging"]]
            if charging_raw in _TRUE_STRINGS:
                charging = True
            elif charging_raw in _FALSE_STRINGS:
                charging = False
            else:
                raise ValueError(f"bad charging flag {charging_raw!r}")
            power = float(fields[col["real_power_w"]]) if has_power else None
            sample = MetricsSample(
                timestamp=ts,
                cpu=float(fields[col["cpu_pct"]]),
                brightness=float(fields[col["brightness_pct"]]),
                batt_rate=float(fields[col["batt_rate_w"]]),
                charging=charging,
                batt_remaining=float(fields[col["batt_remaining_pct"]]),
                mem=float(fields[col["mem_pct"]]),
                disk_req=float(fields[col["disk_req_s"]]),
                disk_kb=float(fields[col["disk_kb_s"]]),
                net_kb=float(fields[col["net_kb_s"]]),
                real_power=power,
            )
        except ValueError:
            skipped += 1
            continue
        if last_ts is not None and ts <= last_ts:
            skipped += 1
            continue
        last_ts = ts
        samples.append(sample)

    if not samples and skipped == 0:
        raise EmptyDatasetError("metrics log has no data rows")
    return IngestResult(samples=samples, skipped=skipped)


def write_metrics_log(samples: Iterable[MetricsSample], sink) -> int:
    """Write samples as the canonical CSV; returns the row count."""
    sink.write(",".join(CSV_HEADER) + "\n")
    n = 0
    for s in samples:
        if s.real_power is None:
            raise ValueError("write_metrics_log needs real_power on every sample")
        sink.write(
            f"{s.timestamp},{s.cpu:.6g},{s.brightness:.6g},{s.batt_rate:.6g},"
            f"{1 if s.charging else 0},{s.batt_remaining:.6g},{s.mem:.6g},"
            f"{s.disk_req:.6g},{s.disk_kb:.6g},{s.net_kb:.6g},{s.real_power:.6g}\n"
        )
        n += 1
    return n


# ---------------------------------------------------------------------------
# Cleaning and feature engineering
# ---------------------------------------------------------------------------

def filter_outliers(samples: Sequence[MetricsSample]) -> list[MetricsSample]:
    """Drop samples whose meter reading falls outside [8, 65] W (edges kept)."""
    out = []
    for s in samples:
        if s.real_power is None:
            raise ValueError("filter_outliers needs real_power on every sample")
        if POWER_MIN_W <= s.real_power <= POWER_MAX_W:
            out.append(s)
    return out


def build_features(sample: MetricsSample, spec: FeatureSpec) -> np.ndarray:
    """Feature vector for one sample, ordered as spec.terms."""
    return np.array([t.value(sample) for t in spec.terms], dtype=float)


def term_matrix(samples: Sequence[MetricsSample], terms: Sequence[Term]) -> np.ndarray:
    """(n_samples, n_terms) raw feature matrix, vectorized by column."""
    names = {m for t in terms for m in t.metrics}
    arrays = {
        name: np.array([s.metric(name) for s in samples], dtype=float) for name in names
    }
    return np.column_stack([t.column(arrays) for t in terms])


def _power_vector(samples: Sequence[MetricsSample]) -> np.ndarray:
    powers = []
    for s in samples:
        if s.real_power is None:
            raise ValueError("every sample must carry real_power")
        powers.append(s.real_power)
    return np.array(powers, dtype=float)


def train_test_split(
    samples: Sequence[MetricsSample], train_fraction: float, seed: int
) -> tuple[list[MetricsSample], list[MetricsSample]]:
    """Random, seed-deterministic partition with |train| = round(fraction*n)."""
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must lie in (0, 1)")
    idx = list(range(n))
    random.Random(seed).shuffle(idx)
    n_train = int(round(train_fraction * n))
    train = [samples[i] for i in idx[:n_train]]
    test = [samples[i] for i in idx[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# Fitting and prediction
# ---------------------------------------------------------------------------

def _is_exempt(term: Term) -> bool:
    # The charging flag is already 0/1 bounded; it is not standardized.
    return term.kind == "raw" and term.metrics == ("charging",)


def _standardization_stats(X: np.ndarray, terms: Sequence[Term]) -> tuple[np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    for j, term in enumerate(terms):
        if _is_exempt(term):
            means[j] = 0.0
            stds[j] = 1.0
    # Constant columns surface as rank deficiency; keep stds positive here.
    stds[stds <= 0.0] = 1.0
    return means, stds


def _name_collinear(design: np.ndarray, terms: Sequence[Term]) -> list[str]:
    """Greedy scan naming the terms whose columns are linearly dependent.

    Column 0 of the design is the intercept and is always kept.
    """
    kept = [0]
    collinear = []
    for j in range(1, design.shape[1]):
        trial = design[:, kept + [j]]
        if np.linalg.matrix_rank(trial) > len(kept):
            kept.append(j)
        else:
            collinear.append(terms[j - 1].label)
    return collinear


def fit(
    train: Sequence[MetricsSample],
    spec: FeatureSpec,
    seed: int | None = None,
) -> PowerModel:
    """Ordinary least squares on standardized features plus an intercept.

    Solved via SVD-based least squares (numerically stable for the squared
    and interaction columns).  Raises SingularFitError naming the collinear
    terms when the design matrix is rank deficient.
    """
    k = len(spec.terms)
    if len(train) <= k + 1:
        raise ValueError(f"need more than {k + 1} samples to fit {k} terms")
    y = _power_vector(train)
    X = term_matrix(train, spec.terms)
    means, stds = _standardization_stats(X, spec.terms)
    Z = (X - means) / stds
    design = np.column_stack([np.ones(len(train)), Z])

    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularFitError(_name_collinear(design, spec.terms))

    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return PowerModel(
        spec=spec,
        intercept=float(coef[0]),
        coefficients=tuple(float(c) for c in coef[1:]),
        feature_means=tuple(float(m) for m in means),
        feature_stds=tuple(float(s) for s in stds),
        fitted_on=len(train),
        seed=seed,
    )


def predict(model: PowerModel, sample: MetricsSample) -> float:
    """Estimated watts for one sample; clamped to be non-negative."""
    x = build_features(sample, model.spec)
    if not np.all(np.isfinite(x)):
        raise ValueError("sample has non-finite metric values")
    z = (x - np.asarray(model.feature_means)) / np.asarray(model.feature_stds)
    value = model.intercept + float(np.dot(model.coefficients, z))
    return max(0.0, value)


def predict_many(model: PowerModel, samples: Sequence[MetricsSample]) -> np.ndarray:
    """Vectorized predict over a sample list."""
    X = term_matrix(samples, model.spec.terms)
    if not np.all(np.isfinite(X)):
        raise ValueError("samples have non-finite metric values")
    Z = (X - np.asarray(model.feature_means)) / np.asarray(model.feature_stds)
    values = model.intercept + Z @ np.asarray(model.coefficients)
    return np.maximum(values, 0.0)


# ---------------------------------------------------------------------------
# Evaluation metrics
# ---------------------------------------------------------------------------

def mape(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean absolute percentage error: mean(|predicted - actual| / actual)."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if np.any(actual == 0.0):
        raise ValueError("mape is undefined when an actual value is 0")
    return float(np.mean(np.abs(predicted - actual) / actual))


def minmax_accuracy(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean of elementwise min/max ratio between actual and predicted."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    lo = np.minimum(actual, predicted)
    hi = np.maximum(actual, predicted)
    if np.any(hi == 0.0):
        raise ValueError("min/max accuracy is undefined when both values are 0")
    return float(np.mean(lo / hi))


def pearson(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Pearson correlation; 1.0 for an exact match of constant series, else 0.0
    when either side has zero variance."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    sa = actual.std()
    sp = predicted.std()
    if sa == 0.0 or sp == 0.0:
        return 1.0 if np.array_equal(actual, predicted) else 0.0
    c = float(np.corrcoef(actual, predicted)[0, 1])
    return max(-1.0, min(1.0, c))


def r_squared(actual: np.ndarray, predicted: np.ndarray) -> float:
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r-squared is undefined on a constant target")
    ss_res = float(np.sum((actual - predicted) ** 2))
    return 1.0 - ss_res / ss_tot


def adjusted_r2(r2: float, n: int, k: int) -> float:
    """1 - (1 - R^2) * (n - 1) / (n - k - 1) with k feature terms."""
    if n <= k + 1:
        raise ValueError(f"adjusted R^2 undefined for n={n} <= k+1={k + 1}")
    return 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1)


def evaluate(model: PowerModel, test: Sequence[MetricsSample]) -> EvalReport:
    """Out-of-sample MAPE, Min/Max accuracy, correlation and adjusted R^2."""
    if not test:
        raise ValueError("test set is empty")
    actual = _power_vector(test)
    if np.any(actual <= 0.0):
        raise ValueError("every test sample needs real_power > 0")
    k = len(model.spec.terms)
    n = len(test)
    if n <= k + 1:
        raise ValueError(f"adjusted R^2 undefined for n={n} <= k+1={k + 1}")
    predicted = predict_many(model, test)
    return EvalReport(
        adj_r2=adjusted_r2(r_squared(actual, predicted), n, k),
        mape=mape(actual, predicted),
        minmax_acc=minmax_accuracy(actual, predicted),
        corr_acc=pearson(actual, predicted),
        n_test=n,
    )


def kfold_indices(n: int, k: int, seed: int) -> list[list[int]]:
    """Shuffled index folds: disjoint, exhaustive, sizes differing by <= 1."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < 2 * k:
        raise ValueError(f"need at least {2 * k} samples for {k} folds")
    idx = list(range(n))
    random.Random(seed).shuffle(idx)
    return [list(part) for part in np.array_split(idx, k)]


def cross_validate(
    samples: Sequence[MetricsSample],
    spec: FeatureSpec,
    k: int,
    seed: int,
) -> list[float]:
    """k-fold cross-validation; returns each fold's held-out mean squared error."""
    folds = kfold_indices(len(samples), k, seed)
    errors = []
    for fold in folds:
        held = set(fold)
        train = [s for i, s in enumerate(samples) if i not in held]
        model = fit(train, spec)
        test = [samples[i] for i in fold]
        pred = predict_many(model, test)
        actual = _power_vector(test)
        errors.append(float(np.mean((pred - actual) ** 2)))
    return errors


# ---------------------------------------------------------------------------
# Best-subset search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubsetResult:
    """One candidate subset with its fit quality scores."""

    terms: tuple[Term, ...]
    rss: float
    adj_r2: float
    bic: float

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)


def bic_score(rss: float, n: int, n_terms: int) -> float:
    """Gaussian-likelihood BIC: n*ln(RSS/n) + k*ln(n), intercept counted in k."""
    k = n_terms + 1
    rss = max(rss, 1e-300)
    return n * math.log(rss / n) + k * math.log(n)


def best_subset_search(
    samples: Sequence[MetricsSample],
    candidate_terms: Sequence[Term],
    max_subset_size: int,
    top_k: int = SUBSET_TOP_K,
) -> list[SubsetResult]:
    """Exhaustively score every non-empty term subset up to max_subset_size.

    Returns, for each subset size in ascending order, the top_k subsets by
    fit quality.  Within a fixed size the adjusted-R^2 and BIC orders
    coincide (both are monotone in RSS), so one ranking serves both; ties
    break on lexicographic term labels.
    """
    p = len(candidate_terms)
    if p > SUBSET_MAX_CANDIDATES:
        raise ValueError(
            f"{p} candidate terms exceed the exhaustive-search bound of "
            f"{SUBSET_MAX_CANDIDATES}"
        )
    if not (1 <= max_subset_size <= p):
        raise ValueError("max_subset_size must lie in [1, len(candidate_terms)]")
    if len(set(candidate_terms)) != p:
        raise ValueError("candidate terms contain duplicates")
    n = len(samples)
    if n <= max_subset_size + 1:
        raise ValueError("need more samples than max_subset_size + 1")

    y = _power_vector(samples)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("target power is constant")
    X = term_matrix(samples, candidate_terms)
    means, stds = _standardization_stats(X, candidate_terms)
    Z = (X - means) / stds
    ones = np.ones((n, 1))

    results: list[SubsetResult] = []
    for size in range(1, max_subset_size + 1):
        scored = []
        for combo in itertools.combinations(range(p), size):
            design = np.hstack([ones, Z[:, combo]])
            _, residuals, rank, _ = np.linalg.lstsq(design, y, rcond=None)
            if rank == design.shape[1] and residuals.size:
                rss = float(residuals[0])
            else:
                coef, *_ = np.linalg.lstsq(design, y, rcond=None)
                rss = float(np.sum((y - design @ coef) ** 2))
            terms = tuple(candidate_terms[i] for i in combo)
            scored.append(
                SubsetResult(
                    terms=terms,
                    rss=rss,
                    adj_r2=adjusted_r2(1.0 - rss / ss_tot, n, size),
                    bic=bic_score(rss, n, size),
                )
            )
        scored.sort(key=lambda r: (r.rss, r.labels))
        results.extend(scored[:top_k])
    return results


def rank_by_bic(results: Sequence[SubsetResult]) -> list[SubsetResult]:
    """Overall ranking by BIC; ties prefer fewer terms, then label order."""
    return sorted(results, key=lambda r: (r.bic, r.size, r.labels))


def rank_by_adj_r2(results: Sequence[SubsetResult]) -> list[SubsetResult]:
    """Overall ranking by adjusted R^2; ties prefer fewer terms, then labels."""
    return sorted(results, key=lambda r: (-r.adj_r2, r.size, r.labels))


# ---------------------------------------------------------------------------
# Model artifact (versioned JSON)
# ---------------------------------------------------------------------------

MODEL_FORMAT = 1


def model_to_dict(model: PowerModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "spec": {
            "os": model.spec.os,
            "mode": model.spec.mode,
            "terms": [{"kind": t.kind, "metrics": list(t.metrics)} for t in model.spec.terms],
        },
        "intercept": model.intercept,
        "coefficients": list(model.coefficients),
        "feature_means": list(model.feature_means),
        "feature_stds": list(model.feature_stds),
        "fitted_on": model.fitted_on,
        "seed": model.seed,
    }


def model_from_dict(doc: dict) -> PowerModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    spec = FeatureSpec(
        os=doc["spec"]["os"],
        mode=doc["spec"]["mode"],
        terms=tuple(Term(t["kind"], tuple(t["metrics"])) for t in doc["spec"]["terms"]),
    )
    return PowerModel(
        spec=spec,
        intercept=float(doc["intercept"]),
        coefficients=tuple(float(c) for c in doc["coefficients"]),
        feature_means=tuple(float(m) for m in doc["feature_means"]),
        feature_stds=tuple(float(s) for s in doc["feature_stds"]),
        fitted_on=int(doc["fitted_on"]),
        seed=doc.get("seed"),
    )


def save_model(model: PowerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> PowerModel:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_dict(json.load(f))
