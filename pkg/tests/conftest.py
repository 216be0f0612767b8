"""Shared fixtures: feature specs, synthetic logs, and the reference run."""

import pytest

from drsim.experiment import paper_shape_scenario, run_experiment
from drsim.power_model import builtin_spec
from drsim.synthetic import default_true_model, generate_training_log


@pytest.fixture(scope="session")
def paper_run(tmp_path_factory):
    """One shared run of the three-laptop, five-event reference scenario."""
    out = tmp_path_factory.mktemp("paper_run")
    report = run_experiment(paper_shape_scenario(seed=42), out)
    return report, out


@pytest.fixture(scope="session")
def ubuntu_spec():
    return builtin_spec("ubuntu", "normal")


@pytest.fixture(scope="session")
def windows_spec():
    return builtin_spec("windows", "normal")


@pytest.fixture(scope="session")
def true_model_sd2():
    return default_true_model("ubuntu", "normal", noise_sd=2.0)


@pytest.fixture(scope="session")
def noisy_log_10k(true_model_sd2):
    return generate_training_log(true_model_sd2, n=10_000, seed=1234)
