"""Shared fixtures: builtin polytopes and the metrics used across the suite."""

import pytest

from toric_bernstein.expr import parse
from toric_bernstein.metric import ToricMetric
from toric_bernstein.polytope import interval, standard_simplex, unit_cube

INTERVAL_PERTURBATION = "0.05*x1^2*(1-x1)^2"
SQUARE_PERTURBATION = "0.05*(x1^2*x2^2 + x1*x2)"


@pytest.fixture(scope="session")
def unit_interval():
    return interval()


@pytest.fixture(scope="session")
def simplex2():
    return standard_simplex(2)


@pytest.fixture(scope="session")
def square():
    return unit_cube(2)


@pytest.fixture(scope="session")
def interval_metric(unit_interval):
    return ToricMetric(unit_interval)


@pytest.fixture(scope="session")
def simplex_metric(simplex2):
    return ToricMetric(simplex2)


@pytest.fixture(scope="session")
def square_metric(square):
    return ToricMetric(square)


@pytest.fixture(scope="session")
def perturbed_interval_metric(unit_interval):
    return ToricMetric(unit_interval, parse(INTERVAL_PERTURBATION, 1))


@pytest.fixture(scope="session")
def perturbed_square_metric(square):
    return ToricMetric(square, parse(SQUARE_PERTURBATION, 2))
