"""Shared corpus of generating functions and session-scoped geometry."""

import pytest

from akquant.jets import Chart
from akquant.lagrange_geometry import build_lagrange

BASE2 = (0.1, -0.2, 0.8, 0.6)
BASE1 = (0.1, 0.7)

# five regular generating functions on the n=2 chart, deliberately mixed:
# flat, conformally flat, anisotropic, split signature, genuinely quartic
LAGRANGIANS2 = {
    "flat": "(y3^2 + y4^2)/2",
    "conformal": "exp(2*x1)*(y3^2 + y4^2)/2",
    "anisotropic": "(y3^2 + (1 + x1^2)*y4^2)/2",
    "pseudo": "exp(2*x2)*(y3^2 - y4^2)/2",
    "quartic": "sqrt(y3^4 + y4^4 + (y3*y4)^2)",
}

LAGRANGIANS1 = {
    "flat1": "y2^2/2",
    "conformal1": "exp(2*x1)*y2^2/2",
}

JET_ORDER = 8


def chart_n2(order=JET_ORDER):
    return Chart.standard(2, BASE2, jet_order=order)


def chart_n1(order=JET_ORDER):
    return Chart.standard(1, BASE1, jet_order=order)


@pytest.fixture(scope="session")
def corpus2():
    ch = chart_n2()
    return {name: build_lagrange(expr, ch) for name, expr in LAGRANGIANS2.items()}


@pytest.fixture(scope="session")
def corpus1():
    ch = chart_n1()
    return {name: build_lagrange(expr, ch) for name, expr in LAGRANGIANS1.items()}
