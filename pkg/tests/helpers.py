"""Random polynomial data for property tests."""

import itertools

import numpy as np

from algebroidkit import scalar_field as sf
from algebroidkit.algebroid import Section
from algebroidkit.forms import AlgebroidForm


def random_poly(chart, rng, degree=2, terms=3):
    if chart.dim == 0:
        return sf.ScalarField.constant(round(float(rng.uniform(-1, 1)), 6), chart)
    out = sf.ScalarField.constant(round(float(rng.uniform(-1, 1)), 6), chart)
    for _ in range(terms):
        powers = rng.integers(0, degree + 1, size=chart.dim)
        mono = sf.ScalarField.constant(round(float(rng.uniform(-1, 1)), 6), chart)
        for i, k in enumerate(powers):
            if k:
                mono = mono * sf.ScalarField.coordinate(i, chart) ** int(k)
        out = out + mono
    return out


def random_section(A, rng, degree=2):
    return Section([random_poly(A.chart, rng, degree) for _ in range(A.rank)], A.chart)


def random_form(A, k, rng, degree=2, density=0.6):
    coeffs = {}
    for idx in itertools.combinations(range(A.rank), k):
        if k == 0 or rng.uniform() < density:
            coeffs[idx] = random_poly(A.chart, rng, degree)
    return AlgebroidForm(A.rank, k, coeffs, A.chart)


def max_abs_on(form, points):
    vals = form.evaluate(points)
    return max((float(np.abs(v).max()) for v in vals.values()), default=0.0)
