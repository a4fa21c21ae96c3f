"""Sampling plans and validation reports shared by every verification routine."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import scalar_field as sf

DEFAULT_SEED = 20240917
DEFAULT_COUNT = 64
SAMPLING_MARGIN = 1e-6
STRATEGIES = ("uniform-random", "grid")


@dataclass(frozen=True)
class SamplePlan:
    count: int = DEFAULT_COUNT
    seed: int = DEFAULT_SEED
    strategy: str = "uniform-random"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("sample count must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @classmethod
    def from_env(cls, count=DEFAULT_COUNT, seed=DEFAULT_SEED, strategy="uniform-random"):
        """Like the constructor, but ``ALGEBROID_SEED`` overrides ``seed``."""
        env = os.environ.get("ALGEBROID_SEED")
        if env is not None and env.strip():
            seed = int(env)
        return cls(count, seed, strategy)


def _denominators(nodes: Iterable[sf.Node]):
    seen, stack, dens = set(), list(nodes), []
    while stack:
        nd = stack.pop()
        if nd in seen:
            continue
        seen.add(nd)
        if nd.kind == sf.DIV:
            dens.append(nd.args[1])
        elif nd.kind == sf.POW and nd.value < 0:
            dens.append(nd.args[0])
        stack.extend(nd.args)
    return dens


def _interior_draw(chart, rng, count):
    lo = np.array([b[0] for b in chart.box])
    hi = np.array([b[1] for b in chart.box])
    # keep a 2% collar so finite-difference stencils stay inside the box
    width = hi - lo
    u = rng.uniform(0.02, 0.98, size=(count, chart.dim))
    return lo + u * width


def _grid(chart, count):
    per_axis = max(1, math.ceil(count ** (1.0 / chart.dim)))
    axes = []
    for lo, hi in chart.box:
        step = (hi - lo) / per_axis
        axes.append(lo + step * (np.arange(per_axis) + 0.5))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, chart.dim)
    return mesh[:count]


def sample_points(chart: sf.ChartDomain, plan: SamplePlan | None = None, avoid: Sequence = ()) -> np.ndarray:
    """Deterministic interior sample points for ``chart``.

    The uniform strategy returns the box center followed by ``plan.count``
    random points.  Points where any denominator appearing in ``avoid``
    (fields or nodes) is smaller than ``SAMPLING_MARGIN`` are rejected and
    redrawn.
    """
    plan = plan or SamplePlan()
    if chart.dim == 0:
        return np.zeros((1, 0))
    nodes = [a.node if isinstance(a, sf.ScalarField) else a for a in avoid]
    dens = _denominators(nodes)

    def keep(pts):
        if not dens or not len(pts):
            return pts
        vals = _safe_eval(dens, pts, chart.dim)
        return pts[np.all(np.abs(vals) >= SAMPLING_MARGIN, axis=0)]

    if plan.strategy == "grid":
        return keep(_grid(chart, plan.count))
    rng = np.random.default_rng(plan.seed)
    pts = keep(chart.center.reshape(1, -1))
    rounds = 0
    while len(pts) < plan.count + 1:
        need = plan.count + 1 - len(pts)
        fresh = keep(_interior_draw(chart, rng, max(need, 8)))
        pts = np.vstack([pts, fresh[:need]])
        rounds += 1
        if rounds > 1000:
            raise RuntimeError("could not find enough sample points away from poles")
    return pts


def _safe_eval(nodes, pts, dim):
    # denominators of nested quotients may themselves contain poles; evaluate
    # point by point and mark failures as zero so they get rejected
    try:
        return sf.evaluate_nodes(nodes, pts, dim)
    except sf.DivisionNearZeroError:
        out = np.zeros((len(nodes), len(pts)))
        for j, p in enumerate(pts):
            try:
                out[:, j] = sf.evaluate_nodes(nodes, p, dim)[:, 0]
            except sf.DivisionNearZeroError:
                out[:, j] = 0.0
        return out


@dataclass
class Check:
    name: str
    max_residual: float
    worst_point: tuple
    passed: bool
    tolerance: float | None = None

    def to_dict(self):
        return {
            "name": self.name,
            "max_residual": float(self.max_residual),
            "worst_point": [float(v) for v in self.worst_point],
            "pass": bool(self.passed),
        }


@dataclass
class ValidationReport:
    """Outcome of a verification routine.

    ``checks`` are asserted: the report passes iff every one passes.
    ``diagnostics`` are recorded values that never affect the verdict, and
    ``flags`` carry hypothesis outcomes (e.g. ``{"admissible": False}``).
    """

    checks: list = field(default_factory=list)
    tolerance: float = 1e-8
    diagnostics: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    samples: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __bool__(self):
        return self.passed

    def check(self, name) -> Check:
        for c in self.checks + self.diagnostics:
            if c.name == name:
                return c
        raise KeyError(name)

    def has(self, name) -> bool:
        return any(c.name == name for c in self.checks + self.diagnostics)

    def add(self, check: Check, asserted=True):
        (self.checks if asserted else self.diagnostics).append(check)
        return check

    def merge(self, other: "ValidationReport", prefix=""):
        for c in other.checks:
            self.checks.append(_renamed(c, prefix))
        for c in other.diagnostics:
            self.diagnostics.append(_renamed(c, prefix))
        for k, v in other.flags.items():
            self.flags[prefix + k] = v
        self.samples = max(self.samples, other.samples)
        return self

    def to_dict(self, seed=None, tool_version=None):
        out = {
            "tool_version": tool_version,
            "seed": seed,
            "tolerance": float(self.tolerance),
            "checks": [c.to_dict() for c in self.checks],
            "pass": self.passed,
        }
        if self.diagnostics:
            out["diagnostics"] = [c.to_dict() for c in self.diagnostics]
        if self.flags:
            out["flags"] = {k: bool(v) for k, v in sorted(self.flags.items())}
        return out

    def lines(self):
        for c in self.checks:
            yield f"{c.name}: {'PASS' if c.passed else 'FAIL'} (max residual {c.max_residual:.3e})"
        for c in self.diagnostics:
            yield f"{c.name}: recorded {c.max_residual:.3e}"
        for k, v in sorted(self.flags.items()):
            yield f"{k}: {v}"


def _renamed(c, prefix):
    if not prefix:
        return c
    return Check(prefix + c.name, c.max_residual, c.worst_point, c.passed, c.tolerance)


def residual_check(name, values, points, tol) -> Check:
    """Largest absolute entry of ``values`` (shape ``(..., n_points)``)."""
    values = np.asarray(values, dtype=float)
    points = np.asarray(points, dtype=float)
    if values.size == 0:
        worst = tuple(points[0]) if len(points) else ()
        return Check(name, 0.0, worst, True, tol)
    per_point = np.abs(values.reshape(-1, values.shape[-1])).max(axis=0)
    j = int(np.argmax(per_point))
    worst = float(per_point[j])
    return Check(name, worst, tuple(points[j]), bool(worst <= tol), tol)


def lower_bound_check(name, values, points, bound) -> Check:
    """Smallest absolute value per point must exceed ``bound``.

    ``max_residual`` reports that smallest magnitude.
    """
    values = np.asarray(values, dtype=float)
    per_point = np.abs(values.reshape(-1, values.shape[-1])).min(axis=0)
    j = int(np.argmin(per_point))
    worst = float(per_point[j])
    return Check(name, worst, tuple(np.asarray(points)[j]), bool(worst > bound), bound)


def flag_check(name, ok: bool, point=()) -> Check:
    return Check(name, 0.0 if ok else 1.0, tuple(point), bool(ok), None)
