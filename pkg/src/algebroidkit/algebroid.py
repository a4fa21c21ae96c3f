"""Lie algebroids in a global frame over one chart.

An algebroid of rank ``n`` over an ``m``-dimensional chart is stored as

* ``anchor[a][i]``: the ``i``-th coordinate of ``rho(e_a)``;
* ``structure[(a, b)]`` for ``a < b``: the coefficients ``C^c_ab`` of
  ``[e_a, e_b] = sum_c C^c_ab e_c``.

Brackets of arbitrary sections follow from these by the Leibniz rule.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from . import linalg
from . import scalar_field as sf
from .validation import SamplePlan, ValidationReport, flag_check, residual_check, sample_points

DEFAULT_TOL = 1e-8


class ShapeMismatchError(ValueError):
    pass


class DegenerateMapError(ValueError):
    pass


def as_field(value, chart: sf.ChartDomain) -> sf.ScalarField:
    if isinstance(value, sf.ScalarField):
        if value.chart != chart:
            raise ShapeMismatchError("field lives on a different chart")
        return value
    if isinstance(value, str):
        return sf.parse_expression(value, chart)
    return sf.ScalarField.constant(value, chart)


class Section:
    """Frame coefficients of a section of an algebroid."""

    __slots__ = ("coeffs", "chart")

    def __init__(self, coeffs: Sequence, chart: sf.ChartDomain):
        self.chart = chart
        self.coeffs = tuple(as_field(c, chart) for c in coeffs)

    @classmethod
    def zero(cls, rank, chart):
        return cls([0.0] * rank, chart)

    @classmethod
    def frame(cls, a, rank, chart):
        return cls([1.0 if b == a else 0.0 for b in range(rank)], chart)

    @property
    def rank(self):
        return len(self.coeffs)

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, a):
        return self.coeffs[a]

    def __iter__(self):
        return iter(self.coeffs)

    def _check(self, other):
        if other.rank != self.rank or other.chart != self.chart:
            raise ShapeMismatchError("sections belong to different bundles")

    def __add__(self, other):
        self._check(other)
        return Section([a + b for a, b in zip(self.coeffs, other.coeffs)], self.chart)

    def __sub__(self, other):
        self._check(other)
        return Section([a - b for a, b in zip(self.coeffs, other.coeffs)], self.chart)

    def __neg__(self):
        return Section([-a for a in self.coeffs], self.chart)

    def __mul__(self, f):
        f = as_field(f, self.chart)
        return Section([f * a for a in self.coeffs], self.chart)

    __rmul__ = __mul__

    def evaluate(self, points) -> np.ndarray:
        """Coefficients at ``points``; shape ``(n_points, rank)``."""
        return sf.evaluate_fields(self.coeffs, points, self.chart).T

    def __repr__(self):
        return "Section(" + ", ".join(str(c) for c in self.coeffs) + ")"


class LieAlgebroid:
    def __init__(self, chart, frame_names, anchor, structure=None, name=""):
        self.chart = chart
        self.name = name
        self.frame_names = tuple(frame_names)
        n = len(self.frame_names)
        if n < 1:
            raise ValueError("rank must be positive")
        if len(set(self.frame_names)) != n:
            raise ValueError("frame names must be distinct")
        if len(anchor) != n or any(len(row) != chart.dim for row in anchor):
            raise ShapeMismatchError("anchor must be an n x m matrix")
        self.anchor = tuple(tuple(as_field(e, chart) for e in row) for row in anchor)
        self._structure = {}
        for (a, b), coeffs in (structure or {}).items():
            if not (0 <= a < n and 0 <= b < n):
                raise IndexError(f"structure key {(a, b)} out of range for rank {n}")
            if a == b:
                raise ValueError("[e_a, e_a] is zero by antisymmetry and cannot be specified")
            if len(coeffs) != n:
                raise ShapeMismatchError("structure vectors need one entry per frame element")
            fields = tuple(as_field(c, chart) for c in coeffs)
            if a > b:
                a, b = b, a
                fields = tuple(-f for f in fields)
            if any(not f.is_zero for f in fields):
                self._structure[(a, b)] = fields
        self._zero = sf.ScalarField.constant(0.0, chart)

    # basic data -----------------------------------------------------------
    @property
    def rank(self) -> int:
        return len(self.frame_names)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def structure(self, a: int, b: int):
        """``C^c_ab`` for ``c = 0..n-1`` with antisymmetry applied."""
        if a == b:
            return (self._zero,) * self.rank
        if a < b:
            return self._structure.get((a, b), (self._zero,) * self.rank)
        return tuple(-f for f in self._structure.get((b, a), (self._zero,) * self.rank))

    def structure_items(self):
        return sorted(self._structure.items())

    def frame(self, a) -> Section:
        return Section.frame(a, self.rank, self.chart)

    def section(self, coeffs) -> Section:
        if len(coeffs) != self.rank:
            raise ShapeMismatchError("section needs rank coefficients")
        return Section(coeffs, self.chart)

    def field(self, value) -> sf.ScalarField:
        return as_field(value, self.chart)

    def all_fields(self):
        out = [e for row in self.anchor for e in row]
        for _, coeffs in self.structure_items():
            out.extend(coeffs)
        return out

    def sample(self, plan: SamplePlan | None = None, extra=()):
        return sample_points(self.chart, plan, list(self.all_fields()) + list(extra))

    # pointwise arrays -----------------------------------------------------
    def anchor_at(self, points) -> np.ndarray:
        """Anchor matrices ``R[p, i, a] = rho^i_a``; shape ``(N, m, n)``."""
        n, m = self.rank, self.dim
        pts = sf._as_points(points, m)
        flat = [self.anchor[a][i] for i in range(m) for a in range(n)]
        vals = sf.evaluate_fields(flat, pts, self.chart)
        return vals.T.reshape(len(pts), m, n)

    def structure_at(self, points) -> np.ndarray:
        """Structure constants ``C[p, c, a, b]``; shape ``(N, n, n, n)``."""
        n = self.rank
        pts = sf._as_points(points, self.dim)
        out = np.zeros((len(pts), n, n, n))
        items = self.structure_items()
        if not items:
            return out
        flat = [f for _, coeffs in items for f in coeffs]
        vals = sf.evaluate_fields(flat, pts, self.chart).reshape(len(items), n, -1)
        for k, ((a, b), _) in enumerate(items):
            out[:, :, a, b] = vals[k].T
            out[:, :, b, a] = -vals[k].T
        return out

    def __repr__(self):
        return f"LieAlgebroid({self.name or 'unnamed'}, rank={self.rank}, dim={self.dim})"


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _check_section(A: LieAlgebroid, S: Section):
    if S.rank != A.rank or S.chart != A.chart:
        raise ShapeMismatchError("section does not belong to this algebroid")


def anchor_apply(A: LieAlgebroid, S: Section):
    """Coordinates of the vector field ``rho(S)``."""
    _check_section(A, S)
    return [
        linalg.sym_sum([A.anchor[a][i] * S[a] for a in range(A.rank)], A.chart)
        for i in range(A.dim)
    ]


def vector_field_derivative(X: Sequence[sf.ScalarField], f: sf.ScalarField, chart) -> sf.ScalarField:
    return linalg.sym_sum([X[i] * f.diff(i) for i in range(chart.dim) if not X[i].is_zero], chart)


def derivation(A: LieAlgebroid, S: Section, f) -> sf.ScalarField:
    """``rho(S) . f``"""
    f = A.field(f)
    if f.is_constant:
        return sf.ScalarField.constant(0.0, A.chart)
    return vector_field_derivative(anchor_apply(A, S), f, A.chart)


def bracket(A: LieAlgebroid, S: Section, T: Section) -> Section:
    """``[S,T]^c = S^a T^b C^c_ab + rho(S).T^c - rho(T).S^c``"""
    _check_section(A, S)
    _check_section(A, T)
    n = A.rank
    terms = [[] for _ in range(n)]
    for (a, b), coeffs in A.structure_items():
        w = S[a] * T[b] - S[b] * T[a]
        if w.is_zero:
            continue
        for c in range(n):
            if not coeffs[c].is_zero:
                terms[c].append(w * coeffs[c])
    rs, rt = anchor_apply(A, S), anchor_apply(A, T)
    for c in range(n):
        terms[c].append(vector_field_derivative(rs, T[c], A.chart))
        terms[c].append(-vector_field_derivative(rt, S[c], A.chart))
    return Section([linalg.sym_sum(t, A.chart) for t in terms], A.chart)


def frame_bracket(A: LieAlgebroid, a: int, b: int) -> Section:
    return Section(A.structure(a, b), A.chart)


def _anchor_homomorphism_fields(A: LieAlgebroid):
    n, m = A.rank, A.dim
    out = []
    for a, b in itertools.combinations(range(n), 2):
        C = A.structure(a, b)
        for i in range(m):
            lhs = linalg.sym_sum([C[c] * A.anchor[c][i] for c in range(n)], A.chart)
            rhs = linalg.sym_sum(
                [A.anchor[a][j] * A.anchor[b][i].diff(j) - A.anchor[b][j] * A.anchor[a][i].diff(j) for j in range(m)],
                A.chart,
            )
            out.append(lhs - rhs)
    return out


def jacobiator(A: LieAlgebroid, S: Section, T: Section, U: Section) -> Section:
    return (
        bracket(A, bracket(A, S, T), U)
        + bracket(A, bracket(A, T, U), S)
        + bracket(A, bracket(A, U, S), T)
    )


def _frame_jacobi_fields(A: LieAlgebroid):
    out = []
    for a, b, c in itertools.combinations(range(A.rank), 3):
        out.extend(jacobiator(A, A.frame(a), A.frame(b), A.frame(c)).coeffs)
    return out


def validate_algebroid(A: LieAlgebroid, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> ValidationReport:
    """Anchor-homomorphism and Jacobi residuals on frame elements at samples."""
    pts = A.sample(plan)
    report = ValidationReport(tolerance=tol, samples=len(pts))
    hom = sf.evaluate_fields(_anchor_homomorphism_fields(A), pts, A.chart)
    report.add(residual_check("anchor_homomorphism", hom, pts, tol))
    jac = sf.evaluate_fields(_frame_jacobi_fields(A), pts, A.chart)
    report.add(residual_check("jacobi", jac, pts, tol))
    return report


def kernel_basis_at(A: LieAlgebroid, p, rank_tol=linalg.DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of ``ker rho_p`` as the columns of an ``(n, k)`` array."""
    R = A.anchor_at(p)[0]
    if A.dim == 0:
        return np.eye(A.rank)
    return linalg.nullspace(R, rank_tol)


def anchor_rank_at(A: LieAlgebroid, p, rank_tol=linalg.DEFAULT_RANK_TOL) -> int:
    return A.rank - kernel_basis_at(A, p, rank_tol).shape[1]


# ---------------------------------------------------------------------------
# morphisms
# ---------------------------------------------------------------------------


class AlgebroidMorphism:
    """``(Phi, phi)``: ``Phi(e_a) = sum_b fiber_map[b][a] f_b`` over ``phi``."""

    def __init__(self, source: LieAlgebroid, target: LieAlgebroid, base_map, fiber_map, name=""):
        self.source = source
        self.target = target
        self.name = name
        if len(base_map) != target.dim:
            raise ShapeMismatchError("base map needs one component per target coordinate")
        if len(fiber_map) != target.rank or any(len(r) != source.rank for r in fiber_map):
            raise ShapeMismatchError("fiber map must be target.rank x source.rank")
        self.base_map = tuple(as_field(f, source.chart) for f in base_map)
        self.fiber_map = tuple(tuple(as_field(e, source.chart) for e in row) for row in fiber_map)

    @classmethod
    def identity(cls, A: LieAlgebroid):
        base = [sf.ScalarField.coordinate(i, A.chart) for i in range(A.dim)]
        fiber = [[1.0 if a == b else 0.0 for a in range(A.rank)] for b in range(A.rank)]
        return cls(A, A, base, fiber, name="identity")

    def pull_field(self, f: sf.ScalarField) -> sf.ScalarField:
        """``f o phi`` as a field on the source chart."""
        if self.target.dim == 0:
            return sf.ScalarField(f.node, self.source.chart)
        return f.compose(self.base_map)

    def jacobian(self):
        src = self.source.chart
        return [[f.diff(i) for i in range(src.dim)] for f in self.base_map]

    def apply(self, S: Section):
        """Coefficients of ``Phi(S)`` in the target frame, as source-chart fields."""
        return [
            linalg.sym_sum([self.fiber_map[b][a] * S[a] for a in range(self.source.rank)], self.source.chart)
            for b in range(self.target.rank)
        ]


def _check_base_map(Phi: AlgebroidMorphism, pts):
    src, tgt = Phi.source, Phi.target
    if src.dim != tgt.dim:
        raise DegenerateMapError("base map between charts of different dimension")
    if src.dim == 0:
        return np.ones(len(pts))
    jac = linalg.sym_evaluate(Phi.jacobian(), pts, src.chart)
    dets = np.linalg.det(jac)
    if np.any(np.abs(dets) < 1e-8):
        j = int(np.argmin(np.abs(dets)))
        raise DegenerateMapError(f"base map Jacobian nearly singular at {tuple(pts[j])}")
    images = sf.evaluate_fields(Phi.base_map, pts, src.chart).T
    for i, (lo, hi) in enumerate(tgt.chart.box):
        if np.any(images[:, i] < lo) or np.any(images[:, i] > hi):
            raise DegenerateMapError("base map leaves the target sampling box")
    return dets


def check_morphism(Phi: AlgebroidMorphism, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> ValidationReport:
    """Anchor compatibility and bracket preservation on frame sections.

    The bracket of the pushed-forward frame sections is computed on the
    target with the chain rule through the inverse Jacobian, so neither
    residual presupposes the other.
    """
    src, tgt = Phi.source, Phi.target
    n, n2, m = src.rank, tgt.rank, src.dim
    pts = src.sample(plan, extra=list(Phi.base_map) + [e for r in Phi.fiber_map for e in r])
    _check_base_map(Phi, pts)
    report = ValidationReport(tolerance=tol, samples=len(pts))

    images = sf.evaluate_fields(Phi.base_map, pts, src.chart).T if m else np.zeros((len(pts), 0))
    F = linalg.sym_evaluate(Phi.fiber_map, pts, src.chart)  # (N, n2, n)
    R_src = src.anchor_at(pts)  # (N, m, n)
    R_tgt = tgt.anchor_at(images)  # (N, m, n2)
    C_src = src.structure_at(pts)
    C_tgt = tgt.structure_at(images)
    if m:
        D = linalg.sym_evaluate(Phi.jacobian(), pts, src.chart)  # (N, m, m)
        Dinv = np.linalg.inv(D)
        Fgrad = np.stack(
            [linalg.sym_evaluate([[e.diff(i) for e in row] for row in Phi.fiber_map], pts, src.chart) for i in range(m)],
            axis=-1,
        )  # (N, n2, n, m) derivative along source coords
    else:
        D = np.zeros((len(pts), 0, 0))
        Dinv = D
        Fgrad = np.zeros((len(pts), n2, n, 0))

    anchor_res = np.einsum("pjb,pba->pja", R_tgt, F) - np.einsum("pji,pia->pja", D, R_src)
    report.add(residual_check("anchor_compatibility", anchor_res.transpose(1, 2, 0), pts, tol))

    # Phi([e_a, e_b])^c
    lhs = np.einsum("pcd,pdab->pcab", F, C_src)
    # [Phi e_a, Phi e_b]^c at phi(p)
    alg = np.einsum("pda,peb,pcde->pcab", F, F, C_tgt)
    v = np.einsum("pjd,pda->pja", R_tgt, F)  # rho_B(Phi e_a) in target coordinates
    grad_tgt = np.einsum("pcbi,pij->pcbj", Fgrad, Dinv)  # d/dy of fiber entries
    der = np.einsum("pja,pcbj->pcab", v, grad_tgt)
    rhs = alg + der - der.transpose(0, 1, 3, 2)
    report.add(residual_check("bracket_preservation", (lhs - rhs).transpose(1, 2, 3, 0), pts, tol))
    return report


class Endomorphism:
    """Bundle endomorphism acting on frame coefficients:
    ``(J S)^b = sum_a matrix[b][a] S^a``."""

    def __init__(self, matrix, chart):
        n = len(matrix)
        if any(len(row) != n for row in matrix):
            raise ShapeMismatchError("endomorphism must be square")
        self.chart = chart
        self.matrix = [[as_field(e, chart) for e in row] for row in matrix]

    @property
    def rank(self):
        return len(self.matrix)

    def apply(self, S: Section) -> Section:
        n = self.rank
        return Section(
            [linalg.sym_sum([self.matrix[b][a] * S[a] for a in range(n) if not self.matrix[b][a].is_zero], self.chart)
             for b in range(n)],
            self.chart,
        )

    def at(self, points):
        return linalg.sym_evaluate(self.matrix, points, self.chart)

    def fields(self):
        return [e for row in self.matrix for e in row]
