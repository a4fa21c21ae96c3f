"""Differential forms on an algebroid and the Cartan calculus.

A degree-``k`` form stores one coefficient per strictly increasing index
tuple, ``alpha(e_a1, ..., e_ak)`` for ``a1 < ... < ak``; any other ordering
picks up the permutation sign.  Coefficients are symbolic, so exterior
derivatives of exterior derivatives stay exact.
"""

from __future__ import annotations

import itertools
from typing import Mapping

import numpy as np

from . import linalg
from . import scalar_field as sf
from .algebroid import (
    AlgebroidMorphism,
    LieAlgebroid,
    Section,
    ShapeMismatchError,
    as_field,
    derivation,
)


class DegreeError(ValueError):
    pass


def _sorted_with_sign(indices):
    """Sorted tuple and permutation sign; sign 0 when an index repeats."""
    if len(set(indices)) != len(indices):
        return None, 0
    return tuple(sorted(indices)), linalg.permutation_sign(indices)


class AlgebroidForm:
    __slots__ = ("rank", "degree", "chart", "coeffs")

    def __init__(self, rank: int, degree: int, coeffs: Mapping, chart: sf.ChartDomain):
        if not 0 <= degree:
            raise DegreeError("degree must be non-negative")
        self.rank = rank
        self.degree = degree
        self.chart = chart
        acc: dict = {}
        if degree <= rank:
            for idx, value in coeffs.items():
                idx = tuple(idx)
                if len(idx) != degree or any(not 0 <= a < rank for a in idx):
                    raise ShapeMismatchError(f"bad multi-index {idx} for a {degree}-form of rank {rank}")
                key, sign = _sorted_with_sign(idx)
                if sign == 0:
                    continue
                f = as_field(value, chart)
                if sign < 0:
                    f = -f
                acc[key] = acc[key] + f if key in acc else f
        self.coeffs = {k: v for k, v in sorted(acc.items()) if not v.is_zero}

    # construction ---------------------------------------------------------
    @classmethod
    def zero(cls, rank, degree, chart):
        return cls(rank, degree, {}, chart)

    @classmethod
    def function(cls, f, rank, chart):
        return cls(rank, 0, {(): f}, chart)

    @classmethod
    def basis(cls, rank, indices, chart, coeff=1.0):
        return cls(rank, len(indices), {tuple(indices): coeff}, chart)

    @classmethod
    def from_matrix(cls, M, chart):
        """2-form from an antisymmetric matrix of coefficients (upper triangle read)."""
        n = len(M)
        return cls(n, 2, {(a, b): M[a][b] for a in range(n) for b in range(a + 1, n)}, chart)

    @classmethod
    def from_covector(cls, coeffs, chart):
        return cls(len(coeffs), 1, {(a,): c for a, c in enumerate(coeffs)}, chart)

    # access ---------------------------------------------------------------
    def component(self, indices) -> sf.ScalarField:
        key, sign = _sorted_with_sign(tuple(indices))
        if sign == 0 or key not in self.coeffs:
            return sf.ScalarField.constant(0.0, self.chart)
        f = self.coeffs[key]
        return f if sign > 0 else -f

    def is_zero(self) -> bool:
        return not self.coeffs

    def fields(self):
        return list(self.coeffs.values())

    def evaluate(self, points) -> dict:
        """Coefficient values keyed by sorted multi-index; arrays over points."""
        keys = list(self.coeffs)
        if not keys:
            return {}
        vals = sf.evaluate_fields([self.coeffs[k] for k in keys], points, self.chart)
        return dict(zip(keys, vals))

    def dense_at(self, points) -> np.ndarray:
        """Full antisymmetric coefficient tensor, shape ``(N,) + (n,)*degree``."""
        pts = sf._as_points(points, self.chart.dim)
        n, k = self.rank, self.degree
        out = np.zeros((len(pts),) + (n,) * k)
        for idx, vals in self.evaluate(pts).items():
            for perm in itertools.permutations(range(k)):
                sign = linalg.permutation_sign(perm)
                out[(slice(None),) + tuple(idx[p] for p in perm)] = sign * vals
        return out

    def _check(self, other):
        if other.rank != self.rank or other.chart != self.chart:
            raise ShapeMismatchError("forms belong to different algebroids")
        if other.degree != self.degree:
            raise DegreeError("cannot add forms of different degree")

    def __add__(self, other):
        self._check(other)
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs[k] + v if k in coeffs else v
        return AlgebroidForm(self.rank, self.degree, coeffs, self.chart)

    def __neg__(self):
        return AlgebroidForm(self.rank, self.degree, {k: -v for k, v in self.coeffs.items()}, self.chart)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, f):
        f = as_field(f, self.chart)
        return AlgebroidForm(self.rank, self.degree, {k: f * v for k, v in self.coeffs.items()}, self.chart)

    __rmul__ = __mul__

    def __repr__(self):
        body = ", ".join(f"{k}: {v}" for k, v in self.coeffs.items())
        return f"AlgebroidForm(degree={self.degree}, {{{body}}})"


def _zero_field(chart):
    return sf.ScalarField.constant(0.0, chart)


def _check_same(A: LieAlgebroid, alpha: AlgebroidForm):
    if alpha.rank != A.rank or alpha.chart != A.chart:
        raise ShapeMismatchError("form does not belong to this algebroid")


def wedge(alpha: AlgebroidForm, beta: AlgebroidForm) -> AlgebroidForm:
    if alpha.rank != beta.rank or alpha.chart != beta.chart:
        raise ShapeMismatchError("forms belong to different algebroids")
    degree = alpha.degree + beta.degree
    if degree > alpha.rank:
        raise DegreeError("wedge degree exceeds the rank")
    acc: dict = {}
    for I, a in alpha.coeffs.items():
        for J, b in beta.coeffs.items():
            if set(I) & set(J):
                continue
            key, sign = _sorted_with_sign(I + J)
            term = a * b
            if sign < 0:
                term = -term
            acc.setdefault(key, []).append(term)
    coeffs = {k: linalg.sym_sum(v, alpha.chart) for k, v in acc.items()}
    return AlgebroidForm(alpha.rank, degree, coeffs, alpha.chart)


def interior_product(S: Section, alpha: AlgebroidForm) -> AlgebroidForm:
    """``(i_S alpha)(T_1..T_{k-1}) = alpha(S, T_1..T_{k-1})``"""
    if alpha.degree == 0:
        raise DegreeError("interior product of a 0-form")
    if S.rank != alpha.rank or S.chart != alpha.chart:
        raise ShapeMismatchError("section and form belong to different algebroids")
    acc: dict = {}
    for I, coeff in alpha.coeffs.items():
        for pos, a in enumerate(I):
            if S[a].is_zero:
                continue
            rest = I[:pos] + I[pos + 1 :]
            term = S[a] * coeff
            acc.setdefault(rest, []).append(-term if pos % 2 else term)
    coeffs = {k: linalg.sym_sum(v, alpha.chart) for k, v in acc.items()}
    return AlgebroidForm(alpha.rank, alpha.degree - 1, coeffs, alpha.chart)


def exterior_derivative(A: LieAlgebroid, alpha: AlgebroidForm) -> AlgebroidForm:
    """Algebroid differential evaluated on frame tuples ``e_a0 < ... < e_ak``.

    ``sum_i (-1)^i rho(e_ai).alpha(..^ai..)
      + sum_{i<j} (-1)^(i+j) alpha([e_ai, e_aj], ..^ai..^aj..)``
    """
    _check_same(A, alpha)
    n, k = A.rank, alpha.degree
    if k + 1 > n or alpha.is_zero():
        return AlgebroidForm.zero(n, k + 1, A.chart)
    chart = A.chart
    coeffs = {}
    for idx in itertools.combinations(range(n), k + 1):
        terms = []
        for i, a in enumerate(idx):
            rest = idx[:i] + idx[i + 1 :]
            c = alpha.component(rest)
            if c.is_constant:
                continue
            t = derivation(A, A.frame(a), c)
            terms.append(-t if i % 2 else t)
        for i, j in itertools.combinations(range(k + 1), 2):
            C = A.structure(idx[i], idx[j])
            rest = idx[:i] + idx[i + 1 : j] + idx[j + 1 :]
            inner = [C[c] * alpha.component((c,) + rest) for c in range(n) if not C[c].is_zero]
            if not inner:
                continue
            t = linalg.sym_sum(inner, chart)
            terms.append(-t if (i + j) % 2 else t)
        total = linalg.sym_sum(terms, chart)
        if not total.is_zero:
            coeffs[idx] = total
    return AlgebroidForm(n, k + 1, coeffs, chart)


def lie_derivative(A: LieAlgebroid, S: Section, alpha: AlgebroidForm) -> AlgebroidForm:
    """Cartan formula ``L_S = i_S d + d i_S``."""
    _check_same(A, alpha)
    if alpha.degree == 0:
        return AlgebroidForm.function(derivation(A, S, alpha.component(())), A.rank, A.chart)
    first = (
        interior_product(S, exterior_derivative(A, alpha))
        if alpha.degree < A.rank
        else AlgebroidForm.zero(A.rank, alpha.degree, A.chart)
    )
    return first + exterior_derivative(A, interior_product(S, alpha))


def pullback(Phi: AlgebroidMorphism, alpha: AlgebroidForm) -> AlgebroidForm:
    """``(Phi^* alpha)_p(e_a1..e_ak) = alpha_phi(p)(Phi e_a1, ..., Phi e_ak)``"""
    src, tgt = Phi.source, Phi.target
    if alpha.rank != tgt.rank or alpha.chart != tgt.chart:
        raise ShapeMismatchError("form must live on the morphism target")
    k = alpha.degree
    pulled = {J: Phi.pull_field(c) for J, c in alpha.coeffs.items()}
    coeffs = {}
    for I in itertools.combinations(range(src.rank), k):
        terms = []
        for J, c in pulled.items():
            minor = [[Phi.fiber_map[b][a] for a in I] for b in J]
            det = linalg.sym_det(minor, src.chart)
            if not det.is_zero:
                terms.append(c * det)
        total = linalg.sym_sum(terms, src.chart)
        if not total.is_zero:
            coeffs[I] = total
    return AlgebroidForm(src.rank, k, coeffs, src.chart)


def evaluate_on_sections(alpha: AlgebroidForm, sections, points) -> np.ndarray:
    """``alpha(S_1, ..., S_k)`` at ``points`` (pointwise multilinear contraction)."""
    k = alpha.degree
    if len(sections) != k:
        raise DegreeError("need one section per form slot")
    dense = alpha.dense_at(points)
    if k == 0:
        return dense
    vals = [S.evaluate(points) for S in sections]
    out = dense
    for v in vals:
        out = np.einsum("pa,pa...->p...", v, out)
    return out
