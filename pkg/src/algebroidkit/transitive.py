"""Transitive algebroids: splittings, adjoint connections, curvature,
the ``TM + L`` constructor, invariant metrics and the Levi-Civita connection."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import linalg
from . import scalar_field as sf
from .algebroid import (
    DEFAULT_TOL,
    LieAlgebroid,
    Section,
    ShapeMismatchError,
    anchor_apply,
    as_field,
    bracket,
    validate_algebroid,
)
from .validation import SamplePlan, ValidationReport, residual_check


class NotTransitiveError(ValueError):
    pass


class InconsistentDataError(ValueError):
    """Input to the ``TM + L`` constructor fails the Jacobi identity."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotInKernelError(ValueError):
    pass


class BundleMetric:
    """Symmetric matrix of fields ``g(e_a, e_b)``."""

    def __init__(self, matrix, chart):
        n = len(matrix)
        if any(len(row) != n for row in matrix):
            raise ShapeMismatchError("metric must be square")
        self.chart = chart
        self.matrix = [[as_field(e, chart) for e in row] for row in matrix]
        for a in range(n):
            for b in range(a + 1, n):
                if self.matrix[a][b] != self.matrix[b][a]:
                    raise ValueError("metric matrix must be symmetric")

    @classmethod
    def identity(cls, n, chart):
        return cls([[1.0 if a == b else 0.0 for b in range(n)] for a in range(n)], chart)

    @property
    def rank(self):
        return len(self.matrix)

    def at(self, points):
        return linalg.sym_evaluate(self.matrix, points, self.chart)

    def fields(self):
        return [e for row in self.matrix for e in row]

    def pair(self, S: Section, T: Section) -> sf.ScalarField:
        n = self.rank
        return linalg.sym_sum(
            [self.matrix[a][b] * S[a] * T[b] for a in range(n) for b in range(n) if not self.matrix[a][b].is_zero],
            self.chart,
        )

    def check_positive(self, points):
        eig = np.linalg.eigvalsh(self.at(points))
        if np.any(eig[:, 0] <= 0):
            j = int(np.argmin(eig[:, 0]))
            raise ValueError(f"metric not positive definite at {tuple(np.asarray(points)[j])}")
        return eig[:, 0]


class Splitting:
    """``lam[a][i]``: coefficient of ``e_a`` in ``lambda(d/dx_i)``."""

    def __init__(self, algebroid: LieAlgebroid, matrix):
        self.algebroid = algebroid
        self.matrix = [[as_field(e, algebroid.chart) for e in row] for row in matrix]
        if len(self.matrix) != algebroid.rank or any(len(r) != algebroid.dim for r in self.matrix):
            raise ShapeMismatchError("splitting must be rank x dim")

    def column(self, i) -> Section:
        return Section([row[i] for row in self.matrix], self.algebroid.chart)

    def lift(self, X: Sequence) -> Section:
        A = self.algebroid
        X = [as_field(x, A.chart) for x in X]
        return Section(
            [linalg.sym_sum([row[i] * X[i] for i in range(A.dim)], A.chart) for row in self.matrix],
            A.chart,
        )

    def at(self, points):
        return linalg.sym_evaluate(self.matrix, points, self.algebroid.chart)

    def fields(self):
        return [e for row in self.matrix for e in row]


def anchor_matrix(A: LieAlgebroid):
    """Symbolic ``m x n`` matrix of the anchor as a linear map."""
    return [[A.anchor[a][i] for a in range(A.rank)] for i in range(A.dim)]


def check_surjective(A: LieAlgebroid, points, rank_tol=linalg.DEFAULT_RANK_TOL):
    R = A.anchor_at(points)
    for p, Rp in zip(points, R):
        if A.dim == 0:
            continue
        s = np.linalg.svd(Rp, compute_uv=False)
        if s.size < A.dim or s[-1] <= rank_tol * max(s[0], 1.0):
            raise NotTransitiveError(f"anchor not surjective at {tuple(p)}")


def splitting_from_metric(
    A: LieAlgebroid, g: BundleMetric, plan: SamplePlan | None = None, tol=DEFAULT_TOL
) -> Splitting:
    """The g-orthogonal lift ``lambda = G^-1 R^T (R G^-1 R^T)^-1``."""
    chart = A.chart
    pts = A.sample(plan, extra=g.fields())
    check_surjective(A, pts)
    R = anchor_matrix(A)
    Ginv = linalg.sym_inverse(g.matrix, chart)
    GR = linalg.sym_matmul(Ginv, linalg.sym_transpose(R), chart)
    M = linalg.sym_matmul(R, GR, chart)
    lam = Splitting(A, linalg.sym_matmul(GR, linalg.sym_inverse(M, chart), chart))
    res = np.einsum("pia,paj->pij", A.anchor_at(pts), lam.at(pts)) - np.eye(A.dim)
    if np.abs(res).max(initial=0.0) > tol:
        raise NotTransitiveError("rho o lambda differs from the identity")
    return lam


def kernel_projector(A: LieAlgebroid, lam: Splitting):
    """Symbolic ``I - lambda rho``: projector onto ``ker rho`` along ``im lambda``."""
    chart = A.chart
    LR = linalg.sym_matmul(lam.matrix, anchor_matrix(A), chart)
    n = A.rank
    return [[(1.0 if a == b else 0.0) - LR[a][b] for b in range(n)] for a in range(n)]


def kernel_frame(A: LieAlgebroid, lam: Splitting, rank_tol=linalg.DEFAULT_RANK_TOL):
    """Smooth kernel sections ``P e_a`` for a pivot set of columns of the
    projector, chosen at the box center (a frame of ``ker rho`` near it)."""
    P = kernel_projector(A, lam)
    Pc = linalg.sym_evaluate(P, A.chart.center, A.chart)[0]
    l = A.rank - A.dim
    if l <= 0:
        return []
    _, _, piv = scipy.linalg.qr(Pc, pivoting=True)
    cols = sorted(piv[:l])
    return [Section([P[a][c] for a in range(A.rank)], A.chart) for c in cols]


def _require_kernel(A, T: Section, plan, tol):
    pts = A.sample(plan, extra=list(T.coeffs))
    vals = sf.evaluate_fields(anchor_apply(A, T), pts, A.chart)
    if vals.size and np.abs(vals).max() > tol:
        raise NotInKernelError("section is not pointwise in ker rho")


def adjoint_connection(A: LieAlgebroid, lam: Splitting, X: Sequence, T: Section,
                       plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> Section:
    """``nabla_X T = [lambda(X), T]`` for ``T`` in the kernel."""
    _require_kernel(A, T, plan, tol)
    return bracket(A, lam.lift(X), T)


def curvature_two_form(A: LieAlgebroid, lam: Splitting, i: int, j: int) -> Section:
    """``Omega(d_i, d_j) = 1/2 ([lambda d_i, lambda d_j] - lambda [d_i, d_j])``;
    coordinate fields commute so the second term drops."""
    half = sf.ScalarField.constant(0.5, A.chart)
    return bracket(A, lam.column(i), lam.column(j)) * half


@dataclass
class TransitiveBuildInput:
    """Data for ``TM + L``.

    ``connection[i][l][k]``: coefficient of ``s_l`` in ``nabla_{d_i} s_k``.
    ``fiber_structure[(k, l)]``: ``[s_k, s_l]`` in the ``s`` frame.
    ``curvature[(i, j)]``: ``Omega(d_i, d_j)``, entering the bracket as
    ``[d_i, d_j] = Omega(d_i, d_j)``.
    """

    chart: sf.ChartDomain
    fiber_rank: int
    fiber_structure: dict = field(default_factory=dict)
    connection: list | None = None
    curvature: dict = field(default_factory=dict)
    fiber_names: tuple | None = None
    name: str = ""


def build_transitive(inp: TransitiveBuildInput, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> LieAlgebroid:
    chart, m, r = inp.chart, inp.chart.dim, inp.fiber_rank
    n = m + r
    names = [f"d{v}" for v in chart.var_names] + list(inp.fiber_names or [f"s{k + 1}" for k in range(r)])
    anchor = [[1.0 if (a < m and a == i) else 0.0 for i in range(m)] for a in range(n)]
    zero = [0.0] * m
    structure = {}
    for (i, j), vec in inp.curvature.items():
        if len(vec) != r:
            raise ShapeMismatchError("curvature values live in the fiber")
        structure[(i, j)] = zero + list(vec)
    if inp.connection is not None:
        if len(inp.connection) != m:
            raise ShapeMismatchError("need one connection matrix per base coordinate")
        for i, Gi in enumerate(inp.connection):
            for k in range(r):
                structure[(i, m + k)] = zero + [Gi[l][k] for l in range(r)]
    for (k, l), vec in inp.fiber_structure.items():
        if len(vec) != r:
            raise ShapeMismatchError("fiber brackets live in the fiber")
        structure[(m + k, m + l)] = zero + list(vec)
    A = LieAlgebroid(chart, names, anchor, structure, name=inp.name)
    report = validate_algebroid(A, plan, tol)
    if not report.passed:
        raise InconsistentDataError("connection and curvature violate the Jacobi identity", report)
    return A


def check_invariant_metric(A: LieAlgebroid, g: BundleMetric, plan: SamplePlan | None = None,
                           tol=DEFAULT_TOL) -> ValidationReport:
    """(i) ``nabla^lambda g_L = 0`` for the g-orthogonal splitting,
    (ii) ``g([S1,S2],S3) = g(S1,[S2,S3])`` on pointwise kernel bases."""
    chart = A.chart
    pts = A.sample(plan, extra=g.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    if A.dim:
        lam = splitting_from_metric(A, g, plan, tol)
        frame = kernel_frame(A, lam)
        fields = []
        for i in range(A.dim):
            Li = lam.column(i)
            X = anchor_apply(A, Li)
            for S, T in itertools.combinations_with_replacement(frame, 2):
                gst = g.pair(S, T)
                lhs = linalg.sym_sum([X[j] * gst.diff(j) for j in range(A.dim)], chart)
                rhs = g.pair(bracket(A, Li, S), T) + g.pair(S, bracket(A, Li, T))
                fields.append(lhs - rhs)
        vals = sf.evaluate_fields(fields, pts, chart)
        report.add(residual_check("connection_preserves_metric", vals, pts, tol))
    G = g.at(pts)
    C = A.structure_at(pts)
    R = A.anchor_at(pts)
    worst = np.zeros(len(pts))
    for p in range(len(pts)):
        K = linalg.nullspace(R[p]) if A.dim else np.eye(A.rank)
        if K.shape[1] == 0:
            continue
        br = np.einsum("cab,ai,bj->icj", C[p], K, K)  # [K_i, K_j] as vectors
        lhs = np.einsum("icj,cd,dk->ijk", br, G[p], K)  # g([Ki,Kj],Kk)
        rhs = np.einsum("ci,cd,jdk->ijk", K, G[p], br)  # g(Ki,[Kj,Kk])
        worst[p] = np.abs(lhs - rhs).max()
    report.add(residual_check("ad_invariance", worst[None, :], pts, tol))
    return report


def levi_civita(A: LieAlgebroid, g: BundleMetric, points) -> np.ndarray:
    """Christoffel coefficients ``Gamma[p, a, b, c]``: the ``e_c`` component of
    ``nabla_{e_a} e_b``, from the Koszul formula solved pointwise."""
    pts = sf._as_points(points, A.dim)
    n, m = A.rank, A.dim
    vals, grads = sf.field_jets(g.fields(), pts, A.chart)
    N = len(pts)
    G = vals.T.reshape(N, n, n)
    dG = grads.transpose(1, 0, 2).reshape(N, n, n, m)  # (N, b, c, i)
    R = A.anchor_at(pts)  # (N, i, a)
    C = A.structure_at(pts)  # (N, d, a, b)
    rho_g = np.einsum("pia,pbci->pabc", R, dG)  # rho(e_a) . g_bc
    gC = np.einsum("pdab,pdc->pabc", C, G)  # g([e_a,e_b], e_c)
    koszul = (
        rho_g
        + np.einsum("pbac->pabc", rho_g)
        - np.einsum("pcab->pabc", rho_g)
        + gC
        - np.einsum("pacb->pabc", gC)
        - np.einsum("pbca->pabc", gC)
    )
    eig = np.linalg.eigvalsh(G)
    if np.any(eig[:, 0] <= 0):
        raise np.linalg.LinAlgError("metric is singular or indefinite")
    rhs = 0.5 * koszul.reshape(len(pts), n * n, n)
    sol = np.linalg.solve(G[:, None, :, :], rhs[..., None])[..., 0]
    return sol.reshape(len(pts), n, n, n)


def levi_civita_at(A: LieAlgebroid, g: BundleMetric, p) -> np.ndarray:
    return levi_civita(A, g, p)[0]


def covariant_derivative(A: LieAlgebroid, g: BundleMetric, S: Section, T: Section, points) -> np.ndarray:
    """``(nabla_S T)(p)``; shape ``(N, n)``."""
    pts = sf._as_points(points, A.dim)
    Gam = levi_civita(A, g, pts)
    Sv = S.evaluate(pts)
    Tv, Tg = sf.field_jets(list(T.coeffs), pts, A.chart)  # (n, N), (n, N, m)
    R = A.anchor_at(pts)
    rhoS = np.einsum("pia,pa->pi", R, Sv)
    deriv = np.einsum("pi,cpi->pc", rhoS, Tg)
    return deriv + np.einsum("pa,bp,pabc->pc", Sv, Tv, Gam)
