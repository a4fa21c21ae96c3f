"""Symplectic algebroids: Hamiltonian sections, the induced Poisson bracket,
compatible triples, Nijenhuis tensors, the pointwise fiber decomposition,
induced base structures, cotangent algebroids and the ``psi`` isomorphism.

Conventions (fixed once, see ``docs/conventions.md``):

* the Hamiltonian section solves ``omega(a_f, e_b) = (d f)(e_b)``;
* ``{f, g} = omega(a_f, a_g) = -rho(a_f) . g``;
* the cotangent anchor is ``rho(dx^i) = sum_j pi^{ij} d_j`` with
  ``pi^{ij} = {x^i, x^j}``, so ``rho(df) . g = {f, g}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from . import scalar_field as sf
from .algebroid import (
    DEFAULT_TOL,
    AlgebroidMorphism,
    Endomorphism,
    LieAlgebroid,
    Section,
    ShapeMismatchError,
    as_field,
    bracket,
    check_morphism,
    validate_algebroid,
)
from .forms import AlgebroidForm, exterior_derivative
from .transitive import (
    BundleMetric,
    NotTransitiveError,
    Splitting,
    anchor_matrix,
    check_invariant_metric,
    check_surjective,
    curvature_two_form,
    kernel_frame,
    levi_civita,
    splitting_from_metric,
)
from .validation import (
    Check,
    SamplePlan,
    ValidationReport,
    flag_check,
    lower_bound_check,
    residual_check,
)

SINGULAR_TOL = 1e-12


class SingularFormError(np.linalg.LinAlgError):
    def __init__(self, point, what="2-form"):
        self.point = tuple(float(v) for v in np.atleast_1d(point))
        super().__init__(f"{what} is degenerate at {self.point}")


class HypothesisError(ValueError):
    """A precondition of a construction fails at some sample point."""


class NotPoissonError(ValueError):
    pass


class DecompositionError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class SymplecticStructure:
    """A 2-form meant to be closed and nondegenerate (checked, not assumed)."""

    form: AlgebroidForm

    def __post_init__(self):
        if self.form.degree != 2:
            raise ValueError("a symplectic structure is a 2-form")


class AlmostComplexStructure(Endomorphism):
    def square_residual(self, points) -> np.ndarray:
        J = self.at(points)
        return J @ J + np.eye(self.rank)


@dataclass
class CompatibleTriple:
    omega: AlgebroidForm
    J: Endomorphism
    g: BundleMetric

    def __post_init__(self):
        if isinstance(self.omega, SymplecticStructure):
            self.omega = self.omega.form
        if not isinstance(self.J, Endomorphism):
            self.J = AlmostComplexStructure(self.J, self.omega.chart)
        if not isinstance(self.g, BundleMetric):
            self.g = BundleMetric(self.g, self.omega.chart)
        if not (self.omega.rank == self.J.rank == self.g.rank):
            raise ShapeMismatchError("triple components have different ranks")

    def fields(self):
        return self.omega.fields() + self.J.fields() + self.g.fields()


@dataclass
class FiberDecomposition:
    point: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray

    @property
    def dims(self):
        return tuple(int(b.shape[1]) for b in (self.E1, self.E2, self.L1, self.L2))

    def assembled(self):
        return np.hstack([self.E1, self.E2, self.L1, self.L2])


def _form(omega) -> AlgebroidForm:
    return omega.form if isinstance(omega, SymplecticStructure) else omega


def _endo(J, chart) -> Endomorphism:
    return J if isinstance(J, Endomorphism) else AlmostComplexStructure(J, chart)


def form_matrix(omega: AlgebroidForm):
    """Symbolic antisymmetric matrix ``W[a][b] = omega(e_a, e_b)``."""
    n = omega.rank
    return [[omega.component((a, b)) for b in range(n)] for a in range(n)]


def _flat(M):
    return [e for row in M for e in row]


# ---------------------------------------------------------------------------
# symplectic check and Hamiltonian sections
# ---------------------------------------------------------------------------


def check_symplectic(A: LieAlgebroid, omega, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> ValidationReport:
    omega = _form(omega)
    pts = A.sample(plan, extra=omega.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    d_omega = exterior_derivative(A, omega)
    vals = d_omega.evaluate(pts)
    res = np.array(list(vals.values())) if vals else np.zeros((0, len(pts)))
    report.add(residual_check("closed", res, pts, tol))
    if A.rank % 2:
        report.add(flag_check("even_rank", False, pts[0]))
        return report
    det = np.linalg.det(omega.dense_at(pts))
    report.add(lower_bound_check("nondegenerate", det[None, :], pts, tol))
    return report


class _HamiltonianData:
    """Anchor and form matrices with first derivatives, cached per point."""

    def __init__(self, A: LieAlgebroid, omega: AlgebroidForm):
        if omega.rank != A.rank or omega.chart != A.chart:
            raise ShapeMismatchError("form does not belong to this algebroid")
        self.A = A
        self.omega = omega
        n, m = A.rank, A.dim
        self._fields = _flat(form_matrix(omega)) + [A.anchor[a][i] for i in range(m) for a in range(n)]
        self._cache = {}

    def jets(self, p):
        key = tuple(np.asarray(p, dtype=float).ravel())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        n, m = self.A.rank, self.A.dim
        vals, grads = sf.field_jets(self._fields, np.asarray(key).reshape(1, m), self.A.chart)
        W = linalg.jets_of_matrix(vals[: n * n, 0], grads[: n * n, 0], (n, n))
        R = linalg.jets_of_matrix(vals[n * n :, 0], grads[n * n :, 0], (m, n))
        s = np.linalg.svd(W.value, compute_uv=False)
        if s.size and s[-1] <= SINGULAR_TOL * max(s[0], 1.0):
            raise SingularFormError(key)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = (W, R)
        return W, R

    def section(self, grad_f, p):
        """``a_f`` from the value of ``grad f`` at ``p``."""
        W, R = self.jets(p)
        return np.linalg.solve(-W.value, R.value.T @ grad_f)

    def section_jet(self, grad_jet: linalg.Jet, p) -> linalg.Jet:
        W, R = self.jets(p)
        return linalg.jet_solve(-W, R.T @ grad_jet)


def _gradient_jet(f: sf.ScalarField, p) -> linalg.Jet:
    m = f.chart.dim
    grads = f.gradient()
    if not m:
        return linalg.Jet(np.zeros(0), np.zeros((0, 0)))
    vals, hess = sf.field_jets(grads, np.asarray(p, dtype=float).reshape(1, m), f.chart)
    return linalg.Jet(vals[:, 0], hess[:, 0, :])


def _gradient_value(f, p) -> np.ndarray:
    if isinstance(f, sf.ScalarField):
        m = f.chart.dim
        if not m:
            return np.zeros(0)
        return sf.evaluate_fields(f.gradient(), np.asarray(p, dtype=float).reshape(1, m), f.chart)[:, 0]
    return f.jet(p).grad


def hamiltonian_section_at(A: LieAlgebroid, omega, f, p, derivatives: bool = False):
    """Coefficients of ``a_f`` at ``p``; with ``derivatives`` a :class:`Jet`
    whose ``grad[b, i]`` is the ``x_i``-derivative of the ``b``-th coefficient."""
    data = _HamiltonianData(A, _form(omega))
    f = A.field(f)
    p = np.asarray(p, dtype=float)
    if derivatives:
        return data.section_jet(_gradient_jet(f, p), p)
    return data.section(_gradient_value(f, p), p)


class PoissonBracket:
    """Pointwise evaluator of ``{f, g} = omega(a_f, a_g)``.

    ``f`` and ``g`` may themselves be :class:`PoissonBracket` evaluators;
    values then use their gradients, so brackets nest to any depth while
    :meth:`jet` needs both arguments to be fields.
    """

    def __init__(self, A: LieAlgebroid, omega, f, g, _data=None):
        self.A = A
        self.omega = _form(omega)
        self._data = _data or _HamiltonianData(A, self.omega)
        self.f = f if isinstance(f, PoissonBracket) else A.field(f)
        self.g = g if isinstance(g, PoissonBracket) else A.field(g)

    def nest(self, f, g) -> "PoissonBracket":
        return PoissonBracket(self.A, self.omega, f, g, _data=self._data)

    def value_at(self, p) -> float:
        p = np.asarray(p, dtype=float)
        W, _ = self._data.jets(p)
        af = self._data.section(_gradient_value(self.f, p), p)
        ag = self._data.section(_gradient_value(self.g, p), p)
        return float(af @ W.value @ ag)

    def jet(self, p) -> linalg.Jet:
        if not (isinstance(self.f, sf.ScalarField) and isinstance(self.g, sf.ScalarField)):
            raise NotImplementedError("derivatives of brackets of brackets need second-order jets")
        p = np.asarray(p, dtype=float)
        W, _ = self._data.jets(p)
        af = self._data.section_jet(_gradient_jet(self.f, p), p)
        ag = self._data.section_jet(_gradient_jet(self.g, p), p)
        return af @ (W @ ag)

    def __call__(self, points) -> np.ndarray:
        pts = sf._as_points(points, self.A.dim)
        return np.array([self.value_at(p) for p in pts])


def poisson_bracket(A: LieAlgebroid, omega, f, g) -> PoissonBracket:
    return PoissonBracket(A, omega, f, g)


# ---------------------------------------------------------------------------
# compatible triples and Nijenhuis tensors
# ---------------------------------------------------------------------------


def nijenhuis(A: LieAlgebroid, J, S: Section, T: Section) -> Section:
    """``[JS, JT] - [S, T] - J[JS, T] - J[S, JT]``"""
    J = _endo(J, A.chart)
    JS, JT = J.apply(S), J.apply(T)
    return (
        bracket(A, JS, JT)
        - bracket(A, S, T)
        - J.apply(bracket(A, JS, T))
        - J.apply(bracket(A, S, JT))
    )


def _nijenhuis_frame_fields(A, J):
    out = []
    for a, b in itertools.combinations(range(A.rank), 2):
        out.extend(nijenhuis(A, J, A.frame(a), A.frame(b)).coeffs)
    return out


def _nijenhuis_tensor_at(A, J, pts):
    """``N[p, a, b, c]``: ``e_c`` component of ``N(e_a, e_b)``."""
    n = A.rank
    out = np.zeros((len(pts), n, n, n))
    pairs = list(itertools.combinations(range(n), 2))
    if not pairs:
        return out
    vals = sf.evaluate_fields(_nijenhuis_frame_fields(A, J), pts, A.chart).reshape(len(pairs), n, -1)
    for k, (a, b) in enumerate(pairs):
        out[:, a, b, :] = vals[k].T
        out[:, b, a, :] = -vals[k].T
    return out


def _triple_algebra(triple: CompatibleTriple, pts):
    W = triple.omega.dense_at(pts)
    J = triple.J.at(pts)
    G = triple.g.at(pts)
    return W, J, G


def _nabla_n_residual(A, triple, pts):
    """``2 g((nabla_a J) e_b, e_c) - g(N(e_b, e_c), J e_a)`` at samples."""
    n = A.rank
    Gam = levi_civita(A, triple.g, pts)
    Jv, Jg = sf.field_jets(triple.J.fields(), pts, A.chart)
    N = len(pts)
    J = Jv.T.reshape(N, n, n)
    dJ = Jg.transpose(1, 0, 2).reshape(N, n, n, A.dim)
    G = triple.g.at(pts)
    R = A.anchor_at(pts)
    # (nabla_a J) e_b, component c
    drho = np.einsum("pia,pcbi->pabc", R, dJ)
    nabla_Je = drho + np.einsum("pdb,padc->pabc", J, Gam)
    J_nabla_e = np.einsum("pcd,pabd->pabc", J, Gam)
    DJ = nabla_Je - J_nabla_e
    lhs = 2.0 * np.einsum("pabe,pec->pabc", DJ, G)
    Nt = _nijenhuis_tensor_at(A, triple.J, pts)
    rhs = np.einsum("pbcd,pde,pea->pabc", Nt, G, J)
    return (lhs - rhs).transpose(1, 2, 3, 0)


def check_compatible_triple(A: LieAlgebroid, triple: CompatibleTriple, plan: SamplePlan | None = None,
                            tol=DEFAULT_TOL) -> ValidationReport:
    pts = A.sample(plan, extra=triple.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    W, J, G = _triple_algebra(triple, pts)
    n = A.rank
    report.add(residual_check("J_square", (J @ J + np.eye(n)).transpose(1, 2, 0), pts, tol))
    Jt = np.swapaxes(J, 1, 2)
    report.add(residual_check("metric_J_invariant", (Jt @ G @ J - G).transpose(1, 2, 0), pts, tol))
    report.add(residual_check("compatibility", (W - G @ J).transpose(1, 2, 0), pts, tol))
    try:
        res = _nabla_n_residual(A, triple, pts)
        report.add(residual_check("nabla_J_nijenhuis", res, pts, tol), asserted=False)
    except np.linalg.LinAlgError:
        pass
    return report


def nijenhuis_residual(A: LieAlgebroid, J, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> Check:
    J = _endo(J, A.chart)
    pts = A.sample(plan, extra=J.fields())
    vals = sf.evaluate_fields(_nijenhuis_frame_fields(A, J), pts, A.chart)
    return residual_check("nijenhuis", vals, pts, tol)


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------


def tangent_algebroid(chart: sf.ChartDomain) -> LieAlgebroid:
    names = [f"d{v}" for v in chart.var_names]
    anchor = [[1.0 if i == a else 0.0 for i in range(chart.dim)] for a in range(chart.dim)]
    return LieAlgebroid(chart, names, anchor, name="tangent")


def _anchor_section(A: LieAlgebroid, T: LieAlgebroid, a: int) -> Section:
    return Section(list(A.anchor[a]), T.chart)


def _nijenhuis_relation(A, J, J_M, pts, tol):
    """``rho(N_J(e_a, e_b)) - N_{J_M}(rho e_a, rho e_b)``"""
    TM = tangent_algebroid(A.chart)
    JM = Endomorphism(J_M, A.chart)
    fields = []
    for a, b in itertools.combinations(range(A.rank), 2):
        NA = nijenhuis(A, J, A.frame(a), A.frame(b))
        NM = nijenhuis(TM, JM, _anchor_section(A, TM, a), _anchor_section(A, TM, b))
        rhoN = [linalg.sym_sum([A.anchor[c][i] * NA[c] for c in range(A.rank)], A.chart) for i in range(A.dim)]
        fields.extend(rhoN[i] - NM[i] for i in range(A.dim))
    vals = sf.evaluate_fields(fields, pts, A.chart)
    return residual_check("nijenhuis_relation", vals, pts, tol)


def _kernel_preservation(A, J, pts, rank_tol=linalg.DEFAULT_RANK_TOL):
    R = A.anchor_at(pts)
    Jv = J.at(pts)
    worst = np.zeros(len(pts))
    for k in range(len(pts)):
        K = linalg.nullspace(R[k], rank_tol)
        if K.shape[1] and R.shape[1]:
            worst[k] = np.abs(R[k] @ Jv[k] @ K).max()
    return worst


def induced_base_complex(A: LieAlgebroid, J, lam: Splitting):
    """Symbolic ``J_M = rho o J o lambda``."""
    J = _endo(J, A.chart)
    RJ = linalg.sym_matmul(anchor_matrix(A), J.matrix, A.chart)
    return linalg.sym_matmul(RJ, lam.matrix, A.chart)


def check_admissible(A: LieAlgebroid, J, J_M=None, plan: SamplePlan | None = None, tol=DEFAULT_TOL):
    """Returns ``(report, J_M)``; ``J_M`` is the given or induced base structure
    (``None`` when the kernel criterion fails)."""
    J = _endo(J, A.chart)
    chart = A.chart
    extra = J.fields() + ([as_field(e, chart) for row in J_M for e in row] if J_M is not None else [])
    pts = A.sample(plan, extra=extra)
    report = ValidationReport(tolerance=tol, samples=len(pts))
    m = A.dim
    if J_M is not None:
        J_M = [[as_field(e, chart) for e in row] for row in J_M]
        R = A.anchor_at(pts)
        res = R @ J.at(pts) - linalg.sym_evaluate(J_M, pts, chart) @ R
        report.add(residual_check("anchor_intertwines", res.transpose(1, 2, 0), pts, tol))
    else:
        check_surjective(A, pts)
        worst = _kernel_preservation(A, J, pts)
        report.add(residual_check("kernel_preserved", worst[None, :], pts, tol))
        if not report.passed:
            return report, None
        lam = splitting_from_metric(A, BundleMetric.identity(A.rank, chart), plan, tol)
        J_M = induced_base_complex(A, J, lam)
    JM = linalg.sym_evaluate(J_M, pts, chart)
    report.add(residual_check("base_J_square", (JM @ JM + np.eye(m)).transpose(1, 2, 0), pts, tol))
    if m:
        report.add(_nijenhuis_relation(A, J, J_M, pts, tol))
    return report, J_M


# ---------------------------------------------------------------------------
# pointwise fiber decomposition
# ---------------------------------------------------------------------------


def _point_data(A, triple, p):
    p = sf._as_points(p, A.dim)
    W, J, G = _triple_algebra(triple, p)
    R = A.anchor_at(p)[0]
    return p[0], R, W[0], J[0], G[0]


def decompose_fiber(A: LieAlgebroid, triple: CompatibleTriple, p, rank_tol=linalg.DEFAULT_RANK_TOL) -> FiberDecomposition:
    """``L1 = L cap L^omega``, ``L2`` its g-complement in ``L``, ``E1 = J L1``,
    ``E2 = (L + E1)^omega``.  Rank decisions near ``rank_tol`` raise
    :class:`~algebroidkit.linalg.RankInstabilityError`."""
    p, R, W, J, G = _point_data(A, triple, p)
    n = A.rank
    wscale = max(np.linalg.norm(W, 2), 1.0)
    if A.dim:
        K = linalg.nullspace(R, rank_tol, scale=max(np.linalg.norm(R, 2), 1.0), strict=True)
    else:
        K = np.eye(n)
    if K.shape[1]:
        pairing = K.T @ W @ K
        N1 = linalg.nullspace(pairing, rank_tol, scale=wscale, strict=True)
        L1 = linalg.column_space(K @ N1) if N1.shape[1] else np.zeros((n, 0))
    else:
        L1 = np.zeros((n, 0))
    L2 = linalg.orthogonal_complement(L1, G, within=K) if K.shape[1] else np.zeros((n, 0))
    E1 = linalg.column_space(J @ L1) if L1.shape[1] else np.zeros((n, 0))
    U = np.hstack([K, E1])
    if U.shape[1]:
        E2 = linalg.nullspace((W @ U).T, rank_tol, scale=wscale, strict=True)
    else:
        E2 = np.eye(n)
    dec = FiberDecomposition(p, E1, E2, L1, L2)
    B = dec.assembled()
    if B.shape[1] != n or not linalg.is_full_rank(B, rank_tol):
        raise DecompositionError(f"blocks with dims {dec.dims} do not form a direct sum at {tuple(p)}")
    return dec


def decomposition_residuals(A: LieAlgebroid, triple: CompatibleTriple, dec: FiberDecomposition) -> dict:
    """Invariant residuals of a decomposition (all should vanish)."""
    _, R, W, J, G = _point_data(A, triple, dec.point)
    n = A.rank
    B = dec.assembled()
    s = np.linalg.svd(B, compute_uv=False) if B.size else np.ones(1)
    L = np.hstack([dec.L1, dec.L2])
    C = A.structure_at(dec.point)[0]

    def mx(M):
        return float(np.abs(M).max()) if np.size(M) else 0.0

    return {
        "direct_sum": abs(B.shape[1] - n) + (0.0 if s[-1] > 1e-6 else 1.0),
        "kernel": mx(R @ L) if A.dim else 0.0,
        "L1_L2_orthogonal": mx(dec.L1.T @ G @ dec.L2),
        "E1_L_orthogonal": mx(dec.E1.T @ G @ L),
        "E2_omega_L": mx(dec.E2.T @ W @ L),
        "E2_omega_E1": mx(dec.E2.T @ W @ dec.E1),
        "L1_bracket": mx(np.einsum("cab,ai,bj->cij", C, dec.L1, dec.L1)),
    }


def restricted_det(W, block) -> float:
    if block.shape[1] == 0:
        return 1.0
    return float(abs(np.linalg.det(block.T @ W @ block)))


def symplectic_distribution_at(A: LieAlgebroid, triple: CompatibleTriple, p, rank_tol=linalg.DEFAULT_RANK_TOL):
    """Orthonormal basis of ``rho_p(E2 + L1)`` inside ``T_pM``."""
    dec = decompose_fiber(A, triple, p, rank_tol)
    if A.dim == 0:
        return np.zeros((0, 0))
    R = A.anchor_at(dec.point)[0]
    return linalg.column_space(R @ np.hstack([dec.E2, dec.L1]), rank_tol, scale=max(np.linalg.norm(R, 2), 1.0))


# ---------------------------------------------------------------------------
# splittings adapted to omega
# ---------------------------------------------------------------------------


def symplectic_complement_splitting(A: LieAlgebroid, omega, g: BundleMetric | None = None,
                                    plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> Splitting:
    """Splitting with image ``L^omega``:
    ``lambda_omega = lambda_g - K (K^T W K)^-1 K^T W lambda_g``."""
    omega = _form(omega)
    chart = A.chart
    g = g or BundleMetric.identity(A.rank, chart)
    lam = splitting_from_metric(A, g, plan, tol)
    frame = kernel_frame(A, lam)
    if not frame:
        return lam
    K = [[S[a] for S in frame] for a in range(A.rank)]
    Kt = linalg.sym_transpose(K)
    W = form_matrix(omega)
    Q = linalg.sym_matmul(linalg.sym_matmul(Kt, W, chart), K, chart)
    KtWl = linalg.sym_matmul(linalg.sym_matmul(Kt, W, chart), lam.matrix, chart)
    corr = linalg.sym_matmul(K, linalg.sym_matmul(linalg.sym_inverse(Q, chart), KtWl, chart), chart)
    return Splitting(A, [[lam.matrix[a][i] - corr[a][i] for i in range(A.dim)] for a in range(A.rank)])


def _kernel_pairing_bound(A, omega, pts):
    """Smallest singular value of ``omega`` restricted to ``ker rho`` (relative)."""
    R = A.anchor_at(pts)
    W = omega.dense_at(pts)
    out = np.zeros(len(pts))
    for k in range(len(pts)):
        K = linalg.nullspace(R[k]) if A.dim else np.eye(A.rank)
        if K.shape[1] == 0:
            out[k] = 1.0
            continue
        s = np.linalg.svd(K.T @ W[k] @ K, compute_uv=False)
        out[k] = s[-1] / max(np.linalg.norm(W[k], 2), 1.0)
    return out


def pullback_matrix(lam: Splitting, M):
    """``lambda^T M lambda`` for a symbolic ``n x n`` matrix ``M``."""
    chart = lam.algebroid.chart
    return linalg.sym_matmul(linalg.sym_transpose(lam.matrix), linalg.sym_matmul(M, lam.matrix, chart), chart)


# ---------------------------------------------------------------------------
# induced base triple
# ---------------------------------------------------------------------------


@dataclass
class InducedBase:
    """Base structures as symbolic ``m x m`` matrices plus the report."""

    omega: AlgebroidForm
    J: list
    g: list
    report: ValidationReport
    tangent: LieAlgebroid = field(repr=False, default=None)


def _test_functions(chart: sf.ChartDomain):
    names = chart.var_names
    funcs = list(names)
    for a, b in itertools.combinations(names, 2):
        funcs.append(f"{a}*{b}")
    funcs.extend(f"{v}^2 + sin({v})" for v in names)
    return [sf.parse_expression(t, chart) for t in funcs]


def _poisson_coincidence(A, omega, TM, omega_M, pts, tol, name="poisson_coincidence"):
    funcs = _test_functions(A.chart)
    dA = _HamiltonianData(A, omega)
    dM = _HamiltonianData(TM, omega_M)
    res = []
    for f, g in itertools.combinations(funcs, 2):
        lhs = PoissonBracket(A, omega, f, g, _data=dA)(pts)
        rhs = PoissonBracket(TM, omega_M, f, g, _data=dM)(pts)
        res.append(lhs - rhs)
    return residual_check(name, np.array(res), pts, tol)


def induce_base_triple(A: LieAlgebroid, triple: CompatibleTriple, plan: SamplePlan | None = None,
                       tol=DEFAULT_TOL) -> InducedBase:
    """Base triple from the ``E2``-lift on a transitive algebroid with
    admissible ``J`` and ``Lambda = TM``."""
    chart = A.chart
    if not A.dim:
        raise HypothesisError("the base is a point; there is no base triple")
    pts = A.sample(plan, extra=triple.fields())
    try:
        check_surjective(A, pts)
    except NotTransitiveError as exc:
        raise HypothesisError(str(exc)) from exc
    adm, J_g = check_admissible(A, triple.J, None, plan, tol)
    if not adm.passed:
        raise HypothesisError("J is not admissible")
    for p in pts:
        Lam = symplectic_distribution_at(A, triple, p)
        if Lam.shape[1] != A.dim:
            raise HypothesisError(f"symplectic distribution is not TM at {tuple(p)}")
    report = ValidationReport(tolerance=tol, samples=len(pts))
    report.merge(adm, "admissible.")
    lam = symplectic_complement_splitting(A, triple.omega, triple.g, plan, tol)
    W = form_matrix(triple.omega)
    G = triple.g.matrix
    omega_M = pullback_matrix(lam, W)
    g_M = pullback_matrix(lam, G)
    J_M = induced_base_complex(A, triple.J, lam)
    m = A.dim
    TM = tangent_algebroid(chart)
    om = AlgebroidForm.from_matrix(omega_M, chart)

    Wm = linalg.sym_evaluate(omega_M, pts, chart)
    Gm = linalg.sym_evaluate(g_M, pts, chart)
    Jm = linalg.sym_evaluate(J_M, pts, chart)
    Jmt = np.swapaxes(Jm, 1, 2)
    report.add(residual_check("base_compatibility", (Wm - Gm @ Jm).transpose(1, 2, 0), pts, tol))
    report.add(residual_check("base_metric_J_invariant", (Jmt @ Gm @ Jm - Gm).transpose(1, 2, 0), pts, tol))
    report.add(residual_check("base_J_square", (Jm @ Jm + np.eye(m)).transpose(1, 2, 0), pts, tol))
    base = check_symplectic(TM, om, plan, tol)
    report.merge(base, "base_")
    # corollary content: omega|_L nondegenerate, L1 and E1 null
    bound = _kernel_pairing_bound(A, triple.omega, pts)
    report.add(lower_bound_check("omega_on_kernel_nondegenerate", bound[None, :], pts, linalg.DEFAULT_RANK_TOL))
    report.add(_poisson_coincidence(A, triple.omega, TM, om, pts, tol))
    const = sf.ScalarField.constant(1.0, chart)
    vals = [PoissonBracket(A, triple.omega, const, f)(pts) for f in _test_functions(chart)]
    report.add(residual_check("constant_function_bracket", np.array(vals), pts, tol))
    # lift independence: the g-orthogonal lift gives the same base form
    lam_g = splitting_from_metric(A, triple.g, plan, tol)
    other = linalg.sym_evaluate(pullback_matrix(lam_g, W), pts, chart)
    report.add(residual_check("lift_independence", (other - Wm).transpose(1, 2, 0), pts, tol), asserted=False)
    return InducedBase(om, J_M, g_M, report, TM)


# ---------------------------------------------------------------------------
# Poisson bivectors and cotangent algebroids
# ---------------------------------------------------------------------------


class PoissonBivector:
    """Antisymmetric ``pi^{ij}``; only the upper triangle is stored."""

    def __init__(self, matrix, chart: sf.ChartDomain):
        m = chart.dim
        if len(matrix) != m or any(len(r) != m for r in matrix):
            raise ShapeMismatchError("bivector must be dim x dim")
        self.chart = chart
        self._upper = {
            (i, j): as_field(matrix[i][j], chart) for i in range(m) for j in range(i + 1, m)
        }

    @classmethod
    def from_upper(cls, entries: dict, chart):
        m = chart.dim
        M = [[0.0] * m for _ in range(m)]
        for (i, j), v in entries.items():
            if i < j:
                M[i][j] = v
            elif i > j:
                M[j][i] = -as_field(v, chart)
        return cls(M, chart)

    @property
    def dim(self):
        return self.chart.dim

    def entry(self, i, j) -> sf.ScalarField:
        if i == j:
            return sf.ScalarField.constant(0.0, self.chart)
        if i < j:
            return self._upper[(i, j)]
        return -self._upper[(j, i)]

    def matrix(self):
        return [[self.entry(i, j) for j in range(self.dim)] for i in range(self.dim)]

    def fields(self):
        return list(self._upper.values())

    def jacobi_fields(self):
        m = self.dim
        out = []
        for i, j, k in itertools.combinations(range(m), 3):
            terms = []
            for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
                terms.extend(self.entry(a, l) * self.entry(b, c).diff(l) for l in range(m))
            out.append(linalg.sym_sum(terms, self.chart))
        return out

    def check_jacobi(self, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> ValidationReport:
        from .validation import sample_points

        pts = sample_points(self.chart, plan, self.fields())
        report = ValidationReport(tolerance=tol, samples=len(pts))
        vals = sf.evaluate_fields(self.jacobi_fields(), pts, self.chart)
        report.add(residual_check("bivector_jacobi", vals, pts, tol))
        return report

    def sharp(self, covector):
        """``pi^#(alpha) = sum_ij alpha_i pi^{ij} d_j``"""
        return [linalg.sym_sum([as_field(covector[i], self.chart) * self.entry(i, j) for i in range(self.dim)], self.chart)
                for j in range(self.dim)]


def cotangent_algebroid(pi: PoissonBivector, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> LieAlgebroid:
    """``T*M`` with anchor ``rho(dx^i) = sum_j pi^{ij} d_j`` and
    ``[dx^i, dx^j] = d pi^{ij}``."""
    rep = pi.check_jacobi(plan, tol)
    if not rep.passed:
        raise NotPoissonError(f"bivector violates the Jacobi identity (residual {rep.checks[0].max_residual:.3e})")
    chart, m = pi.chart, pi.dim
    names = [f"d{v}" for v in chart.var_names]
    anchor = [[pi.entry(i, j) for j in range(m)] for i in range(m)]
    structure = {}
    for i, j in itertools.combinations(range(m), 2):
        structure[(i, j)] = [pi.entry(i, j).diff(k) for k in range(m)]
    A = LieAlgebroid(chart, names, anchor, structure, name="cotangent")
    if not validate_algebroid(A, plan, tol).passed:
        raise NotPoissonError("cotangent bracket fails validation")
    return A


def base_poisson_bivector(A: LieAlgebroid, omega) -> PoissonBivector:
    """``pi^{ij} = {x^i, x^j} = -(R W^-1 R^T)_{ij}``, symbolically."""
    omega = _form(omega)
    chart = A.chart
    R = anchor_matrix(A)
    Winv = linalg.sym_inverse(form_matrix(omega), chart)
    P = linalg.sym_matmul(R, linalg.sym_matmul(Winv, linalg.sym_transpose(R), chart), chart)
    return PoissonBivector([[-e for e in row] for row in P], chart)


def _random_polynomials(chart, rng, count, degree=2):
    names = chart.var_names
    out = []
    for _ in range(count):
        terms = []
        for powers in itertools.product(range(degree + 1), repeat=len(names)):
            if sum(powers) > degree or sum(powers) == 0:
                continue
            c = rng.uniform(-1.0, 1.0)
            mono = "*".join(f"{v}^{k}" for v, k in zip(names, powers) if k)
            terms.append(f"({c!r})*{mono}")
        out.append(sf.parse_expression(" + ".join(terms) if terms else "0", chart))
    return out


def build_psi_morphism(A: LieAlgebroid, omega, g: BundleMetric | None = None, plan: SamplePlan | None = None,
                       tol=DEFAULT_TOL, n_functions: int = 10):
    """``psi(a) = -lambda^*(i_a omega)`` from the ``L^omega`` block onto ``T*M``.

    Returns ``(morphism, report)``.
    """
    omega = _form(omega)
    chart = A.chart
    plan = plan or SamplePlan()
    pts = A.sample(plan, extra=omega.fields())
    try:
        check_surjective(A, pts)
    except NotTransitiveError as exc:
        raise HypothesisError(str(exc)) from exc
    bound = _kernel_pairing_bound(A, omega, pts)
    if np.any(bound <= linalg.DEFAULT_RANK_TOL * 10):
        j = int(np.argmin(bound))
        raise HypothesisError(f"omega restricted to ker rho is degenerate at {tuple(pts[j])}")
    report = ValidationReport(tolerance=tol, samples=len(pts))
    lam = symplectic_complement_splitting(A, omega, g, plan, tol)
    m = A.dim
    # the block L^omega as an algebroid with frame u_i = lambda(d_i)
    U = [lam.column(i) for i in range(m)]
    anchor = [[linalg.sym_sum([A.anchor[a][j] * U[i][a] for a in range(A.rank)], chart) for j in range(m)]
              for i in range(m)]
    structure, leak = {}, []
    for i, j in itertools.combinations(range(m), 2):
        br = bracket(A, U[i], U[j])
        X = [linalg.sym_sum([A.anchor[a][k] * br[a] for a in range(A.rank)], chart) for k in range(m)]
        # coefficients in the u-frame (rho(u_k) = d_k) and the part leaving the block
        structure[(i, j)] = X
        back = lam.lift(X)
        leak.extend(br[a] - back[a] for a in range(A.rank))
    source = LieAlgebroid(chart, [f"u{i + 1}" for i in range(m)], anchor, structure, name="symplectic block")
    report.add(residual_check("block_closed", sf.evaluate_fields(leak, pts, chart), pts, tol))

    pi = base_poisson_bivector(A, omega)
    pi_vals = linalg.sym_evaluate(pi.matrix(), pts, chart)
    data = _HamiltonianData(A, omega)
    coords = [sf.ScalarField.coordinate(i, chart) for i in range(m)]
    direct = np.zeros_like(pi_vals)
    for i, j in itertools.combinations(range(m), 2):
        v = PoissonBracket(A, omega, coords[i], coords[j], _data=data)(pts)
        direct[:, i, j], direct[:, j, i] = v, -v
    report.add(residual_check("pi_matches_bracket", (pi_vals - direct).transpose(1, 2, 0), pts, tol))
    target = cotangent_algebroid(pi, plan, tol)

    W = form_matrix(omega)
    omega_M = pullback_matrix(lam, W)
    fiber = [[-omega_M[i][j] for i in range(m)] for j in range(m)]
    coords_map = [sf.ScalarField.coordinate(i, chart) for i in range(m)]
    Phi = AlgebroidMorphism(source, target, coords_map, fiber, name="psi")
    report.merge(check_morphism(Phi, plan, tol))

    # rho(a_f) = -pi^#(df)
    rng = np.random.default_rng(plan.seed)
    res = []
    for f in _random_polynomials(chart, rng, n_functions):
        grads = sf.evaluate_fields(f.gradient(), pts, chart)  # (m, N)
        R = A.anchor_at(pts)
        for k, p in enumerate(pts):
            a = data.section(grads[:, k], p)
            res.append(R[k] @ a + pi_vals[k].T @ grads[:, k])
    res = np.array(res).reshape(n_functions, len(pts), m).transpose(0, 2, 1)
    report.add(residual_check("anchor_of_hamiltonian", res, pts, tol))
    return Phi, report


# ---------------------------------------------------------------------------
# kernel bracket theorems
# ---------------------------------------------------------------------------


def _kernel_bracket(A, pts, basis_fn):
    C = A.structure_at(pts)
    worst = np.zeros(len(pts))
    for k, p in enumerate(pts):
        B = basis_fn(k, p)
        if B.shape[1] >= 2:
            worst[k] = np.abs(np.einsum("cab,ai,bj->cij", C[k], B, B)).max()
    return worst


def check_kernel_bracket_theorems(A: LieAlgebroid, triple: CompatibleTriple, plan: SamplePlan | None = None,
                                  tol=DEFAULT_TOL) -> ValidationReport:
    """Check hypotheses first; assert each conclusion only when its
    hypotheses hold, otherwise record it as a diagnostic."""
    chart = A.chart
    pts = A.sample(plan, extra=triple.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    flags = report.flags

    comp = check_compatible_triple(A, triple, plan, tol)
    symp = check_symplectic(A, triple.omega, plan, tol)
    flags["compatible"] = comp.passed
    flags["closed"] = symp.check("closed").passed
    flags["nondegenerate"] = symp.passed
    try:
        check_surjective(A, pts)
        flags["transitive"] = True
    except NotTransitiveError:
        flags["transitive"] = False
    flags["invariant_metric"] = flags["transitive"] and check_invariant_metric(A, triple.g, plan, tol).passed
    if flags["transitive"]:
        adm, J_M = check_admissible(A, triple.J, None, plan, tol)
        flags["admissible"] = adm.passed
    else:
        flags["admissible"], J_M = False, None
    nij = nijenhuis_residual(A, triple.J, plan, tol)
    flags["integrable_J"] = nij.passed
    flags["kahler"] = flags["compatible"] and flags["closed"] and nij.passed
    symplectic_triple = flags["compatible"] and flags["nondegenerate"]

    R = A.anchor_at(pts)

    def kernel(k, p):
        return linalg.nullspace(R[k]) if A.dim else np.eye(A.rank)

    # L1 statement
    def l1_basis(k, p):
        return decompose_fiber(A, triple, p).L1

    try:
        worst = _kernel_bracket(A, pts, l1_basis)
        report.add(residual_check("L1_bracket", worst[None, :], pts, tol), asserted=symplectic_triple)
    except (linalg.RankInstabilityError, DecompositionError):
        report.add(flag_check("L1_bracket", False, pts[0]), asserted=False)

    kernel_worst = _kernel_bracket(A, pts, kernel)
    l0 = symplectic_triple and flags["transitive"] and flags["invariant_metric"] and flags["admissible"]
    flags["L0_hypotheses"] = l0
    report.add(residual_check("L0_kernel_bracket", kernel_worst[None, :], pts, tol), asserted=l0)
    # N_J on pairs of kernel vectors (tensorial, so pointwise bases suffice)
    Nt = _nijenhuis_tensor_at(A, triple.J, pts)
    nk = np.zeros(len(pts))
    for k, p in enumerate(pts):
        K = kernel(k, p)
        if K.shape[1]:
            nk[k] = np.abs(np.einsum("abc,ai,bj->cij", Nt[k], K, K)).max()
    report.add(residual_check("L0_kernel_nijenhuis", nk[None, :], pts, tol), asserted=l0)

    kahler_inv = flags["kahler"] and flags["transitive"] and flags["invariant_metric"]
    flags["kahler_invariant_hypotheses"] = kahler_inv
    report.add(residual_check("kahler_kernel_bracket", kernel_worst[None, :], pts, tol), asserted=kahler_inv)

    if l0 and A.dim:
        try:
            base = induce_base_triple(A, triple, plan, tol)
            TM = base.tangent
            base_nij = nijenhuis_residual(TM, Endomorphism(base.J, chart), plan, tol)
            base_kahler = base.report.passed and base_nij.passed
            flags["kahler_base"] = base_kahler
            report.add(flag_check("kahler_equivalence", base_kahler == flags["kahler"], pts[0]))
        except HypothesisError:
            flags["kahler_base"] = False

    # integrability: omega-complement splitting has zero curvature
    bound = _kernel_pairing_bound(A, triple.omega, pts)
    nondeg_L = bool(np.all(bound > 10 * linalg.DEFAULT_RANK_TOL))
    flags["omega_kernel_nondegenerate"] = nondeg_L
    if flags["transitive"] and A.dim and nondeg_L:
        lam = symplectic_complement_splitting(A, triple.omega, triple.g, plan, tol)
        fields = []
        for i, j in itertools.combinations(range(A.dim), 2):
            fields.extend(curvature_two_form(A, lam, i, j).coeffs)
        vals = sf.evaluate_fields(fields, pts, chart) if fields else np.zeros((0, len(pts)))
        report.add(residual_check("integrability_curvature", vals, pts, tol), asserted=flags["closed"])
    return report
