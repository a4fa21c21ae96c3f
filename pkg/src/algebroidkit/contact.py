"""Contact algebroids: Reeb sections, contact Hamiltonian sections, the
contact Poisson bracket, almost contact structures and the base symplectic
structure they induce.

With ``d eta(e_a, e_b) = D[a, b]`` the contact Hamiltonian section of ``f``
solves ``D^T a + h eta = grad_A f`` with the gauge ``eta(a) = 0``, and
``{f, g} = d eta(a_f, a_g) = rho(a_g) . f = -rho(a_f) . g``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import linalg
from . import scalar_field as sf
from .algebroid import DEFAULT_TOL, Endomorphism, LieAlgebroid, Section, ShapeMismatchError
from .forms import AlgebroidForm, exterior_derivative, wedge
from .symplectic import (
    HypothesisError,
    InducedBase,
    PoissonBracket,
    _HamiltonianData,
    _gradient_jet,
    _gradient_value,
    _random_polynomials,
    _test_functions,
    check_symplectic,
    form_matrix,
    induced_base_complex,
    pullback_matrix,
    tangent_algebroid,
)
from .transitive import BundleMetric, NotTransitiveError, check_surjective, splitting_from_metric
from .validation import SamplePlan, ValidationReport, flag_check, lower_bound_check, residual_check

REEB_TOL = 1e-10
JACOBI_POINTS = 30
JACOBI_TRIPLES = 20


class EvenRankError(ValueError):
    pass


class NotContactError(np.linalg.LinAlgError):
    pass


@dataclass
class ContactStructure:
    eta: AlgebroidForm

    def __post_init__(self):
        if self.eta.degree != 1:
            raise ValueError("a contact form has degree 1")
        if self.eta.rank % 2 == 0:
            raise EvenRankError("contact forms live on odd-rank algebroids")


@dataclass
class AlmostContactStructure:
    phi: Endomorphism
    xi: Section
    eta: AlgebroidForm
    g: BundleMetric | None = None

    def __post_init__(self):
        chart = self.eta.chart
        if not isinstance(self.phi, Endomorphism):
            self.phi = Endomorphism(self.phi, chart)
        if not isinstance(self.xi, Section):
            self.xi = Section(self.xi, chart)
        if self.g is not None and not isinstance(self.g, BundleMetric):
            self.g = BundleMetric(self.g, chart)
        if not (self.phi.rank == self.xi.rank == self.eta.rank):
            raise ShapeMismatchError("almost contact data have different ranks")

    def fields(self):
        out = self.phi.fields() + list(self.xi.coeffs) + self.eta.fields()
        return out + (self.g.fields() if self.g is not None else [])


def _eta(eta) -> AlgebroidForm:
    return eta.eta if isinstance(eta, ContactStructure) else eta


def _covector_fields(eta: AlgebroidForm):
    return [eta.component((a,)) for a in range(eta.rank)]


def check_contact(A: LieAlgebroid, eta, plan: SamplePlan | None = None, tol=DEFAULT_TOL) -> ValidationReport:
    eta = _eta(eta)
    if A.rank % 2 == 0:
        raise EvenRankError("contact forms need odd rank")
    pts = A.sample(plan, extra=eta.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    d_eta = exterior_derivative(A, eta)
    top = eta
    for _ in range(A.rank // 2):
        top = wedge(top, d_eta)
    vol = top.component(tuple(range(A.rank))).evaluate_many(pts)
    report.add(lower_bound_check("contact_volume", vol[None, :], pts, tol))
    E = sf.evaluate_fields(_covector_fields(eta), pts, A.chart).T
    D = d_eta.dense_at(pts)
    dets = np.zeros(len(pts))
    for k in range(len(pts)):
        B = linalg.nullspace(E[k][None, :])
        dets[k] = abs(np.linalg.det(B.T @ D[k] @ B)) if B.shape[1] else 1.0
    report.add(lower_bound_check("d_eta_on_kernel_nondegenerate", dets[None, :], pts, tol))
    return report


class _ContactData:
    """``eta``, ``d eta`` and the anchor with first derivatives at a point."""

    def __init__(self, A: LieAlgebroid, eta: AlgebroidForm):
        if eta.rank != A.rank or eta.chart != A.chart:
            raise ShapeMismatchError("form does not belong to this algebroid")
        if A.rank % 2 == 0:
            raise EvenRankError("contact forms need odd rank")
        self.A = A
        self.eta = eta
        self.d_eta = exterior_derivative(A, eta)
        n, m = A.rank, A.dim
        self._fields = (
            _covector_fields(eta)
            + [e for row in form_matrix(self.d_eta) for e in row]
            + [A.anchor[a][i] for i in range(m) for a in range(n)]
        )
        self._cache = {}

    def jets(self, p):
        key = tuple(np.asarray(p, dtype=float).ravel())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        n, m = self.A.rank, self.A.dim
        vals, grads = sf.field_jets(self._fields, np.asarray(key).reshape(1, m), self.A.chart)
        v, g = vals[:, 0], grads[:, 0]
        E = linalg.Jet(v[:n], g[:n])
        D = linalg.jets_of_matrix(v[n : n + n * n], g[n : n + n * n], (n, n))
        R = linalg.jets_of_matrix(v[n + n * n :], g[n + n * n :], (m, n))
        out = (E, D, R, self._reeb(E.value, D.value, key))
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = out
        return out

    @staticmethod
    def _reeb(E, D, p):
        n = len(E)
        M = np.vstack([E[None, :], D.T])
        rhs = np.zeros(n + 1)
        rhs[0] = 1.0
        xi, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        res = np.abs(M @ xi - rhs).max()
        if res > REEB_TOL * max(1.0, np.abs(M).max()):
            raise NotContactError(f"Reeb system inconsistent at {p} (residual {res:.3e})")
        return xi

    def _augmented(self, p):
        E, D, R, xi = self.jets(p)
        n = self.A.rank
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = D.value.T
        M[:n, n] = E.value
        M[n, :n] = E.value
        return M

    def solve(self, r, p):
        """``(a_f, h)`` from ``r = grad_A f`` at ``p``."""
        M = self._augmented(p)
        n = self.A.rank
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], 1.0):
            raise NotContactError(f"augmented Hamiltonian system singular at {tuple(np.ravel(p))}")
        sol = np.linalg.solve(M, np.append(r, 0.0))
        return sol[:n], sol[n]

    def solve_jet(self, r: linalg.Jet, p) -> linalg.Jet:
        E, D, R, xi = self.jets(p)
        n, m = self.A.rank, self.A.dim
        Mg = np.zeros((n + 1, n + 1, m))
        Mg[:n, :n] = np.swapaxes(D.grad, 0, 1)
        Mg[:n, n] = E.grad
        Mg[n, :n] = E.grad
        M = linalg.Jet(self._augmented(p), Mg)
        rhs = linalg.Jet(np.append(r.value, 0.0), np.vstack([r.grad, np.zeros((1, m))]))
        sol = linalg.jet_solve(M, rhs)
        return sol[:n]

    def gauge_free_solutions(self, r, p):
        """``a_f`` from two different particular solutions ``S_f`` of
        ``D^T S + h eta = r``: minimum-norm least squares, and the basic
        solution from QR with column pivoting."""
        E, D, R, xi = self.jets(p)
        n = self.A.rank
        M = np.hstack([D.value.T, E.value[:, None]])  # n x (n+1)
        first, *_ = np.linalg.lstsq(M, r, rcond=None)
        Q, Rq, piv = scipy.linalg.qr(M, pivoting=True)
        k = int(np.sum(np.abs(np.diag(Rq)) > 1e-12 * max(np.abs(Rq).max(), 1.0)))
        basic = np.zeros(n + 1)
        basic[piv[:k]] = scipy.linalg.solve_triangular(Rq[:k, :k], (Q.T @ r)[:k])
        outs = []
        for sol in (first, basic):
            S = sol[:n]
            outs.append((S - (E.value @ S) * xi, sol[n]))
        return outs


def reeb_section_at(A: LieAlgebroid, eta, p) -> np.ndarray:
    return _ContactData(A, _eta(eta)).jets(p)[3].copy()


def contact_hamiltonian_section_at(A: LieAlgebroid, eta, f, p, derivatives: bool = False, with_h: bool = False):
    """``a_f = S_f - eta(S_f) xi`` at ``p``.  ``derivatives`` returns a Jet;
    ``with_h`` also returns ``h`` (which equals ``rho(xi) . f``)."""
    data = _ContactData(A, _eta(eta))
    f = A.field(f)
    p = np.asarray(p, dtype=float)
    E, D, R, xi = data.jets(p)
    if derivatives:
        r = R.T @ _gradient_jet(f, p)
        return data.solve_jet(r, p)
    r = R.value.T @ _gradient_value(f, p)
    a, h = data.solve(r, p)
    (a1, _), (a2, _) = data.gauge_free_solutions(r, p)
    scale = max(1.0, np.abs(a).max())
    if max(np.abs(a1 - a).max(), np.abs(a2 - a).max()) > 1e-10 * scale:
        raise NotContactError("Hamiltonian section depends on the particular solution")
    return (a, h) if with_h else a


class ContactPoissonBracket:
    """Pointwise ``{f, g} = d eta(a_f, a_g)``; nests like
    :class:`~algebroidkit.symplectic.PoissonBracket`."""

    def __init__(self, A: LieAlgebroid, eta, f, g, _data=None):
        self.A = A
        self.eta = _eta(eta)
        self._data = _data or _ContactData(A, self.eta)
        self.f = f if isinstance(f, ContactPoissonBracket) else A.field(f)
        self.g = g if isinstance(g, ContactPoissonBracket) else A.field(g)

    def nest(self, f, g):
        return ContactPoissonBracket(self.A, self.eta, f, g, _data=self._data)

    def _section(self, h, p):
        E, D, R, xi = self._data.jets(p)
        return self._data.solve(R.value.T @ _gradient_value(h, p), p)[0]

    def value_at(self, p) -> float:
        p = np.asarray(p, dtype=float)
        D = self._data.jets(p)[1].value
        return float(self._section(self.f, p) @ D @ self._section(self.g, p))

    def agreement_at(self, p):
        """``(|{f,g} - rho(a_g).f|, |{f,g} + rho(a_f).g|)``"""
        p = np.asarray(p, dtype=float)
        E, D, R, xi = self._data.jets(p)
        af, ag = self._section(self.f, p), self._section(self.g, p)
        val = af @ D.value @ ag
        gf, gg = _gradient_value(self.f, p), _gradient_value(self.g, p)
        return abs(val - (R.value @ ag) @ gf), abs(val + (R.value @ af) @ gg)

    def section_jet(self, h, p) -> linalg.Jet:
        E, D, R, xi = self._data.jets(p)
        return self._data.solve_jet(R.T @ _gradient_jet(h, p), p)

    def jet(self, p) -> linalg.Jet:
        if not (isinstance(self.f, sf.ScalarField) and isinstance(self.g, sf.ScalarField)):
            raise NotImplementedError("derivatives of brackets of brackets need second-order jets")
        p = np.asarray(p, dtype=float)
        D = self._data.jets(p)[1]
        return self.section_jet(self.f, p) @ (D @ self.section_jet(self.g, p))

    def __call__(self, points) -> np.ndarray:
        pts = sf._as_points(points, self.A.dim)
        return np.array([self.value_at(p) for p in pts])


def contact_poisson_bracket(A: LieAlgebroid, eta, f, g) -> ContactPoissonBracket:
    return ContactPoissonBracket(A, eta, f, g)


def _jacobi_residual(make, triples, pts):
    out = np.zeros((len(triples), len(pts)))
    for t, (f, g, h) in enumerate(triples):
        terms = (make(f, make(g, h)), make(g, make(h, f)), make(h, make(f, g)))
        for k, p in enumerate(pts):
            out[t, k] = sum(b.value_at(p) for b in terms)
    return out


def _hamiltonian_bracket_residual(A, data: _ContactData, f, g, p):
    """``[a_f, a_g] - eta([a_f, a_g]) xi + a_{f,g}`` at ``p``.

    With ``{f, g} = rho(a_g) . f`` the projected bracket of Hamiltonian
    sections is minus the Hamiltonian section of ``{f, g}``; this sign is
    what makes the Jacobi identity hold."""
    E, D, R, xi = data.jets(p)
    br = ContactPoissonBracket(A, data.eta, f, g, _data=data)
    af, ag = br.section_jet(f, p), br.section_jet(g, p)
    C = A.structure_at(p)[0]
    rf, rg = R.value @ af.value, R.value @ ag.value
    lie = np.einsum("a,b,cab->c", af.value, ag.value, C) + ag.grad @ rf - af.grad @ rg
    proj = lie - (E.value @ lie) * xi
    fg = br.jet(p)
    target, _ = data.solve(R.value.T @ fg.grad, p)
    return np.abs(proj + target).max()


def check_contact_poisson_theorem(A: LieAlgebroid, eta, plan: SamplePlan | None = None,
                                  tol=DEFAULT_TOL, jacobi_tol=1e-6) -> ValidationReport:
    """Bracket laws; Jacobi and the Hamiltonian-bracket identity are
    asserted only when ``rho(xi) = 0`` at every sample."""
    eta = _eta(eta)
    plan = plan or SamplePlan()
    pts = A.sample(plan, extra=eta.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    data = _ContactData(A, eta)
    R = A.anchor_at(pts)
    rho_xi = np.array([R[k] @ data.jets(p)[3] for k, p in enumerate(pts)])
    hyp = bool(np.abs(rho_xi).max(initial=0.0) <= tol)
    report.flags["rho_xi_zero"] = hyp
    report.add(residual_check("rho_xi", rho_xi.T, pts, tol), asserted=False)

    rng = np.random.default_rng(plan.seed)
    polys = _random_polynomials(A.chart, rng, 3 * JACOBI_TRIPLES)
    triples = [tuple(polys[3 * t : 3 * t + 3]) for t in range(JACOBI_TRIPLES)]
    sub = pts[:JACOBI_POINTS]

    def make(f, g):
        return ContactPoissonBracket(A, eta, f, g, _data=data)

    anti, leib, agree = [], [], []
    for f, g, h in triples[:5]:
        anti.append(make(f, g)(sub) + make(g, f)(sub))
        leib.append(make(f * g, h)(sub) - f.evaluate_many(sub) * make(g, h)(sub) - g.evaluate_many(sub) * make(f, h)(sub))
        agree.append([max(make(f, g).agreement_at(p)) for p in sub])
    report.add(residual_check("antisymmetry", np.array(anti), sub, tol))
    report.add(residual_check("leibniz", np.array(leib), sub, tol))
    report.add(residual_check("bracket_agreement", np.array(agree), sub, tol))
    jac = _jacobi_residual(make, triples, sub)
    report.add(residual_check("jacobi", jac, sub, jacobi_tol), asserted=hyp)
    ham = np.array([[_hamiltonian_bracket_residual(A, data, f, g, p) for p in sub] for f, g, _ in triples[:5]])
    report.add(residual_check("hamiltonian_bracket", ham, sub, tol), asserted=hyp)
    return report


# ---------------------------------------------------------------------------
# almost contact structures
# ---------------------------------------------------------------------------


def check_almost_contact(A: LieAlgebroid, s: AlmostContactStructure, plan: SamplePlan | None = None,
                         tol=DEFAULT_TOL) -> ValidationReport:
    pts = A.sample(plan, extra=s.fields())
    report = ValidationReport(tolerance=tol, samples=len(pts))
    n = A.rank
    E = sf.evaluate_fields(_covector_fields(s.eta), pts, A.chart).T  # (N, n)
    X = s.xi.evaluate(pts)  # (N, n)
    P = s.phi.at(pts)
    report.add(residual_check("eta_xi", (np.einsum("pa,pa->p", E, X) - 1.0)[None, :], pts, tol))
    eta_xi = np.einsum("pb,pa->pba", X, E)  # matrix of S -> eta(S) xi
    report.add(residual_check("phi_square", (P @ P + np.eye(n) - eta_xi).transpose(1, 2, 0), pts, tol))
    D = exterior_derivative(A, s.eta).dense_at(pts)
    if s.g is not None:
        G = s.g.at(pts)
        Pt = np.swapaxes(P, 1, 2)
        res = Pt @ G @ P - G + np.einsum("pa,pb->pab", E, E)
        report.add(residual_check("metric_compatible", res.transpose(1, 2, 0), pts, tol))
        riem = residual_check("contact_metric", (D - G @ P).transpose(1, 2, 0), pts, tol)
        report.add(riem, asserted=False)
        report.flags["contact_metric"] = riem.passed
        if riem.passed:
            data = _ContactData(A, s.eta)
            xi = np.array([data.jets(p)[3] for p in pts])
            report.add(residual_check("xi_is_reeb", (xi - X).T, pts, tol))
    # lemma checks, applied where eta is contact
    contact_ok = check_contact(A, s.eta, plan, tol).passed if n % 2 else False
    report.flags["contact"] = contact_ok
    R = A.anchor_at(pts)
    contradiction = np.zeros(len(pts))
    if contact_ok:
        for k in range(len(pts)):
            K = linalg.nullspace(R[k]) if A.dim else np.eye(n)
            if K.shape[1] == 0:
                continue
            if np.abs(E[k] @ K).max() <= tol:
                contradiction[k] = 1.0
            phiK = P[k] @ K
            preserved = np.abs(R[k] @ phiK).max(initial=0.0) <= tol if A.dim else True
            if preserved and np.abs(R[k] @ X[k]).max(initial=0.0) > tol:
                contradiction[k] = 1.0
    report.add(residual_check("kernel_lemmas", contradiction[None, :], pts, 0.5))
    return report


def induce_base_symplectic(A: LieAlgebroid, s: AlmostContactStructure, plan: SamplePlan | None = None,
                           tol=DEFAULT_TOL) -> InducedBase:
    """``omega = lambda^*(d eta)`` for the g-orthogonal splitting, with
    ``J_M = rho phi lambda`` and ``g_M = lambda^* g``."""
    if s.g is None:
        raise HypothesisError("a bundle metric is required")
    chart = A.chart
    pts = A.sample(plan, extra=s.fields())
    try:
        check_surjective(A, pts)
    except NotTransitiveError as exc:
        raise HypothesisError(str(exc)) from exc
    R = A.anchor_at(pts)
    P = s.phi.at(pts)
    for k, p in enumerate(pts):
        K = linalg.nullspace(R[k])
        if K.shape[1] and np.abs(R[k] @ P[k] @ K).max() > tol:
            raise HypothesisError(f"phi does not preserve ker rho at {tuple(p)}")
    report = ValidationReport(tolerance=tol, samples=len(pts))
    lam = splitting_from_metric(A, s.g, plan, tol)
    d_eta = exterior_derivative(A, s.eta)
    omega_M = pullback_matrix(lam, form_matrix(d_eta))
    g_M = pullback_matrix(lam, s.g.matrix)
    J_M = induced_base_complex(A, s.phi, lam)
    TM = tangent_algebroid(chart)
    om = AlgebroidForm.from_matrix(omega_M, chart)
    report.merge(check_symplectic(TM, om, plan, tol), "base_")

    m = A.dim
    Wm = linalg.sym_evaluate(omega_M, pts, chart)
    Gm = linalg.sym_evaluate(g_M, pts, chart)
    Jm = linalg.sym_evaluate(J_M, pts, chart)
    report.add(residual_check("base_J_square", (Jm @ Jm + np.eye(m)).transpose(1, 2, 0), pts, tol))
    report.add(residual_check("base_compatibility", (Wm - Gm @ Jm).transpose(1, 2, 0), pts, tol))
    Jmt = np.swapaxes(Jm, 1, 2)
    report.add(residual_check("base_metric_J_invariant", (Jmt @ Gm @ Jm - Gm).transpose(1, 2, 0), pts, tol))

    # d eta(S, T) = 0 for S in the g-complement of L and T in L
    D = d_eta.dense_at(pts)
    G = s.g.at(pts)
    worst = np.zeros(len(pts))
    for k in range(len(pts)):
        K = linalg.nullspace(R[k])
        if K.shape[1] == 0:
            continue
        H = linalg.orthogonal_complement(K, G[k])
        worst[k] = np.abs(H.T @ D[k] @ K).max()
    report.add(residual_check("d_eta_splitting", worst[None, :], pts, tol))

    data = _ContactData(A, s.eta)
    dM = _HamiltonianData(TM, om)
    res = []
    for f, g in itertools.combinations(_test_functions(chart), 2):
        lhs = ContactPoissonBracket(A, s.eta, f, g, _data=data)(pts)
        rhs = PoissonBracket(TM, om, f, g, _data=dM)(pts)
        res.append(lhs - rhs)
    report.add(residual_check("poisson_coincidence", np.array(res), pts, tol))
    return InducedBase(om, J_M, g_M, report, TM)
