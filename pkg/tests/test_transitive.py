import numpy as np
import pytest
from hypothesis import given, strategies as st

from algebroidkit import fixtures as F
from algebroidkit import scalar_field as sf
from algebroidkit.algebroid import Section, bracket, validate_algebroid
from algebroidkit.transitive import (
    BundleMetric,
    InconsistentDataError,
    NotInKernelError,
    NotTransitiveError,
    TransitiveBuildInput,
    adjoint_connection,
    build_transitive,
    check_invariant_metric,
    covariant_derivative,
    curvature_two_form,
    kernel_frame,
    levi_civita,
    levi_civita_at,
    splitting_from_metric,
)
from algebroidkit.validation import SamplePlan
from helpers import random_poly

PLANE = sf.ChartDomain.euclidean(("x", "y"))
PLAN = SamplePlan(16)


def alg(name):
    return F.get(name).algebroid


def at_samples(S, A):
    return S.evaluate(A.sample(PLAN))


# --- splitting_from_metric ------------------------------------------------


def test_tangent_splitting_is_identity():
    A = alg("plane")
    lam = splitting_from_metric(A, BundleMetric.identity(2, PLANE), PLAN)
    np.testing.assert_allclose(lam.at(A.sample(PLAN)), np.broadcast_to(np.eye(2), (17, 2, 2)))


def test_heisenberg_splitting_identity_metric():
    A = alg("heisenberg_type")
    lam = splitting_from_metric(A, BundleMetric.identity(3, PLANE), PLAN)
    np.testing.assert_allclose(lam.at([[0.2, 0.4]])[0], [[1, 0], [0, 1], [0, 0]], atol=1e-15)


def test_heisenberg_splitting_skew_metric():
    A = alg("heisenberg_type")
    g = BundleMetric([[1, 0, 0.5], [0, 1, 0], [0.5, 0, 1]], PLANE)
    lam = splitting_from_metric(A, g, PLAN)
    col = lam.column(0)
    # lambda(d_x) = e1 + c e3 with g(e1 + c e3, e3) = 1/2 + c = 0
    np.testing.assert_allclose(col.evaluate([[0.0, 0.0]])[0], [1, 0, -0.5], atol=1e-15)
    orth = g.pair(col, A.frame(2))
    assert np.abs(orth.evaluate_many(A.sample(PLAN))).max() <= 1e-10


def test_splitting_needs_surjective_anchor():
    from algebroidkit.algebroid import LieAlgebroid

    B = LieAlgebroid(PLANE, ("e1", "e2"), [[1, 0], [0, 0]])
    with pytest.raises(NotTransitiveError):
        splitting_from_metric(B, BundleMetric.identity(2, PLANE), PLAN)


@given(st.integers(0, 2**32 - 1))
def test_splitting_orthogonal_to_kernel(seed):
    A = alg("twisted_rank4")
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(4, 4))
    g = BundleMetric((L @ L.T + 4 * np.eye(4)).round(6).tolist(), PLANE)
    lam = splitting_from_metric(A, g, SamplePlan(8, seed))
    pts = A.sample(SamplePlan(8, seed))
    G = g.at(pts)
    Lam = lam.at(pts)
    K = np.array([[0, 0, 1, 0], [0, 0, 0, 1]]).T
    assert np.abs(np.einsum("pai,pab,bk->pik", Lam, G, K)).max() <= 1e-10


# --- adjoint connection ---------------------------------------------------


def test_adjoint_connection_flat_abelian():
    A = alg("flat_rank4")
    lam = splitting_from_metric(A, BundleMetric.identity(4, PLANE), PLAN)
    T = A.section([0, 0, "x*y", "y^2"])
    D = adjoint_connection(A, lam, [1.0, 0.0], T, PLAN)
    np.testing.assert_allclose(D.evaluate([[0.3, 0.5]])[0], [0, 0, 0.5, 0])


def test_adjoint_connection_heisenberg():
    A = alg("heisenberg_type")
    lam = splitting_from_metric(A, BundleMetric.identity(3, PLANE), PLAN)
    D = adjoint_connection(A, lam, [1.0, 0.0], A.frame(2), PLAN)
    assert all(c.is_zero for c in D)


def test_adjoint_connection_so3_bundle():
    A = alg("so3_bundle")
    lam = splitting_from_metric(A, BundleMetric.identity(5, PLANE), PLAN)
    D = adjoint_connection(A, lam, [1.0, 0.0], A.section([0, 0, "x", 0, 0]), PLAN)
    np.testing.assert_allclose(at_samples(D, A), np.tile([0, 0, 1, 0, 0], (17, 1)))


def test_adjoint_connection_rejects_horizontal_sections():
    A = alg("heisenberg_type")
    lam = splitting_from_metric(A, BundleMetric.identity(3, PLANE), PLAN)
    with pytest.raises(NotInKernelError):
        adjoint_connection(A, lam, [1.0, 0.0], A.frame(0), PLAN)


# --- curvature ------------------------------------------------------------


def test_curvature_of_tangent_bundle():
    A = alg("plane")
    lam = splitting_from_metric(A, BundleMetric.identity(2, PLANE), PLAN)
    assert all(c.is_zero for c in curvature_two_form(A, lam, 0, 1))


def test_curvature_heisenberg_is_half_the_central_element():
    A = alg("heisenberg_type")
    lam = splitting_from_metric(A, BundleMetric.identity(3, PLANE), PLAN)
    Om = curvature_two_form(A, lam, 0, 1)
    np.testing.assert_allclose(at_samples(Om, A), np.tile([0, 0, 0.5], (17, 1)))


def test_curvature_of_flat_builder_output():
    A = alg("so3_bundle")
    lam = splitting_from_metric(A, BundleMetric.identity(5, PLANE), PLAN)
    assert np.abs(at_samples(curvature_two_form(A, lam, 0, 1), A)).max() == 0.0


# --- build_transitive -----------------------------------------------------


def test_build_direct_product():
    A = build_transitive(TransitiveBuildInput(PLANE, 1))
    assert A.rank == 3 and A.frame_names == ("dx", "dy", "s1")
    assert validate_algebroid(A, PLAN).passed


def test_build_heisenberg_type_matches_direct_description():
    A = alg("heisenberg_type")
    B = alg("heisenberg")
    pts = A.sample(PLAN)
    np.testing.assert_array_equal(A.structure_at(pts), B.structure_at(pts))
    np.testing.assert_array_equal(A.anchor_at(pts), B.anchor_at(pts))


def test_build_flat_so3_bundle():
    assert validate_algebroid(alg("so3_bundle"), PLAN).passed


def test_build_rejects_curved_connection_without_matching_curvature():
    # nabla_{d_x} s = y s has curvature -s, but Omega = 0
    with pytest.raises(InconsistentDataError):
        build_transitive(TransitiveBuildInput(PLANE, 1, connection=[[["y"]], [[0]]]), PLAN)


def test_build_rejects_noncentral_curvature():
    so3 = {(0, 1): [0, 0, 1], (1, 2): [1, 0, 0], (2, 0): [0, 1, 0]}
    with pytest.raises(InconsistentDataError):
        build_transitive(TransitiveBuildInput(PLANE, 3, fiber_structure=so3, curvature={(0, 1): [1, 0, 0]}), PLAN)


def test_build_rejects_non_lie_fiber():
    bad = {(0, 1): ["x", 0, 1], (1, 2): [1, 0, 0], (2, 0): [0, 1, 0]}
    with pytest.raises(InconsistentDataError):
        build_transitive(TransitiveBuildInput(PLANE, 3, fiber_structure=bad), PLAN)


@pytest.mark.parametrize(
    "inp",
    [
        TransitiveBuildInput(PLANE, 2, connection=[[["0", "-x"], ["x", "0"]], [[0, 0], [0, 0]]]),
        TransitiveBuildInput(PLANE, 1, connection=[[["x"]], [[0]]], curvature={(0, 1): ["x*y"]}),
        TransitiveBuildInput(PLANE, 3, fiber_structure={(0, 1): [0, 0, 1], (1, 2): [1, 0, 0], (2, 0): [0, 1, 0]}),
        TransitiveBuildInput(PLANE, 2, curvature={(0, 1): ["x", "y^2"]}),
    ],
)
def test_build_round_trip_recovers_inputs(inp):
    A = build_transitive(inp, PLAN)
    m, r = PLANE.dim, inp.fiber_rank
    lam = splitting_from_metric(A, BundleMetric.identity(m + r, PLANE), PLAN)
    pts = A.sample(PLAN)
    fiber = [A.frame(m + k) for k in range(r)]
    for i in range(m):
        X = [1.0 if j == i else 0.0 for j in range(m)]
        for k in range(r):
            got = adjoint_connection(A, lam, X, fiber[k], PLAN).evaluate(pts)[:, m:]
            want = np.zeros_like(got)
            if inp.connection is not None:
                want = sf.evaluate_fields([A.field(inp.connection[i][l][k]) for l in range(r)], pts, PLANE).T
            assert np.abs(got - want).max() <= 1e-10
    for (k, l), vec in inp.fiber_structure.items():
        got = bracket(A, fiber[k], fiber[l]).evaluate(pts)[:, m:]
        want = sf.evaluate_fields([A.field(v) for v in vec], pts, PLANE).T
        assert np.abs(got - want).max() <= 1e-10
    got = 2 * curvature_two_form(A, lam, 0, 1).evaluate(pts)[:, m:]
    vec = inp.curvature.get((0, 1), [0] * r)
    want = sf.evaluate_fields([A.field(v) for v in vec], pts, PLANE).T
    assert np.abs(got - want).max() <= 1e-10


# --- invariant metrics ----------------------------------------------------


def test_so3_bundle_identity_metric_is_invariant():
    assert check_invariant_metric(alg("so3_bundle"), BundleMetric.identity(5, PLANE), PLAN).passed


def test_abelian_fiber_any_constant_metric_is_invariant():
    g = BundleMetric([[2, 0, 0.3, 0], [0, 1, 0, 0], [0.3, 0, 1, 0.2], [0, 0, 0.2, 3]], PLANE)
    assert check_invariant_metric(alg("flat_rank4"), g, PLAN).passed


def test_so3_bundle_anisotropic_metric_is_not_invariant():
    g = BundleMetric(np.diag([1, 1, 1, 1, 2]).tolist(), PLANE)
    rep = check_invariant_metric(alg("so3_bundle"), g, PLAN)
    assert not rep.check("ad_invariance").passed


# --- Levi-Civita ----------------------------------------------------------


def test_levi_civita_flat_plane():
    assert np.abs(levi_civita_at(alg("plane"), BundleMetric.identity(2, PLANE), [0.1, 0.2])).max() == 0.0


def test_levi_civita_so3_point():
    Gam = levi_civita_at(alg("so3"), BundleMetric.identity(3, sf.POINT), [])
    np.testing.assert_allclose(Gam[0, 1], [0, 0, 0.5])


def test_levi_civita_heisenberg_type():
    Gam = levi_civita_at(alg("heisenberg_type"), BundleMetric.identity(3, PLANE), [0.3, -0.1])
    np.testing.assert_allclose(Gam[0, 1], [0, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(Gam[0, 2], [0, -0.5, 0], atol=1e-15)


@pytest.mark.parametrize("name", ["heisenberg_type", "so3_bundle", "twisted_rank4", "cotangent_linear"])
def test_levi_civita_metric_and_torsion_free(name):
    A = alg(name)
    n = A.rank
    rng = np.random.default_rng(2)
    Lm = rng.normal(size=(n, n)) * 0.3
    base = (Lm @ Lm.T + np.eye(n)).round(6)
    mat = [[f"{float(base[a, b])!r} + {0.1 * (a + b + 1)!r}*x^2" if a == b else float(base[a, b]) for b in range(n)]
           for a in range(n)]
    g = BundleMetric(mat, A.chart)
    pts = A.sample(PLAN)
    Gam = levi_civita(A, g, pts)
    vals, grads = sf.field_jets(g.fields(), pts, A.chart)
    G = vals.T.reshape(-1, n, n)
    dG = grads.transpose(1, 0, 2).reshape(len(pts), n, n, -1)
    R = A.anchor_at(pts)
    rho_g = np.einsum("pia,pbci->pabc", R, dG)
    metric = rho_g - np.einsum("pabd,pdc->pabc", Gam, G) - np.einsum("pacd,pbd->pabc", Gam, G)
    assert np.abs(metric).max() <= 1e-9
    torsion = Gam - Gam.transpose(0, 2, 1, 3) - A.structure_at(pts).transpose(0, 2, 3, 1)
    assert np.abs(torsion).max() <= 1e-9


def test_levi_civita_rejects_indefinite_metric():
    with pytest.raises(np.linalg.LinAlgError):
        levi_civita_at(alg("so3"), BundleMetric(np.diag([1, -1, 1]).tolist(), sf.POINT), [])


@given(st.integers(0, 2**32 - 1))
def test_kernel_covariant_derivative_is_half_bracket(seed):
    A = alg("so3_bundle")
    g = BundleMetric.identity(5, PLANE)
    rng = np.random.default_rng(seed)
    lam = splitting_from_metric(A, g, PLAN)
    frame = kernel_frame(A, lam)

    def kernel_section():
        S = Section.zero(5, PLANE)
        for K in frame:
            S = S + K * random_poly(PLANE, rng)
        return S

    S, T = kernel_section(), kernel_section()
    pts = A.sample(SamplePlan(8, seed))
    nabla = covariant_derivative(A, g, S, T, pts)
    half = 0.5 * bracket(A, S, T).evaluate(pts)
    assert np.abs(nabla - half).max() <= 1e-8
