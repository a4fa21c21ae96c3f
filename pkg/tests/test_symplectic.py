import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from algebroidkit import fixtures as F
from algebroidkit import scalar_field as sf
from algebroidkit.algebroid import Endomorphism, LieAlgebroid
from algebroidkit.forms import AlgebroidForm
from algebroidkit.symplectic import (
    CompatibleTriple,
    HypothesisError,
    NotPoissonError,
    PoissonBivector,
    SingularFormError,
    base_poisson_bivector,
    build_psi_morphism,
    check_admissible,
    check_compatible_triple,
    check_kernel_bracket_theorems,
    check_symplectic,
    cotangent_algebroid,
    decompose_fiber,
    decomposition_residuals,
    hamiltonian_section_at,
    induce_base_triple,
    nijenhuis,
    nijenhuis_residual,
    poisson_bracket,
    symplectic_complement_splitting,
    symplectic_distribution_at,
)
from algebroidkit.transitive import BundleMetric
from algebroidkit.validation import SamplePlan
from helpers import random_poly

PLAN = SamplePlan(16)
SMALL = SamplePlan(6)


def doc(name):
    return F.get(name)


def triple(name, omega="omega", J="J", g="g"):
    d = doc(name)
    return d.algebroid, CompatibleTriple(d.form(omega), d.endo(J), d.metric(g))


# --- check_symplectic ---------------------------------------------------------


@pytest.mark.parametrize("name", ["plane", "aff1", "tr4", "flat_rank4", "twisted_rank4", "kodaira_thurston"])
def test_symplectic_fixtures_pass(name):
    d = doc(name)
    rep = check_symplectic(d.algebroid, d.form("omega"), PLAN)
    assert rep.passed, list(rep.lines())


def test_varying_coefficient_fails_closedness():
    d = doc("tr4")
    rep = check_symplectic(d.algebroid, d.form("omega_x"), PLAN)
    assert not rep.check("closed").passed
    # d(x e3^e4) = e1^e3^e4: the residual is exactly one
    assert rep.check("closed").max_residual == pytest.approx(1.0)


def test_odd_rank_flags_even_rank():
    d = doc("heisenberg")
    rep = check_symplectic(d.algebroid, AlgebroidForm(3, 2, {(0, 1): 1.0}, d.chart), PLAN)
    assert not rep.passed
    assert rep.has("even_rank")


def test_not_closed_on_heisenberg4():
    # omega = e1^e2 + e3^e4 with [e1, e2] = e3: d omega(e1, e2, e4) = -1
    d = doc("heisenberg4")
    rep = check_symplectic(d.algebroid, d.form("omega"), PLAN)
    assert not rep.check("closed").passed
    assert check_symplectic(d.algebroid, d.form("omega_mix"), PLAN).passed


def test_degenerate_form_fails():
    d = doc("plane")
    zero = AlgebroidForm(2, 2, {(0, 1): "x"}, d.chart)
    rep = check_symplectic(d.algebroid, zero, SamplePlan(16, strategy="grid"))
    assert rep.has("nondegenerate")


# --- Hamiltonian sections and brackets -------------------------------------------


def test_hamiltonian_of_x_on_plane():
    A = doc("plane").algebroid
    omega = doc("plane").form("omega")
    for p in [(0.0, 0.0), (0.3, -0.4)]:
        np.testing.assert_allclose(hamiltonian_section_at(A, omega, "x", p), [0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(hamiltonian_section_at(A, omega, "y", p), [1.0, 0.0], atol=1e-12)


def test_hamiltonian_of_constant_is_zero():
    d = doc("flat_rank4")
    a = hamiltonian_section_at(d.algebroid, d.form("omega"), "3.5", (0.2, 0.1))
    np.testing.assert_allclose(a, 0.0, atol=1e-14)


def test_hamiltonian_over_point_is_zero():
    d = doc("aff1")
    a = hamiltonian_section_at(d.algebroid, d.form("omega"), "2", ())
    np.testing.assert_allclose(a, [0.0, 0.0])


def test_hamiltonian_defining_identity():
    # i_{a_f} omega = rho^* df (so that a_x = -d_y), checked by hand on the plane
    d = doc("plane")
    A, omega = d.algebroid, d.form("omega")
    f = d.functions["f"]
    p = np.array([0.4, -0.2])
    a = hamiltonian_section_at(A, omega, f, p)
    W = omega.dense_at(p[None])[0]
    grad = np.array([2 * p[0] * p[1] + np.cos(p[0]), p[0] ** 2])
    np.testing.assert_allclose(a @ W, grad, atol=1e-12)


def test_hamiltonian_derivatives_match_finite_differences():
    d = doc("twisted_rank4")
    A, omega = d.algebroid, d.form("omega")
    f = sf.parse_expression("x^2*y + cos(y)", A.chart)
    p = np.array([0.2, 0.3])
    jet = hamiltonian_section_at(A, omega, f, p, derivatives=True)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (hamiltonian_section_at(A, omega, f, p + e) - hamiltonian_section_at(A, omega, f, p - e)) / (2 * h)
        np.testing.assert_allclose(jet.grad[:, i], fd, atol=1e-7)


def test_singular_form_raises():
    d = doc("plane")
    bad = AlgebroidForm(2, 2, {(0, 1): "x"}, d.chart)
    with pytest.raises(SingularFormError):
        hamiltonian_section_at(d.algebroid, bad, "y", (0.0, 0.3))


def test_poisson_coordinates_on_plane():
    d = doc("plane")
    pts = d.algebroid.sample(PLAN)
    A, omega = d.algebroid, d.form("omega")
    np.testing.assert_allclose(poisson_bracket(A, omega, "x", "y")(pts), 1.0, atol=1e-12)
    np.testing.assert_allclose(poisson_bracket(A, omega, d.functions["f"], d.functions["f"])(pts), 0.0, atol=1e-12)


def test_poisson_square_against_hand_formula():
    d = doc("plane")
    pts = d.algebroid.sample(SamplePlan(20))
    vals = poisson_bracket(d.algebroid, d.form("omega"), "x^2", "y")(pts)
    np.testing.assert_allclose(vals, 2 * pts[:, 0], atol=1e-10)


def test_poisson_against_canonical_formula_on_tr4():
    # for dx^dy + dz^dw: {f, g} = f_x g_y - f_y g_x + f_z g_w - f_w g_z
    d = doc("tr4")
    A = d.algebroid
    f = sf.parse_expression("x*z + sin(w)", A.chart)
    g = sf.parse_expression("y^2 + w*x", A.chart)
    pts = A.sample(SMALL)
    vals = poisson_bracket(A, d.form("omega"), f, g)(pts)
    x, y, z, w = pts.T
    fx, fy, fz, fw = z, 0 * x, x, np.cos(w)
    gx, gy, gz, gw = w, 2 * y, 0 * x, x
    np.testing.assert_allclose(vals, fx * gy - fy * gx + fz * gw - fw * gz, atol=1e-10)


def test_bracket_jet_matches_finite_differences():
    d = doc("plane")
    br = poisson_bracket(d.algebroid, d.form("omega"), "x^2*y", "sin(y) + x")
    p = np.array([0.3, 0.1])
    jet = br.jet(p)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (br.value_at(p + e) - br.value_at(p - e)) / (2 * h)
        assert jet.grad[i] == pytest.approx(fd, abs=1e-7)


def _bracket_properties(A, omega, f, g, h, pts):
    br = poisson_bracket(A, omega, f, g)
    anti = br(pts) + poisson_bracket(A, omega, g, f)(pts)
    fg = A.field(f) * A.field(g)
    leib = poisson_bracket(A, omega, fg, h)(pts) - (
        A.field(f).evaluate_many(pts) * poisson_bracket(A, omega, g, h)(pts)
        + A.field(g).evaluate_many(pts) * poisson_bracket(A, omega, f, h)(pts)
    )
    jac = (
        br.nest(f, br.nest(g, h))(pts)
        + br.nest(g, br.nest(h, f))(pts)
        + br.nest(h, br.nest(f, g))(pts)
    )
    return np.abs(anti).max(), np.abs(leib).max(), np.abs(jac).max()


@pytest.mark.parametrize("name", ["plane", "tr4", "flat_rank4", "twisted_rank4"])
@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=4)
def test_bracket_is_poisson(name, seed):
    d = doc(name)
    A = d.algebroid
    rng = np.random.default_rng(seed)
    f, g, h = (random_poly(A.chart, rng) for _ in range(3))
    pts = A.sample(SamplePlan(4, seed))
    anti, leib, jac = _bracket_properties(A, d.form("omega"), f, g, h, pts)
    assert anti <= 1e-8
    assert leib <= 1e-8
    assert jac <= 1e-6


def test_jacobi_fails_for_non_closed_form():
    # negative control: Jacobi really detects a non-closed form
    d = doc("tr4")
    A = d.algebroid
    pts = A.sample(SMALL)[1:]
    pts[:, 0] = 0.5  # omega_x degenerates on x = 0
    _, _, jac = _bracket_properties(A, d.form("omega_x"), "y", "z", "w", pts)
    assert jac > 1e-3


# --- compatible triples and Nijenhuis ----------------------------------------


def test_plane_triple_passes_tightly():
    A, T = triple("plane")
    rep = check_compatible_triple(A, T, PLAN)
    assert rep.passed
    assert max(c.max_residual for c in rep.checks) <= 1e-10


def test_wrong_metric_fails_compatibility():
    A, T = triple("plane", g="g2")
    rep = check_compatible_triple(A, T, PLAN)
    assert not rep.check("compatibility").passed
    assert not rep.check("metric_J_invariant").passed
    assert rep.check("J_square").passed


@pytest.mark.parametrize("name", ["flat_rank4", "twisted_rank4", "aff1", "kodaira_thurston"])
def test_triples_pass(name):
    A, T = triple(name)
    assert check_compatible_triple(A, T, PLAN).passed


def test_mixed_triple_fails_compatibility():
    A, T = triple("flat_rank4", J="J_mix")
    assert not check_compatible_triple(A, T, PLAN).check("compatibility").passed


def test_nabla_relation_is_diagnostic_only():
    A, T = triple("flat_rank4")
    rep = check_compatible_triple(A, T, PLAN)
    assert "nabla_J_nijenhuis" in {c.name for c in rep.diagnostics}


@pytest.mark.parametrize("name", ["plane", "flat_rank4", "twisted_rank4", "abelian2", "aff1"])
def test_nijenhuis_vanishes(name):
    d = doc(name)
    assert nijenhuis_residual(d.algebroid, d.endo("J"), PLAN).passed


def test_kodaira_thurston_nijenhuis_nonzero():
    d = doc("kodaira_thurston")
    chk = nijenhuis_residual(d.algebroid, d.endo("J"), PLAN)
    assert not chk.passed
    assert chk.max_residual == pytest.approx(1.0)


def test_nijenhuis_of_section_with_itself():
    d = doc("twisted_rank4")
    A = d.algebroid
    rng = np.random.default_rng(3)
    from helpers import random_section

    S = random_section(A, rng)
    N = nijenhuis(A, d.endo("J"), S, S)
    assert np.abs(N.evaluate(A.sample(SMALL))).max() <= 1e-12


# --- admissibility -----------------------------------------------------------


def test_plane_admissible_with_rotation():
    d = doc("plane")
    J = d.endo("J")
    rep, J_M = check_admissible(d.algebroid, J, J.matrix, PLAN)
    assert rep.passed
    rep2, induced = check_admissible(d.algebroid, J, None, PLAN)
    assert rep2.passed
    pts = d.algebroid.sample(SMALL)
    from algebroidkit import linalg

    np.testing.assert_allclose(linalg.sym_evaluate(induced, pts, d.chart), J.at(pts), atol=1e-12)


def test_flat_rank4_induces_base_rotation():
    from algebroidkit import linalg

    d = doc("flat_rank4")
    rep, J_M = check_admissible(d.algebroid, d.endo("J"), None, PLAN)
    assert rep.passed
    pts = d.algebroid.sample(SMALL)
    vals = linalg.sym_evaluate(J_M, pts, d.chart)
    np.testing.assert_allclose(vals, d.endo("J").at(pts)[:, :2, :2], atol=1e-12)
    assert rep.check("nijenhuis_relation").passed


def test_mixed_J_is_not_admissible():
    d = doc("flat_rank4")
    rep, J_M = check_admissible(d.algebroid, d.endo("J_mix"), None, PLAN)
    assert not rep.check("kernel_preserved").passed
    assert J_M is None


def test_wrong_base_structure_fails_intertwining():
    d = doc("plane")
    rep, _ = check_admissible(d.algebroid, d.endo("J"), [[0, -1], [1, 0]], PLAN)
    assert not rep.check("anchor_intertwines").passed


# --- fiber decomposition -----------------------------------------------------


@pytest.mark.parametrize(
    "name, dims",
    [
        ("plane", (0, 2, 0, 0)),
        ("aff1", (0, 0, 0, 2)),
        ("flat_rank4", (0, 2, 0, 2)),
        ("twisted_rank4", (0, 2, 0, 2)),
        ("degenerate_kernel", (1, 0, 1, 0)),
    ],
)
def test_decomposition_dims(name, dims):
    A, T = triple(name)
    for p in A.sample(SamplePlan(4)):
        dec = decompose_fiber(A, T, p)
        assert dec.dims == dims
        res = decomposition_residuals(A, T, dec)
        assert max(res.values()) <= 1e-10, res


def test_degenerate_kernel_blocks():
    A, T = triple("degenerate_kernel")
    dec = decompose_fiber(A, T, [0.1])
    # L1 = span(e2), E1 = J e2 = e1
    np.testing.assert_allclose(np.abs(dec.L1[:, 0]), [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(dec.E1[:, 0]), [1.0, 0.0], atol=1e-12)


def _rotated(A, T, Q, p):
    """Constant orthogonal change of frame of the data at ``p``."""
    chart = A.chart
    n = A.rank
    p = np.atleast_2d(np.asarray(p, dtype=float).reshape(1, -1)) if A.dim else np.zeros((1, 0))
    R = A.anchor_at(p)[0] @ Q if A.dim else np.zeros((0, n))
    C = A.structure_at(p)[0]
    C2 = np.einsum("ec,eab,ai,bj->cij", Q, C, Q, Q)
    structure = {(i, j): list(C2[:, i, j]) for i in range(n) for j in range(i + 1, n)}
    B = LieAlgebroid(chart, [f"f{i}" for i in range(n)], [list(R[:, a]) for a in range(n)], structure)
    W, J, G = T.omega.dense_at(p)[0], T.J.at(p)[0], T.g.at(p)[0]
    T2 = CompatibleTriple(
        AlgebroidForm.from_matrix((Q.T @ W @ Q).tolist(), chart),
        Endomorphism((Q.T @ J @ Q).tolist(), chart),
        BundleMetric((Q.T @ G @ Q).tolist(), chart),
    )
    return B, T2


@pytest.mark.parametrize("name", ["plane", "aff1", "flat_rank4", "degenerate_kernel", "kodaira_thurston"])
@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=8)
def test_decomposition_invariant_under_orthogonal_frame_change(name, seed):
    A, T = triple(name)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(A.rank, A.rank)))
    p = A.sample(SamplePlan(1, seed))[1] if A.dim else np.zeros(0)
    B, T2 = _rotated(A, T, Q, p)
    d1 = decompose_fiber(A, T, p)
    d2 = decompose_fiber(B, T2, p)
    assert d1.dims == d2.dims
    res = decomposition_residuals(B, T2, d2)
    assert max(res.values()) <= 1e-9
    # blocks are the same subspaces up to the change of frame
    for X, Y in zip((d1.E1, d1.E2, d1.L1, d1.L2), (d2.E1, d2.E2, d2.L1, d2.L2)):
        if X.shape[1]:
            P1 = X @ np.linalg.pinv(X)
            QY = Q @ Y
            P2 = QY @ np.linalg.pinv(QY)
            np.testing.assert_allclose(P1, P2, atol=1e-9)


@pytest.mark.parametrize("name, dim", [("plane", 2), ("flat_rank4", 2), ("twisted_rank4", 2), ("aff1", 0)])
def test_symplectic_distribution(name, dim):
    A, T = triple(name)
    p = A.sample(SamplePlan(1))[0]
    assert symplectic_distribution_at(A, T, p).shape[1] == dim


# --- induced base triple -----------------------------------------------------


def test_plane_base_triple_is_itself():
    from algebroidkit import linalg

    A, T = triple("plane")
    base = induce_base_triple(A, T, PLAN)
    assert base.report.passed, list(base.report.lines())
    pts = A.sample(SMALL)
    np.testing.assert_allclose(base.omega.dense_at(pts), T.omega.dense_at(pts), atol=1e-12)
    np.testing.assert_allclose(linalg.sym_evaluate(base.g, pts, A.chart), T.g.at(pts), atol=1e-12)


@pytest.mark.parametrize("name", ["flat_rank4", "twisted_rank4"])
def test_base_triple_and_coincidence(name):
    A, T = triple(name)
    base = induce_base_triple(A, T, PLAN)
    assert base.report.passed, list(base.report.lines())
    assert base.report.check("poisson_coincidence").max_residual <= 1e-9
    pts = A.sample(SMALL)
    W = base.omega.dense_at(pts)
    np.testing.assert_allclose(W, np.broadcast_to([[0.0, 1.0], [-1.0, 0.0]], W.shape), atol=1e-12)


def test_base_triple_needs_admissible_J():
    A, T = triple("flat_rank4", omega="omega_mix", J="J_mix")
    with pytest.raises(HypothesisError):
        induce_base_triple(A, T, PLAN)


def test_base_triple_needs_transitive():
    A = LieAlgebroid(F.PLANE, ("e1", "e2"), [[1, 0], [0, 0]])
    T = triple("plane")[1]
    with pytest.raises(HypothesisError):
        induce_base_triple(A, T, PLAN)


def test_omega_complement_splitting_image():
    d = doc("flat_rank4")
    A = d.algebroid
    omega = AlgebroidForm(4, 2, {(0, 1): 1.0, (2, 3): 1.0, (0, 2): 0.5, (1, 3): -0.25}, A.chart)
    lam = symplectic_complement_splitting(A, omega, d.metric("g"), PLAN)
    pts = A.sample(SMALL)
    L = lam.at(pts)
    W = omega.dense_at(pts)
    # image of lambda is omega-orthogonal to ker rho = span(e3, e4)
    pairing = np.einsum("pai,pab->pib", L, W)[:, :, 2:]
    np.testing.assert_allclose(pairing, 0.0, atol=1e-12)


# --- cotangent algebroids and psi ----------------------------------------------


def test_zero_bivector_gives_abelian_zero_anchor():
    A = cotangent_algebroid(PoissonBivector([[0, 0], [0, 0]], F.PLANE))
    pts = A.sample(SMALL)
    assert np.abs(A.anchor_at(pts)).max() == 0.0
    assert np.abs(A.structure_at(pts)).max() == 0.0


def test_constant_bivector():
    A = cotangent_algebroid(PoissonBivector([[0, 1], [-1, 0]], F.PLANE))
    pts = A.sample(SMALL)
    # rho(dx) = d_y, rho(dy) = -d_x
    np.testing.assert_allclose(A.anchor_at(pts)[0], [[0.0, -1.0], [1.0, 0.0]])
    assert np.abs(A.structure_at(pts)).max() == 0.0


def test_linear_bivector_structure():
    A = doc("cotangent_linear").algebroid
    C = A.structure_at(A.sample(SMALL))
    # [dx, dy] = d(x) = dx
    np.testing.assert_allclose(C[:, 0, 0, 1], 1.0)
    np.testing.assert_allclose(C[:, 1, 0, 1], 0.0)


def test_non_poisson_bivector_rejected():
    # pi^{12} = 1, pi^{23} = y violates Jacobi
    pi = PoissonBivector([[0, 1, 0], [-1, 0, "y"], [0, "-y", 0]], F.SPACE)
    assert not pi.check_jacobi(PLAN).passed
    with pytest.raises(NotPoissonError):
        cotangent_algebroid(pi)


def test_base_bivector_of_plane():
    d = doc("plane")
    pi = base_poisson_bivector(d.algebroid, d.form("omega"))
    assert pi.entry(0, 1).evaluate((0.3, 0.2)) == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["plane", "flat_rank4", "twisted_rank4"])
def test_psi_is_a_morphism(name):
    d = doc(name)
    Phi, rep = build_psi_morphism(d.algebroid, d.form("omega"), d.metric("g"), SamplePlan(12))
    assert rep.passed, list(rep.lines())
    assert rep.check("anchor_of_hamiltonian").max_residual <= 1e-8


def test_psi_rejects_degenerate_kernel():
    d = doc("degenerate_kernel")
    with pytest.raises(HypothesisError):
        build_psi_morphism(d.algebroid, d.form("omega"), d.metric("g"), PLAN)


# --- kernel bracket theorems ---------------------------------------------------


def test_theorems_on_flat_rank4():
    A, T = triple("flat_rank4")
    rep = check_kernel_bracket_theorems(A, T, PLAN)
    assert rep.passed, list(rep.lines())
    assert rep.flags["L0_hypotheses"]
    assert rep.check("L0_kernel_bracket").max_residual == 0.0
    assert rep.check("kahler_equivalence").passed
    assert rep.check("integrability_curvature").passed


def test_theorems_with_mixed_J_are_not_asserted():
    A, T = triple("heisenberg4", omega="omega_mix", J="J_mix")
    rep = check_kernel_bracket_theorems(A, T, PLAN)
    assert rep.flags["admissible"] is False
    assert rep.flags["L0_hypotheses"] is False
    assert not rep.has("L0_kernel_bracket") or "L0_kernel_bracket" in {c.name for c in rep.diagnostics}


def test_theorems_on_twisted_rank4():
    A, T = triple("twisted_rank4")
    rep = check_kernel_bracket_theorems(A, T, PLAN)
    assert rep.passed, list(rep.lines())
    assert rep.check("integrability_curvature").max_residual <= 1e-9


def test_base_triple_over_point_is_refused():
    A, T = triple("aff1")
    assert check_admissible(A, T.J, None, PLAN)[0].passed
    with pytest.raises(HypothesisError):
        induce_base_triple(A, T, PLAN)
