"""Reference algebroids with their forms, metrics and endomorphisms.

Every builder returns an :class:`~algebroidkit.document.AlgebroidDocument`.
A few of them also ship as JSON under ``fixtures/`` for the command line.
"""

from __future__ import annotations

import functools
from importlib import resources

import numpy as np

from . import scalar_field as sf
from .algebroid import AlgebroidMorphism, Endomorphism, LieAlgebroid, Section
from .document import AlgebroidDocument
from .forms import AlgebroidForm
from .symplectic import PoissonBivector, cotangent_algebroid
from .transitive import BundleMetric, TransitiveBuildInput, build_transitive

PLANE = sf.ChartDomain.euclidean(("x", "y"))
SPACE = sf.ChartDomain.euclidean(("x", "y", "z"))
LINE = sf.ChartDomain.euclidean(("x",))
FOUR = sf.ChartDomain.euclidean(("x", "y", "z", "w"))


def _identity(n):
    return [[1.0 if a == b else 0.0 for b in range(n)] for a in range(n)]


def _tangent(chart, names=None):
    m = chart.dim
    names = names or [f"e{i + 1}" for i in range(m)]
    return LieAlgebroid(chart, names, _identity(m), name=f"T R^{m}")


def _two_form(n, chart, entries):
    return AlgebroidForm(n, 2, dict(entries), chart)


def _rotation_blocks(n, pairs):
    """``J e_a = -e_b``, ``J e_b = e_a`` for each pair: compatible with
    ``e^a ^ e^b`` and the identity metric."""
    J = [[0.0] * n for _ in range(n)]
    for a, b in pairs:
        J[a][b] = 1.0
        J[b][a] = -1.0
    return J


def _doc(A, **tables):
    return AlgebroidDocument(A, name=A.name, **{k: v for k, v in tables.items()})


# ---------------------------------------------------------------------------
# tangent bundles
# ---------------------------------------------------------------------------


def plane() -> AlgebroidDocument:
    """``T R^2`` as a flat Kaehler plane."""
    A = _tangent(PLANE)
    A.name = "plane"
    omega = _two_form(2, PLANE, {(0, 1): 1.0})
    return _doc(
        A,
        forms={"omega": omega},
        metrics={"g": BundleMetric.identity(2, PLANE), "g2": BundleMetric([[1.0, 0.0], [0.0, 2.0]], PLANE)},
        endos={"J": Endomorphism(_rotation_blocks(2, [(0, 1)]), PLANE)},
        functions={"f": sf.parse_expression("x^2*y + sin(x)", PLANE)},
    )


def tangent3() -> AlgebroidDocument:
    A = _tangent(SPACE)
    A.name = "tr3"
    return _doc(
        A,
        forms={
            "eta": AlgebroidForm.from_covector(["-y", 0.0, 1.0], SPACE),
            "eta_flat": AlgebroidForm.from_covector([0.0, 0.0, 1.0], SPACE),
        },
    )


def tangent4() -> AlgebroidDocument:
    A = _tangent(FOUR)
    A.name = "tr4"
    x = sf.ScalarField.coordinate(0, FOUR)
    return _doc(
        A,
        forms={
            "omega": _two_form(4, FOUR, {(0, 1): 1.0, (2, 3): 1.0}),
            "omega_x": _two_form(4, FOUR, {(0, 1): 1.0, (2, 3): x}),
        },
    )


# ---------------------------------------------------------------------------
# Lie algebras over a point (or a line)
# ---------------------------------------------------------------------------


SO3_STRUCTURE = {(0, 1): [0, 0, 1], (1, 2): [1, 0, 0], (2, 0): [0, 1, 0]}


def so3_point() -> AlgebroidDocument:
    A = LieAlgebroid(sf.POINT, ("s1", "s2", "s3"), [[], [], []], SO3_STRUCTURE, name="so3")
    return _doc(A, metrics={"g": BundleMetric.identity(3, sf.POINT)})


def aff1_point() -> AlgebroidDocument:
    """``[e1, e2] = e2`` with the (trivially closed) form ``e^1 ^ e^2``."""
    A = LieAlgebroid(sf.POINT, ("e1", "e2"), [[], []], {(0, 1): [0, 1]}, name="aff1")
    return _doc(
        A,
        forms={"omega": _two_form(2, sf.POINT, {(0, 1): 1.0})},
        metrics={"g": BundleMetric.identity(2, sf.POINT)},
        endos={"J": Endomorphism(_rotation_blocks(2, [(0, 1)]), sf.POINT)},
    )


def abelian_point(n=2) -> AlgebroidDocument:
    A = LieAlgebroid(sf.POINT, [f"e{i + 1}" for i in range(n)], [[] for _ in range(n)], name=f"R^{n}")
    return _doc(A, endos={"J": Endomorphism(_rotation_blocks(n, [(2 * k, 2 * k + 1) for k in range(n // 2)]), sf.POINT)})


def so3_perturbed() -> AlgebroidDocument:
    """so(3) over a line with ``[s1, s2] = s3 + x s1``.

    The Jacobiator of the frame is ``-x s2``.  (Rescaling ``C^3_12`` alone
    would not do: every three-dimensional algebra of that shape is Lie.)
    """
    structure = {(0, 1): ["x", 0, 1], (1, 2): [1, 0, 0], (2, 0): [0, 1, 0]}
    A = LieAlgebroid(LINE, ("s1", "s2", "s3"), [[0], [0], [0]], structure, name="so3 perturbed")
    return _doc(A)


def kodaira_thurston_point() -> AlgebroidDocument:
    """``[e1, e2] = e3`` with the closed form ``e^1 ^ e^3 + e^2 ^ e^4``:
    almost Kaehler, with nonzero Nijenhuis tensor."""
    A = LieAlgebroid(sf.POINT, ("e1", "e2", "e3", "e4"), [[]] * 4, {(0, 1): [0, 0, 1, 0]}, name="kodaira-thurston")
    return _doc(
        A,
        forms={"omega": _two_form(4, sf.POINT, {(0, 2): 1.0, (1, 3): 1.0})},
        metrics={"g": BundleMetric.identity(4, sf.POINT)},
        endos={"J": Endomorphism(_rotation_blocks(4, [(0, 2), (1, 3)]), sf.POINT)},
    )


# ---------------------------------------------------------------------------
# transitive algebroids TM + L
# ---------------------------------------------------------------------------


def heisenberg() -> AlgebroidDocument:
    """Rank 3 over the plane: ``rho(e1) = d_x``, ``rho(e2) = d_y``,
    ``[e1, e2] = e3`` (central, zero anchor)."""
    A = LieAlgebroid(PLANE, ("e1", "e2", "e3"), [[1, 0], [0, 1], [0, 0]], {(0, 1): [0, 0, 1]}, name="heisenberg")
    eta = AlgebroidForm.from_covector([0.0, 0.0, 1.0], PLANE)
    phi = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
    return _doc(
        A,
        forms={"eta": eta, "eta2": eta * 2.0},
        metrics={"g": BundleMetric.identity(3, PLANE)},
        endos={"phi": Endomorphism(phi, PLANE), "phi_bad": Endomorphism(
            [[0.0, -1.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], PLANE)},
        sections={"xi": A.frame(2), "xi2": A.frame(2) * 2.0},
    )


def heisenberg_type() -> AlgebroidDocument:
    """The same algebra through the ``TM + L`` constructor (curvature ``s1``)."""
    A = build_transitive(TransitiveBuildInput(PLANE, 1, curvature={(0, 1): [1.0]}, name="heisenberg-type"))
    return _doc(A, metrics={"g": BundleMetric.identity(3, PLANE)})


def heisenberg_permuted() -> AlgebroidDocument:
    """Heisenberg with the central direction listed first (``xi = f1``)."""
    A = LieAlgebroid(PLANE, ("f1", "f2", "f3"), [[0, 0], [1, 0], [0, 1]], {(1, 2): [1, 0, 0]}, name="heisenberg permuted")
    return _doc(A, forms={"eta": AlgebroidForm.from_covector([1.0, 0.0, 0.0], PLANE)})


def heisenberg5() -> AlgebroidDocument:
    """``[e1, e2] = e3 = [e4, e5]`` with ``e3, e4, e5`` in the kernel of the anchor."""
    A = LieAlgebroid(
        PLANE,
        ("e1", "e2", "e3", "e4", "e5"),
        [[1, 0], [0, 1], [0, 0], [0, 0], [0, 0]],
        {(0, 1): [0, 0, 1, 0, 0], (3, 4): [0, 0, 1, 0, 0]},
        name="heisenberg5",
    )
    phi = [[0.0] * 5 for _ in range(5)]
    phi[1][0], phi[0][1] = 1.0, -1.0
    phi[4][3], phi[3][4] = 1.0, -1.0
    return _doc(
        A,
        forms={"eta": AlgebroidForm.from_covector([0, 0, 1, 0, 0], PLANE)},
        metrics={"g": BundleMetric.identity(5, PLANE)},
        endos={"phi": Endomorphism(phi, PLANE)},
        sections={"xi": A.frame(2)},
    )


def heisenberg4() -> AlgebroidDocument:
    """``TR^2 + R^2`` with curvature ``[d_x, d_y] = s1``; ``J_mix`` does not
    preserve the kernel."""
    A = build_transitive(TransitiveBuildInput(PLANE, 2, curvature={(0, 1): [1.0, 0.0]}, name="heisenberg4"))
    return _doc(
        A,
        forms={
            "omega": _two_form(4, PLANE, {(0, 1): 1.0, (2, 3): 1.0}),
            "omega_mix": _two_form(4, PLANE, {(0, 2): 1.0, (1, 3): 1.0}),
        },
        metrics={"g": BundleMetric.identity(4, PLANE)},
        endos={
            "J": Endomorphism(_rotation_blocks(4, [(0, 1), (2, 3)]), PLANE),
            "J_mix": Endomorphism(_rotation_blocks(4, [(0, 2), (1, 3)]), PLANE),
        },
    )


def so3_bundle() -> AlgebroidDocument:
    """Flat ``TR^2 + so(3)`` (trivial connection, zero curvature), rank 5."""
    fiber = {k: v for k, v in SO3_STRUCTURE.items()}
    A = build_transitive(TransitiveBuildInput(PLANE, 3, fiber_structure=fiber, name="so3 bundle"))
    return _doc(A, metrics={"g": BundleMetric.identity(5, PLANE)})


def twisted_line() -> AlgebroidDocument:
    """Line bundle over the plane with ``nabla_{d_x} s = x s``."""
    A = build_transitive(TransitiveBuildInput(PLANE, 1, connection=[[["x"]], [[0.0]]], name="twisted line"))
    return _doc(A, metrics={"g": BundleMetric.identity(3, PLANE)})


def flat_rank4() -> AlgebroidDocument:
    """``TR^2 + R^2`` (abelian fiber, trivial connection) as a product of
    Kaehler planes."""
    A = build_transitive(TransitiveBuildInput(PLANE, 2, name="flat rank 4"))
    return _doc(
        A,
        forms={"omega": _two_form(4, PLANE, {(0, 1): 1.0, (2, 3): 1.0}),
               "omega_mix": _two_form(4, PLANE, {(0, 2): 1.0, (1, 3): 1.0})},
        metrics={"g": BundleMetric.identity(4, PLANE)},
        endos={
            "J": Endomorphism(_rotation_blocks(4, [(0, 1), (2, 3)]), PLANE),
            "J_mix": Endomorphism(_rotation_blocks(4, [(0, 2), (1, 3)]), PLANE),
        },
    )


def twisted_rank4() -> AlgebroidDocument:
    """``TR^2 + R^2`` with ``nabla_{d_x} = x * rotation`` (flat, preserves
    the fiber area form and the identity metric)."""
    rot = [["0", "-x"], ["x", "0"]]
    A = build_transitive(TransitiveBuildInput(PLANE, 2, connection=[rot, [[0, 0], [0, 0]]], name="twisted rank 4"))
    return _doc(
        A,
        forms={"omega": _two_form(4, PLANE, {(0, 1): 1.0, (2, 3): 1.0})},
        metrics={"g": BundleMetric.identity(4, PLANE)},
        endos={"J": Endomorphism(_rotation_blocks(4, [(0, 1), (2, 3)]), PLANE)},
    )


def degenerate_kernel() -> AlgebroidDocument:
    """Rank 2 over a line, ``rho(e2) = 0``: the kernel is omega-isotropic."""
    A = LieAlgebroid(LINE, ("e1", "e2"), [[1], [0]], name="degenerate kernel")
    return _doc(
        A,
        forms={"omega": _two_form(2, LINE, {(0, 1): 1.0})},
        metrics={"g": BundleMetric.identity(2, LINE)},
        endos={"J": Endomorphism(_rotation_blocks(2, [(0, 1)]), LINE)},
    )


def cotangent_linear() -> AlgebroidDocument:
    """Cotangent algebroid of the linear bivector ``pi^{12} = x``."""
    pi = PoissonBivector([[0, "x"], ["-x", 0]], PLANE)
    A = cotangent_algebroid(pi)
    A.name = "cotangent linear"
    return _doc(A)


# ---------------------------------------------------------------------------
# morphisms
# ---------------------------------------------------------------------------


WIDE_PLANE = sf.ChartDomain(2, ("x", "y"), ((-2.0, 2.0), (-2.0, 2.0)))


def shear_morphism(scale=1.0) -> AlgebroidMorphism:
    """``T phi`` for ``phi(x, y) = (x + 0.3 y^2, y)``; ``scale != 1`` breaks it."""
    src = _tangent(PLANE)
    tgt = _tangent(WIDE_PLANE)
    base = [sf.parse_expression("x + 0.3*y^2", PLANE), sf.parse_expression("y", PLANE)]
    fiber = [[e * scale for e in row] for row in [[1.0, sf.parse_expression("0.6*y", PLANE)], [0.0, 1.0]]]
    return AlgebroidMorphism(src, tgt, base, fiber, name="shear")


def so3_rotation_morphism(angle=0.7) -> AlgebroidMorphism:
    """An inner automorphism of so(3) (rotation about ``s3``)."""
    A = so3_point().algebroid
    c, s = float(np.cos(angle)), float(np.sin(angle))
    fiber = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    return AlgebroidMorphism(A, A, [], fiber, name="so3 rotation")


def heisenberg_shear_morphism() -> AlgebroidMorphism:
    """Covers ``(x, y) -> (x, y + 0.2 x)`` with ``e1 -> e1 + 0.2 e2``."""
    A = heisenberg().algebroid
    B = LieAlgebroid(WIDE_PLANE, A.frame_names, [[1, 0], [0, 1], [0, 0]], {(0, 1): [0, 0, 1]}, name="heisenberg wide")
    base = [sf.parse_expression("x", PLANE), sf.parse_expression("y + 0.2*x", PLANE)]
    fiber = [[1.0, 0.0, 0.0], [0.2, 1.0, 0.0], [0.0, 0.0, 1.0]]
    return AlgebroidMorphism(A, B, base, fiber, name="heisenberg shear")


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


BUILDERS = {
    "plane": plane,
    "tr3": tangent3,
    "tr4": tangent4,
    "so3": so3_point,
    "aff1": aff1_point,
    "abelian2": abelian_point,
    "so3_perturbed": so3_perturbed,
    "kodaira_thurston": kodaira_thurston_point,
    "heisenberg": heisenberg,
    "heisenberg_type": heisenberg_type,
    "heisenberg_permuted": heisenberg_permuted,
    "heisenberg5": heisenberg5,
    "heisenberg4": heisenberg4,
    "so3_bundle": so3_bundle,
    "twisted_line": twisted_line,
    "flat_rank4": flat_rank4,
    "twisted_rank4": twisted_rank4,
    "degenerate_kernel": degenerate_kernel,
    "cotangent_linear": cotangent_linear,
}

#: fixtures that also ship as JSON documents
SHIPPED = ("plane", "heisenberg", "tr3", "flat_rank4", "so3", "heisenberg5")


@functools.lru_cache(maxsize=None)
def get(name: str) -> AlgebroidDocument:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {sorted(BUILDERS)}") from None
    return builder()


def fixture_path(name: str):
    """Path of a shipped JSON fixture."""
    return resources.files("algebroidkit") / "fixtures" / f"{name}.json"
