"""Pointwise linear algebra: rank-revealing subspaces, first-order jets, and
small symbolic matrices of scalar fields."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import scalar_field as sf

DEFAULT_RANK_TOL = 1e-9


class RankInstabilityError(ArithmeticError):
    """A singular value sits within a factor 10 of the rank threshold."""


def _svd_threshold(s, rank_tol, scale):
    ref = float(s[0]) if (scale is None and s.size) else (0.0 if scale is None else float(scale))
    return rank_tol * ref


def _check_stability(s, thr, what):
    if thr <= 0:
        return
    near = s[(s > thr / 10) & (s < thr * 10)]
    if near.size:
        raise RankInstabilityError(
            f"{what}: singular value {near[0]:.3e} within a factor 10 of threshold {thr:.3e}"
        )


def nullspace(M, rank_tol=DEFAULT_RANK_TOL, scale=None, strict=False):
    """Orthonormal basis (as columns) of the nullspace of ``M``.

    Singular values below ``rank_tol * scale`` count as zero; ``scale``
    defaults to the largest singular value.  With ``strict`` an
    ill-conditioned rank decision raises :class:`RankInstabilityError`.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows, cols = M.shape
    if cols == 0:
        return np.zeros((0, 0))
    if rows == 0:
        return np.eye(cols)
    _, s, vt = np.linalg.svd(M)
    thr = _svd_threshold(s, rank_tol, scale)
    if strict:
        _check_stability(s, thr, "nullspace")
    rank = int(np.sum(s > thr))
    return vt[rank:].T.copy()


def column_space(M, rank_tol=DEFAULT_RANK_TOL, scale=None, strict=False):
    """Orthonormal basis (as columns) of the column space of ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows, cols = M.shape
    if cols == 0 or rows == 0:
        return np.zeros((rows, 0))
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    thr = _svd_threshold(s, rank_tol, scale)
    if strict:
        _check_stability(s, thr, "column space")
    rank = int(np.sum(s > thr))
    return u[:, :rank].copy()


def orthogonal_complement(basis, inner=None, within=None):
    """Complement of ``span(basis)`` inside ``span(within)`` w.r.t. the
    symmetric positive definite form ``inner`` (identity by default).

    Returned columns are orthonormal in the standard inner product.
    """
    n = basis.shape[0]
    G = np.eye(n) if inner is None else inner
    W = np.eye(n) if within is None else within
    if W.shape[1] == 0:
        return np.zeros((n, 0))
    if basis.shape[1] == 0:
        return column_space(W)
    # coefficients c with <basis_j, W c>_G = 0
    coeffs = nullspace(basis.T @ G @ W, scale=max(1.0, np.linalg.norm(G, 2)))
    return column_space(W @ coeffs)


def is_full_rank(M, rank_tol=DEFAULT_RANK_TOL):
    M = np.atleast_2d(M)
    if M.size == 0:
        return True
    s = np.linalg.svd(M, compute_uv=False)
    return bool(s[-1] > rank_tol * max(s[0], 1.0)) and min(M.shape) == M.shape[1]


# ---------------------------------------------------------------------------
# first-order jets
# ---------------------------------------------------------------------------


@dataclass
class Jet:
    """A value with its partial derivatives along the base coordinates.

    ``value`` has any shape ``S``; ``grad`` has shape ``S + (m,)``.
    """

    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def constant(cls, value, m):
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros(value.shape + (m,)))

    @property
    def m(self):
        return self.grad.shape[-1]

    def __add__(self, other):
        other = _as_jet(other, self.m)
        return Jet(self.value + other.value, self.grad + other.grad)

    def __sub__(self, other):
        other = _as_jet(other, self.m)
        return Jet(self.value - other.value, self.grad - other.grad)

    def __neg__(self):
        return Jet(-self.value, -self.grad)

    def scale(self, c):
        return Jet(c * self.value, c * self.grad)

    @property
    def T(self):
        return Jet(self.value.T, np.swapaxes(self.grad, 0, 1))

    def __matmul__(self, other):
        other = _as_jet(other, self.m)
        value = self.value @ other.value
        grad = np.stack(
            [self.grad[..., i] @ other.value + self.value @ other.grad[..., i] for i in range(self.m)],
            axis=-1,
        ) if self.m else np.zeros(np.shape(value) + (0,))
        return Jet(value, grad)

    def __getitem__(self, idx):
        return Jet(self.value[idx], self.grad[idx])


def _as_jet(x, m):
    return x if isinstance(x, Jet) else Jet.constant(x, m)


def jet_solve(A: Jet, b: Jet) -> Jet:
    """Solve ``A x = b`` carrying first derivatives: ``A dx = db - dA x``."""
    x = np.linalg.solve(A.value, b.value)
    m = A.m
    if m == 0:
        return Jet(x, np.zeros(x.shape + (0,)))
    grads = [np.linalg.solve(A.value, b.grad[..., i] - A.grad[..., i] @ x) for i in range(m)]
    return Jet(x, np.stack(grads, axis=-1))


def jets_of_matrix(values, grads, shape):
    """Repackage flat ``field_jets`` output at one point as a matrix jet."""
    m = grads.shape[-1]
    return Jet(values.reshape(shape), grads.reshape(shape + (m,)))


# ---------------------------------------------------------------------------
# symbolic matrices (lists of lists of ScalarField)
# ---------------------------------------------------------------------------


def sym_zeros(rows, cols, chart):
    z = sf.ScalarField.constant(0.0, chart)
    return [[z for _ in range(cols)] for _ in range(rows)]


def sym_identity(n, chart):
    out = sym_zeros(n, n, chart)
    for i in range(n):
        out[i][i] = sf.ScalarField.constant(1.0, chart)
    return out


def sym_transpose(M):
    return [list(col) for col in zip(*M)] if M else []


def sym_sum(terms, chart):
    terms = [t for t in terms if not t.is_zero]
    if not terms:
        return sf.ScalarField.constant(0.0, chart)
    return reduce(lambda a, b: a + b, terms)


def sym_matmul(A, B, chart):
    rows, inner = len(A), len(B)
    cols = len(B[0]) if B else 0
    return [
        [sym_sum([A[i][k] * B[k][j] for k in range(inner)], chart) for j in range(cols)]
        for i in range(rows)
    ]


def sym_det(M, chart):
    """Determinant by cofactor expansion with memoised minors."""
    n = len(M)
    if n == 0:
        return sf.ScalarField.constant(1.0, chart)
    memo = {}

    def minor(rows, cols):
        # rows: tuple of remaining row indices, cols likewise (same length)
        key = (rows, cols)
        if key in memo:
            return memo[key]
        if len(rows) == 1:
            val = M[rows[0]][cols[0]]
        else:
            r0, rest = rows[0], rows[1:]
            terms = []
            for j, c in enumerate(cols):
                entry = M[r0][c]
                if entry.is_zero:
                    continue
                sub = minor(rest, cols[:j] + cols[j + 1 :])
                term = entry * sub
                terms.append(-term if j % 2 else term)
            val = sym_sum(terms, chart)
        memo[key] = val
        return val

    return minor(tuple(range(n)), tuple(range(n)))


def sym_inverse(M, chart):
    """Adjugate over determinant; entries become quotient nodes unless constant."""
    n = len(M)
    det = sym_det(M, chart)
    out = sym_zeros(n, n, chart)
    for i in range(n):
        for j in range(n):
            rows = [r for r in range(n) if r != j]
            cols = [c for c in range(n) if c != i]
            cof = sym_det([[M[r][c] for c in cols] for r in rows], chart)
            if (i + j) % 2:
                cof = -cof
            out[i][j] = cof / det
    return out


def sym_evaluate(M, points, chart):
    """Evaluate a symbolic matrix; returns shape ``(n_points, rows, cols)``."""
    rows = len(M)
    cols = len(M[0]) if rows else 0
    pts = sf._as_points(points, chart.dim)
    flat = [e for row in M for e in row]
    vals = sf.evaluate_fields(flat, pts, chart)
    return vals.T.reshape(len(pts), rows, cols)


def permutation_sign(seq):
    seq = list(seq)
    sign = 1
    for i, j in itertools.combinations(range(len(seq)), 2):
        if seq[i] > seq[j]:
            sign = -sign
    return sign
