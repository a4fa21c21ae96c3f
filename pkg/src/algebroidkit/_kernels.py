"""Batch evaluation kernels for compiled expression tapes.

A tape is the topologically ordered instruction list of an expression DAG.
Each instruction writes one row of an ``(n_instructions, n_points)`` value
table.  Two interchangeable back ends evaluate it:

* ``eval_tape_numba``: a numba ``@njit`` loop over instructions and points;
* ``eval_tape_numpy``: one vectorised numpy operation per instruction.

The back end is chosen once at import time.  Set ``ALGEBROIDKIT_PURE_NUMPY=1``
to force the numpy path (also used automatically when numba is missing).
"""

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator


OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_MUL = 3
OP_DIV = 4
OP_POW = 5
OP_NEG = 6
OP_SIN = 7
OP_COS = 8
OP_EXP = 9


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = NUMBA_AVAILABLE and not _env_flag("ALGEBROIDKIT_PURE_NUMPY")


@njit(cache=True)
def eval_tape_numba(op, a, b, k, c, points, eps):
    """Evaluate a tape at every row of ``points``.

    Returns ``(values, bad_instruction, bad_point)``; the last two are -1
    unless a denominator fell below ``eps`` in absolute value.
    """
    n = op.shape[0]
    npts = points.shape[0]
    out = np.empty((n, npts))
    for i in range(n):
        o = op[i]
        if o == 0:
            for p in range(npts):
                out[i, p] = c[i]
        elif o == 1:
            for p in range(npts):
                out[i, p] = points[p, k[i]]
        elif o == 2:
            for p in range(npts):
                out[i, p] = out[a[i], p] + out[b[i], p]
        elif o == 3:
            for p in range(npts):
                out[i, p] = out[a[i], p] * out[b[i], p]
        elif o == 4:
            for p in range(npts):
                d = out[b[i], p]
                if abs(d) < eps:
                    return out, i, p
                out[i, p] = out[a[i], p] / d
        elif o == 5:
            e = k[i]
            for p in range(npts):
                base = out[a[i], p]
                if e < 0:
                    if abs(base) < eps:
                        return out, i, p
                    out[i, p] = 1.0 / base ** (-e)
                else:
                    out[i, p] = base ** e
        elif o == 6:
            for p in range(npts):
                out[i, p] = -out[a[i], p]
        elif o == 7:
            for p in range(npts):
                out[i, p] = math.sin(out[a[i], p])
        elif o == 8:
            for p in range(npts):
                out[i, p] = math.cos(out[a[i], p])
        else:
            for p in range(npts):
                out[i, p] = math.exp(out[a[i], p])
    return out, -1, -1


def eval_tape_numpy(op, a, b, k, c, points, eps):
    """Pure-numpy twin of :func:`eval_tape_numba` with the same contract."""
    n = op.shape[0]
    npts = points.shape[0]
    out = np.empty((n, npts))
    for i in range(n):
        o = op[i]
        if o == OP_CONST:
            out[i] = c[i]
        elif o == OP_VAR:
            out[i] = points[:, k[i]]
        elif o == OP_ADD:
            np.add(out[a[i]], out[b[i]], out=out[i])
        elif o == OP_MUL:
            np.multiply(out[a[i]], out[b[i]], out=out[i])
        elif o == OP_DIV:
            d = out[b[i]]
            small = np.flatnonzero(np.abs(d) < eps)
            if small.size:
                return out, i, int(small[0])
            np.divide(out[a[i]], d, out=out[i])
        elif o == OP_POW:
            e = int(k[i])
            base = out[a[i]]
            if e < 0:
                small = np.flatnonzero(np.abs(base) < eps)
                if small.size:
                    return out, i, int(small[0])
                out[i] = 1.0 / base ** (-e)
            else:
                out[i] = base ** e
        elif o == OP_NEG:
            np.negative(out[a[i]], out=out[i])
        elif o == OP_SIN:
            np.sin(out[a[i]], out=out[i])
        elif o == OP_COS:
            np.cos(out[a[i]], out=out[i])
        else:
            np.exp(out[a[i]], out=out[i])
    return out, -1, -1


def eval_tape(op, a, b, k, c, points, eps):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if USE_NUMBA:
        return eval_tape_numba(op, a, b, k, c, points, eps)
    return eval_tape_numpy(op, a, b, k, c, points, eps)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
