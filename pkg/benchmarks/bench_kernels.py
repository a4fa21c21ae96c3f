"""Compare the numba and pure-numpy tape evaluators.

Two workloads: a batch of random nested expressions, and the coefficient
fields of d(d alpha) for random forms on the rank-5 so(3) bundle (the tape
shape the validators actually produce).

    python benchmarks/bench_kernels.py --points 65 1000 10000
"""

import argparse
import sys
import timeit
from pathlib import Path

import numpy as np

from algebroidkit import _kernels as K
from algebroidkit import fixtures as F
from algebroidkit import scalar_field as sf
from algebroidkit.forms import exterior_derivative

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from exprs import random_expression  # noqa: E402
from helpers import random_form  # noqa: E402


def random_tape(n_exprs, rng):
    chart = sf.ChartDomain.euclidean(("x", "y"))
    nodes = [sf.parse_node(random_expression(rng), chart.var_names) for _ in range(n_exprs)]
    return sf.compile_nodes(nodes)


def dd_tape(n_forms, rng):
    A = F.get("so3_bundle").algebroid
    fields = []
    for t in range(n_forms):
        alpha = random_form(A, 1 + t % 3, rng)
        fields.extend(exterior_derivative(A, exterior_derivative(A, alpha)).fields())
    return sf.compile_nodes([f.node for f in fields])


def time_backend(fn, tape, pts, repeat):
    args = (tape.op, tape.a, tape.b, tape.k, tape.c, pts, sf.DIVISION_EPS)
    fn(*args)  # warm-up (includes JIT compilation for numba)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+", default=[65, 1000, 10000])
    ap.add_argument("--exprs", type=int, default=200)
    ap.add_argument("--forms", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        ap.error("numba is not installed")

    rng = np.random.default_rng(args.seed)
    workloads = {"random": random_tape(args.exprs, rng), "d(d alpha)": dd_tape(args.forms, rng)}
    print(f"{'workload':<12} {'instr':>6} {'points':>7} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, tape in workloads.items():
        for n in args.points:
            pts = np.ascontiguousarray(rng.uniform(-1, 1, size=(n, 2)))
            t_nb = time_backend(K.eval_tape_numba, tape, pts, args.repeat)
            t_np = time_backend(K.eval_tape_numpy, tape, pts, args.repeat)
            print(f"{name:<12} {len(tape.op):>6} {n:>7} {1e3 * t_nb:>10.3f} {1e3 * t_np:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
