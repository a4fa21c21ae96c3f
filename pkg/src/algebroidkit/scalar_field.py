"""Smooth scalar fields on a coordinate chart.

Fields are immutable expression DAGs over the node kinds constant, variable,
sum, product, quotient, integer power, negation, sin, cos and exp.  Nodes are
hash-consed, so structurally equal trees are the same object and tree
equality is identity.  The constructors fold constants and drop neutral
elements; that is the only simplification performed.

Evaluation compiles the DAG of one or many fields into a flat tape that the
kernels in :mod:`algebroidkit._kernels` run over a whole batch of points.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K

DIVISION_EPS = 1e-12
FUNCTIONS = ("sin", "cos", "exp")


class ExpressionSyntaxError(ValueError):
    """Raised for malformed expression text; ``offset`` is a byte offset."""

    def __init__(self, message, offset, text=""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UnknownIdentifierError(ExpressionSyntaxError):
    pass


class DivisionNearZeroError(ZeroDivisionError):
    """A denominator evaluated below ``DIVISION_EPS`` in absolute value."""

    def __init__(self, point):
        self.point = tuple(float(v) for v in point)
        super().__init__(f"division by near-zero value at point {self.point}")


@dataclass(frozen=True)
class ChartDomain:
    """A single coordinate chart with a sampling box.

    ``dim`` may be 0, which models an algebroid over a point.
    """

    dim: int
    var_names: tuple
    box: tuple

    def __post_init__(self):
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))
        if self.dim < 0:
            raise ValueError("chart dimension must be non-negative")
        if len(self.var_names) != self.dim or len(self.box) != self.dim:
            raise ValueError("var_names and box must both have length dim")
        if len(set(self.var_names)) != self.dim:
            raise ValueError("chart variable names must be distinct")
        for name in self.var_names:
            if not name.isidentifier() or name in FUNCTIONS:
                raise ValueError(f"invalid variable name {name!r}")
        for lo, hi in self.box:
            if not lo < hi:
                raise ValueError("every box interval needs lo < hi")

    @classmethod
    def euclidean(cls, names, half_width=1.0):
        names = tuple(names)
        return cls(len(names), names, tuple((-half_width, half_width) for _ in names))

    @property
    def center(self):
        return np.array([(lo + hi) / 2 for lo, hi in self.box], dtype=float)

    def index(self, name):
        return self.var_names.index(name)


POINT = ChartDomain(0, (), ())


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

CONST, VAR, ADD, MUL, DIV, POW, NEG, SIN, COS, EXP = (
    "const", "var", "add", "mul", "div", "pow", "neg", "sin", "cos", "exp",
)
_OPCODES = {
    CONST: K.OP_CONST, VAR: K.OP_VAR, ADD: K.OP_ADD, MUL: K.OP_MUL, DIV: K.OP_DIV,
    POW: K.OP_POW, NEG: K.OP_NEG, SIN: K.OP_SIN, COS: K.OP_COS, EXP: K.OP_EXP,
}


class Node:
    """Interned expression node.  Build only through the module constructors."""

    __slots__ = ("kind", "args", "value", "_diff", "_size")

    def __init__(self, kind, args, value):
        self.kind = kind
        self.args = args
        self.value = value
        self._diff = {}
        self._size = None

    def __repr__(self):
        return f"Node({to_text(self)})"

    def __reduce__(self):
        return (_rebuild, (self.kind, self.args, self.value))

    @property
    def is_const(self):
        return self.kind == CONST

    def size(self):
        """Number of nodes in the tree view (shared subtrees counted repeatedly)."""
        if self._size is None:
            self._size = 1 + sum(child.size() for child in self.args)
        return self._size


_TABLE: dict = {}
_LOCK = threading.Lock()


def _intern(kind, args=(), value=None):
    key = (kind, value) + args
    node = _TABLE.get(key)
    if node is None:
        with _LOCK:
            node = _TABLE.get(key)
            if node is None:
                node = Node(kind, args, value)
                _TABLE[key] = node
    return node


def _rebuild(kind, args, value):
    return _intern(kind, tuple(args), value)


def const(v) -> Node:
    v = float(v)
    if v == 0.0:
        v = 0.0
    if not math.isfinite(v):
        raise ValueError("constants must be finite")
    return _intern(CONST, (), v)


ZERO = const(0.0)
ONE = const(1.0)


def var(i: int) -> Node:
    return _intern(VAR, (), int(i))


def add(a: Node, b: Node) -> Node:
    if a.kind == CONST and b.kind == CONST:
        return const(a.value + b.value)
    if a is ZERO:
        return b
    if b is ZERO:
        return a
    return _intern(ADD, (a, b))


def neg(a: Node) -> Node:
    if a.kind == CONST:
        return const(-a.value)
    if a.kind == NEG:
        return a.args[0]
    return _intern(NEG, (a,))


def sub(a: Node, b: Node) -> Node:
    return add(a, neg(b))


def mul(a: Node, b: Node) -> Node:
    if a.kind == CONST and b.kind == CONST:
        return const(a.value * b.value)
    if a is ZERO or b is ZERO:
        return ZERO
    if a is ONE:
        return b
    if b is ONE:
        return a
    if a.kind == CONST and a.value == -1.0:
        return neg(b)
    if b.kind == CONST and b.value == -1.0:
        return neg(a)
    return _intern(MUL, (a, b))


def div(a: Node, b: Node) -> Node:
    if b is ONE:
        return a
    if b.kind == CONST and b.value != 0.0:
        if a.kind == CONST:
            return const(a.value / b.value)
        if b.value == -1.0:
            return neg(a)
    if a is ZERO and b.kind == CONST and b.value != 0.0:
        return ZERO
    return _intern(DIV, (a, b))


def power(a: Node, n: int) -> Node:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if a.kind == CONST and (a.value != 0.0 or n > 0):
        return const(a.value ** n)
    return _intern(POW, (a,), n)


def func(name: str, a: Node) -> Node:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if a.kind == CONST:
        return const(getattr(math, name)(a.value))
    return _intern(name, (a,))


def derivative(node: Node, i: int) -> Node:
    """Symbolic partial derivative with respect to variable ``i`` (cached)."""
    cached = node._diff.get(i)
    if cached is not None:
        return cached
    kind = node.kind
    if kind == CONST:
        d = ZERO
    elif kind == VAR:
        d = ONE if node.value == i else ZERO
    elif kind == ADD:
        d = add(derivative(node.args[0], i), derivative(node.args[1], i))
    elif kind == NEG:
        d = neg(derivative(node.args[0], i))
    elif kind == MUL:
        a, b = node.args
        d = add(mul(derivative(a, i), b), mul(a, derivative(b, i)))
    elif kind == DIV:
        a, b = node.args
        da, db = derivative(a, i), derivative(b, i)
        if db is ZERO:
            d = div(da, b)
        else:
            d = div(sub(mul(da, b), mul(a, db)), power(b, 2))
    elif kind == POW:
        (a,) = node.args
        n = node.value
        d = mul(mul(const(n), power(a, n - 1)), derivative(a, i))
    elif kind == SIN:
        (a,) = node.args
        d = mul(func("cos", a), derivative(a, i))
    elif kind == COS:
        (a,) = node.args
        d = neg(mul(func("sin", a), derivative(a, i)))
    else:
        (a,) = node.args
        d = mul(node, derivative(a, i))
    node._diff[i] = d
    return d


def substitute(node: Node, replacements: Sequence[Node], _memo=None) -> Node:
    """Replace variable ``j`` by ``replacements[j]`` everywhere."""
    memo = {} if _memo is None else _memo
    hit = memo.get(node)
    if hit is not None:
        return hit
    kind = node.kind
    if kind == CONST:
        out = node
    elif kind == VAR:
        out = replacements[node.value]
    else:
        args = [substitute(child, replacements, memo) for child in node.args]
        if kind == ADD:
            out = add(*args)
        elif kind == MUL:
            out = mul(*args)
        elif kind == DIV:
            out = div(*args)
        elif kind == NEG:
            out = neg(args[0])
        elif kind == POW:
            out = power(args[0], node.value)
        else:
            out = func(kind, args[0])
    memo[node] = out
    return out


def variables(node: Node) -> set:
    seen, stack, found = set(), [node], set()
    while stack:
        nd = stack.pop()
        if nd in seen:
            continue
        seen.add(nd)
        if nd.kind == VAR:
            found.add(nd.value)
        stack.extend(nd.args)
    return found


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_LEVEL_EXPR, _LEVEL_TERM, _LEVEL_FACTOR, _LEVEL_ATOM = 0, 1, 2, 3


def _format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _level(node: Node) -> int:
    kind = node.kind
    if kind == ADD:
        return _LEVEL_EXPR
    if kind in (MUL, DIV):
        return _LEVEL_TERM
    if kind in (NEG, POW):
        return _LEVEL_FACTOR
    if kind == CONST and node.value < 0:
        return _LEVEL_FACTOR
    return _LEVEL_ATOM


def _wrap(node, names, min_level):
    text = to_text(node, names)
    return text if _level(node) >= min_level else f"({text})"


def to_text(node: Node, names: Sequence[str] | None = None) -> str:
    """Print a node in the expression grammar; parsing the result gives back ``node``."""
    kind = node.kind
    if kind == CONST:
        return _format_number(node.value)
    if kind == VAR:
        return names[node.value] if names is not None else f"x{node.value}"
    if kind == ADD:
        left, right = node.args
        if right.kind == NEG:
            return f"{_wrap(left, names, _LEVEL_EXPR)} - {_wrap(right.args[0], names, _LEVEL_TERM)}"
        return f"{_wrap(left, names, _LEVEL_EXPR)} + {_wrap(right, names, _LEVEL_TERM)}"
    if kind in (MUL, DIV):
        sym = "*" if kind == MUL else "/"
        left, right = node.args
        return f"{_wrap(left, names, _LEVEL_TERM)}{sym}{_wrap(right, names, _LEVEL_FACTOR)}"
    if kind == NEG:
        return "-" + _wrap(node.args[0], names, _LEVEL_FACTOR)
    if kind == POW:
        return f"{_wrap(node.args[0], names, _LEVEL_ATOM)}^{node.value}"
    return f"{kind}({to_text(node.args[0], names)})"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _Parser:
    """Recursive descent over the grammar

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | atom ('^' integer)?
    atom   := number | identifier | func '(' expr ')' | '(' expr ')'
    """

    def __init__(self, text: str, names: Sequence[str]):
        self.text = text
        self.data = text.encode("utf-8")
        self.pos = 0
        self.names = {name: i for i, name in enumerate(names)}

    def error(self, message, cls=ExpressionSyntaxError, offset=None):
        raise cls(message, self.pos if offset is None else offset, self.text)

    def skip(self):
        while self.pos < len(self.data) and self.data[self.pos] in b" \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return chr(self.data[self.pos]) if self.pos < len(self.data) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self) -> Node:
        node = self.expr()
        if self.peek():
            self.error(f"unexpected character {self.peek()!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() in ("+", "-") and self.peek():
            op = self.peek()
            self.pos += 1
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek() in ("*", "/") and self.peek():
            op = self.peek()
            self.pos += 1
            rhs = self.factor()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def factor(self) -> Node:
        if self.peek() == "-":
            self.pos += 1
            return neg(self.factor())
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            base = power(base, self.integer())
        return base

    def integer(self) -> int:
        self.skip()
        start = self.pos
        if self.pos < len(self.data) and self.data[self.pos : self.pos + 1] == b"-":
            self.pos += 1
        digits = self.pos
        while self.pos < len(self.data) and chr(self.data[self.pos]).isdigit():
            self.pos += 1
        if self.pos == digits:
            self.error("expected integer exponent", offset=start)
        return int(self.data[start : self.pos].decode())

    def atom(self) -> Node:
        ch = self.peek()
        if not ch:
            self.error("unexpected end of input")
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha() or ch == "_":
            start = self.pos
            while self.pos < len(self.data) and (chr(self.data[self.pos]).isalnum() or self.data[self.pos] == 95):
                self.pos += 1
            name = self.data[start : self.pos].decode()
            if name in FUNCTIONS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return func(name, inner)
            if name not in self.names:
                self.error(f"unknown identifier {name!r}", UnknownIdentifierError, start)
            return var(self.names[name])
        if ch == "(":
            self.pos += 1
            inner = self.expr()
            self.expect(")")
            return inner
        self.error(f"unexpected character {ch!r}")

    def number(self) -> Node:
        data, start = self.data, self.pos
        i = start
        while i < len(data) and chr(data[i]).isdigit():
            i += 1
        if i < len(data) and data[i : i + 1] == b".":
            i += 1
            while i < len(data) and chr(data[i]).isdigit():
                i += 1
        if data[start:i] == b".":
            self.error("malformed number")
        # optional exponent, only when digits follow
        if i < len(data) and data[i : i + 1] in (b"e", b"E"):
            j = i + 1
            if j < len(data) and data[j : j + 1] in (b"+", b"-"):
                j += 1
            if j < len(data) and chr(data[j]).isdigit():
                while j < len(data) and chr(data[j]).isdigit():
                    j += 1
                i = j
        self.pos = i
        return const(float(data[start:i].decode()))


def parse_node(text: str, names: Sequence[str]) -> Node:
    return _Parser(text, names).parse()


# ---------------------------------------------------------------------------
# compiled evaluation
# ---------------------------------------------------------------------------


class Tape:
    """Flat instruction list for a set of root nodes."""

    __slots__ = ("op", "a", "b", "k", "c", "outputs")

    def __init__(self, roots: Sequence[Node]):
        index: dict = {}
        order = []
        for root in roots:
            stack = [(root, False)]
            while stack:
                node, expanded = stack.pop()
                if node in index:
                    continue
                if expanded or not node.args:
                    index[node] = len(order)
                    order.append(node)
                    continue
                stack.append((node, True))
                for child in node.args:
                    if child not in index:
                        stack.append((child, False))
        n = len(order)
        self.op = np.empty(n, dtype=np.int64)
        self.a = np.zeros(n, dtype=np.int64)
        self.b = np.zeros(n, dtype=np.int64)
        self.k = np.zeros(n, dtype=np.int64)
        self.c = np.zeros(n, dtype=np.float64)
        for i, node in enumerate(order):
            self.op[i] = _OPCODES[node.kind]
            if node.kind == CONST:
                self.c[i] = node.value
            elif node.kind in (VAR, POW):
                self.k[i] = node.value
            if node.args:
                self.a[i] = index[node.args[0]]
                if len(node.args) > 1:
                    self.b[i] = index[node.args[1]]
        self.outputs = np.array([index[r] for r in roots], dtype=np.int64)

    def __len__(self):
        return len(self.op)

    def run(self, points: np.ndarray) -> np.ndarray:
        values, bad, bad_point = K.eval_tape(self.op, self.a, self.b, self.k, self.c, points, DIVISION_EPS)
        if bad >= 0:
            raise DivisionNearZeroError(points[bad_point])
        return values[self.outputs]


_TAPES: OrderedDict = OrderedDict()
_TAPE_LIMIT = 2048


def compile_nodes(roots: Sequence[Node]) -> Tape:
    key = tuple(roots)
    with _LOCK:
        tape = _TAPES.get(key)
        if tape is not None:
            _TAPES.move_to_end(key)
            return tape
    tape = Tape(key)
    with _LOCK:
        _TAPES[key] = tape
        if len(_TAPES) > _TAPE_LIMIT:
            _TAPES.popitem(last=False)
    return tape


def _as_points(points, dim) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if dim > 0 or pts.size else pts.reshape(1, 0)
    if pts.shape[1] != dim:
        raise ValueError(f"points must have {dim} coordinates, got {pts.shape[1]}")
    return pts


def evaluate_nodes(roots: Sequence[Node], points, dim: int) -> np.ndarray:
    """Values of ``roots`` at ``points``; result has shape ``(len(roots), n_points)``."""
    pts = _as_points(points, dim)
    if not roots:
        return np.zeros((0, pts.shape[0]))
    return compile_nodes(roots).run(pts)


# ---------------------------------------------------------------------------
# public field type
# ---------------------------------------------------------------------------


class ScalarField:
    """A smooth function on a chart, stored as an interned expression DAG."""

    __slots__ = ("node", "chart")

    def __init__(self, node: Node, chart: ChartDomain):
        self.node = node
        self.chart = chart

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, chart):
        return cls(const(value), chart)

    @classmethod
    def coordinate(cls, i, chart):
        if not 0 <= i < chart.dim:
            raise IndexError("variable index out of range")
        return cls(var(i), chart)

    def _coerce(self, other) -> Node:
        if isinstance(other, ScalarField):
            return other.node
        if isinstance(other, Node):
            return other
        return const(other)

    def __add__(self, other):
        return ScalarField(add(self.node, self._coerce(other)), self.chart)

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(sub(self.node, self._coerce(other)), self.chart)

    def __rsub__(self, other):
        return ScalarField(sub(self._coerce(other), self.node), self.chart)

    def __mul__(self, other):
        return ScalarField(mul(self.node, self._coerce(other)), self.chart)

    def __rmul__(self, other):
        return ScalarField(mul(self._coerce(other), self.node), self.chart)

    def __truediv__(self, other):
        return ScalarField(div(self.node, self._coerce(other)), self.chart)

    def __rtruediv__(self, other):
        return ScalarField(div(self._coerce(other), self.node), self.chart)

    def __neg__(self):
        return ScalarField(neg(self.node), self.chart)

    def __pow__(self, n):
        if int(n) != n:
            raise ValueError("only integer powers are supported")
        return ScalarField(power(self.node, int(n)), self.chart)

    def __eq__(self, other):
        if isinstance(other, ScalarField):
            return self.node is other.node
        return NotImplemented

    def __hash__(self):
        return hash(self.node)

    # queries ------------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.node is ZERO

    @property
    def is_constant(self) -> bool:
        return self.node.kind == CONST

    def diff(self, var_index: int) -> "ScalarField":
        if not 0 <= var_index < self.chart.dim:
            raise IndexError("variable index out of range")
        return ScalarField(derivative(self.node, var_index), self.chart)

    def gradient(self):
        return [self.diff(i) for i in range(self.chart.dim)]

    def compose(self, fields: Sequence["ScalarField"]) -> "ScalarField":
        """Precompose with a map whose components are ``fields`` (on another chart)."""
        if len(fields) != self.chart.dim:
            raise ValueError("need one component per chart variable")
        charts = {f.chart for f in fields}
        new_chart = charts.pop() if charts else self.chart
        return ScalarField(substitute(self.node, [f.node for f in fields]), new_chart)

    def __call__(self, point):
        return self.evaluate(point)

    def evaluate(self, point) -> float:
        return float(evaluate_nodes([self.node], point, self.chart.dim)[0, 0])

    def evaluate_many(self, points) -> np.ndarray:
        return evaluate_nodes([self.node], points, self.chart.dim)[0]

    def __str__(self):
        return to_text(self.node, self.chart.var_names)

    def __repr__(self):
        return f"ScalarField({str(self)!r})"


def parse_expression(text: str, chart: ChartDomain) -> ScalarField:
    return ScalarField(parse_node(text, chart.var_names), chart)


def evaluate(f: ScalarField, p) -> float:
    return f.evaluate(p)


def differentiate(f: ScalarField, var_index: int) -> ScalarField:
    return f.diff(var_index)


def evaluate_fields(fields: Iterable[ScalarField], points, chart: ChartDomain) -> np.ndarray:
    """Evaluate many fields in one compiled pass; shape ``(n_fields, n_points)``."""
    return evaluate_nodes([f.node for f in fields], points, chart.dim)


def field_jets(fields: Sequence[ScalarField], points, chart: ChartDomain):
    """Values and first partial derivatives of ``fields``.

    Returns ``(values, grads)`` with shapes ``(F, N)`` and ``(F, N, m)``.
    """
    m = chart.dim
    roots = [f.node for f in fields]
    roots += [derivative(f.node, i) for f in fields for i in range(m)]
    vals = evaluate_nodes(roots, points, m)
    F = len(fields)
    values = vals[:F]
    grads = vals[F:].reshape(F, m, -1).transpose(0, 2, 1) if m else np.zeros((F, vals.shape[1], 0))
    return values, grads
