"""JSON algebroid documents and run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import scalar_field as sf
from .algebroid import Endomorphism, LieAlgebroid, Section
from .forms import AlgebroidForm
from .transitive import BundleMetric
from .validation import DEFAULT_COUNT, DEFAULT_SEED, SamplePlan

SCHEMA_VERSION = 1

_EXPR = {"type": ["string", "number"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _EXPR}}

DOCUMENT_SCHEMA = {
    "type": "object",
    "required": ["schema", "chart", "rank", "frame", "anchor"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "chart": {
            "type": "object",
            "required": ["dim", "vars", "box"],
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 0},
                "vars": {"type": "array", "items": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"}},
                "box": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "rank": {"type": "integer", "minimum": 1},
        "frame": {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1},
        "anchor": _MATRIX,
        "structure": {
            "type": "object",
            "propertyNames": {"pattern": r"^\[\s*[^,\[\]\s]+\s*,\s*[^,\[\]\s]+\s*\]$"},
            "additionalProperties": {"type": "object", "additionalProperties": _EXPR},
        },
        "forms": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["degree", "coeffs"],
                "additionalProperties": False,
                "properties": {
                    "degree": {"type": "integer", "minimum": 0},
                    "coeffs": {"type": "object", "additionalProperties": _EXPR},
                },
            },
        },
        "metrics": {"type": "object", "additionalProperties": _MATRIX},
        "endos": {"type": "object", "additionalProperties": _MATRIX},
        "sections": {"type": "object", "additionalProperties": {"type": "array", "items": _EXPR}},
        "functions": {"type": "object", "additionalProperties": _EXPR},
    },
}


class DocumentError(ValueError):
    """Schema or consistency violation; ``path`` locates it in the document."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"{where}: {message}")


class DocumentParseError(DocumentError):
    def __init__(self, path, err: sf.ExpressionSyntaxError):
        self.offset = err.offset
        self.cause = err
        super().__init__(f"{err} (offset {err.offset})", path)


@dataclass
class AlgebroidDocument:
    algebroid: LieAlgebroid
    forms: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    endos: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    functions: dict = field(default_factory=dict)
    name: str = ""
    source: dict = field(default_factory=dict, repr=False)

    @property
    def chart(self):
        return self.algebroid.chart

    def _get(self, table, kind, key):
        try:
            return table[key]
        except KeyError:
            raise KeyError(f"no {kind} named {key!r}; available: {sorted(table)}") from None

    def form(self, key) -> AlgebroidForm:
        return self._get(self.forms, "form", key)

    def metric(self, key) -> BundleMetric:
        return self._get(self.metrics, "metric", key)

    def endo(self, key) -> Endomorphism:
        return self._get(self.endos, "endomorphism", key)

    def section(self, key) -> Section:
        return self._get(self.sections, "section", key)


@dataclass(frozen=True)
class RunConfig:
    count: int = DEFAULT_COUNT
    seed: int = DEFAULT_SEED
    tol: float = 1e-8
    rank_tol: float = 1e-9
    output: str = "text"

    def __post_init__(self):
        if self.tol <= 0 or self.rank_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.output not in ("text", "json"):
            raise ValueError("output must be 'text' or 'json'")

    @property
    def plan(self) -> SamplePlan:
        return SamplePlan(self.count, self.seed)


def _expr(text, chart, path):
    if isinstance(text, (int, float)):
        return sf.ScalarField.constant(float(text), chart)
    try:
        return sf.parse_expression(text, chart)
    except sf.ExpressionSyntaxError as err:
        raise DocumentParseError(path, err) from err


def _matrix_fields(M, rows, cols, chart, path):
    if len(M) != rows:
        raise DocumentError(f"expected {rows} rows, got {len(M)}", path)
    out = []
    for i, row in enumerate(M):
        if len(row) != cols:
            raise DocumentError(f"expected {cols} entries, got {len(row)}", path + (i,))
        out.append([_expr(e, chart, path + (i, j)) for j, e in enumerate(row)])
    return out


def parse_document(data: dict) -> AlgebroidDocument:
    try:
        jsonschema.validate(data, DOCUMENT_SCHEMA)
    except jsonschema.ValidationError as err:
        raise DocumentError(err.message, err.absolute_path) from None
    c = data["chart"]
    try:
        chart = sf.ChartDomain(c["dim"], tuple(c["vars"]), tuple(tuple(b) for b in c["box"]))
    except ValueError as err:
        raise DocumentError(str(err), ("chart",)) from None
    n = data["rank"]
    frame = list(data["frame"])
    if len(frame) != n:
        raise DocumentError(f"rank is {n} but {len(frame)} frame names are given", ("frame",))
    if len(set(frame)) != n:
        raise DocumentError("frame names must be distinct", ("frame",))
    index = {name: a for a, name in enumerate(frame)}

    def frame_index(name, path):
        try:
            return index[name.strip()]
        except KeyError:
            raise DocumentError(f"unknown frame element {name!r}", path) from None

    anchor = _matrix_fields(data["anchor"], n, chart.dim, chart, ("anchor",))
    structure = {}
    for key, vec in data.get("structure", {}).items():
        path = ("structure", key)
        a_name, b_name = key.strip()[1:-1].split(",")
        a, b = frame_index(a_name, path), frame_index(b_name, path)
        if a == b:
            raise DocumentError("bracket of a frame element with itself", path)
        coeffs = [sf.ScalarField.constant(0.0, chart)] * n
        for name, e in vec.items():
            coeffs[frame_index(name, path + (name,))] = _expr(e, chart, path + (name,))
        if (a, b) in structure or (b, a) in structure:
            raise DocumentError("bracket specified twice", path)
        structure[(a, b)] = coeffs
    A = LieAlgebroid(chart, frame, anchor, structure, name=data.get("name", ""))

    forms = {}
    for fname, entry in data.get("forms", {}).items():
        path = ("forms", fname)
        k = entry["degree"]
        if k > n:
            raise DocumentError("degree exceeds the rank", path + ("degree",))
        coeffs = {}
        for key, e in entry["coeffs"].items():
            names = [s for s in key.split(",") if s.strip()] if key.strip() else []
            if len(names) != k:
                raise DocumentError(f"multi-index {key!r} needs {k} entries", path + ("coeffs", key))
            idx = tuple(frame_index(s, path + ("coeffs", key)) for s in names)
            coeffs[idx] = _expr(e, chart, path + ("coeffs", key))
        forms[fname] = AlgebroidForm(n, k, coeffs, chart)

    metrics = {}
    for name, M in data.get("metrics", {}).items():
        path = ("metrics", name)
        try:
            metrics[name] = BundleMetric(_matrix_fields(M, n, n, chart, path), chart)
        except ValueError as err:
            if isinstance(err, DocumentError):
                raise
            raise DocumentError(str(err), path) from None
    endos = {
        name: Endomorphism(_matrix_fields(M, n, n, chart, ("endos", name)), chart)
        for name, M in data.get("endos", {}).items()
    }
    sections = {}
    for name, vec in data.get("sections", {}).items():
        path = ("sections", name)
        if len(vec) != n:
            raise DocumentError(f"sections need {n} coefficients", path)
        sections[name] = Section([_expr(e, chart, path + (i,)) for i, e in enumerate(vec)], chart)
    functions = {name: _expr(e, chart, ("functions", name)) for name, e in data.get("functions", {}).items()}
    return AlgebroidDocument(A, forms, metrics, endos, sections, functions, data.get("name", ""), data)


def load_document(path) -> AlgebroidDocument:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DocumentError(f"invalid JSON: {err.msg} at line {err.lineno} column {err.colno}") from None
    return parse_document(data)


def _text(f: sf.ScalarField):
    if f.is_constant:
        v = f.node.value
        return int(v) if float(v).is_integer() else float(v)
    return str(f)


def document_to_dict(doc: AlgebroidDocument) -> dict:
    """Inverse of :func:`parse_document` (expressions are printed)."""
    A = doc.algebroid
    chart = A.chart
    names = A.frame_names
    out = {"schema": SCHEMA_VERSION}
    if doc.name or A.name:
        out["name"] = doc.name or A.name
    out["chart"] = {"dim": chart.dim, "vars": list(chart.var_names), "box": [list(b) for b in chart.box]}
    out["rank"] = A.rank
    out["frame"] = list(names)
    out["anchor"] = [[_text(e) for e in row] for row in A.anchor]
    structure = {}
    for (a, b), coeffs in A.structure_items():
        structure[f"[{names[a]},{names[b]}]"] = {names[c]: _text(f) for c, f in enumerate(coeffs) if not f.is_zero}
    if structure:
        out["structure"] = structure
    if doc.forms:
        out["forms"] = {
            key: {"degree": w.degree, "coeffs": {",".join(names[a] for a in idx): _text(f) for idx, f in w.coeffs.items()}}
            for key, w in doc.forms.items()
        }
    for key, table in (("metrics", doc.metrics), ("endos", doc.endos)):
        if table:
            out[key] = {k: [[_text(e) for e in row] for row in v.matrix] for k, v in table.items()}
    if doc.sections:
        out["sections"] = {k: [_text(e) for e in S.coeffs] for k, S in doc.sections.items()}
    if doc.functions:
        out["functions"] = {k: _text(f) for k, f in doc.functions.items()}
    return out
