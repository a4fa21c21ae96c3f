import copy
import json

import numpy as np
import pytest

from algebroidkit import fixtures as F
from algebroidkit.document import (
    DocumentError,
    DocumentParseError,
    RunConfig,
    document_to_dict,
    load_document,
    parse_document,
)
from algebroidkit.validation import SamplePlan


def minimal():
    return {
        "schema": 1,
        "chart": {"dim": 2, "vars": ["x", "y"], "box": [[-1, 1], [-1, 1]]},
        "rank": 3,
        "frame": ["e1", "e2", "e3"],
        "anchor": [[1, 0], [0, 1], [0, 0]],
        "structure": {"[e1,e2]": {"e3": 1}},
    }


def test_minimal_document_parses():
    doc = parse_document(minimal())
    A = doc.algebroid
    assert (A.rank, A.dim) == (3, 2)
    C = A.structure_at(np.zeros((1, 2)))[0]
    assert C[2, 0, 1] == 1.0 and C[2, 1, 0] == -1.0


def test_rank_zero_is_a_schema_error():
    data = minimal()
    data["rank"] = 0
    with pytest.raises(DocumentError) as err:
        parse_document(data)
    assert err.value.path == ("rank",)


def test_parse_error_reports_offset():
    data = minimal()
    data["functions"] = {"f": "x +"}
    with pytest.raises(DocumentParseError) as err:
        parse_document(data)
    assert err.value.offset == 3
    assert err.value.path == ("functions", "f")
    assert "offset 3" in str(err.value)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.update(frame=["e1", "e2"]), "frame"),
        (lambda d: d.update(frame=["e1", "e1", "e3"]), "frame"),
        (lambda d: d["anchor"].pop(), "anchor"),
        (lambda d: d["anchor"][0].append(0), "anchor"),
        (lambda d: d["structure"].update({"[e1,e4]": {"e3": 1}}), "structure"),
        (lambda d: d["structure"].update({"[e2,e1]": {"e3": 1}}), "structure"),
        (lambda d: d["structure"].update({"[e2,e2]": {"e3": 1}}), "structure"),
        (lambda d: d.update(forms={"w": {"degree": 4, "coeffs": {}}}), "forms"),
        (lambda d: d.update(forms={"w": {"degree": 2, "coeffs": {"e1": 1}}}), "forms"),
        (lambda d: d.update(sections={"s": [1, 0]}), "sections"),
        (lambda d: d.update(metrics={"g": [[1, 2, 0], [0, 1, 0], [0, 0, 1]]}), "metrics"),
        (lambda d: d.update(extra=1), "<root>"),
        (lambda d: d.update(schema=2), "schema"),
    ],
)
def test_inconsistent_documents(mutate, where):
    data = minimal()
    mutate(data)
    with pytest.raises(DocumentError) as err:
        parse_document(data)
    assert str(err.value).startswith(where)


def test_structure_key_whitespace():
    data = minimal()
    data["structure"] = {"[ e1 , e2 ]": {"e3": "1"}}
    A = parse_document(data).algebroid
    assert A.structure_at(np.zeros((1, 2)))[0][2, 0, 1] == 1.0


@pytest.mark.parametrize("name", F.SHIPPED)
def test_shipped_fixtures_round_trip(name):
    path = F.fixture_path(name)
    doc = load_document(path)
    data = json.loads(path.read_text())
    assert document_to_dict(doc) == data
    again = parse_document(copy.deepcopy(data))
    pts = again.algebroid.sample(SamplePlan(4))
    np.testing.assert_array_equal(again.algebroid.anchor_at(pts), doc.algebroid.anchor_at(pts))


@pytest.mark.parametrize("name", F.SHIPPED)
def test_shipped_fixtures_match_builders(name):
    built = document_to_dict(F.get(name))
    assert built == json.loads(F.fixture_path(name).read_text())


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(DocumentError, match="invalid JSON"):
        load_document(p)


def test_run_config_validation():
    assert RunConfig().plan.count == 64
    with pytest.raises(ValueError):
        RunConfig(tol=0.0)
    with pytest.raises(ValueError):
        RunConfig(output="yaml")
