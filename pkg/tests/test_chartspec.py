from __future__ import annotations

import json
import random
from collections import Counter

import pytest

from vizguard.chartspec import (
    CHANNELS,
    ChartSpec,
    DataTable,
    ParseFailure,
    ParseKind,
    canonicalize,
    extract_features,
    infer_column_type,
    parse_spec,
    serialize,
    validate_spec,
)

MINIMAL = '{"mark": "bar", "encoding": {"x": "theme:N", "y": "count()"}}'


def test_parse_minimal_single_bar():
    spec = parse_spec(MINIMAL)
    assert isinstance(spec, ChartSpec)
    assert not spec.is_layered
    assert extract_features(spec).marks[0].mark_type == "bar"


def test_parse_case_study_layered_spec(fixtures_dir):
    text = (fixtures_dir / "specs" / "b_001_gt.json").read_text()
    spec = parse_spec(text)
    assert isinstance(spec, ChartSpec)
    assert len(spec.layers) == 4
    dashes = [u.get("mark", {}).get("strokeDash") for u in spec.layers]
    assert [4, 4] in dashes


def test_parse_truncated_document_reports_offset():
    text = '{"mark": "bar", "encoding": {"x": '
    failure = parse_spec(text)
    assert isinstance(failure, ParseFailure)
    assert failure.kind == ParseKind.SYNTAX
    assert failure.offset > 0


def test_parse_empty_document():
    assert parse_spec("").kind == ParseKind.EMPTY
    assert parse_spec("  \n ").kind == ParseKind.EMPTY


def test_parse_unknown_mark():
    failure = parse_spec('{"mark": "hexbin", "encoding": {"x": "a:Q"}}')
    assert isinstance(failure, ParseFailure)
    assert failure.kind == ParseKind.UNKNOWN_MARK


def test_parse_requires_exactly_one_of_mark_or_layers():
    assert isinstance(parse_spec('{"encoding": {"x": "a:Q"}}'), ParseFailure)
    both = '{"mark": "bar", "layer": [{"mark": "rule"}]}'
    assert isinstance(parse_spec(both), ParseFailure)
    assert isinstance(parse_spec('{"layer": []}'), ParseFailure)


def test_parse_rejects_unknown_channel():
    failure = parse_spec('{"mark": "bar", "encoding": {"z": "a:Q"}}')
    assert isinstance(failure, ParseFailure)
    assert failure.kind == ParseKind.SYNTAX
    assert "z" in failure.reason


def test_parse_preserves_unknown_keys():
    spec = parse_spec('{"mark": "bar", "encoding": {"x": "a:Q"}, "futureKnob": 1}')
    assert isinstance(spec, ChartSpec)
    assert canonicalize(spec).root["futureKnob"] == 1


def _shuffled(tree, rng):
    if isinstance(tree, dict):
        keys = list(tree)
        rng.shuffle(keys)
        return {k: _shuffled(tree[k], rng) for k in keys}
    if isinstance(tree, list):
        return [_shuffled(v, rng) for v in tree]
    return tree


def test_canonicalize_is_order_independent_and_idempotent(corpus_specs):
    rng = random.Random(7)
    for path in corpus_specs:
        spec = parse_spec(path.read_text())
        assert isinstance(spec, ChartSpec), path
        canon = canonicalize(spec)
        assert canonicalize(canon).source_text == canon.source_text
        shuffled_text = json.dumps(_shuffled(spec.root, rng))
        shuffled = parse_spec(shuffled_text)
        assert canonicalize(shuffled).source_text == canon.source_text


def test_formatting_variants_share_canonical_bytes():
    loose = '{ "encoding" : {"y": "sales_amount:Q",\n   "x": "month:T"},\n"mark":"line" }'
    tight = '{"mark":"line","encoding":{"x":"month:T","y":"sales_amount:Q"}}'
    a, b = parse_spec(loose), parse_spec(tight)
    assert canonicalize(a).source_text == canonicalize(b).source_text


def test_round_trip_over_fixture_corpus(corpus_specs):
    for path in corpus_specs:
        spec = parse_spec(path.read_text())
        canon = canonicalize(spec)
        reparsed = parse_spec(serialize(canon))
        assert isinstance(reparsed, ChartSpec), path
        assert canonicalize(reparsed).source_text == canon.source_text
        # committed fixtures are stored in canonical form already
        assert canon.source_text == path.read_text(), path


def test_extract_features_case_study_mark_multiset(fixtures_dir):
    spec = parse_spec((fixtures_dir / "specs" / "b_001_gt.json").read_text())
    bundle = extract_features(spec)
    assert Counter(m.mark_type for m in bundle.marks) == Counter({"bar": 2, "rule": 1, "text": 1})
    assert len(bundle.marks) == len(spec.layers)


def test_extract_features_trend_line_encodings():
    spec = parse_spec('{"mark": "line", "encoding": {"x": "month:T", "y": "sales_amount:Q"}}')
    enc = extract_features(spec).encoding_map()
    assert enc["x"].field == "month" and enc["x"].dtype == "temporal"
    assert enc["y"].field == "sales_amount" and enc["y"].dtype == "quantitative"


def test_extract_features_no_transforms_is_empty():
    spec = parse_spec(MINIMAL)
    assert extract_features(spec).transforms == ()


def test_features_are_pure_over_canonical_form(corpus_specs):
    rng = random.Random(21)
    for path in corpus_specs[:8]:
        spec = parse_spec(path.read_text())
        shuffled = parse_spec(json.dumps(_shuffled(spec.root, rng)))
        assert extract_features(spec) == extract_features(shuffled)


def test_validate_flags_typo_field():
    spec = parse_spec('{"mark": "bar", "encoding": {"x": "Theem:N", "y": "TotalSales:Q"}}')
    data = DataTable.from_rows(["Theme", "TotalSales"], [("Arts", 990)])
    report = validate_spec(spec, data)
    assert not report.valid
    assert any(d.code == "MissingField" and "Theem" in d.message for d in report.diagnostics)


def test_validate_fixture_corpus_against_embedded_data(corpus_specs):
    for path in corpus_specs:
        spec = parse_spec(path.read_text())
        values = (spec.root.get("data") or {}).get("values")
        assert values, f"{path} carries no data values"
        report = validate_spec(spec, DataTable.from_values(values))
        assert report.valid, (path, report.diagnostics)


def test_validate_empty_encoding_map():
    spec = parse_spec('{"mark": "bar"}')
    report = validate_spec(spec, DataTable.from_rows(["a"], [(1,)]))
    assert not report.valid
    assert any(d.code == "NoEncodings" for d in report.diagnostics)


def test_validate_type_mismatch():
    spec = parse_spec('{"mark": "bar", "encoding": {"x": "name:Q"}}')
    data = DataTable.from_rows(["name"], [("alpha",), ("beta",)])
    report = validate_spec(spec, data)
    assert any(d.code == "TypeMismatch" for d in report.diagnostics)


def test_validate_filter_reference():
    spec = parse_spec(
        '{"mark": "bar", "encoding": {"x": "a:N", "y": "b:Q"},'
        ' "transform": [{"filter": "datum.missing > 3"}]}'
    )
    data = DataTable.from_rows(["a", "b"], [("x", 1)])
    report = validate_spec(spec, data)
    assert any("missing" in d.message for d in report.errors())


def _mutate(tree, rng):
    tree = json.loads(json.dumps(tree))
    for _ in range(rng.randrange(1, 4)):
        choice = rng.random()
        if isinstance(tree, dict) and tree and choice < 0.4:
            key = rng.choice(list(tree))
            tree[key] = rng.choice([None, 1.5, [], {}, "junk", {"q": [None]}, -7])
        elif isinstance(tree, dict) and choice < 0.7:
            tree[f"k{rng.randrange(100)}"] = rng.choice([True, "x", [1, 2], {"deep": None}])
        elif isinstance(tree, dict) and tree:
            tree.pop(rng.choice(list(tree)))
    return tree


def test_validator_is_total_over_mutated_trees(corpus_specs):
    rng = random.Random(99)
    data = DataTable.from_rows(["a", "b"], [("x", 1)])
    bases = [parse_spec(p.read_text()).root for p in corpus_specs[:6]]
    checked = 0
    for _ in range(10_000):
        mutated = _mutate(rng.choice(bases), rng)
        parsed = parse_spec(json.dumps(mutated))
        if isinstance(parsed, ParseFailure):
            continue
        report = validate_spec(parsed, data)
        assert report.valid in (True, False)
        checked += 1
    assert checked > 1000


def test_data_table_arity_invariant():
    with pytest.raises(ValueError):
        DataTable(columns=(), rows=((1,),))


@pytest.mark.parametrize(
    "values,expected",
    [
        ([1, 2, 3], "quantitative"),
        ([1.5, None, 2], "quantitative"),
        (["2024-01-01", "2024-02-01"], "temporal"),
        (["2024-01-01T10:30", "2024-02-01 08:00"], "temporal"),
        (["jan", "feb"], "nominal"),
        ([True, False], "nominal"),
        ([1, "x"], "nominal"),
        ([], "nominal"),
    ],
)
def test_column_type_inference(values, expected):
    assert infer_column_type(values) == expected


def test_channel_set_is_closed():
    assert "theta" in CHANNELS and "z" not in CHANNELS
