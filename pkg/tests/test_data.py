import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacart.data import (
    ColumnSchema,
    DataParseError,
    Dataset,
    DataValidationError,
    StructureError,
    domain_labels,
    parse_dataset,
    validate,
    write_dataset,
)
from dacart.errors import UserError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_small_file(tmp_path):
    d = parse_dataset(_write(tmp_path, "x1,y\n1.5,0\n2.5,1\n"), response="y")
    assert (d.n, d.p) == (2, 1)
    assert d.schema[0] == ColumnSchema("x1", "continuous")
    assert d.response.tolist() == [0.0, 1.0]
    assert d.response_name == "y"


def test_binary_kind_inferred(tmp_path):
    d = parse_dataset(_write(tmp_path, "a,b\n0,0.5\n1,1\n0,2\n1,3\n"))
    assert [c.kind for c in d.schema] == ["binary", "continuous"]


def test_schema_hint_overrides_inference(tmp_path):
    d = parse_dataset(_write(tmp_path, "a\n0\n1\n"), schema_hint=[ColumnSchema("a", "continuous")])
    assert d.schema[0].kind == "continuous"


def test_bad_field_names_line_and_column(tmp_path):
    with pytest.raises(DataParseError) as exc:
        parse_dataset(_write(tmp_path, "a,b\n1,2\nabc,3\n"))
    assert exc.value.line == 3 and exc.value.column == 1
    assert "line 3" in str(exc.value)


def test_missing_value_is_validation_error(tmp_path):
    with pytest.raises(DataValidationError):
        parse_dataset(_write(tmp_path, "a,b\n1,\n"))


def test_ragged_rows_are_structural_error(tmp_path):
    with pytest.raises(StructureError):
        parse_dataset(_write(tmp_path, "a,b\n1,2\n3\n"))


def test_missing_response_column(tmp_path):
    with pytest.raises(UserError):
        parse_dataset(_write(tmp_path, "a,b\n1,2\n"), response="y")


def test_header_only_file(tmp_path):
    p = _write(tmp_path, "a,b\n")
    with pytest.raises(DataValidationError):
        parse_dataset(p)
    d = parse_dataset(p, allow_empty=True)
    assert (d.n, d.p) == (0, 2)


def test_validate_reports_each_problem():
    good = Dataset.from_arrays({"a": [1.0, 2.0]}, response=[0.0, 1.0])
    assert validate(good) == []
    bad_w = Dataset.from_arrays({"a": [1.0, 2.0]}, row_weights=[1.0, -1.0])
    assert "negative weight at row 2" in validate(bad_w)
    nan_col = Dataset.from_arrays({"a": [1.0, 2.0], "b": [np.nan, 1.0]})
    (msg,) = validate(nan_col)
    assert "column 2" in msg


def test_binary_column_values_checked():
    d = Dataset([ColumnSchema("a", "binary")], np.array([[0.0, 0.5]]))
    assert any("binary" in m for m in validate(d))


def test_datasets_are_read_only():
    d = Dataset.from_arrays({"a": [1.0, 2.0]}, response=[3.0, 4.0])
    with pytest.raises(ValueError):
        d.columns[0, 0] = 9.0
    with pytest.raises(ValueError):
        d.response[0] = 9.0


def test_feature_matrix_schema_mismatch():
    d = Dataset.from_arrays({"a": [1.0], "b": [2.0]})
    assert d.feature_matrix(["b", "a"]).tolist() == [[2.0], [1.0]]
    with pytest.raises(UserError, match="schema mismatch"):
        d.feature_matrix(["c"])


def test_domain_labels():
    assert domain_labels(2, 1).tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(UserError):
        domain_labels(0, 3)


finite = st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 8).flatmap(
        lambda n: st.tuples(
            st.lists(st.lists(finite, min_size=n, max_size=n), min_size=1, max_size=4),
            st.lists(finite, min_size=n, max_size=n),
            st.lists(st.floats(0.01, 1e6), min_size=n, max_size=n),
        )
    )
)
def test_write_parse_round_trip_is_bit_exact(tmp_path_factory, data):
    cols, y, w = data
    d = Dataset.from_arrays({f"c{j}": c for j, c in enumerate(cols)}, response=y, row_weights=w,
                            weight_name="wt")
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(d, path)
    back = parse_dataset(path, schema_hint=d.schema, response="y", weights="wt")
    assert back.identical(d)
    assert validate(back) == []
