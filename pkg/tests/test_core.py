import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from llmpsych.core import (FIVE_POINT, MISSING, Key, LikertScale, ParseError, QuestionnaireError,
                           ResponseMatrix, ScaleError, StandardizationError, StructureWarning,
                           drop_zero_variance_items, facet_sum_score, flip_score, impute_neutral,
                           load_questionnaire, load_response_csv, questionnaire_from_dict, score_matrix,
                           standardize, write_response_csv)


def _matrix(q, rows, ids=None):
    ids = tuple(ids or q.item_ids)
    return ResponseMatrix(tuple(f"r{k}" for k in range(len(rows))), ids, np.asarray(rows))


# -- questionnaires -------------------------------------------------------------

def test_bfi2_structure(bfi2):
    assert len(bfi2.items) == 60
    assert bfi2.facet_ids == ["E", "A", "C", "N", "O"]
    assert sum(it.is_false_key for it in bfi2.items) == 30
    for f in bfi2.facet_ids:
        subs = bfi2.sub_facet_items(f)
        assert len(subs) == 3
        assert all(len(v) == 4 for v in subs.values())
        assert len(bfi2.facet_items(f)) == 12


def test_ipip_structure(ipip):
    assert len(ipip.items) == 50
    assert all(len(ipip.facet_items(f)) == 10 for f in ipip.facet_ids)
    assert not ipip.has_sub_facets()
    assert ipip.scale.neutral_code == 3 and ipip.scale.max_code == 5


def test_questionnaire_round_trip(bfi2):
    again = questionnaire_from_dict(bfi2.to_dict())
    assert again == bfi2


def test_duplicate_item_ids_rejected(bfi2):
    d = bfi2.to_dict()
    d["items"].append(dict(d["items"][0]))
    with pytest.raises(QuestionnaireError, match="duplicate"):
        questionnaire_from_dict(d)


def test_unknown_facet_rejected(ipip):
    d = ipip.to_dict()
    d["items"][0]["facet"] = "Z"
    with pytest.raises(QuestionnaireError, match="unknown facet"):
        questionnaire_from_dict(d)


def test_scale_codes_consecutive():
    with pytest.raises(QuestionnaireError):
        LikertScale(((1, "a"), (3, "b")))


def test_load_questionnaire_from_path(tmp_path, ipip):
    import json
    p = tmp_path / "q.json"
    p.write_text(json.dumps(ipip.to_dict()))
    assert load_questionnaire(p) == ipip


def test_unknown_item_lookup(bfi2):
    with pytest.raises(QuestionnaireError):
        bfi2.item("E99")


# -- scoring --------------------------------------------------------------------

@pytest.mark.parametrize("raw,key,want", [(5, Key.FALSE, 1), (3, Key.FALSE, 3), (2, Key.TRUE, 2),
                                          (1, "false", 5), (4, "true", 4)])
def test_flip_score_examples(raw, key, want):
    assert flip_score(raw, key, FIVE_POINT) == want


@pytest.mark.parametrize("raw", [0, 6, -1])
def test_flip_score_out_of_range(raw):
    with pytest.raises(ScaleError):
        flip_score(raw, Key.TRUE)


@given(st.integers(1, 5), st.sampled_from(list(Key)))
def test_flip_is_involution(x, key):
    assert flip_score(flip_score(x, key), key) == x


@given(st.integers(2, 9), st.data())
def test_flip_generic_scale(k, data):
    scale = LikertScale(tuple((c, str(c)) for c in range(1, k + 1)), neutral_code=1)
    x = data.draw(st.integers(1, k))
    assert flip_score(x, Key.FALSE, scale) == k + 1 - x


def test_score_matrix_missing_row_is_neutral(bfi2):
    sm = score_matrix(_matrix(bfi2, [[MISSING] * 60]), bfi2)
    assert np.all(sm.values == 3)


def test_score_matrix_agree_row(bfi2):
    sm = score_matrix(_matrix(bfi2, [[5] * 60]), bfi2)
    fk = np.array([it.is_false_key for it in bfi2.items])
    assert np.all(sm.values[0, ~fk] == 5)
    assert np.all(sm.values[0, fk] == 1)


def test_consistent_respondent_is_constant(bfi2):
    row = [1 if it.is_false_key else 5 for it in bfi2.items]
    sm = score_matrix(_matrix(bfi2, [row]), bfi2)
    assert np.all(sm.values == 5)


def test_scored_matrix_is_read_only(bfi2):
    sm = score_matrix(_matrix(bfi2, [[4] * 60]), bfi2)
    with pytest.raises(ValueError):
        sm.values[0, 0] = 1


def test_impute_neutral_keeps_raw_codes(bfi2):
    row = [5] * 59 + [MISSING]
    raw = impute_neutral(_matrix(bfi2, [row]), bfi2)
    assert raw.values[0, :59].tolist() == [5.0] * 59
    assert raw.values[0, 59] == 3


@pytest.mark.parametrize("value,total", [(3, 36), (5, 60)])
def test_facet_sum_score_constant(bfi2, value, total):
    row = [value if not it.is_false_key else 6 - value for it in bfi2.items]
    sm = score_matrix(_matrix(bfi2, [row]), bfi2)
    assert facet_sum_score(sm, bfi2, "E")[0] == total


@settings(max_examples=40, deadline=None)
@given(arrays(np.int64, (7, 60), elements=st.sampled_from([MISSING, 1, 2, 3, 4, 5])))
def test_sum_score_matches_loop_oracle(block):
    q = load_questionnaire("bfi2")
    sm = score_matrix(_matrix(q, block), q)
    for f in q.facet_ids:
        got = facet_sum_score(sm, q, f)
        for r in range(block.shape[0]):
            want = 0
            for c, it in enumerate(q.items):
                if it.facet != f:
                    continue
                x = 3 if block[r, c] == MISSING else int(block[r, c])
                want += 6 - x if it.is_false_key else x
            assert got[r] == want


# -- standardization ------------------------------------------------------------

def test_standardize_simple_column():
    z = standardize(np.array([[1.0], [2], [3], [4], [5]]))
    assert abs(z.mean()) < 1e-12
    assert abs(z.std(ddof=1) - 1) < 1e-12


def test_standardize_constant_column_names_item():
    X = np.column_stack([np.arange(5.0), np.ones(5)])
    with pytest.raises(StandardizationError) as err:
        standardize(X, ["a", "b"])
    assert err.value.items == ["b"]


@settings(max_examples=60)
@given(arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardize_moments(X):
    assume(np.all(X.std(axis=0, ddof=1) > 1e-3 * (1 + np.abs(X).max(axis=0))))
    Z = standardize(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(Z.std(axis=0, ddof=1) - 1) < 1e-10)


# -- zero-variance drops ----------------------------------------------------------

def test_drop_one_constant_column(bfi2, rng):
    X = rng.integers(1, 6, size=(40, 60))
    X[:, bfi2.item_ids.index("A7")] = 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out, dropped = drop_zero_variance_items(_matrix(bfi2, X), bfi2)
    assert dropped == ["A7"]
    assert "A7" not in out.item_ids and len(out.item_ids) == 59


def test_drop_noop(bfi2, rng):
    rm = _matrix(bfi2, rng.integers(1, 6, size=(40, 60)))
    out, dropped = drop_zero_variance_items(rm, bfi2)
    assert dropped == [] and out == rm


def test_drop_all_constant_warns(bfi2):
    with pytest.warns(StructureWarning):
        out, dropped = drop_zero_variance_items(_matrix(bfi2, [[5] * 60] * 4), bfi2)
    assert len(dropped) == 60 and out.item_ids == ()


def test_drop_ignores_missing(bfi2, rng):
    X = rng.integers(1, 6, size=(10, 60))
    X[:, 0] = 4
    X[3, 0] = MISSING
    _, dropped = drop_zero_variance_items(_matrix(bfi2, X), bfi2)
    assert dropped == [bfi2.item_ids[0]]


@settings(max_examples=30, deadline=None)
@given(arrays(np.int64, (6, 60), elements=st.integers(1, 5)))
def test_drop_is_idempotent(block):
    q = load_questionnaire("bfi2")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StructureWarning)
        once, _ = drop_zero_variance_items(_matrix(q, block), q)
        twice, dropped = drop_zero_variance_items(once, q)
    assert twice == once and dropped == []


# -- response files --------------------------------------------------------------

def test_load_three_rows(tmp_path, ipip):
    p = tmp_path / "r.csv"
    p.write_text("E1,E2,N1\n1,2,3\n4,5,1\n3,3,3\n")
    rm = load_response_csv(p, ipip)
    assert rm.shape == (3, 3)
    assert rm.item_ids == ("E1", "E2", "N1")


def test_zero_and_blank_cells_are_missing(tmp_path, ipip):
    p = tmp_path / "r.csv"
    p.write_text("E1,E2\n0,\n5,7\n")
    rm = load_response_csv(p, ipip)
    assert rm.scores.tolist() == [[MISSING, MISSING], [5, MISSING]]


def test_tab_delimited_and_reordered(tmp_path, ipip):
    p = tmp_path / "r.tsv"
    p.write_text("N1\tE1\n2\t4\n")
    rm = load_response_csv(p, ipip)
    assert rm.item_ids == ("E1", "N1") and rm.scores.tolist() == [[4, 2]]


def test_unknown_header_is_parse_error(tmp_path, ipip):
    p = tmp_path / "r.csv"
    p.write_text("# comment\nE1,ZZ9\n1,2\n")
    with pytest.raises(ParseError) as err:
        load_response_csv(p, ipip)
    assert err.value.line == 2


def test_bad_row_length_reports_line(tmp_path, ipip):
    p = tmp_path / "r.csv"
    p.write_text("E1,E2\n1,2\n1\n")
    with pytest.raises(ParseError) as err:
        load_response_csv(p, ipip)
    assert err.value.line == 3


def test_non_numeric_cell(tmp_path, ipip):
    p = tmp_path / "r.csv"
    p.write_text("E1,E2\n1,x\n")
    with pytest.raises(ParseError, match="non-numeric"):
        load_response_csv(p, ipip)


def test_row_filter(tmp_path, ipip):
    p = tmp_path / "r.csv"
    p.write_text("E1,E2\n1,2\n5,5\n")
    rm = load_response_csv(p, ipip, row_filter=lambda row: len(set(row)) > 1)
    assert rm.shape == (1, 2)


def test_write_then_load_round_trip(tmp_path, bfi2, rng):
    X = rng.integers(1, 6, size=(5, 60))
    X[0, 3] = MISSING
    rm = _matrix(bfi2, X)
    p = tmp_path / "m.csv"
    write_response_csv(p, rm, {"seed": 3, "label": "x"})
    back = load_response_csv(p, bfi2)
    assert back == rm
    assert back.meta["seed"] == "3" and back.meta["label"] == "x"


def test_check_rejects_out_of_range(bfi2):
    rm = _matrix(bfi2, [[9] + [3] * 59])
    with pytest.raises(ScaleError):
        rm.check(bfi2)


def test_check_rejects_unordered(bfi2):
    rm = ResponseMatrix(("r",), ("A2", "E1"), np.array([[1, 2]]))
    with pytest.raises(QuestionnaireError):
        rm.check(bfi2)


def test_matrix_shape_validated():
    with pytest.raises(ValueError):
        ResponseMatrix(("a", "b"), ("E1",), np.zeros((1, 1)))
