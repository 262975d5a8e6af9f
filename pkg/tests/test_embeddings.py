import gzip
import io
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ate.embeddings import (EmbeddingError, EmbeddingTable, Vocabulary, build_matrix, coverage,
                            load_vectors, lookup, write_coverage_csv)


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_three_words(tmp_path):
    p = _write(tmp_path / "v.txt", ["a 1 2 3 4", "b 0 0 0 1", "c -1 .5 2 3"])
    t = load_vectors(p)
    assert (len(t), t.dim) == (3, 4)
    np.testing.assert_array_equal(lookup(t, "c"), [-1, 0.5, 2, 3])
    assert t.name == "v"


def test_header_and_no_header_agree(tmp_path):
    body = ["the 0.1 0.2 0.3", "cat 1 2 3"]
    plain = load_vectors(_write(tmp_path / "a.txt", body))
    headed = load_vectors(_write(tmp_path / "b.vec", ["2 3"] + body))
    assert headed.words == plain.words and "2" not in headed.words
    np.testing.assert_array_equal(headed.matrix, plain.matrix)


def test_header_dim_wins(tmp_path):
    t = load_vectors(_write(tmp_path / "h.txt", ["2000000 300"] + [f"w{i} " + " ".join(["0.5"] * 300) for i in range(3)]))
    assert t.dim == 300 and len(t) == 3


def test_bad_arity_skipped_and_counted(tmp_path, caplog):
    p = _write(tmp_path / "v.txt", ["a 1 2", "b 1", "c 3 4 5", "a 9 9", "d 5 6"])
    with caplog.at_level(logging.WARNING):
        t = load_vectors(p)
    assert t.words == ["a", "d"] and t.skipped == 3
    assert "skipped 3" in caplog.text


def test_expected_dim_mismatch_is_error(tmp_path):
    p = _write(tmp_path / "v.txt", ["a 1 2"])
    with pytest.raises(EmbeddingError, match="dimension"):
        load_vectors(p, expected_dim=3)
    with pytest.raises(EmbeddingError):
        load_vectors(tmp_path / "missing.txt")


def test_gzip_and_keep(tmp_path):
    p = tmp_path / "v.txt.gz"
    with gzip.open(p, "wt", encoding="utf-8") as fh:
        fh.write("Battery 1 0\nlife 0 1\nzebra 1 1\n")
    t = load_vectors(p, keep={"battery", "life"})
    assert t.words == ["Battery", "life"] and t.name == "v"


def test_lookup_policy():
    t = EmbeddingTable.from_dict("t", {"battery": [1.0, 2.0], "Apple": [3.0, 4.0], "apple": [5.0, 6.0]})
    np.testing.assert_array_equal(lookup(t, "Battery"), [1.0, 2.0])
    # exact hit beats the folded one
    np.testing.assert_array_equal(lookup(t, "Apple"), [3.0, 4.0])
    np.testing.assert_array_equal(lookup(t, "apple"), [5.0, 6.0])
    assert lookup(t, "zebra") is None
    assert len(lookup(t, "BATTERY")) == t.dim


def test_table_rejects_duplicates():
    with pytest.raises(EmbeddingError):
        EmbeddingTable("t", ["a", "a"], np.zeros((2, 3)))


def test_coverage_hand_count():
    t = EmbeddingTable.from_dict("t", {"a": [0.0], "b": [1.0]})
    rep = coverage(t, {"train": {"a", "c"}, "test": {"a", "b"}})
    assert rep.missing == {"train": 0.5, "test": 0.0}
    assert rep.average == 0.25
    with pytest.raises(EmbeddingError):
        coverage(t, {"x": set()})


@settings(max_examples=100, deadline=None)
@given(st.sets(st.sampled_from("abcdefgh"), min_size=1), st.sets(st.sampled_from("abcdefgh"), min_size=1),
       st.sets(st.sampled_from("abcdefgh")))
def test_coverage_monotone(types, table_words, added):
    small = EmbeddingTable.from_dict("s", {w: [0.0] for w in table_words})
    big = EmbeddingTable.from_dict("b", {w: [0.0] for w in table_words | added})
    assert coverage(big, {"x": types}).missing["x"] <= coverage(small, {"x": types}).missing["x"]


def test_coverage_csv():
    t = EmbeddingTable.from_dict("glove", {"a": [0.0]})
    buf = io.StringIO()
    write_coverage_csv([coverage(t, {"train": {"a", "b"}})], buf)
    assert buf.getvalue().splitlines() == ["embedding,subset,pct_missing",
                                           "glove,train,50.0000", "glove,average,50.0000"]


def test_vocabulary_layout_and_json():
    t = EmbeddingTable.from_dict("t", {"screen": [0.0], "keys": [1.0]})
    v = Vocabulary.build(["good", "food", "good"], extra_words=["screen", "unseen"], table=t)
    assert v.words == ["<pad>", "<unk>", "good", "food", "screen"]
    assert v.encode(["food", "zzz"]) == [3, 1]
    assert Vocabulary.from_json(v.to_json()).index == v.index


def test_build_matrix_policy():
    t = EmbeddingTable.from_dict("t", {"a": [1.0, 2.0, 3.0], "b": [4.0, 5.0, 6.0]})
    v = Vocabulary.build(["a", "b", "oov"])
    m = build_matrix(t, v, seed=3)
    np.testing.assert_array_equal(m[0], 0.0)
    np.testing.assert_array_equal(m[2:4], t.matrix)
    assert np.all(np.abs(m[[1, 4]]) <= 0.25) and np.any(m[4] != 0)
    np.testing.assert_array_equal(build_matrix(t, v, seed=3), m)
    assert not np.array_equal(build_matrix(t, v, seed=4)[4], m[4])
