"""Binary feature store round-trips, cosine diagnostics, matrix assembly."""

from datetime import date

import numpy as np
import pytest

from earnsignal import features as ft
from earnsignal.errors import BadMagic, DimMismatch, MissingFeature, NoOverlap, \
    UnknownDoc


def rec(doc_id, kind="olda", seed=0, year=2010):
    rng = np.random.default_rng(seed)
    return ft.FeatureRecord(doc_id, kind,
                            rng.standard_normal(ft.KIND_DIM[kind]), year)


# ---------------------------------------------------------------------------
# EMB1


def test_emb_round_trip_bit_exact(tmp_path):
    recs = [rec("1", seed=1), rec("2", seed=2), rec("3", seed=3)]
    path = tmp_path / "emb.bin"
    ft.write_embeddings(recs, path)
    back = ft.read_embeddings(path, 2010)
    assert [r.doc_id for r in back] == ["1", "2", "3"]
    for a, b in zip(recs, back):
        assert b.kind == a.kind and b.year == 2010
        # float32 on disk: round-trip must match the f32 cast exactly
        np.testing.assert_array_equal(b.vector,
                                      a.vector.astype(np.float32).astype(np.float64))


def test_emb_empty_write_rejected(tmp_path):
    with pytest.raises(ValueError):
        ft.write_embeddings([], tmp_path / "emb.bin")


def test_emb_mixed_kinds_rejected(tmp_path):
    with pytest.raises(DimMismatch):
        ft.write_embeddings([rec("1", "olda"), rec("2", "bkmx")],
                            tmp_path / "emb.bin")


def test_emb_wrong_dim_rejected(tmp_path):
    bad = ft.FeatureRecord("1", "olda", np.zeros(7), 2010)
    with pytest.raises(DimMismatch):
        ft.write_embeddings([bad], tmp_path / "emb.bin")


def test_emb_bad_magic(tmp_path):
    path = tmp_path / "emb.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(BadMagic):
        ft.read_embeddings(path, 2010)


def test_emb_truncated_record(tmp_path):
    path = tmp_path / "emb.bin"
    ft.write_embeddings([rec("1"), rec("2")], path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(BadMagic):
        ft.read_embeddings(path, 2010)


def test_emb_unknown_doc_check(tmp_path):
    path = tmp_path / "emb.bin"
    ft.write_embeddings([rec("1"), rec("2")], path)
    with pytest.raises(UnknownDoc):
        ft.read_embeddings(path, 2010, known_doc_ids={"1"})
    ok = ft.read_embeddings(path, 2010, known_doc_ids={"1", "2", "3"})
    assert len(ok) == 2


# ---------------------------------------------------------------------------
# TOK1


def mat(doc_id, kind="olda", n_tokens=4, seed=0):
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((n_tokens, ft.KIND_DIM[kind]))
    return ft.TokenEmbeddingMatrix(doc_id, kind, E,
                                   [f"tok{i}" for i in range(n_tokens)])


def test_tok_round_trip(tmp_path):
    mats = [mat("1", n_tokens=3, seed=1), mat("2", n_tokens=5, seed=2)]
    path = tmp_path / "tok.bin"
    ft.write_token_matrices(mats, path, rows=8)
    back = ft.read_token_matrices(path)
    assert [m.doc_id for m in back] == ["1", "2"]
    for a, b in zip(mats, back):
        assert b.token_strings == a.token_strings
        assert b.E.shape == (8, ft.KIND_DIM["olda"])
        np.testing.assert_array_equal(
            b.E[:a.n_tokens],
            a.E.astype(np.float32).astype(np.float64))
        assert (b.E[a.n_tokens:] == 0).all()


def test_tok_rows_default_is_max(tmp_path):
    mats = [mat("1", n_tokens=3), mat("2", n_tokens=7)]
    path = tmp_path / "tok.bin"
    ft.write_token_matrices(mats, path)
    back = ft.read_token_matrices(path)
    assert back[0].E.shape[0] == 7


def test_tok_overflow_rejected(tmp_path):
    with pytest.raises(DimMismatch):
        ft.write_token_matrices([mat("1", n_tokens=5)], tmp_path / "t.bin", rows=3)


def test_tok_bad_magic(tmp_path):
    path = tmp_path / "tok.bin"
    path.write_bytes(b"EMB1" + b"\x00" * 40)
    with pytest.raises(BadMagic):
        ft.read_token_matrices(path)


def test_tok_unknown_doc_check(tmp_path):
    path = tmp_path / "tok.bin"
    ft.write_token_matrices([mat("9")], path)
    with pytest.raises(UnknownDoc):
        ft.read_token_matrices(path, known_doc_ids={"1"})


def test_tok_unicode_tokens_survive(tmp_path):
    m = mat("1", n_tokens=2)
    m.token_strings = ["café", "##naïve"]
    path = tmp_path / "tok.bin"
    ft.write_token_matrices([m], path, rows=4)
    assert ft.read_token_matrices(path)[0].token_strings == ["café", "##naïve"]


# ---------------------------------------------------------------------------
# cosine_stats


def test_cosine_identical_vectors():
    a = [rec("1", seed=1), rec("2", seed=2)]
    stats = ft.cosine_stats(a, a)
    assert stats["mean"] == pytest.approx(1.0)
    assert stats["n"] == 2


def test_cosine_orthogonal():
    dim = ft.KIND_DIM["olda"]
    va = np.zeros(dim); va[0] = 1.0
    vb = np.zeros(dim); vb[1] = 1.0
    a = [ft.FeatureRecord("1", "olda", va, 2010)]
    b = [ft.FeatureRecord("1", "olda", vb, 2010)]
    assert ft.cosine_stats(a, b)["mean"] == 0.0


def test_cosine_opposite_and_zero_norm():
    dim = ft.KIND_DIM["olda"]
    v = np.zeros(dim); v[0] = 2.0
    a = [ft.FeatureRecord("1", "olda", v, 2010),
         ft.FeatureRecord("2", "olda", v, 2010)]
    b = [ft.FeatureRecord("1", "olda", -v, 2010),
         ft.FeatureRecord("2", "olda", np.zeros(dim), 2010)]
    stats = ft.cosine_stats(a, b)
    assert stats["min"] == -1.0
    assert stats["max"] == 0.0  # zero-norm pair contributes 0


def test_cosine_uses_shared_docs_only():
    a = [rec("1", seed=1), rec("2", seed=2)]
    b = [rec("2", seed=2), rec("3", seed=3)]
    assert ft.cosine_stats(a, b)["n"] == 1


def test_cosine_no_overlap():
    with pytest.raises(NoOverlap):
        ft.cosine_stats([rec("1")], [rec("2")])


# ---------------------------------------------------------------------------
# assemble_matrix


def test_assemble_ordering_by_day_then_permno():
    recs = [rec(str(i), seed=i) for i in range(3)]
    events = [("0", 300, date(2010, 2, 1), 0.03),
              ("1", 100, date(2010, 1, 5), 0.01),
              ("2", 200, date(2010, 1, 5), 0.02)]
    X, y, ids = ft.assemble_matrix(recs, events)
    assert ids == ["1", "2", "0"]
    np.testing.assert_array_equal(y, [0.01, 0.02, 0.03])
    np.testing.assert_array_equal(X[2], recs[0].vector)


def test_assemble_missing_feature():
    with pytest.raises(MissingFeature):
        ft.assemble_matrix([rec("1")], [("1", 1, date(2010, 1, 4), 0.0),
                                        ("9", 2, date(2010, 1, 4), 0.0)])
