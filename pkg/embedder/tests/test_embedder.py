"""Embedding export contract: shapes, pooling, determinism, interchange."""

import json
from pathlib import Path

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from embedder import EmbedJob, embed_documents, mean_pool
from embedder.cli import main as cli_main
from embedder.encode import checkpoint_revision
from embedder.errors import CheckpointUnavailable

FIXTURES = Path(__file__).parent / "fixtures"
CHECKPOINT = FIXTURES / "tiny-bert"

DOCS = [
    {"doc_id": "1", "year": 2010, "clean_text": "the company reports record profit"},
    {"doc_id": "2", "year": 2010, "clean_text": "revenue fell and costs rose"},
    {"doc_id": "3", "year": 2011, "clean_text": "strong quarterly growth"},
]


def write_manifest(path, docs=DOCS):
    with open(path, "w") as f:
        for doc in docs:
            f.write(json.dumps(doc) + "\n")
    return path


@pytest.fixture(scope="module")
def run_out(tmp_path_factory):
    root = tmp_path_factory.mktemp("embed")
    manifest = write_manifest(root / "docs_clean.jsonl")
    job = EmbedJob(manifest=manifest, kind="bert", checkpoint=str(CHECKPOINT),
                   out_dir=root / "out", batch_size=2)
    report = embed_documents(job)
    return root / "out", report


# ---------------------------------------------------------------------------
# mean pooling


def test_mean_pool_single_token_identity():
    hidden = torch.randn(1, 1, 768)
    mask = torch.ones(1, 1)
    torch.testing.assert_close(mean_pool(hidden, mask), hidden[:, 0, :])


def test_mean_pool_ignores_padding():
    real = torch.randn(1, 3, 768)
    padded = torch.cat([real, torch.randn(1, 5, 768)], dim=1)
    mask = torch.cat([torch.ones(1, 3), torch.zeros(1, 5)], dim=1)
    torch.testing.assert_close(mean_pool(padded, mask), real.mean(dim=1))


def test_mean_pool_is_plain_average():
    hidden = torch.tensor([[[1.0] * 768, [3.0] * 768]])
    out = mean_pool(hidden, torch.ones(1, 2))
    torch.testing.assert_close(out, torch.full((1, 768), 2.0))


# ---------------------------------------------------------------------------
# embed_documents


def test_shapes_and_files(run_out):
    out, report = run_out
    assert report.n_docs == 3
    assert sorted(p.name for p in out.glob("emb_bert_*.bin")) == [
        "emb_bert_2010.bin", "emb_bert_2011.bin"]
    from earnsignal import features as ft
    for year, want in ((2010, ["1", "2"]), (2011, ["3"])):
        recs = ft.read_embeddings(out / f"emb_bert_{year}.bin", year)
        assert [r.doc_id for r in recs] == want
        for r in recs:
            assert r.vector.shape == (768,)
        mats = ft.read_token_matrices(out / f"tok_bert_{year}.bin")
        for m in mats:
            assert m.E.shape[1] == 768
            assert m.n_tokens <= 512
            assert m.token_strings[0] == "[CLS]"
            assert m.token_strings[-1] == "[SEP]"


def test_round_trip_bit_exact(run_out):
    # the document vector must equal the mean of its stored token states,
    # recomputed from the primary reader's float32 payload
    out, _ = run_out
    from earnsignal import features as ft
    recs = {r.doc_id: r for r in ft.read_embeddings(out / "emb_bert_2010.bin",
                                                    2010)}
    for m in ft.read_token_matrices(out / "tok_bert_2010.bin"):
        pooled = m.E[:m.n_tokens].astype(np.float32).mean(axis=0,
                                                          dtype=np.float64)
        np.testing.assert_allclose(recs[m.doc_id].vector, pooled, atol=1e-6)


def test_same_doc_twice_identical(tmp_path):
    manifest = write_manifest(tmp_path / "m.jsonl", [DOCS[0]])
    outs = []
    for sub in ("a", "b"):
        job = EmbedJob(manifest=manifest, kind="bert",
                       checkpoint=str(CHECKPOINT), out_dir=tmp_path / sub)
        embed_documents(job)
        outs.append((tmp_path / sub / "emb_bert_2010.bin").read_bytes())
    assert outs[0] == outs[1]


def test_golden_vector(run_out):
    out, _ = run_out
    from earnsignal import features as ft
    recs = ft.read_embeddings(out / "emb_bert_2010.bin", 2010)
    golden = np.load(FIXTURES / "golden_vector.npy")
    assert np.abs(recs[0].vector - golden).max() < 1e-4


def test_tokenization_failure_listed_and_skipped(tmp_path):
    docs = [DOCS[0], {"doc_id": "9", "year": 2010, "clean_text": None}]
    manifest = write_manifest(tmp_path / "m.jsonl", docs)
    job = EmbedJob(manifest=manifest, kind="bert", checkpoint=str(CHECKPOINT),
                   out_dir=tmp_path / "out")
    report = embed_documents(job)
    assert report.failed_docs == ["9"]
    assert report.n_docs == 1


def test_checkpoint_unavailable(tmp_path):
    manifest = write_manifest(tmp_path / "m.jsonl")
    job = EmbedJob(manifest=manifest, kind="bert",
                   checkpoint=str(tmp_path / "no-such-model"),
                   out_dir=tmp_path / "out")
    with pytest.raises(CheckpointUnavailable):
        embed_documents(job)


def test_bad_kind_rejected(tmp_path):
    with pytest.raises(ValueError):
        EmbedJob(manifest=tmp_path, kind="gpt", checkpoint="x",
                 out_dir=tmp_path)


def test_sidecar_metadata(run_out):
    out, report = run_out
    meta = json.loads((out / "emb_bert_2010.meta.json").read_text())
    assert meta["kind"] == "bert"
    assert meta["dim"] == 768
    assert meta["n_docs"] == 2
    assert meta["revision"] == report.revision
    assert meta["revision"] == checkpoint_revision(str(CHECKPOINT))
    assert meta["revision"] != "unknown"


def test_batch_size_does_not_change_vectors(tmp_path):
    manifest = write_manifest(tmp_path / "m.jsonl",
                              [d for d in DOCS if d["year"] == 2010])
    vecs = []
    from earnsignal import features as ft
    for bs in (1, 2):
        job = EmbedJob(manifest=manifest, kind="bert",
                       checkpoint=str(CHECKPOINT), out_dir=tmp_path / str(bs),
                       batch_size=bs)
        embed_documents(job)
        recs = ft.read_embeddings(tmp_path / str(bs) / "emb_bert_2010.bin",
                                  2010)
        vecs.append(np.vstack([r.vector for r in recs]))
    np.testing.assert_allclose(vecs[0], vecs[1], atol=1e-5)


# ---------------------------------------------------------------------------
# CLI


def test_cli_end_to_end(tmp_path):
    manifest = write_manifest(tmp_path / "m.jsonl")
    res = CliRunner().invoke(cli_main, [
        "--manifest", str(manifest), "--kind", "bert",
        "--checkpoint", str(CHECKPOINT), "--out", str(tmp_path / "out")])
    assert res.exit_code == 0, res.output
    assert "embedded 3 docs" in res.output
    assert (tmp_path / "out" / "emb_bert_2011.bin").exists()


def test_cli_checkpoint_unavailable_exit_3(tmp_path):
    manifest = write_manifest(tmp_path / "m.jsonl")
    res = CliRunner().invoke(cli_main, [
        "--manifest", str(manifest), "--kind", "bert",
        "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
    assert res.exit_code == 3
