"""Per-document feature store: topic vectors and transformer embeddings.

Embeddings arrive through two binary interchange formats ("EMB1" document
vectors, "TOK1" token matrices) produced by the external embedding
component. Floats are float32 on disk and promoted to float64 in memory
for regression work.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from datetime import date

import numpy as np

from .errors import BadMagic, DimMismatch, MissingFeature, NoOverlap, UnknownDoc

EMB_MAGIC = b"EMB1"
TOK_MAGIC = b"TOK1"

KIND_DIM = {"bkmx": 180, "olda": 50, "bert": 768, "mpnet": 768, "finbert": 768}
KIND_CODE = {"bkmx": 0, "olda": 1, "bert": 2, "mpnet": 3, "finbert": 4}
CODE_KIND = {v: k for k, v in KIND_CODE.items()}


@dataclass
class FeatureRecord:
    doc_id: str
    kind: str
    vector: np.ndarray
    year: int


@dataclass
class TokenEmbeddingMatrix:
    doc_id: str
    kind: str
    E: np.ndarray  # rows x dim, zero-filled past n_tokens
    token_strings: list[str]

    @property
    def n_tokens(self) -> int:
        return len(self.token_strings)


# ---------------------------------------------------------------------------
# EMB1: {magic, u8 kind_code, u32 dim, u64 count} then
#       per record {u64 doc_id, dim * float32 LE}


def write_embeddings(records: list[FeatureRecord], path) -> None:
    if not records:
        raise ValueError("no records")
    kind = records[0].kind
    dim = KIND_DIM[kind]
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<BIQ", KIND_CODE[kind], dim, len(records)))
        for rec in records:
            if rec.kind != kind:
                raise DimMismatch(f"mixed kinds in one file: {rec.kind} vs {kind}")
            if rec.vector.shape != (dim,):
                raise DimMismatch(
                    f"doc {rec.doc_id}: vector shape {rec.vector.shape}, want ({dim},)")
            f.write(struct.pack("<Q", int(rec.doc_id)))
            f.write(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())


def read_embeddings(path, year: int, known_doc_ids=None) -> list[FeatureRecord]:
    with open(path, "rb") as f:
        head = f.read(4 + 13)
        if len(head) < 17 or head[:4] != EMB_MAGIC:
            raise BadMagic(f"{path}: bad EMB1 header")
        code, dim, count = struct.unpack("<BIQ", head[4:])
        kind = CODE_KIND.get(code)
        if kind is None or KIND_DIM[kind] != dim:
            raise DimMismatch(f"{path}: kind code {code} with dim {dim}")
        records = []
        rec_size = 8 + dim * 4
        for _ in range(count):
            blob = f.read(rec_size)
            if len(blob) != rec_size:
                raise BadMagic(f"{path}: truncated record block")
            (doc_id,) = struct.unpack("<Q", blob[:8])
            vec = np.frombuffer(blob[8:], dtype="<f4").astype(np.float64)
            records.append(FeatureRecord(str(doc_id), kind, vec, year))
    if known_doc_ids is not None:
        unknown = [r.doc_id for r in records if r.doc_id not in known_doc_ids]
        if unknown:
            raise UnknownDoc(f"{path}: doc ids not in manifest: {unknown[:5]}")
    return records


# ---------------------------------------------------------------------------
# TOK1: {magic, u8 kind_code, u32 rows, u32 dim, u64 count} then per record
#       {u64 doc_id, u16 n_tokens, n_tokens * (u16 len + utf8), rows*dim f32}


def write_token_matrices(mats: list[TokenEmbeddingMatrix], path,
                         rows: int | None = None) -> None:
    if not mats:
        raise ValueError("no matrices")
    kind = mats[0].kind
    dim = KIND_DIM[kind]
    if rows is None:
        rows = max(m.E.shape[0] for m in mats)
    with open(path, "wb") as f:
        f.write(TOK_MAGIC)
        f.write(struct.pack("<BIIQ", KIND_CODE[kind], rows, dim, len(mats)))
        for m in mats:
            if m.E.shape[1] != dim or m.n_tokens > rows:
                raise DimMismatch(f"doc {m.doc_id}: matrix {m.E.shape} vs "
                                  f"rows={rows}, dim={dim}")
            f.write(struct.pack("<QH", int(m.doc_id), m.n_tokens))
            for tok in m.token_strings:
                raw = tok.encode("utf-8")
                f.write(struct.pack("<H", len(raw)))
                f.write(raw)
            padded = np.zeros((rows, dim), dtype="<f4")
            padded[:m.E.shape[0]] = m.E
            f.write(padded.tobytes())


def read_token_matrices(path, known_doc_ids=None) -> list[TokenEmbeddingMatrix]:
    with open(path, "rb") as f:
        head = f.read(4 + 17)
        if len(head) < 21 or head[:4] != TOK_MAGIC:
            raise BadMagic(f"{path}: bad TOK1 header")
        code, rows, dim, count = struct.unpack("<BIIQ", head[4:])
        kind = CODE_KIND.get(code)
        if kind is None or KIND_DIM[kind] != dim:
            raise DimMismatch(f"{path}: kind code {code} with dim {dim}")
        mats = []
        for _ in range(count):
            fixed = f.read(10)
            if len(fixed) != 10:
                raise BadMagic(f"{path}: truncated record header")
            doc_id, n_tokens = struct.unpack("<QH", fixed)
            tokens = []
            for _ in range(n_tokens):
                (tlen,) = struct.unpack("<H", f.read(2))
                tokens.append(f.read(tlen).decode("utf-8"))
            blob = f.read(rows * dim * 4)
            if len(blob) != rows * dim * 4:
                raise BadMagic(f"{path}: truncated matrix block")
            E = np.frombuffer(blob, dtype="<f4").reshape(rows, dim).astype(np.float64)
            mats.append(TokenEmbeddingMatrix(str(doc_id), kind, E, tokens))
    if known_doc_ids is not None:
        unknown = [m.doc_id for m in mats if m.doc_id not in known_doc_ids]
        if unknown:
            raise UnknownDoc(f"{path}: doc ids not in manifest: {unknown[:5]}")
    return mats


# ---------------------------------------------------------------------------
# Diagnostics and regression assembly


def cosine_stats(recs_a: list[FeatureRecord], recs_b: list[FeatureRecord]) -> dict:
    """Summary of per-document cosine similarity over shared doc ids."""
    a = {r.doc_id: r.vector for r in recs_a}
    b = {r.doc_id: r.vector for r in recs_b}
    shared = sorted(a.keys() & b.keys())
    if not shared:
        raise NoOverlap("no shared doc ids between the two kinds")
    cos = []
    for doc_id in shared:
        va, vb = a[doc_id], b[doc_id]
        denom = np.linalg.norm(va) * np.linalg.norm(vb)
        cos.append(float(va @ vb / denom) if denom > 0 else 0.0)
    cos = np.array(cos)
    return {"mean": float(cos.mean()), "std": float(cos.std()),
            "min": float(cos.min()), "max": float(cos.max()), "n": len(cos)}


def assemble_matrix(records: list[FeatureRecord],
                    events: list[tuple[str, int, date, float]]
                    ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Design matrix and aligned returns for one (kind, year).

    `events` rows are (doc_id, permno, tau_eff, ret_day). Row order is
    deterministic: by tau_eff, then permno.
    """
    by_doc = {r.doc_id: r.vector for r in records}
    missing = [doc_id for doc_id, _, _, _ in events if doc_id not in by_doc]
    if missing:
        raise MissingFeature(missing)
    ordered = sorted(events, key=lambda e: (e[2], e[1]))
    X = np.vstack([by_doc[doc_id] for doc_id, _, _, _ in ordered])
    y = np.array([ret for _, _, _, ret in ordered])
    ids = [doc_id for doc_id, _, _, _ in ordered]
    return X, y, ids
