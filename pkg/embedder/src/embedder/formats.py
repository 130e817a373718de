"""Writers for the EMB1 and TOK1 binary interchange formats.

Layout (little-endian throughout):

  EMB1: "EMB1", u8 kind_code, u32 dim, u64 count,
        then per record: u64 doc_id, dim * f32.
  TOK1: "TOK1", u8 kind_code, u32 rows, u32 dim, u64 count,
        then per record: u64 doc_id, u16 n_tokens,
        n_tokens * (u16 byte_len + utf8), rows * dim f32 zero-padded
        past n_tokens.
"""

from __future__ import annotations

import struct

import numpy as np

EMB_MAGIC = b"EMB1"
TOK_MAGIC = b"TOK1"
DIM = 768

KIND_CODE = {"bert": 2, "mpnet": 3, "finbert": 4}


def write_emb1(records: list[tuple[str, np.ndarray]], kind: str, path) -> None:
    """records: (doc_id, 768-vector) pairs; doc ids must be decimal integers."""
    code = KIND_CODE[kind]
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<BIQ", code, DIM, len(records)))
        for doc_id, vec in records:
            if vec.shape != (DIM,):
                raise ValueError(f"doc {doc_id}: vector shape {vec.shape}")
            f.write(struct.pack("<Q", int(doc_id)))
            f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def write_tok1(records: list[tuple[str, np.ndarray, list[str]]], kind: str,
               path, rows: int | None = None) -> None:
    """records: (doc_id, n_tokens x 768 matrix, token strings)."""
    code = KIND_CODE[kind]
    if rows is None:
        rows = max((mat.shape[0] for _, mat, _ in records), default=0)
    with open(path, "wb") as f:
        f.write(TOK_MAGIC)
        f.write(struct.pack("<BIIQ", code, rows, DIM, len(records)))
        for doc_id, mat, tokens in records:
            if mat.shape != (len(tokens), DIM) or len(tokens) > rows:
                raise ValueError(f"doc {doc_id}: matrix {mat.shape} for "
                                 f"{len(tokens)} tokens, rows={rows}")
            f.write(struct.pack("<QH", int(doc_id), len(tokens)))
            for tok in tokens:
                raw = tok.encode("utf-8")
                f.write(struct.pack("<H", len(raw)))
                f.write(raw)
            padded = np.zeros((rows, DIM), dtype="<f4")
            padded[:mat.shape[0]] = mat
            f.write(padded.tobytes())
