"""Checkpoint loading, tokenization, mean pooling, and file export."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointUnavailable
from .formats import KIND_CODE, write_emb1, write_tok1

log = logging.getLogger(__name__)

MAX_TOKENS = 512
DIM = 768

WEIGHT_FILES = ("model.safetensors", "pytorch_model.bin")


@dataclass
class EmbedJob:
    manifest: Path          # jsonl with doc_id, year, clean_text per line
    kind: str               # bert | mpnet | finbert
    checkpoint: str
    out_dir: Path
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.out_dir = Path(self.out_dir)
        if self.kind not in KIND_CODE:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class EmbedReport:
    kind: str
    checkpoint: str
    revision: str
    n_docs: int = 0
    files: list[str] = field(default_factory=list)
    failed_docs: list[str] = field(default_factory=list)


def mean_pool(hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of token states over non-padding positions.

    hidden: (..., tokens, dim), mask: (..., tokens) with 1 for real tokens.
    """
    m = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * m).sum(dim=-2) / m.sum(dim=-2).clamp(min=1.0)


def _load(checkpoint: str, device: str):
    from transformers import AutoModel, AutoTokenizer
    try:
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModel.from_pretrained(checkpoint)
    except Exception as exc:
        raise CheckpointUnavailable(f"{checkpoint}: {exc}") from exc
    model.to(device)
    model.eval()
    return tokenizer, model


def checkpoint_revision(checkpoint: str) -> str:
    """Content hash of a local checkpoint's weight file, for provenance."""
    root = Path(checkpoint)
    if root.is_dir():
        for name in WEIGHT_FILES:
            path = root / name
            if path.exists():
                return hashlib.sha256(path.read_bytes()).hexdigest()
    return "unknown"


def _read_manifest(path: Path) -> dict[int, list[tuple[str, object]]]:
    by_year: dict[int, list[tuple[str, object]]] = {}
    with open(path) as f:
        for line in f:
            doc = json.loads(line)
            by_year.setdefault(int(doc["year"]), []).append(
                (str(doc["doc_id"]), doc.get("clean_text")))
    return by_year


def embed_documents(job: EmbedJob) -> EmbedReport:
    """Encode every manifest document and write per-year EMB1/TOK1 files
    plus a provenance sidecar. Documents that fail to tokenize are listed
    in the report and skipped; the run continues."""
    tokenizer, model = _load(job.checkpoint, job.device)
    revision = checkpoint_revision(job.checkpoint)
    report = EmbedReport(job.kind, str(job.checkpoint), revision)
    job.out_dir.mkdir(parents=True, exist_ok=True)

    for year, docs in sorted(_read_manifest(job.manifest).items()):
        emb_records: list[tuple[str, np.ndarray]] = []
        tok_records: list[tuple[str, np.ndarray, list[str]]] = []
        batch: list[tuple[str, str]] = []

        def flush():
            if not batch:
                return
            texts = [t for _, t in batch]
            enc = tokenizer(texts, truncation=True, max_length=MAX_TOKENS,
                            padding=True, return_tensors="pt")
            enc = {k: v.to(job.device) for k, v in enc.items()}
            with torch.no_grad():
                hidden = model(**enc).last_hidden_state
            pooled = mean_pool(hidden, enc["attention_mask"])
            for row, (doc_id, _) in enumerate(batch):
                n_tok = int(enc["attention_mask"][row].sum())
                ids = enc["input_ids"][row, :n_tok].tolist()
                tokens = tokenizer.convert_ids_to_tokens(ids)
                emb_records.append(
                    (doc_id, pooled[row].cpu().numpy().astype(np.float32)))
                tok_records.append(
                    (doc_id, hidden[row, :n_tok].cpu().numpy()
                     .astype(np.float32), tokens))
            batch.clear()

        for doc_id, text in docs:
            if not isinstance(text, str) or not text.strip():
                log.warning("doc %s: tokenization failed, skipped", doc_id)
                report.failed_docs.append(doc_id)
                continue
            batch.append((doc_id, text))
            if len(batch) == job.batch_size:
                flush()
        flush()

        if not emb_records:
            continue
        emb_path = job.out_dir / f"emb_{job.kind}_{year}.bin"
        tok_path = job.out_dir / f"tok_{job.kind}_{year}.bin"
        write_emb1(emb_records, job.kind, emb_path)
        write_tok1(tok_records, job.kind, tok_path)
        meta = {"kind": job.kind, "checkpoint": str(job.checkpoint),
                "revision": revision, "year": year, "dim": DIM,
                "n_docs": len(emb_records)}
        with open(job.out_dir / f"emb_{job.kind}_{year}.meta.json", "w") as f:
            json.dump(meta, f, indent=1)
        report.files.extend([emb_path.name, tok_path.name])
        report.n_docs += len(emb_records)
    return report
