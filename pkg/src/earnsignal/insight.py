"""Topic-level interpretation: metatopic weights, polarity, explained
variance shares, embedding-token importance, and pluggable labeling."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .econometrics import explained_variance
from .errors import DimMismatch, KindMismatch, LabelerUnavailable
from .features import TokenEmbeddingMatrix
from .scoring import LassoFit

log = logging.getLogger(__name__)

OTHER_CATEGORY = "Other"
LABEL_CHUNK = 500
SPECIAL_TOKENS = {"[CLS]", "[SEP]", "[PAD]", "[MASK]", "[UNK]"}
_WORD_RE = re.compile(r"^[a-zA-Z]{2,}$")


@dataclass
class MetatopicMap:
    kind: str  # "bkmx" | "olda"
    mapping: dict[int, str]  # topic index -> metatopic name

    def groups(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for idx in sorted(self.mapping):
            out.setdefault(self.mapping[idx], []).append(idx)
        return out

    @classmethod
    def from_file(cls, path, kind: str) -> "MetatopicMap":
        with open(path) as f:
            raw = json.load(f)
        return cls(kind, {int(k): v for k, v in raw.items()})

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({str(k): v for k, v in sorted(self.mapping.items())}, f,
                      indent=1)


def metatopic_weight(fit: LassoFit, mmap: MetatopicMap) -> dict[str, float]:
    """Sum of raw-space topic weights per metatopic."""
    if fit.kind != mmap.kind:
        raise KindMismatch(f"fit kind {fit.kind} vs map kind {mmap.kind}")
    w = fit.w_raw
    return {name: float(w[idx].sum()) for name, idx in mmap.groups().items()}


def metatopic_explained_variance(attention: np.ndarray, fit: LassoFit,
                                 mmap: MetatopicMap) -> dict[str, float]:
    """h(M) shares (summing to 100) using prior-year raw-space weights and
    the current year's attention covariance."""
    if fit.kind != mmap.kind:
        raise KindMismatch(f"fit kind {fit.kind} vs map kind {mmap.kind}")
    groups = mmap.groups()
    names = list(groups)
    h = explained_variance(attention, fit.w_raw, [groups[n] for n in names])
    return dict(zip(names, (float(v) for v in h)))


def polarity_series(fits_by_year: dict[int, LassoFit], mmap: MetatopicMap
                    ) -> dict[int, dict[str, int]]:
    """Sign (+1/0/-1) of each metatopic's summed weight per year."""
    out = {}
    for year in sorted(fits_by_year):
        weights = metatopic_weight(fits_by_year[year], mmap)
        out[year] = {name: int(np.sign(w)) for name, w in weights.items()}
    return out


# ---------------------------------------------------------------------------
# Embedding-token importance


@dataclass
class TokenImportance:
    doc_id: str
    scores: np.ndarray          # per real token, raw-space E @ w
    retained: np.ndarray        # filter mask over real tokens
    top_positive: list[str] = field(default_factory=list)
    top_negative: list[str] = field(default_factory=list)


def filter_tokens(tokens: list[str]) -> np.ndarray:
    """Retain plain word tokens: no wordpiece continuations, punctuation,
    numerics, single characters, or model-special tokens."""
    mask = np.zeros(len(tokens), dtype=bool)
    for i, tok in enumerate(tokens):
        if tok in SPECIAL_TOKENS or tok.startswith("##"):
            continue
        if _WORD_RE.match(tok):
            mask[i] = True
    return mask


def top_signed_tokens(tokens: list[str], scores: np.ndarray,
                      retained: np.ndarray, n: int = 5
                      ) -> tuple[list[str], list[str]]:
    """Top-n positive and bottom-n negative retained tokens, first
    occurrence per distinct token string, ties by token order."""
    idx = np.flatnonzero(retained)
    seen: set[str] = set()
    uniq = []
    for i in idx:
        if tokens[i] not in seen:
            seen.add(tokens[i])
            uniq.append(i)
    pos = sorted((i for i in uniq if scores[i] > 0), key=lambda i: (-scores[i], i))
    neg = sorted((i for i in uniq if scores[i] < 0), key=lambda i: (scores[i], i))
    return [tokens[i] for i in pos[:n]], [tokens[i] for i in neg[:n]]


def token_importance(mat: TokenEmbeddingMatrix, fit: LassoFit,
                     n_top: int = 5) -> TokenImportance:
    """IS = E @ w with raw-space weights; padding rows are skipped."""
    if fit.w.shape[0] != mat.E.shape[1]:
        raise DimMismatch(f"fit dim {fit.w.shape[0]} vs embedding dim "
                          f"{mat.E.shape[1]}")
    E = mat.E[:mat.n_tokens]
    scores = E @ fit.w_raw
    retained = filter_tokens(mat.token_strings)
    pos, neg = top_signed_tokens(mat.token_strings, scores, retained, n_top)
    return TokenImportance(mat.doc_id, scores, retained, pos, neg)


# ---------------------------------------------------------------------------
# Labeling (external endpoint with deterministic stub + disk cache)


class StubLabeler:
    """Keyword-table lookup; first matching keyword in file order wins."""

    def __init__(self, table: list[tuple[str, str]] | None = None):
        if table is None:
            text = resources.files("earnsignal.data").joinpath(
                "stub_labels.tsv").read_text()
            table = [tuple(ln.split("\t")) for ln in text.splitlines()
                     if ln and not ln.startswith("#")]
        self.table = table

    def label(self, items: list[str], categories: list[str]) -> dict[str, str]:
        out = {}
        cats = set(categories)
        for item in items:
            low = item.lower()
            label = OTHER_CATEGORY
            for keyword, category in self.table:
                if keyword in low and category in cats:
                    label = category
                    break
            out[item] = label
        return out


class HttpLabeler:
    """POSTs {items, categories} to an endpoint returning {item: category}."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def label(self, items: list[str], categories: list[str]) -> dict[str, str]:
        import requests
        try:
            resp = requests.post(self.url,
                                 json={"items": items, "categories": categories},
                                 timeout=self.timeout)
            resp.raise_for_status()
        except Exception as exc:
            raise LabelerUnavailable(str(exc)) from exc
        payload = resp.json()
        return {item: payload.get(item, OTHER_CATEGORY) for item in items}


def label_items(items: list[str], categories: list[str], labeler,
                cache_path=None, fallback=None) -> dict[str, str]:
    """Chunked labeling (<=500 items per request) with a content-hash disk
    cache. Unknown items come back as "Other"."""
    cache: dict[str, str] = {}
    cat_key = hashlib.sha256("\x1f".join(categories).encode()).hexdigest()[:16]
    if cache_path is not None and Path(cache_path).exists():
        with open(cache_path) as f:
            stored = json.load(f)
        cache = stored.get(cat_key, {})

    def key(item: str) -> str:
        return hashlib.sha256(item.encode()).hexdigest()

    out: dict[str, str] = {}
    pending = []
    for item in items:
        hit = cache.get(key(item))
        if hit is not None:
            out[item] = hit
        else:
            pending.append(item)

    for start in range(0, len(pending), LABEL_CHUNK):
        chunk = pending[start:start + LABEL_CHUNK]
        try:
            labels = labeler.label(chunk, categories)
        except LabelerUnavailable:
            if fallback is None:
                raise
            log.warning("labeler unavailable, falling back to stub")
            labels = fallback.label(chunk, categories)
        for item, cat in labels.items():
            if cat not in categories:
                cat = OTHER_CATEGORY
            out[item] = cat
            cache[key(item)] = cat

    if cache_path is not None and pending:
        stored = {}
        if Path(cache_path).exists():
            with open(cache_path) as f:
                stored = json.load(f)
        stored[cat_key] = cache
        with open(cache_path, "w") as f:
            json.dump(stored, f)
    return out


def classification_shares(labels_by_sign: dict[str, list[str]],
                          categories: list[str]) -> dict[str, dict[str, float]]:
    """Token-count shares per (sign, category), normalized to sum to 100
    across the whole model; "Other" tokens are excluded."""
    total = sum(1 for cats in labels_by_sign.values()
                for c in cats if c != OTHER_CATEGORY)
    out = {}
    for sign, cats in labels_by_sign.items():
        counted = [c for c in cats if c != OTHER_CATEGORY]
        out[sign] = {cat: (100.0 * counted.count(cat) / total if total else 0.0)
                     for cat in categories}
    return out
