"""Bag-of-words preprocessing: normalization, lemmas, vocabulary, counts.

Everything here is deterministic: byte-identical input text yields
byte-identical token streams and count vectors.
"""

from __future__ import annotations

import html
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import EmptyVocabulary

DEFAULT_MIN_DF = 5
DEFAULT_MAX_DF_RATIO = 0.5
DEFAULT_MAX_SIZE = 50_000

_URL_RE = re.compile(r"(https?://\S+|www\.\S+)", re.IGNORECASE)
_EMAIL_RE = re.compile(r"\S+@\S+\.\S+")
_DIGIT_RE = re.compile(r"[0-9]+")
# every non-letter, non-space character is a "special symbol" and is deleted
# in place, joining the surrounding characters (at&t -> att)
_SYMBOL_RE = re.compile(r"[^a-z\s]")
_WS_RE = re.compile(r"\s+")


@dataclass
class TokenStream:
    doc_id: str
    tokens: list[str]


@dataclass
class Vocabulary:
    version_year: int
    index: dict[str, int]
    doc_freq: dict[str, int]

    def __len__(self) -> int:
        return len(self.index)

    @property
    def terms(self) -> list[str]:
        out = [""] * len(self.index)
        for term, i in self.index.items():
            out[i] = term
        return out


@dataclass
class DocTermCounts:
    doc_id: str
    counts: dict[int, int] = field(default_factory=dict)
    vocab_year: int = 0

    @property
    def n_tokens(self) -> int:
        return sum(self.counts.values())


def _load_lines(name: str) -> list[str]:
    text = resources.files("earnsignal.data").joinpath(name).read_text()
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


_STOPWORDS: frozenset[str] | None = None
_LEMMA_EXCEPTIONS: dict[str, str] | None = None


def stopwords() -> frozenset[str]:
    global _STOPWORDS
    if _STOPWORDS is None:
        _STOPWORDS = frozenset(_load_lines("stopwords.txt"))
    return _STOPWORDS


def lemma_exceptions() -> dict[str, str]:
    global _LEMMA_EXCEPTIONS
    if _LEMMA_EXCEPTIONS is None:
        _LEMMA_EXCEPTIONS = dict(
            ln.split("\t") for ln in _load_lines("lemma_exceptions.tsv"))
    return _LEMMA_EXCEPTIONS


def normalize_text(text: str) -> str:
    """Unescape entities, strip URLs/emails/numbers/symbols, lowercase."""
    text = html.unescape(text)
    text = _URL_RE.sub(" ", text)
    text = _EMAIL_RE.sub(" ", text)
    text = text.lower()
    text = _DIGIT_RE.sub("", text)
    text = _SYMBOL_RE.sub("", text)
    return _WS_RE.sub(" ", text).strip()


def lemmatize_token(token: str) -> str:
    """Exception lookup first, then deterministic suffix rules."""
    exc = lemma_exceptions().get(token)
    if exc is not None:
        return exc
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 4 and token.endswith("sses"):
        return token[:-2]
    if (len(token) > 3 and token.endswith("s")
            and not token.endswith(("ss", "us", "is"))):
        return token[:-1]
    return token


def lemmatize(tokens: list[str]) -> list[str]:
    return [lemmatize_token(t) for t in tokens]


def drop_stopwords_and_repeats(doc_id: str, lemmas: list[str]) -> TokenStream:
    """Remove stopwords; collapse immediate repeats ("year year" -> "year")."""
    sw = stopwords()
    out: list[str] = []
    for lemma in lemmas:
        if lemma in sw:
            continue
        if out and out[-1] == lemma:
            continue
        out.append(lemma)
    return TokenStream(doc_id, out)


def tokenize(doc_id: str, clean_text: str) -> TokenStream:
    """Full normalize -> lemmatize -> stopword/repeat pipeline."""
    tokens = normalize_text(clean_text).split()
    return drop_stopwords_and_repeats(doc_id, lemmatize(tokens))


def build_vocabulary(streams: list[TokenStream], version_year: int,
                     min_df: int = DEFAULT_MIN_DF,
                     max_df_ratio: float = DEFAULT_MAX_DF_RATIO,
                     max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """Document-frequency filtered vocabulary, truncated by descending df."""
    if not streams:
        raise EmptyVocabulary("no token streams")
    df: dict[str, int] = {}
    for stream in streams:
        for term in set(stream.tokens):
            df[term] = df.get(term, 0) + 1
    n_docs = len(streams)
    kept = [(term, n) for term, n in df.items()
            if n >= min_df and n <= max_df_ratio * n_docs]
    if not kept:
        raise EmptyVocabulary(
            f"no term passed min_df={min_df}, max_df_ratio={max_df_ratio}")
    kept.sort(key=lambda kv: (-kv[1], kv[0]))
    kept = kept[:max_size]
    index = {term: i for i, (term, _) in enumerate(kept)}
    return Vocabulary(version_year, index, dict(kept))


def extend_vocabulary(vocab: Vocabulary, streams: list[TokenStream],
                      version_year: int,
                      min_df: int = DEFAULT_MIN_DF,
                      max_df_ratio: float = DEFAULT_MAX_DF_RATIO,
                      max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """New vintage: existing indices preserved, new-year terms appended.

    Stable indices let topic-model columns persist across vintages.
    """
    fresh = build_vocabulary(streams, version_year, min_df, max_df_ratio,
                             max_size)
    index = dict(vocab.index)
    doc_freq = dict(vocab.doc_freq)
    for term in fresh.terms:
        if term not in index and len(index) < max_size:
            index[term] = len(index)
        if term in fresh.doc_freq:
            doc_freq[term] = doc_freq.get(term, 0) + fresh.doc_freq[term]
    return Vocabulary(version_year, index, doc_freq)


def count_vectorize(stream: TokenStream, vocab: Vocabulary) -> DocTermCounts:
    """Sparse counts over in-vocabulary terms; OOV tokens are ignored."""
    counts: dict[int, int] = {}
    for token in stream.tokens:
        i = vocab.index.get(token)
        if i is not None:
            counts[i] = counts.get(i, 0) + 1
    return DocTermCounts(stream.doc_id, counts, vocab.version_year)


# ---------------------------------------------------------------------------
# Interchange files


def write_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w") as f:
        for term, i in sorted(vocab.index.items(), key=lambda kv: kv[1]):
            f.write(f"{term}\t{i}\t{vocab.doc_freq.get(term, 0)}\n")


def read_vocab(path, version_year: int) -> Vocabulary:
    index: dict[str, int] = {}
    doc_freq: dict[str, int] = {}
    with open(path) as f:
        for line in f:
            term, i, df = line.rstrip("\n").split("\t")
            index[term] = int(i)
            doc_freq[term] = int(df)
    return Vocabulary(version_year, index, doc_freq)


def write_dtm(docs: list[DocTermCounts], path) -> None:
    with open(path, "w") as f:
        f.write("doc_id,index,count\n")
        for doc in docs:
            for i in sorted(doc.counts):
                f.write(f"{doc.doc_id},{i},{doc.counts[i]}\n")


def read_dtm(path, vocab_year: int) -> list[DocTermCounts]:
    docs: dict[str, DocTermCounts] = {}
    with open(path) as f:
        header = f.readline()
        assert header.strip() == "doc_id,index,count"
        for line in f:
            doc_id, i, count = line.rstrip("\n").split(",")
            doc = docs.setdefault(doc_id, DocTermCounts(doc_id, {}, vocab_year))
            doc.counts[int(i)] = int(count)
    return list(docs.values())
