"""Topic-space document representations.

Two routes produce topic-attention vectors: an online variational-Bayes
LDA trained incrementally on yearly minibatches, and fixed-taxonomy phrase
counting. Attention vectors are hard-assignment shares: each token goes to
its argmax topic and the per-topic counts are normalized to sum to one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import psi

from .errors import BadMagic, EmptyBatch
from .textprep import DocTermCounts, TokenStream, Vocabulary, lemmatize, normalize_text

OLDA_MAGIC = b"OLDA"


@dataclass
class OldaConfig:
    n_topics: int = 50
    alpha: float = 1.0
    eta: float = 1.0
    tau0: float = 10.0
    kappa: float = 0.7
    minibatch_size: int = 256
    e_step_tol: float = 1e-3
    e_step_max_iters: int = 100

    def __post_init__(self):
        if self.n_topics < 2:
            raise ValueError("need at least 2 topics")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if not 0.5 < self.kappa <= 1.0:
            raise ValueError("kappa must lie in (0.5, 1] for convergence")


@dataclass
class TopicAttention:
    doc_id: str
    f: np.ndarray
    kind: str  # "olda" | "taxonomy"


def _dirichlet_expectation(x: np.ndarray) -> np.ndarray:
    if x.ndim == 1:
        return psi(x) - psi(x.sum())
    return psi(x) - psi(x.sum(axis=1))[:, None]


@dataclass
class TopicModelState:
    lam: np.ndarray  # K x V variational topic-word parameters
    vocab_year: int
    update_count: int
    seed: int
    config: OldaConfig = field(default_factory=OldaConfig)

    @property
    def n_topics(self) -> int:
        return self.lam.shape[0]

    @property
    def n_terms(self) -> int:
        return self.lam.shape[1]

    def exp_elog_beta(self) -> np.ndarray:
        return np.exp(_dirichlet_expectation(self.lam))


def olda_init(config: OldaConfig, vocab: Vocabulary, seed: int) -> TopicModelState:
    rng = np.random.default_rng(seed)
    lam = rng.gamma(100.0, 1.0 / 100.0, (config.n_topics, len(vocab)))
    return TopicModelState(lam, vocab.version_year, 0, seed, config)


def extend_state(state: TopicModelState, new_vocab: Vocabulary) -> TopicModelState:
    """Append columns for new-vintage terms, initialized at the eta prior."""
    n_new = len(new_vocab) - state.n_terms
    if n_new < 0:
        raise ValueError("vocabulary shrank across vintages")
    if n_new:
        pad = np.full((state.n_topics, n_new), state.config.eta)
        state = TopicModelState(np.hstack([state.lam, pad]),
                                new_vocab.version_year, state.update_count,
                                state.seed, state.config)
    else:
        state = TopicModelState(state.lam, new_vocab.version_year,
                                state.update_count, state.seed, state.config)
    return state


def _doc_e_step(ids, cts, exp_elog_beta, config) -> tuple[np.ndarray, np.ndarray]:
    """Per-doc variational loop; returns (gamma, phi-normalized K x n)."""
    K = exp_elog_beta.shape[0]
    gamma = np.ones(K)
    exp_beta_d = exp_elog_beta[:, ids]  # K x n
    for _ in range(config.e_step_max_iters):
        last = gamma
        exp_theta = np.exp(_dirichlet_expectation(gamma))
        norm = exp_theta @ exp_beta_d + 1e-100
        gamma = config.alpha + exp_theta * (exp_beta_d @ (cts / norm))
        if np.mean(np.abs(gamma - last)) < config.e_step_tol:
            break
    exp_theta = np.exp(_dirichlet_expectation(gamma))
    phi = exp_theta[:, None] * exp_beta_d
    phi /= phi.sum(axis=0, keepdims=True) + 1e-100
    return gamma, phi


def olda_partial_fit(state: TopicModelState, minibatch: list[DocTermCounts],
                     corpus_size: int | None = None) -> TopicModelState:
    """One online VB update: E-step over the minibatch, then a blended M-step
    with learning rate (tau0 + t)^(-kappa)."""
    docs = [d for d in minibatch if d.counts]
    if not docs:
        raise EmptyBatch("minibatch has no non-empty documents")
    cfg = state.config
    D = corpus_size if corpus_size is not None else len(docs)
    exp_elog_beta = state.exp_elog_beta()
    sstats = np.zeros_like(state.lam)
    for doc in docs:
        ids = np.fromiter(doc.counts.keys(), dtype=np.int64)
        cts = np.fromiter(doc.counts.values(), dtype=np.float64)
        _, phi = _doc_e_step(ids, cts, exp_elog_beta, cfg)
        sstats[:, ids] += phi * cts
    rho = (cfg.tau0 + state.update_count) ** (-cfg.kappa)
    lam_hat = cfg.eta + (D / len(docs)) * sstats
    lam = (1.0 - rho) * state.lam + rho * lam_hat
    return TopicModelState(lam, state.vocab_year, state.update_count + 1,
                           state.seed, cfg)


def infer_attention(state: TopicModelState, doc: DocTermCounts) -> TopicAttention:
    """Hard-assignment topic shares; empty documents get the zero vector."""
    f = np.zeros(state.n_topics)
    if doc.counts:
        ids = np.fromiter(doc.counts.keys(), dtype=np.int64)
        cts = np.fromiter(doc.counts.values(), dtype=np.float64)
        _, phi = _doc_e_step(ids, cts, state.exp_elog_beta(), state.config)
        assign = np.argmax(phi, axis=0)  # ties -> lowest topic index
        np.add.at(f, assign, cts)
        f /= f.sum()
    return TopicAttention(doc.doc_id, f, "olda")


def top_tokens(state: TopicModelState, topic: int, terms: list[str],
               n: int = 10) -> list[str]:
    """n highest-weight terms for a topic; ties resolved by term order."""
    row = state.lam[topic]
    order = sorted(range(len(terms)), key=lambda j: (-row[j], terms[j]))
    return [terms[j] for j in order[:min(n, len(terms))]]


def held_out_perplexity(state: TopicModelState, docs: list[DocTermCounts]) -> float:
    """Point-estimate perplexity oracle: exp(-LL/N) with normalized
    gamma/lambda plugged into the mixture likelihood."""
    beta = state.lam / state.lam.sum(axis=1, keepdims=True)
    ll = 0.0
    n_tokens = 0
    exp_elog_beta = state.exp_elog_beta()
    for doc in docs:
        if not doc.counts:
            continue
        ids = np.fromiter(doc.counts.keys(), dtype=np.int64)
        cts = np.fromiter(doc.counts.values(), dtype=np.float64)
        gamma, _ = _doc_e_step(ids, cts, exp_elog_beta, state.config)
        theta = gamma / gamma.sum()
        word_prob = theta @ beta[:, ids]
        ll += float(cts @ np.log(word_prob + 1e-300))
        n_tokens += int(cts.sum())
    if n_tokens == 0:
        return float("inf")
    return float(np.exp(-ll / n_tokens))


# ---------------------------------------------------------------------------
# State serialization: magic "OLDA", u32 K, u32 V, u64 update_count, u64 seed,
# then K*V little-endian float64, row-major.


def save_state(state: TopicModelState, path) -> None:
    with open(path, "wb") as f:
        f.write(OLDA_MAGIC)
        f.write(struct.pack("<IIQQ", state.n_topics, state.n_terms,
                            state.update_count, state.seed))
        f.write(np.ascontiguousarray(state.lam, dtype="<f8").tobytes())


def load_state(path, vocab_year: int, config: OldaConfig | None = None
               ) -> TopicModelState:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != OLDA_MAGIC:
            raise BadMagic(f"{path}: expected {OLDA_MAGIC!r}, got {magic!r}")
        K, V, update_count, seed = struct.unpack("<IIQQ", f.read(24))
        data = f.read(K * V * 8)
        if len(data) != K * V * 8:
            raise BadMagic(f"{path}: truncated lambda block")
        lam = np.frombuffer(data, dtype="<f8").reshape(K, V).copy()
    cfg = config or OldaConfig(n_topics=max(K, 2))
    return TopicModelState(lam, vocab_year, update_count, seed, cfg)


# ---------------------------------------------------------------------------
# Fixed taxonomy


@dataclass
class Taxonomy:
    topic_names: list[str]
    phrases: list[list[tuple[str, ...]]]  # per topic, lemma tuples
    metatopic: dict[str, str]  # topic name -> metatopic

    @property
    def n_topics(self) -> int:
        return len(self.topic_names)


def load_taxonomy(path) -> Taxonomy:
    with open(path) as f:
        raw = json.load(f)
    names, phrase_lists, meta = [], [], {}
    for topic in raw["topics"]:
        names.append(topic["name"])
        lemmas = []
        for phrase in topic["phrases"]:
            toks = lemmatize(normalize_text(phrase).split())
            if toks:
                lemmas.append(tuple(toks))
        if not lemmas:
            raise ValueError(f"taxonomy topic {topic['name']} has no phrases")
        phrase_lists.append(lemmas)
        meta[topic["name"]] = topic["metatopic"]
    return Taxonomy(names, phrase_lists, meta)


def taxonomy_vectorize(stream: TokenStream, taxonomy: Taxonomy) -> TopicAttention:
    """Count phrase hits, longest-match-first and non-overlapping, then
    normalize to a unit-sum attention vector."""
    by_first: dict[str, list[tuple[tuple[str, ...], int]]] = {}
    for t, phrases in enumerate(taxonomy.phrases):
        for phrase in phrases:
            by_first.setdefault(phrase[0], []).append((phrase, t))
    for cands in by_first.values():
        cands.sort(key=lambda pt: (-len(pt[0]), pt[1]))

    counts = np.zeros(taxonomy.n_topics)
    tokens = stream.tokens
    i = 0
    while i < len(tokens):
        matched = False
        for phrase, t in by_first.get(tokens[i], ()):
            if tuple(tokens[i:i + len(phrase)]) == phrase:
                counts[t] += 1
                i += len(phrase)
                matched = True
                break
        if not matched:
            i += 1
    total = counts.sum()
    if total > 0:
        counts /= total
    return TopicAttention(stream.doc_id, counts, "taxonomy")


def write_attention(attentions: list[TopicAttention], path) -> None:
    if not attentions:
        raise ValueError("no attention vectors to write")
    K = len(attentions[0].f)
    with open(path, "w") as f:
        f.write("doc_id," + ",".join(f"i_{i}" for i in range(K)) + "\n")
        for att in attentions:
            f.write(att.doc_id + ","
                    + ",".join(repr(float(v)) for v in att.f) + "\n")


def read_attention(path, kind: str) -> list[TopicAttention]:
    out = []
    with open(path) as f:
        f.readline()
        for line in f:
            cells = line.rstrip("\n").split(",")
            out.append(TopicAttention(cells[0],
                                      np.array([float(c) for c in cells[1:]]),
                                      kind))
    return out
