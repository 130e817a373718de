"""Synthetic fixture generator: a planted-truth dataset in the pipeline's
interchange formats, sized for desk-scale verification.

Returns are planted as ret = b_surprise * surprise + b_soft * latent + noise,
where the latent text signal is a polarity-weighted function of each
document's topic mixture. Every downstream stage can therefore be checked
against known coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path

import numpy as np

from .features import FeatureRecord, TokenEmbeddingMatrix, write_embeddings, \
    write_token_matrices

ET = timezone(timedelta(hours=-5), "ET")

_CONSONANTS = "bcdfghjklmnpqrtvwxz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    out_dir: Path
    year_start: int = 2005
    year_end: int = 2012
    docs_per_year: int = 2000
    announce_days_per_year: int = 60
    n_firms: int = 500
    n_true_topics: int = 8
    words_per_topic: int = 30
    tokens_per_doc: int = 150
    b_surprise: float = 0.8
    b_soft: float = 0.6
    surprise_sd: float = 0.02
    soft_sd: float = 0.02
    noise_sd: float = 0.03
    spread_rel: float = 0.01
    wide_spread_frac: float = 0.02
    # isotropic noise comparable to the planted low-rank signal keeps the
    # embedding covariance well conditioned, so coordinate descent converges
    embed_noise_sd: float = 1.0
    tok_docs_per_year: int = 5
    seed: int = 0

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)


def _word(idx: int) -> str:
    """Deterministic letter-only pseudo-word that survives normalization
    and the suffix lemmatizer (never ends in s)."""
    out = []
    i = idx
    while True:
        out.append(_CONSONANTS[i % len(_CONSONANTS)])
        out.append(_VOWELS[(i // len(_CONSONANTS)) % len(_VOWELS)])
        i //= len(_CONSONANTS) * len(_VOWELS)
        if i == 0:
            break
    return "zq" + "".join(out)


BOILERPLATE_HTML = """
<table><tr><td>Q1</td><td>123.4</td></tr><tr><td>Q2</td><td>567.8</td></tr></table>
<p>Forward-looking statements in this release are subject to risks.</p>
<p>For more information contact Investor Relations at 555-123-4567.</p>
"""


def _doc_html(words: list[str], firm: str) -> str:
    paras = []
    for start in range(0, len(words), 25):
        paras.append("<p>" + " ".join(words[start:start + 25]) + ".</p>")
    return ("<html><body><p>Exhibit 99.1</p><p>For Immediate Release</p>"
            f"<p>{firm} reports quarterly results.</p>"
            + "".join(paras) + BOILERPLATE_HTML + "</body></html>")


@dataclass
class SynthTruth:
    """Ground truth retained for oracle checks."""
    soft_latent: dict[str, float] = field(default_factory=dict)
    surprise: dict[str, float] = field(default_factory=dict)
    theta: dict[str, np.ndarray] = field(default_factory=dict)
    polarity: np.ndarray | None = None


def _trading_calendar(cfg: SynthConfig) -> list[date]:
    days = []
    d = date(cfg.year_start, 1, 2)
    end = date(cfg.year_end + 1, 1, 31)
    while d <= end:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return days


def make_synthetic(cfg: SynthConfig) -> SynthTruth:
    rng = np.random.default_rng(cfg.seed)
    out = cfg.out_dir
    (out / "html").mkdir(parents=True, exist_ok=True)
    truth = SynthTruth()

    K = cfg.n_true_topics
    vocab = [_word(i) for i in range(K * cfg.words_per_topic)]
    topic_words = [vocab[k * cfg.words_per_topic:(k + 1) * cfg.words_per_topic]
                   for k in range(K)]
    polarity = rng.standard_normal(K)
    polarity -= polarity.mean()
    truth.polarity = polarity

    calendar = _trading_calendar(cfg)
    cal_by_year: dict[int, list[date]] = {}
    for d in calendar:
        cal_by_year.setdefault(d.year, []).append(d)
    cal_index = {d: i for i, d in enumerate(calendar)}

    # per-kind embedding projections; bert and finbert deliberately correlated
    m_bert = rng.standard_normal((768, K))
    kind_proj = {
        "bert": m_bert,
        "finbert": m_bert + 0.5 * rng.standard_normal((768, K)),
        "mpnet": rng.standard_normal((768, K)),
    }

    manifest_rows = []
    event_rows = []
    forecast_rows = []
    quote_rows = []
    doc_seq = 0

    # calibrate the latent soft scale: theta @ polarity has some raw sd
    probe = rng.dirichlet([0.08] * K, size=4000) @ polarity
    latent_scale = cfg.soft_sd / probe.std()
    latent_center = probe.mean() * latent_scale

    for year in range(cfg.year_start, cfg.year_end + 1):
        year_days = [d for d in cal_by_year[year] if d.day > 3]
        ann_days = sorted(rng.choice(len(year_days),
                                     size=min(cfg.announce_days_per_year,
                                              len(year_days)),
                                     replace=False))
        ann_days = [year_days[i] for i in ann_days]
        emb_records: dict[str, list[FeatureRecord]] = {k: [] for k in kind_proj}
        tok_mats: dict[str, list[TokenEmbeddingMatrix]] = {k: [] for k in kind_proj}
        firms_order = rng.permutation(cfg.n_firms)

        used_keys: set[tuple[int, date]] = set()
        for i in range(cfg.docs_per_year):
            doc_id = str(doc_seq)
            doc_seq += 1
            permno = 10001 + int(firms_order[i % cfg.n_firms])
            tau = ann_days[int(rng.integers(len(ann_days)))]
            while (permno, tau) in used_keys:
                tau = ann_days[int(rng.integers(len(ann_days)))]
            used_keys.add((permno, tau))

            theta = rng.dirichlet([0.08] * K)
            soft_latent = float(theta @ polarity) * latent_scale - latent_center
            words_idx = rng.choice(cfg.words_per_topic, size=cfg.tokens_per_doc)
            topics_idx = rng.choice(K, size=cfg.tokens_per_doc, p=theta)
            words = [topic_words[t][w] for t, w in zip(topics_idx, words_idx)]

            surprise = float(rng.normal(0.0, cfg.surprise_sd))
            ret_day = (cfg.b_surprise * surprise + cfg.b_soft * soft_latent
                       + float(rng.normal(0.0, cfg.noise_sd)))
            ret_prev = float(rng.normal(0.0, 0.01))
            price_tm5 = float(np.exp(rng.normal(3.4, 0.5)))
            eps_consensus = round(0.05 * price_tm5 + float(rng.normal(0, 0.1)), 4)
            eps_actual = eps_consensus + surprise * price_tm5
            surprise = (eps_actual - eps_consensus) / price_tm5  # exact re-derivation
            mktcap = float(np.exp(rng.normal(21.0, 1.2)))

            # announce after the prior close or before the open of tau
            if rng.random() < 0.5:
                prev = calendar[cal_index[tau] - 1]
                ts = datetime.combine(prev, time(16, 30), tzinfo=ET)
            else:
                ts = datetime.combine(tau, time(7, 30), tzinfo=ET)

            html_path = f"html/{doc_id}.html"
            (out / html_path).write_text(_doc_html(words, f"Firm{permno}"))
            manifest_rows.append((doc_id, permno, ts.isoformat(), html_path))
            event_rows.append((permno, ts.isoformat(), eps_actual, eps_consensus,
                               price_tm5, ret_day, ret_prev, mktcap))
            delta = abs(float(rng.normal(0, 0.05))) + 0.01
            for j, off in enumerate((-delta, 0.0, delta)):
                forecast_rows.append((permno, f"an{j}",
                                      (ts.date() - timedelta(days=10 + j)).isoformat(),
                                      round(eps_consensus + off, 4)))

            prev_close = 50.0
            close = prev_close * (1.0 + ret_day)
            mid_open = close * (1.0 + float(rng.normal(0, 0.002)))
            rel = cfg.spread_rel
            if rng.random() < cfg.wide_spread_frac:
                rel = 0.25
            half = rel / 2.0
            quote_rows.append((permno, tau.isoformat(),
                               mid_open * (1 - half), mid_open * (1 + half),
                               close, close * (1 - half), close * (1 + half)))

            truth.soft_latent[doc_id] = soft_latent
            truth.surprise[doc_id] = surprise
            truth.theta[doc_id] = theta

            for kind, proj in kind_proj.items():
                vec = proj @ theta + rng.normal(0, cfg.embed_noise_sd, 768)
                emb_records[kind].append(
                    FeatureRecord(doc_id, kind, vec.astype(np.float64), year))
                if len(tok_mats[kind]) < cfg.tok_docs_per_year:
                    toks = (["[CLS]"] + words[:20]
                            + ["##piece", "7", ".", "q"] + ["[SEP]"])
                    E = np.vstack([proj[:, topics_idx[min(r, len(topics_idx) - 1)]]
                                   + rng.normal(0, 0.05, 768)
                                   for r in range(len(toks))])
                    tok_mats[kind].append(
                        TokenEmbeddingMatrix(doc_id, kind, E, toks))

        for kind in kind_proj:
            write_embeddings(emb_records[kind], out / f"emb_{kind}_{year}.bin")
            write_token_matrices(tok_mats[kind], out / f"tok_{kind}_{year}.bin",
                                 rows=32)

    with open(out / "manifest.csv", "w") as f:
        f.write("doc_id,permno,announce_ts,html_path\n")
        for row in manifest_rows:
            f.write(",".join(str(v) for v in row) + "\n")
    with open(out / "events.csv", "w") as f:
        f.write("permno,announce_ts,eps_actual,eps_consensus,price_tm5,"
                "ret_day,ret_prev_day,mktcap_tm1\n")
        for row in event_rows:
            f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                             for v in row) + "\n")
    with open(out / "forecasts.csv", "w") as f:
        f.write("permno,analyst_id,issue_date,eps_forecast\n")
        for row in forecast_rows:
            f.write(",".join(str(v) for v in row) + "\n")
    with open(out / "calendar.txt", "w") as f:
        for d in calendar:
            f.write(d.isoformat() + "\n")
    with open(out / "quotes.csv", "w") as f:
        f.write("permno,date,bid_0945,ask_0945,close,bid_close,ask_close\n")
        for row in quote_rows:
            f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                             for v in row) + "\n")

    metatopic_names = ["Financial Performance", "Sector-Specific News",
                       "Market and Economic Factors", "Operations and Cost Management"]
    taxonomy = {"topics": [
        {"name": f"Planted Topic {k}",
         "phrases": topic_words[k],
         "metatopic": metatopic_names[k % len(metatopic_names)]}
        for k in range(K)]}
    with open(out / "taxonomy.json", "w") as f:
        json.dump(taxonomy, f, indent=1)

    factor_rng = np.random.default_rng(cfg.seed + 1)
    with open(out / "factors.csv", "w") as f:
        f.write("date,mkt_rf,smb,hml,rf\n")
        for d in calendar:
            mkt, smb, hml = (float(v) for v in
                             factor_rng.normal(0, [0.01, 0.005, 0.005]))
            f.write(f"{d.isoformat()},{mkt!r},{smb!r},{hml!r},0.0\n")

    with open(out / "truth.json", "w") as f:
        json.dump({"soft_latent": truth.soft_latent,
                   "surprise": truth.surprise,
                   "b_surprise": cfg.b_surprise,
                   "b_soft": cfg.b_soft,
                   "polarity": polarity.tolist()}, f)
    return truth
