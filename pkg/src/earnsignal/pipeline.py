"""Stage orchestration: ingest -> prep -> topics -> features -> score ->
regress -> insight -> backtest -> precision, with content-hash caching.

Each stage reads only its declared inputs and writes its declared outputs;
the run ledger records hashes so unchanged stages are skipped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from . import backtest as bt
from . import corpus as cp
from . import econometrics as em
from . import features as ft
from . import insight as ins
from . import reports as rp
from . import scoring as sc
from . import textprep as tp
from . import topics as tm
from .config import PipelineConfig
from .errors import EmptyBody, EmptyDay, MissingUpstream
from .insight import OTHER_CATEGORY, HttpLabeler, StubLabeler

log = logging.getLogger(__name__)

EMB_KINDS = ("bert", "mpnet", "finbert")
TOPIC_KINDS = ("bkmx", "olda")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Shared loaders


def _taxonomy_path(config: PipelineConfig) -> Path:
    if config.taxonomy_path is not None:
        return config.taxonomy_path
    from importlib import resources
    return Path(str(resources.files("earnsignal.data") / "taxonomy_mini.json"))


def _load_docs(config: PipelineConfig) -> list[dict]:
    path = config.out_dir / "docs_clean.jsonl"
    if not path.exists():
        raise MissingUpstream(str(path))
    docs = []
    with open(path) as f:
        for line in f:
            docs.append(json.loads(line))
    return docs


def _load_events(config: PipelineConfig) -> pd.DataFrame:
    path = config.out_dir / "events_enriched.csv"
    if not path.exists():
        raise MissingUpstream(str(path))
    return pd.read_csv(path, dtype={"doc_id": str},
                       parse_dates=["tau_eff"], date_format="%Y-%m-%d")


def _load_tokens(config: PipelineConfig) -> dict[int, list[tp.TokenStream]]:
    path = config.out_dir / "tokens.jsonl"
    if not path.exists():
        raise MissingUpstream(str(path))
    by_year: dict[int, list[tp.TokenStream]] = {}
    with open(path) as f:
        for line in f:
            row = json.loads(line)
            by_year.setdefault(row["year"], []).append(
                tp.TokenStream(row["doc_id"], row["tokens"]))
    return by_year


def _load_scores(config: PipelineConfig, kind: str) -> pd.DataFrame:
    path = config.out_dir / f"softs_{kind}.csv"
    if not path.exists():
        raise MissingUpstream(str(path))
    return pd.read_csv(path, dtype={"doc_id": str})


def _event_tuples(events: pd.DataFrame, year: int
                  ) -> list[tuple[str, int, date, float]]:
    sub = events[events["year"] == year]
    return [(r.doc_id, int(r.permno), r.tau_eff.date(), float(r.ret_day))
            for r in sub.itertuples()]


def _make_labeler(config: PipelineConfig):
    stub = StubLabeler()
    if config.labeler.mode == "http":
        primary = HttpLabeler(config.labeler.url)
        fallback = stub if config.labeler.allow_fallback else None
        return primary, fallback
    return stub, None


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(config: PipelineConfig) -> None:
    manifest = cp.read_manifest(config.input_path("manifest.csv"))
    calendar = cp.TradingCalendar.from_file(config.input_path("calendar.txt"))
    events_df = cp.read_events(config.input_path("events.csv"))
    forecasts_path = config.input_path("forecasts.csv")
    forecasts = cp.read_forecasts(forecasts_path) if forecasts_path.exists() else []
    forecasts_by_permno: dict[int, list] = {}
    for fc in forecasts:
        forecasts_by_permno.setdefault(fc.permno, []).append(fc)

    report = {"parse_failures": [], "dropped": {}, "unmatched_docs": [],
              "duplicate_docs": []}
    docs: list[cp.PressReleaseDoc] = []
    for row in manifest.itertuples():
        ts = datetime.fromisoformat(row.announce_ts)
        raw = (config.input_dir / row.html_path).read_text()
        doc = cp.PressReleaseDoc(row.doc_id, int(row.permno), ts, raw)
        try:
            doc.clean_text = cp.clean_press_release(raw)
        except EmptyBody:
            report["parse_failures"].append(doc.doc_id)
            continue
        keep, reason = cp.retain_document(doc)
        if not keep:
            report["dropped"][doc.doc_id] = reason
            continue
        docs.append(doc)

    tau_by_doc = {d.doc_id: cp.effective_trading_day(d.announce_ts, calendar)
                  for d in docs}

    events = []
    for row in events_df.itertuples():
        ts = datetime.fromisoformat(row.announce_ts)
        if hasattr(row, "eps_consensus") and pd.notna(row.eps_consensus):
            consensus = float(row.eps_consensus)
        else:
            consensus = cp.consensus_eps(
                forecasts_by_permno.get(int(row.permno), []), ts.date())
        surprise = cp.compute_surprise(float(row.eps_actual), consensus,
                                       float(row.price_tm5))
        events.append(cp.EarningsEvent(
            int(row.permno), ts, float(row.eps_actual), consensus,
            float(row.price_tm5), surprise, float(row.ret_day),
            float(row.ret_prev_day), float(row.mktcap_tm1),
            cp.effective_trading_day(ts, calendar)))

    join = cp.join_docs_events(docs, tau_by_doc, events)
    report["unmatched_docs"] = join.unmatched_docs
    report["duplicate_docs"] = join.duplicate_docs

    with open(config.out_dir / "docs_clean.jsonl", "w") as f:
        for doc, ev in join.matched:
            f.write(json.dumps({
                "doc_id": doc.doc_id, "permno": doc.permno,
                "announce_ts": doc.announce_ts.isoformat(),
                "tau_eff": ev.tau_eff.isoformat(), "year": ev.tau_eff.year,
                "clean_text": doc.clean_text}) + "\n")
    with open(config.out_dir / "events_enriched.csv", "w") as f:
        f.write("doc_id,permno,announce_ts,tau_eff,year,surprise,eps_actual,"
                "eps_consensus,price_tm5,ret_day,ret_prev_day,mktcap_tm1\n")
        for doc, ev in join.matched:
            f.write(f"{doc.doc_id},{ev.permno},{ev.announce_ts.isoformat()},"
                    f"{ev.tau_eff.isoformat()},{ev.tau_eff.year},{ev.surprise!r},"
                    f"{ev.eps_actual!r},{ev.eps_consensus!r},{ev.price_tm5!r},"
                    f"{ev.ret_day!r},{ev.ret_prev_day!r},{ev.mktcap_tm1!r}\n")

    matched_docs = [doc for doc, _ in join.matched]
    stats = cp.corpus_stats(matched_docs, tau_by_doc)
    with open(config.out_dir / "corpus_stats.csv", "w") as f:
        f.write("year,article_count,distinct_stock_count,mean_char_count\n")
        for year, st in stats.items():
            f.write(f"{year},{st['article_count']},{st['distinct_stock_count']},"
                    f"{st['mean_char_count']!r}\n")
    rp.corpus_stats_figure(stats, config.out_dir / "corpus_stats.png")
    with open(config.out_dir / "ingest_report.json", "w") as f:
        json.dump(report, f, indent=1)


def stage_prep(config: PipelineConfig) -> None:
    docs = _load_docs(config)
    vs = config.vocab
    streams_by_year: dict[int, list[tp.TokenStream]] = {}
    with open(config.out_dir / "tokens.jsonl", "w") as f:
        for doc in sorted(docs, key=lambda d: (d["year"], d["doc_id"])):
            stream = tp.tokenize(doc["doc_id"], doc["clean_text"])
            streams_by_year.setdefault(doc["year"], []).append(stream)
            f.write(json.dumps({"doc_id": stream.doc_id, "year": doc["year"],
                                "tokens": stream.tokens}) + "\n")

    vocab = None
    for year in sorted(streams_by_year):
        streams = streams_by_year[year]
        if vocab is None:
            vocab = tp.build_vocabulary(streams, year, vs.min_df,
                                        vs.max_df_ratio, vs.max_size)
        else:
            vocab = tp.extend_vocabulary(vocab, streams, year, vs.min_df,
                                         vs.max_df_ratio, vs.max_size)
        tp.write_vocab(vocab, config.out_dir / f"vocab_{year}.tsv")
        counts = [tp.count_vectorize(s, vocab) for s in streams]
        tp.write_dtm(counts, config.out_dir / f"dtm_{year}.csv")


def stage_topics(config: PipelineConfig) -> None:
    streams_by_year = _load_tokens(config)
    years = sorted(streams_by_year)
    taxonomy = tm.load_taxonomy(_taxonomy_path(config))
    state = None
    prev_vocab = None
    for year in years:
        streams = streams_by_year[year]
        vocab = tp.read_vocab(config.out_dir / f"vocab_{year}.tsv", year)
        if state is None:
            # seed year: no earlier vintage exists, so attention is produced
            # with the state trained on this same year (flagged in ledger docs)
            state = tm.olda_init(config.olda, vocab, config.seed)
            state = _train_year(state, streams, vocab, config)
            atts = _infer_year(state, streams, vocab)
        else:
            scored_counts = [tp.count_vectorize(s, prev_vocab) for s in streams]
            atts = [tm.infer_attention(state, c) for c in scored_counts]
            state = tm.extend_state(state, vocab)
            state = _train_year(state, streams, vocab, config)
        tm.save_state(state, config.out_dir / f"olda_state_{year}.bin")
        tm.write_attention(atts, config.out_dir / f"attention_olda_{year}.csv")
        tax_atts = [tm.taxonomy_vectorize(s, taxonomy) for s in streams]
        tm.write_attention(tax_atts,
                           config.out_dir / f"attention_bkmx_{year}.csv")
        prev_vocab = vocab

    terms = prev_vocab.terms
    with open(config.out_dir / "topic_top_tokens.csv", "w") as f:
        f.write("topic,rank,token\n")
        for k in range(state.n_topics):
            for rank, tok in enumerate(tm.top_tokens(state, k, terms, n=10)):
                f.write(f"{k},{rank},{tok}\n")


def _train_year(state, streams, vocab, config: PipelineConfig):
    counts = [tp.count_vectorize(s, vocab) for s in streams]
    counts = [c for c in counts if c.counts]
    bs = config.olda.minibatch_size
    for start in range(0, len(counts), bs):
        state = tm.olda_partial_fit(state, counts[start:start + bs],
                                    corpus_size=len(counts))
    return state


def _infer_year(state, streams, vocab):
    counts = [tp.count_vectorize(s, vocab) for s in streams]
    return [tm.infer_attention(state, c) for c in counts]


def _read_emb(path: Path, year: int, known: set[str]) -> list[ft.FeatureRecord]:
    # the store may hold docs that ingest later dropped; keep the overlap
    return [r for r in ft.read_embeddings(path, year) if r.doc_id in known]


def stage_features(config: PipelineConfig) -> None:
    events = _load_events(config)
    known = set(events["doc_id"])
    recs: dict[str, list[ft.FeatureRecord]] = {k: [] for k in EMB_KINDS}
    for kind in EMB_KINDS:
        for year in config.years:
            path = config.emb_dir / f"emb_{kind}_{year}.bin"
            if not path.exists():
                raise MissingUpstream(str(path))
            recs[kind].extend(_read_emb(path, year, known))
    with open(config.out_dir / "cosine_stats.csv", "w") as f:
        f.write("kind_a,kind_b,mean,std,min,max,n\n")
        for a, b in (("bert", "finbert"), ("bert", "mpnet")):
            st = ft.cosine_stats(recs[a], recs[b])
            f.write(f"{a},{b},{st['mean']!r},{st['std']!r},{st['min']!r},"
                    f"{st['max']!r},{st['n']}\n")


def _attention_records(config: PipelineConfig, kind: str,
                       year: int) -> list[ft.FeatureRecord]:
    path = config.out_dir / f"attention_{kind}_{year}.csv"
    if not path.exists():
        raise MissingUpstream(str(path))
    return [ft.FeatureRecord(a.doc_id, kind, a.f, year)
            for a in tm.read_attention(path, kind)]


def _data_by_year(config: PipelineConfig, kind: str, events: pd.DataFrame
                  ) -> dict[int, tuple[np.ndarray, np.ndarray, list[str]]]:
    out = {}
    known = set(events["doc_id"])
    for year in config.years:
        tuples = _event_tuples(events, year)
        if not tuples:
            continue
        if kind in EMB_KINDS:
            path = config.emb_dir / f"emb_{kind}_{year}.bin"
            records = _read_emb(path, year, known)
        else:
            records = _attention_records(config, kind, year)
        out[year] = ft.assemble_matrix(records, tuples)
    return out


def stage_score(config: PipelineConfig) -> None:
    events = _load_events(config)
    meta = {r.doc_id: (int(r.permno), r.tau_eff.date().isoformat())
            for r in events.itertuples()}
    ls = config.lasso
    scores_by_kind: dict[str, list[sc.SoftScore]] = {}
    for kind in sc.SOFT_KINDS:
        data = _data_by_year(config, kind, events)
        scores, fits = sc.rolling_scores(kind, data, ls.lam, ls.tol,
                                         ls.max_iters)
        scores_by_kind[kind] = scores
        sc.write_scores(scores, meta, config.out_dir / f"softs_{kind}.csv")
        for year, fit in fits.items():
            sc.save_fit(fit, config.out_dir / f"lasso_fit_{kind}_{year}.json")

    surprise_by_year = {}
    for year in config.years:
        sub = events[events["year"] == year].sort_values(["tau_eff", "permno"])
        if len(sub):
            surprise_by_year[year] = (sub["surprise"].to_numpy(),
                                      sub["ret_day"].to_numpy(),
                                      sub["doc_id"].tolist())
    oos = sc.oos_surprise(surprise_by_year)
    sc.write_scores(oos, meta, config.out_dir / "softs_oos_surprise.csv")

    mean_result = sc.soft_mean(scores_by_kind)
    sc.write_scores(mean_result.scores, meta, config.out_dir / "softs_mean.csv")
    with open(config.out_dir / "soft_mean_excluded.json", "w") as f:
        json.dump(mean_result.excluded, f)


def _regression_frame(config: PipelineConfig) -> pd.DataFrame:
    """Pooled 2nd-year-onward sample with all score columns joined."""
    events = _load_events(config)
    frame = events.set_index("doc_id")
    for kind in list(sc.SOFT_KINDS) + ["oos_surprise", "mean"]:
        scores = _load_scores(config, kind).set_index("doc_id")
        frame[f"soft_{kind}"] = scores["value"]
    frame = frame.dropna(subset=["soft_mean"])
    frame = frame.reset_index().sort_values(["tau_eff", "permno"])
    frame["surprise_w"] = em.winsorize(frame["surprise"].to_numpy(),
                                       config.winsorize.lo_pct,
                                       config.winsorize.hi_pct)
    return frame


def _clustered_with_shap(frame: pd.DataFrame, y_col: str, x_cols: list[str],
                         names: list[str]) -> tuple[em.RegressionResult,
                                                    em.ShapleyReport]:
    y = frame[y_col].to_numpy()
    X = np.column_stack([np.ones(len(frame))]
                        + [frame[c].to_numpy() for c in x_cols])
    res = em.ols_two_way_clustered(y, X, frame["permno"].to_numpy(),
                                   frame["tau_eff"].to_numpy(),
                                   names=["Intercept"] + names)
    feats = X[:, 1:]
    shap = em.shapley_linear(res.coef[1:], res.coef[0], feats, names=names)
    return res, shap


def stage_regress(config: PipelineConfig) -> None:
    frame = _regression_frame(config)

    kind_label = {"bkmx": "BKMX", "olda": "OLDA", "bert": "BERT",
                  "mpnet": "MPNET", "finbert": "FINBERT"}
    table1 = {"(1)": _clustered_with_shap(frame, "ret_day", ["surprise_w"],
                                          ["Surprise"])}
    for kind in sc.SOFT_KINDS:
        table1[kind_label[kind]] = _clustered_with_shap(
            frame, "ret_day", ["surprise_w", f"soft_{kind}"],
            ["Surprise", "Soft"])

    table2 = {}
    for kind in ("bkmx", "olda", "bert", "mpnet"):
        table2[f"{kind_label[kind]}+FINBERT"] = _clustered_with_shap(
            frame, "ret_day", ["surprise_w", f"soft_{kind}", "soft_finbert"],
            ["Surprise", f"Soft {kind_label[kind]}", "Soft FINBERT"])
    table2["ALL"] = _clustered_with_shap(
        frame, "ret_day",
        ["surprise_w"] + [f"soft_{k}" for k in sc.SOFT_KINDS],
        ["Surprise"] + [f"Soft {kind_label[k]}" for k in sc.SOFT_KINDS])

    table3 = {
        "(1)": _clustered_with_shap(frame, "ret_day",
                                    ["surprise_w", "soft_mean"],
                                    ["Surprise", "Soft Mean"]),
        "(2)": _clustered_with_shap(frame, "ret_day",
                                    ["soft_oos_surprise", "soft_finbert"],
                                    ["OOS-Surprise", "Soft FINBERT"]),
        "(3)": _clustered_with_shap(frame, "ret_day",
                                    ["soft_oos_surprise", "soft_mean"],
                                    ["OOS-Surprise", "Soft Mean"]),
        "(4) prior day": _clustered_with_shap(frame, "ret_prev_day",
                                              ["surprise_w", "soft_finbert"],
                                              ["Surprise", "Soft FINBERT"]),
    }

    specs = [("table1", table1,
              ["Surprise", "Soft", "Intercept"]),
             ("table2", table2,
              ["Surprise"] + [f"Soft {kind_label[k]}" for k in sc.SOFT_KINDS]
              + ["Intercept"]),
             ("table3", table3,
              ["Surprise", "OOS-Surprise", "Soft Mean", "Soft FINBERT",
               "Intercept"])]
    for name, cols, rows in specs:
        rp.write_regression_csv(cols, config.out_dir / f"regress_{name}.csv")
        (config.out_dir / f"regress_{name}.txt").write_text(
            rp.regression_table(cols, rows))

    quarters = np.array([f"{d.year}Q{(d.month - 1) // 3 + 1}"
                         for d in frame["tau_eff"]])
    grid = em.quintile_heatmap(frame["soft_mean"].to_numpy(),
                               frame["surprise_w"].to_numpy(),
                               frame["ret_day"].to_numpy(), quarters,
                               frame["permno"].to_numpy())
    with open(config.out_dir / "heatmap.csv", "w") as f:
        f.write("surprise_quintile,soft_quintile,mean_ret,count\n")
        for i in range(5):
            for j in range(5):
                f.write(f"{i},{j},{float(grid.mean_ret[i, j])!r},"
                        f"{int(grid.counts[i, j])}\n")
    rp.heatmap_figure(grid, config.out_dir / "heatmap.png")


def stage_insight(config: PipelineConfig) -> None:
    taxonomy = tm.load_taxonomy(_taxonomy_path(config))
    labeler, fallback = _make_labeler(config)
    categories = sorted({c for _, c in StubLabeler().table}
                        | set(taxonomy.metatopic.values()))
    cache_path = config.out_dir / "label_cache.json"

    maps: dict[str, ins.MetatopicMap] = {}
    maps["bkmx"] = ins.MetatopicMap(
        "bkmx", {i: taxonomy.metatopic[name]
                 for i, name in enumerate(taxonomy.topic_names)})
    top_df = pd.read_csv(config.out_dir / "topic_top_tokens.csv")
    topic_text = {int(k): " ".join(g.sort_values("rank")["token"])
                  for k, g in top_df.groupby("topic")}
    labels = ins.label_items([topic_text[k] for k in sorted(topic_text)],
                             categories, labeler, cache_path, fallback)
    maps["olda"] = ins.MetatopicMap(
        "olda", {k: labels[topic_text[k]] for k in sorted(topic_text)})
    for kind in TOPIC_KINDS:
        maps[kind].save(config.out_dir / f"metatopics_{kind}.json")

    # metatopic weights / polarity / explained variance per (kind, year)
    rows = []
    polarity_by_kind: dict[str, dict[int, dict[str, int]]] = {}
    for kind in TOPIC_KINDS:
        mmap = maps[kind]
        agg_map = ins.MetatopicMap(kind, {
            i: m for i, m in mmap.mapping.items() if m != OTHER_CATEGORY})
        fits = {}
        for year in config.years:
            path = config.out_dir / f"lasso_fit_{kind}_{year}.json"
            if path.exists():
                fits[year] = sc.load_fit(path)
        polarity_by_kind[kind] = ins.polarity_series(fits, mmap)
        for year, fit in fits.items():
            score_year = year + 1
            att_path = config.out_dir / f"attention_{kind}_{score_year}.csv"
            if not att_path.exists():
                continue
            atts = tm.read_attention(att_path, kind)
            A = np.vstack([a.f for a in atts])
            weights = ins.metatopic_weight(fit, mmap)
            if agg_map.mapping:
                try:
                    h = ins.metatopic_explained_variance(A, fit, agg_map)
                except Exception as exc:
                    log.warning("h(M) skipped for (%s, %d): %s", kind,
                                score_year, exc)
                    h = {}
            else:
                log.warning("no labeled metatopics for %s; h(M) skipped", kind)
                h = {}
            for meta in sorted(weights):
                rows.append((score_year, kind, meta, weights[meta],
                             h.get(meta, ""), int(np.sign(weights[meta]))))
    with open(config.out_dir / "metatopic_report.csv", "w") as f:
        f.write("score_year,kind,metatopic,weight,explained_variance,polarity\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    rp.polarity_figure(polarity_by_kind, config.out_dir / "polarity.png")

    # embedding-token importance and classification shares
    events = _load_events(config)
    known = set(events["doc_id"])
    year_of = dict(zip(events["doc_id"], events["year"]))
    class_rows = []
    for kind in EMB_KINDS:
        signed: dict[str, list[str]] = {"pos": [], "neg": []}
        for year in config.years:
            tok_path = config.emb_dir / f"tok_{kind}_{year}.bin"
            if not tok_path.exists():
                continue
            mats = [m for m in ft.read_token_matrices(tok_path)
                    if m.doc_id in known]
            for mat in mats:
                fit_year = year_of.get(mat.doc_id, year) - 1
                fit_path = config.out_dir / f"lasso_fit_{kind}_{fit_year}.json"
                if not fit_path.exists():
                    continue
                imp = ins.token_importance(mat, sc.load_fit(fit_path))
                signed["pos"].extend(imp.top_positive)
                signed["neg"].extend(imp.top_negative)
        unique_tokens = sorted(set(signed["pos"]) | set(signed["neg"]))
        labels = ins.label_items(unique_tokens, categories, labeler,
                                 cache_path, fallback)
        shares = ins.classification_shares(
            {s: [labels[t] for t in toks] for s, toks in signed.items()},
            categories)
        for sign in ("pos", "neg"):
            for cat in categories:
                class_rows.append((kind, sign, cat, shares[sign][cat]))
    with open(config.out_dir / "token_classification.csv", "w") as f:
        f.write("model,sign,category,share_pct\n")
        for row in class_rows:
            f.write(",".join(str(v) for v in row) + "\n")


def _signal_days(config: PipelineConfig) -> dict[date, list[bt.SignalRecord]]:
    events = _load_events(config)
    scores = _load_scores(config, "mean").set_index("doc_id")
    frame = events.set_index("doc_id")
    frame["soft_mean"] = scores["value"]
    frame = frame.dropna(subset=["soft_mean"])
    days: dict[date, list[bt.SignalRecord]] = {}
    for r in frame.itertuples():
        d = r.tau_eff.date()
        days.setdefault(d, []).append(bt.SignalRecord(
            int(r.permno), d, float(r.surprise), float(r.soft_mean),
            float(r.mktcap_tm1), float(r.ret_day)))
    return days


def stage_backtest(config: PipelineConfig) -> None:
    days = _signal_days(config)
    quotes = bt.read_quotes(config.input_path("quotes.csv"))
    factors_df = pd.read_csv(config.input_path("factors.csv"))
    factors = {date.fromisoformat(str(r.date)):
               (float(r.mkt_rf), float(r.hml), float(r.smb))
               for r in factors_df.itertuples()}

    all_portfolios = []
    series_by_rank = {}
    skipped: dict[str, int] = {}
    for rank_by in ("surprise", "soft"):
        portfolios = []
        for day in sorted(days):
            day_quotes = quotes.get(day, {})
            try:
                p = bt.build_day_portfolio(days[day], day_quotes, rank_by)
            except EmptyDay:
                skipped[rank_by] = skipped.get(rank_by, 0) + 1
                continue
            portfolios.append(bt.leg_returns(p, day_quotes))
        series_by_rank[rank_by] = bt.ls_series(portfolios)
        all_portfolios.extend(portfolios)
    bt.write_ls_series(all_portfolios, config.out_dir / "ls_series.csv")

    with open(config.out_dir / "alpha_regressions.csv", "w") as f:
        f.write("rank_by,strategy,model,term,coef,se,tstat,n\n")
        for rank_by, series in series_by_rank.items():
            for strategy in (1, 2):
                ls = {d: v[strategy - 1] for d, v in series.items()}
                for model, with_f in (("alpha_only", False), ("factors", True)):
                    res = em.alpha_regression(ls, factors, with_f)
                    for i, name in enumerate(res.names):
                        f.write(f"{rank_by},{strategy},{model},{name},"
                                f"{float(res.coef[i])!r},{float(res.se[i])!r},"
                                f"{float(res.tstat[i])!r},{res.n}\n")
    rp.ls_series_figure(series_by_rank, config.out_dir / "ls_series.png")
    with open(config.out_dir / "backtest_report.json", "w") as f:
        json.dump({"skipped_days": skipped}, f)


def stage_precision(config: PipelineConfig) -> None:
    days = _signal_days(config)
    results = []
    for direction in ("TopPositive", "TopNegative"):
        for rank_by in ("surprise", "soft"):
            for agreement in (False, True):
                results.append(bt.precision_at_k(days, rank_by, direction,
                                                 agreement))
    bt.write_precision(results, config.out_dir / "precision.csv")


# ---------------------------------------------------------------------------
# Stage registry + ledger


@dataclass
class Stage:
    name: str
    fn: Callable[[PipelineConfig], None]
    inputs: Callable[[PipelineConfig], list[Path]]
    outputs: Callable[[PipelineConfig], list[Path]]


def _manifest_inputs(config: PipelineConfig) -> list[Path]:
    paths = [config.input_path("manifest.csv"), config.input_path("events.csv"),
             config.input_path("calendar.txt")]
    if config.input_path("forecasts.csv").exists():
        paths.append(config.input_path("forecasts.csv"))
    html_dir = config.input_dir / "html"
    if html_dir.exists():
        paths.extend(sorted(html_dir.glob("*.html")))
    return paths


def _out(config: PipelineConfig, *names: str) -> list[Path]:
    return [config.out_dir / n for n in names]


def _per_year(config: PipelineConfig, pattern: str, years=None) -> list[Path]:
    return [config.out_dir / pattern.format(year=y)
            for y in (years or config.years)]


def _emb_inputs(config: PipelineConfig) -> list[Path]:
    return [config.emb_dir / f"emb_{k}_{y}.bin"
            for k in EMB_KINDS for y in config.years]


STAGES: list[Stage] = [
    Stage("ingest", stage_ingest, _manifest_inputs,
          lambda c: _out(c, "docs_clean.jsonl", "events_enriched.csv",
                         "corpus_stats.csv", "corpus_stats.png",
                         "ingest_report.json")),
    Stage("prep", stage_prep,
          lambda c: _out(c, "docs_clean.jsonl"),
          lambda c: _out(c, "tokens.jsonl")
          + _per_year(c, "vocab_{year}.tsv") + _per_year(c, "dtm_{year}.csv")),
    Stage("topics", stage_topics,
          lambda c: _out(c, "tokens.jsonl") + _per_year(c, "vocab_{year}.tsv")
          + ([c.taxonomy_path] if c.taxonomy_path else []),
          lambda c: _per_year(c, "attention_olda_{year}.csv")
          + _per_year(c, "attention_bkmx_{year}.csv")
          + _per_year(c, "olda_state_{year}.bin")
          + _out(c, "topic_top_tokens.csv")),
    Stage("features", stage_features,
          lambda c: _out(c, "events_enriched.csv") + _emb_inputs(c),
          lambda c: _out(c, "cosine_stats.csv")),
    Stage("score", stage_score,
          lambda c: _out(c, "events_enriched.csv")
          + _per_year(c, "attention_olda_{year}.csv")
          + _per_year(c, "attention_bkmx_{year}.csv") + _emb_inputs(c),
          lambda c: [c.out_dir / f"softs_{k}.csv"
                     for k in list(sc.SOFT_KINDS) + ["oos_surprise", "mean"]]
          + _out(c, "soft_mean_excluded.json")),
    Stage("regress", stage_regress,
          lambda c: _out(c, "events_enriched.csv")
          + [c.out_dir / f"softs_{k}.csv"
             for k in list(sc.SOFT_KINDS) + ["oos_surprise", "mean"]],
          lambda c: _out(c, "regress_table1.csv", "regress_table1.txt",
                         "regress_table2.csv", "regress_table2.txt",
                         "regress_table3.csv", "regress_table3.txt",
                         "heatmap.csv", "heatmap.png")),
    Stage("insight", stage_insight,
          lambda c: _out(c, "events_enriched.csv", "topic_top_tokens.csv"),
          lambda c: _out(c, "metatopics_bkmx.json", "metatopics_olda.json",
                         "metatopic_report.csv", "polarity.png",
                         "token_classification.csv")),
    Stage("backtest", stage_backtest,
          lambda c: _out(c, "events_enriched.csv", "softs_mean.csv")
          + [c.input_path("quotes.csv"), c.input_path("factors.csv")],
          lambda c: _out(c, "ls_series.csv", "alpha_regressions.csv",
                         "ls_series.png", "backtest_report.json")),
    Stage("precision", stage_precision,
          lambda c: _out(c, "events_enriched.csv", "softs_mean.csv"),
          lambda c: _out(c, "precision.csv")),
]

STAGE_BY_NAME = {s.name: s for s in STAGES}


def _load_ledger(config: PipelineConfig) -> dict:
    path = config.out_dir / "ledger.json"
    if path.exists():
        with open(path) as f:
            return json.load(f)
    return {}


def run(stage_name: str, config: PipelineConfig, force: bool = False) -> dict:
    """Run one stage or "all"; returns the updated ledger."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    names = [s.name for s in STAGES] if stage_name == "all" else [stage_name]
    if stage_name != "all" and stage_name not in STAGE_BY_NAME:
        raise MissingUpstream(f"unknown stage {stage_name!r}")
    ledger = _load_ledger(config)
    config_hash = hashlib.sha256(
        json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()
    for name in names:
        stage = STAGE_BY_NAME[name]
        inputs = stage.inputs(config)
        missing = [p for p in inputs if not p.exists()]
        if missing:
            raise MissingUpstream(str(missing[0]))
        in_hashes = {str(p): _sha256(p) for p in inputs}
        in_hashes["__config__"] = config_hash
        entry = ledger.get(name)
        outputs = stage.outputs(config)
        if (not force and entry and entry.get("inputs") == in_hashes
                and all(p.exists() for p in outputs)):
            log.info("stage %s: cache hit, skipped", name)
            continue
        log.info("stage %s: running", name)
        t0 = time.perf_counter()
        stage.fn(config)
        elapsed = time.perf_counter() - t0
        out_hashes = {str(p): _sha256(p) for p in outputs if p.exists()}
        ledger[name] = {"inputs": in_hashes, "outputs": out_hashes,
                        "elapsed_s": round(elapsed, 3)}
        with open(config.out_dir / "ledger.json", "w") as f:
            json.dump(ledger, f, indent=1)
    return ledger
