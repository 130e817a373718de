"""Acceptance gate: one test per headline guarantee, at its stated tolerance.

The planted-truth fixtures here are deliberately full scale (8 years,
~2,000 docs/year) so the end-to-end recovery, determinism, and runtime
budgets are exercised for real. Run with -v for one pass/fail line per
criterion.
"""

import hashlib
import time
from datetime import date, timedelta
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from earnsignal import backtest as bt
from earnsignal import econometrics as em
from earnsignal import scoring as sc
from earnsignal import textprep as tp
from earnsignal import topics as tm
from earnsignal.config import PipelineConfig
from earnsignal.pipeline import _signal_days, run
from earnsignal.synth import SynthConfig, make_synthetic

FULL_RUN_BUDGET_S = 300.0


# ---------------------------------------------------------------------------
# full-scale planted dataset, run end to end (shared by several criteria)


def _pipe_config(root, out_name):
    cfg = PipelineConfig(
        input_dir=root / "input", out_dir=root / out_name,
        year_start=2005, year_end=2012, seed=0,
        taxonomy_path=root / "input" / "taxonomy.json")
    cfg.olda.n_topics = 8
    cfg.vocab.min_df = 2
    return cfg


@pytest.fixture(scope="session")
def planted(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    make_synthetic(SynthConfig(out_dir=root / "input"))
    config = _pipe_config(root, "out_a")
    t0 = time.perf_counter()
    run("all", config)
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(root=root, config=config, out=config.out_dir,
                           elapsed=elapsed)


def _hash_artifacts(out_dir):
    # ledger.json is a run journal with wall-clock timings, not an artifact
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out_dir.iterdir())
            if p.is_file() and p.name != "ledger.json"}


# ---------------------------------------------------------------------------
# Lasso correctness


def test_primary_lasso_correctness():
    rng = np.random.default_rng(0)
    # warm the compiled kernel so the budget measures solves, not JIT
    sc.fit_lasso(rng.standard_normal((10, 2)), rng.standard_normal(10))
    t0 = time.perf_counter()

    # univariate closed form: y = (0.5 + lam) * z gives w = 0.5 after the
    # soft-threshold shrink
    lam = 1e-5
    z = rng.standard_normal(500)
    z = (z - z.mean()) / z.std()
    fit = sc.fit_lasso(z[:, None], (0.5 + lam) * z, lam=lam)
    assert abs(fit.w[0] - 0.5) <= 1e-10

    # lambda large enough kills every weight exactly
    X = rng.standard_normal((100, 5))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0, 3.0])
    assert (sc.fit_lasso(X, y, lam=1e6).w == 0.0).all()

    # lambda = 0 matches the direct linear solve on 20x3 systems
    for seed in range(5):
        r = np.random.default_rng(seed)
        X = r.standard_normal((20, 3))
        y = X @ r.standard_normal(3) + r.normal(0, 0.1, 20)
        fit = sc.fit_lasso(X, y, lam=0.0, tol=1e-12)
        Z = (X - fit.feature_center) / fit.feature_scale
        w_direct, *_ = np.linalg.lstsq(Z, y - y.mean(), rcond=None)
        np.testing.assert_allclose(fit.w, w_direct, atol=1e-8)

    # KKT residual within 10 * tol on every fit
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        X = r.standard_normal((80, 6))
        y = X @ r.standard_normal(6) + r.normal(0, 0.3, 80)
        fit = sc.fit_lasso(X, y, lam=1e-4, tol=1e-7)
        assert fit.kkt_violation <= 10 * 1e-7

    assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# oLDA recovery


def test_primary_olda_recovery():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    K, wpt, n_docs, doc_len = 3, 100, 1500, 60
    terms = [f"w{k:d}x{i:03d}" for k in range(K) for i in range(wpt)]
    streams = [tp.TokenStream("s0", terms), tp.TokenStream("s1", terms)]
    vocab = tp.build_vocabulary(streams, 2010, min_df=1, max_df_ratio=1.0)
    beta = np.zeros((K, K * wpt))
    for k in range(K):
        beta[k, k * wpt:(k + 1) * wpt] = 1.0 / wpt
    docs = []
    for i in range(n_docs):
        theta = rng.dirichlet([0.05] * K)
        z = rng.choice(K, size=doc_len, p=theta)
        toks = [terms[k * wpt + rng.integers(wpt)] for k in z]
        docs.append(tp.count_vectorize(tp.TokenStream(str(i), toks), vocab))

    train, held = docs[:1300], docs[1300:]
    state = tm.olda_init(tm.OldaConfig(n_topics=K), vocab, seed=1)
    perps = []
    for _ in range(2):
        for start in range(0, len(train), 256):
            state = tm.olda_partial_fit(state, train[start:start + 256],
                                        corpus_size=len(train))
        perps.append(tm.held_out_perplexity(state, held))

    est = state.lam / state.lam.sum(axis=1, keepdims=True)
    cos = np.array([[e @ b / (np.linalg.norm(e) * np.linalg.norm(b))
                     for b in beta] for e in est])
    matched = []
    work = cos.copy()
    for _ in range(K):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        matched.append(work[i, j])
        work[i, :] = -2
        work[:, j] = -2
    assert min(matched) >= 0.9
    assert perps[1] <= perps[0] * 1.01
    assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------------------
# attention simplex invariant over the full synthetic corpus


def test_primary_attention_sums(planted):
    checked = 0
    for path in sorted(planted.out.glob("attention_*.csv")):
        kind = "olda" if "olda" in path.name else "bkmx"
        for att in tm.read_attention(path, kind):
            if (att.f == 0).all():
                continue
            assert abs(att.f.sum() - 1.0) <= 1e-12, path.name
            checked += 1
    assert checked > 10_000  # full corpus, both vector families


# ---------------------------------------------------------------------------
# Shapley


def test_primary_shapley():
    for d in range(1, 7):
        rng = np.random.default_rng(d)
        w = rng.standard_normal(d)
        b = float(rng.standard_normal())
        X = rng.standard_normal((6, d))
        bg = X.mean(axis=0)
        rep = em.shapley_linear(w, b, X, background_mean=bg)
        fn = lambda z: float(z @ w + b)
        for i in range(X.shape[0]):
            phi = em.shapley_enum(fn, X[i], bg)
            np.testing.assert_allclose(rep.shap_values[i], phi, atol=1e-10)
            assert phi.sum() == pytest.approx(fn(X[i]) - fn(bg), abs=1e-10)
        assert rep.normalized.sum() == pytest.approx(100.0, abs=1e-9)


# ---------------------------------------------------------------------------
# clustered standard errors


def test_primary_clustered_se():
    # degenerate case: every observation its own firm and date cluster
    rng = np.random.default_rng(3)
    n = 40
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = X @ np.array([0.1, 0.8]) + rng.normal(0, 0.2, n)
    res = em.ols_two_way_clustered(y, X, np.arange(n), np.arange(n) + 999)
    oracle = em.ols_hc1(y, X)
    np.testing.assert_allclose(res.se, oracle.se, atol=1e-10)

    # 3x3 crossed-cluster fixture against an independent loop implementation
    y = np.array([0.5, 0.2, -0.1, 0.4, -0.3, 0.1, 0.0, 0.6, -0.2])
    x = np.array([1.0, 0.8, -0.2, 0.5, -0.6, 0.3, 0.1, 1.2, -0.4])
    X = np.column_stack([np.ones(9), x])
    firms = np.array([1, 1, 1, 2, 2, 2, 3, 3, 3])
    dates = np.array([10, 20, 30, 10, 20, 30, 10, 20, 30])
    res = em.ols_two_way_clustered(y, X, firms, dates)

    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    u = y - X @ beta
    bread = np.linalg.inv(X.T @ X)

    def piece(labels):
        meat = np.zeros((2, 2))
        for lab in set(labels):
            s = ((X * u[:, None])[np.array(labels) == lab]).sum(axis=0)
            meat += np.outer(s, s)
        g = len(set(labels))
        return (g / (g - 1)) * (8 / 7) * bread @ meat @ bread

    inter = [f"{a}|{b}" for a, b in zip(firms, dates)]
    V = piece(list(firms)) + piece(list(dates)) - piece(inter)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(V)), atol=1e-8)


# ---------------------------------------------------------------------------
# planted end-to-end recovery


def test_primary_planted_pipeline(planted):
    t1 = pd.read_csv(planted.out / "regress_table1.csv")
    t3 = pd.read_csv(planted.out / "regress_table3.csv")
    base = t1[(t1.column == "(1)") & (t1.term == "Surprise")].iloc[0]
    combined = t3[t3.column == "(1)"].set_index("term")

    b_surprise = combined.loc["Surprise", "coef"]
    assert 0.7 <= b_surprise <= 0.9

    soft = combined.loc["Soft Mean"]
    assert soft.coef > 0 and soft.tstat > 3

    r2_base = float(base.r2)
    r2_combined = float(combined.iloc[0].r2)
    assert r2_combined >= 1.2 * r2_base

    assert planted.elapsed < FULL_RUN_BUDGET_S


# ---------------------------------------------------------------------------
# backtest algebra


def test_primary_backtest_algebra():
    rng = np.random.default_rng(7)
    d0 = date(2011, 1, 3)
    checked = 0
    trial = 0
    while checked < 10_000:
        trial += 1
        day = d0 + timedelta(days=trial)
        quotes = {}
        signals = []
        for permno in range(1, 7):
            mid = float(rng.uniform(20, 100))
            half_open = mid * float(rng.uniform(0, 0.08))
            close = mid * float(1 + rng.normal(0, 0.03))
            half_close = close * float(rng.uniform(0, 0.08))
            quotes[permno] = bt.QuoteSnapshot(
                permno, day, mid - half_open, mid + half_open, close,
                close - half_close, close + half_close)
            s = float(rng.normal(0, 0.02))
            signals.append(bt.SignalRecord(permno, day, s, s,
                                           float(rng.uniform(1, 5))))
        try:
            p = bt.build_day_portfolio(signals, quotes, "surprise")
        except bt.EmptyDay:
            continue
        p = bt.leg_returns(p, quotes)
        assert p.ls(2) <= p.ls(1) + 1e-12
        checked += 1

    # zero spread, symmetric returns: both legs move identically, LS = 0
    day = d0
    quotes = {1: bt.QuoteSnapshot(1, day, 50.0, 50.0, 51.0, 51.0, 51.0),
              2: bt.QuoteSnapshot(2, day, 50.0, 50.0, 51.0, 51.0, 51.0)}
    signals = [bt.SignalRecord(1, day, 0.02, 0.02, 1.0),
               bt.SignalRecord(2, day, -0.02, -0.02, 1.0)]
    p = bt.leg_returns(bt.build_day_portfolio(signals, quotes, "surprise"),
                       quotes)
    assert abs(p.ls(1)) <= 1e-12
    assert abs(p.ls(2)) <= 1e-12


# ---------------------------------------------------------------------------
# precision at k


def test_primary_precision(planted):
    day = date(2011, 3, 4)

    # perfect prediction
    records = [bt.SignalRecord(i, day, i * 0.01, i * 0.01, 1.0, i * 0.01)
               for i in range(1, 26)]
    res = bt.precision_at_k({day: records}, "surprise", "TopPositive", False)
    assert all(v == 1.0 for v in res.precision.values())

    # random ranking Monte Carlo: E[P@10] = 10/20
    rng = np.random.default_rng(11)
    n, k, trials = 20, 10, 10_000
    vals = []
    for t in range(trials):
        d = day + timedelta(days=t)
        recs = [bt.SignalRecord(i, d, float(rng.standard_normal()), 0.0, 1.0,
                                float(rng.standard_normal()))
                for i in range(n)]
        vals.append(bt.precision_at_k({d: recs}, "surprise", "TopPositive",
                                      False, ks=(k,)).precision[k])
    assert abs(np.mean(vals) - k / n) < 0.02

    # planted data: agreement filtering lifts P@10, one-sided paired test
    days = _signal_days(planted.config)
    diffs = []
    for d, recs in days.items():
        if len(recs) < bt.MIN_DAY_EVENTS:
            continue
        plain = bt.precision_at_k({d: recs}, "surprise", "TopPositive",
                                  False, ks=(10,)).precision[10]
        agree = bt.precision_at_k({d: recs}, "surprise", "TopPositive",
                                  True, ks=(10,)).precision[10]
        if not (np.isnan(plain) or np.isnan(agree)):
            diffs.append(agree - plain)
    assert len(diffs) > 100
    t_res = stats.ttest_1samp(diffs, 0.0, alternative="greater")
    assert np.mean(diffs) > 0
    assert t_res.pvalue < 0.01


# ---------------------------------------------------------------------------
# determinism


def test_primary_determinism(planted):
    config_b = _pipe_config(planted.root, "out_b")
    run("all", config_b)
    assert _hash_artifacts(planted.out) == _hash_artifacts(config_b.out_dir)


# ---------------------------------------------------------------------------
# embedding export contract (secondary component)


def test_secondary_embedder_contract(tmp_path):
    embedder = pytest.importorskip("embedder")
    import json as _json

    import torch

    from earnsignal import features as ft

    checkpoint = (Path(__file__).parent.parent / "embedder" / "tests"
                  / "fixtures" / "tiny-bert")
    golden_path = checkpoint.parent / "golden_vector.npy"
    assert checkpoint.exists() and golden_path.exists()

    manifest = tmp_path / "docs_clean.jsonl"
    docs = [
        {"doc_id": "1", "year": 2010,
         "clean_text": "the company reports record profit"},
        {"doc_id": "2", "year": 2010,
         "clean_text": "revenue fell and costs rose"},
    ]
    manifest.write_text("\n".join(_json.dumps(d) for d in docs) + "\n")
    job = embedder.EmbedJob(manifest=manifest, kind="bert",
                            checkpoint=str(checkpoint),
                            out_dir=tmp_path / "out")
    embedder.embed_documents(job)

    # shape contract through the primary reader, bit-exact round-trip
    recs = ft.read_embeddings(tmp_path / "out" / "emb_bert_2010.bin", 2010)
    mats = ft.read_token_matrices(tmp_path / "out" / "tok_bert_2010.bin")
    assert len(recs) == 2
    for r, m in zip(recs, mats):
        assert r.vector.shape == (768,)
        assert m.E.shape[1] == 768 and m.n_tokens <= 512
        pooled = m.E[:m.n_tokens].astype("float32").mean(axis=0)
        np.testing.assert_allclose(r.vector, pooled, atol=1e-6)

    # single-token mean-pool identity
    hidden = torch.randn(1, 1, 768)
    torch.testing.assert_close(embedder.mean_pool(hidden, torch.ones(1, 1)),
                               hidden[:, 0, :])

    # pinned-checkpoint golden vector
    golden = np.load(golden_path)
    assert np.abs(recs[0].vector - golden).max() < 1e-4
