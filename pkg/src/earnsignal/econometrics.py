"""Inference toolkit: winsorization, two-way cluster-robust OLS, exact
Shapley importance, quintile double sorts, and HAC alpha regressions."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import factorial

import numpy as np
from scipy import stats

from .errors import (DegenerateDenominator, DimensionTooLarge, NoOverlapDates,
                     Singular)

HAC_LAGS = 5
MAX_ENUM_DIM = 12


@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    r2: float
    n: int
    cluster_dims: tuple[str, ...] = ()
    residuals: np.ndarray | None = None
    se_clamped: bool = False

    @property
    def tstat(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > 0, self.coef / self.se, np.inf)

    @property
    def pvalue(self) -> np.ndarray:
        return 2.0 * (1.0 - stats.norm.cdf(np.abs(self.tstat)))


def winsorize(x: np.ndarray, lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """Clamp to percentiles of the full sample (linear interpolation)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    lo, hi = np.percentile(x, [lo_pct, hi_pct])
    return np.clip(x, lo, hi)


def _ols(y: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < X.shape[1]:
        raise Singular("design matrix is rank deficient")
    beta = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ beta
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 0.0
    return beta, resid, r2


def _cluster_meat(X: np.ndarray, resid: np.ndarray, labels: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    meat = np.zeros((d, d))
    Xu = X * resid[:, None]
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    boundaries = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1],
                                      True])
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        s = Xu[order[a:b]].sum(axis=0)
        meat += np.outer(s, s)
    return meat


def _n_clusters(labels: np.ndarray) -> int:
    return len(np.unique(labels))


def ols_two_way_clustered(y: np.ndarray, X: np.ndarray,
                          cluster_firm: np.ndarray, cluster_date: np.ndarray,
                          names: list[str] | None = None) -> RegressionResult:
    """OLS with two-way cluster-robust variance
    V = V_firm + V_date - V_intersection, each one-way piece carrying the
    G/(G-1) * (N-1)/(N-d) small-sample factor.

    If the combined matrix has a negative diagonal entry (degenerate small
    samples), that variance is clamped to the larger one-way variance and
    the result is flagged.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n <= d:
        raise ValueError(f"need N > d, got N={n}, d={d}")
    firm = np.asarray(cluster_firm)
    date_ = np.asarray(cluster_date)
    beta, resid, r2 = _ols(y, X)
    bread = np.linalg.inv(X.T @ X)

    inter = np.array([f"{a}\x1f{b}" for a, b in zip(firm.astype(str),
                                                    date_.astype(str))])
    pieces = []
    for labels in (firm, date_, inter):
        g = _n_clusters(labels)
        c = (g / (g - 1)) * ((n - 1) / (n - d)) if g > 1 else 1.0
        pieces.append(c * bread @ _cluster_meat(X, resid, labels) @ bread)
    V = pieces[0] + pieces[1] - pieces[2]

    diag = np.diag(V).copy()
    clamped = False
    neg = diag < 0
    if neg.any():
        fallback = np.maximum(np.diag(pieces[0]), np.diag(pieces[1]))
        diag[neg] = fallback[neg]
        clamped = True
    se = np.sqrt(diag)
    return RegressionResult(names or [f"x{j}" for j in range(d)], beta, se,
                            r2, n, ("firm", "date"), resid, clamped)


def ols_hc1(y: np.ndarray, X: np.ndarray,
            names: list[str] | None = None) -> RegressionResult:
    """Heteroskedasticity-robust (HC1) sandwich, used as a one-obs-per-cluster
    oracle for the two-way estimator."""
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    beta, resid, r2 = _ols(y, X)
    bread = np.linalg.inv(X.T @ X)
    Xu = X * resid[:, None]
    V = (n / (n - d)) * bread @ (Xu.T @ Xu) @ bread
    return RegressionResult(names or [f"x{j}" for j in range(d)], beta,
                            np.sqrt(np.diag(V)), r2, n, (), resid)


# ---------------------------------------------------------------------------
# Shapley importance


@dataclass
class ShapleyReport:
    names: list[str]
    importance: np.ndarray        # mean |SHAP| per feature
    normalized: np.ndarray        # scaled to sum to 100
    background: np.ndarray
    shap_values: np.ndarray | None = None  # N x d per-sample attributions


def shapley_linear(w: np.ndarray, intercept: float, X: np.ndarray,
                   background_mean: np.ndarray | None = None,
                   names: list[str] | None = None) -> ShapleyReport:
    """Closed-form linear SHAP: phi_ij = w_j (x_ij - mean_j)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    bg = X.mean(axis=0) if background_mean is None else np.asarray(background_mean)
    shap = (X - bg) * w
    importance = np.abs(shap).mean(axis=0)
    total = importance.sum()
    normalized = 100.0 * importance / total if total > 0 else np.zeros_like(importance)
    return ShapleyReport(names or [f"x{j}" for j in range(len(w))],
                         importance, normalized, bg, shap)


def shapley_enum(predict_fn, x: np.ndarray, background_mean: np.ndarray) -> np.ndarray:
    """Exact Shapley values by subset enumeration with weights
    |S|! (d-|S|-1)! / d!; masked features are set to the background mean."""
    x = np.asarray(x, dtype=np.float64)
    bg = np.asarray(background_mean, dtype=np.float64)
    d = len(x)
    if d > MAX_ENUM_DIM:
        raise DimensionTooLarge(f"d={d} exceeds {MAX_ENUM_DIM}")

    def value(subset: frozenset) -> float:
        z = bg.copy()
        idx = list(subset)
        z[idx] = x[idx]
        return float(predict_fn(z))

    cache: dict[frozenset, float] = {}

    def val(subset) -> float:
        key = frozenset(subset)
        if key not in cache:
            cache[key] = value(key)
        return cache[key]

    phi = np.zeros(d)
    others = list(range(d))
    fact = [factorial(k) for k in range(d + 1)]
    for j in range(d):
        rest = [k for k in others if k != j]
        for size in range(d):
            weight = fact[size] * fact[d - size - 1] / fact[d]
            for S in combinations(rest, size):
                phi[j] += weight * (val(set(S) | {j}) - val(S))
    return phi


# ---------------------------------------------------------------------------
# Quintile double sort


@dataclass
class HeatmapGrid:
    mean_ret: np.ndarray   # 5x5, rows = surprise quintile, cols = soft quintile
    counts: np.ndarray

    def __post_init__(self):
        assert self.mean_ret.shape == (5, 5)


def _quintile_rank(values: np.ndarray, permnos: np.ndarray, n_q: int = 5) -> np.ndarray:
    """Within-group quintile bucket from ordinal ranks, ties by permno."""
    n = len(values)
    order = np.lexsort((permnos, values))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return np.minimum((ranks * n_q) // n, n_q - 1)


def quintile_heatmap(soft: np.ndarray, surprise: np.ndarray, ret: np.ndarray,
                     quarters: np.ndarray, permnos: np.ndarray) -> HeatmapGrid:
    """Quintile ranks within each calendar quarter; pooled cell means."""
    soft_q = np.empty(len(soft), dtype=np.int64)
    surp_q = np.empty(len(soft), dtype=np.int64)
    for q in np.unique(quarters):
        m = quarters == q
        if m.sum() < 5:
            raise ValueError(f"quarter {q} has fewer than 5 observations")
        soft_q[m] = _quintile_rank(soft[m], permnos[m])
        surp_q[m] = _quintile_rank(surprise[m], permnos[m])
    mean_ret = np.zeros((5, 5))
    counts = np.zeros((5, 5), dtype=np.int64)
    for i in range(5):
        for j in range(5):
            cell = (surp_q == i) & (soft_q == j)
            counts[i, j] = cell.sum()
            mean_ret[i, j] = ret[cell].mean() if counts[i, j] else np.nan
    return HeatmapGrid(mean_ret, counts)


# ---------------------------------------------------------------------------
# Explained-variance decomposition over metatopics


def explained_variance_terms(attention: np.ndarray, weights: np.ndarray,
                             groups: list[list[int]]) -> np.ndarray:
    """Per-group quadratic form sum_{i,j in M} w_i w_j Cov(f_i, f_j)."""
    cov = np.cov(attention, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    out = np.zeros(len(groups))
    for g, idx in enumerate(groups):
        wg = weights[idx]
        out[g] = float(wg @ cov[np.ix_(idx, idx)] @ wg)
    return out


def explained_variance(attention: np.ndarray, weights: np.ndarray,
                       groups: list[list[int]]) -> np.ndarray:
    terms = explained_variance_terms(attention, weights, groups)
    denom = terms.sum()
    if denom == 0.0:
        raise DegenerateDenominator("all metatopic variance terms are zero")
    return 100.0 * terms / denom


# ---------------------------------------------------------------------------
# Alpha regressions with HAC standard errors


def _hac_variance(X: np.ndarray, resid: np.ndarray, lags: int) -> np.ndarray:
    n, d = X.shape
    Xu = X * resid[:, None]
    S = Xu.T @ Xu / n
    for lag in range(1, lags + 1):
        w = 1.0 - lag / (lags + 1.0)
        gamma = Xu[lag:].T @ Xu[:-lag] / n
        S += w * (gamma + gamma.T)
    bread = np.linalg.inv(X.T @ X / n)
    return bread @ S @ bread / n


def alpha_regression(ls: dict, factors: dict | None,
                     with_factors: bool, lags: int = HAC_LAGS) -> RegressionResult:
    """Mean return (alpha-only) or three-factor regression of the daily
    long-short series, with Newey-West standard errors."""
    if with_factors:
        if factors is None:
            raise ValueError("factor series required")
        dates = sorted(ls.keys() & factors.keys())
        if not dates:
            raise NoOverlapDates("no common dates between LS series and factors")
        y = np.array([ls[d] for d in dates])
        F = np.array([factors[d] for d in dates])  # columns mkt_rf, hml, smb
        X = np.column_stack([np.ones(len(dates)), F])
        names = ["alpha", "mkt_rf", "hml", "smb"]
    else:
        dates = sorted(ls)
        if not dates:
            raise NoOverlapDates("empty LS series")
        y = np.array([ls[d] for d in dates])
        X = np.ones((len(dates), 1))
        names = ["alpha"]
    beta, resid, r2 = _ols(y, X)
    V = _hac_variance(X, resid, lags)
    return RegressionResult(names, beta, np.sqrt(np.diag(V)), r2, len(y),
                            (), resid)
