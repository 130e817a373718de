"""Rolling return-score models: L1 regression on text features plus the
out-of-sample surprise benchmark and the five-model composite score.

The solver is cyclic coordinate descent on the objective
(1/2N)||Xw - y||^2 + lambda*||w||_1, with precomputed Gram matrix so a
full sweep costs O(d^2) regardless of N.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateYear, MissingVintage

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-5
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITERS = 10_000

SOFT_KINDS = ("bkmx", "olda", "bert", "mpnet", "finbert")

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


def _cd_sweeps(G, c, w, lam, tol, max_iters):
    """Pure-python fallback for the compiled kernel below."""
    d = w.shape[0]
    q = G @ w
    for it in range(max_iters):
        max_delta = 0.0
        for j in range(d):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] - q[j] + gjj * w[j]
            wj = np.sign(rho) * max(abs(rho) - lam, 0.0) / gjj
            delta = wj - w[j]
            if delta != 0.0:
                q += G[:, j] * delta
                w[j] = wj
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return it + 1, True
    return max_iters, False


if njit is not None:
    _cd_sweeps_jit = njit(cache=True)(_cd_sweeps)
else:  # pragma: no cover
    _cd_sweeps_jit = _cd_sweeps


@dataclass
class LassoFit:
    kind: str
    train_year: int
    w: np.ndarray  # weights in the (possibly standardized) feature space
    intercept: float
    feature_center: np.ndarray
    feature_scale: np.ndarray
    lam: float
    n_sweeps: int = 0
    converged: bool = True
    kkt_violation: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.feature_center) / self.feature_scale
        return Z @ self.w + self.intercept

    @property
    def w_raw(self) -> np.ndarray:
        """Weights mapped back to raw (unstandardized) feature space."""
        return self.w / self.feature_scale


def fit_lasso(X: np.ndarray, y: np.ndarray, lam: float = DEFAULT_LAMBDA,
              tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
              kind: str = "", train_year: int = 0,
              standardize: bool = True, fit_intercept: bool = True) -> LassoFit:
    """Coordinate-descent L1 fit with KKT residual check.

    Zero-variance columns get weight 0 and scale 1 by convention. A fit
    that hits max_iters is returned with converged=False rather than
    raised, so callers can archive the best iterate.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 observations")

    center = X.mean(axis=0) if standardize else np.zeros(d)
    if standardize:
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
    else:
        scale = np.ones(d)
    Z = (X - center) / scale
    y_mean = y.mean() if fit_intercept else 0.0
    yc = y - y_mean

    G = (Z.T @ Z) / n
    c = (Z.T @ yc) / n
    w = np.zeros(d)
    sweeps, converged = _cd_sweeps_jit(G, c, w, lam, tol, max_iters)

    # KKT residual: |(1/N) z_j'(y - Zw)| == lam on the active set, <= lam off it
    grad = c - G @ w
    active = w != 0.0
    viol = 0.0
    if active.any():
        viol = float(np.max(np.abs(np.abs(grad[active]) - lam)))
    if (~active).any():
        viol = max(viol, float(np.max(np.abs(grad[~active])) - lam))
    fit = LassoFit(kind, train_year, w, y_mean, center, scale, lam,
                   sweeps, converged, max(viol, 0.0))
    if not converged:
        log.warning("lasso (%s, %d) hit max_iters=%d, kkt violation %.2e",
                    kind, train_year, max_iters, fit.kkt_violation)
    return fit


def lasso_objective(X, y, fit: LassoFit) -> float:
    Z = (X - fit.feature_center) / fit.feature_scale
    r = Z @ fit.w - (y - fit.intercept)
    return float(0.5 * (r @ r) / len(y) + fit.lam * np.abs(fit.w).sum())


@dataclass
class SoftScore:
    doc_id: str
    kind: str
    value: float
    score_year: int


def rolling_scores(kind: str,
                   data_by_year: dict[int, tuple[np.ndarray, np.ndarray, list[str]]],
                   lam: float = DEFAULT_LAMBDA, tol: float = DEFAULT_TOL,
                   max_iters: int = DEFAULT_MAX_ITERS
                   ) -> tuple[list[SoftScore], dict[int, LassoFit]]:
    """Fit on year t, score year t+1; fits are archived per train year."""
    years = sorted(data_by_year)
    scores: list[SoftScore] = []
    fits: dict[int, LassoFit] = {}
    for t in years:
        if t + 1 not in data_by_year:
            continue
        X_train, y_train, _ = data_by_year[t]
        fit = fit_lasso(X_train, y_train, lam, tol, max_iters,
                        kind=kind, train_year=t)
        fits[t] = fit
        X_next, _, ids_next = data_by_year[t + 1]
        values = fit.predict(X_next)
        scores.extend(SoftScore(doc_id, kind, float(v), t + 1)
                      for doc_id, v in zip(ids_next, values))
    if not fits:
        raise MissingVintage(f"no consecutive year pair for kind {kind}")
    return scores, fits


def oos_surprise(surprise_by_year: dict[int, tuple[np.ndarray, np.ndarray, list[str]]]
                 ) -> list[SoftScore]:
    """Rolling univariate OLS of returns on surprise, scored out of sample."""
    years = sorted(surprise_by_year)
    scores: list[SoftScore] = []
    for t in years:
        if t + 1 not in surprise_by_year:
            continue
        s, r, _ = surprise_by_year[t]
        var = float(np.var(s))
        if var == 0.0:
            raise DegenerateYear(f"constant surprise in train year {t}")
        b = float(np.cov(s, r, bias=True)[0, 1]) / var
        a = float(r.mean() - b * s.mean())
        s_next, _, ids_next = surprise_by_year[t + 1]
        scores.extend(SoftScore(doc_id, "oos_surprise", float(a + b * v), t + 1)
                      for doc_id, v in zip(ids_next, s_next))
    return scores


@dataclass
class SoftMeanResult:
    scores: list[SoftScore]
    excluded: list[str] = field(default_factory=list)


def soft_mean(scores_by_kind: dict[str, list[SoftScore]]) -> SoftMeanResult:
    """Arithmetic mean of the five model scores; docs missing any kind are
    excluded and reported, not errored."""
    per_doc: dict[str, dict[str, SoftScore]] = {}
    for kind in SOFT_KINDS:
        for sc in scores_by_kind.get(kind, []):
            per_doc.setdefault(sc.doc_id, {})[kind] = sc
    result = SoftMeanResult([])
    for doc_id in sorted(per_doc):
        have = per_doc[doc_id]
        if len(have) < len(SOFT_KINDS):
            result.excluded.append(doc_id)
            continue
        value = sum(have[k].value for k in SOFT_KINDS) / len(SOFT_KINDS)
        year = have[SOFT_KINDS[0]].score_year
        result.scores.append(SoftScore(doc_id, "mean", value, year))
    if result.excluded:
        log.info("soft_mean: %d docs excluded for missing kinds",
                 len(result.excluded))
    return result


# ---------------------------------------------------------------------------
# Artifacts


def save_fit(fit: LassoFit, path) -> None:
    nonzero = [(int(j), float(fit.w[j])) for j in np.nonzero(fit.w)[0]]
    payload = {
        "kind": fit.kind,
        "train_year": fit.train_year,
        "lambda": fit.lam,
        "intercept": fit.intercept,
        "nonzero": nonzero,
        "center": fit.feature_center.tolist(),
        "scale": fit.feature_scale.tolist(),
        "n_sweeps": fit.n_sweeps,
        "converged": fit.converged,
        "kkt_violation": fit.kkt_violation,
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_fit(path) -> LassoFit:
    with open(path) as f:
        p = json.load(f)
    d = len(p["center"])
    w = np.zeros(d)
    for j, v in p["nonzero"]:
        w[j] = v
    return LassoFit(p["kind"], p["train_year"], w, p["intercept"],
                    np.array(p["center"]), np.array(p["scale"]), p["lambda"],
                    p["n_sweeps"], p["converged"], p["kkt_violation"])


def write_scores(scores: list[SoftScore], meta: dict[str, tuple[int, str]], path) -> None:
    """softs_<kind>.csv: doc_id,permno,tau_eff,score_year,value."""
    with open(path, "w") as f:
        f.write("doc_id,permno,tau_eff,score_year,value\n")
        for sc in scores:
            permno, tau = meta.get(sc.doc_id, ("", ""))
            f.write(f"{sc.doc_id},{permno},{tau},{sc.score_year},{sc.value!r}\n")
