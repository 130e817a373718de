"""Agreement-filtered long-short strategy with bid/ask execution, plus the
top-k ranking precision evaluation on dense announcement days."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date

import pandas as pd

from .errors import EmptyDay, MissingQuote

log = logging.getLogger(__name__)

SPREAD_CUTOFF = 0.2
MIN_DAY_EVENTS = 20
PRECISION_KS = (1, 2, 3, 5, 10)

LONG, SHORT, NONE = "Long", "Short", "None"


@dataclass
class QuoteSnapshot:
    permno: int
    date: date
    bid_0945: float
    ask_0945: float
    close: float
    bid_close: float
    ask_close: float

    def __post_init__(self):
        if not (0 < self.bid_0945 <= self.ask_0945):
            raise ValueError(f"bad 9:45 quote for {self.permno} {self.date}")
        if not (0 < self.bid_close <= self.ask_close):
            raise ValueError(f"bad close quote for {self.permno} {self.date}")
        if self.close <= 0:
            raise ValueError(f"nonpositive close for {self.permno} {self.date}")


@dataclass
class SignalRecord:
    permno: int
    tau_eff: date
    surprise: float
    soft_mean: float
    mktcap_tm1: float = 0.0
    ret_day: float = 0.0

    @property
    def direction(self) -> str:
        return classify_signal(self.surprise, self.soft_mean)


@dataclass
class LsPortfolioDay:
    date: date
    rank_by: str  # "surprise" | "soft"
    long_leg: list[tuple[int, float]]   # (permno, weight)
    short_leg: list[tuple[int, float]]
    ret_long: dict[int, float] = field(default_factory=dict)   # strategy -> ret
    ret_short: dict[int, float] = field(default_factory=dict)

    def ls(self, strategy: int) -> float:
        return self.ret_long[strategy] - self.ret_short[strategy]


def spread_filter(q: QuoteSnapshot) -> bool:
    """Keep unless the 9:45 relative spread reaches 20% of the midquote."""
    mid = (q.ask_0945 + q.bid_0945) / 2.0
    return (q.ask_0945 - q.bid_0945) / mid < SPREAD_CUTOFF


def classify_signal(surprise: float, soft_mean: float) -> str:
    if surprise > 0 and soft_mean > 0:
        return LONG
    if surprise < 0 and soft_mean < 0:
        return SHORT
    return NONE


def build_day_portfolio(signals: list[SignalRecord],
                        quotes: dict[int, QuoteSnapshot],
                        rank_by: str) -> LsPortfolioDay:
    """min(|L|,|S|) stocks per leg, ranked by the chosen signal, weighted by
    prior-day market cap within each leg."""
    if rank_by not in ("surprise", "soft"):
        raise ValueError(f"rank_by={rank_by!r}")
    tradable = [s for s in signals
                if s.permno in quotes and spread_filter(quotes[s.permno])
                and s.mktcap_tm1 > 0]
    longs = [s for s in tradable if s.direction == LONG]
    shorts = [s for s in tradable if s.direction == SHORT]
    n = min(len(longs), len(shorts))
    if n == 0:
        raise EmptyDay(f"no tradable long/short pair on {signals[0].tau_eff}"
                       if signals else "empty day")

    key = (lambda s: s.surprise) if rank_by == "surprise" else (lambda s: s.soft_mean)
    longs.sort(key=lambda s: (-key(s), s.permno))
    shorts.sort(key=lambda s: (key(s), s.permno))
    longs, shorts = longs[:n], shorts[:n]

    def weighted(leg):
        total = sum(s.mktcap_tm1 for s in leg)
        return [(s.permno, s.mktcap_tm1 / total) for s in leg]

    return LsPortfolioDay(signals[0].tau_eff, rank_by,
                          weighted(longs), weighted(shorts))


def _stock_return(q: QuoteSnapshot, long_side: bool, strategy: int) -> float:
    if long_side:
        entry = q.ask_0945
        exit_ = q.close if strategy == 1 else q.bid_close
    else:
        entry = q.bid_0945
        exit_ = q.close if strategy == 1 else q.ask_close
    return exit_ / entry - 1.0


def leg_returns(portfolio: LsPortfolioDay,
                quotes: dict[int, QuoteSnapshot]) -> LsPortfolioDay:
    """Fill weight-averaged leg returns for both execution strategies.

    Strategy 1 exits at the close price; strategy 2 exits at the adverse
    quote (long sells at bid, short covers at ask)."""
    for strategy in (1, 2):
        for attr, leg, long_side in (("ret_long", portfolio.long_leg, True),
                                     ("ret_short", portfolio.short_leg, False)):
            total = 0.0
            for permno, weight in leg:
                q = quotes.get(permno)
                if q is None:
                    raise MissingQuote(f"{permno} on {portfolio.date}")
                total += weight * _stock_return(q, long_side, strategy)
            getattr(portfolio, attr)[strategy] = total
    return portfolio


def ls_series(portfolios: list[LsPortfolioDay]) -> dict[date, tuple[float, float]]:
    return {p.date: (p.ls(1), p.ls(2)) for p in sorted(portfolios,
                                                       key=lambda p: p.date)}


# ---------------------------------------------------------------------------
# Precision@k


@dataclass
class PrecisionResult:
    direction: str  # "TopPositive" | "TopNegative"
    rank_by: str
    agreement: bool
    precision: dict[int, float]
    n_days: int
    n_events: int


def _day_precision(records: list[SignalRecord], rank_by: str, direction: str,
                   k: int) -> float:
    key = (lambda s: s.surprise) if rank_by == "surprise" else (lambda s: s.soft_mean)
    descending = direction == "TopPositive"
    sign = -1.0 if descending else 1.0
    predicted = sorted(records, key=lambda s: (sign * key(s), s.permno))
    realized = sorted(records, key=lambda s: (sign * s.ret_day, s.permno))
    top_pred = {s.permno for s in predicted[:k]}
    top_real = {s.permno for s in realized[:k]}
    return len(top_pred & top_real) / k


def precision_at_k(days: dict[date, list[SignalRecord]], rank_by: str,
                   direction: str, agreement: bool,
                   ks=PRECISION_KS) -> PrecisionResult:
    """Average P@k over days with >= 20 announcements; under the agreement
    flag only direction-consistent stocks are evaluated. Days thinner than k
    after filtering contribute C/k with the truncated set."""
    want = LONG if direction == "TopPositive" else SHORT
    per_k: dict[int, list[float]] = {k: [] for k in ks}
    n_days = 0
    n_events = 0
    for day in sorted(days):
        records = days[day]
        if len(records) < MIN_DAY_EVENTS:
            continue
        evaluated = [s for s in records if s.direction == want] if agreement \
            else list(records)
        if not evaluated:
            continue
        n_days += 1
        n_events += len(evaluated)
        for k in ks:
            if len(evaluated) < k:
                log.debug("day %s: only %d stocks for k=%d", day,
                          len(evaluated), k)
            per_k[k].append(_day_precision(evaluated, rank_by, direction, k))
    precision = {k: (sum(v) / len(v) if v else float("nan"))
                 for k, v in per_k.items()}
    return PrecisionResult(direction, rank_by, agreement, precision,
                           n_days, n_events)


# ---------------------------------------------------------------------------
# Interchange files


def read_quotes(path) -> dict[date, dict[int, QuoteSnapshot]]:
    df = pd.read_csv(path)
    out: dict[date, dict[int, QuoteSnapshot]] = {}
    for r in df.itertuples():
        d = date.fromisoformat(str(r.date))
        out.setdefault(d, {})[int(r.permno)] = QuoteSnapshot(
            int(r.permno), d, float(r.bid_0945), float(r.ask_0945),
            float(r.close), float(r.bid_close), float(r.ask_close))
    return out


def write_ls_series(portfolios: list[LsPortfolioDay], path) -> None:
    with open(path, "w") as f:
        f.write("date,ls1,ls2,n_long,n_short,rank_by\n")
        for p in sorted(portfolios, key=lambda p: (p.date, p.rank_by)):
            f.write(f"{p.date.isoformat()},{p.ls(1)!r},{p.ls(2)!r},"
                    f"{len(p.long_leg)},{len(p.short_leg)},{p.rank_by}\n")


def write_precision(results: list[PrecisionResult], path) -> None:
    with open(path, "w") as f:
        f.write("direction,rank_by,agreement,k,precision,n_days\n")
        for res in results:
            for k in sorted(res.precision):
                f.write(f"{res.direction},{res.rank_by},{int(res.agreement)},"
                        f"{k},{res.precision[k]!r},{res.n_days}\n")
