"""Press-release ingestion: HTML cleaning, retention filters, event alignment.

Timestamps are normalized to exchange wall-clock time (America/New_York
semantics) at ingest; the after-hours retention rule and effective-day
mapping operate on that local clock.
"""

from __future__ import annotations

import html.parser
import logging
import re
import statistics
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from importlib import resources
from pathlib import Path

import pandas as pd

from .errors import CalendarOutOfRange, EmptyBody, NoForecast, NonPositivePrice

log = logging.getLogger(__name__)

MIN_CHARS = 100
MAX_CHARS = 1_000_000
OPEN_TIME = time(9, 30)
CLOSE_TIME = time(16, 0)
CONSENSUS_WINDOW_DAYS = 90


@dataclass
class PressReleaseDoc:
    doc_id: str
    permno: int
    announce_ts: datetime  # tz-aware, exchange-local
    raw_html: str = ""
    clean_text: str | None = None

    def __post_init__(self):
        if self.announce_ts.tzinfo is None:
            raise ValueError(f"doc {self.doc_id}: announce_ts must carry a zone")

    @property
    def char_count_raw(self) -> int:
        return len(self.raw_html)

    @property
    def char_count_clean(self) -> int:
        return len(self.clean_text) if self.clean_text is not None else 0


@dataclass
class EarningsEvent:
    permno: int
    announce_ts: datetime
    eps_actual: float
    eps_consensus: float
    price_tm5: float
    surprise: float
    ret_day: float
    ret_prev_day: float
    mktcap_tm1: float
    tau_eff: date


@dataclass
class AnalystForecast:
    permno: int
    analyst_id: str
    issue_date: date
    eps_forecast: float


class TradingCalendar:
    """Strictly increasing list of trading dates."""

    def __init__(self, dates):
        self.dates = sorted(set(dates))
        if not self.dates:
            raise ValueError("empty trading calendar")

    @classmethod
    def from_file(cls, path) -> "TradingCalendar":
        with open(path) as f:
            days = [date.fromisoformat(line.strip()) for line in f if line.strip()]
        return cls(days)

    def is_trading_day(self, d: date) -> bool:
        i = bisect_left(self.dates, d)
        return i < len(self.dates) and self.dates[i] == d

    def on_or_after(self, d: date) -> date:
        i = bisect_left(self.dates, d)
        if i >= len(self.dates):
            raise CalendarOutOfRange(f"{d} beyond calendar end {self.dates[-1]}")
        return self.dates[i]

    def after(self, d: date) -> date:
        i = bisect_right(self.dates, d)
        if i >= len(self.dates):
            raise CalendarOutOfRange(f"no trading day after {d}")
        return self.dates[i]

    def before(self, d: date) -> date:
        i = bisect_left(self.dates, d)
        if i == 0:
            raise CalendarOutOfRange(f"no trading day before {d}")
        return self.dates[i - 1]


# ---------------------------------------------------------------------------
# HTML cleaning

PARA_BREAK = "\x00"


class _BodyTextParser(html.parser.HTMLParser):
    """Tolerant extractor: text inside <body>, skipping tables/scripts/styles.

    Block-level tags introduce line breaks so that downstream line rules
    (exhibit headers, page numbers) see one candidate per line.
    """

    _BLOCK_TAGS = {"p", "div", "br", "tr", "li", "h1", "h2", "h3", "h4",
                   "h5", "h6", "section", "article", "header", "footer"}
    _SKIP_TAGS = {"table", "script", "style", "head", "title"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.skip_depth = 0
        self.saw_body = False
        self.in_body = False

    def handle_starttag(self, tag, attrs):
        if tag == "body":
            self.saw_body = True
            self.in_body = True
        elif tag in self._SKIP_TAGS:
            self.skip_depth += 1
        elif tag in self._BLOCK_TAGS:
            self.parts.append(PARA_BREAK)

    def handle_endtag(self, tag):
        if tag == "body":
            self.in_body = False
        elif tag in self._SKIP_TAGS and self.skip_depth > 0:
            self.skip_depth -= 1
        elif tag in self._BLOCK_TAGS:
            self.parts.append(PARA_BREAK)

    def handle_data(self, data):
        if self.skip_depth:
            return
        if self.saw_body and not self.in_body:
            return
        self.parts.append(data)

    def text(self) -> str:
        # Documents without an explicit <body> are treated as all-body.
        return "".join(self.parts)


@dataclass
class BoilerplateRule:
    kind: str  # LINE | PARA | SUB
    pattern: re.Pattern

    @classmethod
    def parse(cls, line: str) -> "BoilerplateRule":
        kind, _, pat = line.partition("\t")
        if kind not in ("LINE", "PARA", "SUB") or not pat:
            raise ValueError(f"bad boilerplate rule: {line!r}")
        return cls(kind, re.compile(pat, re.IGNORECASE))


def load_boilerplate_rules(path=None) -> list[BoilerplateRule]:
    if path is None:
        text = resources.files("earnsignal.data").joinpath(
            "boilerplate_patterns.tsv").read_text()
    else:
        text = Path(path).read_text()
    rules = []
    for line in text.splitlines():
        line = line.rstrip()
        if not line or line.startswith("#"):
            continue
        rules.append(BoilerplateRule.parse(line))
    return rules


_DEFAULT_RULES: list[BoilerplateRule] | None = None


def _default_rules() -> list[BoilerplateRule]:
    global _DEFAULT_RULES
    if _DEFAULT_RULES is None:
        _DEFAULT_RULES = load_boilerplate_rules()
    return _DEFAULT_RULES


def _apply_boilerplate(paragraphs: list[str], rules) -> list[str]:
    """Paragraph-trigger rules drop whole paragraphs; line rules work on the
    raw-newline lines inside each paragraph. Kept paragraphs collapse to one
    output line."""
    out = []
    for para in paragraphs:
        lines = [re.sub(r"\s+", " ", ln).strip() for ln in para.split("\n")]
        lines = [ln for ln in lines if ln]
        if not lines:
            continue
        whole = " ".join(lines)
        if any(r.kind == "PARA" and r.pattern.search(whole) for r in rules):
            continue
        kept = []
        for ln in lines:
            if any(r.kind == "LINE" and r.pattern.search(ln) for r in rules):
                continue
            for r in rules:
                if r.kind == "SUB":
                    ln = r.pattern.sub(" ", ln)
            ln = re.sub(r"\s+", " ", ln).strip()
            if ln:
                kept.append(ln)
        if kept:
            out.append(" ".join(kept))
    return out


def clean_press_release(raw_html: str, rules=None) -> str:
    """Body-only text with tables, boilerplate and layout noise removed."""
    parser = _BodyTextParser()
    parser.feed(raw_html)
    parser.close()
    paragraphs = parser.text().split(PARA_BREAK)
    lines = _apply_boilerplate(paragraphs,
                               rules if rules is not None else _default_rules())
    cleaned = "\n".join(lines)
    if not cleaned:
        raise EmptyBody("no body content after cleaning")
    return cleaned


# ---------------------------------------------------------------------------
# Retention and alignment


def retain_document(doc: PressReleaseDoc) -> tuple[bool, str]:
    """Keep/drop decision with reason; total over cleaned docs."""
    for n in (doc.char_count_raw, doc.char_count_clean):
        if n < MIN_CHARS:
            return False, "too_short"
        if n > MAX_CHARS:
            return False, "too_long"
    t = doc.announce_ts.timetz().replace(tzinfo=None)
    if OPEN_TIME <= t < CLOSE_TIME:
        return False, "market_hours"
    return True, "after_hours"


def effective_trading_day(announce_ts: datetime, calendar: TradingCalendar) -> date:
    """Map an announcement to the trading day whose close absorbs it."""
    d = announce_ts.date()
    t = announce_ts.timetz().replace(tzinfo=None)
    if t >= CLOSE_TIME:
        return calendar.after(d)
    return calendar.on_or_after(d)


def consensus_eps(forecasts: list[AnalystForecast], announce_date: date) -> float:
    """Median of each analyst's latest forecast in the 90-day window."""
    window_start = announce_date - timedelta(days=CONSENSUS_WINDOW_DAYS)
    latest: dict[str, AnalystForecast] = {}
    for f in forecasts:
        if not (window_start <= f.issue_date <= announce_date):
            continue
        cur = latest.get(f.analyst_id)
        if cur is None or f.issue_date >= cur.issue_date:
            latest[f.analyst_id] = f
    if not latest:
        raise NoForecast(f"no forecast within {CONSENSUS_WINDOW_DAYS} days "
                         f"of {announce_date}")
    return statistics.median(f.eps_forecast for f in latest.values())


def compute_surprise(eps_actual: float, eps_consensus: float, price_tm5: float) -> float:
    if price_tm5 <= 0:
        raise NonPositivePrice(f"price_tm5={price_tm5}")
    return (eps_actual - eps_consensus) / price_tm5


def corpus_stats(docs: list[PressReleaseDoc], tau_eff_by_doc: dict[str, date]) -> dict:
    """Per calendar year: article count, distinct firms, mean clean chars."""
    by_year: dict[int, list[PressReleaseDoc]] = {}
    for doc in docs:
        year = tau_eff_by_doc[doc.doc_id].year
        by_year.setdefault(year, []).append(doc)
    out = {}
    for year in sorted(by_year):
        group = by_year[year]
        out[year] = {
            "article_count": len(group),
            "distinct_stock_count": len({d.permno for d in group}),
            "mean_char_count": sum(d.char_count_clean for d in group) / len(group),
        }
    return out


@dataclass
class JoinResult:
    """Doc ↔ event alignment on (permno, tau_eff)."""

    matched: list[tuple[PressReleaseDoc, EarningsEvent]] = field(default_factory=list)
    unmatched_docs: list[str] = field(default_factory=list)
    duplicate_docs: list[str] = field(default_factory=list)


def join_docs_events(docs, tau_eff_by_doc, events) -> JoinResult:
    """One event per retained doc; duplicates resolved to the longest doc."""
    ev_by_key = {(e.permno, e.tau_eff): e for e in events}
    best: dict[tuple, PressReleaseDoc] = {}
    result = JoinResult()
    for doc in docs:
        key = (doc.permno, tau_eff_by_doc[doc.doc_id])
        if key not in ev_by_key:
            result.unmatched_docs.append(doc.doc_id)
            continue
        cur = best.get(key)
        if cur is None:
            best[key] = doc
        elif doc.char_count_clean > cur.char_count_clean:
            result.duplicate_docs.append(cur.doc_id)
            best[key] = doc
        else:
            result.duplicate_docs.append(doc.doc_id)
    for key, doc in sorted(best.items(), key=lambda kv: kv[1].doc_id):
        result.matched.append((doc, ev_by_key[key]))
    if result.duplicate_docs:
        log.info("dropped %d duplicate same-day filings (kept longest)",
                 len(result.duplicate_docs))
    return result


# ---------------------------------------------------------------------------
# File readers (module interchange formats)


def read_manifest(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"doc_id": str})
    need = {"doc_id", "permno", "announce_ts", "html_path"}
    missing = need - set(df.columns)
    if missing:
        raise ValueError(f"manifest missing columns: {sorted(missing)}")
    if df["doc_id"].duplicated().any():
        dupes = df.loc[df["doc_id"].duplicated(), "doc_id"].tolist()
        raise ValueError(f"duplicate doc_ids in manifest: {dupes[:5]}")
    return df


def read_events(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    need = {"permno", "announce_ts", "eps_actual", "price_tm5",
            "ret_day", "ret_prev_day", "mktcap_tm1"}
    missing = need - set(df.columns)
    if missing:
        raise ValueError(f"events missing columns: {sorted(missing)}")
    return df


def read_forecasts(path) -> list[AnalystForecast]:
    df = pd.read_csv(path, dtype={"analyst_id": str})
    return [
        AnalystForecast(int(r.permno), r.analyst_id,
                        date.fromisoformat(str(r.issue_date)), float(r.eps_forecast))
        for r in df.itertuples()
    ]
