"""HTML cleaning, retention, trading-day alignment, consensus, surprise."""

from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from earnsignal import corpus as cp
from earnsignal.errors import (CalendarOutOfRange, EmptyBody, NoForecast,
                               NonPositivePrice)

ET = timezone(timedelta(hours=-5))
FIXTURES = Path(__file__).parent / "fixtures"


def ts(y, m, d, hh, mm, ss=0):
    return datetime(y, m, d, hh, mm, ss, tzinfo=ET)


def make_doc(clean_len=5000, raw_len=None, hh=17, mm=0):
    doc = cp.PressReleaseDoc("d1", 10001, ts(2011, 3, 1, hh, mm),
                             "x" * (raw_len if raw_len is not None else clean_len))
    doc.clean_text = "y" * clean_len
    return doc


# ---------------------------------------------------------------------------
# clean_press_release


def test_clean_removes_tables():
    html = "<body><p>Revenue grew.</p><table><tr><td>9</td></tr></table></body>"
    assert cp.clean_press_release(html) == "Revenue grew."


def test_clean_removes_exhibit_header():
    html = "<body>Exhibit 99.1\nACME reports record profit.</body>"
    assert cp.clean_press_release(html) == "ACME reports record profit."


def test_clean_golden_fixture():
    raw = (FIXTURES / "8k_sample_01.html").read_text()
    golden = (FIXTURES / "8k_sample_01.txt").read_text().rstrip("\n")
    assert cp.clean_press_release(raw) == golden


def test_clean_idempotent_on_own_output():
    raw = (FIXTURES / "8k_sample_01.html").read_text()
    once = cp.clean_press_release(raw)
    # block structure is gone, so re-wrap each line as a paragraph
    rewrapped = "<body>" + "".join(f"<p>{ln}</p>"
                                   for ln in once.split("\n")) + "</body>"
    assert cp.clean_press_release(rewrapped) == once


def test_clean_tolerates_missing_body_and_bad_tags():
    out = cp.clean_press_release("<p>Profit rose.<p>Margins too.</i></html>")
    assert "Profit rose." in out and "Margins too." in out


def test_clean_empty_raises():
    with pytest.raises(EmptyBody):
        cp.clean_press_release("<body><table><tr><td>1</td></tr></table></body>")


def test_clean_strips_phone_numbers_inline():
    out = cp.clean_press_release("<body><p>Call 212-555-0100 for details on "
                                 "widget output this year.</p></body>")
    assert "555" not in out and "widget output" in out


# ---------------------------------------------------------------------------
# retain_document


def test_retain_too_short_clean():
    keep, reason = cp.retain_document(make_doc(clean_len=99, raw_len=5000))
    assert (keep, reason) == (False, "too_short")


def test_retain_too_short_raw():
    keep, reason = cp.retain_document(make_doc(clean_len=5000, raw_len=99))
    assert not keep and reason == "too_short"


def test_retain_too_long():
    keep, reason = cp.retain_document(make_doc(clean_len=1_000_001))
    assert not keep and reason == "too_long"


@pytest.mark.parametrize("hh,mm,ss,keep", [
    (9, 29, 59, True),   # strictly before the open: retained
    (9, 30, 0, False),   # at the open: dropped
    (15, 59, 59, False),
    (16, 0, 0, True),    # on or after the close: retained
    (23, 45, 0, True),
    (0, 5, 0, True),
])
def test_retain_time_window(hh, mm, ss, keep):
    doc = cp.PressReleaseDoc("d", 1, datetime(2011, 3, 1, hh, mm, ss, tzinfo=ET),
                             "x" * 5000)
    doc.clean_text = "y" * 5000
    got, _ = cp.retain_document(doc)
    assert got == keep


def test_retention_is_pure():
    doc = make_doc()
    assert cp.retain_document(doc) == cp.retain_document(doc)


# ---------------------------------------------------------------------------
# effective_trading_day


@pytest.fixture
def calendar():
    # Mon 2011-03-07 .. Fri 2011-03-11, then Mon 2011-03-14
    return cp.TradingCalendar([date(2011, 3, d) for d in (7, 8, 9, 10, 11, 14)])


def test_tau_after_close_next_day(calendar):
    assert cp.effective_trading_day(ts(2011, 3, 8, 17, 0), calendar) \
        == date(2011, 3, 9)


def test_tau_before_open_same_day(calendar):
    assert cp.effective_trading_day(ts(2011, 3, 9, 8, 0), calendar) \
        == date(2011, 3, 9)


def test_tau_friday_evening_to_monday(calendar):
    assert cp.effective_trading_day(ts(2011, 3, 11, 18, 0), calendar) \
        == date(2011, 3, 14)


def test_tau_weekend_morning_rolls_forward(calendar):
    assert cp.effective_trading_day(ts(2011, 3, 12, 8, 0), calendar) \
        == date(2011, 3, 14)


def test_tau_out_of_range(calendar):
    with pytest.raises(CalendarOutOfRange):
        cp.effective_trading_day(ts(2011, 3, 14, 17, 0), calendar)


# ---------------------------------------------------------------------------
# consensus_eps / compute_surprise


def fc(analyst, day, value):
    return cp.AnalystForecast(1, analyst, day, value)


def test_consensus_median_odd():
    d = date(2011, 3, 1)
    fcs = [fc("A", d - timedelta(days=5), 1.0),
           fc("B", d - timedelta(days=6), 1.2),
           fc("C", d - timedelta(days=7), 0.8)]
    assert cp.consensus_eps(fcs, d) == 1.0


def test_consensus_latest_per_analyst():
    d = date(2011, 3, 1)
    fcs = [fc("A", d - timedelta(days=30), 0.9),
           fc("A", d - timedelta(days=5), 1.1)]
    assert cp.consensus_eps(fcs, d) == 1.1


def test_consensus_even_count_mean_of_middle():
    d = date(2011, 3, 1)
    fcs = [fc("A", d - timedelta(days=5), 1.0),
           fc("B", d - timedelta(days=5), 2.0)]
    assert cp.consensus_eps(fcs, d) == 1.5


def test_consensus_window_excludes_stale():
    d = date(2011, 3, 1)
    fcs = [fc("A", d - timedelta(days=91), 9.9),
           fc("B", d - timedelta(days=89), 1.0)]
    assert cp.consensus_eps(fcs, d) == 1.0


def test_consensus_empty_window():
    d = date(2011, 3, 1)
    with pytest.raises(NoForecast):
        cp.consensus_eps([fc("A", d - timedelta(days=120), 1.0)], d)


@pytest.mark.parametrize("actual,consensus,price,expected", [
    (0.55, 0.50, 10.0, 0.005),
    (1.00, 1.00, 37.5, 0.0),
    (0.40, 0.50, 20.0, -0.005),
])
def test_surprise(actual, consensus, price, expected):
    assert cp.compute_surprise(actual, consensus, price) == pytest.approx(
        expected, abs=1e-15)


def test_surprise_nonpositive_price():
    with pytest.raises(NonPositivePrice):
        cp.compute_surprise(1.0, 0.9, 0.0)


@given(st.floats(-10, 10), st.floats(-10, 10),
       st.floats(0.01, 1e4))
def test_surprise_recomputes_bit_for_bit(actual, consensus, price):
    s = cp.compute_surprise(actual, consensus, price)
    assert cp.compute_surprise(actual, consensus, price) == s


# ---------------------------------------------------------------------------
# corpus_stats / join


def test_corpus_stats_grouping():
    docs = []
    taus = {}
    for i, permno in enumerate((1, 1, 2)):
        doc = cp.PressReleaseDoc(str(i), permno, ts(2010, 5, 3, 17, 0), "x" * 200)
        doc.clean_text = "y" * (100 + 100 * i)
        docs.append(doc)
        taus[str(i)] = date(2010, 5, 4)
    stats = cp.corpus_stats(docs, taus)
    assert set(stats) == {2010}
    assert stats[2010]["article_count"] == 3
    assert stats[2010]["distinct_stock_count"] == 2
    assert stats[2010]["mean_char_count"] == pytest.approx(200.0)


def make_event(permno, tau):
    return cp.EarningsEvent(permno, ts(tau.year, tau.month, tau.day, 7, 0),
                            1.0, 0.9, 10.0, 0.01, 0.02, 0.0, 1e9, tau)


def test_join_matches_and_reports():
    tau = date(2011, 3, 9)
    short = make_doc(clean_len=200)
    short.doc_id = "a"
    long_ = make_doc(clean_len=400)
    long_.doc_id = "b"
    orphan = make_doc()
    orphan.doc_id = "c"
    orphan.permno = 99
    taus = {"a": tau, "b": tau, "c": tau}
    res = cp.join_docs_events([short, long_, orphan], taus,
                              [make_event(10001, tau)])
    assert [doc.doc_id for doc, _ in res.matched] == ["b"]  # longest wins
    assert res.duplicate_docs == ["a"]
    assert res.unmatched_docs == ["c"]
