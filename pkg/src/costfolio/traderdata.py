"""Transaction and account-value ingestion, portfolio-building extraction and
per-trader aggregates.

CSV schemas
-----------
transactions  ``trader_id,category,timestamp,asset_id,asset_class,side,price,volume``
              (an optional trailing ``currency`` column must hold one value)
snapshots     ``trader_id,date,account_value``
"""

import bisect
import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, timezone

TRANSACTION_HEADER = ("trader_id", "category", "timestamp", "asset_id", "asset_class",
                      "side", "price", "volume")
SNAPSHOT_HEADER = ("trader_id", "date", "account_value")
CATEGORIES = ("individual", "company", "asset_manager")
ASSET_CLASSES = ("stock", "derivative", "bond", "fund")
SIDES = ("buy", "sell")


class ParseError(ValueError):
    """Malformed input row; carries the 1-based line number and column."""

    def __init__(self, line, column, reason):
        self.line = line
        self.column = column
        self.reason = reason
        where = "line %d" % line + (", column %r" % column if column else "")
        super().__init__("%s: %s" % (where, reason))


class NoAccountValueError(LookupError):
    """No snapshot strictly before the query date."""


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    trader_id: str
    category: str
    timestamp: datetime
    asset_id: str
    asset_class: str
    side: str
    price: float
    volume: float
    turnover: float


@dataclass(frozen=True)
class AccountSnapshot:
    trader_id: str
    date: date
    account_value: float


@dataclass(frozen=True)
class TraderAggregate:
    trader_id: str
    category: str
    mean_turnover: float
    mean_log_turnover: float
    mean_log_pv: float
    q_ratio: float
    phi_turnover: float
    n_assets: int
    mean_pv_phi: float
    n_transactions: int
    n_dropped: int


def _text(stream):
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(bytes(stream).decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def parse_timestamp(text):
    """ISO-8601 instant as an aware UTC datetime; naive input is taken as UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _positive_number(raw, line, column):
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(line, column, "not a number: %r" % raw) from None
    if not math.isfinite(v):
        raise ParseError(line, column, "not finite: %r" % raw)
    if v <= 0:
        raise ParseError(line, column, "%s must be positive, got %s" % (column, raw))
    return v


def _choice(raw, allowed, line, column):
    v = raw.strip()
    if v not in allowed:
        raise ParseError(line, column, "%r not in %s" % (raw, "/".join(allowed)))
    return v


def _nonempty(raw, line, column):
    v = raw.strip()
    if not v:
        raise ParseError(line, column, "empty value")
    return v


def parse_transactions(stream):
    """Parse a transaction CSV into records sorted by (trader_id, timestamp).

    The sort is stable, so rows with equal keys keep their input order.
    """
    reader = csv.reader(_text(stream))
    header = next(reader, None)
    if header is None:
        raise ParseError(1, None, "missing header")
    header = tuple(h.strip() for h in header)
    has_currency = header == TRANSACTION_HEADER + ("currency",)
    if header != TRANSACTION_HEADER and not has_currency:
        raise ParseError(1, None, "header must be %s" % ",".join(TRANSACTION_HEADER))
    width = len(header)
    currency = None
    out = []
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise ParseError(line, None, "expected %d fields, got %d" % (width, len(row)))
        trader = _nonempty(row[0], line, "trader_id")
        category = _choice(row[1], CATEGORIES, line, "category")
        try:
            ts = parse_timestamp(row[2])
        except ValueError:
            raise ParseError(line, "timestamp", "bad ISO-8601 instant %r" % row[2]) from None
        asset = _nonempty(row[3], line, "asset_id")
        aclass = _choice(row[4], ASSET_CLASSES, line, "asset_class")
        side = _choice(row[5], SIDES, line, "side")
        price = _positive_number(row[6], line, "price")
        volume = _positive_number(row[7], line, "volume")
        if has_currency:
            cur = _nonempty(row[8], line, "currency")
            if currency is None:
                currency = cur
            elif cur != currency:
                raise ParseError(line, "currency",
                                 "mixed currencies (%s vs %s) are not supported" % (currency, cur))
        out.append(Transaction(trader, category, ts, asset, aclass, side, price, volume,
                               price * volume))
    out.sort(key=lambda t: (t.trader_id, t.timestamp))
    return out


def parse_snapshots(stream):
    """Parse an account-value CSV; duplicate (trader_id, date) rows are an error."""
    reader = csv.reader(_text(stream))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SNAPSHOT_HEADER:
        raise ParseError(1, None, "header must be %s" % ",".join(SNAPSHOT_HEADER))
    seen = set()
    out = []
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ParseError(line, None, "expected 3 fields, got %d" % len(row))
        trader = _nonempty(row[0], line, "trader_id")
        try:
            d = date.fromisoformat(row[1].strip())
        except ValueError:
            raise ParseError(line, "date", "bad ISO-8601 date %r" % row[1]) from None
        try:
            v = float(row[2])
        except ValueError:
            raise ParseError(line, "account_value", "not a number: %r" % row[2]) from None
        if not math.isfinite(v) or v < 0:
            raise ParseError(line, "account_value", "must be finite and >= 0, got %s" % row[2])
        if (trader, d) in seen:
            raise ParseError(line, "date", "duplicate snapshot for %s on %s" % (trader, d))
        seen.add((trader, d))
        out.append(AccountSnapshot(trader, d, v))
    return out


class SnapshotIndex:
    """Per-trader sorted snapshot calendar for strict-prior-date lookups."""

    def __init__(self, snapshots):
        by_trader = defaultdict(list)
        for s in snapshots:
            by_trader[s.trader_id].append((s.date, s.account_value))
        self._dates = {}
        self._values = {}
        for tid, rows in by_trader.items():
            rows.sort()
            for (d0, _), (d1, _) in zip(rows, rows[1:]):
                if d0 == d1:
                    raise ValueError("duplicate snapshot for %s on %s" % (tid, d0))
            self._dates[tid] = [d for d, _ in rows]
            self._values[tid] = [v for _, v in rows]

    def value_at(self, trader_id, t):
        day = t.astimezone(timezone.utc).date() if isinstance(t, datetime) else t
        dates = self._dates.get(trader_id)
        if dates:
            i = bisect.bisect_left(dates, day)
            if i > 0:
                return self._values[trader_id][i - 1]
        raise NoAccountValueError("no account value available for %s before %s" % (trader_id, day))


def account_value_at(snapshots, trader_id, t):
    """Account value of the latest snapshot dated strictly before ``t``'s UTC date."""
    index = snapshots if isinstance(snapshots, SnapshotIndex) else SnapshotIndex(snapshots)
    return index.value_at(trader_id, t)


def extract_portfolio_building(transactions):
    """Indices of the first buy of every asset not bought before.

    Sells are ignored: they neither join the set nor mark an asset as seen.
    """
    seen = set()
    phi = []
    for i, t in enumerate(transactions):
        if t.side == "buy" and t.asset_id not in seen:
            seen.add(t.asset_id)
            phi.append(i)
    return phi


def aggregate_trader(transactions, snapshots):
    """Per-trader aggregates.

    ``mean_turnover`` and ``mean_log_turnover`` use every transaction;
    ``q_ratio`` and ``mean_log_pv`` use only those with a resolvable,
    positive account value (the rest are counted in ``n_dropped``).
    """
    txs = list(transactions)
    if not txs:
        raise InsufficientDataError("insufficient data: no transactions")
    tid = txs[0].trader_id
    if any(t.trader_id != tid for t in txs):
        raise ValueError("transactions span several traders")
    cats = {t.category for t in txs}
    if len(cats) != 1:
        raise ValueError("trader %s carries several categories: %s" % (tid, sorted(cats)))
    txs.sort(key=lambda t: t.timestamp)
    index = snapshots if isinstance(snapshots, SnapshotIndex) else SnapshotIndex(snapshots)

    pv = []
    for t in txs:
        try:
            v = index.value_at(tid, t.timestamp)
        except NoAccountValueError:
            v = None
        pv.append(v if (v is not None and v > 0) else None)
    usable = [(t, v) for t, v in zip(txs, pv) if v is not None]
    if not usable:
        raise InsufficientDataError("insufficient data: no transaction of %s has an account value" % tid)

    n = len(txs)
    phi = extract_portfolio_building(txs)
    phi_pv = [pv[i] for i in phi if pv[i] is not None]
    return TraderAggregate(
        trader_id=tid,
        category=cats.pop(),
        mean_turnover=math.fsum(t.turnover for t in txs) / n,
        mean_log_turnover=math.fsum(math.log(t.turnover) for t in txs) / n,
        mean_log_pv=math.fsum(math.log(v) for _, v in usable) / len(usable),
        q_ratio=math.fsum(t.turnover / v for t, v in usable) / len(usable),
        phi_turnover=math.fsum(txs[i].turnover for i in phi),
        n_assets=len(phi),
        mean_pv_phi=(math.fsum(phi_pv) / len(phi_pv)) if phi_pv else float("nan"),
        n_transactions=n,
        n_dropped=n - len(usable),
    )


def aggregate_all(transactions, snapshots, skip_insufficient=True):
    """Aggregates for every trader, in trader-id order.

    Returns ``(aggregates, skipped_trader_ids)``.
    """
    index = snapshots if isinstance(snapshots, SnapshotIndex) else SnapshotIndex(snapshots)
    groups = defaultdict(list)
    for t in transactions:
        groups[t.trader_id].append(t)
    out, skipped = [], []
    for tid in sorted(groups):
        try:
            out.append(aggregate_trader(groups[tid], index))
        except InsufficientDataError:
            if not skip_insufficient:
                raise
            skipped.append(tid)
    return out, skipped
