"""Raw trade events, event streams, and their CSV / JSONL ingestion."""

import csv
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import EmptyStream, MalformedRow, NonMonotonicTimestamp

CSV_HEADER = ("timestamp", "asset", "adv", "action", "side", "order_price", "volume")


class Action(IntEnum):
    ADD = 0
    CANCEL = 1


class Side(IntEnum):
    BUY = 0
    SELL = 1


class Scope(IntEnum):
    """Sequence aggregation level, fed to the model as a conditioning flag."""

    MARKET = 0
    PARTICIPANT = 1


@dataclass(frozen=True)
class TradeEvent:
    timestamp: float
    asset_id: str
    action: Action
    side: Side
    volume: int
    order_price: float | None = None

    @property
    def is_market_order(self):
        return self.order_price is None


@dataclass(frozen=True)
class AssetMeta:
    asset_id: str
    average_daily_volume: float
    opening_price: float

    def __post_init__(self):
        if not self.average_daily_volume > 0:
            raise ValueError("average_daily_volume must be positive")
        if not self.opening_price > 0:
            raise ValueError("opening_price must be positive")


@dataclass(frozen=True)
class EventStream:
    meta: AssetMeta
    events: tuple = ()
    scope: Scope = Scope.MARKET

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def timestamps(self):
        return np.array([e.timestamp for e in self.events], dtype=float)


def validate_event(event, line=None):
    """Raise MalformedRow if ``event`` breaks a TradeEvent invariant."""
    where = line if line is not None else "?"
    if not (math.isfinite(event.timestamp) and event.timestamp >= 0):
        raise MalformedRow(where, f"timestamp must be finite and non-negative, got {event.timestamp}")
    if isinstance(event.volume, bool) or int(event.volume) != event.volume or event.volume <= 0:
        raise MalformedRow(where, f"volume must be a positive integer, got {event.volume}")
    if event.order_price is not None and not (math.isfinite(event.order_price) and event.order_price > 0):
        raise MalformedRow(where, f"order_price must be positive, got {event.order_price}")


def make_stream(meta, events, scope=Scope.MARKET):
    """Build a validated EventStream from an iterable of TradeEvents."""
    events = tuple(events)
    prev = -math.inf
    for i, e in enumerate(events):
        validate_event(e, i + 1)
        if e.asset_id != meta.asset_id:
            raise MalformedRow(i + 1, f"asset {e.asset_id!r} differs from stream asset {meta.asset_id!r}")
        if e.timestamp < prev:
            raise NonMonotonicTimestamp(f"event {i + 1}: {e.timestamp} < {prev}")
        prev = e.timestamp
    return EventStream(meta, events, Scope(scope))


def orders_to_stream(meta, times, actions, sides, volumes, prices, scope=Scope.MARKET):
    """Assemble a stream from parallel arrays (``prices`` may contain NaN for market orders)."""
    events = [
        TradeEvent(
            float(t), meta.asset_id, Action(int(a)), Side(int(s)), int(v),
            None if not math.isfinite(p) else float(p),
        )
        for t, a, s, v, p in zip(times, actions, sides, volumes, prices)
    ]
    return make_stream(meta, events, scope)


def _parse_timestamp(raw):
    # accepts plain seconds or HH:MM:SS[.fff] (seconds since midnight)
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad clock time {raw!r}")
        h, m, s = parts
        return int(h) * 3600 + int(m) * 60 + float(s)
    return float(raw)


def _parse_record(rec, line):
    try:
        timestamp = _parse_timestamp(str(rec["timestamp"]).strip())
        asset = str(rec["asset"]).strip()
        adv = float(str(rec["adv"]).replace(",", ""))
        action = Action[str(rec["action"]).strip().upper()]
        side = Side[str(rec["side"]).strip().upper()]
        raw_price = rec["order_price"]
        price = None if raw_price is None or str(raw_price).strip() == "" else float(raw_price)
        raw_vol = str(rec["volume"]).replace(",", "").strip()
        volume = float(raw_vol)
    except KeyError as exc:
        raise MalformedRow(line, f"missing column {exc.args[0]!r}") from None
    except (ValueError, TypeError) as exc:
        raise MalformedRow(line, str(exc)) from None
    if not volume.is_integer():
        raise MalformedRow(line, f"volume must be an integer, got {raw_vol}")
    if not (math.isfinite(adv) and adv > 0):
        raise MalformedRow(line, f"adv must be positive, got {adv}")
    event = TradeEvent(timestamp, asset, action, side, int(volume), price)
    validate_event(event, line)
    return event, adv


def read_stream(path, format="csv", opening_price=None, scope=None):
    """Load and validate one asset's event stream.

    CSV files carry no opening price or scope column. The opening price
    defaults to the first limit order's price and the scope to MARKET;
    JSONL files may carry both in a leading ``{"meta": {...}}`` record.
    """
    path = Path(path)
    fmt = format.lower()
    records = []
    meta_record = {}
    with path.open(newline="") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise EmptyStream(f"{path}: no header")
            missing = [c for c in CSV_HEADER if c not in reader.fieldnames]
            if missing:
                raise MalformedRow(1, f"header lacks columns {missing}")
            for i, rec in enumerate(reader):
                records.append((i + 2, rec))
        elif fmt == "jsonl":
            for i, raw in enumerate(fh):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise MalformedRow(i + 1, f"invalid JSON: {exc}") from None
                if "meta" in obj and len(obj) == 1:
                    meta_record = obj["meta"]
                    continue
                records.append((i + 1, obj))
        else:
            raise ValueError(f"unknown format {format!r}")
    if not records:
        raise EmptyStream(f"{path}: no events")

    events = []
    asset = adv = None
    prev = -math.inf
    for line, rec in records:
        event, row_adv = _parse_record(rec, line)
        if asset is None:
            asset, adv = event.asset_id, row_adv
        elif event.asset_id != asset or row_adv != adv:
            raise MalformedRow(line, "all rows of a stream must share asset and adv")
        if event.timestamp < prev:
            raise NonMonotonicTimestamp(f"line {line}: {event.timestamp} < {prev}")
        prev = event.timestamp
        events.append(event)

    if opening_price is None:
        opening_price = meta_record.get("opening_price")
    if opening_price is None:
        limit_prices = [e.order_price for e in events if e.order_price is not None]
        if not limit_prices:
            raise MalformedRow(records[0][0], "no limit order to infer the opening price from")
        opening_price = limit_prices[0]
    if scope is None:
        scope = Scope[meta_record.get("scope", "MARKET")]
    meta = AssetMeta(asset, adv, float(opening_price))
    return EventStream(meta, tuple(events), Scope(scope))


def _row(event, meta):
    return {
        "timestamp": repr(float(event.timestamp)),
        "asset": event.asset_id,
        "adv": repr(float(meta.average_daily_volume)),
        "action": event.action.name,
        "side": event.side.name,
        "order_price": "" if event.order_price is None else repr(float(event.order_price)),
        "volume": str(int(event.volume)),
    }


def write_stream(stream, path, format="csv"):
    """Write ``stream`` so that :func:`read_stream` returns it unchanged."""
    path = Path(path)
    fmt = format.lower()
    with path.open("w", newline="") as fh:
        if fmt == "csv":
            writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
            writer.writeheader()
            for e in stream.events:
                writer.writerow(_row(e, stream.meta))
        elif fmt == "jsonl":
            meta = {
                "asset": stream.meta.asset_id,
                "adv": stream.meta.average_daily_volume,
                "opening_price": stream.meta.opening_price,
                "scope": stream.scope.name,
            }
            fh.write(json.dumps({"meta": meta}) + "\n")
            for e in stream.events:
                rec = {
                    "timestamp": e.timestamp,
                    "asset": e.asset_id,
                    "adv": stream.meta.average_daily_volume,
                    "action": e.action.name,
                    "side": e.side.name,
                    "order_price": e.order_price,
                    "volume": int(e.volume),
                }
                fh.write(json.dumps(rec) + "\n")
        else:
            raise ValueError(f"unknown format {format!r}")
