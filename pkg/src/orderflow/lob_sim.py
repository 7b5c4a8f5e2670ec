"""Deterministic limit order book with price-time priority matching.

Prices are held as integer micro-currency units (1e-6) so that every
comparison is exact and replays are bit-identical. Orders carry no
external ids: cancels remove the resting order on the given side whose
price is nearest the cancel's target price (oldest first on ties).

At initialisation both touches are phantom quotes at the opening price.
They are never matched and vanish once a real order of that side arrives.
"""

import bisect
import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ClockRegression, EmptyOppositeSide, NonPositivePrice
from .events import Action, Side

MICRO = 1_000_000
BUY, SELL = int(Side.BUY), int(Side.SELL)
ADD, CANCEL = int(Action.ADD), int(Action.CANCEL)

FILLS_HEADER = ("incoming_id", "resting_id", "price", "volume", "time", "time_since_resting")
SERIES_HEADER = ("time", "midprice", "spread", "bid_volume", "ask_volume", "imbalance")

# resting order layout: [order_id, volume, entry_time, price_micro or None, side]
_ID, _VOL, _TIME, _PRICE, _SIDE = range(5)


class Transaction(NamedTuple):
    """One order-flow event for the simulator.

    Limit prices come either from ``price`` (absolute, as in replayed
    data) or from ``depth_bps`` relative to the simulator's mid-price.
    """

    time: float
    action: int
    side: int
    volume: int
    depth_bps: float | None = None
    price: float | None = None
    is_market: bool = False


class Fill(NamedTuple):
    incoming_id: int
    resting_id: int
    price: float
    volume: int
    time: float
    time_since_resting: float
    incoming_side: int
    resting_side: int


class Delete(NamedTuple):
    time: float
    side: int
    target_price: float
    order_id: int  # -1 when nothing matched
    price: float
    volume: int


def to_micro(price):
    return int(round(price * MICRO))


class OrderBook:
    """Book state plus the per-step history series."""

    def __init__(self, p0, market_price_rule="algorithm2", check=False):
        if not (p0 > 0 and math.isfinite(p0)):
            raise NonPositivePrice(f"initial price must be positive, got {p0}")
        if market_price_rule not in ("algorithm2", "crossing"):
            raise ValueError(f"unknown market_price_rule {market_price_rule!r}")
        self.p0 = float(p0)
        self.market_price_rule = market_price_rule
        self.check = check
        anchor = to_micro(p0)
        # per side: price -> deque of orders, and the sorted list of live prices
        self._levels = ({}, {})
        self._prices = ([], [])
        self._market = (deque(), deque())
        self._volume = [0, 0]
        self._anchor = [anchor, anchor]
        self._mid = float(anchor)  # micro units
        self._next_id = 0
        self.clock = 0.0
        self.transaction_midprice = self.p0
        self.fills = []
        self.deletes = []
        self.rejected = 0
        self.series = ([], [], [], [], [], [])

    # -- queries --------------------------------------------------------
    def _best(self, side):
        prices = self._prices[side]
        if prices:
            return prices[-1] if side == BUY else prices[0]
        return self._anchor[side]

    @property
    def best_bid(self):
        b = self._best(BUY)
        return None if b is None else b / MICRO

    @property
    def best_ask(self):
        a = self._best(SELL)
        return None if a is None else a / MICRO

    @property
    def midprice(self):
        return self._mid / MICRO

    @property
    def spread(self):
        b, a = self._best(BUY), self._best(SELL)
        return math.nan if b is None or a is None else (a - b) / MICRO

    @property
    def bid_volume(self):
        return self._volume[BUY]

    @property
    def ask_volume(self):
        return self._volume[SELL]

    @property
    def imbalance(self):
        b, a = self._volume
        return 0.0 if b + a == 0 else (b - a) / (b + a)

    def resting_orders(self, side):
        """Resting orders of ``side`` in priority order, as (id, volume, entry_time, price)."""
        out = [(o[_ID], o[_VOL], o[_TIME], None) for o in self._market[side]]
        prices = self._prices[side]
        for p in (reversed(prices) if side == BUY else prices):
            out.extend((o[_ID], o[_VOL], o[_TIME], p / MICRO) for o in self._levels[side][p])
        return out

    def is_crossed(self):
        bids, asks = self._prices
        return bool(bids and asks and bids[-1] >= asks[0])

    # -- pricing --------------------------------------------------------
    def order_price_from_depth(self, depth_bps, side=None, is_market=False):
        """Absolute price of an order ``depth_bps`` away from the mid-price.

        Market orders instead take a touch price: with the default
        ``algorithm2`` rule a sell takes the lowest ask and a buy the
        highest bid; the ``crossing`` rule swaps these.
        """
        if is_market:
            touch_side = SELL if side == SELL else BUY
            if self.market_price_rule == "crossing":
                touch_side = 1 - touch_side
            p = self._best(touch_side)
            if p is None:
                raise EmptyOppositeSide("no touch price for market order")
            return p / MICRO
        mid = self._mid / MICRO
        return (depth_bps / 10_000.0) * mid + mid

    def _recompute_mid(self, extra_side=None, extra_price=None):
        b, a = self._best(BUY), self._best(SELL)
        if extra_price is not None:
            if extra_side == BUY:
                b = extra_price if b is None or extra_price > b else b
            else:
                a = extra_price if a is None or extra_price < a else a
        if b is not None and a is not None:
            return (b + a) / 2.0
        if b is not None:
            return float(b)
        if a is not None:
            return float(a)
        return self._mid

    def step_midprice(self, txn=None, price_micro=None):
        """Mid-price at a transaction.

        For an Add the incoming order is included as if it were resting
        (a temporary view, before matching); for a Cancel the current book
        is used. Returns the value, which is also kept as
        ``transaction_midprice``.
        """
        if txn is not None and txn.action == ADD and price_micro is not None:
            m = self._recompute_mid(txn.side, price_micro)
        else:
            m = self._recompute_mid()
        self.transaction_midprice = m / MICRO
        return self.transaction_midprice

    # -- matching -------------------------------------------------------
    def _new_id(self):
        oid = self._next_id
        self._next_id += 1
        return oid

    def _check_priority(self, opp, level_price, resting):
        prices = self._prices[opp]
        if level_price is None:
            assert self._market[opp] and self._market[opp][0] is resting
            return
        best = prices[-1] if opp == BUY else prices[0]
        assert level_price == best, "fill against a non-best price level"
        assert not self._market[opp], "priced order matched ahead of a resting market order"
        queue = self._levels[opp][level_price]
        assert queue[0] is resting
        assert all((resting[_TIME], resting[_ID]) <= (o[_TIME], o[_ID]) for o in queue)

    def step_order_book(self, side, price_micro, volume, is_market, time, order_id=None):
        """Match an incoming order, then rest any residual. Returns the residual volume."""
        oid = self._new_id() if order_id is None else order_id
        opp = 1 - side
        levels, prices, market = self._levels[opp], self._prices[opp], self._market[opp]
        fills = self.fills
        check = self.check
        remaining = volume
        while remaining > 0:
            if market:
                queue = market
                level_price = None
            elif prices:
                level_price = prices[-1] if opp == BUY else prices[0]
                if not is_market:
                    if side == BUY and level_price > price_micro:
                        break
                    if side == SELL and level_price < price_micro:
                        break
                queue = levels[level_price]
            else:
                break
            resting = queue[0]
            if check:
                self._check_priority(opp, level_price, resting)
            if level_price is None:
                px = self.transaction_midprice if is_market else price_micro / MICRO
            else:
                px = level_price / MICRO
            qty = resting[_VOL] if resting[_VOL] < remaining else remaining
            fills.append(Fill(oid, resting[_ID], px, qty, time, time - resting[_TIME], side, opp))
            remaining -= qty
            resting[_VOL] -= qty
            self._volume[opp] -= qty
            if resting[_VOL] == 0:
                queue.popleft()
                if level_price is not None and not queue:
                    del levels[level_price]
                    if opp == BUY:
                        prices.pop()
                    else:
                        prices.pop(0)
        if remaining > 0:
            order = [oid, remaining, time, None if is_market else price_micro, side]
            if is_market:
                self._market[side].append(order)
            else:
                own = self._levels[side]
                queue = own.get(price_micro)
                if queue is None:
                    own[price_micro] = deque((order,))
                    bisect.insort(self._prices[side], price_micro)
                else:
                    queue.append(order)
            self._volume[side] += remaining
        return remaining

    def cancel_order(self, side, target_price, volume, time):
        """Cancel against the resting order of ``side`` nearest ``target_price``."""
        target = to_micro(target_price)
        prices = self._prices[side]
        if not prices:
            rec = Delete(time, side, target_price, -1, math.nan, 0)
            self.deletes.append(rec)
            return rec
        i = bisect.bisect_left(prices, target)
        candidates = [p for p in (prices[i - 1] if i > 0 else None, prices[i] if i < len(prices) else None) if p is not None]
        levels = self._levels[side]
        if len(candidates) == 2:
            lo, hi = candidates
            dlo, dhi = target - lo, hi - target
            if dlo != dhi:
                level = lo if dlo < dhi else hi
            else:
                a, b = levels[lo][0], levels[hi][0]
                level = lo if (a[_TIME], a[_ID]) <= (b[_TIME], b[_ID]) else hi
        else:
            level = candidates[0]
        queue = levels[level]
        order = queue[0]
        removed = volume if volume < order[_VOL] else order[_VOL]
        order[_VOL] -= removed
        self._volume[side] -= removed
        if order[_VOL] == 0:
            queue.popleft()
            if not queue:
                del levels[level]
                prices.remove(level)
        rec = Delete(time, side, target_price, order[_ID], level / MICRO, removed)
        self.deletes.append(rec)
        return rec

    # -- driver -----------------------------------------------------------
    def _record(self):
        s = self.series
        s[0].append(self.clock)
        s[1].append(self._mid / MICRO)
        s[2].append(self.spread)
        b, a = self._volume
        s[3].append(b)
        s[4].append(a)
        s[5].append(0.0 if b + a == 0 else (b - a) / (b + a))

    def step_sim(self, txn):
        """Execute one transaction and record the resulting book state."""
        t = txn.time
        if t < self.clock:
            raise ClockRegression(f"transaction at {t} precedes clock {self.clock}")
        self.clock = t
        side = txn.side
        if txn.action == ADD:
            self._anchor[side] = None
            if txn.is_market:
                try:
                    ref = self.order_price_from_depth(0.0, side, True) if txn.price is None else txn.price
                except EmptyOppositeSide:
                    ref = None
                self.step_midprice(txn, None if ref is None else to_micro(ref))
                self.step_order_book(side, None, txn.volume, True, t)
            else:
                price = txn.price if txn.price is not None else self.order_price_from_depth(txn.depth_bps)
                pm = to_micro(price) if math.isfinite(price) else 0
                if pm <= 0:
                    self.rejected += 1
                    self._record()
                    return
                self.step_midprice(txn, pm)
                self.step_order_book(side, pm, txn.volume, False, t)
        else:
            if txn.price is not None:
                target = txn.price
            else:
                target = self.order_price_from_depth(txn.depth_bps or 0.0)
            self.step_midprice(txn)
            self.cancel_order(side, target, txn.volume, t)
        self._mid = self._recompute_mid()
        if self.check:
            assert not self.is_crossed(), "book crossed at rest"
        self._record()


def init_book(p0, **kwargs):
    return OrderBook(p0, **kwargs)


@dataclass
class SimulationResult:
    fills: list
    deletes: list
    time: np.ndarray
    midprice: np.ndarray
    spread: np.ndarray
    bid_volume: np.ndarray
    ask_volume: np.ndarray
    imbalance: np.ndarray
    rejected: int = 0
    book: OrderBook | None = field(default=None, repr=False)

    @classmethod
    def from_book(cls, book):
        t, m, s, b, a, i = book.series
        return cls(
            fills=list(book.fills), deletes=list(book.deletes),
            time=np.array(t, dtype=float), midprice=np.array(m, dtype=float),
            spread=np.array(s, dtype=float), bid_volume=np.array(b, dtype=np.int64),
            ask_volume=np.array(a, dtype=np.int64), imbalance=np.array(i, dtype=float),
            rejected=book.rejected, book=book,
        )

    def write_fills(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FILLS_HEADER)
            for f in self.fills:
                w.writerow((f.incoming_id, f.resting_id, repr(f.price), f.volume, repr(f.time), repr(f.time_since_resting)))

    def write_series(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES_HEADER)
            for row in zip(self.time, self.midprice, self.spread, self.bid_volume, self.ask_volume, self.imbalance):
                w.writerow((repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3]), int(row[4]), repr(float(row[5]))))


def stream_transactions(stream):
    """Transactions replaying an EventStream at its recorded prices."""
    return [
        Transaction(e.timestamp, int(e.action), int(e.side), int(e.volume), None, e.order_price, e.order_price is None)
        for e in stream.events
    ]


def run_simulation(data, p0=None, market_price_rule="algorithm2", check=False):
    """Replay ``data`` (an EventStream or an iterable of Transactions) through a fresh book."""
    if hasattr(data, "events"):
        p0 = data.meta.opening_price if p0 is None else p0
        data = stream_transactions(data)
    if p0 is None:
        raise ValueError("p0 is required when replaying bare transactions")
    book = OrderBook(p0, market_price_rule=market_price_rule, check=check)
    step = book.step_sim
    for txn in data:
        step(txn)
    return SimulationResult.from_book(book)
