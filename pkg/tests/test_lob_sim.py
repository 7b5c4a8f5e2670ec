import filecmp
import math
import time as clock

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lob_oracle import NaiveBook
from orderflow.baselines.hawkes import simulate_hawkes
from orderflow.errors import ClockRegression, NonPositivePrice
from orderflow.events import Action, AssetMeta, Side, TradeEvent, make_stream
from orderflow.lob_sim import OrderBook, Transaction, init_book, run_simulation
from orderflow.presets import CLUSTERED_HAWKES, pressure_hawkes


def add(t, side, vol, price=None, depth=None, market=False):
    return Transaction(t, 0, side, vol, depth, price, market)


def cancel(t, side, vol, price):
    return Transaction(t, 1, side, vol, None, price)


def test_init():
    b = init_book(100.0)
    assert b.midprice == 100.0 and b.fills == [] and b.spread == 0.0
    for bad in (0.0, -1.0, math.nan):
        with pytest.raises(NonPositivePrice):
            init_book(bad)


def test_depth_to_price():
    b = init_book(182.48)
    assert b.order_price_from_depth(1.1) == pytest.approx(182.50, abs=0.005)
    assert b.order_price_from_depth(0.0) == 182.48
    assert b.order_price_from_depth(-10_000.0) == 0.0


def test_nonpositive_price_rejected():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 5, depth=-10_000.0))
    assert b.rejected == 1 and b.bid_volume == 0


def test_partial_fill_hand_trace():
    b = init_book(10.0)
    b.step_sim(add(0.0, 1, 100, price=10.00))
    b.step_sim(add(1.0, 0, 50, price=10.05))
    assert [(f.price, f.volume) for f in b.fills] == [(10.0, 50)]
    assert b.resting_orders(1)[0][1] == 50 and b.bid_volume == 0


def test_limit_rests_on_empty_book():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 10, price=9.5))
    assert b.fills == [] and b.best_bid == 9.5


def test_time_priority():
    b = init_book(10.0)
    b.step_sim(add(1.0, 1, 5, price=10.0))
    b.step_sim(add(2.0, 1, 5, price=10.0))
    b.step_sim(add(3.0, 0, 1, price=10.0))
    first = b.resting_orders(1)[0]
    assert b.fills[0].resting_id == 0 and first[1] == 4


def test_midprice_and_fallbacks():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 10, price=9.99))
    b.step_sim(add(0.0, 1, 10, price=10.01))
    assert b.midprice == pytest.approx(10.00) and b.spread == pytest.approx(0.02)
    b.step_sim(cancel(1.0, 1, 10, 10.01))
    assert b.midprice == 9.99  # bids only
    b.step_sim(cancel(2.0, 0, 10, 9.99))
    assert b.midprice == 9.99 and b.bid_volume == 0  # empty book holds


def test_one_sided_from_start():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 1, price=9.0))
    # the ask anchor still quotes the opening price
    assert b.midprice == 9.5


def test_cancel_rules():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 100, price=9.99))
    b.step_sim(cancel(1.0, 0, 30, 9.99))
    assert b.resting_orders(0)[0][1] == 70
    b.step_sim(cancel(2.0, 0, 100, 9.99))
    assert b.resting_orders(0) == []
    b.step_sim(cancel(3.0, 1, 5, 10.0))
    assert b.deletes[-1].order_id == -1


def test_cancel_nearest_then_oldest():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 1, price=9.90))
    b.step_sim(add(1.0, 0, 1, price=9.80))
    b.step_sim(add(2.0, 0, 1, price=9.70))
    b.step_sim(cancel(3.0, 0, 1, 9.75))  # 9.80 and 9.70 equidistant, 9.80 is older
    assert [o[3] for o in b.resting_orders(0)] == [9.90, 9.70]


def test_fill_price_rules():
    b = init_book(10.0)
    b.step_sim(add(0.0, 1, 5, market=True))  # rests as a market order
    b.step_sim(add(1.0, 0, 2, price=9.5))
    assert b.fills[-1].price == 9.5  # resting market: incoming price
    b.step_sim(add(2.0, 0, 1, market=True))
    assert b.fills[-1].price == b.series[1][-2]  # both market: transaction mid
    b2 = init_book(10.0)
    b2.step_sim(add(0.0, 1, 5, price=10.2))
    b2.step_sim(add(1.0, 0, 2, market=True))
    assert b2.fills[-1].price == 10.2  # incoming market: resting price


def test_market_price_rule():
    b = init_book(10.0)
    b.step_sim(add(0.0, 0, 1, price=9.9))
    b.step_sim(add(0.0, 1, 1, price=10.1))
    assert b.order_price_from_depth(0, Side.SELL, True) == 10.1
    c = OrderBook(10.0, market_price_rule="crossing")
    c.step_sim(add(0.0, 0, 1, price=9.9))
    c.step_sim(add(0.0, 1, 1, price=10.1))
    assert c.order_price_from_depth(0, Side.SELL, True) == 9.9


def test_clock_and_empty():
    b = init_book(10.0)
    b.step_sim(add(5.0, 0, 1, price=9.0))
    with pytest.raises(ClockRegression):
        b.step_sim(add(4.0, 0, 1, price=9.0))
    r = run_simulation([], p0=10.0)
    assert r.fills == [] and len(r.time) == 0


def test_non_crossing_and_balanced():
    txns = [add(i, i % 2, 10, price=9.0 if i % 2 == 0 else 11.0) for i in range(10)]
    r = run_simulation(txns, p0=10.0)
    assert r.fills == [] and r.imbalance[-1] == 0.0


TABLE = [
    (0.0, Action.ADD, Side.BUY, 500, 182.45),
    (8.0, Action.ADD, Side.SELL, 750, 182.50),
    (11.0, Action.CANCEL, Side.BUY, 500, 182.45),
    (22.0, Action.ADD, Side.BUY, 200, None),
    (25.0, Action.ADD, Side.BUY, 300, 182.55),
]


def test_table_rows_replay(tmp_path):
    meta = AssetMeta("AAPL", 58e6, 182.48)
    s = make_stream(meta, [TradeEvent(t, "AAPL", a, sd, v, p) for t, a, sd, v, p in TABLE])
    a, b = run_simulation(s, check=True), run_simulation(s, check=True)
    assert a.fills == b.fills and a.deletes == b.deletes
    assert [(f.price, f.volume) for f in a.fills] == [(182.50, 200), (182.50, 300)]
    a.write_fills(tmp_path / "a.csv")
    b.write_fills(tmp_path / "b.csv")
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)


def random_transactions(rng, n):
    out, t = [], 0.0
    for _ in range(n):
        t += float(rng.exponential(1.0)) if rng.random() < 0.8 else 0.0
        r = rng.random()
        side = int(rng.integers(2))
        vol = int(rng.integers(1, 20))
        if r < 0.55:
            out.append(add(t, side, vol, depth=float(rng.normal(0, 15))))
        elif r < 0.65:
            out.append(add(t, side, vol, price=float(np.round(10 + rng.normal(0, 0.02), 2))))
        elif r < 0.72:
            out.append(add(t, side, vol, market=True))
        else:
            out.append(Transaction(t, 1, side, vol, float(rng.normal(0, 15)), None))
    return out


def replay_both(txns):
    book, naive = OrderBook(10.0, check=True), NaiveBook(10.0)
    for txn in txns:
        before = book.bid_volume + book.ask_volume
        n_fills, n_rejected = len(book.fills), book.rejected
        book.step_sim(txn)
        naive.step(txn.time, txn.action, txn.side, txn.volume, txn.depth_bps, txn.price, txn.is_market)
        new = book.fills[n_fills:]
        filled = sum(f.volume for f in new)
        if txn.action == 0 and book.rejected == n_rejected:
            # conservation: incoming volume = fills + residual resting
            assert all(f.incoming_id == new[0].incoming_id for f in new)
            assert filled <= txn.volume
            residual = txn.volume - filled
            assert book.bid_volume + book.ask_volume == before + residual - filled
        assert not book.is_crossed()
    return book, naive


def check_against_oracle(seed, n):
    rng = np.random.default_rng(seed)
    book, naive = replay_both(random_transactions(rng, n))
    assert [(f.incoming_id, f.resting_id, f.price, f.volume) for f in book.fills] == naive.fills
    assert [(d.order_id, d.volume) for d in book.deletes] == naive.deletes
    assert [m / 1_000_000 for m in naive.mids] == book.series[1]
    assert book.bid_volume == naive.volume(0) and book.ask_volume == naive.volume(1)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
def test_matches_naive_engine(seed, n):
    check_against_oracle(seed, n)


def test_replay_throughput():
    params = pressure_hawkes(**CLUSTERED_HAWKES)
    txns = simulate_hawkes(params, n_events=100_000, seed=0).transactions()
    run_simulation(txns[:1000], p0=100.0)
    t0 = clock.perf_counter()
    run_simulation(txns, p0=100.0)
    assert clock.perf_counter() - t0 < 1.0
