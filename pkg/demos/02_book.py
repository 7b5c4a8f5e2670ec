"""
Replaying orders through the book
=================================

The simulator matches by price then time and keeps a mid-price series.
"""

import time

import numpy as np

from orderflow import evaluation, presets
from orderflow.baselines import simulate_hawkes
from orderflow.events import Action, AssetMeta, Side, TradeEvent, make_stream
from orderflow.lob_sim import run_simulation

meta = AssetMeta("DEMO", 1e6, 182.50)
rows = [
    TradeEvent(0.0, "DEMO", Action.ADD, Side.SELL, 200, 182.50),
    TradeEvent(0.5, "DEMO", Action.ADD, Side.SELL, 300, 182.50),
    TradeEvent(1.0, "DEMO", Action.ADD, Side.BUY, 100, 182.40),
    TradeEvent(2.0, "DEMO", Action.ADD, Side.BUY, 600, 182.55),
]
sim = run_simulation(make_stream(meta, rows))
for f in sim.fills:
    print(f"fill {f.volume} @ {f.price}")  # the older ask fills first
print("mid after each event:", sim.midprice)

# a bigger run, timed
p = presets.pressure_hawkes(**presets.CLUSTERED_HAWKES)
stream = simulate_hawkes(p, n_events=100_000, seed=0).to_stream()
t0 = time.perf_counter()
sim = run_simulation(stream)
print(f"{len(stream.events)} events in {time.perf_counter() - t0:.2f}s, {len(sim.fills)} fills")
print("final mid", sim.midprice[-1], "median spread", np.median(sim.spread[np.isfinite(sim.spread)]))

# replaying a stream against itself is the simulator's own sanity check
v = evaluation.validate_simulator(stream)
print("self-validation correlations", v.volume_correlation, v.lot_count_correlation)
