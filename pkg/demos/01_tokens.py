"""
From raw orders to tokens
=========================

A stream of orders becomes scale-free features, then one integer per event.
"""

import numpy as np

from orderflow import features, presets, tokenizer
from orderflow.baselines import simulate_hawkes
from orderflow.events import AssetMeta, TradeEvent, make_stream

# the composite token is a mixed-base number: action, side, depth, volume, time
print(tokenizer.encode_digits(0, 1, 7, 7, 11))  # 6011
print(tuple(tokenizer.decode(6011)))

# calibrate bin edges once on a synthetic universe of assets
schema = tokenizer.calibrate(presets.universe(n_events=1500))
print("vocab", schema.vocab_size, "price levels", schema.price_level.n_bins)
print("depth edges (bps):", np.round(np.asarray(schema.depth.edges) * 1e4, 1))

# featurize one stream; depth and price level are relative to the EW-VWAP mid
p = presets.pressure_hawkes(**presets.CLUSTERED_HAWKES)
stream = simulate_hawkes(p, n_events=2000, seed=1).to_stream()
ft = features.featurize_stream(stream)
print("median |depth| bps", np.median(np.abs(ft.depth)) * 1e4)

# multiplying every price by 7 changes nothing in the features
scaled = make_stream(
    AssetMeta("X7", stream.meta.average_daily_volume, stream.meta.opening_price * 7),
    [TradeEvent(e.timestamp, "X7", e.action, e.side, e.volume,
                None if e.order_price is None else e.order_price * 7) for e in stream.events],
)
print("max depth change after x7:", np.max(np.abs(features.featurize_stream(scaled).depth - ft.depth)))

tokens = tokenizer.encode_stream(stream, schema)
print(tokens[:5])
print("distinct trade tokens used:", len(np.unique(tokens[:, 3])))

# detokenizing gives back bin medians, not the original values
ev = tokenizer.detokenize(tokenizer.decode(int(tokens[10, 3])), schema)
print(ev)
