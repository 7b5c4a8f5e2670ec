from dataclasses import dataclass

import numpy as np

from ..events import AssetMeta, Scope, orders_to_stream
from ..lob_sim import Transaction


@dataclass
class GeneratedOrders:
    """Order flow from a stochastic generator, column-wise.

    ``depth`` is a unitless ratio to the mid-price; ``interarrival`` in seconds.
    """

    interarrival: np.ndarray
    depth: np.ndarray
    volume: np.ndarray
    action: np.ndarray
    side: np.ndarray

    def __len__(self):
        return len(self.interarrival)

    def times(self, start=0.0):
        return start + np.cumsum(self.interarrival)

    def transactions(self, start=0.0):
        t = self.times(start)
        return [
            Transaction(float(ti), int(a), int(s), int(v), float(d) * 1e4)
            for ti, a, s, v, d in zip(t, self.action, self.side, self.volume, self.depth)
        ]

    def to_stream(self, meta=None, scope=Scope.MARKET, start=0.0):
        """EventStream with limit prices placed ``depth`` away from the opening price."""
        meta = meta or AssetMeta("SYN", 1e6, 100.0)
        prices = meta.opening_price * (1.0 + self.depth)
        return orders_to_stream(meta, self.times(start), self.action, self.side, self.volume, prices, scope)


def sample_volume(rate, n, rng):
    """Exponential share counts rounded up to at least one share."""
    return np.maximum(1, np.ceil(rng.exponential(1.0 / rate, size=n))).astype(np.int64)
