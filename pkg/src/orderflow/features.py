"""Scale-invariant event features: interarrival time, log volume, price depth, price level."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NegativeInterarrival, UndefinedMidprice
from .events import Action
from .midprice import DEFAULT_HALFLIFE, EwVwap

BPS = 1e4


@dataclass(frozen=True)
class FeatureVector:
    interarrival: float
    log_volume: float
    depth: float
    price_level: float
    action: int
    side: int


@dataclass
class SessionState:
    """What featurization needs to know about the session so far."""

    opening_price: float
    midprice: EwVwap
    prev_timestamp: float | None = None

    @classmethod
    def open(cls, opening_price, halflife=DEFAULT_HALFLIFE, start_time=0.0):
        # the opening print seeds the estimator so the first event has a reference
        ew = EwVwap(halflife)
        ew.update(opening_price, 1, start_time)
        return cls(float(opening_price), ew)


def featurize(event, session):
    """Features of ``event`` given the session *before* the event is absorbed."""
    if not session.midprice.has_estimate:
        raise UndefinedMidprice("mid-price estimate undefined")
    mid = session.midprice.estimate
    if not mid > 0:
        raise UndefinedMidprice(f"mid-price estimate {mid} is not positive")
    if session.prev_timestamp is None:
        dt = 0.0
    else:
        dt = event.timestamp - session.prev_timestamp
        if dt < 0:
            raise NegativeInterarrival(f"event at {event.timestamp} precedes {session.prev_timestamp}")
    depth = 0.0 if event.order_price is None else (event.order_price - mid) / mid
    level = (mid - session.opening_price) / session.opening_price
    return FeatureVector(dt, math.log1p(event.volume), depth, level, int(event.action), int(event.side))


def absorb(event, session):
    """Advance ``session`` past ``event``.

    The raw schema has no execution-price column, so the prices of limit
    Add orders serve as the noisy price observations.
    """
    session.prev_timestamp = event.timestamp
    if event.action == Action.ADD and event.order_price is not None:
        session.midprice.update(event.order_price, event.volume, event.timestamp)


@dataclass
class FeatureTable:
    """Column-wise features of a whole stream plus the running mid-price."""

    interarrival: np.ndarray
    log_volume: np.ndarray
    depth: np.ndarray
    price_level: np.ndarray
    action: np.ndarray
    side: np.ndarray
    midprice: np.ndarray
    volume: np.ndarray

    def __len__(self):
        return len(self.interarrival)

    def row(self, i):
        return FeatureVector(
            float(self.interarrival[i]), float(self.log_volume[i]), float(self.depth[i]),
            float(self.price_level[i]), int(self.action[i]), int(self.side[i]),
        )

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        names = cls.__dataclass_fields__
        return cls(**{n: np.concatenate([getattr(t, n) for t in tables]) for n in names})


def featurize_stream(stream, halflife=DEFAULT_HALFLIFE):
    events = stream.events
    n = len(events)
    cols = {name: np.empty(n) for name in ("interarrival", "log_volume", "depth", "price_level", "midprice")}
    action = np.empty(n, dtype=np.int64)
    side = np.empty(n, dtype=np.int64)
    volume = np.empty(n, dtype=np.int64)
    start = events[0].timestamp if n else 0.0
    session = SessionState.open(stream.meta.opening_price, halflife, start)
    for i, e in enumerate(events):
        cols["midprice"][i] = session.midprice.estimate
        fv = featurize(e, session)
        cols["interarrival"][i] = fv.interarrival
        cols["log_volume"][i] = fv.log_volume
        cols["depth"][i] = fv.depth
        cols["price_level"][i] = fv.price_level
        action[i] = fv.action
        side[i] = fv.side
        volume[i] = e.volume
        absorb(e, session)
    return FeatureTable(action=action, side=side, volume=volume, **cols)
