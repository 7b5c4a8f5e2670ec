"""Recorded generator settings used by the acceptance suite and the demos.

Dimensions follow the Hawkes convention: 0 buy add, 1 buy cancel, 2 sell add,
3 sell cancel. Depths are ratios to the mid-price.
"""

import itertools

import numpy as np

from .baselines.gmm import GaussianMixture
from .baselines.hawkes import DimMarks, HawkesParams, simulate_hawkes
from .events import AssetMeta

# buy add / sell cancel lift the mid, sell add / buy cancel lower it
PRESSURE_GROUP = np.array([0, 1, 1, 0])


def _mixture(components):
    w = np.array([c[0] for c in components], dtype=float)
    return GaussianMixture(w / w.sum(), [c[1] for c in components], [c[2] ** 2 for c in components])


def book_marks(depth_scale=2e-4, volume_rate=0.01, cancel_volume_rate=0.001, aggressive=0.3, deep=0.2):
    """Depth and volume marks for buy/sell adds and cancels, mirrored between sides.

    Adds rest near the touch, deeper in the book, or cross the spread
    (``aggressive`` share). Cancels aim at resting liquidity and are large
    enough to usually remove a whole order.
    """
    m = depth_scale
    buy_add = _mixture([(1 - aggressive - deep, -m, m / 2), (deep, -5 * m, 2.5 * m), (aggressive, m, m / 2)])
    buy_cancel = _mixture([(0.7, -m, m / 2), (0.3, -5 * m, 2.5 * m)])

    def mirror(g):
        return GaussianMixture(g.weights, -g.means, g.variances)

    return (
        DimMarks(buy_add, volume_rate), DimMarks(buy_cancel, cancel_volume_rate),
        DimMarks(mirror(buy_add), volume_rate), DimMarks(mirror(buy_cancel), cancel_volume_rate),
    )


def pressure_hawkes(rate=10.0, branching=0.9, beta=0.07, same_group=0.6, cancel_share=0.45, **marks):
    """Strongly self-exciting 4-dimensional Hawkes order flow.

    Every column of the branching matrix sums to ``branching``; a fraction
    ``same_group`` of it (on top of an even spread) stays within the
    event's pressure group. Buy and sell are symmetric, so there is no drift.
    ``rate`` is the stationary total event rate per second.
    """
    w = np.array([1 - cancel_share, cancel_share, 1 - cancel_share, cancel_share]) / 2
    same = (PRESSURE_GROUP[:, None] == PRESSURE_GROUP[None, :]).astype(float)
    k = w[:, None] * (2 * same_group * same + (1 - same_group))
    branch = k / k.sum(axis=0, keepdims=True) * branching
    d = len(w)
    return HawkesParams(
        mu=w * rate * (1 - branching),
        alpha=(branch * beta)[:, :, None],
        beta=np.full((d, d, 1), float(beta)),
        marks=book_marks(**marks),
    )


CLUSTERED_HAWKES = dict(rate=10.0, branching=0.9, beta=0.07, same_group=0.6, cancel_share=0.45)

UNIVERSE_GRID = dict(depth_scale=(1e-4, 2e-4, 4e-4, 8e-4), volume_rate=(0.05, 0.01, 0.002), rate=(2.0, 10.0, 50.0))


def universe(n_events=3000, seed=100, p0=100.0):
    """Streams of 36 synthetic assets spanning depth scale, order size and activity.

    Used to calibrate one tokenizer schema shared by all assets. ADV grows
    with event rate and order size so the liquidity terciles separate them.
    """
    streams = []
    grid = itertools.product(UNIVERSE_GRID["depth_scale"], UNIVERSE_GRID["volume_rate"], UNIVERSE_GRID["rate"])
    for i, (ds, vr, rate) in enumerate(grid):
        params = pressure_hawkes(rate=rate, depth_scale=ds, volume_rate=vr, cancel_volume_rate=vr / 10)
        orders = simulate_hawkes(params, n_events=n_events, seed=seed + i)
        adv = rate / vr * 23400.0
        streams.append(orders.to_stream(AssetMeta(f"U{i:02d}", adv, p0)))
    return streams
