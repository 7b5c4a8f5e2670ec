"""Stylized facts of returns and distributional distances between order-flow samples."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, EmptySample, NoFills, SeriesTooShort, ZeroVariance
from .features import FeatureTable, featurize_stream
from .lob_sim import run_simulation
from .midprice import DEFAULT_HALFLIFE

RETURN_INTERVALS = (10.0, 30.0, 60.0, 120.0)
FLOW_QUANTITIES = (
    "spreads", "interarrival_times", "price_depth", "order_book_imbalance", "bid_volume", "ask_volume",
)


# -- returns ------------------------------------------------------------------

@dataclass
class ReturnSeries:
    returns: np.ndarray
    interval: float
    grid: np.ndarray


def resample_midprice(times, midprice, interval, start=None):
    """Log returns over a regular wall-time grid, last observation carried forward."""
    times = np.asarray(times, dtype=float)
    midprice = np.asarray(midprice, dtype=float)
    if len(times) == 0:
        raise SeriesTooShort("empty mid-price series")
    t0 = times[0] if start is None else float(start)
    span = times[-1] - t0
    if span < 2 * interval:
        raise SeriesTooShort(f"series spans {span:.3g}s, need at least {2 * interval:.3g}s")
    n = int(math.floor(span / interval)) + 1
    grid = t0 + interval * np.arange(n)
    idx = np.searchsorted(times, grid, side="right") - 1
    prices = midprice[np.maximum(idx, 0)]
    return ReturnSeries(np.diff(np.log(prices)), float(interval), grid)


def acf(x, lags):
    """Sample autocorrelation (mean removed, normalised by the lag-0 sum of squares)."""
    x = np.asarray(x, dtype=float)
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    if len(x) <= lags.max() + 1:
        raise SeriesTooShort(f"{len(x)} samples for lag {lags.max()}")
    xc = x - x.mean()
    denom = xc @ xc
    if denom == 0:
        raise DegenerateVariance("constant series")
    return np.array([1.0 if k == 0 else (xc[:-k] @ xc[k:]) / denom for k in lags])


def bartlett_band(n, z=3.0):
    return z / math.sqrt(n)


def kurtosis(samples, bias=False):
    """Excess (Fisher) kurtosis; ``bias=False`` applies the small-sample correction."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 4:
        raise DegenerateVariance(f"need at least 4 samples, got {n}")
    xc = x - x.mean()
    m2 = np.mean(xc ** 2)
    if m2 == 0:
        raise DegenerateVariance("zero variance")
    g2 = np.mean(xc ** 4) / m2 ** 2 - 3.0
    if bias:
        return float(g2)
    return float(((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3)))


@dataclass
class ClusteringCheck:
    lags: np.ndarray
    acf_abs: np.ndarray
    acf_raw: np.ndarray
    band: float
    n: int

    @property
    def clustered(self):
        """|return| autocorrelation above the noise band at every lag."""
        return bool(np.all(self.acf_abs > self.band))

    @property
    def raw_uncorrelated(self):
        """Raw-return autocorrelation inside the band at lags >= 2."""
        sel = self.lags >= 2
        return bool(np.all(np.abs(self.acf_raw[sel]) < self.band))


def clustering_check(returns, lags=range(1, 11), z=3.0):
    r = np.asarray(returns, dtype=float)
    lags = np.asarray(list(lags))
    return ClusteringCheck(lags, acf(np.abs(r), lags), acf(r, lags), bartlett_band(len(r), z), len(r))


def stylized_facts(times, midprice, intervals=RETURN_INTERVALS, lags=range(1, 21), base_interval=1.0):
    """Plot-ready stylized facts: return / |return| ACF at ``base_interval`` and kurtosis per interval."""
    base = resample_midprice(times, midprice, base_interval)
    lags = np.asarray(list(lags))
    out = {
        "lags": lags,
        "acf_returns": acf(base.returns, lags),
        "acf_abs_returns": acf(np.abs(base.returns), lags),
        "band": bartlett_band(len(base.returns)),
        "kurtosis": {},
    }
    for dt in intervals:
        try:
            r = resample_midprice(times, midprice, dt).returns
            out["kurtosis"][dt] = kurtosis(r)
        except (SeriesTooShort, DegenerateVariance):
            out["kurtosis"][dt] = math.nan
    return out


# -- distances ----------------------------------------------------------------

def _clean(x, name):
    x = np.asarray(x, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if len(x) == 0:
        raise EmptySample(f"{name} is empty")
    return x


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic, sup |F_a - F_b| over all sample points."""
    a = np.sort(_clean(a, "a"))
    b = np.sort(_clean(b, "b"))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def zscore(x):
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if sd == 0:
        raise ZeroVariance("cannot normalise a constant sample")
    return (x - x.mean()) / sd


def wasserstein1(a, b, normalize=False):
    """Earth mover's distance on the line: integral of |Q_a(u) - Q_b(u)| over u in (0, 1)."""
    a = _clean(a, "a")
    b = _clean(b, "b")
    if normalize:
        a, b = zscore(a), zscore(b)
    a, b = np.sort(a), np.sort(b)
    n, m = len(a), len(b)
    u = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(u, prepend=0.0)
    mid = u - widths / 2
    qa = a[np.minimum((mid * n).astype(np.int64), n - 1)]
    qb = b[np.minimum((mid * m).astype(np.int64), m - 1)]
    return float(np.sum(widths * np.abs(qa - qb)))


# -- reports ------------------------------------------------------------------

@dataclass
class FlowSummary:
    """The per-run quantities compared by :func:`fidelity_report`."""

    time: np.ndarray
    midprice: np.ndarray
    spreads: np.ndarray
    interarrival_times: np.ndarray
    price_depth: np.ndarray
    order_book_imbalance: np.ndarray
    bid_volume: np.ndarray
    ask_volume: np.ndarray

    @classmethod
    def from_simulation(cls, sim, interarrival, depth):
        return cls(
            time=sim.time, midprice=sim.midprice, spreads=sim.spread,
            interarrival_times=np.asarray(interarrival, dtype=float),
            price_depth=np.asarray(depth, dtype=float),
            order_book_imbalance=sim.imbalance,
            bid_volume=sim.bid_volume.astype(float), ask_volume=sim.ask_volume.astype(float),
        )

    @classmethod
    def from_stream(cls, stream, halflife=DEFAULT_HALFLIFE):
        table = featurize_stream(stream, halflife)
        return cls.from_simulation(run_simulation(stream), table.interarrival[1:], table.depth)

    @classmethod
    def concat(cls, summaries):
        """Pool several runs; times are offset so each run follows the previous one."""
        summaries = list(summaries)
        times, end = [], 0.0
        for s in summaries:
            t = np.asarray(s.time, dtype=float)
            shifted = t - t[0] + end if len(t) else t
            times.append(shifted)
            end = shifted[-1] if len(t) else end
        out = {
            name: np.concatenate([getattr(s, name) for s in summaries])
            for name in cls.__dataclass_fields__ if name != "time"
        }
        return cls(time=np.concatenate(times) if times else np.zeros(0), **out)


def _as_summary(x):
    if isinstance(x, FlowSummary):
        return x
    if hasattr(x, "summary"):
        return x.summary()
    if hasattr(x, "events"):
        return FlowSummary.from_stream(x)
    raise TypeError(f"cannot summarise {type(x).__name__}")


def _returns_or_none(summary, interval):
    try:
        return resample_midprice(summary.time, summary.midprice, interval).returns
    except SeriesTooShort:
        return None


@dataclass
class DistanceRow:
    name: str
    ks: float
    wasserstein: float


def fidelity_report(real, generated, intervals=RETURN_INTERVALS):
    """K-S and z-normalised W1 for each microstructure quantity and each return interval.

    ``real`` and ``generated`` may be FlowSummary objects, rollout results,
    or event streams (replayed through the simulator).
    """
    a, b = _as_summary(real), _as_summary(generated)
    rows = []
    for q in FLOW_QUANTITIES:
        x, y = getattr(a, q), getattr(b, q)
        rows.append(DistanceRow(q, ks_distance(x, y), _safe_w1(x, y)))
    for dt in intervals:
        ra, rb = _returns_or_none(a, dt), _returns_or_none(b, dt)
        name = f"log_returns_{dt:g}s"
        if ra is None or rb is None or len(ra) == 0 or len(rb) == 0:
            rows.append(DistanceRow(name, math.nan, math.nan))
        else:
            rows.append(DistanceRow(name, ks_distance(ra, rb), _safe_w1(ra, rb)))
    return rows


def _safe_w1(x, y):
    try:
        return wasserstein1(x, y, normalize=True)
    except ZeroVariance:
        x, y = _clean(x, "a"), _clean(y, "b")
        if x.std() == 0 and y.std() == 0:
            return 0.0
        return math.nan


def write_report(rows, path, first_column="quantity", extra=None):
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((first_column, "ks", "wasserstein", *extra.keys()))
        for r in rows:
            w.writerow((r.name, repr(float(r.ks)), repr(float(r.wasserstein)), *extra.values()))


DRIFT_FEATURES = ("price_level", "depth", "interarrival", "log_volume", "midprice")


def drift_report(period_a, period_b, halflife=DEFAULT_HALFLIFE):
    """Distances between the feature distributions of two periods (each a list of streams).

    Raw mid-price is included as a non-stationary reference. W1 is left
    un-normalised so that level shifts register.
    """
    tables = []
    for period, name in ((period_a, "period_a"), (period_b, "period_b")):
        streams = [period] if hasattr(period, "events") else list(period)
        streams = [s for s in streams if len(s)]
        if not streams:
            raise EmptySample(f"{name} has no events")
        tables.append(FeatureTable.concat(featurize_stream(s, halflife) for s in streams))
    ta, tb = tables
    return [
        DistanceRow(f, ks_distance(getattr(ta, f), getattr(tb, f)), wasserstein1(getattr(ta, f), getattr(tb, f)))
        for f in DRIFT_FEATURES
    ]


# -- simulator validation -----------------------------------------------------

def lot_counts(fills):
    """Number of fills consumed by each incoming order that traded."""
    ids = np.array([f.incoming_id for f in fills], dtype=np.int64)
    if len(ids) == 0:
        return ids
    return np.unique(ids, return_counts=True)[1]


def _cdf_correlation(x, y):
    grid = np.union1d(x, y)
    fx = np.searchsorted(np.sort(x), grid, side="right") / len(x)
    fy = np.searchsorted(np.sort(y), grid, side="right") / len(y)
    if fx.std() == 0 or fy.std() == 0:
        return 1.0 if np.array_equal(fx, fy) else math.nan
    return float(np.corrcoef(fx, fy)[0, 1])


@dataclass
class SimulatorValidation:
    fill_volumes: np.ndarray
    lot_counts: np.ndarray
    reference_fill_volumes: np.ndarray
    reference_lot_counts: np.ndarray
    volume_correlation: float
    lot_count_correlation: float


def validate_simulator(stream, reference_fill_volumes=None, reference_lot_counts=None):
    """Compare replayed fills against reference fills via their CDFs.

    Without a reference the stream is replayed a second time and compared
    with itself.
    """
    sim = run_simulation(stream)
    if not sim.fills:
        raise NoFills("replay produced no fills")
    vols = np.array([f.volume for f in sim.fills], dtype=float)
    lots = lot_counts(sim.fills).astype(float)
    if reference_fill_volumes is None or reference_lot_counts is None:
        again = run_simulation(stream)
        ref_vols = np.array([f.volume for f in again.fills], dtype=float)
        ref_lots = lot_counts(again.fills).astype(float)
    else:
        ref_vols = np.asarray(reference_fill_volumes, dtype=float)
        ref_lots = np.asarray(reference_lot_counts, dtype=float)
    return SimulatorValidation(
        vols, lots, ref_vols, ref_lots, _cdf_correlation(vols, ref_vols), _cdf_correlation(lots, ref_lots),
    )
