"""Calibrated binning of event features and the mixed-radix composite trade token.

A trade token packs five digits, most significant first::

    token = (((action * 2 + side) * 16 + depth) * 16 + volume) * 16 + time

Depth and price level use equal-frequency (quantile) bins with a lower and an
upper outlier bin; volume and interarrival time use equal-width bins over
log values with a single upper outlier bin. Outlier bins count towards each
feature's bin total, so 2 * 2 * 16 * 16 * 16 = 16384 tokens.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import textfmt
from .errors import (
    CorruptFile,
    DegenerateFeature,
    InsufficientData,
    NonFiniteFeature,
    SchemaUncalibrated,
    TokenOutOfRange,
)
from .features import FeatureTable, featurize_stream
from .midprice import DEFAULT_HALFLIFE

N_ACTION = 2
N_SIDE = 2
N_LIQUIDITY = 3
N_SCOPE = 2
SCHEMA_HEADER = "tokenizer-schema v1"


class Strategy(str, Enum):
    EQUAL_FREQUENCY = "EqualFrequency"
    EQUAL_WIDTH_LOG = "EqualWidthLog"


class OutlierMode(str, Enum):
    UPPER_ONLY = "UpperOnly"
    DOUBLE_SIDED = "DoubleSided"


@dataclass(frozen=True, eq=False)
class BinSpec:
    """Bins for one continuous feature.

    Bin numbering: with DoubleSided outliers, bin 0 holds values below
    ``lower_threshold`` and the last bin values above ``upper_threshold``;
    with UpperOnly only the last bin is reserved and low values clamp to
    bin 0. Regular bins are half-open ``[e_i, e_i+1)`` except the last,
    which is closed. ``edges[0]`` and ``edges[-1]`` coincide with the
    thresholds. Values live in the binning domain (log for volume / time).
    """

    feature_name: str
    strategy: Strategy
    outlier_mode: OutlierMode
    edges: np.ndarray
    representatives: np.ndarray
    lower_threshold: float
    upper_threshold: float

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        reps = np.asarray(self.representatives, dtype=float)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "representatives", reps)
        if edges.ndim != 1 or len(edges) < 2 or not np.all(np.diff(edges) > 0):
            raise CorruptFile(f"{self.feature_name}: edges must be strictly ascending")
        if len(reps) != self.n_bins:
            raise CorruptFile(f"{self.feature_name}: {len(reps)} representatives for {self.n_bins} bins")

    @property
    def n_regular(self):
        return len(self.edges) - 1

    @property
    def n_outlier(self):
        return 2 if self.outlier_mode == OutlierMode.DOUBLE_SIDED else 1

    @property
    def n_bins(self):
        return self.n_regular + self.n_outlier

    @property
    def first_regular(self):
        return 1 if self.outlier_mode == OutlierMode.DOUBLE_SIDED else 0

    def index(self, value):
        return bin_index(self, value)

    def indices(self, values):
        """Vectorised :func:`bin_index`."""
        values = np.asarray(values, dtype=float)
        inner = np.searchsorted(self.edges, values, side="right") - 1
        inner = np.clip(inner, 0, self.n_regular - 1)
        out = inner + self.first_regular
        out = np.where(values > self.edges[-1], self.n_bins - 1, out)
        if self.outlier_mode == OutlierMode.DOUBLE_SIDED:
            out = np.where(values < self.edges[0], 0, out)
        return out.astype(np.int64)

    def bin_bounds(self, i):
        """(low, high) of bin ``i``; outlier bins are open-ended."""
        j = i - self.first_regular
        if j < 0:
            return -math.inf, self.edges[0]
        if j >= self.n_regular:
            return self.edges[-1], math.inf
        return self.edges[j], self.edges[j + 1]

    def __eq__(self, other):
        if not isinstance(other, BinSpec):
            return NotImplemented
        return (
            self.feature_name == other.feature_name
            and self.strategy == other.strategy
            and self.outlier_mode == other.outlier_mode
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.representatives, other.representatives)
            and self.lower_threshold == other.lower_threshold
            and self.upper_threshold == other.upper_threshold
        )


def bin_index(spec, value):
    """Bin of a single finite ``value`` under ``spec``."""
    edges = spec.edges
    if value > edges[-1]:
        return spec.n_bins - 1
    if value < edges[0]:
        return 0
    j = int(np.searchsorted(edges, value, side="right")) - 1
    return min(j, spec.n_regular - 1) + spec.first_regular


class ContextTuple(NamedTuple):
    liquidity: int
    scope: int
    price_level: int
    trade: int


class TradeDigits(NamedTuple):
    action: int
    side: int
    depth: int
    volume: int
    time: int


class DetokenizedEvent(NamedTuple):
    interarrival: float
    depth: float
    volume: int
    action: int
    side: int


@dataclass(frozen=True, eq=False)
class TokenSchema:
    depth: BinSpec
    volume: BinSpec
    time: BinSpec
    price_level: BinSpec
    liquidity_edges: tuple

    @property
    def trade_bases(self):
        return (N_ACTION, N_SIDE, self.depth.n_bins, self.volume.n_bins, self.time.n_bins)

    @property
    def vocab_size(self):
        return int(np.prod(self.trade_bases))

    def liquidity_index(self, adv):
        lo, hi = self.liquidity_edges
        if adv < lo:
            return 0
        return 1 if adv < hi else 2

    def __eq__(self, other):
        if not isinstance(other, TokenSchema):
            return NotImplemented
        return (
            self.depth == other.depth
            and self.volume == other.volume
            and self.time == other.time
            and self.price_level == other.price_level
            and tuple(self.liquidity_edges) == tuple(other.liquidity_edges)
        )


@dataclass
class CalibrationConfig:
    n_depth: int = 16
    n_volume: int = 16
    n_time: int = 16
    n_price_level: int = 32
    upper_percentile: float = 99.0
    lower_percentile: float = 1.0
    halflife: float = DEFAULT_HALFLIFE
    liquidity_edges: tuple | None = None


# -- encoding ---------------------------------------------------------------

def encode_digits(action, side, depth, volume, time, bases=(2, 2, 16, 16, 16)):
    digits = (action, side, depth, volume, time)
    token = 0
    for d, b in zip(digits, bases):
        if not 0 <= d < b:
            raise TokenOutOfRange(f"digit {d} outside base {b}")
        token = token * b + int(d)
    return token


def decode(token, bases=(2, 2, 16, 16, 16)):
    """Split a trade token back into (action, side, depth, volume, time) digits."""
    vocab = int(np.prod(bases))
    if isinstance(token, bool) or int(token) != token or not 0 <= token < vocab:
        raise TokenOutOfRange(f"token {token} outside [0, {vocab})")
    token = int(token)
    digits = []
    for b in reversed(bases):
        token, d = divmod(token, b)
        digits.append(d)
    return TradeDigits(*reversed(digits))


def encode_digits_array(action, side, depth, volume, time, bases=(2, 2, 16, 16, 16)):
    token = np.zeros(np.shape(action), dtype=np.int64)
    for d, b in zip((action, side, depth, volume, time), bases):
        token = token * b + np.asarray(d, dtype=np.int64)
    return token


def decode_array(tokens, bases=(2, 2, 16, 16, 16)):
    tokens = np.asarray(tokens, dtype=np.int64)
    out = []
    for b in reversed(bases):
        tokens, d = np.divmod(tokens, b)
        out.append(d)
    return TradeDigits(*reversed(out))


def trade_digits(fv, schema):
    values = (fv.depth, fv.log_volume, math.log1p(fv.interarrival))
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteFeature(f"non-finite feature in {fv}")
    return TradeDigits(
        int(fv.action), int(fv.side),
        bin_index(schema.depth, fv.depth),
        bin_index(schema.volume, fv.log_volume),
        bin_index(schema.time, math.log1p(fv.interarrival)),
    )


def encode(fv, liquidity_adv, scope, schema):
    """Context tuple ``(i_l, I_MP, i_price_level, i_trade)`` for one feature vector."""
    if schema is None:
        raise SchemaUncalibrated("no tokenizer schema")
    if not math.isfinite(fv.price_level):
        raise NonFiniteFeature(f"non-finite price level in {fv}")
    digits = trade_digits(fv, schema)
    return ContextTuple(
        schema.liquidity_index(liquidity_adv),
        int(scope),
        bin_index(schema.price_level, fv.price_level),
        encode_digits(*digits, bases=schema.trade_bases),
    )


def encode_table(table, liquidity_adv, scope, schema):
    """Encode a FeatureTable to an ``(n, 4)`` int array; rows with non-finite features are dropped."""
    if schema is None:
        raise SchemaUncalibrated("no tokenizer schema")
    log_dt = np.log1p(table.interarrival)
    ok = (
        np.isfinite(table.depth) & np.isfinite(table.log_volume)
        & np.isfinite(log_dt) & np.isfinite(table.price_level)
    )
    trade = encode_digits_array(
        table.action[ok], table.side[ok],
        schema.depth.indices(table.depth[ok]),
        schema.volume.indices(table.log_volume[ok]),
        schema.time.indices(log_dt[ok]),
        bases=schema.trade_bases,
    )
    out = np.empty((len(trade), 4), dtype=np.int64)
    out[:, 0] = schema.liquidity_index(liquidity_adv)
    out[:, 1] = int(scope)
    out[:, 2] = schema.price_level.indices(table.price_level[ok])
    out[:, 3] = trade
    return out


def encode_stream(stream, schema, halflife=None):
    table = featurize_stream(stream, halflife or DEFAULT_HALFLIFE)
    return encode_table(table, stream.meta.average_daily_volume, stream.scope, schema)


def detokenize(digits, schema):
    """Continuous event parameters for a digit tuple, from the stored bin medians."""
    if schema is None:
        raise SchemaUncalibrated("no tokenizer schema")
    a, s, d, v, t = digits
    dt = math.expm1(schema.time.representatives[t])
    vol = max(1, int(round(math.expm1(schema.volume.representatives[v]))))
    return DetokenizedEvent(max(dt, 0.0), float(schema.depth.representatives[d]), vol, int(a), int(s))


# -- calibration ------------------------------------------------------------

def _strictly_ascending(edges, name):
    edges = np.array(edges, dtype=float)
    for i in range(1, len(edges)):
        if edges[i] <= edges[i - 1]:
            edges[i] = np.nextafter(edges[i - 1], np.inf)
    if edges[-1] <= edges[-2]:
        raise DegenerateFeature(f"{name}: cannot form ascending edges")
    return edges


def calibrate_feature(values, name, n_bins, strategy, outlier_mode, upper_pct=99.0, lower_pct=1.0):
    """Fit a BinSpec to one feature's calibration sample."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    strategy = Strategy(strategy)
    outlier_mode = OutlierMode(outlier_mode)
    n_out = 2 if outlier_mode == OutlierMode.DOUBLE_SIDED else 1
    n_reg = n_bins - n_out
    if n_reg < 1:
        raise ValueError(f"{name}: {n_bins} bins leave no regular bins")
    if len(values) == 0:
        raise InsufficientData(f"{name}: no finite values")
    uniq = np.unique(values)
    if len(uniq) == 1:
        raise DegenerateFeature(f"{name}: all values equal {uniq[0]}")
    if len(uniq) < n_bins:
        raise InsufficientData(f"{name}: {len(uniq)} distinct values for {n_bins} bins")

    upper = float(np.percentile(values, upper_pct))
    if outlier_mode == OutlierMode.DOUBLE_SIDED:
        lower = float(np.percentile(values, lower_pct))
        inside = values[(values >= lower) & (values <= upper)]
    else:
        inside = values[values <= upper]
        lower = float(inside.min())
    if not upper > lower:
        raise DegenerateFeature(f"{name}: outlier thresholds collapse ({lower}, {upper})")

    if strategy == Strategy.EQUAL_FREQUENCY:
        edges = np.quantile(inside, np.linspace(0.0, 1.0, n_reg + 1))
    else:
        edges = np.linspace(lower, upper, n_reg + 1)
    edges[0], edges[-1] = lower, upper
    edges = _strictly_ascending(edges, name)

    spec_kwargs = dict(
        feature_name=name, strategy=strategy, outlier_mode=outlier_mode, edges=edges,
        lower_threshold=lower, upper_threshold=upper,
    )
    provisional = BinSpec(representatives=np.zeros(n_bins), **spec_kwargs)
    idx = provisional.indices(values)
    reps = np.empty(n_bins)
    for b in range(n_bins):
        members = values[idx == b]
        if len(members):
            reps[b] = np.median(members)
        else:
            lo, hi = provisional.bin_bounds(b)
            reps[b] = lo if math.isinf(hi) else hi if math.isinf(lo) else 0.5 * (lo + hi)
    return BinSpec(representatives=reps, **spec_kwargs)


def calibrate_table(table, advs, config=None):
    """Calibrate from a (concatenated) FeatureTable and the per-asset ADVs."""
    config = config or CalibrationConfig()
    if len(table) == 0:
        raise InsufficientData("empty calibration corpus")
    up, lo = config.upper_percentile, config.lower_percentile
    depth = calibrate_feature(table.depth, "depth", config.n_depth, Strategy.EQUAL_FREQUENCY, OutlierMode.DOUBLE_SIDED, up, lo)
    volume = calibrate_feature(table.log_volume, "volume", config.n_volume, Strategy.EQUAL_WIDTH_LOG, OutlierMode.UPPER_ONLY, up, lo)
    time = calibrate_feature(np.log1p(table.interarrival), "time", config.n_time, Strategy.EQUAL_WIDTH_LOG, OutlierMode.UPPER_ONLY, up, lo)
    level = calibrate_feature(table.price_level, "price_level", config.n_price_level, Strategy.EQUAL_FREQUENCY, OutlierMode.DOUBLE_SIDED, up, lo)
    if config.liquidity_edges is not None:
        liq = tuple(float(x) for x in config.liquidity_edges)
    else:
        advs = np.asarray(advs, dtype=float)
        if len(advs) == 0:
            raise InsufficientData("no assets to set liquidity terciles")
        liq = tuple(float(x) for x in np.quantile(advs, [1 / 3, 2 / 3]))
    return TokenSchema(depth, volume, time, level, liq)


def calibrate(streams, config=None):
    """Calibrate a TokenSchema from a corpus of EventStreams."""
    config = config or CalibrationConfig()
    streams = [s for s in streams if len(s)]
    if not streams:
        raise InsufficientData("empty calibration corpus")
    table = FeatureTable.concat(featurize_stream(s, config.halflife) for s in streams)
    advs = {s.meta.asset_id: s.meta.average_daily_volume for s in streams}
    return calibrate_table(table, list(advs.values()), config)


# -- persistence ------------------------------------------------------------

_FEATURES = ("depth", "volume", "time", "price_level")


def save_schema(schema, path):
    sections = []
    for name in _FEATURES:
        spec = getattr(schema, name)
        sections.append((name, {
            "strategy": spec.strategy.value,
            "outlier_mode": spec.outlier_mode.value,
            "n_bins": spec.n_bins,
            "edges": spec.edges,
            "representatives": spec.representatives,
            "lower_threshold": spec.lower_threshold,
            "upper_threshold": spec.upper_threshold,
        }))
    sections.append(("liquidity", {"edges": schema.liquidity_edges}))
    textfmt.dump(path, SCHEMA_HEADER, sections)


def load_schema(path):
    sections = textfmt.load(path, SCHEMA_HEADER)
    specs = {}
    for name in _FEATURES:
        sec = sections.get(name)
        if sec is None:
            raise CorruptFile(f"missing section [{name}]")
        req = lambda k: textfmt.require(sec, k, f"in [{name}]")
        try:
            strategy = Strategy(req("strategy"))
            outlier_mode = OutlierMode(req("outlier_mode"))
        except ValueError as exc:
            raise CorruptFile(str(exc)) from None
        n_bins = textfmt.parse_int(req("n_bins"))
        spec = BinSpec(
            feature_name=name, strategy=strategy, outlier_mode=outlier_mode,
            edges=textfmt.parse_floats(req("edges")),
            representatives=textfmt.parse_floats(req("representatives")),
            lower_threshold=textfmt.parse_float(req("lower_threshold")),
            upper_threshold=textfmt.parse_float(req("upper_threshold")),
        )
        if spec.n_bins != n_bins:
            raise CorruptFile(f"[{name}] n_bins = {n_bins} but edges imply {spec.n_bins}")
        specs[name] = spec
    liq = sections.get("liquidity")
    if liq is None:
        raise CorruptFile("missing section [liquidity]")
    edges = textfmt.parse_floats(textfmt.require(liq, "edges", "in [liquidity]"))
    if len(edges) != N_LIQUIDITY - 1:
        raise CorruptFile(f"[liquidity] needs {N_LIQUIDITY - 1} edges, got {len(edges)}")
    return TokenSchema(liquidity_edges=tuple(edges), **specs)
