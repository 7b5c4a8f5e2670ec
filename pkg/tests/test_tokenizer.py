import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orderflow import tokenizer as tk
from orderflow.errors import (
    CorruptFile, DegenerateFeature, FormatVersionError, InsufficientData, NonFiniteFeature,
    SchemaUncalibrated, TokenOutOfRange,
)
from orderflow.features import FeatureVector


def brute_bin(spec, x):
    # linear scan over the documented bin layout
    if spec.outlier_mode == tk.OutlierMode.DOUBLE_SIDED and x < spec.lower_threshold:
        return 0
    if x > spec.upper_threshold:
        return spec.n_bins - 1
    e = spec.edges
    for j in range(spec.n_regular):
        last = j == spec.n_regular - 1
        if (x < e[j + 1] or (last and x <= e[j + 1])) and (x >= e[j] or j == 0):
            return j + spec.first_regular
    raise AssertionError(x)


def test_worked_example_token():
    assert tk.encode_digits(0, 1, 7, 7, 11) == 4096 + 1792 + 112 + 11 == 6011
    assert tuple(tk.decode(6011)) == (0, 1, 7, 7, 11)
    assert tk.encode_digits(0, 0, 0, 0, 0) == 0
    assert tuple(tk.decode(0)) == (0, 0, 0, 0, 0)
    assert tuple(tk.decode(16383)) == (1, 1, 15, 15, 15)


def test_vocab_product(schema):
    assert 2 * 2 * 16 * 16 * 16 == 16384
    assert schema.vocab_size == 16384
    assert schema.trade_bases == (2, 2, 16, 16, 16)
    assert schema.price_level.n_bins == 32


def test_bijection_exhaustive():
    tokens = np.arange(16384)
    digits = tk.decode_array(tokens)
    np.testing.assert_array_equal(tk.encode_digits_array(*digits), tokens)
    for t in range(0, 16384, 97):
        assert tk.encode_digits(*tk.decode(t)) == t


@pytest.mark.parametrize("bad", [-1, 16384, 2.5, True])
def test_decode_out_of_range(bad):
    with pytest.raises(TokenOutOfRange):
        tk.decode(bad)


def test_digit_out_of_range():
    with pytest.raises(TokenOutOfRange):
        tk.encode_digits(0, 2, 0, 0, 0)


def test_bin_counts_with_outliers():
    x = np.random.default_rng(0).normal(size=5000)
    spec = tk.calibrate_feature(x, "depth", 16, "EqualFrequency", "DoubleSided")
    assert (spec.n_regular, spec.n_outlier, spec.n_bins, len(spec.edges)) == (14, 2, 16, 15)
    up = tk.calibrate_feature(np.abs(x), "volume", 16, "EqualWidthLog", "UpperOnly")
    assert (up.n_regular, up.n_bins, len(up.edges)) == (15, 16, 16)


def test_small_corpus_matches_brute_force():
    x = np.random.default_rng(1).standard_t(3, size=400)
    for strategy, mode in [("EqualFrequency", "DoubleSided"), ("EqualWidthLog", "UpperOnly")]:
        spec = tk.calibrate_feature(x, "f", 8, strategy, mode)
        probe = np.concatenate([x, spec.edges, [-1e9, 1e9]])
        fast = spec.indices(probe)
        for v, b in zip(probe, fast):
            assert b == brute_bin(spec, v) == tk.bin_index(spec, v)


def test_degenerate_and_insufficient():
    with pytest.raises(DegenerateFeature):
        tk.calibrate_feature(np.full(100, 0.5), "depth", 16, "EqualFrequency", "DoubleSided")
    with pytest.raises(InsufficientData):
        tk.calibrate_feature(np.arange(10.0), "depth", 16, "EqualFrequency", "DoubleSided")
    with pytest.raises(InsufficientData):
        tk.calibrate([])


def test_equal_frequency_occupancy():
    x = np.random.default_rng(2).uniform(0, 1, 100_000)
    spec = tk.calibrate_feature(x, "depth", 16, "EqualFrequency", "DoubleSided")
    idx = spec.indices(x)
    counts = np.bincount(idx, minlength=16)[1:15]
    share = counts / counts.sum()
    assert np.all(np.abs(share - 1 / 14) <= 0.1 / 14)
    assert np.bincount(idx, minlength=16)[0] / len(x) == pytest.approx(0.01, abs=1e-3)


def test_boundary_conventions():
    x = np.random.default_rng(3).normal(size=2000)
    spec = tk.calibrate_feature(x, "depth", 16, "EqualFrequency", "DoubleSided")
    assert spec.index(spec.edges[0]) == 1
    assert spec.index(spec.edges[3]) == 4
    assert spec.index(spec.edges[-1]) == 14
    assert spec.index(np.nextafter(spec.edges[-1], np.inf)) == 15
    assert spec.index(np.nextafter(spec.edges[0], -np.inf)) == 0


def test_log_width_edges_geometric():
    dt = np.random.default_rng(4).exponential(3.0, 20_000)
    spec = tk.calibrate_feature(np.log1p(dt), "time", 16, "EqualWidthLog", "UpperOnly")
    raw = np.expm1(spec.edges) + 1.0
    ratios = raw[1:] / raw[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["normal", "lognormal", "t"]))
def test_representatives_inside_bins(seed, dist):
    rng = np.random.default_rng(seed)
    x = {"normal": rng.normal, "lognormal": rng.lognormal, "t": lambda size: rng.standard_t(2, size)}[dist](size=3000)
    for strategy, mode in [("EqualFrequency", "DoubleSided"), ("EqualWidthLog", "UpperOnly")]:
        spec = tk.calibrate_feature(x, "f", 16, strategy, mode)
        for b in range(spec.n_bins):
            lo, hi = spec.bin_bounds(b)
            if b == 0 and mode == "UpperOnly":
                lo = -math.inf
            assert lo <= spec.representatives[b] <= hi


def test_liquidity_terciles(universe_small, schema):
    advs = sorted(s.meta.average_daily_volume for s in universe_small)
    lo, hi = schema.liquidity_edges
    assert lo == pytest.approx(np.quantile(advs, 1 / 3))
    assert hi == pytest.approx(np.quantile(advs, 2 / 3))
    assert [schema.liquidity_index(a) for a in (advs[0], advs[-1])] == [0, 2]


def test_context_tuple(schema):
    fv = FeatureVector(1.0, math.log(100), 1e-4, 0.0, 0, 1)
    ctx = tk.encode(fv, 1e12, 1, schema)
    assert ctx.liquidity == 2 and ctx.scope == 1
    digits = tk.decode(ctx.trade, schema.trade_bases)
    assert digits.action == 0 and digits.side == 1
    assert digits.depth == schema.depth.index(1e-4)
    assert digits.time == schema.time.index(math.log(2.0))
    assert ctx.price_level == schema.price_level.index(0.0)
    with pytest.raises(SchemaUncalibrated):
        tk.encode(fv, 1.0, 0, None)
    with pytest.raises(NonFiniteFeature):
        tk.encode(FeatureVector(1.0, math.nan, 0.0, 0.0, 0, 0), 1.0, 0, schema)


def test_worked_context_tuple():
    # bin indices as given in the worked example
    assert list(tk.ContextTuple(2, 0, 19, tk.encode_digits(0, 1, 7, 7, 11))) == [2, 0, 19, 6011]


def test_detokenize_token_zero(schema):
    ev = tk.detokenize(tk.decode(0), schema)
    assert ev.interarrival == pytest.approx(max(math.expm1(schema.time.representatives[0]), 0.0))
    assert ev.depth == schema.depth.representatives[0]
    assert ev.volume >= 1 and ev.action == 0 and ev.side == 0
    with pytest.raises(SchemaUncalibrated):
        tk.detokenize(tk.decode(0), None)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 1e3), st.integers(1, 10**7), st.floats(-0.05, 0.05), st.integers(0, 1), st.integers(0, 1),
)
def test_detokenize_round_trip_bins(schema, dt, vol, depth, a, s):
    fv = FeatureVector(dt, math.log1p(vol), depth, 0.0, a, s)
    digits = tk.trade_digits(fv, schema)
    ev = tk.detokenize(tk.decode(tk.encode_digits(*digits)), schema)
    again = tk.trade_digits(FeatureVector(ev.interarrival, math.log1p(ev.volume), ev.depth, 0.0, ev.action, ev.side), schema)
    assert again.action == a and again.side == s and again.depth == digits.depth and again.time == digits.time
    # volume rounds to whole shares, which can cross an edge only in the lowest bins
    assert abs(again.volume - digits.volume) <= (1 if digits.volume < 3 else 0)


def test_encode_table_matches_scalar(schema, universe_small):
    stream = universe_small[5]
    rows = tk.encode_stream(stream, schema)
    from orderflow.features import featurize_stream
    table = featurize_stream(stream)
    for i in range(0, len(table), 37):
        assert tuple(rows[i]) == tuple(tk.encode(table.row(i), stream.meta.average_daily_volume, stream.scope, schema))


def test_schema_round_trip(schema, tmp_path):
    path = tmp_path / "schema.txt"
    tk.save_schema(schema, path)
    assert path.read_text().splitlines()[0] == "tokenizer-schema v1"
    assert tk.load_schema(path) == schema
    with pytest.raises(FileNotFoundError):
        tk.load_schema(tmp_path / "nope.txt")


def test_schema_consistency_errors(schema, tmp_path):
    path = tmp_path / "schema.txt"
    tk.save_schema(schema, path)
    text = path.read_text()
    edited = tmp_path / "edited.txt"
    edited.write_text(text.replace("n_bins = 16", "n_bins = 17", 1))
    with pytest.raises(CorruptFile):
        tk.load_schema(edited)
    edited.write_text(text.replace("tokenizer-schema v1", "tokenizer-schema v0"))
    with pytest.raises(FormatVersionError):
        tk.load_schema(edited)
    edited.write_text(text.replace("[liquidity]", "[liq]"))
    with pytest.raises(CorruptFile):
        tk.load_schema(edited)
