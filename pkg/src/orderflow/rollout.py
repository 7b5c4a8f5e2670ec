"""Closed-loop generation: a generator proposes events, the simulator executes them, and the
resulting mid-price feeds back into the next proposal."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines.hawkes import simulate_hawkes
from .baselines.zi import sample_zi_orders
from .errors import HorizonZero
from .evaluation import FlowSummary
from .events import Action, AssetMeta, orders_to_stream
from .lob_sim import OrderBook, SimulationResult, Transaction
from .model import Generator, SamplerConfig
from .tokenizer import DetokenizedEvent, decode, detokenize, encode_digits

TRAJECTORY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
CONTROLLABILITY_HEADER = ("liquidity", "scope", "n_events", "std_volume", "std_interarrival")


@dataclass
class RolloutConfig:
    schema: object
    context: np.ndarray | None = None  # (n, 4) context tuples
    horizon: int = 1024
    n_rollouts: int = 1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    liquidity: int = 1
    scope: int = 0
    p0: float = 100.0
    seed: int = 0
    market_price_rule: str = "algorithm2"
    check: bool = False

    def context_rows(self):
        if self.context is None:
            return np.zeros((0, 4), dtype=np.int64)
        return np.asarray(self.context, dtype=np.int64).reshape(-1, 4)


@dataclass
class RolloutResult:
    tokens: np.ndarray  # (n, 4) rows fed back to the generator, generated and injected
    injected: np.ndarray  # bool mask over tokens
    events: list  # DetokenizedEvent per token row
    sim: SimulationResult  # fills and series of the generated part only
    price_level_trace: np.ndarray  # i_dp fed to the generator at each step
    book: OrderBook = field(repr=False, default=None)
    executed: list = field(repr=False, default_factory=list)

    def __len__(self):
        return len(self.events)

    @property
    def terminal_midprice(self):
        return self.book.midprice

    def generated_events(self):
        return [e for e, inj in zip(self.events, self.injected) if not inj]

    def to_stream(self, meta=None, scope=0):
        """Everything executed (context replay included) as an EventStream at absolute prices.

        Orders the book rejected for a non-positive price are left out.
        """
        meta = meta or AssetMeta("SYN", 1e6, self.book.p0)
        rows = [r for r in self.executed if r[4] > 0]
        cols = list(zip(*rows)) if rows else [[]] * 5
        return orders_to_stream(meta, *(np.asarray(c) for c in cols), scope)

    def summary(self):
        ev = self.events
        return FlowSummary.from_simulation(
            self.sim, [e.interarrival for e in ev], [e.depth for e in ev],
        )


# -- generators ---------------------------------------------------------------

class ModelSource:
    """Closed loop: the toy model samples the next trade token."""

    closed_loop = True

    def __init__(self, model):
        self.model = model

    def start(self, horizon, index, config):
        sampler = config.sampler
        self.gen = Generator(self.model, SamplerConfig(
            sampler.repetition_penalty, sampler.penalty_window, sampler.temperature, sampler.seed + index,
        ))
        self.history = []

    def next(self, rows, start, schema):
        window = rows[len(rows) - min(len(rows), self.model.cfg.context_length - 1):]
        token = self.gen.next_token(window, self.history, start)
        self.history.append(token)
        return token, detokenize(decode(token, schema.trade_bases), schema)


class OrderSource:
    """Open loop: events pregenerated by a baseline, replayed in order."""

    closed_loop = False

    def __init__(self, make_orders, seed=0):
        self.make_orders = make_orders
        self.seed = seed

    def start(self, horizon, index, config):
        self.orders = self.make_orders(horizon, self.seed + index) if horizon else None
        self.i = 0

    def next(self, rows, start, schema):
        o, i = self.orders, self.i
        self.i += 1
        ev = DetokenizedEvent(float(o.interarrival[i]), float(o.depth[i]), int(o.volume[i]), int(o.action[i]), int(o.side[i]))
        return None, ev


def zi_source(params, seed=0):
    return OrderSource(lambda n, s: sample_zi_orders(params, n, s), seed)


def hawkes_source(params, seed=0):
    return OrderSource(lambda n, s: simulate_hawkes(params, n_events=n, seed=s), seed)


def orders_source(orders):
    """A fixed GeneratedOrders table, replayed identically for every rollout."""
    return OrderSource(lambda n, s: orders, 0)


def as_source(generator):
    if hasattr(generator, "next") and hasattr(generator, "start"):
        return generator
    return ModelSource(generator)


# -- the loop -----------------------------------------------------------------

def event_token(ev, schema):
    """Trade token of a continuous event under ``schema``."""
    return encode_digits(
        ev.action, ev.side,
        schema.depth.index(ev.depth),
        schema.volume.index(math.log1p(ev.volume)),
        schema.time.index(math.log1p(ev.interarrival)),
        bases=schema.trade_bases,
    )


class _Loop:
    def __init__(self, config):
        self.config = config
        self.schema = config.schema
        self.book = OrderBook(config.p0, market_price_rule=config.market_price_rule, check=config.check)
        self.rows = []
        self.events = []
        self.injected = []
        self.trace = []
        self.executed = []  # (time, action, side, volume, price) of everything sent to the book

    def price_level_index(self):
        ratio = (self.book.midprice - self.config.p0) / self.config.p0
        return self.schema.price_level.index(ratio)

    def execute(self, ev, time):
        txn = Transaction(time, ev.action, ev.side, ev.volume, ev.depth * 1e4)
        self.executed.append((time, ev.action, ev.side, ev.volume, self.book.order_price_from_depth(txn.depth_bps)))
        self.book.step_sim(txn)

    def push(self, ev, token, level, injected):
        self.rows.append((self.config.liquidity, self.config.scope, level, token))
        self.events.append(ev)
        self.injected.append(injected)
        self.trace.append(level)


def replay_context(loop):
    """Execute the context tuples into the book, advancing the clock by the time representative."""
    schema = loop.schema
    rows = loop.config.context_rows()
    adds = [0, 0]
    volumes = []
    for r in rows:
        ev = detokenize(decode(int(r[3]), schema.trade_bases), schema)
        loop.execute(ev, loop.book.clock + ev.interarrival)
        if ev.action == Action.ADD:
            adds[ev.side] += 1
        volumes.append(ev.volume)
    loop.rows = [tuple(int(x) for x in r) for r in rows]
    return adds, volumes


def run_index(config, generator, index, injection=None):
    """Rollout number ``index`` of a batch; ``injection`` is ``(side, multiplier)`` or None."""
    source = as_source(generator)
    loop = _Loop(config)
    context_adds, context_volumes = replay_context(loop)
    book = loop.book
    n_series, n_fills, n_deletes = len(book.series[0]), len(book.fills), len(book.deletes)
    t_start = book.clock
    schema = loop.schema
    source.start(config.horizon, index, config)

    schedule = None
    if injection is not None:
        side, mult = injection
        span = t_start
        rate = mult * context_adds[side] / span if span > 0 else 0.0
        if rate > 0:
            inj_volume = max(1, int(np.median(context_volumes)))
            schedule = [t_start + 1.0 / rate, 1.0 / rate, side, inj_volume]

    last_time = t_start
    for _ in range(config.horizon):
        level = loop.price_level_index()
        token, ev = source.next(loop.rows, (config.liquidity, config.scope, level), schema)
        t = book.clock + ev.interarrival
        while schedule is not None and schedule[0] <= t:
            t_inj, step, side, vol = schedule
            inj = DetokenizedEvent(t_inj - last_time, 0.0, vol, int(Action.ADD), side)
            inj_level = loop.price_level_index()
            loop.execute(inj, t_inj)
            loop.push(inj, event_token(inj, schema), inj_level, True)
            last_time = t_inj
            schedule[0] += step
            level = loop.price_level_index()
        if token is None:
            token = event_token(ev, schema)
        if config.check:
            ratio = (book.midprice - config.p0) / config.p0
            assert level == schema.price_level.index(ratio), "fed price level differs from the simulator"
        loop.execute(ev, max(t, book.clock))
        loop.push(ev._replace(interarrival=book.clock - last_time), token, level, False)
        last_time = book.clock

    full = SimulationResult.from_book(book)
    sim = SimulationResult(
        fills=full.fills[n_fills:], deletes=full.deletes[n_deletes:],
        time=full.time[n_series:], midprice=full.midprice[n_series:], spread=full.spread[n_series:],
        bid_volume=full.bid_volume[n_series:], ask_volume=full.ask_volume[n_series:],
        imbalance=full.imbalance[n_series:], rejected=full.rejected, book=book,
    )
    n_ctx = len(config.context_rows())
    return RolloutResult(
        tokens=np.asarray(loop.rows[n_ctx:], dtype=np.int64).reshape(-1, 4),
        injected=np.asarray(loop.injected, dtype=bool),
        events=loop.events, sim=sim,
        price_level_trace=np.asarray(loop.trace, dtype=np.int64), book=book, executed=loop.executed,
    )


def run_rollout(config, generator):
    """``config.n_rollouts`` independent rollouts; rollout ``i`` uses seed offset ``i``.

    ``generator`` is a trained model or a source from :func:`zi_source` /
    :func:`hawkes_source`. Baselines are open loop but run through the
    same execution path.
    """
    if config.horizon < 0:
        raise HorizonZero(f"horizon must be non-negative, got {config.horizon}")
    source = as_source(generator)
    return [run_index(config, source, i) for i in range(config.n_rollouts)]


def inject_counterfactual(config, generator, side, frequency_multiplier=10.0):
    """Rollouts with extra at-the-mid Add orders on ``side``.

    Injections arrive on a regular schedule at ``frequency_multiplier``
    times the context's per-side Add rate, with the median context volume.
    """
    if config.horizon < 0:
        raise HorizonZero(f"horizon must be non-negative, got {config.horizon}")
    source = as_source(generator)
    return [run_index(config, source, i, (int(side), float(frequency_multiplier))) for i in range(config.n_rollouts)]


# -- aggregates ---------------------------------------------------------------

def trajectory_bands(results, n_points=200, quantiles=TRAJECTORY_QUANTILES):
    """Mean and quantiles of mid-price across rollouts on a common grid of time since generation start."""
    results = [r for r in results if len(r.sim.time)]
    if not results:
        return np.zeros(0), np.zeros(0), np.zeros((0, len(quantiles)))
    starts = [r.sim.time[0] for r in results]
    end = max(r.sim.time[-1] - s for r, s in zip(results, starts))
    grid = np.linspace(0.0, end, n_points)
    paths = np.empty((len(results), n_points))
    for k, (r, s) in enumerate(zip(results, starts)):
        idx = np.searchsorted(r.sim.time - s, grid, side="right") - 1
        paths[k] = r.sim.midprice[np.maximum(idx, 0)]
    return grid, paths.mean(axis=0), np.quantile(paths, quantiles, axis=0).T


def write_trajectories(results, path, n_points=200, quantiles=TRAJECTORY_QUANTILES):
    grid, mean, q = trajectory_bands(results, n_points, quantiles)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time", "mean_midprice", *(f"q{int(round(x * 100)):02d}" for x in quantiles)))
        for i in range(len(grid)):
            w.writerow((repr(float(grid[i])), repr(float(mean[i])), *(repr(float(v)) for v in q[i])))


def trajectory_stats(events):
    """(n, std of volume, std of interarrival) of detokenized events; population std."""
    if not events:
        return 0, math.nan, math.nan
    vol = np.array([e.volume for e in events], dtype=float)
    dt = np.array([e.interarrival for e in events], dtype=float)
    return len(events), float(vol.std()), float(dt.std())


def controllability_sweep(model, schema, n_trajectories, horizon, sampler=None, p0=100.0):
    """Context-free trajectories for each (liquidity, scope) pair; rows of CONTROLLABILITY_HEADER."""
    if n_trajectories == 0:
        return []
    sampler = sampler or SamplerConfig()
    rows = []
    for liq in range(3):
        for scope in range(2):
            cfg = RolloutConfig(schema, None, horizon, n_trajectories, sampler, liq, scope, p0)
            events = [e for r in run_rollout(cfg, model) for e in r.events]
            rows.append((liq, scope, *trajectory_stats(events)))
    return rows


def write_controllability(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONTROLLABILITY_HEADER)
        for liq, scope, n, sv, st in rows:
            w.writerow((liq, scope, n, repr(sv), repr(st)))
