"""Zero-intelligence order flow: every feature drawn independently from fitted marginals."""

from dataclasses import dataclass

import numpy as np

from .. import textfmt
from ..errors import CorruptFile, InsufficientData
from ..features import FeatureTable, featurize_stream
from ..midprice import DEFAULT_HALFLIFE
from .common import GeneratedOrders, sample_volume
from .gmm import GaussianMixture, fit_gmm

ZI_HEADER = "zi-params v1"
MIN_PER_CATEGORY = 100


@dataclass(frozen=True, eq=False)
class ZiParams:
    p_side: np.ndarray  # (P[buy], P[sell])
    p_action: np.ndarray  # (P[add], P[cancel])
    time_rate: float
    volume_rate: float
    depth_gmm: GaussianMixture

    def __post_init__(self):
        for name in ("p_side", "p_action"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (2,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0, rtol=0, atol=1e-12):
                raise ValueError(f"{name} must be a probability pair, got {p}")
            object.__setattr__(self, name, p)
        if not (self.time_rate > 0 and self.volume_rate > 0):
            raise ValueError("rates must be positive")

    def __eq__(self, other):
        if not isinstance(other, ZiParams):
            return NotImplemented
        return (
            np.array_equal(self.p_side, other.p_side) and np.array_equal(self.p_action, other.p_action)
            and self.time_rate == other.time_rate and self.volume_rate == other.volume_rate
            and self.depth_gmm == other.depth_gmm
        )


def corpus_table(corpus, halflife=DEFAULT_HALFLIFE):
    """Features of a corpus given as a FeatureTable, one EventStream, or a list of them."""
    if isinstance(corpus, FeatureTable):
        return corpus
    if hasattr(corpus, "events"):
        corpus = [corpus]
    tables = [featurize_stream(s, halflife) for s in corpus if len(s)]
    if not tables:
        raise InsufficientData("empty corpus")
    return FeatureTable.concat(tables)


def fit_zi(corpus, k=3, restarts=10, seed=0, halflife=DEFAULT_HALFLIFE):
    table = corpus_table(corpus, halflife)
    side_counts = np.bincount(table.side, minlength=2)
    action_counts = np.bincount(table.action, minlength=2)
    if min(side_counts.min(), action_counts.min()) < MIN_PER_CATEGORY:
        raise InsufficientData(
            f"need {MIN_PER_CATEGORY} events per side and action, got sides {side_counts}, actions {action_counts}"
        )
    mean_dt = table.interarrival.mean()
    if not mean_dt > 0:
        raise InsufficientData("interarrival times are all zero")
    return ZiParams(
        p_side=side_counts / side_counts.sum(),
        p_action=action_counts / action_counts.sum(),
        time_rate=1.0 / mean_dt,
        volume_rate=1.0 / table.volume.mean(),
        depth_gmm=fit_gmm(table.depth, k=k, restarts=restarts, seed=seed),
    )


def sample_zi_orders(params, n_events, seed=0):
    rng = np.random.default_rng(seed)
    return GeneratedOrders(
        interarrival=rng.exponential(1.0 / params.time_rate, size=n_events),
        depth=params.depth_gmm.sample(n_events, rng),
        volume=sample_volume(params.volume_rate, n_events, rng),
        action=(rng.random(n_events) < params.p_action[1]).astype(np.int64),
        side=(rng.random(n_events) < params.p_side[1]).astype(np.int64),
    )


def sample_zi(params, n_events, seed=0, meta=None, scope=0):
    """ZI EventStream; limit prices sit ``depth`` away from the opening price."""
    return sample_zi_orders(params, n_events, seed).to_stream(meta, scope)


def save_zi(params, path):
    g = params.depth_gmm
    textfmt.dump(path, ZI_HEADER, [
        ("categorical", {"p_side": params.p_side, "p_action": params.p_action}),
        ("rates", {"time": params.time_rate, "volume": params.volume_rate}),
        ("depth_gmm", {"weights": g.weights, "means": g.means, "variances": g.variances}),
    ])


def load_zi(path):
    s = textfmt.load(path, ZI_HEADER)
    try:
        cat, rates, g = s["categorical"], s["rates"], s["depth_gmm"]
        return ZiParams(
            p_side=textfmt.parse_floats(cat["p_side"]),
            p_action=textfmt.parse_floats(cat["p_action"]),
            time_rate=textfmt.parse_float(rates["time"]),
            volume_rate=textfmt.parse_float(rates["volume"]),
            depth_gmm=GaussianMixture(
                textfmt.parse_floats(g["weights"]), textfmt.parse_floats(g["means"]),
                textfmt.parse_floats(g["variances"]),
            ),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from None
