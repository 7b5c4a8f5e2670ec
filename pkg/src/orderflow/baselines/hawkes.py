"""Multivariate Hawkes process with sum-of-exponential kernels, plus per-dimension marks.

Order flow uses four dimensions, ``dim = 2 * side + action``:
0 buy-add, 1 buy-cancel, 2 sell-add, 3 sell-cancel.

Kernel of dimension ``j`` exciting ``i``::

    phi_ij(s) = sum_e alpha[i, j, e] * exp(-beta[i, j, e] * s)

Intensities, log-likelihood and its gradient all run on the recursive
state ``S[i, j, e] = sum_{t_k^j < t} exp(-beta[i, j, e] * (t - t_k^j))``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .. import textfmt
from ..errors import CorruptFile, InsufficientData, NonConvergence, NonStationaryParams
from ..midprice import DEFAULT_HALFLIFE
from .common import GeneratedOrders, sample_volume
from .gmm import GaussianMixture, fit_gmm
from .zi import corpus_table

HAWKES_HEADER = "hawkes-params v1"
N_DIMS = 4
MIN_EVENTS_PER_DIM = 1000


@dataclass(frozen=True)
class DimMarks:
    depth_gmm: GaussianMixture
    volume_rate: float


@dataclass(frozen=True, eq=False)
class HawkesParams:
    mu: np.ndarray
    alpha: np.ndarray  # (D, D, E)
    beta: np.ndarray  # (D, D, E)
    marks: tuple = ()

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        d = len(mu)
        if alpha.ndim == 2:
            alpha = alpha[:, :, None]
        if beta.ndim == 2:
            beta = beta[:, :, None]
        if alpha.shape[:2] != (d, d) or alpha.shape != beta.shape:
            raise ValueError(f"kernel shapes {alpha.shape}, {beta.shape} do not match {d} dims")
        if np.any(mu < 0) or np.any(alpha < 0) or np.any(beta <= 0):
            raise ValueError("need mu >= 0, alpha >= 0, beta > 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "marks", tuple(self.marks))

    @property
    def dims(self):
        return len(self.mu)

    @property
    def n_terms(self):
        return self.alpha.shape[2]

    @property
    def branching_matrix(self):
        return (self.alpha / self.beta).sum(axis=2)

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.branching_matrix))))

    def stationary_rates(self):
        """Mean intensities solving ``rate = mu + G @ rate``."""
        g = self.branching_matrix
        return np.linalg.solve(np.eye(self.dims) - g, self.mu)

    def with_marks(self, marks):
        return HawkesParams(self.mu, self.alpha, self.beta, tuple(marks))

    def __eq__(self, other):
        if not isinstance(other, HawkesParams):
            return NotImplemented
        return (
            np.array_equal(self.mu, other.mu) and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta) and self.marks == other.marks
        )


# -- numba kernels ------------------------------------------------------------

@numba.njit(cache=True)
def _intensity_at(mu, alpha, beta, times, dims, t):
    d, _, ne = alpha.shape
    s = np.zeros((d, d, ne))
    last = 0.0
    for k in range(len(times)):
        tk = times[k]
        if tk >= t:
            break
        dt = tk - last
        for i in range(d):
            for j in range(d):
                for e in range(ne):
                    s[i, j, e] *= math.exp(-beta[i, j, e] * dt)
        for i in range(d):
            for e in range(ne):
                s[i, dims[k], e] += 1.0
        last = tk
    dt = t - last
    lam = mu.copy()
    for i in range(d):
        for j in range(d):
            for e in range(ne):
                lam[i] += alpha[i, j, e] * s[i, j, e] * math.exp(-beta[i, j, e] * dt)
    return lam


@numba.njit(cache=True)
def _simulate(mu, alpha, beta, horizon, max_events, rng):
    d, _, ne = alpha.shape
    s = np.zeros((d, d, ne))
    times = np.empty(max_events)
    dims = np.empty(max_events, dtype=np.int64)
    lam = np.empty(d)
    t = 0.0
    n = 0
    while n < max_events:
        # intensities only decay between events, so the current total bounds the future
        bound = 0.0
        for i in range(d):
            li = mu[i]
            for j in range(d):
                for e in range(ne):
                    li += alpha[i, j, e] * s[i, j, e]
            bound += li
        if bound <= 0.0:
            break
        w = rng.exponential(1.0 / bound)
        t += w
        if t > horizon:
            break
        total = 0.0
        for i in range(d):
            li = mu[i]
            for j in range(d):
                for e in range(ne):
                    s[i, j, e] *= math.exp(-beta[i, j, e] * w)
                    li += alpha[i, j, e] * s[i, j, e]
            lam[i] = li
            total += li
        if total > bound * (1.0 + 1e-12):
            raise RuntimeError("thinning bound violated")
        u = rng.random() * bound
        if u >= total:
            continue
        k = 0
        acc = lam[0]
        while u >= acc and k < d - 1:
            k += 1
            acc += lam[k]
        for i in range(d):
            for e in range(ne):
                s[i, k, e] += 1.0
        times[n] = t
        dims[n] = k
        n += 1
    return times[:n], dims[:n]


@numba.njit(cache=True)
def _loglik_grad(mu, alpha, beta, times, dims, horizon, mask):
    d, _, ne = alpha.shape
    s = np.zeros((d, d, ne))
    sp = np.zeros((d, d, ne))
    g_mu = np.zeros(d)
    g_a = np.zeros((d, d, ne))
    g_b = np.zeros((d, d, ne))
    ll = 0.0
    last = 0.0
    for k in range(len(times)):
        tk = times[k]
        dt = tk - last
        if dt > 0.0:
            for i in range(d):
                for j in range(d):
                    for e in range(ne):
                        f = math.exp(-beta[i, j, e] * dt)
                        sp[i, j, e] = f * (sp[i, j, e] + dt * s[i, j, e])
                        s[i, j, e] *= f
        m = dims[k]
        lam = mu[m]
        for j in range(d):
            for e in range(ne):
                lam += alpha[m, j, e] * s[m, j, e]
        if lam <= 0.0:
            return -np.inf, g_mu, g_a, g_b
        ll += math.log(lam)
        inv = 1.0 / lam
        g_mu[m] += inv
        for j in range(d):
            for e in range(ne):
                g_a[m, j, e] += s[m, j, e] * inv
                g_b[m, j, e] -= alpha[m, j, e] * sp[m, j, e] * inv
        for i in range(d):
            for e in range(ne):
                s[i, m, e] += 1.0
        last = tk
    # compensator
    for i in range(d):
        ll -= mu[i] * horizon
        g_mu[i] -= horizon
    for k in range(len(times)):
        tau = horizon - times[k]
        j = dims[k]
        for i in range(d):
            for e in range(ne):
                if mask[i, j, e] == 0.0:
                    continue
                b = beta[i, j, e]
                a = alpha[i, j, e]
                ex = math.exp(-b * tau)
                one = 1.0 - ex
                ll -= a / b * one
                g_a[i, j, e] -= one / b
                g_b[i, j, e] -= a * (-one / (b * b) + tau * ex / b)
    for i in range(d):
        for j in range(d):
            for e in range(ne):
                g_a[i, j, e] *= mask[i, j, e]
                g_b[i, j, e] *= mask[i, j, e]
    return ll, g_mu, g_a, g_b


# -- public API ---------------------------------------------------------------

def _merge(history):
    """Per-dimension time arrays -> time-sorted (times, dims)."""
    times = np.concatenate([np.asarray(h, dtype=float) for h in history]) if history else np.empty(0)
    dims = np.concatenate([np.full(len(h), i, dtype=np.int64) for i, h in enumerate(history)]) if history else np.empty(0, np.int64)
    order = np.argsort(times, kind="stable")
    return times[order], dims[order]


def hawkes_intensity(params, history, t):
    """Per-dimension intensity at ``t`` given per-dimension event-time arrays (all before ``t``)."""
    times, dims = _merge(history)
    return _intensity_at(params.mu, params.alpha, params.beta, times, dims, float(t))


class HawkesState:
    """Incremental intensity tracker, O(D^2 E) per event regardless of history length."""

    def __init__(self, params):
        self.params = params
        self.s = np.zeros_like(params.alpha)
        self.t = 0.0

    def advance(self, t):
        if t < self.t:
            raise ValueError("time went backwards")
        self.s *= np.exp(-self.params.beta * (t - self.t))
        self.t = t

    def add_event(self, dim):
        self.s[:, dim, :] += 1.0

    @property
    def intensity(self):
        return self.params.mu + (self.params.alpha * self.s).sum(axis=(1, 2))


def log_likelihood(params, history, horizon):
    """Exact log-likelihood of one realisation on ``[0, horizon]``."""
    times, dims = _merge(history)
    mask = np.ones_like(params.alpha)
    return _loglik_grad(params.mu, params.alpha, params.beta, times, dims, float(horizon), mask)[0]


def check_stationary(params):
    rho = params.spectral_radius
    if not rho < 1.0:
        raise NonStationaryParams(f"branching spectral radius {rho:.4f} >= 1")


@dataclass
class HawkesSample:
    times: np.ndarray
    dims: np.ndarray
    horizon: float

    def per_dim(self, n_dims=N_DIMS):
        return [self.times[self.dims == i] for i in range(n_dims)]


def simulate_hawkes_times(params, horizon=None, n_events=None, seed=0, rng=None):
    """Event times and dimensions by Ogata thinning; stops at ``horizon`` or after ``n_events``."""
    check_stationary(params)
    if horizon is None and n_events is None:
        raise ValueError("give a horizon or an event count")
    rng = rng if rng is not None else np.random.default_rng(seed)
    h = math.inf if horizon is None else float(horizon)
    if n_events is None:
        expected = params.stationary_rates().sum() * h
        cap = int(expected + 10 * math.sqrt(expected + 1) + 1000)
    else:
        cap = int(n_events)
    times, dims = _simulate(params.mu, params.alpha, params.beta, h, cap, rng)
    if horizon is None:
        h = float(times[-1]) if len(times) else 0.0
    return HawkesSample(times, dims, h)


def simulate_hawkes(params, horizon=None, n_events=None, seed=0):
    """Compound Hawkes order flow: Hawkes arrival times with per-dimension depth and volume marks."""
    if len(params.marks) != params.dims:
        raise ValueError("simulate_hawkes needs per-dimension marks")
    rng = np.random.default_rng(seed)
    sample = simulate_hawkes_times(params, horizon, n_events, rng=rng)
    n = len(sample.times)
    depth = np.empty(n)
    volume = np.empty(n, dtype=np.int64)
    for i, m in enumerate(params.marks):
        sel = sample.dims == i
        k = int(sel.sum())
        depth[sel] = m.depth_gmm.sample(k, rng)
        volume[sel] = sample_volume(m.volume_rate, k, rng)
    return GeneratedOrders(
        interarrival=np.diff(sample.times, prepend=0.0),
        depth=depth, volume=volume,
        action=sample.dims % 2, side=sample.dims // 2,
    )


# -- fitting ------------------------------------------------------------------

@dataclass
class HawkesFitConfig:
    n_terms: int = 1
    diagonal: bool = False
    max_iter: int = 5000
    tol: float = 1e-10
    grad_tol: float = 1e-6
    beta_bounds: tuple = (1e-4, 1e4)
    max_radius: float = 0.999
    gmm_k: int = 3
    gmm_restarts: int = 10
    seed: int = 0
    halflife: float = DEFAULT_HALFLIFE


@dataclass
class HawkesFit:
    params: HawkesParams
    loglik: float
    n_iter: int
    converged: bool


def _total(realisations, mu, alpha, beta, mask):
    ll = 0.0
    g_mu = np.zeros_like(mu)
    g_a = np.zeros_like(alpha)
    g_b = np.zeros_like(beta)
    for times, dims, horizon in realisations:
        l, gm, ga, gb = _loglik_grad(mu, alpha, beta, times, dims, horizon, mask)
        ll += l
        g_mu += gm
        g_a += ga
        g_b += gb
    return ll, g_mu, g_a, g_b


def _project(mu, alpha, beta, mask, config):
    mu = np.maximum(mu, 1e-12)
    alpha = np.maximum(alpha, 0.0) * mask
    beta = np.clip(beta, *config.beta_bounds)
    rho = float(np.max(np.abs(np.linalg.eigvals((alpha / beta).sum(axis=2)))))
    if rho > config.max_radius:
        alpha = alpha * (config.max_radius / rho)
    return mu, alpha, beta


def fit_hawkes_times(realisations, n_dims=None, config=None, init=None):
    """Maximum-likelihood kernel parameters by projected gradient ascent.

    ``realisations`` is a list of ``(per_dim_times, horizon)``. Steps are
    taken in log-parameter coordinates (a diagonal rescaling of the
    gradient) with Barzilai-Borwein step lengths and Armijo backtracking,
    followed by projection onto ``alpha >= 0``, the beta bounds, and
    branching spectral radius <= ``max_radius``.
    """
    config = config or HawkesFitConfig()
    merged = []
    counts = None
    for history, horizon in realisations:
        times, dims = _merge(history)
        merged.append((times, dims, float(horizon)))
        c = np.array([len(h) for h in history])
        counts = c if counts is None else counts + c
    if not merged:
        raise InsufficientData("no realisations")
    d = n_dims or len(counts)
    if np.any(counts == 0):
        raise InsufficientData(f"dimension(s) {np.flatnonzero(counts == 0).tolist()} have no events")
    total_time = sum(h for _, _, h in merged)
    ne = config.n_terms

    mask = np.ones((d, d, ne))
    if config.diagonal:
        mask[:] = 0.0
        for i in range(d):
            mask[i, i, :] = 1.0
    if init is None:
        rate = counts / total_time
        mu = 0.5 * rate
        beta = np.broadcast_to(np.geomspace(1.0, 10.0 ** (ne - 1), ne), (d, d, ne)).copy()
        n_active = mask.sum(axis=(1, 2))
        alpha = mask * (0.4 / n_active[:, None, None]) * beta
    else:
        mu, alpha, beta = init.mu.copy(), init.alpha.copy(), init.beta.copy()
    mu, alpha, beta = _project(mu, alpha, beta, mask, config)

    def pack(mu, alpha, beta):
        return np.concatenate([mu, alpha.ravel(), beta.ravel()])

    def unpack(x):
        return x[:d], x[d:d + d * d * ne].reshape(d, d, ne), x[d + d * d * ne:].reshape(d, d, ne)

    def evaluate(x):
        m, a, b = unpack(x)
        ll, gm, ga, gb = _total(merged, m, a, b, mask)
        return ll, pack(gm, ga, gb)

    active = pack(np.ones(d), mask, mask) > 0

    def logx(v):
        return np.where(active, np.log(np.where(active, v, 1.0)), 0.0)

    x = pack(mu, alpha, beta)
    ll, g = evaluate(x)
    step = 1e-3
    prev_z = prev_sg = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        z = logx(x)
        sg = g * x * active  # gradient with respect to log-parameters
        if np.max(np.abs(sg)) < config.grad_tol:
            converged = True
            break
        if prev_z is not None:
            dz, dg = z - prev_z, sg - prev_sg
            denom = float(dz @ dg)
            if denom < 0:
                step = float(np.clip(-(dz @ dz) / denom, 1e-10, 1e3))
        accepted = False
        for _ in range(60):
            trial = np.where(active, x * np.exp(np.clip(step * sg, -5.0, 5.0)), 0.0)
            cand = pack(*_project(*unpack(trial), mask, config))
            cand_ll, cand_g = evaluate(cand)
            if np.isfinite(cand_ll) and cand_ll >= ll + 1e-4 * float(sg @ (logx(cand) - z)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        prev_z, prev_sg = z, sg
        gain = cand_ll - ll
        x, ll, g = cand, cand_ll, cand_g
        if gain <= config.tol * max(1.0, abs(ll)):
            converged = True
            break
    m, a, b = unpack(x)
    params = HawkesParams(m, a, b)
    if not converged:
        warnings.warn(f"Hawkes fit stopped after {it} iterations without converging", RuntimeWarning)
    return HawkesFit(params, ll, it, converged)


def stream_history(stream, n_dims=N_DIMS):
    """(per-dimension event times measured from the first event, horizon) for one stream."""
    t = np.array([e.timestamp for e in stream.events], dtype=float)
    t0 = t[0]
    dims = np.array([2 * int(e.side) + int(e.action) for e in stream.events])
    times = t - t0
    return [times[dims == i] for i in range(n_dims)], float(times[-1])


def fit_hawkes(corpus, config=None, strict=False):
    """Compound Hawkes fit: kernel by maximum likelihood, marks per dimension as for ZI."""
    config = config or HawkesFitConfig()
    streams = [corpus] if hasattr(corpus, "events") else list(corpus)
    streams = [s for s in streams if len(s) > 1]
    if not streams:
        raise InsufficientData("empty corpus")
    realisations = [stream_history(s) for s in streams]
    counts = sum(np.array([len(h) for h in hist]) for hist, _ in realisations)
    if np.any(counts < MIN_EVENTS_PER_DIM):
        raise InsufficientData(f"need {MIN_EVENTS_PER_DIM} events per dimension, got {counts.tolist()}")
    fit = fit_hawkes_times(realisations, N_DIMS, config)
    if strict and not fit.converged:
        raise NonConvergence("Hawkes fit did not converge", best=fit)
    table = corpus_table(streams, config.halflife)
    dims = 2 * table.side + table.action
    marks = []
    for i in range(N_DIMS):
        sel = dims == i
        marks.append(DimMarks(
            fit_gmm(table.depth[sel], k=config.gmm_k, restarts=config.gmm_restarts, seed=config.seed + i),
            float(1.0 / table.volume[sel].mean()),
        ))
    fit.params = fit.params.with_marks(marks)
    return fit


# -- persistence --------------------------------------------------------------

def save_hawkes(params, path):
    sections = [("kernel", {
        "dims": params.dims, "n_terms": params.n_terms,
        "mu": params.mu, "alpha": params.alpha.ravel(), "beta": params.beta.ravel(),
    })]
    for i, m in enumerate(params.marks):
        g = m.depth_gmm
        sections.append((f"marks.{i}", {
            "depth_weights": g.weights, "depth_means": g.means, "depth_variances": g.variances,
            "volume_rate": m.volume_rate,
        }))
    textfmt.dump(path, HAWKES_HEADER, sections)


def load_hawkes(path):
    s = textfmt.load(path, HAWKES_HEADER)
    try:
        k = s["kernel"]
        d = textfmt.parse_int(k["dims"])
        ne = textfmt.parse_int(k["n_terms"])
        alpha = np.array(textfmt.parse_floats(k["alpha"])).reshape(d, d, ne)
        beta = np.array(textfmt.parse_floats(k["beta"])).reshape(d, d, ne)
        marks = []
        for i in range(d):
            sec = s.get(f"marks.{i}")
            if sec is None:
                break
            marks.append(DimMarks(
                GaussianMixture(
                    textfmt.parse_floats(sec["depth_weights"]), textfmt.parse_floats(sec["depth_means"]),
                    textfmt.parse_floats(sec["depth_variances"]),
                ),
                textfmt.parse_float(sec["volume_rate"]),
            ))
        return HawkesParams(textfmt.parse_floats(k["mu"]), alpha, beta, tuple(marks))
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from None
