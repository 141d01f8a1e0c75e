"""Monte Carlo for the symmetric α-stable process killed on leaving a domain.

The process is Brownian motion run at twice the usual speed and
subordinated by an (α/2)-stable subordinator, so one increment over ``dt``
is ``sqrt(2 σ) N`` with ``σ = dt^{2/α} S`` and ``S`` standard positive
(α/2)-stable.  Paths are sampled exactly at multiples of ``dt``; an exit is
detected at the first sampled time outside the domain, which biases exit
times upward by at most one step plus any missed out-and-back excursion.

Randomness comes from Philox keyed by ``(seed, stream)``.  Paths are split
into fixed-width blocks, block ``j`` drawing from stream ``stream + j``, so
results do not depend on how many worker threads process the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import domain as dom
from .assembly import check_alpha

STREAM_WIDTH = 8192
_MASK64 = (1 << 64) - 1


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed & _MASK64, self.stream & _MASK64]))


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def sample_positive_stable(rho: float, rng, size=None):
    """Standard positive ``rho``-stable draws, ``E[exp(-s σ)] = exp(-s^rho)``.

    Kanter's representation through one uniform and one exponential.
    """
    if not 0 < rho < 1:
        raise SimulationError(f"subordinator index must lie in (0, 1), got {rho}")
    gen = _generator(rng)
    u = np.pi * gen.random(size)
    e = gen.standard_exponential(size)
    return np.sin(rho * u) / np.sin(u) ** (1 / rho) * (np.sin((1 - rho) * u) / e) ** ((1 - rho) / rho)


def sample_stable_increment(alpha: float, dt: float, rng, d: int = 1, size=None) -> np.ndarray:
    """Increments with characteristic function ``exp(-dt |ξ|^α)``.

    Returns shape ``(size, d)`` (or ``(d,)`` when ``size`` is None).
    """
    alpha = check_alpha(alpha)
    if not dt > 0:
        raise SimulationError("time step must be positive")
    gen = _generator(rng)
    n = 1 if size is None else int(size)
    sigma = dt ** (2 / alpha) * sample_positive_stable(alpha / 2, gen, n)
    step = np.sqrt(2 * sigma)[:, None] * gen.standard_normal((n, d))
    return step[0] if size is None else step


def _start(domain: dom.Domain, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (domain.d,):
        raise SimulationError(f"start point {x.tolist()} does not have {domain.d} coordinates")
    if not domain.contains(x):
        raise SimulationError(f"start point {x.tolist()} lies outside {domain}")
    return x


def _run_block(domain, x0, alpha, dt, nsteps, npaths, gen):
    """Exit step (1-based; ``nsteps + 1`` when censored) and exit position per path."""
    d = domain.d
    pos = np.broadcast_to(x0, (npaths, d)).copy()
    exit_step = np.full(npaths, nsteps + 1, dtype=np.int64)
    alive = np.arange(npaths)
    scale = dt ** (2 / alpha)
    rho = alpha / 2
    for step in range(1, nsteps + 1):
        m = alive.size
        if m == 0:
            break
        u = np.pi * gen.random(m)
        e = gen.standard_exponential(m)
        sigma = scale * (np.sin(rho * u) / np.sin(u) ** (1 / rho) * (np.sin((1 - rho) * u) / e) ** ((1 - rho) / rho))
        pos[alive] += np.sqrt(2 * sigma)[:, None] * gen.standard_normal((m, d))
        out = ~domain.contains(pos[alive])
        if out.any():
            exit_step[alive[out]] = step
            alive = alive[~out]
    return exit_step, pos


def _simulate(domain, x0, alpha, dt, t_max, paths, seed, stream, threads, width=STREAM_WIDTH):
    nsteps = int(round(t_max / dt))
    if nsteps < 1:
        raise SimulationError("t_max must cover at least one time step")
    blocks = [(stream + j, min(width, paths - j * width)) for j in range(math.ceil(paths / width))]

    def work(block):
        sid, n = block
        return _run_block(domain, x0, alpha, dt, nsteps, n, RngStream(seed, sid).generator())

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    steps = np.concatenate([r[0] for r in results])
    positions = np.concatenate([r[1] for r in results])
    return steps, positions, nsteps


@dataclass(frozen=True)
class ExitSample:
    start: np.ndarray
    time: float
    position: np.ndarray
    steps: int
    censored: bool


def simulate_exit(domain, x, alpha: float, dt: float, t_max: float, rng) -> ExitSample:
    """One path from ``x`` until its first sampled position outside ``domain``."""
    alpha = check_alpha(alpha)
    x0 = _start(domain, x)
    nsteps = int(round(t_max / dt))
    steps, pos = _run_block(domain, x0, alpha, dt, nsteps, 1, _generator(rng))
    censored = bool(steps[0] > nsteps)
    n = int(min(steps[0], nsteps))
    return ExitSample(x0, n * dt, pos[0], n, censored)


@dataclass(frozen=True)
class ExitStatistics:
    start: np.ndarray
    mean: float
    se: float
    paths: int
    censored_fraction: float
    outside_fraction: float  # exits landing at positive distance from the boundary


def exit_statistics(
    domain, x, alpha: float, dt: float, t_max: float, paths: int, seed: int, stream: int = 0, threads: int = 1
) -> ExitStatistics:
    """Mean of the sampled exit time; censored paths are excluded and counted."""
    alpha = check_alpha(alpha)
    x0 = _start(domain, x)
    steps, pos, nsteps = _simulate(domain, x0, alpha, dt, t_max, paths, seed, stream, threads)
    done = steps <= nsteps
    times = steps[done] * dt
    if times.size == 0:
        raise SimulationError("every path was censored")
    se = times.std(ddof=1) / math.sqrt(times.size) if times.size > 1 else math.inf
    clear = ~domain.contains(pos[done])
    return ExitStatistics(x0, float(times.mean()), float(se), paths, 1 - done.mean(), float(clear.mean()))


@dataclass(frozen=True)
class SurvivalEstimate:
    domain: dom.Domain
    alpha: float
    x: np.ndarray
    t: np.ndarray
    p_hat: np.ndarray
    se: np.ndarray
    alive: np.ndarray
    censored: np.ndarray
    paths: int
    dt: float


def survival_from_probabilities(t, p, paths: int, dt: float = 0.0, domain=None, alpha=math.nan, x=None):
    """Wrap given survival probabilities (e.g. analytic curves) for fitting."""
    t = np.asarray(t, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    se = np.sqrt(p * (1 - p) / paths)
    alive = np.round(p * paths).astype(np.int64)
    return SurvivalEstimate(domain, alpha, x, t, p, se, alive, np.zeros_like(alive), paths, dt)


def survival_curve(
    domain,
    x,
    alpha: float,
    paths: int,
    t_grid,
    dt: float,
    seed: int,
    stream: int = 0,
    threads: int = 1,
) -> SurvivalEstimate:
    """Fraction of paths still inside ``domain`` at each time of ``t_grid``.

    Times are snapped to multiples of ``dt``; the simulation runs to the
    largest of them and paths alive there are counted as censored.
    """
    alpha = check_alpha(alpha)
    x0 = _start(domain, x)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(t_grid < 0):
        raise SimulationError("time grid must be nonempty and nonnegative")
    grid_steps = np.round(t_grid / dt).astype(np.int64)
    t_max = max(grid_steps.max(), 1) * dt
    steps, _, nsteps = _simulate(domain, x0, alpha, dt, t_max, paths, seed, stream, threads)
    order = np.sort(steps)
    # alive at step j  <=>  exit step > j
    alive = paths - np.searchsorted(order, grid_steps, side="right")
    p = alive / paths
    censored = np.where(grid_steps >= nsteps, int((steps > nsteps).sum()), 0)
    se = np.sqrt(p * (1 - p) / paths)
    return SurvivalEstimate(domain, alpha, x0, grid_steps * dt, p, se, alive, censored, paths, dt)


@dataclass(frozen=True)
class RateFit:
    rate: float
    se: float
    ci: tuple[float, float]
    window: tuple[float, float]
    points: int


def fit_lambda1(estimate: SurvivalEstimate, tail_fraction: float = 0.5, min_points: int = 4) -> RateFit:
    """Decay rate of ``P_x(τ > t)`` from a weighted fit of ``log p̂`` on ``t``.

    Uses the last ``tail_fraction`` of the usable points (those with at least
    ten surviving paths); weights are inverse delta-method variances of
    ``log p̂``.
    """
    t, p, n = estimate.t, estimate.p_hat, estimate.paths
    usable = (p > 10 / n) & (p < 1) & (t > 0)
    if not usable.any():
        raise SimulationError("no usable survival points: all censored or extinct")
    idx = np.nonzero(usable)[0]
    start = int(math.floor(len(idx) * (1 - tail_fraction)))
    idx = idx[start:]
    if idx.size < min_points:
        raise SimulationError(f"tail window has {idx.size} points, need {min_points}")
    tt, y = t[idx], np.log(p[idx])
    w = n * p[idx] / (1 - p[idx])
    X = np.column_stack([np.ones_like(tt), tt])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    coef = cov @ (XtW @ y)
    rate = -coef[1]
    se = math.sqrt(cov[1, 1])
    return RateFit(float(rate), se, (rate - 1.96 * se, rate + 1.96 * se), (float(tt[0]), float(tt[-1])), idx.size)


@dataclass(frozen=True)
class DecayProfile:
    distances: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    exponent: float
    exponent_se: float


def boundary_ladder(domain: dom.Domain, levels: int = 6):
    """Start points approaching the boundary along a normal from the incentre."""
    s = domain.shape
    radius = dom.inner_radius(domain)
    if isinstance(s, dom.Interval):
        centre, direction = np.array([(s.a + s.b) / 2]), np.array([1.0])
    elif isinstance(s, dom.Box):
        lo, hi = np.array(s.lo), np.array(s.hi)
        centre = (lo + hi) / 2
        direction = np.eye(domain.d)[int(np.argmin(hi - lo))]
    elif isinstance(s, dom.Ball):
        centre, direction = np.array(s.center, float), np.eye(domain.d)[0]
    else:
        raise SimulationError("boundary ladder needs an interval, box or ball")
    deltas = radius * 0.5 ** np.arange(1, levels + 1)
    return [(float(delta), centre + (radius - delta) * direction) for delta in deltas]


def boundary_decay_profile(
    domain,
    alpha: float,
    paths: int,
    dt: float,
    seed: int,
    levels: int = 6,
    fit_points: int = 4,
    t_max: float | None = None,
    threads: int = 1,
) -> DecayProfile:
    """Mean exit time along a geometric ladder of starts and its power-law exponent.

    The exponent is the least-squares slope of ``log E_x τ`` on ``log δ(x)``
    over the ``fit_points`` starts closest to the boundary.
    """
    alpha = check_alpha(alpha)
    if t_max is None:
        t_max = 40 * dom.inner_radius(domain) ** alpha
    ladder = boundary_ladder(domain, levels)
    means, ses, deltas = [], [], []
    for j, (delta, x) in enumerate(ladder):
        stats = exit_statistics(domain, x, alpha, dt, t_max, paths, seed, stream=j << 32, threads=threads)
        deltas.append(delta)
        means.append(stats.mean)
        ses.append(stats.se)
    deltas, means, ses = map(np.array, (deltas, means, ses))
    sel = slice(len(deltas) - fit_points, None)
    lx, ly = np.log(deltas[sel]), np.log(means[sel])
    w = (means[sel] / ses[sel]) ** 2
    X = np.column_stack([np.ones_like(lx), lx])
    cov = np.linalg.inv((X.T * w) @ X)
    coef = cov @ ((X.T * w) @ ly)
    return DecayProfile(deltas, means, ses, float(coef[1]), math.sqrt(cov[1, 1]))
