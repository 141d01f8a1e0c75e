"""Executable checks of eigenvalue inequalities across the stability index.

Everything here consumes extrapolated eigenvalues (an :class:`AlphaSweep`)
or, for the matrix-level statements, assembled operators directly.  The
``α = 2`` endpoint is never discretized: it is the classical Dirichlet
Laplacian (no factor 1/2), whose eigenvalues come from
:func:`exact_laplacian_eigs`.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import optimize, special

from . import domain as dom
from .assembly import assemble, check_alpha
from .eigen import ExtrapolatedValue, Spectrum, richardson


class LawError(ValueError):
    pass


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True, eq=False)
class AlphaSweep:
    domain: dom.Domain
    alphas: np.ndarray
    k: int
    values: np.ndarray  # (len(alphas), k) extrapolated
    reliable: np.ndarray  # (len(alphas), k) bool
    orders: np.ndarray  # (len(alphas), k)
    h_schedule: tuple[float, ...]
    raw: np.ndarray = field(repr=False)  # (len(alphas), len(h_schedule), k)

    def row(self, alpha: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.alphas - alpha)))
        if not math.isclose(self.alphas[i], alpha, abs_tol=1e-12):
            raise KeyError(alpha)
        return self.values[i]


def lowest_eigenvalues(matrix: np.ndarray, k: int) -> np.ndarray:
    k = min(k, matrix.shape[0])
    return scipy.linalg.eigh(
        matrix, eigvals_only=True, subset_by_index=(0, k - 1), driver="evr", check_finite=False
    )


def _raw_eigs(domain, alpha, h, k):
    try:
        op = assemble(dom.rasterize(domain, h), alpha)
        return lowest_eigenvalues(op.matrix, k)
    except Exception as exc:
        raise LawError(f"sweep failed at alpha={alpha:g}, h={h:g}: {exc}") from exc


def alpha_sweep(domain, alphas, k: int, h_schedule, threads: int = 1) -> AlphaSweep:
    """Extrapolated ``λ_1..λ_k`` on ``domain`` for each ``α``."""
    alphas = np.asarray(sorted(float(a) for a in alphas), dtype=float)
    for a in alphas:
        check_alpha(a)
    hs = tuple(sorted((float(h) for h in h_schedule), reverse=True))
    if len(hs) < 3:
        raise LawError("h schedule needs at least 3 refinements")
    jobs = [(a, h) for a in alphas for h in hs]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda job: _raw_eigs(domain, job[0], job[1], k), jobs))
    else:
        results = [_raw_eigs(domain, a, h, k) for a, h in jobs]
    ncells = min(len(r) for r in results) if results else k
    if ncells < k:
        raise LawError(f"coarsest grid has only {ncells} cells, fewer than k={k}")
    raw = np.array(results, dtype=float).reshape(len(alphas), len(hs), k)
    values = np.zeros((len(alphas), k))
    reliable = np.zeros((len(alphas), k), dtype=bool)
    orders = np.full((len(alphas), k), math.nan)
    for a in range(len(alphas)):
        for i in range(k):
            ext = richardson(list(zip(hs, raw[a, :, i])))
            values[a, i], reliable[a, i], orders[a, i] = ext.value, ext.reliable, ext.observed_order
    return AlphaSweep(domain, alphas, k, values, reliable, orders, hs, raw)


def write_sweep_csv(path, sweep: AlphaSweep) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["domain", "alpha", "i", "lambda", "order", "reliable", "h", "raw"])
        spec = str(sweep.domain)
        hs = ";".join(f"{h:.17g}" for h in sweep.h_schedule)
        for a, alpha in enumerate(sweep.alphas):
            for i in range(sweep.k):
                out.writerow(
                    [
                        spec,
                        f"{alpha:.17g}",
                        i + 1,
                        f"{sweep.values[a, i]:.17g}",
                        f"{sweep.orders[a, i]:.17g}",
                        int(sweep.reliable[a, i]),
                        hs,
                        ";".join(f"{v:.17g}" for v in sweep.raw[a, :, i]),
                    ]
                )


def read_sweep_csv(path) -> AlphaSweep:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise LawError(f"{path}: empty sweep table")
    specs = {r["domain"] for r in rows}
    if len(specs) != 1:
        raise LawError(f"{path}: sweep mixes domains {sorted(specs)}")
    domain = dom.parse_domain(specs.pop())
    alphas = sorted({float(r["alpha"]) for r in rows})
    k = max(int(r["i"]) for r in rows)
    hs = tuple(float(v) for v in rows[0]["h"].split(";") if v)
    values = np.full((len(alphas), k), math.nan)
    orders = np.full((len(alphas), k), math.nan)
    reliable = np.zeros((len(alphas), k), dtype=bool)
    raw = np.full((len(alphas), len(hs), k), math.nan)
    index = {a: j for j, a in enumerate(alphas)}
    for r in rows:
        a, i = index[float(r["alpha"])], int(r["i"]) - 1
        values[a, i] = float(r["lambda"])
        orders[a, i] = float(r["order"])
        reliable[a, i] = bool(int(r["reliable"]))
        raw[a, :, i] = [float(v) for v in r["raw"].split(";") if v]
    return AlphaSweep(domain, np.array(alphas), k, values, reliable, orders, hs, raw)


def synthetic_sweep(domain, alphas, values) -> AlphaSweep:
    """Sweep built from given eigenvalues, for exercising the checks."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    alphas = np.asarray(alphas, dtype=float)
    k = values.shape[1]
    return AlphaSweep(
        domain,
        alphas,
        k,
        values,
        np.ones_like(values, dtype=bool),
        np.full_like(values, math.nan),
        (),
        np.zeros((len(alphas), 0, k)),
    )


# ---------------------------------------------------------------- reports


@dataclass
class LawReport:
    law: str
    tol: float
    instances: list[dict] = field(default_factory=list)

    def add(self, margin: float, **provenance):
        self.instances.append({**provenance, "margin": float(margin), "pass": bool(margin >= -self.tol)})

    @property
    def worst_margin(self) -> float:
        return min((inst["margin"] for inst in self.instances), default=math.inf)

    @property
    def passed(self) -> bool:
        return all(inst["pass"] for inst in self.instances)

    def jsonl(self) -> list[str]:
        lines = []
        for inst in self.instances:
            prov = {key: v for key, v in inst.items() if key not in ("margin", "pass")}
            lines.append(
                json.dumps({"law": self.law, "instance": prov, "margin": inst["margin"], "pass": inst["pass"]})
            )
        return lines

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.law}: {len(self.instances)} instances, worst margin {self.worst_margin:+.3e}"


# ---------------------------------------------------------------- analytic α = 2


def bessel_j0_series(x: float, terms: int = 60) -> float:
    """``J_0`` from its ascending series; adequate for ``|x| < 10``."""
    total, term = 0.0, 1.0
    q = -(x * x) / 4
    for m in range(terms):
        total += term
        term *= q / ((m + 1) ** 2)
    return total


def bessel_zeros(nu: int, upto: float) -> list[float]:
    """Positive zeros of ``J_nu`` below ``upto``, bracketed on a fine scan."""
    xs = np.linspace(1e-6, upto, max(200, int(upto * 20)))
    vals = special.jv(nu, xs)
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(optimize.brentq(lambda x: special.jv(nu, x), a, b, xtol=1e-15, rtol=1e-15))
    return roots


def exact_laplacian_eigs(domain: dom.Domain, k: int) -> np.ndarray:
    """First ``k`` Dirichlet eigenvalues of ``-Δ`` with multiplicity."""
    s = domain.shape
    if isinstance(s, dom.Interval) or (domain.d == 1 and isinstance(s, (dom.Box, dom.Ball))):
        length = domain.measure
        return (np.arange(1, k + 1) * math.pi / length) ** 2
    if isinstance(s, dom.Box):
        l1, l2 = np.subtract(s.hi, s.lo)
        mmax = k + 1
        m = np.arange(1, mmax + 1)
        vals = np.sort((math.pi**2 * ((m[:, None] / l1) ** 2 + (m[None, :] / l2) ** 2)).ravel())
        return vals[:k]
    if isinstance(s, dom.Ball):
        upto = 2.0 * (math.sqrt(k) + 2) * math.pi / 2 + 5
        while True:
            found = []
            for nu in range(int(upto) + 1):
                mult = 1 if nu == 0 else 2
                for j in bessel_zeros(nu, upto):
                    found.extend([j] * mult)
            found.sort()
            if len(found) >= k:
                return (np.array(found[:k]) / s.radius) ** 2
            upto *= 1.5
    raise LawError(f"no closed-form Laplacian spectrum for {domain}")


def convex_lower_bound(alpha: float, radius: float) -> float:
    """Lower bound on ``λ_1`` of a convex domain with inner radius ``radius``."""
    if not radius > 0:
        raise LawError("inner radius must be positive")
    return (
        2**alpha
        * math.gamma(1 + alpha / 2)
        * math.gamma((1 + alpha) / 2)
        / (math.gamma(0.5) * radius**alpha)
    )


def subordination_spectrum(values, alpha: float, beta: float) -> np.ndarray:
    """Eigenvalues ``(λ_i)^{α/β}`` of the subordinated operator ``H_β^{α/β}``."""
    if not 0 < alpha <= beta <= 2:
        raise LawError(f"need 0 < alpha <= beta <= 2, got alpha={alpha}, beta={beta}")
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise LawError("subordination needs positive eigenvalues")
    return values ** (alpha / beta)


# ---------------------------------------------------------------- laws


def _is_convex_primitive(domain: dom.Domain) -> bool:
    return isinstance(domain.shape, (dom.Interval, dom.Box, dom.Ball))


def check_power_monotonicity(sweep: AlphaSweep, tol: float = 5e-3, mu=None) -> LawReport:
    """``(λ_i^α)^{1/α} <= (λ_i^β)^{1/β}`` for every sampled ``α < β``.

    With ``mu`` the ``β = 2`` row is taken from the Laplacian eigenvalues.
    """
    report = LawReport("power_monotonicity", tol)
    rows = [(float(a), sweep.values[j]) for j, a in enumerate(sweep.alphas)]
    if mu is not None:
        rows.append((2.0, np.asarray(mu, dtype=float)[: sweep.k]))
    spec = str(sweep.domain)
    for p, (alpha, lo) in enumerate(rows):
        for beta, hi in rows[p + 1 :]:
            for i in range(min(len(lo), len(hi))):
                left = lo[i] ** (1 / alpha)
                right = hi[i] ** (1 / beta)
                report.add(1 - left / right, alpha=alpha, beta=beta, i=i + 1, domain=spec)
    return report


def check_upper_bound(sweep: AlphaSweep, mu, tol: float = 5e-3) -> LawReport:
    """``λ_i^α <= μ_i^{α/2}`` for every sampled ``α`` and ``i``."""
    mu = np.asarray(mu, dtype=float)
    if len(mu) < sweep.k:
        raise LawError(f"need {sweep.k} Laplacian eigenvalues, got {len(mu)}")
    report = LawReport("upper_bound", tol)
    for j, alpha in enumerate(sweep.alphas):
        for i in range(sweep.k):
            bound = mu[i] ** (alpha / 2)
            report.add(1 - sweep.values[j, i] / bound, alpha=float(alpha), beta=2.0, i=i + 1, domain=str(sweep.domain))
    return report


def check_sandwich(sweep: AlphaSweep, mu, tol: float = 5e-3) -> LawReport:
    """Convex lower bound ``<= λ_1^α <= μ_1^{α/2}``; margin is the smaller side."""
    report = LawReport("sandwich", tol)
    radius = dom.inner_radius(sweep.domain)
    for j, alpha in enumerate(sweep.alphas):
        lam = sweep.values[j, 0]
        lower = convex_lower_bound(alpha, radius)
        upper = mu[0] ** (alpha / 2)
        margin = min(lam / lower - 1, 1 - lam / upper)
        report.add(margin, alpha=float(alpha), i=1, domain=str(sweep.domain), lower=lower, upper=upper, value=lam)
    return report


@dataclass
class ContinuityProfile:
    alphas: np.ndarray
    increments: np.ndarray  # (len(alphas) - 1, k)
    max_jump: float
    median: float
    flagged: bool
    increasing: np.ndarray  # per i: strictly increasing in α

    def report(self, factor: float = 5.0) -> LawReport:
        rep = LawReport("continuity", 0.0)
        if self.increments.size == 0:
            return rep
        for i in range(self.increments.shape[1]):
            inc = np.abs(self.increments[:, i])
            med = np.median(inc)
            margin = 1 - inc.max() / (factor * med) if med > 0 else (0.0 if inc.max() == 0 else -math.inf)
            rep.add(margin, i=i + 1, max_increment=float(inc.max()), median_increment=float(med))
        return rep


def continuity_profile(sweep: AlphaSweep, factor: float = 5.0) -> ContinuityProfile:
    """Largest step of each ``α ↦ λ_i`` curve against ``factor`` × its median step."""
    alphas = np.asarray(sweep.alphas)
    if len(alphas) < 2:
        empty = np.zeros((0, sweep.k))
        return ContinuityProfile(alphas, empty, 0.0, 0.0, False, np.ones(sweep.k, bool))
    steps = np.diff(alphas)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-12):
        raise LawError("continuity profile needs equally spaced alphas")
    inc = np.diff(sweep.values, axis=0)
    mag = np.abs(inc)
    med = np.median(mag, axis=0)
    flagged = bool(np.any(mag.max(axis=0) > factor * med))
    return ContinuityProfile(alphas, inc, float(mag.max()), float(np.median(mag)), flagged, np.all(inc > 0, axis=0))


def _first_eigs(domain, alpha, h_schedule, k=1, normalize_volume=False):
    pts = []
    for h in sorted(h_schedule, reverse=True):
        grid = dom.rasterize(domain, h)
        lam = lowest_eigenvalues(assemble(grid, alpha).matrix, k)
        if normalize_volume:
            # scaling law: rescale the pixelated domain back to the true measure
            lam = lam * (grid.n * h**domain.d / domain.measure) ** (alpha / domain.d)
        pts.append((h, lam))
    return [richardson([(h, lam[i]) for h, lam in pts]) for i in range(k)]


def check_faber_krahn(domain, alpha: float, h_schedule, tol: float = 0.0) -> LawReport:
    """``λ_1(D*) <= λ_1(D)`` with ``D*`` the ball of equal measure.

    Raw eigenvalues are volume-normalized before extrapolation so the
    pixel-area jitter of a rasterized ball does not enter the comparison.
    """
    report = LawReport("faber_krahn", tol)
    ball = dom.schwarz_ball(domain)
    lam_d = _first_eigs(domain, alpha, h_schedule, normalize_volume=True)[0]
    lam_b = _first_eigs(ball, alpha, h_schedule, normalize_volume=True)[0]
    report.add(
        1 - lam_b.value / lam_d.value,
        alpha=alpha,
        i=1,
        domain=str(domain),
        ball=dom.to_spec(ball),
        value=lam_d.value,
        ball_value=lam_b.value,
        reliable=bool(lam_d.reliable and lam_b.reliable),
    )
    return report


def check_domain_monotonicity(inner, outer, alpha: float, h: float, k: int = 10, tol: float = 1e-10) -> LawReport:
    """Matrix-level ``λ_k(outer) <= λ_k(inner)`` for nested rasterizations."""
    g_in, g_out = dom.rasterize(inner, h), dom.rasterize(outer, h)
    cells_out = {tuple(c) for c in g_out.lattice.tolist()}
    if not all(tuple(c) in cells_out for c in g_in.lattice.tolist()):
        raise LawError("inner grid cells are not a subset of the outer grid cells")
    k = min(k, g_in.n)
    lam_in = lowest_eigenvalues(assemble(g_in, alpha).matrix, k)
    lam_out = lowest_eigenvalues(assemble(g_out, alpha).matrix, k)
    report = LawReport("domain_monotonicity", tol)
    for i in range(k):
        report.add(
            1 - lam_out[i] / lam_in[i],
            alpha=alpha,
            i=i + 1,
            inner=str(inner),
            outer=str(outer),
            inner_value=float(lam_in[i]),
            outer_value=float(lam_out[i]),
        )
    return report


@dataclass(frozen=True)
class WeylFit:
    exponent: float
    count: int


def weyl_fit(spectrum) -> WeylFit:
    """Slope of ``log N(λ)`` against ``log λ`` over the middle third.

    Pass only the resolved part of a discrete spectrum (e.g. the lowest
    tenth of the pairs): the upper eigenvalues follow the lattice symbol,
    not ``|ξ|^α``, and flatten the count.
    """
    values = np.sort(np.asarray(getattr(spectrum, "eigenvalues", spectrum), dtype=float))
    n = len(values)
    if n < 30:
        raise LawError(f"Weyl fit needs at least 30 eigenvalues, got {n}")
    lo, hi = n // 3, 2 * n // 3
    counts = np.arange(1, n + 1)
    slope = np.polyfit(np.log(values[lo:hi]), np.log(counts[lo:hi]), 1)[0]
    return WeylFit(float(slope), hi - lo)


LAWS = ("power_monotonicity", "upper_bound", "sandwich", "continuity")


def verify_sweep(sweep: AlphaSweep, laws=LAWS, tol: float = 5e-3) -> list[LawReport]:
    """Run the requested sweep-level laws; Laplacian data only where available."""
    unknown = set(laws) - set(LAWS)
    if unknown:
        raise LawError(f"unknown laws {sorted(unknown)}")
    try:
        mu = exact_laplacian_eigs(sweep.domain, sweep.k)
    except LawError:
        mu = None
    reports = []
    if "power_monotonicity" in laws:
        reports.append(check_power_monotonicity(sweep, tol, mu))
    if "upper_bound" in laws and mu is not None:
        reports.append(check_upper_bound(sweep, mu, tol))
    if "sandwich" in laws and mu is not None and _is_convex_primitive(sweep.domain):
        reports.append(check_sandwich(sweep, mu, tol))
    if "continuity" in laws and len(sweep.alphas) >= 3:
        steps = np.diff(sweep.alphas)
        if np.allclose(steps, steps[0], rtol=1e-6):
            reports.append(continuity_profile(sweep).report())
    return reports
