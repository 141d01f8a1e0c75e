"""Symmetric eigensolver, Rayleigh quotients and Richardson extrapolation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .assembly import GridOperator
from .domain import Domain


class EigenError(ArithmeticError):
    pass


MAX_QL_SWEEPS = 50


def tridiagonalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Householder reduction ``a = Q T Qᵀ`` of a symmetric matrix.

    Returns the diagonal ``d``, the sub-diagonal ``e`` (``e[0] = 0``, ``e[i]``
    couples rows ``i-1`` and ``i``) and the orthogonal ``Q``.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    q = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vnorm2 = v @ v
        if vnorm2 == 0.0:
            continue
        # two-sided reflection P A P with P = I - 2 v vᵀ / (vᵀ v)
        sub = a[k + 1 :, k + 1 :]
        p = sub @ v * (2 / vnorm2)
        kappa = (v @ p) / vnorm2
        w = p - kappa * v
        sub -= np.outer(v, w) + np.outer(w, v)
        a[k + 1 :, k] = 0.0
        a[k, k + 1 :] = 0.0
        a[k + 1, k] = a[k, k + 1] = alpha
        q[:, k + 1 :] -= np.outer(q[:, k + 1 :] @ v, v) * (2 / vnorm2)
    d = np.diag(a).copy()
    e = np.zeros(n)
    e[1:] = np.diag(a, -1)
    return d, e, q


def tridiagonal_ql(d: np.ndarray, e: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Implicitly shifted QL iteration on a symmetric tridiagonal matrix.

    ``z`` accumulates the rotations (pass the Householder ``Q`` to obtain
    eigenvectors of the original matrix).  Results are sorted ascending.
    """
    d = np.array(d, dtype=float)
    n = d.size
    e = np.append(np.array(e[1:], dtype=float), 0.0)
    z = np.array(z, dtype=float)
    eps = np.finfo(float).eps
    for l in range(n):
        sweeps = 0
        while True:
            for m in range(l, n - 1):
                if abs(e[m]) <= eps * (abs(d[m]) + abs(d[m + 1])):
                    break
            else:
                m = n - 1
            if m == l:
                break
            sweeps += 1
            if sweeps > MAX_QL_SWEEPS:
                raise EigenError(f"QL iteration did not converge for eigenvalue {l}")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            deflated = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                zi1 = z[:, i + 1].copy()
                z[:, i + 1] = s * z[:, i] + c * zi1
                z[:, i] = c * z[:, i] - s * zi1
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    order = np.argsort(d, kind="stable")
    return d[order], z[:, order]


def symmetric_eig(a: np.ndarray, method: str = "lapack") -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a dense symmetric matrix, ascending.

    ``method="householder"`` runs the in-repo reduction and QL iteration;
    ``"lapack"`` calls the same algorithm (``dsytrd`` + ``dsteqr``) through
    SciPy, and ``"lapack-dc"`` swaps in the divide-and-conquer stage.
    ``"auto"`` picks divide-and-conquer.
    """
    if method == "householder":
        d, e, q = tridiagonalize(a)
        return tridiagonal_ql(d, e, q)
    driver = {"lapack": "ev", "lapack-dc": "evd", "auto": "evd"}.get(method)
    if driver is None:
        raise ValueError(f"unknown eigensolver method {method!r}")
    return scipy.linalg.eigh(a, driver=driver, check_finite=False)


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    scale = np.abs(vectors).max(axis=0)
    first = np.argmax(np.abs(vectors) > 1e-12 * scale, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True, eq=False)
class Spectrum:
    alpha: float
    domain: Domain
    h: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    d: int = 1

    def __len__(self):
        return len(self.eigenvalues)


def eigendecompose(op: GridOperator, k: int | None = None, method: str = "auto") -> Spectrum:
    """First ``k`` eigenpairs; eigenvectors satisfy ``⟨φ_i, φ_j⟩ h^d = δ_ij``.

    With ``method="auto"`` and ``k < N`` only the requested pairs are
    computed (LAPACK ``dsyevr``), which is what makes N ~ 4000 affordable.
    """
    n = op.n
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise EigenError(f"requested {k} eigenpairs from an operator of size {n}")
    if method == "auto" and k < n:
        values, vectors = scipy.linalg.eigh(
            op.matrix, subset_by_index=(0, k - 1), driver="evr", check_finite=False
        )
    else:
        values, vectors = symmetric_eig(op.matrix, method)
    values, vectors = values[:k], _sign_fix(vectors[:, :k])
    vectors = vectors / math.sqrt(op.cell_volume())
    return Spectrum(op.alpha, op.grid.domain, op.h, values, vectors, op.d)


def rayleigh_quotient(op: GridOperator, u) -> float:
    u = np.asarray(u, dtype=float)
    denom = u @ u
    if denom == 0:
        raise EigenError("Rayleigh quotient of the zero vector")
    return float(u @ (op.matrix @ u) / denom)


@dataclass(frozen=True)
class ExtrapolatedValue:
    value: float
    observed_order: float
    inputs: tuple[tuple[float, float], ...]
    reliable: bool


def richardson(points) -> ExtrapolatedValue:
    """Extrapolate ``λ(h) = λ∞ + c h^γ`` from the three finest of ``(h, λ)`` pairs.

    ``h`` must halve between consecutive points.  When the successive
    differences vanish or change sign, or the observed order falls outside
    ``(0.2, 3)``, the finest value is returned and flagged unreliable.
    """
    pts = sorted(((float(h), float(v)) for h, v in points), key=lambda p: -p[0])
    if len(pts) < 3:
        raise EigenError(f"Richardson extrapolation needs 3 points, got {len(pts)}")
    for (h0, _), (h1, _) in zip(pts, pts[1:]):
        if not math.isclose(h0, 2 * h1, rel_tol=1e-9):
            raise EigenError(f"grid spacings must halve, got {h0} then {h1}")
    (_, coarse), (_, mid), (_, fine) = pts[-3:]
    d1, d2 = coarse - mid, mid - fine
    inputs = tuple(pts)
    if d1 == 0 and d2 == 0:
        return ExtrapolatedValue(fine, math.nan, inputs, False)
    if d2 == 0 or d1 * d2 < 0:
        return ExtrapolatedValue(fine, math.nan, inputs, False)
    ratio = d1 / d2
    order = math.log2(ratio)
    if not 0.2 < order < 3:
        return ExtrapolatedValue(fine, order, inputs, False)
    return ExtrapolatedValue(fine - d2 / (ratio - 1), order, inputs, True)


def write_spectrum_csv(path, spectrum: Spectrum) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "lambda", "h", "alpha", "domain"])
        for i, lam in enumerate(spectrum.eigenvalues, start=1):
            out.writerow([i, f"{lam:.17g}", f"{spectrum.h:.17g}", f"{spectrum.alpha:.17g}", str(spectrum.domain)])
