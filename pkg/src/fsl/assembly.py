"""Dense matrices discretizing the killed fractional Laplacian ``(-Δ)^{α/2}``.

The operator acts on functions vanishing outside the domain,

    H u(x) = C(d, α) ∫ (u(x) - u(x + y)) |y|^{-d-α} dy,

with ``C(d, α)`` chosen so that the Fourier symbol is exactly ``|ξ|^α``.
Every entry is ``C(d, α) h^{-α}`` times a number that depends only on the
lattice offset, so assembling ``c D`` at spacing ``c h`` multiplies the
matrix by ``c^{-α}`` (up to rounding).

1-D weights.  With ``Ψ'' (r) = r^{-1-α}`` the near field ``|y| <= h`` uses the
quadratic interpolant of ``u(x+y) + u(x-y) - 2u(x)`` (weight
``h^{-α}/(2-α)`` on the second difference) and the far field integrates the
piecewise-linear interpolant exactly against the kernel, giving second
differences of ``Ψ`` as weights.  The hat sum is extended over the whole
zero-extended exterior, so every row carries the total jump rate
``2 (h^{-α}/(2-α) + h^{-α}/α)`` on its diagonal.

2-D weights.  Cells at lattice distance ``> h`` get midpoint weights
``h^2 |x_j - x_i|^{-2-α}``; the four nearest neighbours get the 5-point
coefficient chosen so that quadratics are reproduced exactly.  That
coefficient and the total far-field rate are lattice zeta values of ``Z^2``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy import integrate, special

from .domain import Grid

MAX_CELLS = 5000
ALPHA_LOG_BRANCH = 1e-9


class AssemblyError(ValueError):
    pass


class SolveError(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise AssemblyError(f"stability index must lie in (0, 2), got {alpha}")
    return alpha


@dataclass(frozen=True)
class KernelConstant:
    d: int
    alpha: float
    value: float

    def __float__(self):
        return self.value


def kernel_constant(d: int, alpha: float) -> KernelConstant:
    """``C(d,α) = α 2^{α-1} Γ((d+α)/2) / (π^{d/2} Γ(1-α/2))``."""
    alpha = check_alpha(alpha)
    if d < 1:
        raise AssemblyError(f"dimension must be positive, got {d}")
    value = (
        alpha
        * 2.0 ** (alpha - 1)
        * math.gamma((d + alpha) / 2)
        / (math.pi ** (d / 2) * math.gamma(1 - alpha / 2))
    )
    return KernelConstant(d, alpha, value)


# ---------------------------------------------------------------- 1-D weights


def _expm1_ratio(z: float, x):
    """``expm1(z x) / z``, continuous through ``z = 0``."""
    if abs(z) < ALPHA_LOG_BRANCH:
        return x
    return np.expm1(z * x) / z


def _psi_step(alpha: float, m, delta):
    """``Ψ(m (1 + δ)) - Ψ(m)`` at unit spacing, free of cancellation near α = 1."""
    m = np.asarray(m, dtype=float)
    return -(m ** (1 - alpha)) * _expm1_ratio(1 - alpha, np.log1p(delta)) / alpha


def _far_weights(alpha: float, m: np.ndarray) -> np.ndarray:
    w = np.empty_like(m)
    one = m == 1
    w[one] = (1 - _expm1_ratio(1 - alpha, math.log(2.0))) / alpha
    rest = m[~one]
    w[~one] = _psi_step(alpha, rest, 1 / rest) + _psi_step(alpha, rest, -1 / rest)
    return w


def hat_weights(alpha: float, mmax: int) -> np.ndarray:
    """Far-field weights ``w̃_m`` for ``m = 0..mmax`` at unit spacing (``w̃_0 = 0``).

    Multiply by ``h^{-α}`` for spacing ``h``.
    """
    alpha = check_alpha(alpha)
    w = np.zeros(mmax + 1)
    if mmax >= 1:
        w[1:] = _far_weights(alpha, np.arange(1, mmax + 1, dtype=float))
    return w


def hat_tail(alpha: float, m) -> np.ndarray:
    """``Σ_{j >= m} w̃_j`` at unit spacing, in closed form (telescoping)."""
    m = np.asarray(m, dtype=float)
    first = np.full(m.shape, 1 / alpha)
    safe = np.maximum(m - 1, 1.0)
    rest = -_psi_step(alpha, safe, 1 / safe)
    return np.where(m <= 1, first, rest)


def near_weight_1d(alpha: float) -> float:
    return 1 / (2 - alpha)


# ---------------------------------------------------------------- 2-D weights


@lru_cache(maxsize=256)
def lattice_zeta(s: float) -> float:
    """``Σ_{k ∈ Z^2 \\ 0} |k|^{-s}``, analytically continued below ``s = 2``.

    Uses ``4 ζ(s/2) β(s/2)`` with the Dirichlet beta from Hurwitz zetas.
    """
    import mpmath as mp

    half = mp.mpf(s) / 2
    beta = mp.power(4, -half) * (mp.zeta(half, 0.25) - mp.zeta(half, 0.75))
    return float(4 * mp.zeta(half) * beta)


def near_weight_2d(alpha: float) -> float:
    """5-point coefficient (unit spacing, kernel constant divided out)."""
    return 1 - lattice_zeta(alpha) / 4


def total_far_rate_2d(alpha: float) -> float:
    """Sum of midpoint weights over all lattice offsets with ``|k| > 1``."""
    return lattice_zeta(2 + alpha) - 4


# ---------------------------------------------------------------- operators


@dataclass(frozen=True, eq=False)
class GridOperator:
    grid: Grid
    alpha: float
    matrix: np.ndarray
    killing: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def d(self) -> int:
        return self.grid.d

    def cell_volume(self) -> float:
        return self.grid.h**self.grid.d


def _check_grid(grid: Grid, d: int):
    if grid.n == 0:
        raise AssemblyError("grid has no cells")
    if grid.d != d:
        raise AssemblyError(f"expected a {d}-D grid, got {grid.d}-D")
    if grid.n > MAX_CELLS:
        raise AssemblyError(f"{grid.n} cells exceed the dense limit of {MAX_CELLS}")


def assemble_1d(grid: Grid, alpha: float) -> GridOperator:
    alpha = check_alpha(alpha)
    _check_grid(grid, 1)
    k = grid.lattice[:, 0]
    scale = kernel_constant(1, alpha).value * grid.h ** (-alpha)
    span = int(k.max() - k.min())
    w = hat_weights(alpha, max(span, 1))
    w[1] += near_weight_1d(alpha)
    offsets = np.abs(k[:, None] - k[None, :])
    matrix = -scale * w[offsets]
    diag = scale * 2 * (near_weight_1d(alpha) + 1 / alpha)
    np.fill_diagonal(matrix, diag)
    # exterior jump rates, summed directly rather than by cancellation
    if span == grid.n - 1:
        left = k - k.min() + 1
        right = k.max() - k + 1
        edge = (left == 1).astype(float) + (right == 1)
        killing = scale * (near_weight_1d(alpha) * edge + hat_tail(alpha, left) + hat_tail(alpha, right))
    else:
        killing = matrix.sum(axis=1)
    return GridOperator(grid, alpha, matrix, killing)


def assemble_2d(grid: Grid, alpha: float) -> GridOperator:
    alpha = check_alpha(alpha)
    _check_grid(grid, 2)
    k = grid.lattice
    scale = kernel_constant(2, alpha).value * grid.h ** (-alpha)
    dx = k[:, None, 0] - k[None, :, 0]
    dy = k[:, None, 1] - k[None, :, 1]
    r2 = (dx * dx + dy * dy).astype(float)
    del dx, dy
    with np.errstate(divide="ignore"):
        weights = r2 ** (-(2 + alpha) / 2)
    weights[r2 == 1] = near_weight_2d(alpha)
    np.fill_diagonal(weights, 0.0)
    matrix = -scale * weights
    del weights, r2
    diag = scale * (4 * near_weight_2d(alpha) + total_far_rate_2d(alpha))
    np.fill_diagonal(matrix, diag)
    killing = matrix.sum(axis=1)
    return GridOperator(grid, alpha, matrix, killing)


def assemble(grid: Grid, alpha: float) -> GridOperator:
    if grid.d == 1:
        return assemble_1d(grid, alpha)
    if grid.d == 2:
        return assemble_2d(grid, alpha)
    raise AssemblyError(f"only 1-D and 2-D grids are supported, got d={grid.d}")


def apply(op: GridOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (op.n,):
        raise AssemblyError(f"vector of length {u.shape} does not match operator size {op.n}")
    return op.matrix @ u


def solve_linear(op: GridOperator, rhs, tol: float = 1e-10) -> np.ndarray:
    """Solve ``H u = rhs`` by Cholesky with one step of iterative refinement.

    With ``rhs = 1`` the solution approximates the mean exit time
    ``E_x[τ_D]`` at the cell centres.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (op.n,):
        raise AssemblyError(f"right-hand side of length {rhs.shape} does not match {op.n}")
    norm = np.linalg.norm(rhs)
    if norm == 0:
        return np.zeros(op.n)
    factor = scipy.linalg.cho_factor(op.matrix, lower=True)
    u = scipy.linalg.cho_solve(factor, rhs)
    u += scipy.linalg.cho_solve(factor, rhs - op.matrix @ u)
    residual = np.linalg.norm(op.matrix @ u - rhs) / norm
    if not residual <= tol:
        raise SolveError("Cholesky solve did not reach the requested residual", residual)
    return u


# ---------------------------------------------------------------- symbol oracle


def symbol_1d(alpha: float, h: float, xi: float, truncation: float) -> float:
    """Discrete free-space operator applied to ``cos(ξx)``, read off at ``x = 0``.

    The function is zero-extended beyond ``truncation``.
    """
    c = kernel_constant(1, alpha).value * h ** (-alpha)
    mmax = max(int(math.floor(truncation / h)), 1)
    inside = 0.0
    if xi != 0:
        theta = xi * h
        inside = near_weight_1d(alpha) * (2 - 2 * math.cos(theta))
        partials = []
        chunk = 1 << 20
        for start in range(1, mmax + 1, chunk):
            m = np.arange(start, min(start + chunk, mmax + 1), dtype=float)
            w = _far_weights(alpha, m)
            partials.append(math.fsum(w * (2 - 2 * np.cos(theta * m))))
        inside += math.fsum(partials)
    outside = 2 * float(hat_tail(alpha, mmax + 1))
    return c * (inside + outside)


def symbol_2d(alpha: float, h: float, xi: float, truncation: float, window: int = 512) -> float:
    """2-D analogue of :func:`symbol_1d` with ``ξ`` along the first axis.

    Offsets inside the disc inscribed in the ``window``×``window`` block are
    summed explicitly; between that disc and ``truncation`` the midpoint sum
    is replaced by the radial integral it approximates.
    """
    const = kernel_constant(2, alpha).value
    half = window // 2
    k = np.arange(-half, half + 1)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    r2 = (kx * kx + ky * ky).astype(float)
    far = (r2 > 1) & (r2 <= half * half)
    w = np.zeros_like(r2)
    w[far] = r2[far] ** (-(2 + alpha) / 2)
    theta = xi * h
    s = near_weight_2d(alpha) * (2 - 2 * math.cos(theta)) + math.fsum((w * (1 - np.cos(theta * kx))).ravel())
    s *= const * h ** (-alpha)
    r_in = half * h
    if truncation > r_in:
        f = lambda r: (1 - special.j0(xi * r)) * r ** (-1 - alpha)
        s += const * 2 * math.pi * integrate.quad(f, r_in, truncation, limit=2000)[0]
    s += const * 2 * math.pi * max(truncation, r_in) ** (-alpha) / alpha
    return s


def symbol_error(
    alpha: float, h: float, xi: float, truncation: float, d: int = 1, window: int = 512
) -> float:
    """Relative deviation of the discrete symbol from ``|ξ|^α``.

    For ``ξ = 0`` the absolute output on constants is returned instead; it
    equals the truncation tail.
    """
    alpha = check_alpha(alpha)
    if d == 1:
        value = symbol_1d(alpha, h, xi, truncation)
    elif d == 2:
        value = symbol_2d(alpha, h, xi, truncation, window)
    else:
        raise AssemblyError(f"symbol check supports d = 1, 2, got {d}")
    if xi == 0:
        return abs(value)
    return abs(value / abs(xi) ** alpha - 1)


# ---------------------------------------------------------------- binary format

_MAGIC = b"FSL1"
_HEADER = struct.Struct("<4siqdd")  # magic, d, N, alpha, h


def write_operator(path, op: GridOperator) -> None:
    n = op.n
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, op.d, n, op.alpha, op.h))
        rows, cols = np.tril_indices(n)
        fh.write(np.ascontiguousarray(op.matrix[rows, cols], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(op.killing, dtype="<f8").tobytes())


@dataclass(frozen=True, eq=False)
class StoredOperator:
    d: int
    alpha: float
    h: float
    matrix: np.ndarray
    killing: np.ndarray


def read_operator(path) -> StoredOperator:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, d, n, alpha, h = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise AssemblyError(f"{path}: bad magic {magic!r}")
    ntri = n * (n + 1) // 2
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != ntri + n:
        raise AssemblyError(f"{path}: expected {ntri + n} values, found {body.size}")
    matrix = np.zeros((n, n))
    rows, cols = np.tril_indices(n)
    matrix[rows, cols] = body[:ntri]
    matrix[cols, rows] = body[:ntri]
    return StoredOperator(d, alpha, h, matrix, body[ntri:].copy())
