"""Domains of finite measure and their cell-centred lattice rasterizations.

All lattices share the global origin: cell centres sit at ``(k + 1/2) * h``
for integer multi-indices ``k``.  A cell belongs to a grid when its centre
lies strictly inside the domain, so a rasterized domain is always an inner
approximation, and nested domains rasterize to nested cell sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    """Raised for degenerate shapes, bad spec strings and empty grids."""


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or not self.a < self.b:
            raise DomainError(f"interval needs a < b, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or len(self.lo) not in (1, 2):
            raise DomainError("box corners must both have 1 or 2 coordinates")
        if not all(l < u for l, u in zip(self.lo, self.hi)):
            raise DomainError(f"box needs lo < hi componentwise, got {self.lo}, {self.hi}")


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if len(self.center) not in (1, 2):
            raise DomainError("ball centre must have 1 or 2 coordinates")
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")


@dataclass(frozen=True, eq=False)
class Raster:
    """Boolean indicator on a 2-D lattice; ``mask[row, col]`` with row = y index.

    Cell ``(i, j)`` of the mask has centre ``origin + (j + 1/2, i + 1/2) * h``.
    """

    h: float
    mask: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise DomainError("raster mask must be 2-D")
        if not self.h > 0:
            raise DomainError("raster cell size must be positive")
        if not mask.any():
            raise DomainError("raster mask is empty")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)


Shape = Interval | Box | Ball | Raster


@dataclass(frozen=True)
class Domain:
    shape: Shape
    d: int
    label: str = field(default="", compare=False)

    @property
    def measure(self) -> float:
        s = self.shape
        if isinstance(s, Interval):
            return s.b - s.a
        if isinstance(s, Box):
            return float(np.prod(np.subtract(s.hi, s.lo)))
        if isinstance(s, Ball):
            return 2 * s.radius if self.d == 1 else math.pi * s.radius**2
        return float(s.mask.sum()) * s.h**2

    @property
    def diameter(self) -> float:
        s = self.shape
        if isinstance(s, Interval):
            return s.b - s.a
        if isinstance(s, Box):
            return float(np.hypot.reduce(np.subtract(s.hi, s.lo))) if self.d == 2 else s.hi[0] - s.lo[0]
        if isinstance(s, Ball):
            return 2 * s.radius
        ii, jj = np.nonzero(s.mask)
        return s.h * math.hypot(jj.max() - jj.min() + 1, ii.max() - ii.min() + 1)

    def contains(self, x) -> np.ndarray:
        """Vectorised strict membership test; ``x`` has shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        s = self.shape
        if isinstance(s, Interval):
            return (x[..., 0] > s.a) & (x[..., 0] < s.b)
        if isinstance(s, Box):
            return np.all((x > np.asarray(s.lo)) & (x < np.asarray(s.hi)), axis=-1)
        if isinstance(s, Ball):
            return np.sum((x - np.asarray(s.center)) ** 2, axis=-1) < s.radius**2
        # nearest-neighbour lookup on the indicator
        rel = (x - np.asarray(s.origin)) / s.h
        j = np.floor(rel[..., 0]).astype(np.int64)
        i = np.floor(rel[..., 1]).astype(np.int64)
        ny, nx = s.mask.shape
        ok = (i >= 0) & (i < ny) & (j >= 0) & (j < nx)
        out = np.zeros(ok.shape, dtype=bool)
        out[ok] = s.mask[i[ok], j[ok]]
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.shape
        if isinstance(s, Interval):
            return np.array([s.a]), np.array([s.b])
        if isinstance(s, Box):
            return np.array(s.lo, float), np.array(s.hi, float)
        if isinstance(s, Ball):
            c = np.array(s.center, float)
            return c - s.radius, c + s.radius
        ny, nx = s.mask.shape
        o = np.array(s.origin, float)
        return o, o + s.h * np.array([nx, ny])

    def scaled(self, c: float) -> "Domain":
        """The dilation ``c * D`` about the origin."""
        s = self.shape
        if isinstance(s, Interval):
            shape = Interval(c * s.a, c * s.b)
        elif isinstance(s, Box):
            shape = Box(tuple(c * v for v in s.lo), tuple(c * v for v in s.hi))
        elif isinstance(s, Ball):
            shape = Ball(tuple(c * v for v in s.center), c * s.radius)
        else:
            shape = Raster(c * s.h, s.mask, (c * s.origin[0], c * s.origin[1]))
        return Domain(shape, self.d)

    def __str__(self):
        return self.label or to_spec(self)


@dataclass(frozen=True, eq=False)
class Grid:
    """Interior cells of a domain on the lattice of spacing ``h``.

    ``lattice`` holds integer multi-indices ``k`` (centre ``(k + 1/2) h``) in
    lexicographic order; ``centers`` the matching coordinates.
    """

    h: float
    lattice: np.ndarray
    centers: np.ndarray
    domain: Domain

    @property
    def n(self) -> int:
        return len(self.lattice)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(k): i for i, k in enumerate(self.lattice.tolist())}


def make_domain(kind: str, *params, d: int | None = None) -> Domain:
    """Build a validated domain.

    >>> make_domain("interval", -1, 1).measure
    2.0
    """
    kind = kind.lower()
    if kind == "interval":
        a, b = map(float, params)
        return Domain(Interval(a, b), 1)
    if kind == "box":
        if len(params) == 2 and all(np.ndim(p) == 1 for p in params):
            lo, hi = (tuple(map(float, p)) for p in params)
        else:
            vals = list(map(float, params))
            if len(vals) % 2:
                raise DomainError("box needs lo and hi with equal length")
            half = len(vals) // 2
            lo, hi = tuple(vals[:half]), tuple(vals[half:])
        return Domain(Box(lo, hi), len(lo))
    if kind == "ball":
        if len(params) == 2 and np.ndim(params[0]) == 1:
            center, r = tuple(map(float, params[0])), float(params[1])
        else:
            vals = list(map(float, params))
            center, r = tuple(vals[:-1]), vals[-1]
        if d is not None and len(center) != d:
            raise DomainError(f"ball centre has {len(center)} coordinates, expected {d}")
        return Domain(Ball(center, r), len(center))
    if kind == "raster":
        h, mask = params[0], params[1]
        origin = tuple(params[2]) if len(params) > 2 else (0.0, 0.0)
        return Domain(Raster(float(h), np.asarray(mask, bool), origin), 2)
    raise DomainError(f"unknown domain kind {kind!r}")


def _floats(text: str, spec: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise DomainError(f"malformed number in domain spec {spec!r}") from None


def parse_domain(spec: str) -> Domain:
    """Parse ``interval:a,b``, ``box:x0,y0,x1,y1``, ``ball:cx,cy,r`` or
    ``raster:path.pgm,h``."""
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise DomainError(f"domain spec {spec!r} lacks a ':'")
    kind = kind.strip().lower()
    if kind == "raster":
        path, _, h = rest.rpartition(",")
        if not path:
            raise DomainError(f"raster spec {spec!r} must be raster:path.pgm,h")
        mask = read_pgm(path) != 0
        # image row 0 is the top edge; flip so row index grows with y
        dom = make_domain("raster", _floats(h, spec)[0], mask[::-1])
    elif kind == "interval":
        vals = _floats(rest, spec)
        if len(vals) != 2:
            raise DomainError(f"interval spec {spec!r} needs 2 numbers")
        dom = make_domain("interval", *vals)
    elif kind == "box":
        vals = _floats(rest, spec)
        if len(vals) not in (2, 4):
            raise DomainError(f"box spec {spec!r} needs 2 or 4 numbers")
        dom = make_domain("box", *vals)
    elif kind == "ball":
        vals = _floats(rest, spec)
        if len(vals) not in (2, 3):
            raise DomainError(f"ball spec {spec!r} needs centre coordinates and radius")
        dom = make_domain("ball", *vals)
    else:
        raise DomainError(f"unknown domain kind {kind!r} in {spec!r}")
    return Domain(dom.shape, dom.d, label=spec)


def to_spec(domain: Domain) -> str:
    s = domain.shape
    fmt = lambda vals: ",".join(f"{v:.17g}" for v in vals)
    if isinstance(s, Interval):
        return f"interval:{fmt((s.a, s.b))}"
    if isinstance(s, Box):
        return f"box:{fmt(s.lo + s.hi)}"
    if isinstance(s, Ball):
        return f"ball:{fmt(s.center + (s.radius,))}"
    return f"raster:<{s.mask.shape[1]}x{s.mask.shape[0]}>,{s.h:.17g}"


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM image into a uint8/uint16 array."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DomainError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return pixels.reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(image.tobytes())


def rasterize(domain: Domain, h: float) -> Grid:
    """Cells of the global ``h``-lattice whose centres lie strictly inside ``domain``."""
    if not h > 0:
        raise DomainError(f"grid spacing must be positive, got {h}")
    lo, hi = domain.bounds()
    kmin = np.floor(lo / h - 0.5).astype(np.int64) - 1
    kmax = np.ceil(hi / h - 0.5).astype(np.int64) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(kmin, kmax)]
    mesh = np.meshgrid(*axes, indexing="ij")
    lattice = np.stack([m.ravel() for m in mesh], axis=-1)
    centers = (lattice + 0.5) * h
    inside = domain.contains(centers)
    if not inside.any():
        raise DomainError(f"no cell centre of the h={h:g} lattice lies inside {domain}")
    lattice, centers = lattice[inside], centers[inside]
    return Grid(h, lattice, centers, domain)


def _raster_distance(s: Raster) -> np.ndarray:
    from scipy.ndimage import distance_transform_edt

    padded = np.pad(s.mask, 1)
    # distance from a cell centre to the nearest outside centre, less half a cell
    dist = distance_transform_edt(padded)[1:-1, 1:-1] - 0.5
    return np.where(s.mask, dist * s.h, 0.0)


def inner_radius(domain: Domain) -> float:
    s = domain.shape
    if isinstance(s, Interval):
        return (s.b - s.a) / 2
    if isinstance(s, Box):
        return float(np.min(np.subtract(s.hi, s.lo))) / 2
    if isinstance(s, Ball):
        return s.radius
    # lower bound: best cell-centre clearance on the raster
    return float(_raster_distance(s).max())


def schwarz_ball(domain: Domain) -> Domain:
    """Ball centred at the origin with the same measure as ``domain``."""
    m = domain.measure
    if domain.d == 1:
        return Domain(Interval(-m / 2, m / 2), 1)
    return Domain(Ball((0.0, 0.0), math.sqrt(m / math.pi)), 2)


def boundary_distance(domain: Domain, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not domain.contains(x):
        raise DomainError(f"point {x.tolist()} lies outside {domain}")
    s = domain.shape
    if isinstance(s, Interval):
        return float(min(x[0] - s.a, s.b - x[0]))
    if isinstance(s, Box):
        return float(np.min(np.minimum(x - np.asarray(s.lo), np.asarray(s.hi) - x)))
    if isinstance(s, Ball):
        return float(s.radius - np.linalg.norm(x - np.asarray(s.center)))
    rel = (x - np.asarray(s.origin)) / s.h
    j, i = int(rel[0]), int(rel[1])
    return float(_raster_distance(s)[i, j])
