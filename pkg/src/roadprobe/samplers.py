"""Point samplers and coverage measures for the modification space.

Three generators are provided: seeded uniform random, the Halton
sequence (radical inverses in the first n primes), and rank-1 Korobov
lattices. All three are index-addressable, so a campaign can be resumed
or parallelized without replaying the stream.

The module also computes the local discrepancy of an origin-anchored
box, the exact star discrepancy of a point set (enumeration over
critical boxes, practical for n <= 3), and grid-cell coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, NotCoprime, TooLarge
from .modspace import ModificationPoint

PRIMES = (2, 3, 5, 7, 11, 13, 17, 19)

EXACT_STAR_MAX_N = 3
EXACT_STAR_MAX_M = 4096
COVERAGE_MAX_CELLS = 2 ** 20


@dataclass(frozen=True)
class PointSet:
    """Immutable (m, n) array of points inside [0, 1]^n."""

    points: np.ndarray

    def __post_init__(self):
        arr = np.array(self.points, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ConfigError(f"point set must be 2-D (m, n), got shape {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ConfigError("point set has coordinates outside [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "points", arr)

    @classmethod
    def from_points(cls, pts: Sequence, n: Optional[int] = None) -> "PointSet":
        rows = [p.coords if isinstance(p, ModificationPoint) else tuple(p) for p in pts]
        if not rows:
            return cls(np.empty((0, n if n is not None else 0), dtype=np.float64))
        return cls(np.array(rows, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i: int) -> ModificationPoint:
        return ModificationPoint(tuple(float(c) for c in self.points[i]))


PointsLike = Union[PointSet, np.ndarray, Sequence]


def _as_array(points: PointsLike) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.points
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def radical_inverse(index: int, base: int) -> float:
    """Reflect the base-b digits of index about the radix point."""
    inv = 0.0
    denom = 1.0
    while index > 0:
        index, digit = divmod(index, base)
        denom *= base
        inv += digit / denom
    return inv


def halton_at(index: int, n: int) -> ModificationPoint:
    """Halton point at a 1-based index (index 0, the origin, is skipped).

    Coordinate j is the radical inverse of the index in the (j+1)-th
    prime base. Stateless: any index can be computed directly.
    """
    if index < 1:
        raise ConfigError(f"Halton index must be >= 1, got {index}")
    if not 1 <= n <= len(PRIMES):
        raise TooLarge(f"Halton supports 1..{len(PRIMES)} dimensions, got {n}")
    return ModificationPoint(tuple(radical_inverse(index, PRIMES[j]) for j in range(n)))


def korobov_vector(m_points: int, n: int, korobov_a: int) -> tuple[int, ...]:
    """Generating vector z = (1, a, a^2 mod m, ..., a^(n-1) mod m)."""
    if m_points < 2:
        raise ConfigError(f"lattice needs m_points >= 2, got {m_points}")
    if korobov_a < 1:
        raise ConfigError(f"korobov_a must be positive, got {korobov_a}")
    if n >= 2 and math.gcd(korobov_a, m_points) != 1:
        raise NotCoprime(f"korobov_a={korobov_a} shares a factor with m_points={m_points}")
    return tuple(pow(korobov_a, j, m_points) for j in range(n))


def lattice_points(m_points: int, n: int, korobov_a: int = 3) -> PointSet:
    """Rank-1 lattice: point i is frac(i * z / m) for the Korobov vector z."""
    z = np.array(korobov_vector(m_points, n, korobov_a), dtype=np.int64)
    i = np.arange(m_points, dtype=np.int64)[:, None]
    return PointSet((i * z[None, :]) % m_points / float(m_points))


@dataclass(frozen=True)
class SamplerSpec:
    """Declarative sampler choice, as written in the campaign config."""

    kind: str
    seed: int = 0
    m_points: Optional[int] = None
    korobov_a: int = 3
    skip: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "halton", "lattice"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.skip < 0:
            raise ConfigError(f"skip must be >= 0, got {self.skip}")
        if self.kind == "lattice" and self.m_points is None:
            raise ConfigError("lattice sampler requires m_points")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "uniform":
            d["seed"] = self.seed
        if self.kind == "halton":
            d["skip"] = self.skip
        if self.kind == "lattice":
            d["m_points"] = self.m_points
            d["korobov_a"] = self.korobov_a
        return d


class HaltonSampler:
    """Index-addressable Halton stream; trial i maps to index i + 1 + skip."""

    algorithm = "halton"

    def __init__(self, n: int, skip: int = 0):
        if skip < 0:
            raise ConfigError(f"skip must be >= 0, got {skip}")
        self.n = n
        self.skip = skip
        self.size: Optional[int] = None

    def point_at(self, i: int) -> ModificationPoint:
        return halton_at(i + 1 + self.skip, self.n)


class LatticeSampler:
    """Finite rank-1 lattice stream of exactly m_points points."""

    algorithm = "korobov-lattice"

    def __init__(self, n: int, m_points: int, korobov_a: int = 3):
        self.n = n
        self.m_points = m_points
        self.z = korobov_vector(m_points, n, korobov_a)
        self.size: Optional[int] = m_points

    def point_at(self, i: int) -> ModificationPoint:
        if not 0 <= i < self.m_points:
            raise ConfigError(f"lattice index {i} outside 0..{self.m_points - 1}")
        return ModificationPoint(tuple((i * zj) % self.m_points / self.m_points for zj in self.z))


class UniformSampler:
    """Seeded uniform stream; each index gets its own PCG64 substream.

    Spawn-keying the generator by the index keeps the stream
    index-addressable, so resumed and parallel campaigns reproduce the
    sequential run bit for bit. (spawn_key, unlike tuple entropy,
    cannot collide with other uses of the same seed.)
    """

    algorithm = "pcg64-spawn-indexed"

    def __init__(self, n: int, seed: int = 0):
        self.n = n
        self.seed = seed
        self.size: Optional[int] = None

    def point_at(self, i: int) -> ModificationPoint:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(self.seed, spawn_key=(i,))))
        return ModificationPoint(tuple(float(c) for c in rng.random(self.n)))


def build_sampler(spec: SamplerSpec, n: int):
    if spec.kind == "halton":
        return HaltonSampler(n, skip=spec.skip)
    if spec.kind == "lattice":
        return LatticeSampler(n, spec.m_points, spec.korobov_a)
    return UniformSampler(n, seed=spec.seed)


def discrepancy(corner: Sequence[float], points: PointsLike) -> float:
    """Local discrepancy of the half-open box [0, corner).

    Absolute difference between the fraction of points inside the box
    and the box volume.
    """
    X = _as_array(points)
    q = np.asarray(corner, dtype=np.float64).reshape(-1)
    if q.shape[0] != X.shape[1]:
        raise ConfigError(f"corner has {q.shape[0]} coordinates, points have {X.shape[1]}")
    if q.min() < 0.0 or q.max() > 1.0:
        raise ConfigError("box corner outside [0, 1]^n")
    m = X.shape[0]
    if m == 0:
        raise ConfigError("discrepancy of an empty point set is undefined")
    count = int(np.all(X < q[None, :], axis=1).sum())
    vol = float(np.prod(q))
    return abs(count / m - vol)


def star_discrepancy(points: PointsLike) -> float:
    """Exact star discrepancy by enumeration over critical boxes.

    Candidate corners take each coordinate from the point coordinates
    plus 1.0; for every corner both the open-count (strict <) and the
    closed-count (<=) variants are evaluated, which captures the
    supremum including its boundary limits. Enumeration cost grows as
    O(m^n), hence the n <= 3, m <= 4096 guard.
    """
    X = _as_array(points)
    m, n = X.shape
    if m == 0:
        raise ConfigError("star discrepancy of an empty point set is undefined")
    if n > EXACT_STAR_MAX_N or m > EXACT_STAR_MAX_M:
        raise TooLarge(
            f"exact star discrepancy limited to n <= {EXACT_STAR_MAX_N}, m <= {EXACT_STAR_MAX_M}; "
            f"got n={n}, m={m} (use star_discrepancy_estimate instead)"
        )
    cands = [np.unique(np.concatenate([X[:, j], [1.0]])) for j in range(n)]
    last = n - 1
    c_last = cands[last]
    best = 0.0

    def recurse(dim: int, lt_mask: np.ndarray, le_mask: np.ndarray, vol_prefix: float):
        nonlocal best
        if dim == last:
            lt_coords = np.sort(X[lt_mask, dim])
            le_coords = np.sort(X[le_mask, dim])
            open_cnt = np.searchsorted(lt_coords, c_last, side="left")
            closed_cnt = np.searchsorted(le_coords, c_last, side="right")
            vols = vol_prefix * c_last
            best = max(
                best,
                float(np.max(vols - open_cnt / m)),
                float(np.max(closed_cnt / m - vols)),
            )
            return
        col = X[:, dim]
        for q in cands[dim]:
            recurse(dim + 1, lt_mask & (col < q), le_mask & (col <= q), vol_prefix * q)

    recurse(0, np.ones(m, dtype=bool), np.ones(m, dtype=bool), 1.0)
    return best


def star_discrepancy_estimate(points: PointsLike, resolution: int = 64) -> float:
    """Approximate star discrepancy on a uniform candidate grid.

    Lower bound on the exact value; intended as the fallback when the
    input exceeds the exact algorithm's limits. The gap to the exact
    supremum is at most n / resolution.
    """
    X = _as_array(points)
    m, n = X.shape
    if m == 0:
        raise ConfigError("star discrepancy of an empty point set is undefined")
    if resolution < 1:
        raise ConfigError(f"resolution must be >= 1, got {resolution}")
    grid = np.arange(1, resolution + 1, dtype=np.float64) / resolution
    best = 0.0

    def recurse(dim: int, lt_mask: np.ndarray, le_mask: np.ndarray, vol_prefix: float):
        nonlocal best
        if dim == n - 1:
            lt_coords = np.sort(X[lt_mask, dim])
            le_coords = np.sort(X[le_mask, dim])
            open_cnt = np.searchsorted(lt_coords, grid, side="left")
            closed_cnt = np.searchsorted(le_coords, grid, side="right")
            vols = vol_prefix * grid
            best = max(
                best,
                float(np.max(vols - open_cnt / m)),
                float(np.max(closed_cnt / m - vols)),
            )
            return
        col = X[:, dim]
        for q in grid:
            recurse(dim + 1, lt_mask & (col < q), le_mask & (col <= q), vol_prefix * q)

    recurse(0, np.ones(m, dtype=bool), np.ones(m, dtype=bool), 1.0)
    return best


def grid_coverage(points: PointsLike, bins_per_dim: int) -> float:
    """Fraction of the bins_per_dim^n equal cells holding at least one point."""
    X = _as_array(points)
    m, n = X.shape
    if bins_per_dim < 1:
        raise ConfigError(f"bins_per_dim must be >= 1, got {bins_per_dim}")
    total = bins_per_dim ** n
    if total > COVERAGE_MAX_CELLS:
        raise TooLarge(f"{bins_per_dim}^{n} cells exceed the {COVERAGE_MAX_CELLS} limit")
    if m == 0:
        return 0.0
    cells = np.minimum((X * bins_per_dim).astype(np.int64), bins_per_dim - 1)
    occupied = np.unique(cells, axis=0).shape[0]
    return occupied / total
