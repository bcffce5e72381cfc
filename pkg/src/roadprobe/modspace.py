"""Modification space: named dimensions spanning the unit hypercube.

A point in the space encodes one scene configuration (car position,
photometric settings). Every coordinate lives in the closed interval
[0, 1]; the rendering module decides what each named dimension means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, DimensionMismatch, OutOfRange

DIMENSION_NAMES = ("car_x", "car_depth", "brightness", "contrast", "saturation")
MAX_DIMS = 8


@dataclass(frozen=True)
class DimensionSpec:
    """One named axis of the modification space."""

    name: str
    index: int


@dataclass(frozen=True)
class ModificationSpace:
    """Ordered set of dimensions; the space itself is always [0, 1]^n."""

    dims: tuple[DimensionSpec, ...]

    def __post_init__(self):
        if not 1 <= len(self.dims) <= MAX_DIMS:
            raise ConfigError(f"space must have 1..{MAX_DIMS} dimensions, got {len(self.dims)}")
        names = [d.name for d in self.dims]
        for i, dim in enumerate(self.dims):
            if dim.name not in DIMENSION_NAMES:
                raise ConfigError(f"unknown dimension name {dim.name!r}; allowed: {DIMENSION_NAMES}")
            if dim.index != i:
                raise ConfigError(f"dimension indices must be contiguous from 0, got {dim.index} at position {i}")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names in {names}")
        if ("car_x" in names) != ("car_depth" in names):
            raise ConfigError("car_x and car_depth must be declared together")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "ModificationSpace":
        return cls(tuple(DimensionSpec(name, i) for i, name in enumerate(names)))

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def index_of(self, name: str) -> Optional[int]:
        """Index of a named dimension, or None when the space lacks it."""
        for dim in self.dims:
            if dim.name == name:
                return dim.index
        return None


@dataclass(frozen=True)
class ModificationPoint:
    """A validated point of the unit hypercube."""

    coords: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.coords)


def validate_point(space: ModificationSpace, coords: Sequence[float]) -> ModificationPoint:
    """Check length and bounds, returning the point on success.

    Raises DimensionMismatch when the length differs from the space
    dimension and OutOfRange (with offending index and value) when a
    coordinate falls outside the closed interval [0, 1].
    """
    coords = tuple(float(c) for c in coords)
    if len(coords) != space.n:
        raise DimensionMismatch(f"expected {space.n} coordinates, got {len(coords)}")
    for i, c in enumerate(coords):
        if not 0.0 <= c <= 1.0:
            raise OutOfRange(i, c)
    return ModificationPoint(coords)
