"""Tensor-product grids and their dyadic level hierarchy.

Each axis coarsens independently: from an axis of ``n`` nodes the next
coarser level keeps every other node (positions 0, 2, 4, ...) and, when
``n`` is even, the last node as well, so ``n -> n // 2 + 1``.  Endpoints are
therefore present on every level.  An axis that has reached two nodes stops
coarsening and repeats its index set on all coarser levels.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidShape, LevelOutOfRange, TooManyDims

MAX_DIMS = 4


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Node counts and coordinates of a structured tensor-product grid."""

    shape: tuple[int, ...]
    coords: tuple[np.ndarray, ...]

    def __init__(self, shape: Sequence[int], coords: Optional[Sequence[Sequence[float]]] = None):
        shape = tuple(int(n) for n in shape)
        if len(shape) == 0:
            raise InvalidShape("grid needs at least one axis")
        if len(shape) > MAX_DIMS:
            raise TooManyDims(f"{len(shape)} axes given, at most {MAX_DIMS} supported")
        if any(n < 2 for n in shape):
            raise InvalidShape(f"every axis needs at least 2 nodes, got {shape}")
        if coords is None:
            axes = tuple(np.arange(n, dtype=np.float64) for n in shape)
        else:
            if len(coords) != len(shape):
                raise InvalidShape("one coordinate array per axis is required")
            axes = []
            for n, c in zip(shape, coords):
                c = np.array(c, dtype=np.float64)
                if c.shape != (n,):
                    raise InvalidShape(f"expected {n} coordinates, got {c.size}")
                if not np.all(np.isfinite(c)) or np.any(np.diff(c) <= 0):
                    raise InvalidShape("coordinates must be finite and strictly increasing")
                c.setflags(write=False)
                axes.append(c)
            axes = tuple(axes)
        for c in axes:
            c.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "coords", axes)

    @property
    def ndims(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def uniform(self) -> tuple[bool, ...]:
        out = []
        for c in self.coords:
            d = np.diff(c)
            out.append(bool(np.allclose(d, d[0], rtol=1e-12, atol=0.0)))
        return tuple(out)

    @cached_property
    def has_default_coords(self) -> bool:
        return all(np.array_equal(c, np.arange(n)) for n, c in zip(self.shape, self.coords))

    def subgrid(self, ranges: Sequence[tuple[int, int]]) -> "TensorGrid":
        """Grid restricted to the half-open index ``ranges`` of every axis."""
        return TensorGrid(
            [hi - lo for lo, hi in ranges],
            [c[lo:hi] for c, (lo, hi) in zip(self.coords, ranges)],
        )


def _coarsen(idx: np.ndarray) -> np.ndarray:
    n = idx.size
    keep = idx[::2]
    if n % 2 == 0:
        keep = np.append(keep, idx[-1])
    return keep


@dataclass(frozen=True, eq=False)
class GridHierarchy:
    """Nested node sets of a grid, level 0 coarsest, level ``nlevels`` finest.

    ``level_index_sets[l][a]`` holds the sorted finest-grid indices present on
    axis ``a`` at level ``l``.
    """

    grid: TensorGrid
    nlevels: int
    level_index_sets: tuple[tuple[np.ndarray, ...], ...]

    @property
    def ndims(self) -> int:
        return self.grid.ndims

    @property
    def level_shapes(self) -> list[tuple[int, ...]]:
        return [tuple(ix.size for ix in level) for level in self.level_index_sets]

    @cached_property
    def axis_levels(self) -> tuple[np.ndarray, ...]:
        """Per axis, the level at which each finest-grid index first appears."""
        out = []
        for a, n in enumerate(self.grid.shape):
            lv = np.full(n, -1, dtype=np.int16)
            for l in range(self.nlevels, -1, -1):
                lv[self.level_index_sets[l][a]] = l
            lv.setflags(write=False)
            out.append(lv)
        return tuple(out)

    @cached_property
    def level_map(self) -> np.ndarray:
        """Level tag of every node: the coarsest level containing it."""
        grids = np.meshgrid(*self.axis_levels, indexing="ij")
        tags = np.maximum.reduce(grids) if len(grids) > 1 else grids[0].copy()
        tags = tags.astype(np.int16)
        tags.setflags(write=False)
        return tags

    @cached_property
    def level_positions(self) -> tuple[np.ndarray, ...]:
        """Flat (row-major) indices of the nodes tagged with each level, ascending."""
        flat = self.level_map.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.nlevels + 1)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        out = []
        for l in range(self.nlevels + 1):
            pos = np.ascontiguousarray(order[bounds[l]:bounds[l + 1]])
            pos.setflags(write=False)
            out.append(pos)
        return tuple(out)

    @property
    def level_counts(self) -> list[int]:
        return [int(p.size) for p in self.level_positions]

    def to_dict(self) -> dict:
        return {
            "shape": list(self.grid.shape),
            "coords": [c.tolist() for c in self.grid.coords],
            "nlevels": self.nlevels,
            "level_index_sets": [[ix.tolist() for ix in level] for level in self.level_index_sets],
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def build_hierarchy(grid: TensorGrid) -> GridHierarchy:
    levels = [tuple(np.arange(n, dtype=np.int64) for n in grid.shape)]
    while True:
        current = levels[-1]
        if all(ix.size <= 2 for ix in current):
            break
        coarser = tuple(ix if ix.size <= 2 else _coarsen(ix) for ix in current)
        if all(c.size == ix.size for c, ix in zip(coarser, current)):
            break
        levels.append(coarser)
    levels.reverse()
    for level in levels:
        for ix in level:
            ix.setflags(write=False)
    return GridHierarchy(grid=grid, nlevels=len(levels) - 1, level_index_sets=tuple(levels))


def new_nodes(h: GridHierarchy, level: int) -> list[tuple[int, ...]]:
    """Multi-indices present at ``level`` but not at ``level - 1``."""
    if not 1 <= level <= h.nlevels:
        raise LevelOutOfRange(f"level {level} outside 1..{h.nlevels}")
    fine = h.level_index_sets[level]
    coarse = [set(ix.tolist()) for ix in h.level_index_sets[level - 1]]
    return [
        node
        for node in itertools.product(*(ix.tolist() for ix in fine))
        if any(i not in c for i, c in zip(node, coarse))
    ]


def level_nodes(h: GridHierarchy, level: int) -> list[tuple[int, ...]]:
    """All multi-indices present at ``level``."""
    if not 0 <= level <= h.nlevels:
        raise LevelOutOfRange(f"level {level} outside 0..{h.nlevels}")
    return list(itertools.product(*(ix.tolist() for ix in h.level_index_sets[level])))
