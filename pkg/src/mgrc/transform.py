"""Forward and inverse multilevel (hierarchical-basis) decomposition.

A node that first appears at level ``l`` stores its value minus the
multilinear interpolant of the level ``l - 1`` nodal values.  Level-0 nodes
keep their raw values.  Interpolation weights come from the grid
coordinates, so non-uniform spacing is handled exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput, ShapeMismatch
from .grid import GridHierarchy


@dataclass(eq=False)
class MultilevelCoefficients:
    values: np.ndarray
    hierarchy: GridHierarchy

    def __post_init__(self):
        if self.values.shape != self.hierarchy.grid.shape:
            raise ShapeMismatch(
                f"coefficients have shape {self.values.shape}, grid is {self.hierarchy.grid.shape}"
            )


@dataclass(frozen=True)
class _AxisStencil:
    coarse_pos: np.ndarray  # positions of the coarse nodes inside the fine index set
    left: np.ndarray        # per fine position, left coarse neighbour (position in coarse set)
    right: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    is_new: np.ndarray


def _axis_stencil(h: GridHierarchy, level: int, axis: int) -> _AxisStencil:
    fine = h.level_index_sets[level][axis]
    coarse = h.level_index_sets[level - 1][axis]
    x = h.grid.coords[axis]
    k = np.searchsorted(coarse, fine)
    kept = (k < coarse.size) & (coarse[np.minimum(k, coarse.size - 1)] == fine)
    left = np.where(kept, k, k - 1)
    right = k.copy()
    # endpoints are always coarse nodes, so new nodes have 1 <= k <= len(coarse) - 1
    xl = x[coarse[left]]
    xr = x[coarse[right]]
    xf = x[fine]
    span = np.where(kept, 1.0, xr - xl)
    w_left = np.where(kept, 1.0, (xr - xf) / span)
    w_right = np.where(kept, 0.0, (xf - xl) / span)
    return _AxisStencil(
        coarse_pos=np.flatnonzero(kept),
        left=left,
        right=right,
        w_left=w_left,
        w_right=w_right,
        is_new=~kept,
    )


def _interpolate(coarse_vals: np.ndarray, stencils: list[_AxisStencil]) -> np.ndarray:
    out = coarse_vals
    ndim = coarse_vals.ndim
    for a, st in enumerate(stencils):
        bshape = [1] * ndim
        bshape[a] = -1
        wl = st.w_left.reshape(bshape)
        wr = st.w_right.reshape(bshape)
        out = wl * np.take(out, st.left, axis=a) + wr * np.take(out, st.right, axis=a)
    return out


def _new_mask(stencils: list[_AxisStencil]) -> np.ndarray:
    ndim = len(stencils)
    mask = np.zeros([st.is_new.size for st in stencils], dtype=bool)
    for a, st in enumerate(stencils):
        bshape = [1] * ndim
        bshape[a] = -1
        mask |= st.is_new.reshape(bshape)
    return mask


def _sweep(work: np.ndarray, h: GridHierarchy, level: int, sign: float) -> None:
    stencils = [_axis_stencil(h, level, a) for a in range(h.ndims)]
    if level == h.nlevels:
        sub = work
        index = None
    else:
        index = np.ix_(*h.level_index_sets[level])
        sub = work[index]
    coarse_vals = sub[np.ix_(*(st.coarse_pos for st in stencils))]
    interp = _interpolate(coarse_vals, stencils)
    mask = _new_mask(stencils)
    if sign < 0:
        updated = np.where(mask, sub - interp, sub)
    else:
        updated = np.where(mask, sub + interp, sub)
    if index is None:
        work[...] = updated
    else:
        work[index] = updated


def forward(u: np.ndarray, h: GridHierarchy) -> MultilevelCoefficients:
    u = np.asarray(u)
    if u.shape != h.grid.shape:
        raise ShapeMismatch(f"array shape {u.shape} does not match grid {h.grid.shape}")
    if not np.all(np.isfinite(u)):
        raise NonFiniteInput("input contains NaN or Inf")
    work = np.array(u, dtype=np.float64, copy=True)
    for level in range(h.nlevels, 0, -1):
        _sweep(work, h, level, -1.0)
    return MultilevelCoefficients(work, h)


def inverse(c: MultilevelCoefficients) -> np.ndarray:
    h = c.hierarchy
    if c.values.shape != h.grid.shape:
        raise ShapeMismatch(f"coefficient shape {c.values.shape} does not match grid {h.grid.shape}")
    work = np.array(c.values, dtype=np.float64, copy=True)
    for level in range(1, h.nlevels + 1):
        _sweep(work, h, level, 1.0)
    return work
