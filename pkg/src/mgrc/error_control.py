"""Error specifications, per-level bin widths and error estimators.

Bounds in the max norm rest on one fact about the hierarchical basis: the
basis function of a node new at level ``l`` is the level-``l`` tensor hat,
which is nonnegative and, together with its same-level neighbours, sums to
one.  At any point at most ``2**d`` hats of a level overlap, so a level
whose coefficient errors are all below ``r`` contributes at most
``2**d * r`` to the reconstruction error (``r`` for level 0, whose
coefficients are nodal values).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateData, InvalidState, ShapeMismatch
from .grid import GridHierarchy
from .transform import MultilevelCoefficients, inverse


class Mode(enum.IntEnum):
    ABS = 0
    REL = 1


class Norm(enum.IntEnum):
    INF = 0
    S = 1


@dataclass(frozen=True)
class ErrorSpec:
    """Tolerance ``tol`` measured in the norm selected by ``s``.

    ``s = inf`` selects the max norm; a finite ``s`` selects the
    level-weighted s-norm, with ``s = 0`` being the plain RMS error.
    """

    tol: float
    s: float = math.inf
    mode: Mode = Mode.ABS

    def __post_init__(self):
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ValueError(f"tolerance must be positive and finite, got {self.tol}")
        if math.isnan(self.s) or self.s == -math.inf:
            raise ValueError(f"invalid smoothness parameter {self.s}")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def norm(self) -> Norm:
        return Norm.INF if math.isinf(self.s) else Norm.S

    def with_tol(self, tol: float, mode: Mode = Mode.ABS) -> "ErrorSpec":
        return ErrorSpec(tol, self.s, mode)


@dataclass(frozen=True)
class ErrorEstimate:
    value: float
    norm: Norm
    certified: bool


def rms(u: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(np.sqrt(np.mean(np.square(u))))


def normalizer(spec: ErrorSpec, vmin: float, vmax: float, root_mean_square: float) -> float:
    """Scale applied to a relative tolerance, from summary statistics of the data."""
    scale = vmax - vmin if spec.norm is Norm.INF else root_mean_square
    if not scale > 0:
        what = "range" if spec.norm is Norm.INF else "RMS"
        raise DegenerateData(f"data {what} is zero; relative tolerance is meaningless")
    return scale


def absolute_tolerance(spec: ErrorSpec, u: np.ndarray) -> float:
    if spec.mode is Mode.ABS:
        return spec.tol
    u = np.asarray(u)
    if u.size == 0:
        raise DegenerateData("empty array")
    return spec.tol * normalizer(spec, float(u.min()), float(u.max()), rms(u))


@dataclass(frozen=True)
class LevelBudget:
    bin_widths: tuple[float, ...]

    def __post_init__(self):
        if any(not w > 0 for w in self.bin_widths):
            raise ValueError("bin widths must be positive")

    def halved(self) -> "LevelBudget":
        return LevelBudget(tuple(w / 2 for w in self.bin_widths))


def initial_bin_widths(tol_abs: float, spec: ErrorSpec, h: GridHierarchy) -> LevelBudget:
    if not tol_abs > 0:
        raise ValueError("absolute tolerance must be positive")
    L, d = h.nlevels, h.ndims
    if spec.norm is Norm.INF:
        # level 0 error <= delta/2, each finer level <= 2**d * delta/2
        w = 2.0 * tol_abs / (1 + L * 2**d)
        return LevelBudget((w,) * (L + 1))
    denom = math.sqrt((L + 1) * 2**d)
    return LevelBudget(
        tuple(2.0 * tol_abs * 2.0 ** (spec.s * (L - l)) / denom for l in range(L + 1))
    )


def _weighted_level_norm(per_level_sq: Sequence[float], s: float, L: int, n: int) -> float:
    total = sum(2.0 ** (2 * s * (l - L)) * sq for l, sq in enumerate(per_level_sq))
    return math.sqrt(total / n)


def error_norm(e: np.ndarray, spec: ErrorSpec) -> float:
    """Max or RMS norm of an error field (the weighted s-norm needs coefficients)."""
    if spec.norm is Norm.INF:
        return float(np.max(np.abs(e))) if e.size else 0.0
    return rms(e)


def achieved_error(residuals: MultilevelCoefficients, spec: ErrorSpec, h: GridHierarchy) -> ErrorEstimate:
    """Exact error of a reconstruction whose coefficients are off by ``residuals``."""
    if residuals.values.shape != h.grid.shape:
        raise ShapeMismatch("residual array does not match the hierarchy")
    if spec.norm is Norm.INF or spec.s == 0:
        e = inverse(MultilevelCoefficients(residuals.values, h))
        return ErrorEstimate(error_norm(e, spec), spec.norm, True)
    flat = residuals.values.ravel()
    per_level = [float(np.sum(np.square(flat[pos]))) for pos in h.level_positions]
    value = _weighted_level_norm(per_level, spec.s, h.nlevels, h.grid.size)
    return ErrorEstimate(value, spec.norm, False)


def residual_bounds(fetched: Sequence[int], exponents: Sequence[int | None], planes: int) -> list[float]:
    """Per-level bound on truncated-coefficient error after ``fetched`` planes.

    ``None`` exponents mark levels whose coefficients are all zero.
    """
    out = []
    for b, e in zip(fetched, exponents):
        if b < 0 or b > planes:
            raise InvalidState(f"{b} planes fetched, store has {planes}")
        if e is None:
            out.append(0.0)
        elif b == 0:
            out.append(math.ldexp(1.0, e + 1))
        else:
            out.append(math.ldexp(1.0, e - b + 1))
    return out


def segment_bound(
    fetched: Sequence[int],
    exponents: Sequence[int | None],
    counts: Sequence[int],
    ndims: int,
    planes: int,
    s: float,
) -> float:
    """Estimator value for a retrieval state, in the norm selected by ``s``."""
    rho = residual_bounds(fetched, exponents, planes)
    if math.isinf(s):
        return rho[0] + 2**ndims * sum(rho[1:])
    L = len(rho) - 1
    n = sum(counts)
    return _weighted_level_norm([r * r * c for r, c in zip(rho, counts)], s, L, n)


def segment_estimator(
    fetched: Sequence[int],
    exponents: Sequence[int | None],
    spec: ErrorSpec,
    h: GridHierarchy,
    planes: int = 32,
) -> ErrorEstimate:
    if len(fetched) != h.nlevels + 1 or len(exponents) != h.nlevels + 1:
        raise InvalidState("need one plane count and one exponent per level")
    value = segment_bound(fetched, exponents, h.level_counts, h.ndims, planes, spec.s)
    return ErrorEstimate(value, spec.norm, spec.norm is Norm.INF)
