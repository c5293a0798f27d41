"""Linear quantization of multilevel coefficients with per-level bin widths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .error_control import LevelBudget
from .errors import NonFiniteInput, Overflow, ShapeMismatch
from .grid import GridHierarchy
from .transform import MultilevelCoefficients

# |q| must stay below 2**63 so zigzag mapping fits in 64 bits
_QMAX = float(2**63)
_PRIMARY_MAX = 2**31 - 1


@dataclass(eq=False)
class QuantizedCoefficients:
    qvalues: np.ndarray  # int64, grid shape
    budget: LevelBudget
    hierarchy: GridHierarchy
    residuals: np.ndarray | None = None  # coefficient - q * delta, writer side only

    @property
    def outlier_count(self) -> int:
        """Values outside the 32-bit range (they cost 5+ varint bytes)."""
        return int(np.count_nonzero(np.abs(self.qvalues) > _PRIMARY_MAX))


def bin_width_field(budget: LevelBudget, h: GridHierarchy) -> np.ndarray:
    widths = np.asarray(budget.bin_widths, dtype=np.float64)
    if widths.size != h.nlevels + 1:
        raise ShapeMismatch(f"{widths.size} bin widths for {h.nlevels + 1} levels")
    return widths[h.level_map]


def quantize(c: MultilevelCoefficients, budget: LevelBudget) -> QuantizedCoefficients:
    h = c.hierarchy
    delta = bin_width_field(budget, h)
    if not np.all(np.isfinite(c.values)):
        raise NonFiniteInput("coefficients contain NaN or Inf")
    with np.errstate(over="ignore"):
        q = np.rint(c.values / delta)  # round half to even
    if q.size and np.max(np.abs(q)) >= _QMAX:
        raise Overflow("quantized coefficient exceeds 63-bit range; tolerance too small for the data scale")
    residuals = c.values - q * delta
    return QuantizedCoefficients(q.astype(np.int64), budget, h, residuals)


def dequantize(q: QuantizedCoefficients) -> MultilevelCoefficients:
    delta = bin_width_field(q.budget, q.hierarchy)
    return MultilevelCoefficients(q.qvalues.astype(np.float64) * delta, q.hierarchy)
