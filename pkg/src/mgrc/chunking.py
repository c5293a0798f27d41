"""Out-of-core block planning and the multi-block container file.

Multi-block file layout (little-endian)::

    u32 block_count | u64 offset[block_count] | container bytes ...

Offsets are absolute.  When there is more than one block every container
carries its coordinate slice, which is how a reader recovers the global
shape and each block's position.
"""
from __future__ import annotations

import math
import os
import re
import struct
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .errors import BudgetTooSmall, CorruptStream

MIN_BLOCK_EDGE = 17

_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kmgt]?)(i?)b?\s*$", re.IGNORECASE)


def parse_size(text: str) -> int:
    """Parse sizes like ``1048576``, ``512KiB``, ``1MiB`` or ``2M`` (binary units)."""
    m = _SIZE_RE.match(str(text))
    if not m:
        raise ValueError(f"cannot parse size {text!r}")
    number, unit, _ = m.groups()
    power = "kmgt".find(unit.lower()) + 1 if unit else 0
    return int(float(number) * 1024**power)


def split_range(n: int, parts: int) -> list[tuple[int, int]]:
    """Near-equal consecutive ranges, larger ones first."""
    bounds = np.cumsum([0] + [n // parts + (1 if i < n % parts else 0) for i in range(parts)])
    return [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class ChunkPlan:
    shape: tuple[int, ...]
    itemsize: int
    budget: int
    axis_ranges: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.axis_ranges)

    @property
    def blocks(self) -> list[tuple[tuple[int, int], ...]]:
        """Per-block index ranges, in row-major scan order of the block grid."""
        return list(product(*self.axis_ranges))

    def __len__(self) -> int:
        return math.prod(self.counts)


def plan_chunks(shape: Sequence[int], dtype, budget: int) -> ChunkPlan:
    """Split the slowest-varying axes until each block fits ``budget`` bytes."""
    shape = tuple(int(n) for n in shape)
    itemsize = np.dtype(dtype).itemsize
    floor = MIN_BLOCK_EDGE ** len(shape) * itemsize
    if budget < floor:
        raise BudgetTooSmall(f"budget {budget} B is below one {MIN_BLOCK_EDGE}^{len(shape)} block ({floor} B)")
    block = list(shape)
    parts = [1] * len(shape)
    for a, n in enumerate(shape):
        nbytes = math.prod(block) * itemsize
        if nbytes <= budget:
            break
        rest = nbytes // block[a]
        slab = budget // rest
        if slab >= 2:
            parts[a] = -(-n // slab)
        else:
            # even a two-node slab is too big: cut this axis to edge ~17 and move on
            parts[a] = max(1, -(-n // MIN_BLOCK_EDGE))
        parts[a] = max(1, min(parts[a], n // 2))  # blocks need >= 2 nodes per axis
        block[a] = -(-n // parts[a])
    if math.prod(block) * itemsize > budget:
        raise BudgetTooSmall(f"cannot split {shape} into blocks of at most {budget} B")
    ranges = tuple(tuple(split_range(n, k)) for n, k in zip(shape, parts))
    return ChunkPlan(shape, itemsize, int(budget), ranges)


def whole_array_plan(shape: Sequence[int], dtype) -> ChunkPlan:
    shape = tuple(int(n) for n in shape)
    return ChunkPlan(shape, np.dtype(dtype).itemsize, 0, tuple(((0, n),) for n in shape))


def write_blocks(path, blobs: Sequence[bytes]) -> None:
    header = 4 + 8 * len(blobs)
    offsets = []
    pos = header
    for b in blobs:
        offsets.append(pos)
        pos += len(b)
    with open(path, "wb") as f:
        f.write(struct.pack(f"<I{len(blobs)}Q", len(blobs), *offsets))
        for b in blobs:
            f.write(b)


def read_blocks(buf: bytes) -> list[bytes]:
    if len(buf) < 4:
        raise CorruptStream("block file truncated")
    (count,) = struct.unpack_from("<I", buf, 0)
    header = 4 + 8 * count
    if count == 0 or len(buf) < header:
        raise CorruptStream("block table truncated")
    offsets = list(struct.unpack_from(f"<{count}Q", buf, 4)) + [len(buf)]
    if offsets[0] != header or any(b < a for a, b in zip(offsets, offsets[1:])):
        raise CorruptStream("block offsets out of order")
    return [buf[a:b] for a, b in zip(offsets, offsets[1:])]


def thread_count() -> int:
    raw = os.environ.get("MGRC_THREADS", "").strip()
    n = int(raw) if raw else 0
    if n < 0:
        raise ValueError("MGRC_THREADS must be >= 0")
    return n if n > 0 else min(4, os.cpu_count() or 1)
