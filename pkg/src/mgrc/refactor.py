"""Bitplane refactoring with greedy progressive retrieval.

Coefficients of each level are scaled by a per-level power of two
``2**e_l`` (the smallest one bounding the level's magnitudes) and truncated
to ``B`` fractional bits.  Bitplane ``p`` of level ``l`` (``p = 0`` most
significant) forms one segment; plane 0 interleaves each coefficient's sign
bit in front of its magnitude bit.  Because truncation only ever rounds
toward zero, fetching ``b`` planes of a level leaves every coefficient of
that level within ``2**(e_l - b + 1)`` of its true value.

Store layout on disk::

    manifest.json        UTF-8 JSON, sorted keys
    l{level}_b{plane}.bin  u32 crc32(payload) | u64 raw bit count | codec-2 payload
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lossless
from .error_control import ErrorEstimate, ErrorSpec, Mode, Norm, normalizer, rms, segment_bound
from .errors import (
    ChecksumMismatch,
    CorruptStream,
    InvalidState,
    NonFiniteInput,
    PlaneCountOutOfRange,
    PrefixViolation,
    ShapeMismatch,
    UnsatisfiableTolerance,
)
from .grid import GridHierarchy, TensorGrid, build_hierarchy
from .transform import MultilevelCoefficients, forward, inverse

DEFAULT_PLANES = 32
MIN_PLANES = 8
MAX_PLANES = 60
STORE_FORMAT = "MGRS"
STORE_VERSION = 1
MANIFEST_NAME = "manifest.json"
_SEGMENT_HEADER = struct.Struct("<IQ")


def segment_name(level: int, plane: int) -> str:
    return f"l{level}_b{plane}.bin"


@dataclass
class SegmentInfo:
    level: int
    plane: int
    size: int   # bytes of the segment file, header included
    crc32: int
    bits: int
    file: str


@dataclass
class Manifest:
    shape: tuple[int, ...]
    dtype: str
    coords: Optional[list[list[float]]]
    nlevels: int
    planes: int
    exponents: list[Optional[int]]
    counts: list[int]
    value_min: float
    value_max: float
    value_rms: float
    segments: list[SegmentInfo]

    @property
    def ndims(self) -> int:
        return len(self.shape)

    def segment(self, level: int, plane: int) -> SegmentInfo:
        return self.segments[level * self.planes + plane]

    def grid(self) -> TensorGrid:
        return TensorGrid(self.shape, self.coords)

    def to_dict(self) -> dict:
        return {
            "format": STORE_FORMAT,
            "version": STORE_VERSION,
            "shape": list(self.shape),
            "dtype": self.dtype,
            "coords": self.coords,
            "nlevels": self.nlevels,
            "planes": self.planes,
            "exponents": self.exponents,
            "counts": self.counts,
            "value_min": self.value_min,
            "value_max": self.value_max,
            "value_rms": self.value_rms,
            "segments": [
                {"level": s.level, "plane": s.plane, "size": s.size, "crc32": s.crc32, "bits": s.bits, "file": s.file}
                for s in self.segments
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        if d.get("format") != STORE_FORMAT:
            raise CorruptStream("not a refactored-store manifest")
        if d.get("version") != STORE_VERSION:
            raise CorruptStream(f"unsupported store version {d.get('version')}")
        m = cls(
            shape=tuple(d["shape"]),
            dtype=d["dtype"],
            coords=d["coords"],
            nlevels=d["nlevels"],
            planes=d["planes"],
            exponents=list(d["exponents"]),
            counts=list(d["counts"]),
            value_min=d["value_min"],
            value_max=d["value_max"],
            value_rms=d["value_rms"],
            segments=[SegmentInfo(**s) for s in d["segments"]],
        )
        if len(m.segments) != (m.nlevels + 1) * m.planes:
            raise CorruptStream("manifest segment table is incomplete")
        return m

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        return cls.from_dict(json.loads(text))


@dataclass
class RefactoredStore:
    """Manifest plus segment files held in memory."""

    manifest: Manifest
    files: dict[tuple[int, int], bytes]

    def read(self, level: int, plane: int) -> bytes:
        return self.files[level, plane]

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for (level, plane), data in sorted(self.files.items()):
            (directory / segment_name(level, plane)).write_bytes(data)
        (directory / MANIFEST_NAME).write_text(self.manifest.to_json(), encoding="utf-8")
        return directory


class DirectoryStore:
    """A store on disk; segments are read only when requested."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.manifest = Manifest.from_json((self.directory / MANIFEST_NAME).read_text(encoding="utf-8"))

    def read(self, level: int, plane: int) -> bytes:
        return (self.directory / self.manifest.segment(level, plane).file).read_bytes()


def open_store(directory) -> DirectoryStore:
    return DirectoryStore(directory)


def level_exponent(values: np.ndarray) -> Optional[int]:
    """Smallest e with max|values| <= 2**e, or None when all values are zero."""
    if values.size == 0:
        return None
    amax = float(np.max(np.abs(values)))
    if amax == 0.0:
        return None
    mant, exp = math.frexp(amax)
    return exp - 1 if mant == 0.5 else exp


def fixed_point(values: np.ndarray, exponent: int, planes: int) -> np.ndarray:
    """floor(|v| * 2**(planes - exponent)) as uint64, clamped to ``planes`` bits."""
    m = np.floor(np.ldexp(np.abs(values), planes - exponent))
    # |v| == 2**exponent would need planes + 1 bits
    m = np.minimum(m, float(2**planes - 1))
    return m.astype(np.uint64)


def _plane_bits(magnitudes: np.ndarray, negative: np.ndarray, plane: int, planes: int) -> np.ndarray:
    bits = ((magnitudes >> np.uint64(planes - 1 - plane)) & np.uint64(1)).astype(np.uint8)
    if plane != 0:
        return bits
    out = np.empty(2 * bits.size, dtype=np.uint8)
    out[0::2] = negative
    out[1::2] = bits
    return out


def encode_segment(bits: np.ndarray) -> bytes:
    if bits.size == 0:
        return _SEGMENT_HEADER.pack(zlib.crc32(b""), 0)
    packed = np.packbits(bits)
    payload = lossless.lossless_encode(packed.astype(np.int64), lossless.HUFFMAN).payload
    return _SEGMENT_HEADER.pack(zlib.crc32(payload), bits.size) + payload


def decode_segment(data: bytes, expected_bits: Optional[int] = None) -> np.ndarray:
    if len(data) < _SEGMENT_HEADER.size:
        raise CorruptStream("segment header truncated")
    crc, nbits = _SEGMENT_HEADER.unpack_from(data, 0)
    payload = data[_SEGMENT_HEADER.size:]
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch("segment CRC32 mismatch")
    if expected_bits is not None and nbits != expected_bits:
        raise CorruptStream(f"segment holds {nbits} bits, expected {expected_bits}")
    if nbits == 0:
        if payload:
            raise CorruptStream("empty segment with payload")
        return np.zeros(0, dtype=np.uint8)
    nbytes = (nbits + 7) // 8
    values = lossless.lossless_decode(lossless.LosslessBlock(lossless.HUFFMAN, payload, nbytes))
    if np.any((values < 0) | (values > 255)):
        raise CorruptStream("segment byte out of range")
    return np.unpackbits(values.astype(np.uint8))[:nbits]


def _expected_bits(manifest: Manifest, level: int, plane: int) -> int:
    if manifest.exponents[level] is None:
        return 0
    n = manifest.counts[level]
    return 2 * n if plane == 0 else n


def refactor(u: np.ndarray, grid: Optional[TensorGrid] = None, planes: int = DEFAULT_PLANES) -> RefactoredStore:
    u = np.asarray(u)
    if u.dtype not in (np.float32, np.float64):
        raise TypeError(f"only float32 and float64 arrays are supported, got {u.dtype}")
    if not MIN_PLANES <= planes <= MAX_PLANES:
        raise PlaneCountOutOfRange(f"plane count {planes} outside {MIN_PLANES}..{MAX_PLANES}")
    if grid is None:
        grid = TensorGrid(u.shape)
    if u.shape != grid.shape:
        raise ShapeMismatch(f"array shape {u.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(u)):
        raise NonFiniteInput("input contains NaN or Inf")
    h = build_hierarchy(grid)
    flat = forward(u, h).values.ravel()

    exponents: list[Optional[int]] = []
    files: dict[tuple[int, int], bytes] = {}
    infos: list[SegmentInfo] = []
    for level, pos in enumerate(h.level_positions):
        values = flat[pos]
        e = level_exponent(values)
        exponents.append(e)
        if e is not None:
            m = fixed_point(values, e, planes)
            negative = (values < 0).astype(np.uint8)
        for plane in range(planes):
            if e is None:
                data = encode_segment(np.zeros(0, dtype=np.uint8))
            else:
                data = encode_segment(_plane_bits(m, negative, plane, planes))
            crc, nbits = _SEGMENT_HEADER.unpack_from(data, 0)
            files[level, plane] = data
            infos.append(SegmentInfo(level, plane, len(data), crc, nbits, segment_name(level, plane)))

    manifest = Manifest(
        shape=grid.shape,
        dtype="f32" if u.dtype == np.float32 else "f64",
        coords=None if grid.has_default_coords else [c.tolist() for c in grid.coords],
        nlevels=h.nlevels,
        planes=planes,
        exponents=exponents,
        counts=h.level_counts,
        value_min=float(u.min()),
        value_max=float(u.max()),
        value_rms=rms(u),
        segments=infos,
    )
    return RefactoredStore(manifest, files)


@dataclass
class RetrievalState:
    """Reader-side progress: planes fetched per level and the partial magnitudes."""

    fetched: list[int]
    magnitudes: list[np.ndarray]
    negative: list[np.ndarray]
    bytes_fetched: int = 0
    store_id: str = ""

    @classmethod
    def initial(cls, manifest: Manifest) -> "RetrievalState":
        return cls(
            fetched=[0] * (manifest.nlevels + 1),
            magnitudes=[np.zeros(n, dtype=np.uint64) for n in manifest.counts],
            negative=[np.zeros(n, dtype=bool) for n in manifest.counts],
            store_id=manifest.fingerprint(),
        )

    def copy(self) -> "RetrievalState":
        return RetrievalState(
            list(self.fetched),
            [m.copy() for m in self.magnitudes],
            [s.copy() for s in self.negative],
            self.bytes_fetched,
            self.store_id,
        )

    def estimate(self, manifest: Manifest, s: float = math.inf) -> ErrorEstimate:
        value = segment_bound(self.fetched, manifest.exponents, manifest.counts, manifest.ndims, manifest.planes, s)
        norm = Norm.INF if math.isinf(s) else Norm.S
        return ErrorEstimate(value, norm, norm is Norm.INF)

    def to_json(self, manifest: Manifest) -> str:
        return json.dumps(
            {
                "store": self.store_id,
                "fetched": self.fetched,
                "bytes_fetched": self.bytes_fetched,
                "estimate_inf": self.estimate(manifest).value,
                "magnitudes": [base64.b64encode(m.astype("<u8").tobytes()).decode() for m in self.magnitudes],
                "negative": [base64.b64encode(np.packbits(s).tobytes()).decode() for s in self.negative],
            },
            sort_keys=True,
            indent=1,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str, manifest: Manifest) -> "RetrievalState":
        d = json.loads(text)
        if d["store"] != manifest.fingerprint():
            raise InvalidState("retrieval state belongs to a different store")
        mags = [np.frombuffer(base64.b64decode(m), dtype="<u8").astype(np.uint64) for m in d["magnitudes"]]
        neg = [
            np.unpackbits(np.frombuffer(base64.b64decode(s), dtype=np.uint8))[:n].astype(bool)
            for s, n in zip(d["negative"], manifest.counts)
        ]
        if [m.size for m in mags] != list(manifest.counts) or len(d["fetched"]) != manifest.nlevels + 1:
            raise InvalidState("retrieval state does not fit the store")
        return cls(list(d["fetched"]), mags, neg, d["bytes_fetched"], d["store"])


@dataclass
class SegmentRequest:
    segments: list[tuple[int, int]]
    estimate: float          # predicted estimator value once all segments are applied
    tol_abs: float
    nbytes: int = 0
    satisfied: bool = True
    trace: list[float] = field(default_factory=list)  # estimator after each segment


def request_tolerance(manifest: Manifest, spec: ErrorSpec) -> float:
    if spec.mode is Mode.ABS:
        return spec.tol
    return spec.tol * normalizer(spec, manifest.value_min, manifest.value_max, manifest.value_rms)


def plan_greedy(
    fetched: Sequence[int],
    exponents: Sequence[Optional[int]],
    counts: Sequence[int],
    sizes: Sequence[Sequence[int]],
    ndims: int,
    planes: int,
    s: float,
    tol_abs: float,
) -> tuple[list[tuple[int, int]], list[float]]:
    """Greedy fetch order by estimator decrease per byte.

    ``sizes[l][p]`` is the byte size of segment (l, p).  Returns the ordered
    segment ids and the estimator value after each one.  Stops as soon as
    the estimator is within ``tol_abs`` or nothing useful is left.
    """
    b = list(fetched)
    current = segment_bound(b, exponents, counts, ndims, planes, s)
    order: list[tuple[int, int]] = []
    trace: list[float] = []
    while current > tol_abs:
        best = None
        for level, e in enumerate(exponents):
            if e is None or b[level] >= planes:
                continue
            b[level] += 1
            after = segment_bound(b, exponents, counts, ndims, planes, s)
            b[level] -= 1
            ratio = (current - after) / max(sizes[level][b[level]], 1)
            # strict > keeps the lowest level on ties
            if best is None or ratio > best[0]:
                best = (ratio, level, after)
        if best is None:
            break
        _, level, after = best
        order.append((level, b[level]))
        b[level] += 1
        current = after
        trace.append(current)
    return order, trace


def request(
    manifest: Manifest,
    spec: ErrorSpec,
    state: Optional[RetrievalState] = None,
) -> SegmentRequest:
    """Plan which segments to fetch next so the estimator drops below ``spec.tol``.

    Pure planning; nothing is read or mutated.  Raises
    :class:`UnsatisfiableTolerance` (carrying the best-effort plan) when even
    the full store cannot meet the tolerance.
    """
    if state is None:
        state = RetrievalState.initial(manifest)
    if len(state.fetched) != manifest.nlevels + 1:
        raise InvalidState("retrieval state does not fit the store")
    tol_abs = request_tolerance(manifest, spec)
    sizes = [[manifest.segment(l, p).size for p in range(manifest.planes)] for l in range(manifest.nlevels + 1)]
    order, trace = plan_greedy(
        state.fetched, manifest.exponents, manifest.counts, sizes,
        manifest.ndims, manifest.planes, spec.s, tol_abs,
    )
    start = segment_bound(state.fetched, manifest.exponents, manifest.counts, manifest.ndims, manifest.planes, spec.s)
    final = trace[-1] if trace else start
    plan = SegmentRequest(
        segments=order,
        estimate=final,
        tol_abs=tol_abs,
        nbytes=sum(manifest.segment(l, p).size for l, p in order),
        satisfied=final <= tol_abs,
        trace=trace,
    )
    if not plan.satisfied:
        raise UnsatisfiableTolerance(
            f"full retrieval reaches {final:.3e}, above the requested {tol_abs:.3e}", request=plan
        )
    return plan


def _coefficients(manifest: Manifest, h: GridHierarchy, state: RetrievalState) -> np.ndarray:
    flat = np.zeros(h.grid.size, dtype=np.float64)
    for level, pos in enumerate(h.level_positions):
        e = manifest.exponents[level]
        if e is None or state.fetched[level] == 0:
            continue
        c = np.ldexp(state.magnitudes[level].astype(np.float64), e - manifest.planes)
        flat[pos] = np.where(state.negative[level], -c, c)
    return flat.reshape(h.grid.shape)


def reconstruct(source, segments: Sequence[tuple[int, int]], state: Optional[RetrievalState] = None):
    """Apply fetched segments to ``state`` and recompose the data.

    ``source`` provides ``manifest`` and ``read(level, plane)``; ``segments``
    is typically ``request(...).segments``.  Returns the array and the new
    state; the input state is left untouched.
    """
    manifest = source.manifest
    state = RetrievalState.initial(manifest) if state is None else state.copy()
    if state.store_id and state.store_id != manifest.fingerprint():
        raise InvalidState("retrieval state belongs to a different store")
    B = manifest.planes
    for level, plane in segments:
        if not 0 <= level <= manifest.nlevels or not 0 <= plane < B:
            raise PrefixViolation(f"segment ({level}, {plane}) does not exist")
        if plane != state.fetched[level]:
            raise PrefixViolation(
                f"segment ({level}, {plane}) requested but level {level} has {state.fetched[level]} planes"
            )
        data = source.read(level, plane)
        bits = decode_segment(data, _expected_bits(manifest, level, plane))
        if manifest.exponents[level] is not None:
            if plane == 0:
                state.negative[level] = bits[0::2].astype(bool)
                bits = bits[1::2]
            state.magnitudes[level] |= bits.astype(np.uint64) << np.uint64(B - 1 - plane)
        state.fetched[level] += 1
        state.bytes_fetched += len(data)

    h = build_hierarchy(manifest.grid())
    values = inverse(MultilevelCoefficients(_coefficients(manifest, h, state), h))
    dtype = np.float32 if manifest.dtype == "f32" else np.float64
    return values.astype(dtype), state


def recompose(source, spec: ErrorSpec, state: Optional[RetrievalState] = None, best_effort: bool = True):
    """Plan, fetch and reconstruct in one step; returns (array, state, request)."""
    try:
        plan = request(source.manifest, spec, state)
    except UnsatisfiableTolerance as exc:
        if not best_effort:
            raise
        plan = exc.request
    data, state = reconstruct(source, plan.segments, state)
    return data, state, plan
