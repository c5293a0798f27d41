"""Single-shot error-bounded compression into a self-describing container.

Container layout (little-endian)::

    "MGRC" | u16 version | u8 flags | u8 dtype | u8 ndims | u64 shape[ndims]
    | [per axis: u64 count, f64 coords[count]]        (flags bit1)
    | u8 mode | u8 norm | f64 s | f64 tol
    | u8 nlevels | f64 bin_widths[nlevels + 1]
    | u8 codec_id | u64 payload_len | u32 crc32(payload) | payload

flags bit0 marks a constant field whose payload is the single f64 value.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lossless
from .error_control import (
    ErrorSpec,
    LevelBudget,
    Mode,
    Norm,
    absolute_tolerance,
    achieved_error,
    error_norm,
    initial_bin_widths,
)
from .errors import (
    BadMagic,
    ChecksumMismatch,
    CorruptStream,
    NonFiniteInput,
    ShapeMismatch,
    ToleranceUnreachable,
    UnsupportedVersion,
)
from .grid import TensorGrid, build_hierarchy
from .quantize import QuantizedCoefficients, dequantize, quantize
from .transform import MultilevelCoefficients, forward, inverse

MAGIC = b"MGRC"
VERSION = 1
MAX_SHRINK_ITERATIONS = 10

FLAG_CONSTANT = 0x01
FLAG_COORDS = 0x02

DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
DTYPES = {v: k for k, v in DTYPE_CODES.items()}


@dataclass(eq=False)
class CompressedContainer:
    dtype: np.dtype
    shape: tuple[int, ...]
    coords: Optional[tuple[np.ndarray, ...]]
    spec: ErrorSpec
    nlevels: int
    bin_widths: tuple[float, ...]
    codec_id: int
    payload: bytes
    constant: bool = False
    version: int = VERSION
    crc32: Optional[int] = None

    def __post_init__(self):
        if self.crc32 is None:
            self.crc32 = zlib.crc32(self.payload)

    @property
    def constant_value(self) -> float:
        return struct.unpack("<d", self.payload)[0]

    def header_bytes(self) -> bytes:
        flags = (FLAG_CONSTANT if self.constant else 0) | (FLAG_COORDS if self.coords is not None else 0)
        parts = [
            MAGIC,
            struct.pack("<HBBB", self.version, flags, DTYPE_CODES[np.dtype(self.dtype)], len(self.shape)),
            struct.pack(f"<{len(self.shape)}Q", *self.shape),
        ]
        if self.coords is not None:
            for c in self.coords:
                parts.append(struct.pack("<Q", c.size))
                parts.append(np.asarray(c, dtype="<f8").tobytes())
        s = 0.0 if self.spec.norm is Norm.INF else self.spec.s
        parts.append(struct.pack("<BBdd", int(self.spec.mode), int(self.spec.norm), s, self.spec.tol))
        parts.append(struct.pack("<B", self.nlevels))
        parts.append(struct.pack(f"<{self.nlevels + 1}d", *self.bin_widths))
        parts.append(struct.pack("<BQI", self.codec_id, len(self.payload), self.crc32))
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CompressedContainer":
        header, offset = parse_header(buf)
        end = offset + header["payload_len"]
        if len(buf) < end:
            raise CorruptStream(f"container truncated: {len(buf)} bytes, header announces {end}")
        return cls(
            dtype=header["dtype"],
            shape=header["shape"],
            coords=header["coords"],
            spec=header["spec"],
            nlevels=header["nlevels"],
            bin_widths=header["bin_widths"],
            codec_id=header["codec_id"],
            payload=bytes(buf[offset:end]),
            constant=header["constant"],
            version=header["version"],
            crc32=header["crc32"],
        )

    def grid(self) -> TensorGrid:
        return TensorGrid(self.shape, self.coords)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CorruptStream("container header truncated")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out


def parse_header(buf: bytes) -> tuple[dict, int]:
    """Decode the container header; returns the fields and the header size."""
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise BadMagic("not an MGRC container")
    r = _Reader(buf)
    r.pos = 4
    (version,) = r.take("<H")
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version}, this build reads {VERSION}")
    flags, dtype_code, ndims = r.take("<BBB")
    if dtype_code not in DTYPES:
        raise CorruptStream(f"unknown dtype code {dtype_code}")
    if not 1 <= ndims <= 4:
        raise CorruptStream(f"invalid dimension count {ndims}")
    shape = r.take(f"<{ndims}Q")
    coords = None
    if flags & FLAG_COORDS:
        coords = []
        for n in shape:
            (count,) = r.take("<Q")
            if count != n:
                raise CorruptStream("coordinate count disagrees with shape")
            coords.append(np.array(r.take(f"<{count}d"), dtype=np.float64))
        coords = tuple(coords)
    mode, norm, s, tol = r.take("<BBdd")
    if mode not in (0, 1) or norm not in (0, 1):
        raise CorruptStream("invalid error mode or norm")
    spec = ErrorSpec(tol, math.inf if norm == Norm.INF else s, Mode(mode))
    (nlevels,) = r.take("<B")
    bin_widths = r.take(f"<{nlevels + 1}d")
    codec_id, payload_len, crc = r.take("<BQI")
    header = {
        "version": version,
        "constant": bool(flags & FLAG_CONSTANT),
        "dtype": DTYPES[dtype_code],
        "shape": tuple(int(n) for n in shape),
        "coords": coords,
        "spec": spec,
        "nlevels": nlevels,
        "bin_widths": tuple(bin_widths),
        "codec_id": codec_id,
        "payload_len": payload_len,
        "crc32": crc,
    }
    return header, r.pos


def _check_input(u: np.ndarray, grid: Optional[TensorGrid]) -> tuple[np.ndarray, TensorGrid]:
    u = np.asarray(u)
    if u.dtype not in DTYPE_CODES:
        raise TypeError(f"only float32 and float64 arrays are supported, got {u.dtype}")
    if grid is None:
        grid = TensorGrid(u.shape)
    if u.shape != grid.shape:
        raise ShapeMismatch(f"array shape {u.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(u)):
        raise NonFiniteInput("input contains NaN or Inf")
    return u, grid


def _measured_error(u: np.ndarray, q: QuantizedCoefficients, spec: ErrorSpec) -> float:
    rec = inverse(dequantize(q)).astype(u.dtype)
    return error_norm(u.astype(np.float64) - rec.astype(np.float64), spec)


def compress(
    u: np.ndarray,
    spec: ErrorSpec,
    grid: Optional[TensorGrid] = None,
    codec_id: int = lossless.HUFFMAN,
    store_coords: Optional[bool] = None,
) -> CompressedContainer:
    """Compress ``u`` so that the reconstruction error meets ``spec``.

    Coordinates are written to the header when they differ from the default
    ``0..n-1`` spacing, or always when ``store_coords`` is true.
    """
    u, grid = _check_input(u, grid)
    h = build_hierarchy(grid)
    if store_coords is None:
        store_coords = not grid.has_default_coords
    coords = grid.coords if store_coords else None
    if codec_id not in lossless.CODECS:
        lossless.lossless_encode([], codec_id)  # raises UnknownCodec
    vmin, vmax = float(u.min()), float(u.max())
    if vmin == vmax:
        return CompressedContainer(
            dtype=u.dtype, shape=grid.shape, coords=coords, spec=spec, nlevels=h.nlevels,
            bin_widths=(0.0,) * (h.nlevels + 1), codec_id=lossless.RAW,
            payload=struct.pack("<d", vmin), constant=True,
        )

    tol_abs = absolute_tolerance(spec, u)
    coeffs = forward(u, h)
    budget = initial_bin_widths(tol_abs, spec, h)
    for _ in range(MAX_SHRINK_ITERATIONS):
        q = quantize(coeffs, budget)
        estimate = achieved_error(MultilevelCoefficients(q.residuals, h), spec, h).value
        if spec.norm is Norm.INF or spec.s == 0:
            # guards round-off in the inverse and the cast back to the input dtype
            estimate = max(estimate, _measured_error(u, q, spec))
        if estimate <= tol_abs:
            break
        budget = budget.halved()
    else:
        raise ToleranceUnreachable(
            f"error {estimate:.3e} still above {tol_abs:.3e} after {MAX_SHRINK_ITERATIONS} bin refinements"
        )

    block = lossless.lossless_encode(q, codec_id)
    return CompressedContainer(
        dtype=u.dtype, shape=grid.shape, coords=coords, spec=spec, nlevels=h.nlevels,
        bin_widths=budget.bin_widths, codec_id=codec_id, payload=block.payload,
    )


def decompress(c) -> np.ndarray:
    """Reconstruct the array stored in a container (object or raw bytes)."""
    if not isinstance(c, CompressedContainer):
        c = CompressedContainer.from_bytes(c)
    if zlib.crc32(c.payload) != c.crc32:
        raise ChecksumMismatch("payload CRC32 does not match the header")
    if c.constant:
        if len(c.payload) != 8:
            raise CorruptStream("constant container must hold one f64")
        return np.full(c.shape, c.constant_value, dtype=c.dtype)
    h = build_hierarchy(c.grid())
    if len(c.bin_widths) != h.nlevels + 1 or c.nlevels != h.nlevels:
        raise CorruptStream("level count in header does not match the grid")
    n = int(np.prod(c.shape))
    q = lossless.lossless_decode(lossless.LosslessBlock(c.codec_id, c.payload, n))
    quantized = QuantizedCoefficients(q.reshape(c.shape), LevelBudget(c.bin_widths), h)
    return inverse(dequantize(quantized)).astype(c.dtype)


def _fmt(x: float) -> str:
    if math.isfinite(x) and float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def inspect(buf: bytes) -> dict:
    """Header fields of a container; the payload is not read."""
    header, size = parse_header(buf)
    spec = header["spec"]
    return {
        "format": "MGRC",
        "version": header["version"],
        "dtype": "f32" if header["dtype"] == np.float32 else "f64",
        "ndims": len(header["shape"]),
        "shape": "x".join(str(n) for n in header["shape"]),
        "constant": header["constant"],
        "coords": header["coords"] is not None,
        "mode": spec.mode.name,
        "norm": spec.norm.name,
        "s": "inf" if spec.norm is Norm.INF else _fmt(spec.s),
        "tol": _fmt(spec.tol),
        "nlevels": header["nlevels"],
        "bin_widths": ",".join(_fmt(w) for w in header["bin_widths"]),
        "codec": header["codec_id"],
        "header_bytes": size,
        "payload_bytes": header["payload_len"],
        "crc32": f"{header['crc32']:08x}",
    }


def format_inspect(fields: dict, prefix: str = "") -> str:
    lines = []
    for key, value in fields.items():
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{prefix}{key}: {value}")
    return "\n".join(lines) + "\n"
