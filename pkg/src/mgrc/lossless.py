"""Lossless coding of integer streams.

Codecs:

* ``0`` raw little-endian int64,
* ``1`` zigzag + LEB128 varint,
* ``2`` codec 1 followed by canonical Huffman over the varint bytes.

Codec 2 payload layout (little-endian)::

    u16   symbol_count       table entries, = largest byte value + 1
    u8    max_code_length    0 means a single symbol (symbol_count - 1), no bits
    u4[]  code lengths       two per byte, high nibble first, 0 = unused
    ...   code bits          MSB-first, zero padded to a byte boundary

Decoders validate everything they read and raise :class:`CorruptStream`
instead of returning garbage.
"""
from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStream, UnknownCodec

RAW = 0
VARINT = 1
HUFFMAN = 2
CODECS = (RAW, VARINT, HUFFMAN)

MAX_CODE_LENGTH = 15
_MAX_VARINT_BYTES = 10


@dataclass(frozen=True)
class LosslessBlock:
    codec_id: int
    payload: bytes
    original_count: int


def zigzag_encode(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return ((v << 1) ^ (v >> 63)).view(np.uint64)


def zigzag_decode(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.uint64)
    return ((u >> np.uint64(1)) ^ (np.uint64(0) - (u & np.uint64(1)))).view(np.int64)


def varint_encode(u: np.ndarray) -> bytes:
    u = np.asarray(u, dtype=np.uint64).ravel()
    if u.size == 0:
        return b""
    nbytes = np.ones(u.size, dtype=np.int64)
    for k in range(1, _MAX_VARINT_BYTES):
        nbytes += u >= np.uint64(1 << (7 * k))
    offsets = np.cumsum(nbytes) - nbytes
    out = np.empty(int(nbytes.sum()), dtype=np.uint8)
    for k in range(int(nbytes.max())):
        sel = nbytes > k
        byte = ((u[sel] >> np.uint64(7 * k)) & np.uint64(0x7F)).astype(np.uint8)
        byte |= np.where(nbytes[sel] - 1 > k, 0x80, 0).astype(np.uint8)
        out[offsets[sel] + k] = byte
    return out.tobytes()


def varint_decode(buf, count: int) -> np.ndarray:
    b = np.frombuffer(bytes(buf), dtype=np.uint8)
    if count == 0:
        if b.size:
            raise CorruptStream("trailing bytes after empty varint stream")
        return np.zeros(0, dtype=np.uint64)
    if b.size == 0 or b[-1] & 0x80:
        raise CorruptStream("varint stream truncated")
    ends = np.flatnonzero(b < 0x80)
    if ends.size != count:
        raise CorruptStream(f"expected {count} varints, found {ends.size}")
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > _MAX_VARINT_BYTES:
        raise CorruptStream("varint longer than 10 bytes")
    k = np.arange(b.size) - np.repeat(starts, lengths)
    if np.any((k == _MAX_VARINT_BYTES - 1) & (b > 1)):
        raise CorruptStream("varint overflows 64 bits")
    parts = (b & 0x7F).astype(np.uint64) << (7 * k).astype(np.uint64)
    return np.add.reduceat(parts, starts)


def _huffman_lengths(freq: np.ndarray) -> np.ndarray:
    """Code length per symbol, capped at MAX_CODE_LENGTH; ties broken by symbol value."""
    freq = freq.astype(np.int64)
    while True:
        lengths = np.zeros(freq.size, dtype=np.int64)
        heap = [(int(f), int(s), [int(s)]) for s, f in enumerate(freq) if f > 0]
        heapq.heapify(heap)
        serial = freq.size
        while len(heap) > 1:
            f1, _, m1 = heapq.heappop(heap)
            f2, _, m2 = heapq.heappop(heap)
            members = m1 + m2
            lengths[members] += 1
            heapq.heappush(heap, (f1 + f2, serial, members))
            serial += 1
        if lengths.max(initial=0) <= MAX_CODE_LENGTH:
            return lengths
        freq = np.where(freq > 0, np.maximum(freq >> 1, 1), 0)


def _canonical_codes(lengths: np.ndarray) -> np.ndarray:
    codes = np.zeros(lengths.size, dtype=np.int64)
    code = 0
    prev = 0
    for sym in sorted(np.flatnonzero(lengths).tolist(), key=lambda s: (lengths[s], s)):
        code <<= int(lengths[sym]) - prev
        prev = int(lengths[sym])
        codes[sym] = code
        code += 1
    return codes


def huffman_encode(data: bytes) -> bytes:
    sym = np.frombuffer(data, dtype=np.uint8)
    if sym.size == 0:
        return struct.pack("<HB", 0, 0)
    freq = np.bincount(sym, minlength=256)
    nsym = int(sym.max()) + 1
    used = np.flatnonzero(freq)
    if used.size == 1:
        return struct.pack("<HB", nsym, 0) + bytes((nsym + 1) // 2)
    lengths = _huffman_lengths(freq[:nsym])
    maxlen = int(lengths.max())
    nibbles = np.zeros(nsym + (nsym & 1), dtype=np.uint8)
    nibbles[:nsym] = lengths
    table = (nibbles[0::2] << 4) | nibbles[1::2]
    codes = _canonical_codes(lengths)

    lens = lengths[sym]
    vals = codes[sym]
    total = int(lens.sum())
    owner = np.repeat(np.arange(sym.size), lens)
    starts = np.cumsum(lens) - lens
    shift = lens[owner] - 1 - (np.arange(total) - starts[owner])
    bits = ((vals[owner] >> shift) & 1).astype(np.uint8)
    return struct.pack("<HB", nsym, maxlen) + table.tobytes() + np.packbits(bits).tobytes()


def _read_table(payload: bytes):
    if len(payload) < 3:
        raise CorruptStream("Huffman header truncated")
    nsym, maxlen = struct.unpack_from("<HB", payload, 0)
    if nsym > 256 or maxlen > MAX_CODE_LENGTH:
        raise CorruptStream("invalid Huffman header")
    tbytes = (nsym + 1) // 2
    if len(payload) < 3 + tbytes:
        raise CorruptStream("Huffman code table truncated")
    raw = np.frombuffer(payload, dtype=np.uint8, count=tbytes, offset=3)
    lengths = np.empty(2 * tbytes, dtype=np.int64)
    lengths[0::2] = raw >> 4
    lengths[1::2] = raw & 0x0F
    if nsym & 1 and lengths[-1] != 0:
        raise CorruptStream("nonzero padding nibble in code table")
    lengths = lengths[:nsym]
    return nsym, maxlen, lengths, payload[3 + tbytes:]


def _huffman_decode_varints(payload: bytes, count: int) -> bytes:
    """Decode Huffman symbols until ``count`` complete varints have been produced."""
    nsym, maxlen, lengths, stream = _read_table(payload)
    if nsym == 0:
        if count or stream:
            raise CorruptStream("empty Huffman table with data")
        return b""
    if maxlen == 0:
        if np.any(lengths) or stream:
            raise CorruptStream("malformed single-symbol Huffman block")
        symbol = nsym - 1
        if count and symbol & 0x80:
            raise CorruptStream("single symbol cannot terminate a varint")
        return bytes([symbol]) * count
    if int(lengths.max()) != maxlen:
        raise CorruptStream("max code length disagrees with table")
    if int(np.sum(np.left_shift(1, maxlen - lengths[lengths > 0]))) > (1 << maxlen):
        raise CorruptStream("code lengths violate the Kraft inequality")

    codes = _canonical_codes(lengths)
    size = 1 << maxlen
    sym_tab = np.full(size, -1, dtype=np.int64)
    len_tab = np.zeros(size, dtype=np.int64)
    for s in np.flatnonzero(lengths).tolist():
        span = maxlen - int(lengths[s])
        lo = int(codes[s]) << span
        sym_tab[lo:lo + (1 << span)] = s
        len_tab[lo:lo + (1 << span)] = lengths[s]

    bits = np.unpackbits(np.frombuffer(stream, dtype=np.uint8)).astype(np.int64)
    nbits = bits.size
    padded = np.concatenate((bits, np.zeros(maxlen, dtype=np.int64)))
    window = np.zeros(nbits, dtype=np.int64)
    for k in range(maxlen):
        window = (window << 1) | padded[k:k + nbits]
    syms = sym_tab[window].tolist()
    lens = len_tab[window].tolist()

    out = bytearray()
    pos = 0
    done = 0
    while done < count:
        if pos >= nbits:
            raise CorruptStream("Huffman stream truncated")
        n = lens[pos]
        if n == 0 or pos + n > nbits:
            raise CorruptStream("invalid or truncated Huffman code")
        s = syms[pos]
        out.append(s)
        pos += n
        if s < 0x80:
            done += 1
    if nbits - pos >= 8 or np.any(bits[pos:]):
        raise CorruptStream("unexpected data after Huffman stream")
    return bytes(out)


def lossless_encode(values, codec_id: int = HUFFMAN) -> LosslessBlock:
    """Encode a signed integer array (or QuantizedCoefficients) losslessly."""
    if hasattr(values, "qvalues"):
        values = values.qvalues
    v = np.ascontiguousarray(np.asarray(values, dtype=np.int64).ravel())
    if codec_id == RAW:
        payload = v.astype("<i8").tobytes()
    elif codec_id == VARINT:
        payload = varint_encode(zigzag_encode(v))
    elif codec_id == HUFFMAN:
        payload = huffman_encode(varint_encode(zigzag_encode(v)))
    else:
        raise UnknownCodec(f"codec {codec_id} is not supported")
    return LosslessBlock(codec_id, payload, v.size)


def lossless_decode(block: LosslessBlock) -> np.ndarray:
    count = block.original_count
    if block.codec_id == RAW:
        if len(block.payload) != 8 * count:
            raise CorruptStream(f"raw block holds {len(block.payload)} bytes, expected {8 * count}")
        return np.frombuffer(block.payload, dtype="<i8").astype(np.int64)
    if block.codec_id == VARINT:
        return zigzag_decode(varint_decode(block.payload, count))
    if block.codec_id == HUFFMAN:
        return zigzag_decode(varint_decode(_huffman_decode_varints(block.payload, count), count))
    raise UnknownCodec(f"codec {block.codec_id} is not supported")
