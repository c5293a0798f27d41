"""``mgrc`` command line: compress, decompress, refactor, recompose, inspect.

Raw inputs are headerless little-endian arrays in row-major order.
"""
from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import compressor, lossless
from .chunking import plan_chunks, parse_size, read_blocks, thread_count, whole_array_plan, write_blocks
from .error_control import ErrorSpec, Mode, Norm, normalizer
from .errors import CorruptStream, MgrcError, NonFiniteInput, SizeMismatch, UnsatisfiableTolerance
from .grid import TensorGrid
from .refactor import (
    DEFAULT_PLANES,
    RetrievalState,
    open_store,
    reconstruct,
    refactor,
    request,
)

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
EXIT_LIBRARY = 1
EXIT_IO = 3


def parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 129x129") from None
    return shape


def parse_s(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _spec(args) -> ErrorSpec:
    return ErrorSpec(args.tol, args.s, Mode.REL if args.mode == "rel" else Mode.ABS)


def _load_coords(path, shape):
    if path is None:
        return None
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != sum(shape):
        raise SizeMismatch(f"coordinate file holds {flat.size} values, expected {sum(shape)}")
    return np.split(flat, np.cumsum(shape)[:-1])


def open_raw(path, shape, dtype: str) -> np.ndarray:
    """Memory-map a raw input file after checking its size."""
    dt = DTYPES[dtype]
    expected = math.prod(shape) * dt.itemsize
    actual = Path(path).stat().st_size
    if actual != expected:
        raise SizeMismatch(f"{path} has {actual} bytes, shape {tuple(shape)} of {dtype} needs {expected}")
    return np.memmap(path, dtype=dt, mode="r", shape=tuple(shape))


def _stats(data: np.ndarray) -> tuple[float, float, float, bool]:
    """min, max, RMS and finiteness, one slab of the slowest axis at a time."""
    vmin, vmax, sq, finite = math.inf, -math.inf, 0.0, True
    step = max(1, (1 << 22) // max(1, data[0].size))
    for lo in range(0, data.shape[0], step):
        slab = np.asarray(data[lo:lo + step], dtype=np.float64)
        finite &= bool(np.all(np.isfinite(slab)))
        vmin = min(vmin, float(slab.min()))
        vmax = max(vmax, float(slab.max()))
        sq += float(np.sum(np.square(slab)))
    return vmin, vmax, math.sqrt(sq / data.size), finite


def _block_slices(ranges):
    return tuple(slice(lo, hi) for lo, hi in ranges)


def compress_file(input_path, output_path, shape, dtype, spec: ErrorSpec, codec_id=lossless.HUFFMAN,
                  chunk_mem=None, coords=None) -> int:
    """Compress a raw file block by block; returns the number of blocks."""
    data = open_raw(input_path, shape, dtype)
    grid = TensorGrid(shape, coords)
    vmin, vmax, root_ms, finite = _stats(data)
    if not finite:
        raise NonFiniteInput("input contains NaN or Inf")
    if spec.mode is Mode.REL and vmin != vmax:
        tol_abs = spec.tol * normalizer(spec, vmin, vmax, root_ms)
    else:
        tol_abs = spec.tol
    # each block meets the absolute bound, so the max (and the RMS) over blocks does too
    block_spec = ErrorSpec(tol_abs, spec.s, Mode.ABS) if spec.mode is Mode.REL else spec
    plan = plan_chunks(shape, data.dtype, chunk_mem) if chunk_mem else whole_array_plan(shape, data.dtype)
    multi = len(plan) > 1
    if not multi:
        block_spec = spec

    def work(ranges):
        sub = np.array(data[_block_slices(ranges)])
        c = compressor.compress(sub, block_spec, grid.subgrid(ranges), codec_id, store_coords=True if multi else None)
        return c.to_bytes()

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        blobs = list(pool.map(work, plan.blocks))
    write_blocks(output_path, blobs)
    return len(blobs)


def _block_layout(containers):
    if len(containers) == 1:
        c = containers[0]
        return c.shape, [tuple((0, n) for n in c.shape)]
    axes = []
    for a in range(len(containers[0].shape)):
        axes.append(np.unique(np.concatenate([c.coords[a] for c in containers])))
    shape = tuple(x.size for x in axes)
    layout = []
    for c in containers:
        lo = [int(np.searchsorted(x, c.coords[a][0])) for a, x in enumerate(axes)]
        layout.append(tuple((l, l + n) for l, n in zip(lo, c.shape)))
    return shape, layout


def decompress_file(input_path, output_path) -> tuple[tuple[int, ...], np.dtype]:
    buf = Path(input_path).read_bytes()
    blobs = read_blocks(buf)
    containers = [compressor.CompressedContainer.from_bytes(b) for b in blobs]
    if len(containers) > 1 and any(c.coords is None for c in containers):
        raise CorruptStream("multi-block file without block coordinates")
    shape, layout = _block_layout(containers)
    dtype = np.dtype(containers[0].dtype).newbyteorder("<")
    out = np.memmap(output_path, dtype=dtype, mode="w+", shape=shape)

    def work(i):
        out[_block_slices(layout[i])] = compressor.decompress(containers[i])

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        list(pool.map(work, range(len(containers))))
    out.flush()
    del out
    return shape, dtype


def inspect_path(path) -> str:
    path = Path(path)
    if path.is_dir():
        m = open_store(path).manifest
        fields = {
            "format": "MGRS",
            "dtype": m.dtype,
            "ndims": m.ndims,
            "shape": "x".join(str(n) for n in m.shape),
            "coords": m.coords is not None,
            "nlevels": m.nlevels,
            "planes": m.planes,
            "exponents": ",".join("none" if e is None else str(e) for e in m.exponents),
            "counts": ",".join(str(n) for n in m.counts),
            "segments": len(m.segments),
            "store_bytes": sum(s.size for s in m.segments),
        }
        return compressor.format_inspect(fields)
    buf = path.read_bytes()
    if buf[:4] == compressor.MAGIC:
        fields = compressor.inspect(buf)
        fields["file_bytes"] = len(buf)
        return compressor.format_inspect(fields)
    blobs = read_blocks(buf)
    text = compressor.format_inspect({"file_bytes": len(buf), "blocks": len(blobs)})
    for i, blob in enumerate(blobs):
        text += compressor.format_inspect(compressor.inspect(blob), prefix=f"block{i}.")
    return text


def _cmd_compress(args):
    n = compress_file(args.input, args.output, args.shape, args.dtype, _spec(args), args.codec,
                      parse_size(args.chunk_mem) if args.chunk_mem else None,
                      _load_coords(args.coords, args.shape))
    in_bytes = Path(args.input).stat().st_size
    out_bytes = Path(args.output).stat().st_size
    print(f"blocks: {n}\nin_bytes: {in_bytes}\nout_bytes: {out_bytes}\nratio: {in_bytes / out_bytes:.4f}")


def _cmd_decompress(args):
    shape, dtype = decompress_file(args.input, args.output)
    print(f"shape: {'x'.join(map(str, shape))}\ndtype: {'f32' if dtype.itemsize == 4 else 'f64'}")


def _cmd_refactor(args):
    data = np.array(open_raw(args.input, args.shape, args.dtype))
    grid = TensorGrid(args.shape, _load_coords(args.coords, args.shape))
    store = refactor(data, grid, args.planes)
    store.write(args.output)
    print(f"segments: {len(store.files)}\nstore_bytes: {sum(len(v) for v in store.files.values())}")


def _cmd_recompose(args):
    store = open_store(args.store)
    m = store.manifest
    state = None
    if args.state and Path(args.state).exists():
        state = RetrievalState.from_json(Path(args.state).read_text(encoding="utf-8"), m)
    spec = _spec(args)
    try:
        plan = request(m, spec, state)
    except UnsatisfiableTolerance as exc:
        print(f"warning: UnsatisfiableTolerance: {exc}; using best effort", file=sys.stderr)
        plan = exc.request
    data, state = reconstruct(store, plan.segments, state)
    data.astype(data.dtype.newbyteorder("<")).tofile(args.output)
    if args.state:
        Path(args.state).write_text(state.to_json(m), encoding="utf-8")
    est = state.estimate(m, spec.s).value
    print(
        f"segments_fetched: {len(plan.segments)}\nbytes_fetched: {plan.nbytes}\n"
        f"total_bytes_fetched: {state.bytes_fetched}\nestimate: {est!r}\ntol_abs: {plan.tol_abs!r}"
    )


def _cmd_inspect(args):
    sys.stdout.write(inspect_path(args.path))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgrc", description="Error-bounded multilevel compression and refactoring.")
    sub = p.add_subparsers(dest="command", required=True)

    def raw_input(sp):
        sp.add_argument("--input", required=True, help="raw little-endian array file")
        sp.add_argument("--dtype", choices=sorted(DTYPES), required=True)
        sp.add_argument("--shape", type=parse_shape, required=True, help="e.g. 129x129")
        sp.add_argument("--coords", help="f64 file with the coordinates of every axis, concatenated")

    def tolerance(sp):
        sp.add_argument("--tol", type=float, required=True)
        sp.add_argument("--s", type=parse_s, default=math.inf, help="'inf' for max norm, or a finite smoothness")
        sp.add_argument("--mode", choices=("abs", "rel"), default="abs")

    c = sub.add_parser("compress", help="compress a raw array")
    raw_input(c)
    tolerance(c)
    c.add_argument("--codec", type=int, choices=lossless.CODECS, default=lossless.HUFFMAN)
    c.add_argument("--chunk-mem", help="per-block memory budget, e.g. 1MiB")
    c.add_argument("--output", required=True)
    c.set_defaults(func=_cmd_compress)

    d = sub.add_parser("decompress", help="decompress to a raw array")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.set_defaults(func=_cmd_decompress)

    r = sub.add_parser("refactor", help="write a progressive bitplane store")
    raw_input(r)
    r.add_argument("--planes", type=int, default=DEFAULT_PLANES)
    r.add_argument("--output", required=True, help="store directory")
    r.set_defaults(func=_cmd_refactor)

    rc = sub.add_parser("recompose", help="reconstruct from a store to a tolerance")
    rc.add_argument("--store", required=True)
    tolerance(rc)
    rc.add_argument("--state", help="retrieval state file, read if present and updated")
    rc.add_argument("--output", required=True)
    rc.set_defaults(func=_cmd_recompose)

    i = sub.add_parser("inspect", help="print container or store metadata")
    i.add_argument("path")
    i.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MgrcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_LIBRARY
    except (ValueError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_LIBRARY
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
