"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also repeated in the
terminal summary) with its measured runtime against the runtime limit.
"""
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import FIELD_KINDS, GOLDEN, make_field
from oracles import cheapest_satisfying_state, log_uniform_tolerance, random_manifest_params
from reference import (
    BASELINES,
    golden_container,
    golden_store,
    parity_measurements,
    ratio_measurement,
)
from mgrc import cli
from mgrc.chunking import plan_chunks, read_blocks
from mgrc.compressor import CompressedContainer, compress, decompress, format_inspect, inspect
from mgrc.error_control import ErrorSpec, Mode, absolute_tolerance
from mgrc.errors import ChecksumMismatch, CorruptStream
from mgrc.grid import TensorGrid, build_hierarchy
from mgrc.lossless import CODECS, lossless_decode, lossless_encode
from mgrc.refactor import DirectoryStore, decode_segment, plan_greedy, recompose, reconstruct, refactor
from mgrc.transform import forward, inverse

INF = math.inf
RESULTS = []


@contextmanager
def criterion(number, title, limit_s):
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = elapsed < limit_s
        status = "PASS" if ok and within else "FAIL"
        line = f"{status} criterion {number}: {title} ({elapsed:.1f}s, limit {limit_s:.0f}s)"
        RESULTS.append(line)
        print(line)
    assert within, f"runtime {elapsed:.1f}s exceeds {limit_s}s"


def test_1_transform_round_trip():
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0.0, 1.0, 17))
    x[0], x[-1] = 0.0, 1.0
    grids = [TensorGrid(s) for s in [(17,), (33, 33), (9, 5), (17, 33, 5)]] + [TensorGrid([17], [x])]
    with criterion(1, "transform round trip, relative max error <= 1e-10", 10):
        worst = 0.0
        for grid in grids:
            h = build_hierarchy(grid)
            for _ in range(50):
                u = rng.standard_normal(grid.shape) * 10.0 ** rng.uniform(-3, 3)
                back = inverse(forward(u, h))
                worst = max(worst, float(np.max(np.abs(back - u)) / np.max(np.abs(u))))
        assert worst <= 1e-10, worst


CORPUS_SHAPES = [(65,), (65, 65), (17, 33, 9), (9, 9, 5, 5), (65, 65, 65)]


def test_2_error_bound_soundness():
    rng = np.random.default_rng(2)
    with criterion(2, "compression error bound over the corpus, 100% within bound", 180):
        failures = []
        for kind in FIELD_KINDS:
            for shape in CORPUS_SHAPES:
                u = make_field(kind, shape, rng)
                for tol in (1e-1, 1e-2, 1e-3, 1e-5):
                    for s in (INF, 0.0):
                        spec = ErrorSpec(tol, s, Mode.REL)
                        out = decompress(compress(u, spec).to_bytes())
                        err = u - out
                        if s == INF:
                            achieved = float(np.max(np.abs(err)))
                            bound = tol * float(np.ptp(u))
                        else:
                            achieved = float(np.sqrt(np.mean(err**2)))
                            bound = tol * float(np.sqrt(np.mean(u**2)))
                        if achieved > bound:
                            failures.append((kind, shape, tol, s, achieved, bound))
        assert not failures, failures[:5]


def _random_ints(rng):
    n = int(rng.integers(0, 300))
    style = int(rng.integers(0, 5))
    if style == 0:
        return rng.integers(-3, 4, n)
    if style == 1:
        return rng.integers(-(2**62), 2**62, n)
    if style == 2:
        return np.round(rng.laplace(0, 10.0 ** rng.uniform(0, 6), n)).astype(np.int64)
    if style == 3:
        return np.full(n, int(rng.integers(-(2**40), 2**40)))
    return np.where(rng.random(n) < 0.95, 0, rng.integers(-(2**20), 2**20, n))


def test_3_lossless_layer(tmp_path):
    rng = np.random.default_rng(3)
    with criterion(3, "lossless round trips and corruption detection", 30):
        for _ in range(10_000):
            values = _random_ints(rng).astype(np.int64)
            for codec in CODECS:
                back = lossless_decode(lossless_encode(values, codec))
                assert back.dtype == np.int64 and np.array_equal(back, values)
        u = make_field("smooth_noise", (33, 17), rng)
        container = compress(u, ErrorSpec(1e-3, INF, Mode.REL)).to_bytes()
        header = len(container) - len(CompressedContainer.from_bytes(container).payload)
        store = refactor(u, planes=8)
        segments = [(k, v, len(v) // 2) for k, v in store.files.items() if len(v) > 12]
        detected = 0
        for i in range(1000):
            if i % 2 == 0:
                buf = bytearray(container)
                if i % 4 == 0:
                    pos = int(rng.integers(header, len(buf)))
                    buf[pos] ^= 1 << int(rng.integers(0, 8))
                else:
                    buf = buf[: int(rng.integers(0, len(buf)))]
                try:
                    decompress(bytes(buf))
                except (CorruptStream, ChecksumMismatch):
                    detected += 1
            else:
                (level, plane), data, _ = segments[int(rng.integers(0, len(segments)))]
                buf = bytearray(data)
                if i % 4 == 1:
                    pos = int(rng.integers(0, len(buf)))
                    buf[pos] ^= 1 << int(rng.integers(0, 8))
                else:
                    buf = buf[: int(rng.integers(0, len(buf)))]
                expected = (2 if plane == 0 else 1) * store.manifest.counts[level]
                try:
                    decode_segment(bytes(buf), expected)
                except (CorruptStream, ChecksumMismatch):
                    detected += 1
        assert detected == 1000, detected


def test_4_progressive_refactoring():
    rng = np.random.default_rng(4)
    with criterion(4, "progressive retrieval: monotone error, sound estimator, full-retrieval bound", 120):
        for _ in range(200):
            nd = int(rng.integers(1, 4))
            shape = tuple(int(rng.integers(2, 34 if nd < 3 else 18)) for _ in range(nd))
            kind = ("smooth", "smooth_noise", "noise", "spike")[int(rng.integers(0, 4))]
            u = make_field(kind, shape, rng)
            B = int(rng.choice([16, 32]))
            store = refactor(u, planes=B)
            m = store.manifest
            tols = 10.0 ** (-rng.uniform(0.5, 2) - np.cumsum(rng.uniform(1, 1.5, int(rng.integers(2, 6)))))
            state, prev = None, INF
            for tol in tols:
                r, state, _ = recompose(store, ErrorSpec(float(tol), INF, Mode.REL), state)
                err = float(np.max(np.abs(r - u)))
                assert err <= state.estimate(m).value
                assert err <= prev
                prev = err
            segs = [(l, p) for p in range(B) for l in range(m.nlevels + 1) if p >= state.fetched[l]]
            _, full = reconstruct(store, segs, state)
            h = build_hierarchy(TensorGrid(shape))
            c = forward(u, h).values.ravel()
            for l, pos in enumerate(h.level_positions):
                e = m.exponents[l]
                if e is None:
                    assert np.all(c[pos] == 0)
                    continue
                sign = np.where(full.negative[l], -1.0, 1.0)
                approx = sign * np.ldexp(full.magnitudes[l].astype(np.float64), e - B)
                assert np.max(np.abs(approx - c[pos])) <= 2.0 ** (e - B + 1)


def test_5_greedy_margin():
    rng = np.random.default_rng(5)
    with criterion(5, "greedy plan within one segment of the byte-minimal plan", 60):
        for _ in range(1500):
            L, B, d, exps, counts, sizes, s = random_manifest_params(rng, max_levels=2, max_planes=4)
            tol = log_uniform_tolerance(rng, exps, counts, d, B, s)
            order, trace = plan_greedy([0] * (L + 1), exps, counts, sizes, d, B, s, tol)
            best_bytes, _ = cheapest_satisfying_state(exps, counts, sizes, d, B, s, tol)
            got = sum(sizes[l][p] for l, p in order)
            largest = max((sizes[l][p] for l, p in order), default=0)
            assert got <= best_bytes + largest, (got, best_bytes, largest)


def test_6_compress_refactor_parity():
    baseline = json.loads(BASELINES.read_text())["parity"]
    with criterion(6, "compress/refactor parity at 1e-3 REL INF, bytes regression-guarded", 120):
        measured = parity_measurements()
        assert measured.keys() == baseline.keys()
        for key, row in measured.items():
            assert row["container_error"] <= row["tol_abs"]
            assert row["retrieval_error"] <= row["tol_abs"]
            assert row["container_bytes"] <= baseline[key]["container_bytes"], key
            assert row["retrieval_bytes"] <= baseline[key]["retrieval_bytes"], key


def test_7_chunk_transparency(tmp_path, monkeypatch):
    u = make_field("smooth_noise", (1024, 1024), np.random.default_rng(7))
    src = tmp_path / "u.bin"
    u.tofile(src)
    base = ["compress", "--input", src, "--dtype", "f64", "--shape", "1024x1024",
            "--tol", "1e-3", "--s", "inf", "--mode", "rel"]
    with criterion(7, "chunked vs unchunked CLI runs on 1024x1024", 60):
        tol_abs = absolute_tolerance(ErrorSpec(1e-3, INF, Mode.REL), u)
        outputs = {}
        for name, extra, threads in [("whole", [], "4"), ("chunk1", ["--chunk-mem", "2MiB"], "1"),
                                     ("chunk4", ["--chunk-mem", "2MiB"], "4")]:
            monkeypatch.setenv("MGRC_THREADS", threads)
            out = tmp_path / f"{name}.mgrc"
            assert cli.main([str(a) for a in base + extra + ["--output", out]]) == 0
            assert cli.main(["decompress", "--input", str(out), "--output", str(tmp_path / f"{name}.bin")]) == 0
            v = np.fromfile(tmp_path / f"{name}.bin", dtype="<f8").reshape(u.shape)
            assert float(np.max(np.abs(u - v))) <= tol_abs
            outputs[name] = out.read_bytes()
        assert outputs["chunk1"] == outputs["chunk4"]
        blobs = read_blocks(outputs["chunk1"])
        plan = plan_chunks(u.shape, u.dtype, 2 << 20)
        assert len(blobs) == len(plan) >= 4
        # every chunked block is exactly an independent run on that block at the shared tolerance
        for blob, block in zip(blobs, plan.blocks):
            sub = u[tuple(slice(lo, hi) for lo, hi in block)]
            ref = compress(sub, ErrorSpec(tol_abs, INF, Mode.ABS))
            assert CompressedContainer.from_bytes(blob).payload == ref.payload


def test_8_ratio_sanity():
    baseline = json.loads(BASELINES.read_text())["ratio_129x129"]
    with criterion(8, "129x129 multisine ratio > 1 and within 5% of baseline", 30):
        ratio = ratio_measurement()
        assert ratio > 1
        assert abs(ratio - baseline) <= 0.05 * baseline, (ratio, baseline)


def test_9_format_stability(tmp_path):
    with criterion(9, "golden container, store layout and inspect text", 30):
        buf = golden_container()
        assert buf == (GOLDEN / "container.mgrc").read_bytes()
        assert format_inspect(inspect(buf)) == (GOLDEN / "container_inspect.txt").read_text(encoding="utf-8")
        store = golden_store()
        store.write(tmp_path / "store")
        golden_files = sorted(p.name for p in (GOLDEN / "store").iterdir())
        assert golden_files == sorted(p.name for p in (tmp_path / "store").iterdir())
        for name in golden_files:
            assert (tmp_path / "store" / name).read_bytes() == (GOLDEN / "store" / name).read_bytes(), name
        text = cli.inspect_path(GOLDEN / "store")
        assert text == (GOLDEN / "store_inspect.txt").read_text(encoding="utf-8")
        assert DirectoryStore(GOLDEN / "store").manifest.fingerprint() == store.manifest.fingerprint()
