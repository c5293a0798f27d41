"""Reference-run artifacts: golden files and regression baselines.

Run ``python3 tests/reference.py`` to regenerate tests/golden/ and
tests/baselines.json after an intentional format or algorithm change.
"""
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

from conftest import GOLDEN, make_field  # noqa: E402
from mgrc.cli import inspect_path  # noqa: E402
from mgrc.compressor import compress, decompress, format_inspect, inspect  # noqa: E402
from mgrc.error_control import ErrorSpec, Mode  # noqa: E402
from mgrc.refactor import RefactoredStore, recompose, refactor  # noqa: E402

BASELINES = HERE / "baselines.json"
SEED = 7
PARITY_SHAPES = [(129,), (65, 65), (33, 33, 33), (17, 9, 9, 5)]
RATIO_SHAPE = (129, 129)


def golden_container() -> bytes:
    u = make_field("smooth_noise", (17, 9), np.random.default_rng(SEED))
    return compress(u, ErrorSpec(1e-3, math.inf, Mode.REL)).to_bytes()


def golden_store() -> RefactoredStore:
    u = make_field("smooth_noise", (9, 9), np.random.default_rng(SEED))
    return refactor(u, planes=8)


def parity_measurements() -> dict:
    spec = ErrorSpec(1e-3, math.inf, Mode.REL)
    out = {}
    for shape in PARITY_SHAPES:
        u = make_field("smooth", shape, None)
        container = compress(u, spec).to_bytes()
        store = refactor(u)
        r, _, plan = recompose(store, spec)
        key = "x".join(map(str, shape))
        out[key] = {
            "container_bytes": len(container),
            "retrieval_bytes": plan.nbytes,
            "container_error": float(np.max(np.abs(u - decompress(container)))),
            "retrieval_error": float(np.max(np.abs(u - r))),
            "tol_abs": 1e-3 * float(np.ptp(u)),
        }
    return out


def ratio_measurement() -> float:
    u = make_field("smooth", RATIO_SHAPE, None)
    return u.nbytes / len(compress(u, ErrorSpec(1e-3, math.inf, Mode.REL)).to_bytes())


def write_all() -> None:
    GOLDEN.mkdir(exist_ok=True)
    buf = golden_container()
    (GOLDEN / "container.mgrc").write_bytes(buf)
    (GOLDEN / "container_inspect.txt").write_text(format_inspect(inspect(buf)), encoding="utf-8")
    store_dir = GOLDEN / "store"
    if store_dir.exists():
        shutil.rmtree(store_dir)
    golden_store().write(store_dir)
    (GOLDEN / "store_inspect.txt").write_text(inspect_path(store_dir), encoding="utf-8")
    baselines = {"parity": parity_measurements(), "ratio_129x129": ratio_measurement()}
    BASELINES.write_text(json.dumps(baselines, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    write_all()
    print(BASELINES.read_text())
