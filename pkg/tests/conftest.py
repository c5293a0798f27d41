from pathlib import Path

import numpy as np
import pytest

GOLDEN = Path(__file__).parent / "golden"

FIELD_KINDS = ("smooth", "smooth_noise", "noise", "constant", "spike")


def make_field(kind, shape, rng, dtype=np.float64):
    """Test corpus: multisine, multisine + 5% noise, white noise, constant, single spike."""
    axes = np.meshgrid(*[np.linspace(0.0, 1.0, n) for n in shape], indexing="ij")
    smooth = np.ones(shape)
    for k, x in enumerate(axes):
        smooth = smooth * np.sin(2.0 * np.pi * (k + 1) * x + 0.3 * k) + 0.5 * np.cos(3.0 * x)
    if kind == "smooth":
        u = smooth
    elif kind == "smooth_noise":
        u = smooth + 0.05 * np.ptp(smooth) * rng.standard_normal(shape)
    elif kind == "noise":
        u = rng.standard_normal(shape)
    elif kind == "constant":
        u = np.full(shape, 3.25)
    elif kind == "spike":
        u = np.zeros(shape)
        u[tuple(int(rng.integers(0, n)) for n in shape)] = 7.5
    else:
        raise ValueError(kind)
    return np.ascontiguousarray(u, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(20231015)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
