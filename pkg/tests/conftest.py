import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

from meevc.mesh import build_mesh, make_periodic_rect_mesh  # noqa: E402


def perturbed_crisscross(dx, dy, extent=(1.0, 1.3)):
    """One-cell crisscross mesh (4 triangles) with the centre vertex moved."""
    m = make_periodic_rect_mesh(1, 1, *extent, pattern="crisscross")
    v = m.vertices.copy()
    v[-1] += [dx * extent[0], dy * extent[1]]
    return build_mesh(v, m.triangles, extent)


TINY_MESHES = {
    "diag1x1": lambda: make_periodic_rect_mesh(1, 1, 1.0, 1.3, "diagonal"),
    "diag2x1": lambda: make_periodic_rect_mesh(2, 1, 1.0, 1.3, "diagonal"),
    "criss1x1": lambda: make_periodic_rect_mesh(1, 1, 1.0, 1.3, "crisscross"),
    "criss-skew": lambda: perturbed_crisscross(0.17, -0.11),
}


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


ACCEPTANCE = {}


def report_criterion(number, ok, detail):
    """Record one acceptance line; printed in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
