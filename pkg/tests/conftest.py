import numpy as np
import pytest

from spatialcanvas.canvas import Canvas, Cells, InfoRow, build_frame
from spatialcanvas.geometry import Rect, validate_polygon

_ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record_acceptance(number: int, name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((number, name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] #{number} {name}: {detail}")


@pytest.fixture
def unit_square():
    return validate_polygon([[(0, 0), (1, 0), (1, 1), (0, 1)]])


@pytest.fixture
def unit_frame4():
    return build_frame(Rect.from_bounds(0, 0, 1, 1), 4, 4)


def square(x0, y0, x1, y1):
    return validate_polygon([[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]])


def random_cells(rng, shape, density=0.5, ids=(1, 2, 3)):
    """Random information matrices with small integer ids and dyadic fields."""
    rows = []
    for _ in range(3):
        if rng.random() < 0.2:
            rows.append(None)
            continue
        present = rng.random(shape) < density
        rows.append(InfoRow(
            present,
            rng.choice(np.asarray(ids, dtype=np.int64), size=shape),
            rng.integers(1, 4, size=shape).astype(float),
            rng.integers(-8, 9, size=shape) / 4.0,
        ))
    return Cells(tuple(rows), shape)


def random_canvas(rng, frame, max_side=None):
    """A canvas over a random window of ``frame``."""
    w = int(rng.integers(1, (max_side or frame.width) + 1))
    h = int(rng.integers(1, (max_side or frame.height) + 1))
    i0 = int(rng.integers(0, frame.width - w + 1))
    j0 = int(rng.integers(0, frame.height - h + 1))
    return Canvas(frame, random_cells(rng, (h, w)), (i0, j0))
