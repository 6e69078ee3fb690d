import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from losray.scene import Building, SceneModel  # noqa: E402

SQUARE = ((10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0))


def make_scene(*footprints, size=64, heights=None, materials=None):
    bs = []
    for k, fp in enumerate(footprints):
        h = 20.0 if heights is None else heights[k]
        mat = 0 if materials is None else materials[k]
        bs.append(Building(tuple(fp), h, mat))
    return SceneModel(size, size, 1.0, tuple(bs))


@pytest.fixture
def square_scene():
    return make_scene(SQUARE)


# ---------------------------------------------------------------- acceptance report
ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
