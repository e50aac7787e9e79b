import math
import sys

import numpy as np
import pytest

from digital_siblings.road import RoadPolyline


def arc_points(cx, cy, radius, start, sweep, n):
    """``n`` points on a circle, from angle ``start`` sweeping ``sweep`` radians."""
    a = start + sweep * np.linspace(0.0, 1.0, n)
    return np.column_stack([cx + radius * np.cos(a), cy + radius * np.sin(a)])


def arc_polyline(radius, sweep, n=91, start=-math.pi / 2):
    return RoadPolyline.from_points(arc_points(0.0, radius, radius, start, sweep, n))


def straight_polyline(length=50.0, n=51, heading=0.0):
    s = np.linspace(0.0, length, n)
    return RoadPolyline.from_points(np.column_stack([s * math.cos(heading), s * math.sin(heading)]))


def s_curve_points(radius=20.0, n=46):
    """Quarter turn left followed by a quarter turn right, tangent-continuous."""
    left = arc_points(0.0, radius, radius, -math.pi / 2, math.pi / 2, n)
    # the left arc ends at (R, R) heading north; the right arc is centred at (2R, R)
    right = arc_points(2 * radius, radius, radius, math.pi, -math.pi / 2, n)
    return np.vstack([left, right[1:]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
