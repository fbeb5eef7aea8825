import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from depthmix import CameraIntrinsics, DepthMap


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_depth(rng, h=12, w=16, lo=0.5, hi=20.0, hole_fraction=0.0):
    vals = rng.uniform(lo, hi, size=(h, w))
    valid = np.ones((h, w), dtype=bool)
    if hole_fraction > 0:
        valid &= rng.random((h, w)) >= hole_fraction
        if valid.sum() < 2:  # keep maps usable
            valid[0, 0] = valid[-1, -1] = True
    return DepthMap(np.where(valid, vals, 0.0), valid)


def ramp_depth(h=12, w=16, lo=1.0, hi=10.0):
    row = np.linspace(lo, hi, w)
    return DepthMap.from_values(np.tile(row, (h, 1)))


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0)
