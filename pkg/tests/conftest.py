import numpy as np
import pytest

from rcmcalib.geom import RigidTransform, compose, invert


def random_transform(rng, trans_scale=100.0, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    return RigidTransform.from_axis_angle(axis, angle, rng.normal(scale=trans_scale, size=3))


def rotation_error(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle between the two rotations."""
    return compose(invert(a), b).rotation_angle()


def translation_error(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.trans - b.trans))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
