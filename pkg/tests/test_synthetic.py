import numpy as np
import pytest

from binofeat.geometry import Se3Pose, backproject
from binofeat.synthetic import DESK_K, QVGA_K, box_scene, make_pairs, render, straight_path


def test_back_wall_depth_is_exact():
    gray, depth = render(Se3Pose.identity(), QVGA_K, box_scene(0))
    assert depth[120, 160] == pytest.approx(2.0, abs=1e-12)
    assert gray.min() >= 0 and gray.max() <= 1


def test_rendered_points_lie_on_planes():
    pose = Se3Pose(np.eye(3), [0.3, -0.2, 0.1])
    _, depth = render(pose, DESK_K, box_scene(1))
    v, u = np.mgrid[0:128:7, 0:160:7]
    z = depth[v, u]
    assert np.all(z > 0)
    pts = pose.apply(backproject(np.stack([u.ravel(), v.ravel()], 1), z.ravel(), DESK_K))
    # every point sits on the back wall (Z=2), the floor (Y=1) or the left wall (X=-1.6)
    on = (np.abs(pts[:, 2] - 2.0) < 1e-9) | (np.abs(pts[:, 1] - 1.0) < 1e-9) | (np.abs(pts[:, 0] + 1.6) < 1e-9)
    assert on.all()


def test_pairs_are_seeded_and_supervised():
    a = make_pairs(2, seed=5)
    b = make_pairs(2, seed=5)
    assert np.array_equal(a[1][1].gray, b[1][1].gray)
    assert all(f.gt_pose is not None for p in a for f in p)
    assert a[0][0].gray.shape == (128, 160)


def test_straight_path_length():
    poses = straight_path(11, length=0.5)
    assert np.linalg.norm(poses[-1].translation - poses[0].translation) == pytest.approx(0.5)
