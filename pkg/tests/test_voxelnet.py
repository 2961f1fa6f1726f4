"""Point branch: permutation symmetry and the back-projection reshape."""

import numpy as np

from pixelvoxel.autodiff import Tensor
from pixelvoxel.geometry import CameraIntrinsics, PointCloud
from pixelvoxel.voxelnet import (
    VoxelNet,
    VoxelNetConfig,
    cloud_to_tensor,
    reshape_backproject,
)


def _net(num_classes=4):
    return VoxelNet(VoxelNetConfig(num_classes=num_classes),
                    rng=np.random.default_rng(3))


def _cloud_array(rng, n=64):
    xyz = rng.normal(size=(n, 3))
    xyz[:, 2] = np.abs(xyz[:, 2]) + 0.5
    rgb = rng.uniform(size=(n, 3))
    return np.hstack([xyz, rgb]).astype(np.float32)


class TestPermutationSymmetry:
    def test_global_feature_invariant(self, rng):
        net = _net()
        pts = _cloud_array(rng)
        perm = rng.permutation(len(pts))
        g1 = net.global_feature(Tensor(pts), train=False)
        g2 = net.global_feature(Tensor(pts[perm]), train=False)
        np.testing.assert_array_equal(g1.data, g2.data)

    def test_scores_permute_with_points(self, rng):
        net = _net()
        pts = _cloud_array(rng)
        perm = rng.permutation(len(pts))
        s1 = net.forward(Tensor(pts), train=False)
        s2 = net.forward(Tensor(pts[perm]), train=False)
        np.testing.assert_array_equal(s1.data[perm], s2.data)

    def test_output_shape(self, rng):
        net = _net(num_classes=5)
        out = net.forward(Tensor(_cloud_array(rng, 32)), train=False)
        assert out.data.shape == (32, 5)


class TestCloudToTensor:
    def test_layout_is_n_by_six(self, rng):
        xyz = rng.normal(size=(10, 3))
        xyz[:, 2] = 1.0
        cloud = PointCloud(xyz=xyz, rgb=rng.uniform(size=(10, 3)))
        t = cloud_to_tensor(cloud)
        assert t.data.shape == (10, 6)
        np.testing.assert_allclose(t.data[:, :3], xyz, atol=1e-6)


class TestReshapeBackproject:
    INTR = CameraIntrinsics(fx=10.0, fy=10.0, cx=1.5, cy=1.5,
                            width=4, height=4)

    def _cloud_at_pixels(self, uv, z):
        # invert the pinhole model so points land exactly on pixel centers
        uv = np.asarray(uv, dtype=float)
        z = np.asarray(z, dtype=float)
        x = (uv[:, 0] - self.INTR.cx) * z / self.INTR.fx
        y = (uv[:, 1] - self.INTR.cy) * z / self.INTR.fy
        xyz = np.stack([x, y, z], axis=1)
        return PointCloud(xyz=xyz, rgb=np.zeros((len(z), 3)))

    def test_scores_land_on_projected_pixels(self):
        cloud = self._cloud_at_pixels([(0, 0), (2, 1), (3, 3)], [1.0, 1.0, 1.0])
        scores = Tensor(np.arange(9, dtype=np.float32).reshape(3, 3))  # [n=3, c=3]
        out, mask, dropped = reshape_backproject(scores, cloud, self.INTR, 4, 4)
        assert dropped == 0
        assert mask[0, 0] == 1 and mask[1, 2] == 1 and mask[3, 3] == 1
        assert mask.sum() == 3
        np.testing.assert_allclose(out.data[:, 0, 0], [0, 1, 2])
        np.testing.assert_allclose(out.data[:, 1, 2], [3, 4, 5])

    def test_collision_keeps_nearest_point(self):
        cloud = self._cloud_at_pixels([(1, 1), (1, 1)], [2.0, 1.0])
        scores = Tensor(np.array([[10.0], [20.0]], dtype=np.float32))
        out, mask, dropped = reshape_backproject(scores, cloud, self.INTR, 4, 4)
        assert dropped == 0  # occluded, not out of frame
        assert mask.sum() == 1
        assert out.data[0, 1, 1] == 20.0  # z=1.0 wins

    def test_depth_tie_keeps_lowest_index(self):
        cloud = self._cloud_at_pixels([(1, 1), (1, 1)], [1.0, 1.0])
        scores = Tensor(np.array([[10.0], [20.0]], dtype=np.float32))
        out, _, _ = reshape_backproject(scores, cloud, self.INTR, 4, 4)
        assert out.data[0, 1, 1] == 10.0

    def test_out_of_frame_points_dropped(self):
        cloud = self._cloud_at_pixels([(1, 1), (9, 9)], [1.0, 1.0])
        scores = Tensor(np.zeros((2, 1), dtype=np.float32))
        _, mask, dropped = reshape_backproject(scores, cloud, self.INTR, 4, 4)
        assert dropped == 1
        assert mask.sum() == 1

    def test_gradient_routes_to_winner(self):
        cloud = self._cloud_at_pixels([(1, 1), (1, 1)], [2.0, 1.0])
        scores = Tensor(np.array([[10.0], [20.0]], dtype=np.float32),
                        requires_grad=True)
        out, _, _ = reshape_backproject(scores, cloud, self.INTR, 4, 4)
        from pixelvoxel import autodiff as ad
        ad.sum_all(out).backward()
        np.testing.assert_array_equal(scores.grad, [[0.0], [1.0]])
