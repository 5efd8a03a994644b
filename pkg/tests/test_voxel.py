import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sc3d.oracle import finite_diff
from sc3d.voxel import (
    VoxelGrid,
    binarize,
    scatter_to_grid,
    stencil,
    trilinear_grad,
    trilinear_sample,
    unpad_index,
    voxel_iou,
    world_to_grid,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


def centre(grid, i, j, k):
    c = grid.centers()
    return np.array([c[i], c[j], c[k]])


@pytest.fixture
def random_grid(rng):
    return VoxelGrid(rng.uniform(size=(6, 6, 6)))


class TestGrid:
    @pytest.mark.parametrize("shape", [(2, 2, 3), (4, 4), (0, 0, 0)])
    def test_rejects_non_cube(self, shape):
        with pytest.raises(ValueError):
            VoxelGrid(np.zeros(shape))

    @pytest.mark.parametrize("bad", [-0.1, 1.5, np.nan])
    def test_rejects_out_of_range(self, bad):
        v = np.zeros((2, 2, 2))
        v[0, 1, 0] = bad
        with pytest.raises(ValueError):
            VoxelGrid(v)

    def test_flat_layout(self):
        g = VoxelGrid.from_flat(np.arange(8) / 8, 2)
        assert g.values[1, 0, 1] == 5 / 8

    def test_centres(self):
        np.testing.assert_allclose(VoxelGrid.empty(4).centers(), [-0.375, -0.125, 0.125, 0.375])

    def test_world_to_grid(self):
        np.testing.assert_allclose(world_to_grid([-0.5, 0.0, 0.5], 4), [-0.5, 1.5, 3.5])


class TestTrilinear:
    def test_centre_identity(self, random_grid):
        assert trilinear_sample(random_grid, centre(random_grid, 1, 4, 2)) == pytest.approx(random_grid.values[1, 4, 2], abs=1e-14)

    def test_midpoint(self):
        v = np.zeros((4, 4, 4))
        v[2, 1, 1] = 1.0
        g = VoxelGrid(v)
        p = 0.5 * (centre(g, 1, 1, 1) + centre(g, 2, 1, 1))
        assert trilinear_sample(g, p) == pytest.approx(0.5)

    def test_far_outside(self, random_grid):
        assert trilinear_sample(random_grid, [2, 2, 2]) == 0.0

    def test_decays_to_zero_half_voxel_out(self):
        g = VoxelGrid.full(4)
        assert trilinear_sample(g, [0.5 + 0.125, 0, 0]) == 0.0
        assert trilinear_sample(g, [0.5, 0, 0]) == pytest.approx(0.5)

    def test_grad_at_centre(self, random_grid):
        pairs, _ = trilinear_grad(random_grid, centre(random_grid, 2, 3, 1))
        nonzero = [(i, w) for i, w in pairs if w != 0]
        assert nonzero == [((2 * 6 + 3) * 6 + 1, 1.0)]

    def test_constant_field_flat(self):
        _, d = trilinear_grad(VoxelGrid.full(5, 0.3), [0.03, -0.11, 0.07])
        np.testing.assert_allclose(d, 0.0, atol=1e-14)

    def test_point_grad_finite_difference(self, random_grid, rng):
        for _ in range(20):
            p = rng.uniform(-0.3, 0.3, size=3)
            _, d = trilinear_grad(random_grid, p)
            fd = finite_diff(lambda x: trilinear_sample(random_grid, x), p, 1e-6)
            np.testing.assert_allclose(d, fd, rtol=1e-5, atol=1e-9)

    def test_padding_corners_flagged(self):
        pairs, _ = trilinear_grad(VoxelGrid.full(4), [0.49, 0.0, 0.0])
        assert sum(1 for i, _ in pairs if i == -1) == 4
        assert all(w == 0 for i, w in pairs if i == -1)

    @given(arrays(np.float64, (3, 3, 3), elements=unit), arrays(np.float64, 3, elements=st.floats(-0.7, 0.7)))
    def test_weights_reproduce_sample(self, values, p):
        g = VoxelGrid(values)
        pairs, _ = trilinear_grad(g, p)
        total = sum(w * g.flat()[i] for i, w in pairs if i >= 0)
        assert total == pytest.approx(trilinear_sample(g, p), abs=1e-12)
        assert all(w >= 0 for _, w in pairs)

    @given(arrays(np.float64, (3, 3, 3), elements=unit), arrays(np.float64, 3, elements=st.floats(-0.7, 0.7)),
           arrays(np.float64, 3, elements=st.floats(-1, 1)))
    def test_lipschitz(self, values, p, direction):
        g = VoxelGrid(values)
        delta = 1e-3
        n = np.linalg.norm(direction)
        q = p + (direction / n if n > 1e-9 else np.array([1.0, 0, 0])) * delta
        L = g.dim * max(values.max(), 1e-12)
        # sup-norm Lipschitz bound per axis, so the Euclidean bound carries sqrt(3)
        assert abs(trilinear_sample(g, p) - trilinear_sample(g, q)) <= np.sqrt(3) * L * delta + 1e-12

    @given(arrays(np.float64, (3, 3, 3), elements=st.floats(0, 0.9)), st.integers(0, 26),
           arrays(np.float64, 3, elements=st.floats(-0.6, 0.6)))
    def test_monotone_in_values(self, values, idx, p):
        g = VoxelGrid(values)
        bumped = values.copy()
        bumped.reshape(-1)[idx] += 0.1
        assert trilinear_sample(VoxelGrid(bumped), p) >= trilinear_sample(g, p) - 1e-15

    def test_vectorised(self, random_grid, rng):
        pts = rng.uniform(-0.6, 0.6, size=(5, 7, 3))
        batch = trilinear_sample(random_grid, pts)
        assert batch.shape == (5, 7)
        assert batch[3, 2] == pytest.approx(trilinear_sample(random_grid, pts[3, 2]))


class TestStencil:
    def test_scatter_inverts_index(self, rng):
        dim = 5
        pts = rng.uniform(-0.6, 0.6, size=(40, 3))
        st_ = stencil(VoxelGrid.empty(dim), pts)
        acc = scatter_to_grid(st_.index, st_.weight, dim).reshape(-1)
        flat = unpad_index(st_.index, dim)
        ref = np.zeros(dim**3)
        np.add.at(ref, flat[flat >= 0], st_.weight[flat >= 0])
        np.testing.assert_allclose(acc, ref, atol=1e-14)

    def test_outside_has_zero_weight(self):
        st_ = stencil(VoxelGrid.full(3), np.array([[3.0, 0, 0]]))
        assert st_.value[0] == 0.0 and np.all(st_.weight == 0) and np.all(st_.d_point == 0)


class TestBinarize:
    def test_above(self):
        assert binarize(VoxelGrid.full(3, 0.6)) == VoxelGrid.full(3)

    def test_below(self):
        assert binarize(VoxelGrid.full(3, 0.4)) == VoxelGrid.empty(3)

    def test_pattern(self, rng):
        pattern = rng.uniform(size=(4, 4, 4)) < 0.5
        g = VoxelGrid(np.where(pattern, 0.8, 0.2))
        np.testing.assert_array_equal(binarize(g).values, pattern.astype(float))

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            binarize(VoxelGrid.empty(2), 1.0)


class TestIoU:
    def test_same(self, rng):
        g = VoxelGrid((rng.uniform(size=(4, 4, 4)) < 0.5).astype(float))
        assert voxel_iou(g, g) == 1.0

    def test_disjoint(self):
        a, b = np.zeros((2, 2, 2)), np.zeros((2, 2, 2))
        a[0], b[1] = 1, 1
        assert voxel_iou(VoxelGrid(a), VoxelGrid(b)) == 0.0

    def test_counting(self):
        a, b = np.zeros(27), np.zeros(27)
        a[:7] = 1
        b[3:10] = 1
        assert voxel_iou(VoxelGrid.from_flat(a, 3), VoxelGrid.from_flat(b, 3)) == pytest.approx(0.4)

    def test_both_empty(self):
        assert voxel_iou(VoxelGrid.empty(2), VoxelGrid.empty(2)) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            voxel_iou(VoxelGrid.empty(2), VoxelGrid.empty(3))
