import numpy as np
import pytest

from fields.grid import (
    BACKGROUND, EDEMA, PARENCHYMA, SKULL, DisplacementField, GridSpec, LabelVolume, Volume,
    check_same_grid,
)
from fields.jacobian import interior_mask, jacobian_determinant, jacobian_matrix
from fields.sampling import mask_field, trilinear_sample, warp_binary, warp_image, warp_mask
from utils.errors import GridMismatchError, ValidationError


class TestGridSpec:
    def test_rejects_small_dims(self):
        with pytest.raises(ValidationError):
            GridSpec((1, 4, 4))

    def test_rejects_non_positive_spacing(self):
        with pytest.raises(ValidationError):
            GridSpec((4, 4, 4), (1.0, 0.0, 1.0))

    def test_world_index_roundtrip(self, aniso_grid):
        index = np.array([[0, 0, 0], [9, 11, 8], [3.5, 2.25, 1.0]])
        world = aniso_grid.index_to_world(index)
        np.testing.assert_allclose(aniso_grid.world_to_index(world), index)

    def test_contains_edges(self, aniso_grid):
        upper = aniso_grid.index_to_world(np.array(aniso_grid.dims) - 1)
        assert aniso_grid.contains(np.asarray(aniso_grid.origin))
        assert aniso_grid.contains(upper)
        assert not aniso_grid.contains(upper + 1e-6)

    def test_padding_to_multiple(self):
        grid = GridSpec((48, 50, 33))
        assert grid.padding_to_multiple(4) == (0, 2, 3)
        assert grid.padded((0, 2, 3)).dims == (48, 52, 36)

    def test_dict_roundtrip(self, aniso_grid):
        assert GridSpec.from_dict(aniso_grid.to_dict()) == aniso_grid

    def test_check_same_grid(self, small_grid, aniso_grid):
        check_same_grid("same", small_grid, GridSpec((8, 8, 8)))
        with pytest.raises(GridMismatchError):
            check_same_grid("other", small_grid, aniso_grid)


class TestVolumes:
    def test_volume_shape_checked(self, small_grid):
        with pytest.raises(ValidationError):
            Volume(small_grid, np.zeros((8, 8, 7)))

    def test_volume_non_finite(self, small_grid):
        data = np.zeros(small_grid.dims)
        data[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Volume(small_grid, data)

    def test_volume_is_read_only(self, small_grid):
        vol = Volume(small_grid, np.ones(small_grid.dims))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 2.0

    def test_unknown_label_code(self, small_grid):
        labels = np.zeros(small_grid.dims, dtype=np.uint8)
        labels[1, 2, 3] = 9
        with pytest.raises(ValidationError, match=r"\(1, 2, 3\)"):
            LabelVolume(small_grid, labels)

    def test_masks(self, cube_labels):
        assert not np.any(cube_labels.brain_mask() & (cube_labels.labels == SKULL))
        assert np.all(cube_labels.brain_mask()[cube_labels.healthy_mask()])
        assert cube_labels.counts()['tumor'] == 8

    def test_field_shape_checked(self, small_grid):
        with pytest.raises(ValidationError):
            DisplacementField(small_grid, np.zeros(small_grid.dims + (2,)))


class TestTrilinearSample:
    def test_exact_on_affine(self, aniso_grid):
        A = np.array([[0.1, -0.2, 0.05], [0.0, 0.3, 0.1], [-0.1, 0.02, 0.2]])
        b = np.array([1.0, -2.0, 0.5])
        field = DisplacementField.from_function(aniso_grid, lambda x: x @ A.T + b)
        rng = np.random.default_rng(0)
        idx = rng.uniform(0, np.array(aniso_grid.dims) - 1, size=(50, 3))
        points = aniso_grid.index_to_world(idx)
        np.testing.assert_allclose(trilinear_sample(field, points), points @ A.T + b, atol=1e-9)

    def test_voxel_center_returns_value(self, small_grid, rng):
        data = rng.normal(size=small_grid.dims)
        vol = Volume(small_grid, data)
        assert trilinear_sample(vol, small_grid.index_to_world([2, 3, 4])) == pytest.approx(data[2, 3, 4])

    def test_outside_is_zero(self, small_grid):
        vol = Volume(small_grid, np.ones(small_grid.dims))
        assert trilinear_sample(vol, np.array([-0.5, 1.0, 1.0])) == 0.0
        np.testing.assert_array_equal(trilinear_sample(vol, np.array([[100.0, 0, 0]])), [0.0])

    def test_non_finite_point(self, small_grid):
        vol = Volume(small_grid, np.ones(small_grid.dims))
        with pytest.raises(ValidationError):
            trilinear_sample(vol, np.array([np.inf, 0.0, 0.0]))


class TestWarp:
    def test_zero_field_is_identity(self, small_grid, rng):
        img = Volume(small_grid, rng.normal(size=small_grid.dims))
        out = warp_image(img, DisplacementField.zeros(small_grid))
        np.testing.assert_array_equal(out.data, img.data)

    def test_integer_shift(self, small_grid, rng):
        data = rng.normal(size=small_grid.dims)
        img = Volume(small_grid, data)
        shift = np.zeros(small_grid.dims + (3,))
        shift[..., 0] = 1.0
        out = warp_image(img, DisplacementField(small_grid, shift))
        np.testing.assert_allclose(out.data[:-1], data[1:])
        np.testing.assert_array_equal(out.data[-1], 0.0)

    def test_warp_mask_nearest(self, cube_labels):
        shift = np.zeros(cube_labels.grid.dims + (3,))
        shift[..., 2] = -1.0
        warped = warp_mask(cube_labels, DisplacementField(cube_labels.grid, shift))
        np.testing.assert_array_equal(warped.labels[:, :, 1:], cube_labels.labels[:, :, :-1])
        assert np.all(warped.labels[:, :, 0] == BACKGROUND)

    def test_warp_binary_matches_warp_mask(self, cube_labels, rng):
        vectors = rng.uniform(-1.5, 1.5, size=cube_labels.grid.dims + (3,))
        field = DisplacementField(cube_labels.grid, vectors)
        brain = cube_labels.brain_mask()
        expected = warp_mask(cube_labels, field).brain_mask()
        np.testing.assert_array_equal(warp_binary(brain, field), expected)

    def test_grid_mismatch(self, small_grid, aniso_grid):
        with pytest.raises(GridMismatchError):
            warp_image(Volume(small_grid, np.zeros(small_grid.dims)), DisplacementField.zeros(aniso_grid))

    def test_mask_field_zeroes_rigid(self, cube_labels):
        field = DisplacementField(cube_labels.grid, np.ones(cube_labels.grid.dims + (3,)))
        masked = mask_field(field, cube_labels)
        rigid = np.isin(cube_labels.labels, (BACKGROUND, SKULL))
        assert np.all(masked.vectors[rigid] == 0.0)
        assert np.all(masked.vectors[cube_labels.labels == PARENCHYMA] == 1.0)
        assert np.all(masked.vectors[cube_labels.labels == EDEMA] == 1.0)

    def test_mask_field_passes_tissue_through_and_is_idempotent(self, cube_labels, rng):
        vectors = rng.normal(size=cube_labels.grid.dims + (3,))
        field = DisplacementField(cube_labels.grid, vectors)
        before = field.vectors.tobytes()
        once = mask_field(field, cube_labels)
        twice = mask_field(once, cube_labels)
        tissue = ~np.isin(cube_labels.labels, (BACKGROUND, SKULL))
        assert tissue.any() and (~tissue).any()
        assert once.vectors[tissue].tobytes() == field.vectors[tissue].tobytes()
        assert twice.vectors.tobytes() == once.vectors.tobytes()
        assert field.vectors.tobytes() == before
        assert mask_field(field, cube_labels, zero_codes=()).vectors.tobytes() == before

    def test_mask_field_single_skull_voxel(self, small_grid):
        labels = np.full(small_grid.dims, PARENCHYMA, dtype=np.uint8)
        labels[3, 4, 5] = SKULL
        field = DisplacementField(small_grid, np.full(small_grid.dims + (3,), 0.5))
        masked = mask_field(field, LabelVolume(small_grid, labels))
        np.testing.assert_array_equal(masked.vectors[3, 4, 5], 0.0)
        assert np.count_nonzero(masked.vectors == 0.0) == 3


class TestJacobian:
    def test_identity(self, aniso_grid):
        det = jacobian_determinant(DisplacementField.zeros(aniso_grid)).data
        assert np.all(det == 1.0)

    def test_reflection(self, small_grid):
        field = DisplacementField.from_function(
            small_grid, lambda x: np.stack([-2.0 * x[..., 0], 0 * x[..., 1], 0 * x[..., 2]], axis=-1))
        det = jacobian_determinant(field).data
        np.testing.assert_allclose(det[interior_mask(small_grid)], -1.0, atol=1e-12)

    def test_isotropic_scaling(self, aniso_grid):
        det = jacobian_determinant(DisplacementField.from_function(aniso_grid, lambda x: 0.1 * x)).data
        np.testing.assert_allclose(det, 1.331, atol=1e-9)

    def test_affine(self, aniso_grid):
        A = np.array([[0.2, 0.1, 0.0], [-0.05, 0.1, 0.3], [0.0, -0.2, -0.1]])
        field = DisplacementField.from_function(aniso_grid, lambda x: x @ A.T + 3.0)
        det = jacobian_determinant(field).data
        expected = np.linalg.det(np.eye(3) + A)
        np.testing.assert_allclose(det[interior_mask(aniso_grid)], expected, rtol=1e-10)

    def test_matrix_layout(self, small_grid):
        # phi_0 = 0.5 * x_1 -> dJ[0, 1] = 0.5
        field = DisplacementField.from_function(
            small_grid, lambda x: np.stack([0.5 * x[..., 1], 0 * x[..., 0], 0 * x[..., 0]], axis=-1))
        jac = jacobian_matrix(field)
        np.testing.assert_allclose(jac[4, 4, 4], [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])

    def test_too_small(self):
        with pytest.raises(ValidationError):
            jacobian_determinant(DisplacementField.zeros(GridSpec((2, 5, 5))))

    def test_interior_mask(self, small_grid):
        mask = interior_mask(small_grid)
        assert mask.sum() == 6 ** 3
        assert not mask[0].any() and not mask[:, :, -1].any()
