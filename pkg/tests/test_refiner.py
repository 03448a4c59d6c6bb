import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from fields.grid import DisplacementField, GridSpec, LabelVolume, Volume
from formats.documents import ManifestCase
from refiner.augmentation import adjust_gamma, augment
from refiner.losses import jacobian_determinant as torch_jacobian
from refiner.losses import loss
from refiner.model import RefinerConfig, RefinerModel, crop_field, normalize_image, pad_field
from refiner.network import ChannelSE, RefinerNetwork, ResidualBlock, SCSE, SpatialSE, receptive_field_radius
from refiner.trainer import RefinerTrainer, TrainingSample
from simulation.dataset import CaseData
from simulation.deformation import SimParams, simulate_deformation
from simulation.gravity import estimate_gravity
from utils.errors import ValidationError


def tiny_config(**overrides):
    values = dict(levels=2, base_channels=4, max_channels=8, augment=False, seed=5)
    values.update(overrides)
    return RefinerConfig(**values)


def label_image(labels):
    intensities = np.array([0.0, 0.9, 0.1, 0.6, 0.45, 0.3])
    return Volume(labels.grid, intensities[labels.labels])


def case_from_phantom(phantom, k=1):
    g = estimate_gravity(phantom)
    fields = [simulate_deformation(phantom, g, SimParams()) for _ in range(k)]
    case = ManifestCase(
        case_id="case_0000", index=0, seed=phantom.seed, split='train', image="", labels="",
        fields=[f"field_{i}" for i in range(k)], gravities=[g.tolist()] * k, base_gravity=g.tolist(),
        craniotomy_point=[0.0, 0.0, 0.0], tumor_center=phantom.tumor_center.tolist(),
        tumor_radius=phantom.tumor_radius, edema_thickness=phantom.edema_thickness)
    return CaseData(case, phantom.image, phantom.labels, fields)


def _objective_with_pattern(net, x, upstream):
    """Loss <net(x), upstream> plus the pattern of every kink and max-pool choice it went through"""
    pattern = []

    def record(module, inputs, output):
        if isinstance(module, nn.MaxPool3d):
            pattern.append(F.max_pool3d(inputs[0], 2, 2, return_indices=True)[1])
        elif isinstance(module, nn.Linear):
            pattern.append(output > 0)
        else:
            pattern.append(inputs[0] > 0)

    kinds = (nn.LeakyReLU, nn.MaxPool3d, nn.Linear)
    handles = [m.register_forward_hook(record) for m in net.modules() if isinstance(m, kinds)]
    try:
        with torch.no_grad():
            value = float((net(x) * upstream).sum())
    finally:
        for handle in handles:
            handle.remove()
    return value, pattern


def _same_pattern(a, b):
    return len(a) == len(b) and all(torch.equal(p, q) for p, q in zip(a, b))


def _functional_gradcheck(module, x):
    """gradcheck w.r.t. the input and every parameter of the module"""
    names = [name for name, _ in module.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in module.parameters())

    def apply(inp, *values):
        return functional_call(module, dict(zip(names, values)), (inp,))

    return torch.autograd.gradcheck(apply, (x, *params), eps=1e-6, atol=1e-5)


class TestNetworkGradients:
    @pytest.mark.parametrize("layer, channels", [
        (lambda: nn.Conv3d(2, 3, kernel_size=3, padding=1), 2),
        (lambda: nn.ConvTranspose3d(4, 2, kernel_size=2, stride=2), 4),
        (lambda: nn.InstanceNorm3d(3, eps=1e-5, affine=True), 3),
        (lambda: nn.LeakyReLU(1e-2), 2),
        (lambda: nn.MaxPool3d(kernel_size=2, stride=2), 2),
        (lambda: ChannelSE(4, 2), 4),
        (lambda: SpatialSE(4), 4),
        (lambda: SCSE(4, 2), 4),
        (lambda: ResidualBlock(4, 4), 4),
        (lambda: ResidualBlock(2, 4, use_scse=False), 2),
    ])
    def test_layer_gradcheck(self, layer, channels):
        torch.manual_seed(0)
        module = layer().double()
        x = torch.randn(1, channels, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        assert _functional_gradcheck(module, x)

    def test_network_gradcheck(self):
        torch.manual_seed(1)
        net = RefinerNetwork(levels=2, base_channels=2, max_channels=4, zero_head=False).double()
        x = torch.randn(1, 4, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        assert _functional_gradcheck(net, x)

    def test_parameter_gradients_match_finite_differences(self):
        torch.manual_seed(4)
        net = RefinerNetwork(levels=2, base_channels=2, max_channels=4, zero_head=False).double()
        x = torch.randn(1, 4, 16, 16, 16, dtype=torch.float64)
        upstream = torch.randn(1, 3, 16, 16, 16, dtype=torch.float64)
        net.zero_grad()
        (net(x) * upstream).sum().backward()

        named = list(net.named_parameters())
        # conv biases ahead of instance norm are removed by its mean subtraction
        cancelled = [p for name, p in named if name.endswith(('conv1.bias', 'conv2.bias'))]
        for p in cancelled:
            np.testing.assert_allclose(p.grad.numpy(), 0.0, atol=1e-9)
        checked_params = [(name, p) for name, p in named if not name.endswith(('conv1.bias', 'conv2.bias'))]

        sizes = np.array([p.numel() for _, p in checked_params])
        offsets = np.cumsum(sizes)
        _, reference = _objective_with_pattern(net, x, upstream)
        rng = np.random.default_rng(0)
        step, checked = 1e-4, 0
        for flat in rng.permutation(int(offsets[-1])):
            if checked == 50:
                break
            k = int(np.searchsorted(offsets, flat, side='right'))
            j = int(flat - (offsets[k - 1] if k else 0))
            name, p = checked_params[k]
            original = p.view(-1)[j].item()
            values = []
            for delta in (step, -step):
                with torch.no_grad():
                    p.view(-1)[j] = original + delta
                values.append(_objective_with_pattern(net, x, upstream))
            with torch.no_grad():
                p.view(-1)[j] = original
            # a kink or a different max-pool winner inside [-step, step] makes the difference meaningless
            if not all(_same_pattern(pattern, reference) for _, pattern in values):
                continue
            numeric = (values[0][0] - values[1][0]) / (2 * step)
            analytic = float(p.grad.view(-1)[j])
            rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            assert rel < 1e-5, (name, j, analytic, numeric)
            checked += 1
        assert checked == 50

    def test_zero_upstream_gives_zero_gradients(self):
        torch.manual_seed(6)
        net = RefinerNetwork(levels=2, base_channels=2, max_channels=4, zero_head=False).double()
        out = net(torch.randn(1, 4, 16, 16, 16, dtype=torch.float64))
        out.backward(torch.zeros_like(out))
        for name, p in net.named_parameters():
            assert p.grad is not None, name
            assert torch.count_nonzero(p.grad) == 0, name

    def test_instance_norm_statistics(self):
        torch.manual_seed(2)
        block = ResidualBlock(2, 4).double()
        out = block.norm1(block.conv1(torch.randn(1, 2, 6, 6, 6, dtype=torch.float64) * 3 + 1))
        np.testing.assert_allclose(out.mean(dim=(2, 3, 4)).detach().numpy(), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(dim=(2, 3, 4), unbiased=False).detach().numpy(), 1.0, atol=1e-3)


class TestReceptiveField:
    def test_single_voxel_change_stays_local(self):
        torch.manual_seed(3)
        levels = 2
        net = RefinerNetwork(levels=levels, base_channels=2, max_channels=4, norm='none',
                             use_scse=False, zero_head=False).double()
        x = torch.randn(1, 4, 32, 32, 32, dtype=torch.float64)
        bumped = x.clone()
        bumped[0, :, 16, 16, 16] += 1.0
        with torch.no_grad():
            diff = (net(bumped) - net(x)).abs().amax(dim=1)[0].numpy()
        changed = np.argwhere(diff > 0)
        assert len(changed) > 0
        radius = receptive_field_radius(levels)
        assert np.abs(changed - 16).max() <= radius


class TestRefinerModel:
    def test_identity_at_init(self, rng):
        model = RefinerModel(RefinerConfig())
        grid = GridSpec((8, 8, 8), (2.0, 2.0, 2.0))
        for _ in range(10):
            img = Volume(grid, rng.normal(size=grid.dims))
            phi = DisplacementField(grid, rng.normal(size=grid.dims + (3,)))
            out = model.forward(img, phi, np.ones(grid.dims, dtype=bool))
            np.testing.assert_array_equal(out.vectors, phi.vectors)

    def test_check_grid(self):
        model = RefinerModel(RefinerConfig(levels=3))
        model.check_grid(GridSpec((8, 12, 16)))
        with pytest.raises(ValidationError, match="divisible by 4"):
            model.check_grid(GridSpec((10, 12, 9)))

    def test_refine_pads_and_crops(self, aniso_grid, rng):
        model = RefinerModel(tiny_config(levels=3))
        labels = LabelVolume(aniso_grid, np.full(aniso_grid.dims, 3, dtype=np.uint8))
        img = Volume(aniso_grid, rng.normal(size=aniso_grid.dims))
        phi = DisplacementField(aniso_grid, rng.normal(size=aniso_grid.dims + (3,)))
        out, pad = model.refine(img, phi, labels)
        assert pad == (2, 0, 3)
        assert out.grid == aniso_grid
        np.testing.assert_array_equal(out.vectors, phi.vectors)

    def test_pad_crop(self, aniso_grid, rng):
        field = DisplacementField(aniso_grid, rng.normal(size=aniso_grid.dims + (3,)))
        padded = pad_field(field, (2, 0, 3))
        assert padded.grid.dims == (12, 12, 12)
        assert np.all(padded.vectors[10:] == 0)
        np.testing.assert_array_equal(crop_field(padded, aniso_grid).vectors, field.vectors)

    def test_normalize_image(self, cube_labels):
        img = label_image(cube_labels)
        brain = cube_labels.brain_mask()
        normalized = normalize_image(img, brain)
        assert normalized[brain].mean() == pytest.approx(0.0, abs=1e-12)
        assert normalized[brain].std() == pytest.approx(1.0)
        with pytest.raises(ValidationError):
            normalize_image(img, np.zeros(cube_labels.grid.dims, dtype=bool))

    def test_checkpoint_roundtrip(self, tmp_path, rng):
        model = RefinerModel(tiny_config(residual=False))
        model.epoch = 7
        path = model.save(tmp_path / "refiner.ckpt", {'history': {'train_loss': [1.0]}})
        restored = RefinerModel.load(path)
        assert restored.epoch == 7
        assert restored.config == model.config

        grid = GridSpec((8, 8, 8))
        img = Volume(grid, rng.normal(size=grid.dims))
        phi = DisplacementField(grid, rng.normal(size=grid.dims + (3,)))
        mask = np.ones(grid.dims, dtype=bool)
        np.testing.assert_array_equal(restored.forward(img, phi, mask).vectors,
                                      model.forward(img, phi, mask).vectors)

    def test_load_architecture_mismatch(self, tmp_path):
        from formats.checkpoint import read_checkpoint, write_checkpoint
        header, arrays = read_checkpoint(RefinerModel(tiny_config()).save(tmp_path / "a.ckpt"))
        header['config']['levels'] = 3
        write_checkpoint(tmp_path / "b.ckpt", arrays, header)
        with pytest.raises(ValidationError, match="architecture"):
            RefinerModel.load(tmp_path / "b.ckpt")


class TestRefinerConfig:
    def test_defaults(self):
        config = RefinerConfig()
        assert config.multiple == 4
        assert config.lambda_reg == 50.0

    @pytest.mark.parametrize("overrides", [
        {'levels': 1},
        {'base_channels': 64, 'max_channels': 32},
        {'lambda_reg': -1.0},
        {'norm': 'batch'},
        {'dtype': 'float16'},
        {'batch_size': 2},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ValidationError):
            RefinerConfig(**overrides)

    def test_dict_roundtrip(self):
        config = RefinerConfig(levels=4, betas=[0.8, 0.99], m_range=[3, 9])
        data = config.to_dict()
        data['unused'] = True
        assert RefinerConfig.from_dict(data) == config
        assert RefinerConfig.from_dict(data, seed=99).seed == 99


class TestLoss:
    def test_folding_closed_form(self, small_grid):
        phi = DisplacementField.from_function(
            small_grid, lambda x: np.stack([-2.0 * x[..., 0], 0 * x[..., 1], 0 * x[..., 2]], axis=-1))
        value, _ = loss(phi, DisplacementField.zeros(small_grid), np.ones(small_grid.dims, dtype=bool), 50.0)
        assert value == pytest.approx(np.mean(phi.vectors ** 2) + 50.0)

    def test_no_penalty_without_folding(self, small_grid):
        phi = DisplacementField.from_function(small_grid, lambda x: 0.1 * x)
        mask = np.ones(small_grid.dims, dtype=bool)
        value, _ = loss(phi, DisplacementField.zeros(small_grid), mask, 50.0)
        assert value == pytest.approx(np.mean(phi.vectors ** 2))

    def test_gradient_matches_finite_differences(self, rng):
        grid = GridSpec((6, 6, 6), (1.0, 2.0, 1.5))
        pred = rng.normal(scale=1.5, size=grid.dims + (3,))
        gt = DisplacementField(grid, rng.normal(size=grid.dims + (3,)))
        mask = np.zeros(grid.dims, dtype=bool)
        mask[1:5, 1:5, 1:5] = True
        _, grad = loss(DisplacementField(grid, pred), gt, mask, 5.0)
        eps = 1e-6
        for index in [(2, 2, 2, 0), (1, 3, 4, 1), (3, 0, 2, 2), (4, 4, 1, 0), (0, 5, 5, 2)]:
            plus, minus = pred.copy(), pred.copy()
            plus[index] += eps
            minus[index] -= eps
            numeric = (loss(DisplacementField(grid, plus), gt, mask, 5.0)[0]
                       - loss(DisplacementField(grid, minus), gt, mask, 5.0)[0]) / (2 * eps)
            assert grad[index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)

    def test_torch_jacobian_matches_numpy(self, aniso_grid, rng):
        from fields.jacobian import jacobian_determinant
        field = DisplacementField(aniso_grid, rng.normal(scale=0.3, size=aniso_grid.dims + (3,)))
        phi = torch.from_numpy(np.moveaxis(field.vectors, -1, 0).copy())[None]
        np.testing.assert_allclose(torch_jacobian(phi, aniso_grid.spacing)[0].numpy(),
                                   jacobian_determinant(field).data, atol=1e-12)

    def test_empty_mask(self, small_grid):
        zero = DisplacementField.zeros(small_grid)
        with pytest.raises(ValidationError, match="empty"):
            loss(zero, zero, np.zeros(small_grid.dims, dtype=bool), 1.0)


class TestAugmentation:
    def test_gamma_one_is_identity(self, rng):
        data = rng.uniform(-1, 3, size=(6, 6, 6))
        np.testing.assert_allclose(adjust_gamma(data, 1.0), data, atol=1e-12)

    def test_probability_zero(self, cube_labels, rng):
        img = label_image(cube_labels)
        out = augment(img, rng, probability=0.0)
        np.testing.assert_array_equal(out.data, img.data)

    def test_always_changes_image(self, cube_labels, rng):
        img = label_image(cube_labels)
        out = augment(img, rng, probability=1.0)
        assert out.grid == img.grid
        assert not np.array_equal(out.data, img.data)


class TestTrainer:
    def test_overfits_single_sample(self, cube_labels):
        config = tiny_config(lr=5e-3, lambda_reg=0.0)
        trainer = RefinerTrainer(RefinerModel(config))
        grid = cube_labels.grid
        target = np.broadcast_to(np.array([0.5, 0.0, -0.25]), grid.dims + (3,))
        sample = TrainingSample(label_image(cube_labels), cube_labels,
                                DisplacementField.zeros(grid), DisplacementField(grid, target))
        losses = [trainer.step(sample) for _ in range(200)]
        assert losses[0] == pytest.approx(np.mean(target ** 2))
        assert losses[-1] <= 0.5 * losses[0]

    def test_fit_is_deterministic(self, phantom32):
        case = case_from_phantom(phantom32)
        histories = []
        for _ in range(2):
            trainer = RefinerTrainer(RefinerModel(tiny_config()), method='linear')
            _, history = trainer.fit([case], [case], epochs=2)
            histories.append(history)
        assert histories[0].train_loss == histories[1].train_loss
        assert histories[0].val_loss == histories[1].val_loss
        assert len(histories[0].train_loss) == 2

    def test_epoch_callback(self, phantom32):
        case = case_from_phantom(phantom32)
        seen = []
        trainer = RefinerTrainer(RefinerModel(tiny_config()), method='tps', m_keypoints=10)
        model, history = trainer.fit([case], epochs=1, on_epoch=lambda *args: seen.append(args))
        assert model.epoch == 1
        assert len(seen) == 1 and seen[0][0] == 1 and seen[0][2] is None
        assert np.isfinite(history.train_loss[0])

    def test_no_training_cases(self):
        with pytest.raises(ValidationError):
            RefinerTrainer(RefinerModel(tiny_config())).fit([])

    def test_unknown_method(self):
        with pytest.raises(ValidationError):
            RefinerTrainer(RefinerModel(tiny_config()), method='spline')
