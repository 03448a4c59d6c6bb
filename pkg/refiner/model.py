"""
RefinerModel: phi_pred = phi_init + eps_theta(I_pre, phi_init)
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch

from fields.grid import BACKGROUND, DisplacementField, GridSpec, LabelVolume, Volume, check_same_grid
from formats.checkpoint import read_checkpoint, write_checkpoint
from refiner.network import RefinerNetwork
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

DTYPES = {'float32': torch.float32, 'float64': torch.float64}


@dataclass
class RefinerConfig:
    levels: int = 3
    base_channels: int = 8
    max_channels: int = 32
    leaky_slope: float = 1e-2
    use_scse: bool = True
    scse_reduction: int = 2
    residual: bool = True
    norm: str = 'instance'
    norm_eps: float = 1e-5
    lambda_reg: float = 50.0
    lr: float = 5e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 1
    dtype: str = 'float64'
    normalization: str = 'mask'
    randomize_m: bool = False
    m_range: Tuple[int, int] = (5, 50)
    augment: bool = True
    augment_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.m_range = tuple(self.m_range)
        if self.levels < 2:
            raise ValidationError(f"levels must be >= 2, got {self.levels}")
        if not 1 <= self.base_channels <= self.max_channels:
            raise ValidationError("channels must satisfy 1 <= base_channels <= max_channels")
        if self.lambda_reg < 0:
            raise ValidationError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.norm not in ('instance', 'none'):
            raise ValidationError(f"norm must be 'instance' or 'none', got {self.norm}")
        if self.normalization not in ('mask', 'global'):
            raise ValidationError(f"normalization must be 'mask' or 'global', got {self.normalization}")
        if self.dtype not in DTYPES:
            raise ValidationError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype}")
        if self.batch_size != 1:
            raise ValidationError("only batch_size 1 is supported")

    @property
    def multiple(self) -> int:
        """Every grid dimension must be divisible by this"""
        return 2 ** (self.levels - 1)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['betas'] = list(self.betas)
        data['m_range'] = list(self.m_range)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: Optional[int] = None) -> 'RefinerConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if seed is not None:
            known['seed'] = seed
        return cls(**known)


def normalize_image(img: Volume, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Zero mean, unit std over mask (whole image when mask is None)"""
    region = img.data if mask is None else img.data[np.asarray(mask, dtype=bool)]
    if region.size == 0:
        raise ValidationError("normalisation mask is empty")
    std = float(np.std(region))
    return (img.data - float(np.mean(region))) / (std if std > 0 else 1.0)


def pad_array(data: np.ndarray, pad: Tuple[int, int, int], value: float = 0) -> np.ndarray:
    """Pad the high side of the first three axes"""
    widths = [(0, p) for p in pad] + [(0, 0)] * (data.ndim - 3)
    return np.pad(data, widths, mode='constant', constant_values=value)


def pad_case(img: Volume, labels: LabelVolume, multiple: int) -> Tuple[Volume, LabelVolume, Tuple[int, int, int]]:
    pad = img.grid.padding_to_multiple(multiple)
    if not any(pad):
        return img, labels, pad
    grid = img.grid.padded(pad)
    return (Volume(grid, pad_array(img.data, pad)),
            LabelVolume(grid, pad_array(labels.labels, pad, BACKGROUND)), pad)


def pad_field(field: DisplacementField, pad: Tuple[int, int, int]) -> DisplacementField:
    if not any(pad):
        return field
    return DisplacementField(field.grid.padded(pad), pad_array(field.vectors, pad))


def crop_field(field: DisplacementField, grid: GridSpec) -> DisplacementField:
    """Strip high-side padding back to grid"""
    d, w, h = grid.dims
    return DisplacementField(grid, field.vectors[:d, :w, :h])


class RefinerModel:
    """Network parameters plus the architecture/training configuration"""

    def __init__(self, config: Optional[RefinerConfig] = None):
        self.config = config or RefinerConfig()
        self.dtype = DTYPES[self.config.dtype]
        torch.manual_seed(self.config.seed)
        self.network = RefinerNetwork(
            levels=self.config.levels,
            base_channels=self.config.base_channels,
            max_channels=self.config.max_channels,
            leaky_slope=self.config.leaky_slope,
            norm=self.config.norm,
            norm_eps=self.config.norm_eps,
            use_scse=self.config.use_scse,
            scse_reduction=self.config.scse_reduction,
            zero_head=self.config.residual,
        ).to(self.dtype)
        self.epoch = 0

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    def check_grid(self, grid: GridSpec):
        pad = grid.padding_to_multiple(self.config.multiple)
        if any(pad):
            raise ValidationError(
                f"grid dims {grid.dims} must be divisible by {self.config.multiple}; "
                f"pad the high side by {pad}")

    def prepare_input(self, img: Volume, phi_init: DisplacementField,
                      brain_mask: Optional[np.ndarray] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """(1, 4, D, W, H) network input and (1, 3, D, W, H) phi_init tensors"""
        check_same_grid("initial field", img.grid, phi_init.grid)
        self.check_grid(img.grid)
        if self.config.normalization == 'mask':
            mask = brain_mask if brain_mask is not None else img.data != 0
            image = normalize_image(img, mask)
        else:
            image = normalize_image(img)
        phi = torch.from_numpy(np.ascontiguousarray(np.moveaxis(phi_init.vectors, -1, 0))).to(self.dtype)[None]
        image_t = torch.from_numpy(image).to(self.dtype)[None, None]
        return torch.cat([image_t, phi], dim=1), phi

    def predict(self, inputs: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
        out = self.network(inputs)
        return phi + out if self.config.residual else out

    def forward(self, img: Volume, phi_init: DisplacementField,
                brain_mask: Optional[np.ndarray] = None) -> DisplacementField:
        inputs, phi = self.prepare_input(img, phi_init, brain_mask)
        with torch.no_grad():
            pred = self.predict(inputs, phi)
        vectors = np.moveaxis(pred[0].to(torch.float64).numpy(), 0, -1)
        return DisplacementField(phi_init.grid, vectors)

    def refine(self, img: Volume, phi_init: DisplacementField, labels: LabelVolume) -> Tuple[DisplacementField, Tuple[int, int, int]]:
        """forward() on zero-padded inputs; the padding is stripped from the result"""
        padded_img, padded_labels, pad = pad_case(img, labels, self.config.multiple)
        pred = self.forward(padded_img, pad_field(phi_init, pad), padded_labels.brain_mask())
        return crop_field(pred, img.grid), pad

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, tensor.detach().to(torch.float64).cpu().numpy())
                           for name, tensor in self.network.state_dict().items())

    def save(self, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
        metadata = {
            'config': self.config.to_dict(),
            'seed': self.config.seed,
            'epoch': self.epoch,
        }
        metadata.update(extra or {})
        path = write_checkpoint(path, self.state_arrays(), metadata)
        logger.info(f"Saved refiner checkpoint (epoch {self.epoch}) to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RefinerModel':
        header, arrays = read_checkpoint(path)
        model = cls(RefinerConfig.from_dict(header['config']))
        expected = model.network.state_dict()
        if list(arrays) != list(expected):
            raise ValidationError(f"checkpoint {path} does not match the configured architecture")
        state = OrderedDict((name, torch.from_numpy(value).to(expected[name].dtype))
                            for name, value in arrays.items())
        model.network.load_state_dict(state)
        model.epoch = int(header.get('epoch', 0))
        return model
