"""
Residual displacement refiner: network, loss, augmentation and training
"""

from .network import RefinerNetwork, ResidualBlock, SCSE, receptive_field_radius
from .losses import jacobian_determinant, refiner_loss, loss
from .augmentation import augment
from .model import RefinerConfig, RefinerModel, normalize_image, pad_case, pad_field, crop_field
from .trainer import RefinerTrainer, TrainingHistory, TrainingSample

__all__ = [
    'RefinerNetwork',
    'ResidualBlock',
    'SCSE',
    'receptive_field_radius',
    'jacobian_determinant',
    'refiner_loss',
    'loss',
    'augment',
    'RefinerConfig',
    'RefinerModel',
    'normalize_image',
    'pad_case',
    'pad_field',
    'crop_field',
    'RefinerTrainer',
    'TrainingHistory',
    'TrainingSample',
]
