"""
Image-only intensity augmentation: noise, blur, gain/bias and gamma.
Fields and labels are never augmented.
"""
from typing import Optional

import numpy as np
from scipy import ndimage

from fields.grid import Volume

AUGMENTATION_CONFIG = {
    'probability': 0.5,
    'noise_std': (0.0, 0.1),       # fraction of intensity std
    'blur_sigma': (0.5, 1.5),      # voxels
    'gain': (0.75, 1.25),
    'bias': (-0.1, 0.1),           # fraction of intensity std
    'gamma': (0.7, 1.5),
}


def add_gaussian_noise(data: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return data + rng.normal(0.0, sigma, size=data.shape)


def gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(data, sigma=sigma, mode='nearest')


def adjust_gain_bias(data: np.ndarray, gain: float, bias: float) -> np.ndarray:
    return data * gain + bias


def adjust_gamma(data: np.ndarray, gamma: float) -> np.ndarray:
    """Gamma on min-max normalised intensities, mapped back to the original range"""
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return data.copy()
    scaled = (data - lo) / (hi - lo)
    return np.power(scaled, gamma) * (hi - lo) + lo


def augment(img: Volume, rng: np.random.Generator, probability: Optional[float] = None,
            config: Optional[dict] = None) -> Volume:
    """Each transform applied independently with the given probability"""
    cfg = dict(AUGMENTATION_CONFIG, **(config or {}))
    p = cfg['probability'] if probability is None else probability
    data = img.data.copy()
    std = float(np.std(data))

    if rng.random() < p:
        data = add_gaussian_noise(data, rng.uniform(*cfg['noise_std']) * std, rng)
    if rng.random() < p:
        data = gaussian_blur(data, rng.uniform(*cfg['blur_sigma']))
    if rng.random() < p:
        data = adjust_gain_bias(data, rng.uniform(*cfg['gain']), rng.uniform(*cfg['bias']) * std)
    if rng.random() < p:
        data = adjust_gamma(data, rng.uniform(*cfg['gamma']))
    return Volume(img.grid, data)
