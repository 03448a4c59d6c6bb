"""
Residual 3D U-Net variant predicting a displacement correction.

Encoder: residual blocks with max-pool downsampling and channel doubling
(capped). Decoder: transposed-conv upsampling with element-wise summation
skips. A 1x1x1 head maps to 3 displacement channels.
"""
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

IN_CHANNELS = 4
OUT_CHANNELS = 3


class ChannelSE(nn.Module):
    """Channel squeeze-and-excitation"""

    def __init__(self, channels: int, reduction: int = 2):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.mean(dim=(2, 3, 4))
        scale = torch.sigmoid(self.fc2(F.relu(self.fc1(squeeze))))
        return x * scale[:, :, None, None, None]


class SpatialSE(nn.Module):
    """Spatial squeeze-and-excitation"""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv3d(channels, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.sigmoid(self.conv(x))


class SCSE(nn.Module):
    """Concurrent spatial and channel squeeze-and-excitation (summed)"""

    def __init__(self, channels: int, reduction: int = 2):
        super().__init__()
        self.cse = ChannelSE(channels, reduction)
        self.sse = SpatialSE(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.cse(x) + self.sse(x)


def _norm(kind: str, channels: int, eps: float) -> nn.Module:
    if kind == 'instance':
        return nn.InstanceNorm3d(channels, eps=eps, affine=True)
    return nn.Identity()


class ResidualBlock(nn.Module):
    """conv-norm-act-conv-norm + skip, act, then optional scSE"""

    def __init__(self, in_channels: int, out_channels: int, leaky_slope: float = 1e-2,
                 norm: str = 'instance', norm_eps: float = 1e-5, use_scse: bool = True,
                 scse_reduction: int = 2):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1)
        self.norm1 = _norm(norm, out_channels, norm_eps)
        self.conv2 = nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1)
        self.norm2 = _norm(norm, out_channels, norm_eps)
        self.act = nn.LeakyReLU(leaky_slope)
        if in_channels != out_channels:
            self.skip = nn.Conv3d(in_channels, out_channels, kernel_size=1)
        else:
            self.skip = nn.Identity()
        self.scse = SCSE(out_channels, scse_reduction) if use_scse else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        out = self.act(out + self.skip(x))
        return self.scse(out)


def level_channels(levels: int, base_channels: int, max_channels: int) -> List[int]:
    return [min(base_channels * 2 ** i, max_channels) for i in range(levels)]


class RefinerNetwork(nn.Module):
    def __init__(self, levels: int = 3, base_channels: int = 8, max_channels: int = 32,
                 leaky_slope: float = 1e-2, norm: str = 'instance', norm_eps: float = 1e-5,
                 use_scse: bool = True, scse_reduction: int = 2, zero_head: bool = True):
        super().__init__()
        self.levels = levels
        channels = level_channels(levels, base_channels, max_channels)
        block = dict(leaky_slope=leaky_slope, norm=norm, norm_eps=norm_eps,
                     use_scse=use_scse, scse_reduction=scse_reduction)

        self.encoders = nn.ModuleList()
        previous = IN_CHANNELS
        for ch in channels:
            self.encoders.append(ResidualBlock(previous, ch, **block))
            previous = ch
        self.pool = nn.MaxPool3d(kernel_size=2, stride=2)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for i in reversed(range(levels - 1)):
            self.upsamplers.append(nn.ConvTranspose3d(channels[i + 1], channels[i], kernel_size=2, stride=2))
            self.decoders.append(ResidualBlock(channels[i], channels[i], **block))

        self.head = nn.Conv3d(channels[0], OUT_CHANNELS, kernel_size=1)
        if zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for i, encoder in enumerate(self.encoders):
            if i > 0:
                x = self.pool(x)
            x = encoder(x)
            skips.append(x)
        x = skips.pop()
        for upsample, decoder in zip(self.upsamplers, self.decoders):
            x = decoder(upsample(x) + skips.pop())
        return self.head(x)


def receptive_field_radius(levels: int) -> int:
    """Upper bound (voxels) on how far an input change can reach an output voxel.

    Only meaningful without global operations (norm='none', use_scse=False).
    """
    radius, jump = 0, 1
    for i in range(levels):
        if i > 0:
            radius += jump      # max-pool cell
            jump *= 2
        radius += 2 * jump      # two 3x3x3 convs
    for _ in range(levels - 1):
        radius += jump          # transposed-conv cell
        jump //= 2
        radius += 2 * jump
    return radius
