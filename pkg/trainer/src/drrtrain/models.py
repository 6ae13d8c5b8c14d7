"""The two network architectures and introspection helpers.

Segmenter: U-Net with exactly 19 3x3 convolutions (two per encoder stage,
two in the bottleneck, two per decoder stage, plus the 3x3 prediction head),
4 2x2 max-pools, 4 2x2 up-convolutions, and 4 skip concatenations. Padded
convolutions keep the output at the input resolution. The head emits logits.

Regressor: three 5x5 stride-2 convolutions followed by fully-connected
layers of width 100, 250, and 1, ReLU on all hidden layers. Input is a
single-channel 256x256 image; output is the PSI estimate in degrees.
"""

from __future__ import annotations

import torch
from torch import nn


class ConvPair(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class DecoderStage(nn.Module):
    """Up-convolution, skip concatenation, then a conv pair."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cout, kernel_size=2, stride=2)
        self.convs = ConvPair(cin, cout)

    def forward(self, x, skip):
        return self.convs(torch.cat([self.up(x), skip], dim=1))


class UNet(nn.Module):
    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        self.enc1 = ConvPair(1, c)
        self.enc2 = ConvPair(c, c * 2)
        self.enc3 = ConvPair(c * 2, c * 4)
        self.enc4 = ConvPair(c * 4, c * 8)
        self.bottleneck = ConvPair(c * 8, c * 16)
        self.pool1 = nn.MaxPool2d(kernel_size=2)
        self.pool2 = nn.MaxPool2d(kernel_size=2)
        self.pool3 = nn.MaxPool2d(kernel_size=2)
        self.pool4 = nn.MaxPool2d(kernel_size=2)
        self.dec4 = DecoderStage(c * 16, c * 8)
        self.dec3 = DecoderStage(c * 8, c * 4)
        self.dec2 = DecoderStage(c * 4, c * 2)
        self.dec1 = DecoderStage(c * 2, c)
        self.head = nn.Conv2d(c, 1, kernel_size=3, padding=1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool1(e1))
        e3 = self.enc3(self.pool2(e2))
        e4 = self.enc4(self.pool3(e3))
        b = self.bottleneck(self.pool4(e4))
        d4 = self.dec4(b, e4)
        d3 = self.dec3(d4, e3)
        d2 = self.dec2(d3, e2)
        d1 = self.dec1(d2, e1)
        return self.head(d1)


class PsiRegressor(nn.Module):
    def __init__(self, input_size: int = 256, channels: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        if input_size % 8 != 0:
            raise ValueError("input_size must be divisible by 8 (three stride-2 stages)")
        c1, c2, c3 = channels
        self.features = nn.Sequential(
            nn.Conv2d(1, c1, kernel_size=5, stride=2, padding=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, kernel_size=5, stride=2, padding=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(c2, c3, kernel_size=5, stride=2, padding=2),
            nn.ReLU(inplace=True),
        )
        flat = c3 * (input_size // 8) ** 2
        self.fc = nn.Sequential(
            nn.Flatten(),
            nn.Linear(flat, 100),
            nn.ReLU(inplace=True),
            nn.Linear(100, 250),
            nn.ReLU(inplace=True),
            nn.Linear(250, 1),
        )

    def forward(self, x):
        return self.fc(self.features(x))


def build_unet(base_channels: int = 32) -> UNet:
    return UNet(base_channels=base_channels)


def build_regressor(input_size: int = 256) -> PsiRegressor:
    return PsiRegressor(input_size=input_size)


# ---------------------------------------------------------------------------
# Architecture census


def conv3x3_count(model: nn.Module) -> int:
    return sum(
        1 for m in model.modules() if isinstance(m, nn.Conv2d) and m.kernel_size == (3, 3)
    )


def maxpool2x2_count(model: nn.Module) -> int:
    def size(v):
        return (v, v) if isinstance(v, int) else tuple(v)

    return sum(
        1 for m in model.modules() if isinstance(m, nn.MaxPool2d) and size(m.kernel_size) == (2, 2)
    )


def upconv2x2_count(model: nn.Module) -> int:
    return sum(
        1
        for m in model.modules()
        if isinstance(m, nn.ConvTranspose2d) and m.kernel_size == (2, 2) and m.stride == (2, 2)
    )


def skip_count(model: nn.Module) -> int:
    return sum(1 for m in model.modules() if isinstance(m, DecoderStage))


def conv5x5_stride2_count(model: nn.Module) -> int:
    return sum(
        1
        for m in model.modules()
        if isinstance(m, nn.Conv2d) and m.kernel_size == (5, 5) and m.stride == (2, 2)
    )


def fc_widths(model: nn.Module) -> tuple[int, ...]:
    return tuple(m.out_features for m in model.modules() if isinstance(m, nn.Linear))
