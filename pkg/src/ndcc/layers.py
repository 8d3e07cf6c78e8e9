"""Differentiable building blocks: GDN/IGDN and strided conv transforms."""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

POSITIVE_FLOOR = 1e-6


def softplus_inverse(y: torch.Tensor) -> torch.Tensor:
    # inverse of log(1 + e^x), stable for small positive y
    return y + torch.log(-torch.expm1(-y))


def positive_init(values: torch.Tensor, floor: float = POSITIVE_FLOOR) -> torch.Tensor:
    """Unconstrained storage for a parameter constrained to (floor, inf)."""
    return softplus_inverse((values - floor).clamp_min(1e-9))


def positive_value(raw: torch.Tensor, floor: float = POSITIVE_FLOOR) -> torch.Tensor:
    return floor + F.softplus(raw)


def _norm_pool(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    c = x.shape[-3]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ValueError(
            f"parameter/channel mismatch: x has {c} channels, "
            f"beta {tuple(beta.shape)}, gamma {tuple(gamma.shape)}"
        )
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    norm = F.conv2d(x * x, gamma.view(c, c, 1, 1), beta)
    return norm.squeeze(0) if squeeze else norm


def gdn(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2), per spatial location."""
    norm = _norm_pool(x, beta, gamma)
    return x * torch.rsqrt(norm)


def igdn(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    """Multiplicative inverse form: y_i = x_i * sqrt(beta_i + sum_j gamma_ij * x_j^2)."""
    norm = _norm_pool(x, beta, gamma)
    return x * torch.sqrt(norm)


class GDN(nn.Module):
    """Generalized divisive normalization with smoothly reparameterized positivity.

    beta and gamma are stored unconstrained and mapped through softplus with a
    floor, keeping the denominator strictly positive and optimization
    unconstrained.
    """

    def __init__(
        self,
        channels: int,
        inverse: bool = False,
        beta_init: float = 1.0,
        gamma_init: float = 0.1,
        floor: float = POSITIVE_FLOOR,
    ):
        super().__init__()
        self.inverse = inverse
        self.floor = floor
        beta = torch.full((channels,), float(beta_init))
        gamma = float(gamma_init) * torch.eye(channels)
        self.beta_raw = nn.Parameter(positive_init(beta, floor))
        self.gamma_raw = nn.Parameter(positive_init(gamma.clamp_min(floor), floor))

    @property
    def beta(self) -> torch.Tensor:
        return positive_value(self.beta_raw, self.floor)

    @property
    def gamma(self) -> torch.Tensor:
        return positive_value(self.gamma_raw, self.floor)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        fn = igdn if self.inverse else gdn
        return fn(x, self.beta, self.gamma)


def _check_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError(f"expected CxHxW or BxCxHxW, got shape {tuple(x.shape)}")


class AnalysisTransform(nn.Module):
    """Strided conv stack with GDN after all but the last layer.

    Downsamples spatial dims by stride**len(channels); inputs must be divisible
    by that factor.
    """

    def __init__(
        self,
        in_channels: int,
        channels: Sequence[int],
        kernel_size: int = 5,
        stride: int = 2,
    ):
        super().__init__()
        self.total_stride = stride ** len(channels)
        convs = []
        gdns = []
        prev = in_channels
        for i, ch in enumerate(channels):
            convs.append(nn.Conv2d(prev, ch, kernel_size, stride=stride, padding=kernel_size // 2))
            if i < len(channels) - 1:
                gdns.append(GDN(ch))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.gdns = nn.ModuleList(gdns)
        for conv in self.convs:
            nn.init.zeros_(conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = _check_batched(x)
        h, w = x.shape[-2:]
        s = self.total_stride
        if h % s or w % s:
            raise ValueError(f"spatial dims must be divisible by {s}, got {h}x{w}")
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.gdns):
                x = self.gdns[i](x)
        return x.squeeze(0) if squeeze else x


class SynthesisTransform(nn.Module):
    """Transposed-conv stack with IGDN between layers.

    Per-layer input channel counts are explicit so callers can concatenate side
    tensors between layers; forward exposes every intermediate feature map.
    """

    def __init__(
        self,
        in_channels: Sequence[int],
        out_channels: Sequence[int],
        kernel_size: int = 5,
        stride: int = 2,
    ):
        super().__init__()
        if len(in_channels) != len(out_channels):
            raise ValueError("in_channels and out_channels must have equal length")
        self.total_stride = stride ** len(out_channels)
        self.deconvs = nn.ModuleList(
            nn.ConvTranspose2d(
                ci,
                co,
                kernel_size,
                stride=stride,
                padding=kernel_size // 2,
                output_padding=stride - 1,
            )
            for ci, co in zip(in_channels, out_channels)
        )
        self.igdns = nn.ModuleList(GDN(co, inverse=True) for co in out_channels[:-1])
        for deconv in self.deconvs:
            nn.init.zeros_(deconv.bias)

    @property
    def num_layers(self) -> int:
        return len(self.deconvs)

    def apply_layer(self, i: int, x: torch.Tensor) -> torch.Tensor:
        expected = self.deconvs[i].in_channels
        if x.shape[-3] != expected:
            raise ValueError(f"layer {i + 1} expects {expected} channels, got {x.shape[-3]}")
        x, squeeze = _check_batched(x)
        x = self.deconvs[i](x)
        if i < len(self.igdns):
            x = self.igdns[i](x)
        return x.squeeze(0) if squeeze else x

    def forward(self, latent: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        h = latent
        for i in range(self.num_layers):
            h = self.apply_layer(i, h)
            feats.append(h)
        return h, feats
