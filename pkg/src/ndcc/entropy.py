"""Quantization proxy, learned factorized density, and integer CDF tables.

The density models each latent channel with a strictly increasing scalar CDF
built from positive-affine stages and gated-tanh nonlinearities, finished by a
sigmoid. Bin probabilities c(v + 1/2) - c(v - 1/2) serve both rate estimation
and (after integer quantization) the range coder.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

# Likelihood floor: prevents infinite rates and guarantees codable tables.
P_MIN = 2.0 ** -15


class _LowerBound(torch.autograd.Function):
    """clamp_min whose gradient still passes when it would push the input up."""

    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x)
        ctx.bound = bound
        return x.clamp_min(bound)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        passthrough = (x >= ctx.bound) | (grad < 0)
        return grad * passthrough, None


def lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    return _LowerBound.apply(x, bound)


def quantize(
    v: torch.Tensor,
    mode: str,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Train: additive uniform noise on [-1/2, 1/2); eval: round half-to-even."""
    if mode == "train":
        if generator is None:
            raise ValueError("train-mode quantization requires a seeded noise generator")
        noise = torch.rand(v.shape, generator=generator, dtype=v.dtype, device=v.device) - 0.5
        return v + noise
    if mode == "eval":
        return torch.round(v)
    raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


class FactorizedDensity(nn.Module):
    """Per-channel monotone CDF c_k: R -> (0, 1), non-parametric and learnable.

    Each stage applies a softplus-positive matrix and bias, then a gated tanh
    with |gate| < 1, so the composition is strictly increasing; the final stage
    ends in a sigmoid.
    """

    def __init__(
        self,
        channels: int,
        filters: Sequence[int] = (3, 3, 3),
        init_scale: float = 10.0,
    ):
        super().__init__()
        self.channels = channels
        dims = (1, *filters, 1)
        self._num_stages = len(dims) - 1
        scale = init_scale ** (1.0 / self._num_stages)
        matrices, biases, gates = [], [], []
        for k in range(self._num_stages):
            init = float(np.log(np.expm1(1.0 / scale / dims[k + 1])))
            matrices.append(nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), init)))
            bias = torch.empty(channels, dims[k + 1], 1)
            nn.init.uniform_(bias, -0.5, 0.5)
            biases.append(nn.Parameter(bias))
            if k < self._num_stages - 1:
                gates.append(nn.Parameter(torch.zeros(channels, dims[k + 1], 1)))
        self.matrices = nn.ParameterList(matrices)
        self.biases = nn.ParameterList(biases)
        self.gates = nn.ParameterList(gates)

    def _logits(self, v: torch.Tensor) -> torch.Tensor:
        # v: (channels, 1, n)
        x = v
        for k in range(self._num_stages):
            x = F.softplus(self.matrices[k]) @ x + self.biases[k]
            if k < self._num_stages - 1:
                x = x + torch.tanh(self.gates[k]) * torch.tanh(x)
        return x

    def cdf(self, v: torch.Tensor) -> torch.Tensor:
        """Evaluate the per-channel CDF; v and the result have shape (channels, n)."""
        if v.dim() != 2 or v.shape[0] != self.channels:
            raise ValueError(f"expected ({self.channels}, n) input, got {tuple(v.shape)}")
        return torch.sigmoid(self._logits(v.unsqueeze(1))).squeeze(1)


def _per_channel(v: torch.Tensor, channels: int) -> torch.Tensor:
    """Flatten a (C,...) or (B,C,...) tensor to (C, n)."""
    if v.dim() >= 2 and v.shape[0] == channels:
        return v.reshape(channels, -1)
    if v.dim() >= 3 and v.shape[1] == channels:
        return v.transpose(0, 1).reshape(channels, -1)
    raise ValueError(f"cannot map shape {tuple(v.shape)} onto {channels} channels")


def bin_likelihood(v: torch.Tensor, density) -> torch.Tensor:
    """Probability of the unit-width bin centered at each element, floored at P_MIN.

    `density` may be any object exposing cdf((C, n)) -> (C, n); channel
    counts must match the leading (or post-batch) dimension of v.
    """
    flat = _per_channel(v, density.channels)
    p = density.cdf(flat + 0.5) - density.cdf(flat - 0.5)
    return lower_bound(p, P_MIN)


def rate_bits(p: torch.Tensor) -> torch.Tensor:
    """Total information content, sum of -log2 p."""
    if (p <= 0).any():
        raise ValueError("rate_bits requires probabilities in (0, 1]")
    return -torch.log2(p).sum()


def continuous_log_density(v: torch.Tensor, density) -> torch.Tensor:
    """Rate of a never-transmitted latent: the same bin construction at real v."""
    return rate_bits(bin_likelihood(v, density))


@dataclass
class CdfTable:
    """Per-channel integer CDFs over [offset, offset + len - 1] at 2**precision."""

    precision: int
    offsets: np.ndarray  # (C,) int32: smallest symbol value per channel
    cdfs: list[np.ndarray]  # per channel, uint32, first 0, last 2**precision

    def validate(self) -> None:
        total = 1 << self.precision
        for c, cdf in enumerate(self.cdfs):
            if cdf[0] != 0 or cdf[-1] != total:
                raise ValueError(f"channel {c}: CDF endpoints must be (0, {total})")
            if (np.diff(cdf.astype(np.int64)) < 1).any():
                raise ValueError(f"channel {c}: every bin must have width >= 1")


def quantize_pmf(pmf: np.ndarray, precision: int) -> np.ndarray:
    """Integer CDF with total mass 2**precision and every bin width >= 1."""
    if not 2 <= precision <= 16:
        raise ValueError(f"precision out of range: {precision}")
    total = 1 << precision
    pmf = np.asarray(pmf, dtype=np.float64)
    n = pmf.size
    if n > total:
        raise ValueError(f"{n} symbols cannot fit {precision}-bit frequencies")
    pmf = np.maximum(pmf, 0.0)
    s = pmf.sum()
    pmf = pmf / s if s > 0 else np.full(n, 1.0 / n)
    freq = np.round(pmf * total).astype(np.int64)
    freq = np.maximum(freq, 1)
    excess = int(freq.sum()) - total
    while excess > 0:
        i = int(np.argmax(freq))
        take = min(excess, int(freq[i]) - 1)
        freq[i] -= take
        excess -= take
    if excess < 0:
        freq[int(np.argmax(freq))] += -excess
    cdf = np.zeros(n + 1, dtype=np.uint32)
    cdf[1:] = np.cumsum(freq)
    return cdf


def build_cdf_table(
    density: FactorizedDensity,
    v_min: np.ndarray,
    v_max: np.ndarray,
    precision: int,
) -> CdfTable:
    """Discretize the learned density over per-channel integer symbol ranges.

    Tail mass beyond the range is folded into the extreme bins, which double as
    escape bins for out-of-range symbols.
    """
    if not 12 <= precision <= 16:
        raise ValueError(f"precision must be in [12, 16], got {precision}")
    v_min = np.asarray(v_min, dtype=np.int64)
    v_max = np.asarray(v_max, dtype=np.int64)
    if v_min.shape != (density.channels,) or v_max.shape != (density.channels,):
        raise ValueError("v_min/v_max must have one entry per channel")
    if (v_min >= v_max).any():
        raise ValueError("require v_min < v_max per channel")
    cdfs = []
    with torch.no_grad():
        for c in range(density.channels):
            grid = torch.arange(v_min[c], v_max[c] + 1, dtype=torch.float64)
            edges = torch.cat([grid - 0.5, grid[-1:] + 0.5]).unsqueeze(0)
            one = _SingleChannelView(density, c)
            e = one.cdf(edges).squeeze(0).numpy().astype(np.float64)
            pmf = np.diff(e)
            pmf[0] += e[0]
            pmf[-1] += 1.0 - e[-1]
            cdfs.append(quantize_pmf(pmf, precision))
    return CdfTable(precision=precision, offsets=v_min.astype(np.int32), cdfs=cdfs)


class _SingleChannelView:
    """Evaluate one channel of a FactorizedDensity in float64."""

    def __init__(self, density: FactorizedDensity, channel: int):
        self.density = density
        self.channel = channel
        self.channels = 1

    def cdf(self, v: torch.Tensor) -> torch.Tensor:
        d = self.density
        x = v.unsqueeze(1)
        for k in range(d._num_stages):
            m = F.softplus(d.matrices[k][self.channel]).double()
            b = d.biases[k][self.channel].double()
            x = m @ x + b
            if k < d._num_stages - 1:
                g = torch.tanh(d.gates[k][self.channel]).double()
                x = x + g * torch.tanh(x)
        return torch.sigmoid(x).squeeze(1)
