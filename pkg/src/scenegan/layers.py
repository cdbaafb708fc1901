"""Shared network primitives.

All convolutions use runtime weight scaling (equalized learning rate): raw
weights are kept unit-variance and multiplied by 1/sqrt(fan_in) in the
forward pass. Per-class layers stack the weights of all classes into single
parameter tensors so one batched matmul covers every class.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def pixel_norm(x: torch.Tensor, dim: int = 1, eps: float = 1e-8) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=dim, keepdim=True) + eps)


def leaky(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, 0.2)


class EqualizedLinear(nn.Module):
    def __init__(self, in_features: int, out_features: int, bias_init: float = 0.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.full((out_features,), bias_init))
        self.scale = 1.0 / math.sqrt(in_features)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class EqualizedConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.stride = stride
        self.padding = kernel // 2

    def forward(self, x):
        return F.conv2d(
            x, self.weight * self.scale, self.bias, stride=self.stride, padding=self.padding
        )


class ClassModulatedConv(nn.Module):
    """Style-modulated 1x1 convolution with separate weights per class.

    Input is (B, C, in_ch, H, W) with one style vector per (sample, class).
    Each class owns a weight matrix and a style-to-scale affine; the scaled
    weight is demodulated per output channel as in the modulated-convolution
    family this generator builds on.
    """

    def __init__(self, num_classes: int, in_ch: int, out_ch: int, style_dim: int,
                 demodulate: bool = True):
        super().__init__()
        self.num_classes = num_classes
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.demodulate = demodulate
        self.weight = nn.Parameter(torch.randn(num_classes, out_ch, in_ch))
        self.bias = nn.Parameter(torch.zeros(num_classes, out_ch))
        # style -> per-input-channel scale, one affine per class, bias 1 so
        # modulation starts near identity
        self.affine_weight = nn.Parameter(torch.randn(num_classes, in_ch, style_dim))
        self.affine_bias = nn.Parameter(torch.ones(num_classes, in_ch))
        self.w_scale = 1.0 / math.sqrt(in_ch)
        self.a_scale = 1.0 / math.sqrt(style_dim)

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """x: (B, C, in, H, W); style: (B, C, style_dim) -> (B, C, out, H, W)."""
        b, c, _, h, w = x.shape
        scale = torch.einsum("bcs,cis->bci", style, self.affine_weight) * self.a_scale
        scale = scale + self.affine_bias
        weight = self.weight.unsqueeze(0) * self.w_scale * scale.unsqueeze(2)
        if self.demodulate:
            demod = torch.rsqrt(weight.pow(2).sum(dim=3, keepdim=True) + 1e-8)
            weight = weight * demod
        out = torch.matmul(weight.reshape(b * c, self.out_ch, self.in_ch),
                           x.reshape(b * c, self.in_ch, h * w))
        out = out.reshape(b, c, self.out_ch, h, w)
        return out + self.bias.reshape(1, c, self.out_ch, 1, 1)


class ClassConv1x1(nn.Module):
    """Plain per-class 1x1 convolution head, optionally zero-initialized."""

    def __init__(self, num_classes: int, in_ch: int, out_ch: int, zero_init: bool = False):
        super().__init__()
        if zero_init:
            self.weight = nn.Parameter(torch.zeros(num_classes, out_ch, in_ch))
        else:
            self.weight = nn.Parameter(torch.randn(num_classes, out_ch, in_ch))
        self.bias = nn.Parameter(torch.zeros(num_classes, out_ch))
        self.scale = 1.0 / math.sqrt(in_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, in_ch, h, w = x.shape
        out_ch = self.weight.shape[1]
        out = torch.matmul((self.weight * self.scale).unsqueeze(0).expand(b, -1, -1, -1)
                           .reshape(b * c, out_ch, in_ch),
                           x.reshape(b * c, in_ch, h * w))
        out = out.reshape(b, c, out_ch, h, w)
        return out + self.bias.reshape(1, c, out_ch, 1, 1)


def fourier_grid(size: int, num_features: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed positional encoding stack (num_features, size, size).

    Sine/cosine pairs of exponentially spaced frequencies over both axes,
    evaluated at cell centers in [-1, 1]. Deterministic in (size, count).
    """
    if num_features % 4 != 0:
        raise ValueError("fourier feature count must be a multiple of 4")
    n_freq = num_features // 4
    coords = (torch.arange(size, dtype=dtype) + 0.5) / size * 2.0 - 1.0
    ys = coords.reshape(size, 1).expand(size, size)
    xs = coords.reshape(1, size).expand(size, size)
    feats = []
    for i in range(n_freq):
        freq = math.pi * (2.0 ** i)
        feats += [torch.sin(freq * xs), torch.cos(freq * xs),
                  torch.sin(freq * ys), torch.cos(freq * ys)]
    return torch.stack(feats, dim=0)
