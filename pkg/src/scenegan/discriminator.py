"""Two-branch image + mask discriminator with spectral normalization.

Image and mask enter through separate stems and are fused early by channel
concatenation, followed by strided downsampling to a low-resolution grid of
patch realism scores. Every convolution weight is divided by its largest
singular value, estimated by power iteration with persistent vectors; the
final fully convolutional score head is exempt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import leaky


def _l2_normalize(v: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return v / (v.norm() + eps)


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor | None = None,
                       v: torch.Tensor | None = None, power_iterations: int = 1):
    """Divide a weight by its power-iteration estimate of sigma_max.

    The weight is viewed as 2-D (out x rest). Returns
    ``(normalized_weight, sigma, u, v)`` so callers can keep the iteration
    vectors persistent across steps. A zero weight maps to a zero weight
    (sigma is clamped below at 1e-12).
    """
    if power_iterations < 1:
        raise ValueError("power_iterations must be >= 1")
    w2d = weight.reshape(weight.shape[0], -1)
    if u is None or v is None:
        gen = torch.Generator().manual_seed(0)
        u = _l2_normalize(torch.randn(w2d.shape[0], generator=gen, dtype=weight.dtype))
        v = _l2_normalize(torch.randn(w2d.shape[1], generator=gen, dtype=weight.dtype))
        u, v = u.to(weight.device), v.to(weight.device)
    with torch.no_grad():
        for _ in range(power_iterations):
            v = _l2_normalize(torch.mv(w2d.t(), u))
            u = _l2_normalize(torch.mv(w2d, v))
    sigma = torch.dot(u, torch.mv(w2d, v)).clamp(min=1e-12)
    return weight / sigma, sigma, u, v


class SNConv2d(nn.Module):
    """Equalized conv2d whose effective weight is spectrally normalized.

    Persistent u/v vectors advance by ``power_iterations`` steps on every
    training-mode forward; in eval mode the stored vectors are reused
    unchanged so scoring is a pure function of the inputs.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 enabled: bool = True, power_iterations: int = 1):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.stride = stride
        self.padding = kernel // 2
        self.enabled = enabled
        self.power_iterations = power_iterations
        gen = torch.Generator().manual_seed(0)
        self.register_buffer("u", _l2_normalize(torch.randn(out_ch, generator=gen)))
        self.register_buffer("v", _l2_normalize(torch.randn(in_ch * kernel * kernel,
                                                            generator=gen)))

    def normalized_weight(self) -> torch.Tensor:
        w = self.weight * self.scale
        if not self.enabled:
            return w
        w_norm, _, u, v = spectral_normalize(w, self.u, self.v, self.power_iterations)
        if self.training:
            self.u.copy_(u)
            self.v.copy_(v)
        return w_norm

    def current_sigma(self) -> float:
        """Exact sigma_max of the weight as the forward pass would use it.

        Never advances the persistent vectors, whatever the module mode.
        """
        with torch.no_grad():
            w = self.weight * self.scale
            if self.enabled:
                w, _, _, _ = spectral_normalize(w, self.u, self.v, self.power_iterations)
            return torch.linalg.matrix_norm(w.reshape(w.shape[0], -1), ord=2).item()

    def forward(self, x):
        return F.conv2d(x, self.normalized_weight(), self.bias,
                        stride=self.stride, padding=self.padding)


@dataclass
class DiscriminatorConfig:
    resolution: int = 64
    mask_channels: int = 16
    image_channels: int = 3
    stem_width: int = 16
    stage_widths: tuple[int, ...] = (32, 48, 64, 64)
    fusion_stage: int = 1
    spectral_norm: bool = True
    power_iterations: int = 1

    def __post_init__(self):
        stages = 1 + len(self.stage_widths)
        if not 1 <= self.fusion_stage <= stages // 2:
            raise ValueError(
                f"fusion must happen early: stage {self.fusion_stage} of {stages}"
            )
        if self.resolution != 4 * 2 ** len(self.stage_widths):
            raise ValueError(
                f"{len(self.stage_widths)} downsampling stages reduce "
                f"{self.resolution} to {self.resolution >> len(self.stage_widths)}, want 4"
            )
        if self.power_iterations < 1:
            raise ValueError("power_iterations must be >= 1")


class Discriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        sn = dict(enabled=cfg.spectral_norm, power_iterations=cfg.power_iterations)
        self.image_stem = SNConv2d(cfg.image_channels, cfg.stem_width, 3, **sn)
        self.mask_stem = SNConv2d(cfg.mask_channels, cfg.stem_width, 3, **sn)
        # pre-fusion downsampling stages run once per branch
        pre = cfg.fusion_stage - 1
        widths = [cfg.stem_width] + list(cfg.stage_widths)
        self.image_pre = nn.ModuleList(
            [SNConv2d(widths[i], widths[i + 1], 3, stride=2, **sn) for i in range(pre)]
        )
        self.mask_pre = nn.ModuleList(
            [SNConv2d(widths[i], widths[i + 1], 3, stride=2, **sn) for i in range(pre)]
        )
        self.post = nn.ModuleList(
            [SNConv2d(widths[i] * (2 if i == pre else 1), widths[i + 1], 3, stride=2, **sn)
             for i in range(pre, len(cfg.stage_widths))]
        )
        # final fully convolutional score head, exempt from normalization
        self.score = nn.Conv2d(cfg.stage_widths[-1], 1, 1)

    def forward(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if image.shape[1:] != (cfg.image_channels, cfg.resolution, cfg.resolution):
            raise ValueError(f"image shape {tuple(image.shape[1:])} does not match config")
        if mask.shape[1:] != (cfg.mask_channels, cfg.resolution, cfg.resolution):
            raise ValueError(f"mask shape {tuple(mask.shape[1:])} does not match config")
        hi = leaky(self.image_stem(image))
        hm = leaky(self.mask_stem(mask))
        for conv_i, conv_m in zip(self.image_pre, self.mask_pre):
            hi = leaky(conv_i(hi))
            hm = leaky(conv_m(hm))
        h = torch.cat([hi, hm], dim=1)
        for conv in self.post:
            h = leaky(conv(h))
        return self.score(h)

    def mean_score(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self(image, mask).mean(dim=(1, 2, 3))

    def normalized_convs(self):
        """(name, module) pairs of every spectrally normalized conv."""
        return [(name, m) for name, m in self.named_modules() if isinstance(m, SNConv2d)]
