"""Compositional generator.

One local generator per class maps a latent triple and a fixed Fourier grid
to class features and a scalar depth grid. The pixelwise softmax of the
depth grids across classes is the coarse composition mask; the mask-weighted
sum of class features is upsampled by a renderer into the final image and a
full-resolution mask.

Latents factorize as w = (base, shape, texture). Layers 0-1 of every local
generator are modulated only by styles derived from the base component,
layers 2-5 only from the shape component, and layers 6-9 only from the
texture component. The depth grid is read out after layer 5, so it can never
depend on texture styles; this routing is what the editing module relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .layers import (
    ClassConv1x1,
    ClassModulatedConv,
    EqualizedConv2d,
    EqualizedLinear,
    fourier_grid,
    leaky,
    pixel_norm,
)

NUM_LAYERS = 10
BASE_LAYERS = (0, 1)
SHAPE_LAYERS = (2, 3, 4, 5)
TEXTURE_LAYERS = (6, 7, 8, 9)
DEPTH_READOUT_LAYER = SHAPE_LAYERS[-1]


def component_of_layer(layer: int) -> str:
    if layer in BASE_LAYERS:
        return "base"
    if layer in SHAPE_LAYERS:
        return "shape"
    if layer in TEXTURE_LAYERS:
        return "texture"
    raise ValueError(f"layer index {layer} outside 0..{NUM_LAYERS - 1}")


@dataclass
class GeneratorConfig:
    num_classes: int = 16
    latent_dim: int = 64
    style_dim: int = 64
    coarse_resolution: int = 16
    output_resolution: int = 64
    fourier_features: int = 16
    local_width: int = 32
    renderer_channels: tuple[int, ...] = (32, 24, 16)
    num_layers: int = NUM_LAYERS

    def __post_init__(self):
        if self.num_layers != NUM_LAYERS:
            raise ValueError(f"local generators have a fixed {NUM_LAYERS}-layer layout")
        ratio = self.output_resolution / self.coarse_resolution
        k = math.log2(ratio)
        if ratio < 1 or abs(k - round(k)) > 1e-9:
            raise ValueError(
                "output_resolution must be coarse_resolution * 2^k, got "
                f"{self.coarse_resolution} -> {self.output_resolution}"
            )
        if len(self.renderer_channels) != self.up_stages + 1:
            raise ValueError(
                f"renderer_channels needs {self.up_stages + 1} entries for "
                f"{self.up_stages} upsampling stages, got {len(self.renderer_channels)}"
            )
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes to compose")

    @property
    def up_stages(self) -> int:
        return int(round(math.log2(self.output_resolution / self.coarse_resolution)))


@dataclass
class LatentTriple:
    """A z draw and its mapped components, each (B, latent_dim)."""

    z: torch.Tensor
    base: torch.Tensor
    shape: torch.Tensor
    texture: torch.Tensor

    @property
    def batch(self) -> int:
        return self.base.shape[0]


@dataclass
class StyleBank:
    """All per-class, per-layer style vectors of a batch: (B, C, L, S).

    ``assignment`` records which latent components produced each class's
    styles, stacked per class as (B, C, latent_dim) tensors.
    """

    styles: torch.Tensor
    assignment: dict[str, torch.Tensor] = field(default_factory=dict)


@dataclass
class CompositionResult:
    depths: torch.Tensor        # (B, C, h, w)
    features: torch.Tensor      # (B, C, F, h, w), pre-fusion
    coarse_mask: torch.Tensor   # (B, C, h, w), rows sum to 1 over C
    fused: torch.Tensor         # (B, F, h, w)
    image: torch.Tensor         # (B, 3, H, W) in [-1, 1]
    final_mask: torch.Tensor    # (B, C, H, W), rows sum to 1 over C


class MappingNetwork(nn.Module):
    """Shared trunk from z with three output branches (base/shape/texture)."""

    def __init__(self, latent_dim: int, trunk_layers: int = 2):
        super().__init__()
        self.trunk = nn.ModuleList(
            [EqualizedLinear(latent_dim, latent_dim) for _ in range(trunk_layers)]
        )
        self.head_base = EqualizedLinear(latent_dim, latent_dim)
        self.head_shape = EqualizedLinear(latent_dim, latent_dim)
        self.head_texture = EqualizedLinear(latent_dim, latent_dim)

    def forward(self, z: torch.Tensor) -> LatentTriple:
        if z.ndim != 2 or z.shape[1] != self.head_base.weight.shape[1]:
            raise ValueError(f"expected z of shape (B, {self.head_base.weight.shape[1]})")
        h = pixel_norm(z)
        for layer in self.trunk:
            h = leaky(layer(h))
        return LatentTriple(
            z=z, base=self.head_base(h), shape=self.head_shape(h), texture=self.head_texture(h)
        )


class StyleHeads(nn.Module):
    """Per-(class, layer) affine heads from latent components to styles.

    Weights are stacked per component so one einsum produces the styles for
    every class and layer of that component at once.
    """

    def __init__(self, num_classes: int, latent_dim: int, style_dim: int):
        super().__init__()
        self.num_classes = num_classes
        self.style_dim = style_dim
        self.scale = 1.0 / math.sqrt(latent_dim)
        for name, layers in (("base", BASE_LAYERS), ("shape", SHAPE_LAYERS),
                             ("texture", TEXTURE_LAYERS)):
            w = torch.randn(num_classes, len(layers), style_dim, latent_dim)
            b = torch.zeros(num_classes, len(layers), style_dim)
            self.register_parameter(f"{name}_weight", nn.Parameter(w))
            self.register_parameter(f"{name}_bias", nn.Parameter(b))

    def _component(self, name: str, latents: torch.Tensor) -> torch.Tensor:
        """latents: (B, C, D) -> styles (B, C, n_layers, S)."""
        w = getattr(self, f"{name}_weight")
        b = getattr(self, f"{name}_bias")
        return torch.einsum("bcd,clsd->bcls", latents, w) * self.scale + b

    def forward(self, base: torch.Tensor, shape: torch.Tensor,
                texture: torch.Tensor) -> torch.Tensor:
        """Each input (B, C, latent_dim); returns styles (B, C, L, S)."""
        return torch.cat(
            [self._component("base", base),
             self._component("shape", shape),
             self._component("texture", texture)],
            dim=2,
        )


class LocalGenerators(nn.Module):
    """All C local generators, evaluated batched over (sample, class).

    The depth grid is read out by a zero-initialized head after layer 5, so
    every class mask starts uniform and texture layers cannot reach it.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        chans = [cfg.fourier_features] + [cfg.local_width] * NUM_LAYERS
        self.convs = nn.ModuleList(
            [ClassModulatedConv(cfg.num_classes, chans[l], chans[l + 1], cfg.style_dim)
             for l in range(NUM_LAYERS)]
        )
        self.depth_head = ClassConv1x1(cfg.num_classes, cfg.local_width, 1, zero_init=True)

    def forward(self, grid: torch.Tensor, styles: torch.Tensor):
        """grid: (F, h, w); styles: (B, C, L, S) -> (features, depths)."""
        if styles.shape[2] != NUM_LAYERS:
            raise ValueError(f"styles must cover all {NUM_LAYERS} layers")
        b, c = styles.shape[0], styles.shape[1]
        x = grid.unsqueeze(0).unsqueeze(0).expand(b, c, *grid.shape)
        for l in range(DEPTH_READOUT_LAYER + 1):
            x = leaky(self.convs[l](x, styles[:, :, l]))
        depths = self.depth_head(x).squeeze(2)
        for l in range(DEPTH_READOUT_LAYER + 1, NUM_LAYERS):
            x = leaky(self.convs[l](x, styles[:, :, l]))
        return x, depths


def compose(depths: torch.Tensor, features: torch.Tensor):
    """Fuse per-class depths and features into a mask and a feature map.

    The mask is the pixelwise softmax of the depths over classes, stabilized
    by subtracting the per-pixel maximum before exponentiation. The fused
    features are the mask-weighted sum of the class features.
    """
    if depths.shape[0] != features.shape[0] or depths.shape[1] != features.shape[1] \
            or depths.shape[-2:] != features.shape[-2:]:
        raise ValueError(
            f"depth grids {tuple(depths.shape)} and feature stacks "
            f"{tuple(features.shape)} do not share (batch, class, resolution)"
        )
    shifted = depths - depths.max(dim=1, keepdim=True).values
    exp = shifted.exp()
    mask = exp / exp.sum(dim=1, keepdim=True)
    fused = torch.einsum("bchw,bcfhw->bfhw", mask, features)
    return mask, fused


class Renderer(nn.Module):
    """Upsamples fused coarse features to the output image and final mask."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        rc = cfg.renderer_channels
        self.stem = EqualizedConv2d(cfg.local_width, rc[0], 3)
        self.stages = nn.ModuleList(
            [EqualizedConv2d(rc[i], rc[i + 1], 3) for i in range(cfg.up_stages)]
        )
        self.to_image = EqualizedConv2d(rc[-1], 3, 1)
        self.to_mask = EqualizedConv2d(rc[-1], cfg.num_classes, 1)

    def forward(self, fused: torch.Tensor):
        h = leaky(self.stem(fused))
        for stage in self.stages:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = leaky(stage(h))
        image = torch.tanh(self.to_image(h))
        final_mask = torch.softmax(self.to_mask(h), dim=1)
        return image, final_mask


class CompositionalGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg.latent_dim)
        self.style_heads = StyleHeads(cfg.num_classes, cfg.latent_dim, cfg.style_dim)
        self.locals = LocalGenerators(cfg)
        self.renderer = Renderer(cfg)
        self.register_buffer(
            "grid", fourier_grid(cfg.coarse_resolution, cfg.fourier_features)
        )

    def map_latent(self, z: torch.Tensor) -> LatentTriple:
        return self.mapping(z)

    def style_vectors(self, triple: LatentTriple, class_idx: int) -> torch.Tensor:
        """The L style vectors of one class for a shared triple: (B, L, S)."""
        if not 0 <= class_idx < self.cfg.num_classes:
            raise IndexError(f"class index {class_idx} out of range")
        bank = self.build_bank(triple)
        return bank.styles[:, class_idx]

    def _stack_assignment(self, triples) -> dict[str, torch.Tensor]:
        """Accept one shared triple or a per-class sequence; stack to (B, C, D)."""
        c = self.cfg.num_classes
        if isinstance(triples, LatentTriple):
            triples = [triples] * c
        if len(triples) != c:
            raise ValueError(f"need one latent triple per class ({c}), got {len(triples)}")
        return {
            name: torch.stack([getattr(t, name) for t in triples], dim=1)
            for name in ("base", "shape", "texture")
        }

    def build_bank(self, triples) -> StyleBank:
        """Style vectors for every (class, layer) of the given assignment."""
        assignment = self._stack_assignment(triples)
        styles = self.style_heads(
            assignment["base"], assignment["shape"], assignment["texture"]
        )
        return StyleBank(styles=styles, assignment=assignment)

    def synthesize(self, bank: StyleBank) -> CompositionResult:
        """Run local generation, fusion, and rendering from a style bank."""
        features, depths = self.locals(self.grid, bank.styles)
        coarse_mask, fused = compose(depths, features)
        image, final_mask = self.renderer(fused)
        return CompositionResult(
            depths=depths, features=features, coarse_mask=coarse_mask,
            fused=fused, image=image, final_mask=final_mask,
        )

    def generate(self, triples, style_deltas: torch.Tensor | None = None) -> CompositionResult:
        """Full pipeline from latent triples (shared or per-class).

        ``style_deltas`` of shape (B, C, L, S) is added onto the style bank
        before synthesis; the editing module uses this to substitute edited
        style vectors.
        """
        bank = self.build_bank(triples)
        if style_deltas is not None:
            bank = StyleBank(styles=bank.styles + style_deltas, assignment=bank.assignment)
        return self.synthesize(bank)

    def sample_z(self, n: int, generator: torch.Generator | None = None) -> torch.Tensor:
        return torch.randn(
            n, self.cfg.latent_dim, generator=generator, device=self.grid.device,
            dtype=self.grid.dtype,
        )
