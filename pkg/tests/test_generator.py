import dataclasses
import math

import numpy as np
import pytest
import torch

from scenegan.generator import (
    BASE_LAYERS,
    NUM_LAYERS,
    SHAPE_LAYERS,
    TEXTURE_LAYERS,
    CompositionalGenerator,
    GeneratorConfig,
    StyleBank,
    compose,
)
from scenegan.layers import fourier_grid

from conftest import make_generator


def shared_triple(generator, seed=11, batch=2):
    z = generator.sample_z(batch, torch.Generator().manual_seed(seed))
    return generator.map_latent(z)


class TestConfig:
    def test_output_must_be_power_of_two_multiple(self):
        with pytest.raises(ValueError, match="2\\^k"):
            GeneratorConfig(coarse_resolution=16, output_resolution=48,
                            renderer_channels=(8, 8))

    def test_renderer_channels_must_cover_stages(self):
        with pytest.raises(ValueError, match="renderer_channels"):
            GeneratorConfig(coarse_resolution=16, output_resolution=64,
                            renderer_channels=(8, 8))

    def test_layer_count_is_fixed(self):
        with pytest.raises(ValueError, match="10"):
            GeneratorConfig(num_layers=8)

    def test_layer_split(self):
        assert BASE_LAYERS + SHAPE_LAYERS + TEXTURE_LAYERS == tuple(range(10))


class TestFourierGrid:
    def test_deterministic(self):
        a = fourier_grid(8, 12)
        b = fourier_grid(8, 12)
        assert torch.equal(a, b)
        assert a.shape == (12, 8, 8)

    def test_count_must_be_multiple_of_four(self):
        with pytest.raises(ValueError):
            fourier_grid(8, 10)


class TestMapLatent:
    def test_deterministic(self, tiny_generator):
        z = tiny_generator.sample_z(4, torch.Generator().manual_seed(3))
        t1 = tiny_generator.map_latent(z)
        t2 = tiny_generator.map_latent(z)
        for name in ("base", "shape", "texture"):
            assert torch.equal(getattr(t1, name), getattr(t2, name))

    def test_no_constant_collapse_at_init(self, tiny_generator):
        # 100 pairs differing in one coordinate must map to different triples
        gen = torch.Generator().manual_seed(5)
        z = tiny_generator.sample_z(100, gen)
        z_prime = z.clone()
        coords = torch.randint(0, z.shape[1], (100,), generator=gen)
        z_prime[torch.arange(100), coords] += 0.5
        t = tiny_generator.map_latent(z)
        t_prime = tiny_generator.map_latent(z_prime)
        diff = sum(
            (getattr(t, n) - getattr(t_prime, n)).abs().sum(dim=1)
            for n in ("base", "shape", "texture")
        )
        assert (diff > 0).all()

    def test_batching_consistency(self, tiny_generator):
        z = tiny_generator.sample_z(5, torch.Generator().manual_seed(9))
        batched = tiny_generator.map_latent(z)
        for i in range(5):
            single = tiny_generator.map_latent(z[i:i + 1])
            assert torch.allclose(single.base[0], batched.base[i], atol=1e-6)
            assert torch.allclose(single.texture[0], batched.texture[i], atol=1e-6)

    def test_dimension_mismatch(self, tiny_generator):
        with pytest.raises(ValueError):
            tiny_generator.map_latent(torch.zeros(2, 5))


class TestStyleVectors:
    def test_texture_perturbation_leaves_base_and_shape_styles(self, tiny_generator):
        triple = shared_triple(tiny_generator)
        perturbed = dataclasses.replace(triple, texture=triple.texture + 1.0)
        s = tiny_generator.style_vectors(triple, 1)
        s_pert = tiny_generator.style_vectors(perturbed, 1)
        assert torch.equal(s[:, :6], s_pert[:, :6])
        assert not torch.equal(s[:, 6:], s_pert[:, 6:])

    def test_shape_perturbation_leaves_texture_styles(self, tiny_generator):
        triple = shared_triple(tiny_generator)
        perturbed = dataclasses.replace(triple, shape=triple.shape - 0.7)
        s = tiny_generator.style_vectors(triple, 0)
        s_pert = tiny_generator.style_vectors(perturbed, 0)
        assert torch.equal(s[:, 6:], s_pert[:, 6:])
        assert torch.equal(s[:, :2], s_pert[:, :2])
        assert not torch.equal(s[:, 2:6], s_pert[:, 2:6])

    def test_distinct_classes_have_distinct_heads(self):
        # over several random initializations, styles of different classes differ
        for seed in range(3):
            generator = make_generator(GeneratorConfig(
                num_classes=3, latent_dim=8, style_dim=8, coarse_resolution=4,
                output_resolution=8, fourier_features=8, local_width=8,
                renderer_channels=(8, 8)), seed=seed)
            triple = shared_triple(generator)
            s0 = generator.style_vectors(triple, 0)
            s1 = generator.style_vectors(triple, 1)
            assert (s0 - s1).abs().max() > 1e-4

    def test_class_out_of_range(self, tiny_generator):
        with pytest.raises(IndexError):
            tiny_generator.style_vectors(shared_triple(tiny_generator), 3)


class TestLocalGenerate:
    def test_texture_style_cannot_touch_depth(self, tiny_generator):
        bank = tiny_generator.build_bank(shared_triple(tiny_generator))
        f, d = tiny_generator.locals(tiny_generator.grid, bank.styles)
        styles = bank.styles.clone()
        styles[:, 1, 9] += 3.0
        f2, d2 = tiny_generator.locals(tiny_generator.grid, styles)
        assert torch.equal(d, d2)
        assert not torch.equal(f[:, 1], f2[:, 1])

    def test_deterministic(self, tiny_generator):
        bank = tiny_generator.build_bank(shared_triple(tiny_generator))
        f1, d1 = tiny_generator.locals(tiny_generator.grid, bank.styles)
        f2, d2 = tiny_generator.locals(tiny_generator.grid, bank.styles)
        assert torch.equal(f1, f2) and torch.equal(d1, d2)

    def test_zero_initialized_depth_head_gives_zero_depths(self, tiny_generator):
        bank = tiny_generator.build_bank(shared_triple(tiny_generator))
        _, d = tiny_generator.locals(tiny_generator.grid, bank.styles)
        assert torch.equal(d, torch.zeros_like(d))

    def test_missing_layer_styles_rejected(self, tiny_generator):
        bank = tiny_generator.build_bank(shared_triple(tiny_generator))
        with pytest.raises(ValueError, match="layers"):
            tiny_generator.locals(tiny_generator.grid, bank.styles[:, :, :6])


def softmax_fusion_oracle(depths, features):
    """Scalar-loop reference for the composition equation."""
    b, c, h, w = depths.shape
    fdim = features.shape[2]
    mask = np.zeros((b, c, h, w))
    fused = np.zeros((b, fdim, h, w))
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                exps = [math.exp(depths[bi, k, i, j]) for k in range(c)]
                total = sum(exps)
                for k in range(c):
                    mask[bi, k, i, j] = exps[k] / total
                for fi in range(fdim):
                    fused[bi, fi, i, j] = sum(
                        mask[bi, k, i, j] * features[bi, k, fi, i, j] for k in range(c)
                    )
    return mask, fused


class TestCompose:
    def test_equal_depths_give_uniform_mask(self):
        depths = torch.full((1, 4, 2, 2), 1.7)
        features = torch.randn(1, 4, 3, 2, 2)
        mask, _ = compose(depths, features)
        assert torch.allclose(mask, torch.full_like(mask, 0.25), atol=1e-7)

    def test_saturation(self):
        depths = torch.zeros(1, 3, 1, 1)
        depths[0, 0] = 40.0
        features = torch.randn(1, 3, 2, 1, 1)
        mask, fused = compose(depths, features)
        assert abs(mask[0, 0, 0, 0].item() - 1.0) < 1e-12
        assert torch.allclose(fused[0, :, 0, 0], features[0, 0, :, 0, 0], atol=1e-10)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(20):
            depths = torch.tensor(rng.normal(0, 2, size=(2, 3, 2, 2)), dtype=torch.float64)
            features = torch.tensor(rng.normal(0, 1, size=(2, 3, 4, 2, 2)),
                                    dtype=torch.float64)
            mask, fused = compose(depths, features)
            mask_ref, fused_ref = softmax_fusion_oracle(depths.numpy(), features.numpy())
            np.testing.assert_allclose(mask.numpy(), mask_ref, atol=1e-7)
            np.testing.assert_allclose(fused.numpy(), fused_ref, atol=1e-7)

    def test_large_depths_do_not_overflow(self):
        depths = torch.tensor([[[[500.0]], [[200.0]]]])
        features = torch.ones(1, 2, 1, 1, 1)
        mask, _ = compose(depths, features)
        assert torch.isfinite(mask).all()

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError, match="resolution"):
            compose(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 3, 8, 8))


class TestRender:
    def test_mask_head_normalized(self, tiny_generator):
        result = tiny_generator.generate(shared_triple(tiny_generator))
        sums = result.final_mask.sum(dim=1)
        assert (sums - 1.0).abs().max() < 1e-6

    def test_deterministic(self, tiny_generator):
        fused = torch.randn(2, 8, 4, 4)
        i1, m1 = tiny_generator.renderer(fused)
        i2, m2 = tiny_generator.renderer(fused)
        assert torch.equal(i1, i2) and torch.equal(m1, m2)

    def test_upsampling_factor_four(self):
        cfg = GeneratorConfig(num_classes=2, latent_dim=8, style_dim=8,
                              coarse_resolution=16, output_resolution=64,
                              fourier_features=8, local_width=8,
                              renderer_channels=(8, 8, 8))
        generator = make_generator(cfg, seed=1)
        result = generator.generate(shared_triple(generator, batch=1))
        assert result.image.shape == (1, 3, 64, 64)
        assert result.final_mask.shape == (1, 2, 64, 64)

    def test_image_bounded(self, tiny_generator):
        result = tiny_generator.generate(shared_triple(tiny_generator))
        assert result.image.min() >= -1.0 and result.image.max() <= 1.0


class TestGenerate:
    def test_shared_triple_equals_uniform_assignment(self, tiny_generator):
        triple = shared_triple(tiny_generator)
        shared = tiny_generator.generate(triple)
        per_class = tiny_generator.generate([triple] * 3)
        assert torch.equal(shared.image, per_class.image)
        assert torch.equal(shared.coarse_mask, per_class.coarse_mask)

    def test_texture_change_is_local_and_mask_preserving(self, tiny_generator):
        triple = shared_triple(tiny_generator)
        base = tiny_generator.generate(triple)
        edited_triple = dataclasses.replace(triple, texture=triple.texture + 2.0)
        edited = tiny_generator.generate([triple, edited_triple, triple])
        for other in (0, 2):
            assert torch.equal(base.depths[:, other], edited.depths[:, other])
            assert torch.equal(base.features[:, other], edited.features[:, other])
        assert torch.equal(base.depths[:, 1], edited.depths[:, 1])
        assert torch.equal(base.coarse_mask, edited.coarse_mask)
        assert not torch.equal(base.features[:, 1], edited.features[:, 1])

    def test_shape_change_keeps_other_prefusion_outputs(self, tiny_generator):
        # the depth head starts at zero; give it weight so depths are live
        with torch.no_grad():
            tiny_generator.locals.depth_head.weight.normal_(
                0, 0.5, generator=torch.Generator().manual_seed(4))
        triple = shared_triple(tiny_generator)
        base = tiny_generator.generate(triple)
        edited_triple = dataclasses.replace(triple, shape=triple.shape + 2.0)
        edited = tiny_generator.generate([edited_triple, triple, triple])
        for other in (1, 2):
            assert torch.equal(base.features[:, other], edited.features[:, other])
            assert torch.equal(base.depths[:, other], edited.depths[:, other])
        # the depth of the edited class changes, and because the softmax
        # couples classes the fused mask changes everywhere it is active
        assert not torch.equal(base.depths[:, 0], edited.depths[:, 0])
        assert not torch.equal(base.coarse_mask, edited.coarse_mask)

    def test_wrong_assignment_length(self, tiny_generator):
        triple = shared_triple(tiny_generator)
        with pytest.raises(ValueError, match="per class"):
            tiny_generator.generate([triple, triple])

    def test_mask_normalization_over_random_latents(self, tiny_generator):
        gen = torch.Generator().manual_seed(123)
        for _ in range(10):
            z = tiny_generator.sample_z(2, gen)
            result = tiny_generator.generate(tiny_generator.map_latent(z))
            assert (result.coarse_mask.sum(dim=1) - 1).abs().max() < 1e-6
            assert (result.final_mask.sum(dim=1) - 1).abs().max() < 1e-6


class TestGradientCorrectness:
    def test_style_gradients_match_finite_differences(self, tiny_gen_cfg):
        generator = make_generator(tiny_gen_cfg, seed=2).double()
        # depth head is zero at init; nudge it so depth gradients are live
        with torch.no_grad():
            generator.locals.depth_head.weight.normal_(0, 0.2)
        triple = shared_triple(generator, batch=1)
        styles = generator.build_bank(triple).styles.detach().requires_grad_(True)
        probe = torch.randn(1, 3, 8, 8, dtype=torch.float64,
                            generator=torch.Generator().manual_seed(55))

        def loss_of(s):
            result = generator.synthesize(StyleBank(styles=s))
            return (result.image * probe).sum()

        loss = loss_of(styles)
        (grad,) = torch.autograd.grad(loss, styles)
        rng = np.random.default_rng(0)
        step = 1e-3
        for _ in range(8):
            c = int(rng.integers(3))
            l = int(rng.integers(10))
            s_idx = int(rng.integers(8))
            delta = torch.zeros_like(styles)
            delta[0, c, l, s_idx] = step
            with torch.no_grad():
                fd = (loss_of(styles + delta) - loss_of(styles - delta)) / (2 * step)
            analytic = grad[0, c, l, s_idx]
            denom = max(abs(fd.item()), abs(analytic.item()), 1e-8)
            assert abs(fd.item() - analytic.item()) / denom < 1e-2
