import numpy as np
import pytest
import torch

from scenegan.explorer import (
    DirectionBank,
    EditOp,
    WellPosednessError,
    apply_edit,
    build_bank,
    collect_mapped_latents,
    collect_styles,
    edit,
    load_bank,
    pca,
    save_bank,
)


def dense_eigendecomposition_oracle(samples):
    """Independent covariance + eigenpair computation (loops + general eig)."""
    n, dim = samples.shape
    mean = samples.sum(axis=0) / n
    cov = np.zeros((dim, dim))
    for row in samples:
        d = row - mean
        cov += np.outer(d, d)
    cov /= n - 1
    vals, vecs = np.linalg.eig(cov)
    vals, vecs = vals.real, vecs.real
    order = np.argsort(vals)[::-1]
    return mean, vals[order], vecs[:, order]


class TestCollectStyles:
    def test_deterministic(self, tiny_generator):
        a = collect_styles(tiny_generator, 16, 0, 5, seed=3)
        b = collect_styles(tiny_generator, 16, 0, 5, seed=3)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (16, 8)

    def test_layers_differ(self, tiny_generator):
        a = collect_styles(tiny_generator, 16, 0, 5, seed=3)
        b = collect_styles(tiny_generator, 16, 0, 9, seed=3)
        assert np.abs(a - b).max() > 1e-4

    def test_constant_heads_give_identical_rows(self, tiny_generator):
        with torch.no_grad():
            tiny_generator.style_heads.shape_weight.zero_()
        rows = collect_styles(tiny_generator, 16, 0, 5, seed=3)
        assert np.abs(rows - rows[0]).max() == 0.0

    def test_well_posedness(self, tiny_generator):
        with pytest.raises(WellPosednessError):
            collect_styles(tiny_generator, 4, 0, 5, seed=3)

    def test_bad_indices(self, tiny_generator):
        with pytest.raises(IndexError):
            collect_styles(tiny_generator, 16, 9, 5, seed=3)
        with pytest.raises(IndexError):
            collect_styles(tiny_generator, 16, 0, 10, seed=3)


class TestPca:
    def test_points_on_a_line(self):
        ts = np.linspace(-2, 2, 40)
        direction = np.array([2.0, -1.0, 2.0]) / 3.0
        samples = np.outer(ts, direction)
        entry = pca(samples, 3)
        assert abs(abs(entry.basis[0] @ direction) - 1.0) < 1e-9
        assert entry.variances[1] < 1e-12 and entry.variances[2] < 1e-12
        assert entry.effective_rank == 1

    def test_isotropic_gaussian(self):
        rng = np.random.default_rng(0)
        entry = pca(rng.normal(size=(10000, 4)), 4)
        assert entry.variances[0] / entry.variances[-1] < 1.15

    def test_matches_dense_eigendecomposition_oracle(self, rng):
        samples = rng.normal(size=(50, 8)) @ rng.normal(size=(8, 8))
        entry = pca(samples, 8)
        mean_ref, vals_ref, vecs_ref = dense_eigendecomposition_oracle(samples)
        np.testing.assert_allclose(entry.mean, mean_ref, atol=1e-10)
        np.testing.assert_allclose(entry.variances, vals_ref, atol=1e-8)
        for i in range(8):
            dot = abs(entry.basis[i] @ vecs_ref[:, i])
            assert abs(dot - 1.0) < 1e-8

    def test_rows_orthonormal(self, rng):
        entry = pca(rng.normal(size=(64, 12)), 6)
        gram = entry.basis @ entry.basis.T
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-5)

    def test_reconstruction_with_full_rank(self, rng):
        samples = rng.normal(size=(40, 6))
        entry = pca(samples, 6)
        centered = samples - entry.mean
        reconstructed = centered @ entry.basis.T @ entry.basis
        np.testing.assert_allclose(reconstructed, centered, atol=1e-6)

    def test_sign_convention(self, rng):
        samples = rng.normal(size=(30, 5))
        entry = pca(samples, 5)
        for row in entry.basis:
            assert row[np.argmax(np.abs(row))] > 0

    def test_surplus_components_flagged(self):
        rng = np.random.default_rng(1)
        flat = np.outer(rng.normal(size=20), rng.normal(size=4))
        entry = pca(flat, 4)
        assert entry.effective_rank == 1

    def test_k_larger_than_dim(self, rng):
        with pytest.raises(ValueError):
            pca(rng.normal(size=(30, 4)), 5)

    def test_too_few_samples(self, rng):
        with pytest.raises(WellPosednessError):
            pca(rng.normal(size=(3, 4)), 2)


class TestEdit:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.entry = pca(rng.normal(size=(50, 8)) * np.arange(1, 9), 4)
        self.style = rng.normal(size=8)

    def test_zero_is_identity(self):
        np.testing.assert_array_equal(edit(self.style, self.entry, np.zeros(4)),
                                      self.style)

    def test_inverse_restores(self):
        y = np.array([0.5, -1.0, 2.0, 0.25])
        forward = edit(self.style, self.entry, y)
        back = edit(forward, self.entry, -y)
        np.testing.assert_allclose(back, self.style, atol=1e-9)

    def test_norm_identity_from_orthonormality(self):
        two_sigma = 2.0 * np.sqrt(self.entry.variances[0])
        y = np.zeros(4)
        y[0] = two_sigma
        moved = edit(self.style, self.entry, y)
        assert np.linalg.norm(moved - self.style) == pytest.approx(two_sigma, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            edit(self.style, self.entry, np.zeros(3))


class TestApplyEdit:
    @pytest.fixture
    def bank(self, tiny_generator):
        return build_bank(tiny_generator, n=32, k=4, seed=0)

    def triple(self, generator):
        z = generator.sample_z(1, torch.Generator().manual_seed(21))
        return generator.map_latent(z)

    def test_empty_spec_is_identity(self, tiny_generator, bank):
        triple = self.triple(tiny_generator)
        baseline = tiny_generator.generate(triple)
        edited = apply_edit(tiny_generator, triple, [], bank)
        assert torch.equal(baseline.image, edited.image)
        assert torch.equal(baseline.final_mask, edited.final_mask)

    def test_texture_edit_cannot_move_masks(self, tiny_generator, bank):
        triple = self.triple(tiny_generator)
        baseline = tiny_generator.generate(triple)
        ops = [EditOp(class_idx=1, layer=9, coords=np.array([3.0, 0.0, 0.0, 0.0]))]
        edited = apply_edit(tiny_generator, triple, ops, bank)
        assert torch.equal(baseline.depths, edited.depths)
        assert torch.equal(baseline.coarse_mask, edited.coarse_mask)
        assert not torch.equal(baseline.features[:, 1], edited.features[:, 1])

    def test_shape_edit_moves_own_depth_only(self, tiny_generator, bank):
        with torch.no_grad():
            tiny_generator.locals.depth_head.weight.normal_(
                0, 0.5, generator=torch.Generator().manual_seed(8))
        triple = self.triple(tiny_generator)
        baseline = tiny_generator.generate(triple)
        ops = [EditOp(class_idx=0, layer=5, coords=np.array([2.0, 0.0, 0.0, 0.0]))]
        edited = apply_edit(tiny_generator, triple, ops, bank)
        assert not torch.equal(baseline.depths[:, 0], edited.depths[:, 0])
        for other in (1, 2):
            assert torch.equal(baseline.depths[:, other], edited.depths[:, other])
            assert torch.equal(baseline.features[:, other], edited.features[:, other])

    def test_opposite_edits_cancel_exactly(self, tiny_generator, bank):
        triple = self.triple(tiny_generator)
        baseline = tiny_generator.generate(triple)
        y = np.array([1.5, -0.5, 0.0, 2.0])
        ops = [
            EditOp(class_idx=2, layer=5, coords=y),
            EditOp(class_idx=2, layer=5, coords=-y),
        ]
        edited = apply_edit(tiny_generator, triple, ops, bank)
        assert torch.equal(baseline.image, edited.image)

    def test_unknown_direction(self, tiny_generator, bank):
        triple = self.triple(tiny_generator)
        with pytest.raises(KeyError):
            apply_edit(tiny_generator, triple,
                       [EditOp(class_idx=0, layer=3, coords=np.zeros(4))], bank)


class TestBankPersistence:
    def test_round_trip(self, tiny_generator, tmp_path):
        bank = build_bank(tiny_generator, n=32, k=4, seed=1, classes=[0, 2])
        path = tmp_path / "bank.npz"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert loaded.style_dim == bank.style_dim
        assert set(loaded.entries) == {(0, 5), (0, 9), (2, 5), (2, 9)}
        for key, entry in bank.entries.items():
            np.testing.assert_array_equal(loaded.entries[key].basis, entry.basis)
            np.testing.assert_array_equal(loaded.entries[key].variances, entry.variances)

    def test_missing_entry(self):
        with pytest.raises(KeyError):
            DirectionBank(style_dim=4).entry(0, 5)


class TestWPlusHarvest:
    def test_shapes_and_determinism(self, tiny_generator):
        a = collect_mapped_latents(tiny_generator, 16, seed=2, component="all")
        b = collect_mapped_latents(tiny_generator, 16, seed=2, component="all")
        np.testing.assert_array_equal(a, b)
        assert a.shape == (16, 24)
        shape_only = collect_mapped_latents(tiny_generator, 16, seed=2, component="shape")
        assert shape_only.shape == (16, 8)
        np.testing.assert_allclose(a[:, 8:16], shape_only, atol=1e-7)

    def test_pca_applies_unchanged(self, tiny_generator):
        samples = collect_mapped_latents(tiny_generator, 32, seed=2)
        entry = pca(samples, 4)
        assert entry.basis.shape == (4, 24)
