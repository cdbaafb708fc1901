"""Fréchet-distance and mIoU metrics with a pluggable feature extractor.

The Fréchet distance between Gaussian fits (mu_a, S_a) and (mu_b, S_b) is

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})

with the matrix square root taken through an eigendecomposition of the
symmetrized product sqrt(S_a) S_b sqrt(S_a). Published FID numbers use a
pretrained Inception network; at desk scale the default extractor is a
small convolutional net with weights fixed forever by an in-repo seed
("proxy-FID"): numbers are trend-comparable across runs of this package,
not comparable to any published figure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .grouping import LabelMap
from .layers import leaky

PROXY_EXTRACTOR_SEED = 90417
PROXY_FEATURE_DIM = 48


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"stats shapes do not agree: {mean.shape} vs {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance is not symmetric within 1e-9")
        if self.count < mean.size + 1:
            raise ValueError(
                f"need at least dim+1 = {mean.size + 1} samples, got {self.count}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = _clamp_eigenvalues(vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _clamp_eigenvalues(vals: np.ndarray, floor: float = -1e-6) -> np.ndarray:
    if vals.min() < floor:
        raise ValueError(
            f"matrix has a significantly negative eigenvalue ({vals.min():.3e}); "
            "not a covariance"
        )
    return np.clip(vals, 0.0, None)


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Fréchet distance between two Gaussian feature fits (nonnegative)."""
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.cov)
    cross = root_a @ b.cov @ root_a
    cross = (cross + cross.T) / 2.0
    cross_vals = _clamp_eigenvalues(np.linalg.eigvalsh(cross))
    trace_term = np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(cross_vals).sum()
    return float(max(diff @ diff + trace_term, 0.0))


def feature_stats(features_or_images, extractor=None) -> FeatureStats:
    """Unbiased mean/covariance of extracted features.

    With ``extractor=None`` the first argument is already an (N, D) feature
    matrix; otherwise the extractor is applied to the image array first.
    """
    feats = np.asarray(features_or_images if extractor is None
                       else extractor(features_or_images), dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"expected an (N, D) feature matrix, got shape {feats.shape}")
    n = feats.shape[0]
    if n < feats.shape[1] + 1:
        raise ValueError(f"need at least dim+1 = {feats.shape[1] + 1} samples, got {n}")
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    cov = (cov + cov.T) / 2.0
    return FeatureStats(mean=mean, cov=cov, count=n)


class ProxyFeatureExtractor(nn.Module):
    """Frozen random conv net mapping [-1, 1] images to fixed-length features.

    Weights are drawn once from PROXY_EXTRACTOR_SEED, so the feature space
    is identical across machines and runs.
    """

    def __init__(self, feature_dim: int = PROXY_FEATURE_DIM, seed: int = PROXY_EXTRACTOR_SEED):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        widths = [3, 16, 32, feature_dim]
        self.convs = nn.ModuleList()
        for i in range(3):
            conv = nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  / np.sqrt(widths[i] * 9))
                conv.bias.zero_()
            self.convs.append(conv)
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h = images
        for conv in self.convs:
            h = leaky(conv(h))
        return h.mean(dim=(2, 3))

    def extract(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """images: (N, 3, H, W) float in [-1, 1] -> (N, feature_dim) float64."""
        out = []
        for i in range(0, images.shape[0], batch_size):
            batch = torch.as_tensor(images[i:i + batch_size], dtype=torch.float32)
            out.append(self(batch).numpy().astype(np.float64))
        return np.concatenate(out, axis=0)


def proxy_fid(real_images: np.ndarray, fake_images: np.ndarray,
              extractor: ProxyFeatureExtractor | None = None) -> float:
    """Fréchet distance between image sets under the frozen proxy extractor."""
    extractor = extractor or ProxyFeatureExtractor()
    return frechet_distance(
        feature_stats(extractor.extract(real_images)),
        feature_stats(extractor.extract(fake_images)),
    )


def miou(pred: LabelMap, gt: LabelMap, num_classes: int) -> float:
    """Mean IoU over classes present in pred or gt; empty classes excluded."""
    if pred.values.shape != gt.values.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.values.shape} vs gt {gt.values.shape}"
        )
    if pred.values.max() >= num_classes or gt.values.max() >= num_classes:
        raise ValueError("label values must be < num_classes")
    ious = []
    for c in range(num_classes):
        p = pred.values == c
        g = gt.values == c
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        ious.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(ious)) if ious else 1.0
