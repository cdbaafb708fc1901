"""Unsupervised edit-direction discovery in the per-class style space.

Style vectors are harvested from latent draws through a trained model, one
matrix per (class, layer). PCA on each matrix yields a mean, an orthonormal
basis of principal directions, and their explained variances. An edit moves
a style vector along basis directions:

    s' = s + V^T y

where the rows of V are directions and y holds user-chosen magnitudes.
Layer 5 is the last layer feeding the depth grid (shape edits) and layer 9
the last feature layer (texture edits); both are harvested by default, but
any layer can be requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .generator import NUM_LAYERS, CompositionalGenerator, CompositionResult, LatentTriple

SHAPE_EDIT_LAYER = 5
TEXTURE_EDIT_LAYER = 9
DEFAULT_EDIT_LAYERS = (SHAPE_EDIT_LAYER, TEXTURE_EDIT_LAYER)


class WellPosednessError(ValueError):
    """Fewer samples than style dimensions: PCA would be rank-deficient."""


@dataclass(frozen=True)
class DirectionEntry:
    """PCA result for one (class, layer): mean, k x dim basis, variances."""

    mean: np.ndarray
    basis: np.ndarray
    variances: np.ndarray
    effective_rank: int

    @property
    def k(self) -> int:
        return self.basis.shape[0]


@dataclass
class DirectionBank:
    style_dim: int
    space: str = "s"
    entries: dict[tuple[int, int], DirectionEntry] = field(default_factory=dict)

    def entry(self, class_idx: int, layer: int) -> DirectionEntry:
        key = (class_idx, layer)
        if key not in self.entries:
            raise KeyError(f"no directions stored for class {class_idx}, layer {layer}")
        return self.entries[key]


@dataclass(frozen=True)
class EditOp:
    class_idx: int
    layer: int
    coords: np.ndarray


EditSpec = list[EditOp]


def collect_styles(generator: CompositionalGenerator, n: int, class_idx: int,
                   layer: int, seed: int, batch_size: int = 512) -> np.ndarray:
    """N style vectors s_{c,l} from independent z draws: (N, style_dim)."""
    style_dim = generator.cfg.style_dim
    if n < style_dim:
        raise WellPosednessError(
            f"need at least style_dim={style_dim} samples for PCA, got {n}"
        )
    if not 0 <= class_idx < generator.cfg.num_classes:
        raise IndexError(f"class index {class_idx} out of range")
    if not 0 <= layer < NUM_LAYERS:
        raise IndexError(f"layer index {layer} out of range")
    rng = torch.Generator().manual_seed(seed)
    rows = []
    with torch.no_grad():
        for i in range(0, n, batch_size):
            z = generator.sample_z(min(batch_size, n - i), rng)
            bank = generator.build_bank(generator.map_latent(z))
            rows.append(bank.styles[:, class_idx, layer].numpy().astype(np.float64))
    return np.concatenate(rows, axis=0)


def collect_mapped_latents(generator: CompositionalGenerator, n: int, seed: int,
                           component: str = "all", batch_size: int = 512) -> np.ndarray:
    """Harvest mapped w vectors instead of styles (the W+ comparison mode).

    ``component`` selects base/shape/texture or their concatenation. The
    returned matrix plugs into :func:`pca` exactly like a style matrix.
    """
    if component not in ("base", "shape", "texture", "all"):
        raise ValueError(f"unknown latent component {component!r}")
    rng = torch.Generator().manual_seed(seed)
    rows = []
    with torch.no_grad():
        for i in range(0, n, batch_size):
            z = generator.sample_z(min(batch_size, n - i), rng)
            triple = generator.map_latent(z)
            if component == "all":
                mat = torch.cat([triple.base, triple.shape, triple.texture], dim=1)
            else:
                mat = getattr(triple, component)
            rows.append(mat.numpy().astype(np.float64))
    return np.concatenate(rows, axis=0)


def pca(samples: np.ndarray, k: int) -> DirectionEntry:
    """Top-k principal directions of a sample matrix.

    Rows of the returned basis are unit-norm eigenvectors of the unbiased
    sample covariance, ordered by descending eigenvalue. Each row's sign is
    fixed so its largest-magnitude entry is positive, making banks
    reproducible across eigensolvers. Components beyond the sample rank
    carry ~0 variance and are reflected in ``effective_rank``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"expected (N, dim) samples, got shape {samples.shape}")
    n, dim = samples.shape
    if k > dim:
        raise ValueError(f"cannot extract {k} components from {dim}-dim samples")
    if n < dim:
        raise WellPosednessError(f"need at least dim={dim} samples, got {n}")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    variances = np.clip(vals[order], 0.0, None)
    basis = vecs[:, order].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    tol = 1e-10 * max(float(variances[0]) if k else 0.0, 1.0)
    return DirectionEntry(
        mean=mean, basis=basis, variances=variances,
        effective_rank=int((variances > tol).sum()),
    )


def edit(style: np.ndarray, entry: DirectionEntry, coords: np.ndarray) -> np.ndarray:
    """Move a style vector along basis directions: s + V^T y."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (entry.k,):
        raise ValueError(f"coordinates must have shape ({entry.k},), got {coords.shape}")
    return np.asarray(style, dtype=np.float64) + entry.basis.T @ coords


def build_bank(generator: CompositionalGenerator, n: int, k: int, seed: int,
               classes=None, layers: tuple[int, ...] = DEFAULT_EDIT_LAYERS) -> DirectionBank:
    classes = range(generator.cfg.num_classes) if classes is None else classes
    bank = DirectionBank(style_dim=generator.cfg.style_dim)
    for c in classes:
        for l in layers:
            samples = collect_styles(generator, n, c, l, seed=seed + 1000 * c + l)
            bank.entries[(c, l)] = pca(samples, k)
    return bank


def edit_deltas(bank: DirectionBank, edits: EditSpec, batch: int, num_classes: int,
                dtype=torch.float32) -> torch.Tensor:
    """Accumulate an EditSpec into a (B, C, L, S) style-delta tensor.

    Multiple edits of the same (class, layer) sum, so an edit followed by
    its negation cancels exactly.
    """
    deltas = np.zeros((num_classes, NUM_LAYERS, bank.style_dim))
    for op in edits:
        entry = bank.entry(op.class_idx, op.layer)
        coords = np.asarray(op.coords, dtype=np.float64)
        if coords.shape != (entry.k,):
            raise ValueError(
                f"edit at class {op.class_idx} layer {op.layer} needs {entry.k} "
                f"coordinates, got {coords.shape}"
            )
        deltas[op.class_idx, op.layer] += entry.basis.T @ coords
    out = torch.from_numpy(deltas).to(dtype)
    return out.unsqueeze(0).expand(batch, -1, -1, -1)


def apply_edit(generator: CompositionalGenerator, triples,
               edits: EditSpec, bank: DirectionBank) -> CompositionResult:
    """Regenerate with edited style vectors substituted at the edit sites."""
    if isinstance(triples, LatentTriple):
        batch = triples.batch
    else:
        batch = triples[0].batch
    deltas = edit_deltas(bank, edits, batch, generator.cfg.num_classes,
                         dtype=generator.grid.dtype)
    return generator.generate(triples, style_deltas=deltas)


# -- persistence ---------------------------------------------------------------


def save_bank(bank: DirectionBank, path):
    arrays = {}
    meta = {"style_dim": bank.style_dim, "space": bank.space, "entries": []}
    for (c, l), entry in sorted(bank.entries.items()):
        arrays[f"mean_c{c}_l{l}"] = entry.mean
        arrays[f"basis_c{c}_l{l}"] = entry.basis
        arrays[f"var_c{c}_l{l}"] = entry.variances
        meta["entries"].append({"class": c, "layer": l, "k": entry.k,
                                "effective_rank": entry.effective_rank})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_bank(path) -> DirectionBank:
    data = np.load(Path(path), allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    bank = DirectionBank(style_dim=int(meta["style_dim"]), space=meta.get("space", "s"))
    for item in meta["entries"]:
        c, l = int(item["class"]), int(item["layer"])
        bank.entries[(c, l)] = DirectionEntry(
            mean=data[f"mean_c{c}_l{l}"],
            basis=data[f"basis_c{c}_l{l}"],
            variances=data[f"var_c{c}_l{l}"],
            effective_rank=int(item["effective_rank"]),
        )
    return bank
