"""Procedural toy scenes with pixel-exact label maps.

Each scene is composed of simple shape families: a sky band, a road band, a
sidewalk strip, building rectangles, vegetation discs, car rectangles, thin
pole bars, and small sign squares. Every super-class comes in three fine
variants (separate palette entries), so a corpus natively carries
``3 * num_super_classes`` fine classes and a canonical remap table folds
them back into super-classes. That gives desk-scale experiments the same
grouped/ungrouped axis as real datasets.

Generation is fully deterministic given (spec, seed); the label map is
painted by the same strokes as the image, so the pairing is exact by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .grouping import LabelMap, RemapEntry, RemapTable

SUPER_NAMES = ("sky", "road", "sidewalk", "building", "vegetation", "car", "pole", "sign")

# base RGB per (super-class, variant); variants are distinct enough that a
# fine-grained model must treat them as separate classes
VARIANT_COLORS = {
    "sky": [(135, 206, 235), (168, 175, 186), (232, 160, 106)],
    "road": [(90, 90, 96), (70, 70, 76), (112, 106, 100)],
    "sidewalk": [(182, 172, 160), (202, 192, 176), (160, 154, 148)],
    "building": [(142, 92, 82), (92, 102, 132), (172, 152, 120)],
    "vegetation": [(62, 130, 62), (92, 162, 72), (42, 102, 52)],
    "car": [(200, 44, 44), (44, 62, 182), (228, 228, 228)],
    "pole": [(122, 122, 122), (92, 92, 92), (62, 62, 62)],
    "sign": [(230, 202, 44), (44, 162, 222), (222, 92, 32)],
}


@dataclass(frozen=True)
class ToySceneSpec:
    resolution: int = 64
    num_super_classes: int = 8
    variants_per_class: int = 3
    sky_band: tuple[float, float] = (0.30, 0.45)      # horizon height fraction
    road_band: tuple[float, float] = (0.28, 0.40)     # road height fraction
    building_count: tuple[int, int] = (1, 3)
    building_width: tuple[float, float] = (0.10, 0.22)
    building_height: tuple[float, float] = (0.35, 0.85)  # of the sky region
    vegetation_count: tuple[int, int] = (2, 4)
    vegetation_radius: tuple[float, float] = (0.05, 0.11)
    car_count: tuple[int, int] = (2, 4)
    car_width: tuple[float, float] = (0.12, 0.20)
    car_height: tuple[float, float] = (0.07, 0.11)
    pole_count: tuple[int, int] = (1, 3)
    pole_width: int = 2
    sign_count: tuple[int, int] = (0, 2)
    color_jitter: int = 14
    pixel_noise: float = 4.0

    def __post_init__(self):
        if self.num_super_classes != len(SUPER_NAMES):
            raise ValueError(f"toy scenes define exactly {len(SUPER_NAMES)} super-classes")

    @property
    def num_fine_classes(self) -> int:
        return self.num_super_classes * self.variants_per_class

    def fine_index(self, super_name: str, variant: int) -> int:
        return SUPER_NAMES.index(super_name) * self.variants_per_class + variant


@dataclass
class ToyCorpus:
    """Paired scenes: uint8 images (N, H, W, 3) and fine label maps (N, H, W)."""

    images: np.ndarray
    labels: np.ndarray
    spec: ToySceneSpec = field(default_factory=ToySceneSpec)

    def __len__(self):
        return self.images.shape[0]

    @property
    def num_fine_classes(self) -> int:
        return self.spec.num_fine_classes

    def label_map(self, i: int) -> LabelMap:
        return LabelMap(values=self.labels[i].astype(np.int64),
                        num_classes=self.spec.num_fine_classes)

    def images_float(self) -> np.ndarray:
        """(N, 3, H, W) float32 in [-1, 1]."""
        return (self.images.astype(np.float32) / 127.5 - 1.0).transpose(0, 3, 1, 2)


def toy_remap_table(spec: ToySceneSpec) -> RemapTable:
    """The canonical fine-to-super grouping of the toy corpus."""
    entries = []
    for idx, name in enumerate(SUPER_NAMES):
        sources = frozenset(
            idx * spec.variants_per_class + v for v in range(spec.variants_per_class)
        )
        entries.append(RemapEntry(name=name, index=idx, sources=sources,
                                  color=VARIANT_COLORS[name][0]))
    return RemapTable(tuple(entries))


def _paint_rect(img, lab, y0, y1, x0, x1, color, fine):
    img[y0:y1, x0:x1] = color
    lab[y0:y1, x0:x1] = fine


def _jittered(rng, spec, name, variant):
    base = np.array(VARIANT_COLORS[name][variant], dtype=np.int32)
    jit = rng.integers(-spec.color_jitter, spec.color_jitter + 1, size=3)
    return np.clip(base + jit, 0, 255).astype(np.uint8)


def make_toy_scene(spec: ToySceneSpec, rng: np.random.Generator):
    """One (image, label) pair; labels use fine class indices."""
    res = spec.resolution
    img = np.zeros((res, res, 3), dtype=np.uint8)
    lab = np.zeros((res, res), dtype=np.uint8)

    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    def count(bounds):
        return int(rng.integers(bounds[0], bounds[1] + 1))

    def variant():
        return int(rng.integers(spec.variants_per_class))

    horizon = int(round(u(*spec.sky_band) * res))
    road_top = res - int(round(u(*spec.road_band) * res))

    v = variant()
    _paint_rect(img, lab, 0, horizon, 0, res, _jittered(rng, spec, "sky", v),
                spec.fine_index("sky", v))
    v = variant()
    _paint_rect(img, lab, horizon, road_top, 0, res, _jittered(rng, spec, "sidewalk", v),
                spec.fine_index("sidewalk", v))
    v = variant()
    _paint_rect(img, lab, road_top, res, 0, res, _jittered(rng, spec, "road", v),
                spec.fine_index("road", v))

    for _ in range(count(spec.building_count)):
        v = variant()
        w = int(round(u(*spec.building_width) * res))
        h = int(round(u(*spec.building_height) * horizon))
        x0 = int(rng.integers(0, max(1, res - w)))
        _paint_rect(img, lab, horizon - h, horizon, x0, x0 + w,
                    _jittered(rng, spec, "building", v), spec.fine_index("building", v))

    yy, xx = np.mgrid[0:res, 0:res]
    for _ in range(count(spec.vegetation_count)):
        v = variant()
        r = u(*spec.vegetation_radius) * res
        cx = int(rng.integers(0, res))
        cy = int(rng.integers(max(0, horizon - int(r)), horizon + 2))
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[disc] = _jittered(rng, spec, "vegetation", v)
        lab[disc] = spec.fine_index("vegetation", v)

    for _ in range(count(spec.car_count)):
        v = variant()
        w = int(round(u(*spec.car_width) * res))
        h = int(round(u(*spec.car_height) * res))
        x0 = int(rng.integers(0, max(1, res - w)))
        y0 = int(rng.integers(road_top, max(road_top + 1, res - h)))
        _paint_rect(img, lab, y0, min(res, y0 + h), x0, x0 + w,
                    _jittered(rng, spec, "car", v), spec.fine_index("car", v))

    pole_tops = []
    for _ in range(count(spec.pole_count)):
        v = variant()
        x0 = int(rng.integers(1, res - 1 - spec.pole_width))
        top = int(rng.integers(max(0, horizon - res // 3), max(1, horizon - res // 8)))
        _paint_rect(img, lab, top, road_top, x0, x0 + spec.pole_width,
                    _jittered(rng, spec, "pole", v), spec.fine_index("pole", v))
        pole_tops.append((x0, top))

    for _ in range(count(spec.sign_count)):
        if not pole_tops:
            break
        v = variant()
        x0, top = pole_tops[int(rng.integers(len(pole_tops)))]
        s = max(2, res // 20)
        x_lo = max(0, x0 - s // 2)
        _paint_rect(img, lab, max(0, top - s), top, x_lo, min(res, x_lo + s),
                    _jittered(rng, spec, "sign", v), spec.fine_index("sign", v))

    if spec.pixel_noise > 0:
        noise = rng.normal(0.0, spec.pixel_noise, size=img.shape)
        img = np.clip(img.astype(np.float64) + noise, 0, 255).astype(np.uint8)
    return img, lab


def make_toy_corpus(spec: ToySceneSpec, n: int, seed: int) -> ToyCorpus:
    """Deterministic corpus of n paired scenes."""
    rng = np.random.default_rng(seed)
    res = spec.resolution
    images = np.zeros((n, res, res, 3), dtype=np.uint8)
    labels = np.zeros((n, res, res), dtype=np.uint8)
    for i in range(n):
        images[i], labels[i] = make_toy_scene(spec, rng)
    return ToyCorpus(images=images, labels=labels, spec=spec)


def save_corpus(corpus: ToyCorpus, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(len(corpus)):
        Image.fromarray(corpus.images[i]).save(out_dir / f"img_{i:05d}.png")
        Image.fromarray(corpus.labels[i], mode="L").save(out_dir / f"lab_{i:05d}.png")


def load_corpus(in_dir, spec: ToySceneSpec | None = None) -> ToyCorpus:
    in_dir = Path(in_dir)
    spec = spec or ToySceneSpec()
    img_paths = sorted(in_dir.glob("img_*.png"))
    if not img_paths:
        raise FileNotFoundError(f"no img_*.png files under {in_dir}")
    images, labels = [], []
    for p in img_paths:
        lab_path = in_dir / p.name.replace("img_", "lab_")
        images.append(np.asarray(Image.open(p).convert("RGB")))
        labels.append(np.asarray(Image.open(lab_path)))
    return ToyCorpus(images=np.stack(images), labels=np.stack(labels), spec=spec)
