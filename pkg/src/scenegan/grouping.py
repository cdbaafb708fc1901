"""Class grouping: remap tables, label maps, and per-class statistics.

Fine-grained dataset classes are folded into a smaller set of super-classes
before training. A remap table is a partition of the original class indices:
every source index belongs to exactly one super-class, and super-class
indices are contiguous starting at 0. Tables are stored as YAML documents;
the Cityscapes 34-to-16 grouping ships with the package (see
``scenegan/data/cityscapes_34to16.yaml``).

Label maps are single-channel index grids. On disk they are 8-bit indexed
PNGs whose pixel values are the class indices.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image


class GroupingError(ValueError):
    """Base error for remap table and label map problems."""


class SchemaError(GroupingError):
    """The table document is structurally invalid (gaps, bad types, ...)."""


class PartitionError(GroupingError):
    """A source class index is missing or claimed by more than one entry."""


class UnmappedClassError(GroupingError):
    """A label map contains values no table entry covers."""

    def __init__(self, values):
        self.values = sorted(int(v) for v in values)
        super().__init__(f"label values not covered by the remap table: {self.values}")


# Fallback overlay palette, used for classes without an explicit color.
# Derived from the class index only so renders are stable across runs.
def default_color(index: int) -> tuple[int, int, int]:
    rng = np.random.RandomState(977 + index)
    return tuple(int(v) for v in rng.randint(40, 230, size=3))


@dataclass(frozen=True)
class RemapEntry:
    name: str
    index: int
    sources: frozenset[int]
    color: tuple[int, int, int] | None = None


@dataclass(frozen=True)
class RemapTable:
    """A validated partition of source class indices into super-classes."""

    entries: tuple[RemapEntry, ...]
    num_super_classes: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_super_classes", len(self.entries))
        self._validate()

    def _validate(self):
        if len(self.entries) < 2:
            raise SchemaError("a remap table needs at least 2 super-classes")
        indices = sorted(e.index for e in self.entries)
        if indices != list(range(len(self.entries))):
            raise SchemaError(
                f"super-class indices must be exactly 0..{len(self.entries) - 1}, got {indices}"
            )
        seen: dict[int, str] = {}
        for e in self.entries:
            if not e.sources:
                raise SchemaError(f"super-class {e.name!r} has no source classes")
            for s in e.sources:
                if s < 0:
                    raise SchemaError(f"negative source index {s} in {e.name!r}")
                if s in seen:
                    raise PartitionError(
                        f"source class {s} appears in both {seen[s]!r} and {e.name!r}"
                    )
                seen[s] = e.name
        max_source = max(seen)
        missing = sorted(set(range(max_source + 1)) - set(seen))
        if missing:
            raise PartitionError(f"source classes not covered by any entry: {missing}")

    @property
    def num_source_classes(self) -> int:
        return 1 + max(s for e in self.entries for s in e.sources)

    def lookup(self) -> np.ndarray:
        """Dense source-index -> super-class-index array."""
        table = np.full(self.num_source_classes, -1, dtype=np.int64)
        for e in self.entries:
            for s in e.sources:
                table[s] = e.index
        return table

    def colors(self) -> np.ndarray:
        """(C, 3) uint8 overlay palette, per super-class."""
        out = np.zeros((self.num_super_classes, 3), dtype=np.uint8)
        for e in sorted(self.entries, key=lambda e: e.index):
            out[e.index] = e.color if e.color is not None else default_color(e.index)
        return out

    @staticmethod
    def identity(num_classes: int, names=None) -> "RemapTable":
        names = names or [f"class_{i}" for i in range(num_classes)]
        return RemapTable(
            tuple(
                RemapEntry(name=names[i], index=i, sources=frozenset({i}))
                for i in range(num_classes)
            )
        )


@dataclass(frozen=True)
class LabelMap:
    """H x W grid of class indices with a declared class count."""

    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise GroupingError(f"label map must be a non-empty 2-D grid, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            raise GroupingError(f"label map values must be integers, got dtype {v.dtype}")
        if v.min() < 0 or v.max() >= self.num_classes:
            raise GroupingError(
                f"label values must lie in [0, {self.num_classes}), "
                f"got range [{v.min()}, {v.max()}]"
            )
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def parse_remap_table(text: str) -> RemapTable:
    """Parse a YAML remap document into a validated table.

    Expected shape::

        super_classes:
          - name: Drive-able
            index: 1
            sources: [7, 9, 10]
            color: [128, 64, 128]   # optional

    The ``index`` key may be omitted, in which case list order is used.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"remap table is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or "super_classes" not in doc:
        raise SchemaError("remap table must be a mapping with a 'super_classes' list")
    raw = doc["super_classes"]
    if not isinstance(raw, list):
        raise SchemaError("'super_classes' must be a list")
    entries = []
    for pos, item in enumerate(raw):
        if not isinstance(item, dict) or "name" not in item or "sources" not in item:
            raise SchemaError(f"entry {pos} must define 'name' and 'sources'")
        sources = item["sources"]
        if not isinstance(sources, list) or not all(isinstance(s, int) for s in sources):
            raise SchemaError(f"entry {item['name']!r}: 'sources' must be a list of integers")
        color = item.get("color")
        if color is not None:
            color = tuple(int(c) for c in color)
            if len(color) != 3:
                raise SchemaError(f"entry {item['name']!r}: color must be [r, g, b]")
        entries.append(
            RemapEntry(
                name=str(item["name"]),
                index=int(item.get("index", pos)),
                sources=frozenset(int(s) for s in sources),
                color=color,
            )
        )
    return RemapTable(tuple(entries))


def load_remap_table(path: str | Path) -> RemapTable:
    return parse_remap_table(Path(path).read_text())


def cityscapes_table() -> RemapTable:
    """The shipped 34-class to 16-super-class Cityscapes grouping."""
    ref = importlib.resources.files("scenegan.data") / "cityscapes_34to16.yaml"
    return parse_remap_table(ref.read_text())


def remap(label_map: LabelMap, table: RemapTable) -> LabelMap:
    """Rewrite a label map to super-class indices.

    Per-super-class pixel counts of the output equal the summed counts of
    the corresponding source classes; any value not covered by the table
    raises :class:`UnmappedClassError` naming the offending values.
    """
    lookup = table.lookup()
    values = label_map.values
    present = np.unique(values)
    uncovered = [int(v) for v in present if v >= len(lookup) or lookup[v] < 0]
    if uncovered:
        raise UnmappedClassError(uncovered)
    return LabelMap(values=lookup[values], num_classes=table.num_super_classes)


def one_hot(label_map: LabelMap) -> np.ndarray:
    """Per-class binary mask stack of shape (C, H, W), dtype uint8."""
    c = label_map.num_classes
    flat = np.eye(c, dtype=np.uint8)[label_map.values.reshape(-1)]
    return flat.reshape(label_map.height, label_map.width, c).transpose(2, 0, 1)


def class_statistics(label_map: LabelMap) -> np.ndarray:
    """Per-class pixel fractions (length C, sums to 1)."""
    counts = np.bincount(label_map.values.reshape(-1), minlength=label_map.num_classes)
    return counts.astype(np.float64) / label_map.values.size


def load_label_map(path: str | Path, num_classes: int | None = None) -> LabelMap:
    """Read an 8-bit indexed PNG as a label map.

    Without an explicit ``num_classes`` the declared count is max value + 1.
    """
    arr = np.asarray(Image.open(path)).astype(np.int64)
    if arr.ndim == 3:  # indexed images may load with a palette axis
        arr = arr[..., 0]
    return LabelMap(values=arr, num_classes=num_classes or int(arr.max()) + 1)


def save_label_map(label_map: LabelMap, path: str | Path):
    if label_map.num_classes > 256:
        raise GroupingError("only up to 256 classes fit an 8-bit indexed image")
    Image.fromarray(label_map.values.astype(np.uint8), mode="L").save(path)


def remap_directory(table: RemapTable, in_dir: str | Path, out_dir: str | Path):
    """Remap every PNG label map under ``in_dir`` into ``out_dir``.

    Returns (number of files written, sorted list of unmapped values seen).
    All files are attempted so the caller can report every offending value.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    unmapped: set[int] = set()
    written = 0
    for src in sorted(in_dir.glob("*.png")):
        lm = load_label_map(src, num_classes=max(table.num_source_classes, 256))
        try:
            save_label_map(remap(lm, table), out_dir / src.name)
            written += 1
        except UnmappedClassError as exc:
            unmapped.update(exc.values)
    return written, sorted(unmapped)
