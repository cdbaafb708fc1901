import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenegan.grouping import (
    LabelMap,
    PartitionError,
    RemapEntry,
    RemapTable,
    SchemaError,
    UnmappedClassError,
    cityscapes_table,
    class_statistics,
    load_label_map,
    one_hot,
    parse_remap_table,
    remap,
    save_label_map,
)

IDENTITY_3 = """
super_classes:
  - {name: a, sources: [0]}
  - {name: b, sources: [1]}
  - {name: c, sources: [2]}
"""


def random_label_map(rng, num_classes, h=8, w=8):
    return LabelMap(values=rng.integers(0, num_classes, size=(h, w)), num_classes=num_classes)


class TestParseRemapTable:
    def test_identity_table(self):
        table = parse_remap_table(IDENTITY_3)
        assert table.num_super_classes == 3
        assert table.lookup().tolist() == [0, 1, 2]

    def test_cityscapes_table_matches_published_grouping(self):
        table = cityscapes_table()
        assert table.num_super_classes == 16
        assert table.num_source_classes == 34
        by_name = {e.name: e for e in table.entries}
        # road, parking, rail track fold into the drive-able group
        assert by_name["Drive-able"].sources == frozenset({7, 9, 10})
        assert by_name["Void"].sources == frozenset(range(7))
        assert by_name["Poles"].sources == frozenset({17, 18})

    def test_missing_source_is_partition_violation(self):
        doc = """
super_classes:
  - {name: a, sources: [0, 1]}
  - {name: b, sources: [2, 4]}
"""
        with pytest.raises(PartitionError, match="3"):
            parse_remap_table(doc)

    def test_duplicate_source_is_partition_violation(self):
        doc = """
super_classes:
  - {name: a, sources: [0, 1]}
  - {name: b, sources: [1, 2]}
"""
        with pytest.raises(PartitionError, match="1"):
            parse_remap_table(doc)

    def test_gap_in_super_indices_is_schema_error(self):
        with pytest.raises(SchemaError):
            RemapTable((
                RemapEntry("a", 0, frozenset({0})),
                RemapEntry("b", 2, frozenset({1})),
            ))

    def test_single_class_rejected(self):
        with pytest.raises(SchemaError):
            parse_remap_table("super_classes:\n  - {name: only, sources: [0]}\n")

    def test_garbage_document(self):
        with pytest.raises(SchemaError):
            parse_remap_table("just a string")


class TestRemap:
    def test_identity_table_is_identity(self, rng):
        table = parse_remap_table(IDENTITY_3)
        lm = random_label_map(rng, 3)
        out = remap(lm, table)
        np.testing.assert_array_equal(out.values, lm.values)

    def test_pixel_count_conservation_against_histogram_oracle(self, rng):
        # brute-force per-pixel histogram oracle on a known 4x4 map
        table = parse_remap_table("""
super_classes:
  - {name: ab, sources: [0, 1]}
  - {name: cd, sources: [2, 3]}
""")
        lm = LabelMap(values=rng.integers(0, 4, size=(4, 4)), num_classes=4)
        out = remap(lm, table)
        source_counts = [0] * 4
        for i in range(4):
            for j in range(4):
                source_counts[lm.values[i, j]] += 1
        super_counts = [0] * 2
        for i in range(4):
            for j in range(4):
                super_counts[out.values[i, j]] += 1
        assert super_counts[0] == source_counts[0] + source_counts[1]
        assert super_counts[1] == source_counts[2] + source_counts[3]

    def test_cityscapes_remap_of_synthetic_34_class_map(self, rng):
        table = cityscapes_table()
        lm = random_label_map(rng, 34, 16, 16)
        out = remap(lm, table)
        assert out.num_classes == 16
        assert len(np.unique(out.values)) <= 16

    def test_uncovered_value_raises_with_value(self):
        table = parse_remap_table(IDENTITY_3)
        lm = LabelMap(values=np.full((2, 2), 5), num_classes=6)
        with pytest.raises(UnmappedClassError, match="5"):
            remap(lm, table)

    def test_idempotent_under_induced_identity(self, rng):
        table = cityscapes_table()
        once = remap(random_label_map(rng, 34), table)
        identity = RemapTable.identity(table.num_super_classes)
        np.testing.assert_array_equal(remap(once, identity).values, once.values)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 12))
    def test_count_conservation_property(self, seed, num_sources):
        rng = np.random.default_rng(seed)
        # random partition of the sources into 2..num_sources groups
        num_groups = int(rng.integers(2, num_sources + 1))
        assignment = rng.integers(0, num_groups, size=num_sources)
        assignment[rng.permutation(num_sources)[:num_groups]] = np.arange(num_groups)
        table = RemapTable(tuple(
            RemapEntry(f"g{g}", g, frozenset(np.flatnonzero(assignment == g).tolist()))
            for g in range(num_groups)
        ))
        lm = random_label_map(rng, num_sources)
        out = remap(lm, table)
        before = np.bincount(lm.values.ravel(), minlength=num_sources)
        after = np.bincount(out.values.ravel(), minlength=num_groups)
        for g in range(num_groups):
            assert after[g] == before[assignment == g].sum()


class TestOneHot:
    def test_constant_map(self):
        lm = LabelMap(values=np.zeros((3, 4), dtype=np.int64), num_classes=3)
        stack = one_hot(lm)
        assert stack.shape == (3, 3, 4)
        assert stack[0].all() and not stack[1].any() and not stack[2].any()

    def test_channel_sum_is_one(self, rng):
        stack = one_hot(random_label_map(rng, 5))
        np.testing.assert_array_equal(stack.sum(axis=0), np.ones((8, 8)))

    def test_argmax_round_trip(self, rng):
        lm = random_label_map(rng, 4)
        np.testing.assert_array_equal(one_hot(lm).argmax(axis=0), lm.values)


class TestClassStatistics:
    def test_constant_map(self):
        lm = LabelMap(values=np.full((4, 4), 2), num_classes=3)
        np.testing.assert_allclose(class_statistics(lm), [0.0, 0.0, 1.0])

    def test_half_half(self):
        lm = LabelMap(values=np.array([[0, 1], [0, 1]]), num_classes=2)
        np.testing.assert_allclose(class_statistics(lm), [0.5, 0.5])

    def test_matches_pixel_loop_oracle(self, rng):
        lm = random_label_map(rng, 6, 16, 16)
        fractions = class_statistics(lm)
        for c in range(6):
            count = sum(
                1 for i in range(16) for j in range(16) if lm.values[i, j] == c
            )
            assert fractions[c] == pytest.approx(count / 256, abs=1e-12)
        assert fractions.sum() == pytest.approx(1.0, abs=1e-9)


class TestLabelMapIO:
    def test_png_round_trip(self, tmp_path, rng):
        lm = random_label_map(rng, 16)
        save_label_map(lm, tmp_path / "m.png")
        loaded = load_label_map(tmp_path / "m.png", num_classes=16)
        np.testing.assert_array_equal(loaded.values, lm.values)

    def test_invalid_values_rejected(self):
        with pytest.raises(Exception):
            LabelMap(values=np.array([[0, 7]]), num_classes=3)
        with pytest.raises(Exception):
            LabelMap(values=np.zeros((0, 4), dtype=np.int64), num_classes=2)
