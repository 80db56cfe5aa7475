import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fives.data import (
    RARE,
    ColumnSpec,
    EmptyTableError,
    EncodedTable,
    LabelError,
    NumericDomainError,
    ParseError,
    Preprocessor,
    SchemaError,
    SplitError,
    UnseenCategoryError,
    check_schema,
    discretize_numeric,
    dump_schema,
    encode_categorical,
    iter_batches,
    load_csv,
    load_schema,
    merge_rare_values,
    preprocess,
    split_dataset,
    split_sizes,
)

SCHEMA = [ColumnSpec("age", "numeric", 10), ColumnSpec("city", "categorical")]


class TestColumnSpec:
    def test_granularity_only_for_numeric(self):
        with pytest.raises(SchemaError):
            ColumnSpec("city", "categorical", 10)
        with pytest.raises(SchemaError):
            ColumnSpec("age", "numeric", None)

    def test_granularity_must_be_supported(self):
        with pytest.raises(SchemaError):
            ColumnSpec("age", "numeric", 7)

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError):
            check_schema([ColumnSpec("a", "categorical"), ColumnSpec("a", "categorical")])

    def test_schema_file_round_trip(self, write_json):
        path = write_json(dump_schema(SCHEMA, "label"), "schema.json")
        schema, label = load_schema(path)
        assert schema == SCHEMA and label == "label"

    def test_missing_schema_file(self, tmp_path):
        with pytest.raises(SchemaError):
            load_schema(tmp_path / "nope.json")


class TestLoadCsv:
    def test_three_rows(self, write_csv):
        path = write_csv([["age", "city", "label"], [30, "x", 0], [40, "y", 1], [50, "x", 1]])
        raw = load_csv(path, SCHEMA, "label")
        assert raw.n_rows == 3
        assert len(raw.columns) == 2
        np.testing.assert_array_equal(raw.columns["age"], [30.0, 40.0, 50.0])
        assert raw.columns["city"] == ["x", "y", "x"]
        np.testing.assert_array_equal(raw.labels, [0, 1, 1])

    def test_non_binary_label(self, write_csv):
        path = write_csv([["age", "city", "label"], [30, "x", 2]])
        with pytest.raises(LabelError):
            load_csv(path, SCHEMA, "label")

    def test_header_only(self, write_csv):
        path = write_csv([["age", "city", "label"]])
        with pytest.raises(EmptyTableError):
            load_csv(path, SCHEMA, "label")

    def test_missing_column(self, write_csv):
        path = write_csv([["age", "label"], [30, 1]])
        with pytest.raises(SchemaError, match="city"):
            load_csv(path, SCHEMA, "label")

    def test_missing_label_column(self, write_csv):
        path = write_csv([["age", "city"], [30, "x"]])
        with pytest.raises(SchemaError, match="label"):
            load_csv(path, SCHEMA, "label")

    def test_unparseable_numeric_names_row_and_column(self, write_csv):
        path = write_csv([["age", "city", "label"], [30, "x", 0], ["old", "y", 1]])
        with pytest.raises(ParseError, match=r"row 3.*'age'"):
            load_csv(path, SCHEMA, "label")

    def test_empty_string_is_a_category(self, write_csv):
        path = write_csv([["age", "city", "label"], [30, "", 0], [31, "", 1]])
        assert load_csv(path, SCHEMA, "label").columns["city"] == ["", ""]


class TestDiscretize:
    def test_equal_width_with_max_clamp(self):
        np.testing.assert_array_equal(discretize_numeric([0, 5, 10], 10), [0, 5, 9])

    def test_constant_column(self):
        np.testing.assert_array_equal(discretize_numeric([7, 7, 7], 10), [0, 0, 0])

    def test_uniform_histogram(self):
        values = np.random.default_rng(0).random(1000)
        ids = discretize_numeric(values, 10)
        counts = np.bincount(ids, minlength=10)
        # histogram oracle with the same edges, computed independently
        lo, hi = values.min(), values.max()
        edges = lo + (hi - lo) * np.arange(11) / 10
        oracle, _ = np.histogram(values, bins=edges)
        np.testing.assert_array_equal(counts, oracle)
        assert np.all(np.abs(counts - 100) <= 40)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NumericDomainError):
            discretize_numeric([0.0, bad, 1.0], 10)

    def test_granularity_below_two(self):
        with pytest.raises(ValueError):
            discretize_numeric([0, 1], 1)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.sampled_from([10, 100, 1000]))
    def test_ids_in_range_and_monotone(self, values, B):
        ids = discretize_numeric(values, B)
        assert ids.min() >= 0 and ids.max() <= B - 1
        order = np.argsort(values, kind="stable")
        assert np.all(np.diff(ids[order]) >= 0)


class TestMergeRare:
    def test_threshold_five(self):
        col = ["a"] * 6 + ["b"] * 2 + ["c"]
        assert merge_rare_values(col, 5) == ["a"] * 6 + [RARE] * 3

    def test_all_frequent_unchanged(self):
        col = ["a"] * 5 + ["b"] * 5
        assert merge_rare_values(col, 5) == col

    def test_all_unique(self):
        assert merge_rare_values(["a", "b", "c"], 2) == [RARE] * 3

    def test_min_freq_must_be_positive(self):
        with pytest.raises(ValueError):
            merge_rare_values(["a"], 0)


class TestEncode:
    def test_first_appearance(self):
        t = encode_categorical([["x", "y", "x"]], [0, 1, 0])
        np.testing.assert_array_equal(t.codes[:, 0], [0, 1, 0])
        assert t.cardinalities == (2,)

    def test_identical_columns(self):
        col = ["p", "q", "q", "r"]
        t = encode_categorical([col, list(col)], [0, 1, 0, 1])
        np.testing.assert_array_equal(t.codes[:, 0], t.codes[:, 1])

    def test_decode_inverts(self):
        cols = [["x", "y", "x", "z"], ["1", "1", "2", "2"]]
        t = encode_categorical(cols, [0, 1, 0, 1])
        assert t.decode() == cols

    def test_serialization_round_trip(self, tmp_path):
        t = encode_categorical({"a": ["x", "y", "x"], "b": ["u", "u", "v"]}, [0, 1, 1])
        t.save(tmp_path / "t.json")
        back = EncodedTable.load(tmp_path / "t.json")
        np.testing.assert_array_equal(back.codes, t.codes)
        assert back.vocab_maps == t.vocab_maps and back.names == ["a", "b"]

    def test_format_version_checked(self):
        payload = encode_categorical([["x"]], [1]).to_dict()
        payload["format_version"] = 99
        with pytest.raises(ValueError):
            EncodedTable.from_dict(payload)

    def test_validate_catches_bad_label(self):
        with pytest.raises(LabelError):
            EncodedTable(np.zeros((2, 1)), [0, 2], [1], [{"a": 0}]).validate()


class TestPreprocessor:
    def _raw(self, write_csv, n=40, seed=0):
        rng = np.random.default_rng(seed)
        rows = [["age", "city", "label"]]
        for _ in range(n):
            rows.append([int(rng.integers(18, 80)), rng.choice(["a", "a", "b", "c", "rare1"]), int(rng.integers(0, 2))])
        rows.append([99, "unique", 1])
        return load_csv(write_csv(rows), SCHEMA, "label")

    def test_row_count_and_alignment(self, write_csv):
        raw = self._raw(write_csv)
        t = preprocess(raw, min_freq=5)
        assert t.n_rows == raw.n_rows
        np.testing.assert_array_equal(t.labels, raw.labels)
        t.validate()

    def test_cardinality_is_max_code_plus_one(self, write_csv):
        t = preprocess(self._raw(write_csv), min_freq=5)
        np.testing.assert_array_equal(t.codes.max(axis=0) + 1, t.cardinalities)
        assert all(c <= t.n_rows + 1 for c in t.cardinalities)

    def test_rare_value_merged(self, write_csv):
        t = preprocess(self._raw(write_csv), min_freq=5)
        city = t.vocab_maps[1]
        assert RARE in city and "unique" not in city

    def test_deterministic(self, write_csv):
        raw = self._raw(write_csv)
        a, b = preprocess(raw), preprocess(raw)
        assert a.to_dict() == b.to_dict()

    def test_multi_granularity_expands_numeric(self, write_csv):
        t = preprocess(self._raw(write_csv), multi_granularity=True)
        assert t.names == ["age@10", "age@100", "age@1000", "city"]

    def test_unseen_category_maps_to_rare(self, write_csv):
        pre = Preprocessor(SCHEMA, min_freq=5).fit(self._raw(write_csv))
        other = load_csv(write_csv([["age", "city", "label"], [30, "never-seen", 1]], "b.csv"), SCHEMA, "label")
        t = pre.transform(other)
        assert t.codes[0, 1] == pre.vocab_maps_[1][RARE]

    def test_unseen_without_rare_bucket_raises(self, write_csv):
        rows = [["age", "city", "label"]] + [[i, "a" if i % 2 else "b", i % 2] for i in range(20)]
        pre = Preprocessor(SCHEMA, min_freq=1).fit(load_csv(write_csv(rows), SCHEMA, "label"))
        other = load_csv(write_csv([["age", "city", "label"], [3, "zzz", 0]], "c.csv"), SCHEMA, "label")
        with pytest.raises(UnseenCategoryError):
            pre.transform(other)


def _table(n):
    return EncodedTable(np.arange(n)[:, None] % 3, np.arange(n) % 2, [3], [{"a": 0, "b": 1, "c": 2}])


class TestSplit:
    def test_sizes_train_takes_remainder(self):
        assert split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
        assert [p.n_rows for p in split_dataset(_table(10), (0.8, 0.1, 0.1), 3)] == [8, 1, 1]

    def test_partition(self):
        t = EncodedTable(np.arange(1000)[:, None], np.arange(1000) % 2, [1000], [{}])
        parts = split_dataset(t, (0.6, 0.2, 0.2), 0)
        idx = np.concatenate([p.codes[:, 0] for p in parts])
        assert len(idx) == 1000 and len(np.unique(idx)) == 1000

    def test_deterministic_per_seed(self):
        t = EncodedTable(np.arange(1000)[:, None], np.arange(1000) % 2, [1000], [{}])
        a = split_dataset(t, (0.6, 0.2, 0.2), 5)
        b = split_dataset(t, (0.6, 0.2, 0.2), 5)
        c = split_dataset(t, (0.6, 0.2, 0.2), 6)
        assert all(np.array_equal(x.codes, y.codes) for x, y in zip(a, b))
        assert not np.array_equal(a[1].codes, c[1].codes)

    def test_vocab_shared(self):
        parts = split_dataset(_table(30), (0.6, 0.2, 0.2), 0)
        assert all(p.vocab_maps is parts[0].vocab_maps for p in parts)

    def test_empty_split_rejected(self):
        with pytest.raises(SplitError):
            split_dataset(_table(5), (0.9, 0.05, 0.05), 0)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(SplitError):
            split_sizes(100, (0.5, 0.2, 0.2))


class TestBatches:
    def test_short_last_batch(self):
        assert [len(b) for b in iter_batches(_table(5), 2)] == [2, 2, 1]

    def test_row_order_without_shuffle(self):
        idx = np.concatenate([b.indices for b in iter_batches(_table(7), 3)])
        np.testing.assert_array_equal(idx, np.arange(7))

    def test_shuffle_deterministic_and_complete(self):
        a = np.concatenate([b.indices for b in iter_batches(_table(50), 8, shuffle=True, seed=4)])
        b = np.concatenate([b.indices for b in iter_batches(_table(50), 8, shuffle=True, seed=4)])
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(np.sort(a), np.arange(50))

    def test_batch_materializes_rows(self):
        t = _table(6)
        for b in iter_batches(t, 4, shuffle=True, seed=0):
            np.testing.assert_array_equal(b.codes, t.codes[b.indices])
            np.testing.assert_array_equal(b.labels, t.labels[b.indices])

    def test_batch_size_must_be_positive(self):
        with pytest.raises(ValueError):
            list(iter_batches(_table(3), 0))
