import numpy as np
import pytest

from intrarank.data import (
    BUNDLED_SETTINGS,
    BatchSpec,
    DatasetTable,
    EpochState,
    bundled_dataset,
    generate_synthetic,
    iter_epoch,
    load_table,
    sample_batch,
    save_table,
)
from intrarank.errors import InsufficientClasses, ParseError, ValidationError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestSynthetic:
    def test_zero_spread(self):
        t = generate_synthetic(4, 5, 6, 0.0, seed=0, noise=0.0)
        for c in range(4):
            rows = t.features[t.labels == c]
            np.testing.assert_allclose(rows, np.broadcast_to(rows[0], rows.shape), atol=1e-15)

    def test_deterministic(self):
        a = generate_synthetic(5, 4, 8, 1.0, seed=3)
        b = generate_synthetic(5, 4, 8, 1.0, seed=3)
        np.testing.assert_array_equal(a.features, b.features)
        assert a.ids == b.ids and a.test_classes == b.test_classes

    def test_within_exceeds_between(self):
        t = generate_synthetic(20, 10, 16, 1.0, seed=0)
        cos = t.features @ t.features.T
        same = t.labels[:, None] == t.labels[None, :]
        off = ~np.eye(len(t.labels), dtype=bool)
        assert cos[same & off].mean() > cos[~same].mean()

    def test_split_disjoint(self):
        t = generate_synthetic(9, 3, 4, 1.0, seed=0)
        assert t.test_classes == frozenset({6, 7, 8})
        assert not (t.train_classes & t.test_classes)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            generate_synthetic(0, 3, 4, 1.0, seed=0)

    def test_bundled_matches_generator(self):
        shipped = bundled_dataset()
        regen = generate_synthetic(**BUNDLED_SETTINGS)
        np.testing.assert_array_equal(shipped.features, regen.features)
        np.testing.assert_array_equal(shipped.labels, regen.labels)
        assert shipped.test_classes == frozenset(range(20, 30))
        assert len(shipped.train_classes) == 20 and shipped.dim == 16


class TestLoadTable:
    def test_happy_path(self, tmp_path):
        p = write(tmp_path / "t.csv", "id,label,f0,f1\na,0,1.0,0.0\nb,0,0.5,0.5\nc,1,0,1\n")
        t = load_table(p, require_train=False)
        assert len(t.labels) == 3 and t.ids == ["a", "b", "c"]

    def test_wrong_column_count(self, tmp_path):
        p = write(tmp_path / "t.csv", "id,label,f0,f1\na,0,1.0,0.0\nb,0,0.5\n")
        with pytest.raises(ParseError) as err:
            load_table(p)
        assert err.value.line == 3

    def test_bad_header(self, tmp_path):
        p = write(tmp_path / "t.csv", "name,label,f0\na,0,1\n")
        with pytest.raises(ParseError) as err:
            load_table(p)
        assert err.value.line == 1

    def test_bad_label(self, tmp_path):
        p = write(tmp_path / "t.csv", "id,label,f0\na,x,1\n")
        with pytest.raises(ParseError):
            load_table(p)

    def test_singleton_train_class(self, tmp_path):
        p = write(tmp_path / "t.csv", "id,label,f0\na,0,1\nb,0,2\nc,1,3\n")
        with pytest.raises(ValidationError):
            load_table(p)

    def test_singleton_allowed_in_test_split(self, tmp_path):
        p = write(tmp_path / "t.csv", "id,label,f0\na,0,1\nb,0,2\nc,1,3\n")
        s = write(tmp_path / "split.txt", "1\n")
        t = load_table(p, split_path=s)
        assert t.test_classes == frozenset({1})

    def test_non_finite(self, tmp_path):
        p = write(tmp_path / "t.csv", "id,label,f0\na,0,1\nb,0,nan\n")
        with pytest.raises(ValidationError):
            load_table(p)

    def test_roundtrip(self, tmp_path):
        t = generate_synthetic(4, 3, 5, 1.0, seed=2, n_test_classes=1)
        save_table(t, tmp_path / "t.csv", tmp_path / "s.txt")
        back = load_table(tmp_path / "t.csv", split_path=tmp_path / "s.txt")
        np.testing.assert_array_equal(back.features, t.features)
        assert back.test_classes == t.test_classes

    def test_split_is_by_class(self):
        t = DatasetTable(np.eye(4), [0, 0, 1, 1], list("abcd"), frozenset({1}))
        assert t.train_classes == frozenset({0}) and set(t.test().labels) == {1}
        with pytest.raises(ValidationError):
            DatasetTable(np.eye(4), [0, 0, 1, 1], list("abcd")).test()


class TestSampler:
    def setup_method(self):
        self.table = generate_synthetic(12, 6, 4, 1.0, seed=0, n_test_classes=0)

    def test_histogram(self):
        spec = BatchSpec(5, 4, seed=0)
        x, y, idx = sample_batch(self.table, spec, EpochState.start(self.table, spec, 0))
        assert x.shape == (20, 4)
        _, counts = np.unique(y, return_counts=True)
        np.testing.assert_array_equal(counts, [4, 4, 4, 4, 4])

    def test_deterministic(self):
        spec = BatchSpec(3, 2, seed=9)
        for epoch in (0, 1):
            a = [idx for _, _, idx in iter_epoch(self.table, spec, epoch)]
            b = [idx for _, _, idx in iter_epoch(self.table, spec, epoch)]
            for u, v in zip(a, b):
                np.testing.assert_array_equal(u, v)

    def test_classes_without_replacement(self):
        spec = BatchSpec(3, 2, seed=1)
        state = EpochState.start(self.table, spec, 0)
        seen = [c for _ in range(4) for c in np.unique(sample_batch(self.table, spec, state)[1])]
        assert sorted(seen) == list(range(12))

    def test_short_class_sampled_with_replacement(self):
        spec = BatchSpec(2, 10, seed=0)
        _, y, _ = sample_batch(self.table, spec, EpochState.start(self.table, spec, 0))
        assert len(y) == 20

    def test_cub_scale(self):
        table = generate_synthetic(60, 5, 4, 1.0, seed=0, n_test_classes=0)
        spec = BatchSpec(45, 4)
        _, y, _ = sample_batch(table, spec, EpochState.start(table, spec, 0))
        assert len(y) == 180 and len(np.unique(y)) == 45

    def test_insufficient(self):
        spec = BatchSpec(20, 2)
        with pytest.raises(InsufficientClasses):
            sample_batch(self.table, spec, EpochState.start(self.table, spec, 0))

    def test_k_must_be_two(self):
        with pytest.raises(ValueError):
            BatchSpec(2, 1)
