import numpy as np
import pytest

from fewshot.data import scan_dataset, split_classes
from fewshot.episodes import (episode_accuracy, one_hot, sample_episode,
                              sample_pairs)
from fewshot.errors import ConfigError, DataError
from fewshot.images import write_ppm


@pytest.fixture()
def manifest(tmp_path):
    rng = np.random.default_rng(1)
    for c in range(8):
        d = tmp_path / f"c{c}"
        d.mkdir()
        for i in range(12):
            write_ppm(d / f"i{i:02d}.ppm", rng.random((3, 4, 4)).astype(np.float32))
    man = scan_dataset(tmp_path)
    return split_classes(man, 5, 1, 2, seed=3)


class TestOneHot:
    def test_basic(self):
        out = one_hot(np.array([2, 0, 1]), 3)
        np.testing.assert_array_equal(out, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
        assert out.dtype == np.float32
        assert one_hot(np.array([0]), 2, dtype="f64").dtype == np.float64

    def test_range_check(self):
        with pytest.raises(DataError, match="out of range"):
            one_hot(np.array([3]), 3)
        with pytest.raises(DataError, match="out of range"):
            one_hot(np.array([-1]), 3)


class TestSampleEpisode:
    def test_shapes_and_ordering(self, manifest):
        rng = np.random.default_rng(0)
        ep = sample_episode(manifest, "base", 4, 3, 2, rng)
        assert len(ep.support_records) == 12 and len(ep.query_records) == 8
        np.testing.assert_array_equal(ep.support_labels, np.repeat(np.arange(4), 3))
        assert sorted(np.bincount(ep.query_labels)) == [2, 2, 2, 2]
        assert len(ep.class_ids) == 4
        # support records really are grouped by class in label order
        for rec, lab in zip(ep.support_records, ep.support_labels):
            assert rec.class_id == ep.class_ids[lab]
        for rec, lab in zip(ep.query_records, ep.query_labels):
            assert rec.class_id == ep.class_ids[lab]

    def test_support_query_disjoint(self, manifest):
        rng = np.random.default_rng(1)
        for _ in range(20):
            ep = sample_episode(manifest, "base", 5, 5, 5, rng)
            sup = {(r.path, r.aug_index) for r in ep.support_records}
            qry = {(r.path, r.aug_index) for r in ep.query_records}
            assert not sup & qry

    def test_classes_come_from_section(self, manifest):
        rng = np.random.default_rng(2)
        test_ids = set(manifest.section_class_ids("test"))
        ep = sample_episode(manifest, "test", 2, 3, 2, rng)
        assert set(ep.class_ids) <= test_ids

    def test_deterministic_under_seed(self, manifest):
        ep1 = sample_episode(manifest, "base", 3, 2, 2, np.random.default_rng(7))
        ep2 = sample_episode(manifest, "base", 3, 2, 2, np.random.default_rng(7))
        assert [r.path for r in ep1.support_records] == [r.path for r in ep2.support_records]
        assert [r.path for r in ep1.query_records] == [r.path for r in ep2.query_records]

    def test_one_hot_helpers(self, manifest):
        ep = sample_episode(manifest, "base", 3, 2, 4, np.random.default_rng(0))
        oh = ep.one_hot_support()
        assert oh.shape == (6, 3)
        np.testing.assert_array_equal(oh.argmax(axis=1), ep.support_labels)
        np.testing.assert_array_equal(ep.one_hot_query().argmax(axis=1), ep.query_labels)

    def test_exhaustion_errors(self, manifest):
        rng = np.random.default_rng(0)
        with pytest.raises(DataError, match="need 6"):
            sample_episode(manifest, "test", 6, 2, 2, rng)  # only 2 test classes
        with pytest.raises(DataError, match=">= 13"):
            sample_episode(manifest, "base", 2, 10, 3, rng)  # 12 images per class
        with pytest.raises(ConfigError, match="n_way"):
            sample_episode(manifest, "base", 1, 1, 1, rng)
        with pytest.raises(ConfigError, match="k_shot"):
            sample_episode(manifest, "base", 2, 0, 1, rng)


class TestSamplePairs:
    def test_fraction_and_shuffle(self, manifest):
        rng = np.random.default_rng(0)
        batch = sample_pairs(manifest, "base", 32, rng, positive_fraction=0.5)
        assert len(batch.a_records) == len(batch.b_records) == 32
        assert batch.same_label.sum() == 16
        for a, b, y in zip(batch.a_records, batch.b_records, batch.same_label):
            assert (a.class_id == b.class_id) == bool(y)

    def test_odd_batch_rounds(self, manifest):
        batch = sample_pairs(manifest, "base", 7, np.random.default_rng(1))
        assert batch.same_label.sum() in (3, 4)

    def test_all_positive_or_negative(self, manifest):
        rng = np.random.default_rng(2)
        pos = sample_pairs(manifest, "base", 8, rng, positive_fraction=1.0)
        assert pos.same_label.all()
        neg = sample_pairs(manifest, "base", 8, rng, positive_fraction=0.0)
        assert not neg.same_label.any()

    def test_positive_pairs_are_distinct_records(self, manifest):
        rng = np.random.default_rng(3)
        batch = sample_pairs(manifest, "base", 24, rng, positive_fraction=1.0)
        for a, b in zip(batch.a_records, batch.b_records):
            assert a.path != b.path

    def test_validation(self, manifest):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError, match="batch size"):
            sample_pairs(manifest, "base", 0, rng)
        with pytest.raises(ConfigError, match="positive_fraction"):
            sample_pairs(manifest, "base", 4, rng, positive_fraction=1.5)

    def test_single_class_section_cannot_negate(self, tmp_path):
        rng = np.random.default_rng(1)
        for c in range(2):
            d = tmp_path / f"c{c}"
            d.mkdir()
            for i in range(3):
                write_ppm(d / f"i{i}.ppm", rng.random((3, 4, 4)).astype(np.float32))
        man = scan_dataset(tmp_path)
        split_classes(man, 1, 0, 1, seed=0)
        with pytest.raises(DataError, match="negative"):
            sample_pairs(man, "base", 4, rng, positive_fraction=0.5)


class TestEpisodeAccuracy:
    def test_values(self):
        assert episode_accuracy(np.array([1, 2, 3]), np.array([1, 2, 0])) == pytest.approx(2 / 3)
        assert episode_accuracy(np.array([0]), np.array([0])) == 1.0

    def test_rejections(self):
        with pytest.raises(DataError, match="shape"):
            episode_accuracy(np.zeros(3), np.zeros(4))
        with pytest.raises(DataError, match="empty"):
            episode_accuracy(np.zeros(0), np.zeros(0))
