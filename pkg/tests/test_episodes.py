"""Episode sampler: counts, disjointness, determinism, frequency."""

import numpy as np
import pytest

from protomix import ConfigurationError
from protomix.data import SyntheticTaskSpec, generate_synthetic_crossmodal
from protomix.episodes import EpisodeConfig, episode_stream, sample_episode


def make_dataset(n_categories=10, samples=8):
    spec = SyntheticTaskSpec(n_categories, max(n_categories, 4), 3, 0.5, 3.0, 1.5, samples, seed=0)
    return generate_synthetic_crossmodal(spec)[0]


class TestEpisodeConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            EpisodeConfig(0, 1, 1)
        with pytest.raises(ConfigurationError):
            EpisodeConfig(2, 0, 1)
        with pytest.raises(ConfigurationError):
            EpisodeConfig(2, 1, 0)

    def test_one_way_allowed(self):
        assert EpisodeConfig(1, 1, 1).n_way == 1


class TestSampleEpisode:
    def test_forced_counts_use_every_sample(self):
        dataset = make_dataset(n_categories=2, samples=2)
        ep = sample_episode(dataset, {0, 1}, EpisodeConfig(2, 1, 1), np.random.default_rng(0))
        assert ep.n_way == 2
        assert len(ep.support_rows) == 2 and len(ep.query_rows) == 2
        assert set(ep.support_rows) | set(ep.query_rows) == {(0, 0), (0, 1), (1, 0), (1, 1)}
        assert not set(ep.support_rows) & set(ep.query_rows)

    def test_too_few_categories(self):
        dataset = make_dataset(n_categories=4)
        with pytest.raises(ConfigurationError, match="5-way"):
            sample_episode(dataset, set(range(4)), EpisodeConfig(5, 1, 1), np.random.default_rng(0))

    def test_too_few_samples_names_deficit(self):
        dataset = make_dataset(n_categories=3, samples=2)
        with pytest.raises(ConfigurationError, match="2 samples"):
            sample_episode(dataset, {0, 1, 2}, EpisodeConfig(2, 2, 1), np.random.default_rng(0))

    def test_same_rng_state_gives_identical_episode(self):
        dataset = make_dataset()
        cfg = EpisodeConfig(3, 2, 2)
        e1 = sample_episode(dataset, set(range(10)), cfg, np.random.default_rng(42))
        e2 = sample_episode(dataset, set(range(10)), cfg, np.random.default_rng(42))
        assert e1.category_ids == e2.category_ids
        np.testing.assert_array_equal(e1.support_x, e2.support_x)
        np.testing.assert_array_equal(e1.query_x, e2.query_x)
        assert e1.support_rows == e2.support_rows

    def test_exact_per_category_counts(self):
        dataset = make_dataset()
        cfg = EpisodeConfig(4, 2, 3)
        ep = sample_episode(dataset, set(range(10)), cfg, np.random.default_rng(1))
        for c in range(4):
            assert int((ep.support_y == c).sum()) == 2
            assert int((ep.query_y == c).sum()) == 3

    def test_category_indices_follow_sorted_global_ids(self):
        dataset = make_dataset()
        ep = sample_episode(dataset, set(range(10)), EpisodeConfig(3, 1, 1), np.random.default_rng(7))
        assert list(ep.category_ids) == sorted(ep.category_ids)
        # index i must hold samples of category_ids[i]
        for (cid, r), y in zip(ep.support_rows, ep.support_y):
            assert ep.category_ids[y] == cid

    def test_sampling_does_not_mutate_dataset(self):
        dataset = make_dataset(n_categories=3)
        before = {c: dataset.features(c).copy() for c in dataset.category_ids()}
        sample_episode(dataset, {0, 1, 2}, EpisodeConfig(2, 2, 2), np.random.default_rng(0))
        for c, feats in before.items():
            np.testing.assert_array_equal(dataset.features(c), feats)


class TestEpisodeStream:
    def test_count_zero_is_empty(self):
        dataset = make_dataset()
        assert list(episode_stream(dataset, set(range(10)), EpisodeConfig(2, 1, 1), 0, 0)) == []

    def test_same_seed_pairwise_identical(self):
        dataset = make_dataset()
        cfg = EpisodeConfig(3, 1, 2)
        s1 = list(episode_stream(dataset, set(range(10)), cfg, 9, 20))
        s2 = list(episode_stream(dataset, set(range(10)), cfg, 9, 20))
        for a, b in zip(s1, s2):
            assert a.category_ids == b.category_ids
            np.testing.assert_array_equal(a.query_x, b.query_x)

    def test_disjointness_holds_for_every_episode(self):
        dataset = make_dataset(samples=6)
        cfg = EpisodeConfig(4, 2, 2)
        for ep in episode_stream(dataset, set(range(10)), cfg, 3, 200):
            assert not set(ep.support_rows) & set(ep.query_rows)
            assert len(set(ep.support_rows)) == len(ep.support_rows)
            assert len(set(ep.query_rows)) == len(ep.query_rows)

    def test_category_frequency_monte_carlo(self):
        # 5-way over 10 categories: each category should land in about half
        # the episodes (within 5 percentage points over 1000 draws).
        dataset = make_dataset(n_categories=10)
        cfg = EpisodeConfig(5, 1, 1)
        counts = np.zeros(10)
        n = 1000
        for ep in episode_stream(dataset, set(range(10)), cfg, 123, n):
            for cid in ep.category_ids:
                counts[cid] += 1
        freq = counts / n
        assert np.all(np.abs(freq - 0.5) < 0.05), freq
