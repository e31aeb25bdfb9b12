"""N-way K-shot episode construction from a category split."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import LabeledDataset
from .errors import ConfigurationError

__all__ = ["EpisodeConfig", "Episode", "sample_episode", "episode_stream"]


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode sizes: N categories, K support and K_Q query samples each.

    n_way == 1 is allowed as a degenerate case (classification is trivial but
    the loss and evaluation paths remain well defined).
    """

    n_way: int
    k_shot: int
    k_query: int

    def __post_init__(self):
        if self.n_way < 1:
            raise ConfigurationError(f"n_way must be >= 1, got {self.n_way}")
        if self.k_shot < 1:
            raise ConfigurationError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.k_query < 1:
            raise ConfigurationError(f"k_query must be >= 1, got {self.k_query}")


@dataclass(frozen=True)
class Episode:
    """One few-shot task. Category indices run 0..N-1 in sorted order of the
    sampled global category ids; support/query rows are grouped by index."""

    category_ids: tuple[int, ...]
    support_x: np.ndarray  # [N*K, feature_dim]
    support_y: np.ndarray  # [N*K] indices in 0..N-1
    query_x: np.ndarray  # [N*K_Q, feature_dim]
    query_y: np.ndarray  # [N*K_Q]
    support_rows: tuple[tuple[int, int], ...]  # (category_id, sample row) identities
    query_rows: tuple[tuple[int, int], ...]

    @property
    def n_way(self) -> int:
        return len(self.category_ids)


def sample_episode(
    dataset: LabeledDataset,
    split: frozenset[int] | set[int],
    config: EpisodeConfig,
    rng: np.random.Generator,
) -> Episode:
    """Draw N categories and K+K_Q distinct samples each, without replacement.

    Sample identity is the positional row within its category, so support and
    query are disjoint even when feature vectors repeat.
    """
    pool = sorted(split)
    if len(pool) < config.n_way:
        raise ConfigurationError(
            f"{config.n_way}-way episode requested from a split of {len(pool)} categories"
        )
    needed = config.k_shot + config.k_query
    chosen = sorted(rng.choice(pool, size=config.n_way, replace=False).tolist())

    support_x, support_y, query_x, query_y = [], [], [], []
    support_rows: list[tuple[int, int]] = []
    query_rows: list[tuple[int, int]] = []
    for index, cid in enumerate(chosen):
        features = dataset.features(cid)
        if features.shape[0] < needed:
            raise ConfigurationError(
                f"category {cid} has {features.shape[0]} samples but the episode "
                f"needs {needed} (K={config.k_shot} + K_Q={config.k_query})"
            )
        rows = rng.choice(features.shape[0], size=needed, replace=False)
        for r in rows[: config.k_shot]:
            support_x.append(features[r])
            support_y.append(index)
            support_rows.append((cid, int(r)))
        for r in rows[config.k_shot :]:
            query_x.append(features[r])
            query_y.append(index)
            query_rows.append((cid, int(r)))

    return Episode(
        category_ids=tuple(chosen),
        support_x=np.array(support_x),
        support_y=np.array(support_y, dtype=np.intp),
        query_x=np.array(query_x),
        query_y=np.array(query_y, dtype=np.intp),
        support_rows=tuple(support_rows),
        query_rows=tuple(query_rows),
    )


def episode_stream(
    dataset: LabeledDataset,
    split: frozenset[int] | set[int],
    config: EpisodeConfig,
    seed: int,
    count: int,
) -> Iterator[Episode]:
    """A reproducible sequence of `count` episodes from one seeded stream."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield sample_episode(dataset, split, config, rng)
