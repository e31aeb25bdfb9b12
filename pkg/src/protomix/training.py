"""Episodic training loop, evaluation protocol, lambda statistics, ablations."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .data import LabeledDataset, LabelEmbeddings
from .episodes import EpisodeConfig, episode_stream, sample_episode
from .errors import ConfigurationError, TrainingDivergedError
from .model import ConditioningMode, CrossModalModel, ModelConfig
from .tensor import GradientTape, sgd_momentum_step

__all__ = [
    "TrainConfig",
    "TraceRow",
    "EvalReport",
    "LambdaRow",
    "train",
    "evaluate",
    "lambda_statistics",
    "ablation_run",
    "harmonic_accuracy",
]


class TraceRow(NamedTuple):
    iteration: int
    learning_rate: float
    batch_loss: float


class LambdaRow(NamedTuple):
    k_shot: int
    lambda_mean: float
    lambda_std: float


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation schedule for episodic training.

    The learning rate starts at initial_lr and is divided by anneal_factor at
    each iteration index listed in anneal_steps. One step averages the episode
    loss over tasks_per_batch freshly sampled episodes.
    """

    episode_config: EpisodeConfig
    iterations: int
    initial_lr: float = 0.1
    momentum: float = 0.9
    anneal_steps: tuple[int, ...] = ()
    anneal_factor: float = 10.0
    tasks_per_batch: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        if self.initial_lr <= 0:
            raise ConfigurationError(f"initial_lr must be positive, got {self.initial_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.anneal_factor <= 0:
            raise ConfigurationError(f"anneal_factor must be positive, got {self.anneal_factor}")
        if self.tasks_per_batch < 1:
            raise ConfigurationError(f"tasks_per_batch must be >= 1, got {self.tasks_per_batch}")
        steps = tuple(self.anneal_steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigurationError(f"anneal_steps must be strictly increasing, got {steps}")
        if steps and (steps[0] < 1 or steps[-1] > self.iterations):
            raise ConfigurationError(
                f"anneal_steps must lie in [1, {self.iterations}], got {steps}"
            )
        object.__setattr__(self, "anneal_steps", steps)


@dataclass
class EvalReport:
    """Aggregate over many evaluation episodes, with a 95% confidence interval
    half-width of 1.96 * stdev(per-episode accuracies) / sqrt(n_episodes)."""

    n_episodes: int
    queries_per_episode: int
    mean_accuracy: float
    ci95_halfwidth: float
    lambda_mean: float
    lambda_std: float
    per_episode_accuracies: list[float]


def train(
    model: CrossModalModel,
    dataset: LabeledDataset,
    split: frozenset[int] | set[int],
    config: TrainConfig,
    label_embeddings: LabelEmbeddings,
) -> list[TraceRow]:
    """Run the episodic optimisation loop in place; returns the loss trace.

    Fully reproducible: episode sampling and dropout masks derive from two
    child streams of config.seed. Aborts on a non-finite batch loss rather
    than clipping, so gradient defects surface immediately.
    """
    children = np.random.SeedSequence(config.seed).spawn(2)
    episode_rng = np.random.default_rng(children[0])
    dropout_rng = np.random.default_rng(children[1])
    params = model.parameters()
    anneal_points = set(config.anneal_steps)
    lr = config.initial_lr
    trace: list[TraceRow] = []
    for iteration in range(1, config.iterations + 1):
        if iteration in anneal_points:
            lr /= config.anneal_factor
        with GradientTape() as tape:
            total = None
            for _ in range(config.tasks_per_batch):
                episode = sample_episode(dataset, split, config.episode_config, episode_rng)
                loss = model.episode_loss(
                    episode, label_embeddings, training=True, rng=dropout_rng
                )
                total = loss if total is None else T.add(total, loss)
            batch_loss = T.scale(total, 1.0 / config.tasks_per_batch)
        value = batch_loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(iteration, lr)
        grads = tape.gradients(batch_loss)
        sgd_momentum_step(params, grads, lr, config.momentum)
        trace.append(TraceRow(iteration, lr, value))
    return trace


def evaluate(
    model: CrossModalModel,
    dataset: LabeledDataset,
    split: frozenset[int] | set[int],
    episode_config: EpisodeConfig,
    n_episodes: int,
    queries_per_episode: int,
    seed: int,
    label_embeddings: LabelEmbeddings,
) -> EvalReport:
    """Dropout-free accuracy over a seeded stream of evaluation episodes.

    queries_per_episode is split evenly across the N categories (it must be
    divisible by n_way; evaluation episodes stay class-balanced).
    """
    if n_episodes < 1:
        raise ConfigurationError(f"n_episodes must be >= 1, got {n_episodes}")
    if queries_per_episode % episode_config.n_way != 0:
        raise ConfigurationError(
            f"queries_per_episode ({queries_per_episode}) must be divisible by "
            f"n_way ({episode_config.n_way}) to keep episodes class-balanced"
        )
    eval_config = EpisodeConfig(
        episode_config.n_way,
        episode_config.k_shot,
        queries_per_episode // episode_config.n_way,
    )
    accuracies: list[float] = []
    lambdas: list[np.ndarray] = []
    for episode in episode_stream(dataset, split, eval_config, seed, n_episodes):
        outcome = model.evaluate_episode(episode, label_embeddings)
        accuracies.append(outcome.accuracy)
        lambdas.append(outcome.lambda_values)
    all_lambdas = np.concatenate(lambdas)
    if n_episodes >= 2:
        ci95 = 1.96 * float(np.std(accuracies, ddof=1)) / math.sqrt(n_episodes)
    else:
        warnings.warn("ci95 is undefined for a single episode; reporting 0")
        ci95 = 0.0
    return EvalReport(
        n_episodes=n_episodes,
        queries_per_episode=queries_per_episode,
        mean_accuracy=float(np.mean(accuracies)),
        ci95_halfwidth=ci95,
        lambda_mean=float(all_lambdas.mean()),
        lambda_std=float(all_lambdas.std()),
        per_episode_accuracies=accuracies,
    )


def lambda_statistics(
    model: CrossModalModel,
    dataset: LabeledDataset,
    split: frozenset[int] | set[int],
    shot_counts: Sequence[int],
    episode_budget: int,
    n_way: int = 5,
    seed: int = 0,
    label_embeddings: LabelEmbeddings | None = None,
) -> list[LambdaRow]:
    """Mixing-coefficient mean/std of a fixed model, evaluated per shot count.

    Values aggregate over every (episode, category) coefficient, or every
    (episode, category, query) one in query-conditioned mode, evaluation mode
    throughout. Note a model whose coefficient is conditioned only on label
    embeddings produces shot-independent statistics here; shot trends arise
    from models trained per shot count (see the ablation/benchmark drivers).
    """
    if label_embeddings is None:
        raise ConfigurationError("lambda_statistics requires label embeddings")
    rows = []
    for k in shot_counts:
        values: list[np.ndarray] = []
        config = EpisodeConfig(n_way, k, 1)
        for episode in episode_stream(dataset, split, config, seed, episode_budget):
            values.append(model.evaluate_episode(episode, label_embeddings).lambda_values)
        stacked = np.concatenate(values)
        rows.append(LambdaRow(k, float(stacked.mean()), float(stacked.std())))
    return rows


def ablation_run(
    dataset: LabeledDataset,
    label_embeddings: LabelEmbeddings,
    train_split: frozenset[int] | set[int],
    eval_split: frozenset[int] | set[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    modes: Sequence[ConditioningMode],
    n_episodes: int,
    queries_per_episode: int,
    eval_seed: int,
) -> list[tuple[ConditioningMode, EvalReport]]:
    """Train one model per conditioning mode with identical seeds and data,
    then evaluate each on the same seeded episode stream."""
    rows = []
    for mode in modes:
        mode = ConditioningMode(mode)
        model = CrossModalModel(replace(model_config, mode=mode))
        train(model, dataset, train_split, train_config, label_embeddings)
        report = evaluate(
            model,
            dataset,
            eval_split,
            train_config.episode_config,
            n_episodes,
            queries_per_episode,
            eval_seed,
            label_embeddings,
        )
        rows.append((mode, report))
    return rows


def harmonic_accuracy(seen_accuracy: float, unseen_accuracy: float) -> float:
    """Harmonic mean of seen- and unseen-class accuracies; 0 when both are 0."""
    if not 0.0 <= seen_accuracy <= 1.0 or not 0.0 <= unseen_accuracy <= 1.0:
        raise ConfigurationError("accuracies must lie in [0, 1]")
    total = seen_accuracy + unseen_accuracy
    if total == 0.0:
        return 0.0
    return 2.0 * seen_accuracy * unseen_accuracy / total
