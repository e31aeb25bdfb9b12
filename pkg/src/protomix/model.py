"""Cross-modal few-shot model: visual encoder, semantic transform, adaptive mixing.

Category prototypes are convex combinations of the visual support centroid and
a transformed label embedding; the per-category mixing coefficient is the
sigmoid of a small network over a configurable conditioning input. Queries are
classified by a softmax over negative distances to the mixed prototypes.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import LabelEmbeddings
from .episodes import Episode
from .errors import ConfigurationError, DimensionError, UsageError
from .tensor import Parameter, Tensor

__all__ = [
    "ConditioningMode",
    "ModelConfig",
    "CrossModalModel",
    "visual_prototype",
    "cross_modal_prototype",
    "alignment_prototype",
    "zero_shot_prototype",
    "save_checkpoint",
    "load_checkpoint",
    "EpisodeEvaluation",
]

DISTANCES = ("sq-euclid", "euclid")


class ConditioningMode(str, enum.Enum):
    """Input fed to the mixing network: transformed embedding (W), raw
    embedding (E), visual prototype (P), or query+transformed embedding (WQ,
    which makes the coefficient, and hence the prototype, query-dependent)."""

    W = "w"
    E = "e"
    P = "p"
    WQ = "wq"


@dataclass(frozen=True)
class ModelConfig:
    visual_dim: int
    semantic_dim: int
    embed_dim: int = 32
    encoder_hidden: tuple[int, ...] = (64,)
    transform_hidden: int = 300
    mixer_hidden: int = 300
    mode: ConditioningMode = ConditioningMode.W
    distance: str = "sq-euclid"
    dropout_keep: float = 0.7
    lambda_fixed: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.visual_dim < 1 or self.semantic_dim < 1 or self.embed_dim < 1:
            raise ConfigurationError("all model dimensions must be positive")
        if self.distance not in DISTANCES:
            raise ConfigurationError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigurationError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")
        if self.lambda_fixed is not None and not 0.0 <= self.lambda_fixed <= 1.0:
            raise ConfigurationError(f"lambda_fixed must be in [0, 1], got {self.lambda_fixed}")
        object.__setattr__(self, "mode", ConditioningMode(self.mode))
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))

    @property
    def mixer_input_dim(self) -> int:
        return {
            ConditioningMode.W: self.embed_dim,
            ConditioningMode.E: self.semantic_dim,
            ConditioningMode.P: self.embed_dim,
            ConditioningMode.WQ: 2 * self.embed_dim,
        }[self.mode]


@dataclass
class Dense:
    weight: Parameter
    bias: Parameter


def _make_mlp(rng: np.random.Generator, widths: Sequence[int]) -> list[Dense]:
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        layers.append(
            Dense(
                Parameter(Tensor(T.glorot_uniform(rng, fan_in, fan_out))),
                Parameter(Tensor(np.zeros(fan_out))),
            )
        )
    return layers


def _mlp_forward(
    layers: list[Dense],
    x: Tensor,
    hidden_dropout_keep: float = 1.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    h = x
    for i, layer in enumerate(layers):
        h = T.affine(h, layer.weight.value, layer.bias.value)
        if i < len(layers) - 1:
            h = T.relu(h)
            if hidden_dropout_keep < 1.0:
                h = T.dropout(h, hidden_dropout_keep, rng=rng, training=training)
    return h


def _as_matrix(x) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim == 1:
        return T.reshape(t, (1, t.shape[0])), True
    if t.data.ndim == 2:
        return t, False
    raise DimensionError(f"expected a vector or matrix, got shape {t.shape}")


@dataclass
class EpisodeEvaluation:
    """Evaluation-mode outcome of one episode."""

    probabilities: np.ndarray  # [n_queries, n_way]
    predictions: np.ndarray  # [n_queries]
    accuracy: float
    lambda_values: np.ndarray  # per category, or per (category, query) in WQ mode


class CrossModalModel:
    """Parameter bundle for the encoder, semantic transform, and mixing network."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.encoder = _make_mlp(
            rng, [config.visual_dim, *config.encoder_hidden, config.embed_dim]
        )
        self.semantic_transform = _make_mlp(
            rng, [config.semantic_dim, config.transform_hidden, config.embed_dim]
        )
        self.mixer = _make_mlp(rng, [config.mixer_input_dim, config.mixer_hidden, 1])

    # -- parameter access ---------------------------------------------------

    def parameter_groups(self) -> dict[str, list[Dense]]:
        return {
            "encoder": self.encoder,
            "semantic_transform": self.semantic_transform,
            "mixer": self.mixer,
        }

    def parameters(self) -> list[Parameter]:
        out = []
        for layers in self.parameter_groups().values():
            for layer in layers:
                out.append(layer.weight)
                out.append(layer.bias)
        return out

    @property
    def squared_distance(self) -> bool:
        return self.config.distance == "sq-euclid"

    # -- forward passes -----------------------------------------------------

    def encode_visual(self, x, training: bool = False, rng=None) -> Tensor:
        """Embed feature vectors; batch rows are processed independently."""
        mat, was_vector = _as_matrix(x)
        if mat.shape[1] != self.config.visual_dim:
            raise DimensionError(
                f"visual input has dimension {mat.shape[1]}, encoder expects {self.config.visual_dim}"
            )
        out = _mlp_forward(self.encoder, mat, training=training, rng=rng)
        return T.reshape(out, (self.config.embed_dim,)) if was_vector else out

    def transform_semantic(self, e, training: bool = False, rng=None) -> Tensor:
        """Map label embeddings into the prototype space."""
        mat, was_vector = _as_matrix(e)
        if mat.shape[1] != self.config.semantic_dim:
            raise DimensionError(
                f"semantic input has dimension {mat.shape[1]}, transform expects {self.config.semantic_dim}"
            )
        out = _mlp_forward(
            self.semantic_transform,
            mat,
            hidden_dropout_keep=self.config.dropout_keep,
            training=training,
            rng=rng,
        )
        return T.reshape(out, (self.config.embed_dim,)) if was_vector else out

    def mixing_coefficient(self, conditioning, training: bool = False, rng=None) -> Tensor:
        """Sigmoid of the mixing network; a fixed-lambda model returns the
        constant (useful as the visual-only control at lambda == 1)."""
        mat, was_vector = _as_matrix(conditioning)
        if mat.shape[1] != self.config.mixer_input_dim:
            raise UsageError(
                f"conditioning input has dimension {mat.shape[1]} but mode "
                f"{self.config.mode.value!r} expects {self.config.mixer_input_dim}"
            )
        if self.config.lambda_fixed is not None:
            lam = Tensor(np.full((mat.shape[0], 1), float(self.config.lambda_fixed)))
        else:
            raw = _mlp_forward(
                self.mixer,
                mat,
                hidden_dropout_keep=self.config.dropout_keep,
                training=training,
                rng=rng,
            )
            lam = T.sigmoid(raw)
        return T.reshape(lam, ()) if was_vector else lam

    def classify(self, query_embedding, prototypes) -> Tensor:
        """Probability vector over categories: softmax of negative distances."""
        q = query_embedding if isinstance(query_embedding, Tensor) else Tensor(query_embedding)
        if isinstance(prototypes, Tensor):
            protos = [T.row(prototypes, i) for i in range(prototypes.shape[0])]
        else:
            protos = [p if isinstance(p, Tensor) else Tensor(p) for p in prototypes]
        if not protos:
            raise UsageError("classify needs at least one prototype")
        dist = T.squared_euclidean if self.squared_distance else T.euclidean
        scores = T.stack_cols([T.reshape(T.neg(dist(q, p)), (1,)) for p in protos])
        return T.softmax_from_scores(T.reshape(scores, (len(protos),)))

    # -- episode computations -------------------------------------------------

    def _class_mean_matrix(self, episode: Episode) -> np.ndarray:
        n = episode.n_way
        m = np.zeros((n, episode.support_y.shape[0]))
        for c in range(n):
            members = episode.support_y == c
            count = int(members.sum())
            if count == 0:
                raise UsageError(f"episode has no support samples for category index {c}")
            m[c, members] = 1.0 / count
        return m

    def episode_scores(
        self,
        episode: Episode,
        label_embeddings: LabelEmbeddings,
        training: bool = False,
        rng=None,
    ) -> tuple[Tensor, Tensor]:
        """Scores [n_queries, n_way] (negative distances to mixed prototypes)
        plus the mixing coefficients that produced them."""
        sem = label_embeddings.matrix(episode.category_ids)
        support_emb = self.encode_visual(episode.support_x, training=training, rng=rng)
        query_emb = self.encode_visual(episode.query_x, training=training, rng=rng)
        protos = T.matmul(Tensor(self._class_mean_matrix(episode)), support_emb)
        transformed = self.transform_semantic(sem, training=training, rng=rng)

        if self.config.mode is ConditioningMode.WQ:
            # Per-query coefficients make the prototypes query-dependent, so
            # distances are built one category column at a time.
            n_q = episode.query_x.shape[0]
            score_cols, lam_cols = [], []
            for c in range(episode.n_way):
                w_c = T.repeat_row(T.row(transformed, c), n_q)
                p_c = T.repeat_row(T.row(protos, c), n_q)
                lam = self.mixing_coefficient(
                    T.concat_cols(w_c, query_emb), training=training, rng=rng
                )
                one_minus = T.add_const(T.neg(lam), 1.0)
                mixed = T.add(T.mul(lam, p_c), T.mul(one_minus, w_c))
                d_col = T.rowwise_distance(query_emb, mixed, squared=self.squared_distance)
                score_cols.append(T.neg(d_col))
                lam_cols.append(T.reshape(lam, (n_q,)))
            return T.stack_cols(score_cols), T.stack_cols(lam_cols)
        else:
            conditioning = {
                ConditioningMode.W: transformed,
                ConditioningMode.E: Tensor(sem),
                ConditioningMode.P: protos,
            }[self.config.mode]
            lam = self.mixing_coefficient(conditioning, training=training, rng=rng)
            one_minus = T.add_const(T.neg(lam), 1.0)
            mixed = T.add(T.mul(lam, protos), T.mul(one_minus, transformed))
            distances = T.pairwise_distance(query_emb, mixed, squared=self.squared_distance)
            return T.neg(distances), lam

    def episode_loss(
        self,
        episode: Episode,
        label_embeddings: LabelEmbeddings,
        training: bool = False,
        rng=None,
    ) -> Tensor:
        """Mean negative log-probability of the true category over all queries."""
        scores, _ = self.episode_scores(episode, label_embeddings, training=training, rng=rng)
        return T.cross_entropy_mean(scores, episode.query_y)

    def evaluate_episode(
        self, episode: Episode, label_embeddings: LabelEmbeddings
    ) -> EpisodeEvaluation:
        """Dropout-free forward pass: probabilities, argmax accuracy, lambdas."""
        scores, lam = self.episode_scores(episode, label_embeddings, training=False)
        z = scores.data - scores.data.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        predictions = p.argmax(axis=1)
        accuracy = float((predictions == episode.query_y).mean())
        return EpisodeEvaluation(
            probabilities=p,
            predictions=predictions,
            accuracy=accuracy,
            lambda_values=lam.data.ravel().copy(),
        )


# ---------------------------------------------------------------------------
# prototype operations


def visual_prototype(embeddings: Tensor) -> Tensor:
    """Mean of the support embeddings of one category (rows of a matrix)."""
    return T.mean_rows(embeddings)


def cross_modal_prototype(visual: Tensor, semantic: Tensor, lam) -> Tensor:
    """Convex combination lam*visual + (1-lam)*semantic, coordinatewise."""
    if visual.shape != semantic.shape:
        raise DimensionError(
            f"prototype shapes differ: visual {visual.shape}, semantic {semantic.shape}"
        )
    if isinstance(lam, Tensor):
        return T.add(T.mul(lam, visual), T.mul(T.add_const(T.neg(lam), 1.0), semantic))
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda must be in [0, 1], got {lam}")
    return T.add(T.scale(visual, lam), T.scale(semantic, 1.0 - lam))


def alignment_prototype(supports: Tensor | None, semantic: Tensor) -> Tensor:
    """Unweighted mean of the support embeddings and the semantic vector: the
    fixed (non-adaptive) baseline prototype. With zero supports it degenerates
    to the pure semantic (zero-shot) prototype."""
    if supports is None or supports.shape[0] == 0:
        return semantic
    if supports.data.ndim != 2 or supports.shape[1] != semantic.shape[0]:
        raise DimensionError(
            f"supports {supports.shape} incompatible with semantic {semantic.shape}"
        )
    k = supports.shape[0]
    return T.add(
        T.scale(T.mean_rows(supports), k / (k + 1.0)), T.scale(semantic, 1.0 / (k + 1.0))
    )


def zero_shot_prototype(model: CrossModalModel, label_embedding) -> Tensor:
    """Prototype for a category with no visual support: the transformed label
    embedding, evaluation mode."""
    return model.transform_semantic(label_embedding, training=False)


# ---------------------------------------------------------------------------
# checkpoints


def _layers_to_json(layers: list[Dense]) -> list[dict]:
    return [
        {"weight": layer.weight.value.data.tolist(), "bias": layer.bias.value.data.tolist()}
        for layer in layers
    ]


def save_checkpoint(model: CrossModalModel, path: str | os.PathLike) -> None:
    cfg = model.config
    payload = {
        "format": "protomix-checkpoint-v1",
        "config": {
            "visual_dim": cfg.visual_dim,
            "semantic_dim": cfg.semantic_dim,
            "embed_dim": cfg.embed_dim,
            "encoder_hidden": list(cfg.encoder_hidden),
            "transform_hidden": cfg.transform_hidden,
            "mixer_hidden": cfg.mixer_hidden,
            "mode": cfg.mode.value,
            "distance": cfg.distance,
            "dropout_keep": cfg.dropout_keep,
            "lambda_fixed": cfg.lambda_fixed,
            "seed": cfg.seed,
        },
        "parameters": {
            name: _layers_to_json(layers) for name, layers in model.parameter_groups().items()
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike) -> CrossModalModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "protomix-checkpoint-v1":
        raise UsageError(f"{path!r} is not a protomix checkpoint")
    raw = dict(payload["config"])
    raw["encoder_hidden"] = tuple(raw["encoder_hidden"])
    config = ModelConfig(**raw)
    model = CrossModalModel(config)
    for name, layers in model.parameter_groups().items():
        stored = payload["parameters"][name]
        if len(stored) != len(layers):
            raise UsageError(f"checkpoint section {name!r} has {len(stored)} layers, expected {len(layers)}")
        for layer, entry in zip(layers, stored):
            weight = np.array(entry["weight"], dtype=np.float64)
            bias = np.array(entry["bias"], dtype=np.float64)
            if weight.shape != layer.weight.value.shape or bias.shape != layer.bias.value.shape:
                raise UsageError(f"checkpoint section {name!r} has mismatched layer shapes")
            layer.weight = Parameter(Tensor(weight))
            layer.bias = Parameter(Tensor(bias))
    return model
