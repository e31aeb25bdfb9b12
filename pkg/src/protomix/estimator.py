"""Scikit-learn style estimator wrapping episodic training and prototype inference.

`ProtoMixClassifier.fit(X, y)` meta-trains the metric space episodically on
the given classes and freezes one mixed prototype per class from the full
training data; `predict` assigns the nearest mixed prototype. The few-shot
path (new classes at inference time, a handful of labelled supports) is
exposed as `predict_episode`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import tensor as T
from .data import Category, CategoryLabel, EmbeddingTable, LabeledDataset, LabelEmbeddings
from .episodes import EpisodeConfig
from .model import ConditioningMode, CrossModalModel, ModelConfig
from .tensor import Tensor
from .training import TrainConfig, train

__all__ = ["ProtoMixClassifier"]


class ProtoMixClassifier(BaseEstimator, ClassifierMixin):
    """Cross-modal nearest-prototype classifier with episodic meta-training.

    Parameters follow the usual estimator convention (stored verbatim, learned
    state carries a trailing underscore). `label_names` and `embeddings` are
    data-dependent and therefore passed to :meth:`fit`, not the constructor.
    """

    def __init__(
        self,
        n_way=5,
        k_shot=1,
        k_query=5,
        iterations=300,
        learning_rate=0.02,
        momentum=0.9,
        anneal_steps=(),
        anneal_factor=10.0,
        tasks_per_batch=2,
        embed_dim=16,
        encoder_hidden=(64,),
        transform_hidden=300,
        mixer_hidden=300,
        mode="w",
        distance="sq-euclid",
        dropout_keep=1.0,
        lambda_fixed=None,
        semantic_dim=None,
        random_state=0,
    ):
        self.n_way = n_way
        self.k_shot = k_shot
        self.k_query = k_query
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.anneal_steps = anneal_steps
        self.anneal_factor = anneal_factor
        self.tasks_per_batch = tasks_per_batch
        self.embed_dim = embed_dim
        self.encoder_hidden = encoder_hidden
        self.transform_hidden = transform_hidden
        self.mixer_hidden = mixer_hidden
        self.mode = mode
        self.distance = distance
        self.dropout_keep = dropout_keep
        self.lambda_fixed = lambda_fixed
        self.semantic_dim = semantic_dim
        self.random_state = random_state

    # -- fitting --------------------------------------------------------------

    def _build_dataset(self, X, y, label_names):
        categories = {}
        for index, cls in enumerate(self.classes_):
            if label_names is None:
                name = str(cls)
            elif isinstance(label_names, dict):
                name = label_names[cls]
            else:
                name = label_names[index]
            categories[index] = Category(CategoryLabel((name,)), X[y == cls])
        return LabeledDataset(feature_dimension=X.shape[1], categories=categories)

    def fit(self, X, y, label_names=None, embeddings=None):
        """Meta-train on (X, y) and freeze per-class mixed prototypes.

        label_names maps each class to its annotation string (list aligned
        with sorted classes, or dict keyed by class); embeddings is an
        optional EmbeddingTable resolving those names.
        """
        X, y = check_X_y(X, y)
        X = np.asarray(X, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if embeddings is None:
            embeddings = EmbeddingTable()
        sem_dim = (
            self.semantic_dim
            if self.semantic_dim is not None
            else (embeddings.dimension if embeddings.dimension is not None else 16)
        )
        dataset = self._build_dataset(X, y, label_names)
        label_embeddings = LabelEmbeddings(
            dataset, embeddings, seed=self.random_state, fallback_dimension=sem_dim
        )
        model = CrossModalModel(
            ModelConfig(
                visual_dim=X.shape[1],
                semantic_dim=sem_dim,
                embed_dim=self.embed_dim,
                encoder_hidden=tuple(self.encoder_hidden),
                transform_hidden=self.transform_hidden,
                mixer_hidden=self.mixer_hidden,
                mode=ConditioningMode(self.mode),
                distance=self.distance,
                dropout_keep=self.dropout_keep,
                lambda_fixed=self.lambda_fixed,
                seed=self.random_state,
            )
        )
        config = TrainConfig(
            episode_config=EpisodeConfig(
                min(self.n_way, len(self.classes_)), self.k_shot, self.k_query
            ),
            iterations=self.iterations,
            initial_lr=self.learning_rate,
            momentum=self.momentum,
            anneal_steps=tuple(self.anneal_steps),
            anneal_factor=self.anneal_factor,
            tasks_per_batch=self.tasks_per_batch,
            seed=self.random_state,
        )
        train(model, dataset, set(dataset.category_ids()), config, label_embeddings)

        self.model_ = model
        self.semantic_vectors_ = label_embeddings.matrix(dataset.category_ids())
        visual, semantic, lam = self._class_anchors(
            model, [dataset.features(c) for c in dataset.category_ids()], self.semantic_vectors_
        )
        self.visual_prototypes_ = visual
        self.semantic_prototypes_ = semantic
        self.lambda_values_ = lam
        return self

    @staticmethod
    def _class_anchors(model, per_class_features, semantic_vectors):
        visual = np.stack(
            [model.encode_visual(feats).data.mean(axis=0) for feats in per_class_features]
        )
        semantic = model.transform_semantic(semantic_vectors).data
        if model.config.mode is ConditioningMode.WQ:
            lam = np.full(len(per_class_features), np.nan)  # query-dependent
        else:
            conditioning = {
                ConditioningMode.W: semantic,
                ConditioningMode.E: semantic_vectors,
                ConditioningMode.P: visual,
            }[model.config.mode]
            lam = model.mixing_coefficient(Tensor(conditioning)).data.ravel()
        return visual, semantic, lam

    # -- inference ------------------------------------------------------------

    def _scores(self, X, visual, semantic, lam):
        model = self.model_
        query = model.encode_visual(np.asarray(X, dtype=np.float64))
        if model.config.mode is ConditioningMode.WQ:
            cols = []
            n_q = query.shape[0]
            for c in range(visual.shape[0]):
                w_c = T.repeat_row(Tensor(semantic[c]), n_q)
                p_c = T.repeat_row(Tensor(visual[c]), n_q)
                lam_c = model.mixing_coefficient(T.concat_cols(w_c, query))
                mixed = T.add(
                    T.mul(lam_c, p_c), T.mul(T.add_const(T.neg(lam_c), 1.0), w_c)
                )
                cols.append(
                    T.neg(T.rowwise_distance(query, mixed, squared=model.squared_distance))
                )
            return T.stack_cols(cols).data
        mixed = lam[:, None] * visual + (1.0 - lam[:, None]) * semantic
        return -T.pairwise_distance(query, Tensor(mixed), squared=model.squared_distance).data

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        scores = self._scores(
            X, self.visual_prototypes_, self.semantic_prototypes_, self.lambda_values_
        )
        z = scores - scores.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        probabilities = self.predict_proba(X)
        return self.classes_[probabilities.argmax(axis=1)]

    def predict_episode(self, support_X, support_y, query_X, label_names=None, embeddings=None):
        """Few-shot inference on classes unseen at fit time.

        Prototypes come from the given supports; semantic vectors resolve from
        label_names (or the class values) against the optional table, falling
        back to the fitted model's seeded random vectors.
        """
        check_is_fitted(self, "model_")
        support_X, support_y = check_X_y(support_X, support_y)
        query_X = check_array(query_X)
        classes = unique_labels(support_y)
        if embeddings is None:
            embeddings = EmbeddingTable()
        per_class = [support_X[support_y == cls] for cls in classes]
        dataset = LabeledDataset(
            feature_dimension=support_X.shape[1],
            categories={
                i: Category(
                    CategoryLabel(
                        (
                            str(classes[i])
                            if label_names is None
                            else (
                                label_names[classes[i]]
                                if isinstance(label_names, dict)
                                else label_names[i]
                            ),
                        )
                    ),
                    per_class[i],
                )
                for i in range(len(classes))
            },
        )
        label_embeddings = LabelEmbeddings(
            dataset,
            embeddings,
            seed=self.random_state,
            fallback_dimension=self.model_.config.semantic_dim,
        )
        visual, semantic, lam = self._class_anchors(
            self.model_, per_class, label_embeddings.matrix(dataset.category_ids())
        )
        scores = self._scores(query_X, visual, semantic, lam)
        return classes[scores.argmax(axis=1)]
