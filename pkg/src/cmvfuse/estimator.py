"""scikit-learn compatible wrappers.

``X`` is a sequence of :class:`ParsedExample` (or their dict form) rather
than a feature matrix; everything else follows the usual fit / predict /
transform conventions, so the estimators work with ``clone``,
``get_params`` and ``set_params``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import ALL_LOSSES, ALL_VIEWS, TrainConfig
from .contrastive import ContrastiveConfig
from .embeddings import EmbeddingSource, KgSource
from .exceptions import ValidationError
from .graphs import (
    LABELS,
    AmrRelationVocabulary,
    ParsedExample,
    ViewGraphs,
    build_view_graphs,
)
from .metrics import EvalReport
from .training import evaluate, train


def check_examples(X, max_length: int | None = None) -> list[ParsedExample]:
    """Coerce ``X`` to validated :class:`ParsedExample` objects."""
    if isinstance(X, (ParsedExample, Mapping)) or isinstance(X, (str, bytes)):
        raise ValidationError("X must be a sequence of examples, not a single example")
    out = []
    for i, item in enumerate(X):
        ex = item if isinstance(item, ParsedExample) else ParsedExample.from_dict(item)
        try:
            ex.validate(max_length=max_length)
        except ValidationError as exc:
            raise ValidationError(f"example {i}: {exc.message}", field=exc.field) from exc
        out.append(ex)
    if not out:
        raise ValidationError("X is empty")
    return out


def check_labels(y, n: int) -> list[str]:
    labels = [LABELS[int(v)] if isinstance(v, (int, np.integer)) else str(v) for v in y]
    if len(labels) != n:
        raise ValidationError(f"y has {len(labels)} labels for {n} examples")
    bad = sorted(set(labels) - set(LABELS))
    if bad:
        raise ValidationError(f"unknown labels {bad}")
    return labels


def _vocab(vocabulary) -> AmrRelationVocabulary:
    if vocabulary is None:
        return AmrRelationVocabulary()
    if isinstance(vocabulary, AmrRelationVocabulary):
        return vocabulary
    if isinstance(vocabulary, Mapping):
        return AmrRelationVocabulary.from_mapping(vocabulary)
    return AmrRelationVocabulary.load(vocabulary)


class ViewGraphBuilder(TransformerMixin, BaseEstimator):
    """Compile examples into their AMR, dependency and constituency graphs."""

    def __init__(self, vocabulary=None, l_c: int = 3):
        self.vocabulary = vocabulary
        self.l_c = l_c

    def fit(self, X=None, y=None):
        self.vocab_ = _vocab(self.vocabulary)
        return self

    def transform(self, X) -> list[ViewGraphs]:
        check_is_fitted(self, "vocab_")
        return [build_view_graphs(ex, self.vocab_, self.l_c) for ex in check_examples(X)]


class CMVFuseClassifier(ClassifierMixin, BaseEstimator):
    """Aspect sentiment classifier over fused multi-view graph encodings.

    Constructor arguments mirror :class:`TrainConfig`, with the contrastive
    settings flattened. ``embeddings`` and ``kg`` accept an
    :class:`EmbeddingSource` / :class:`KgSource` or ``None`` for the seeded
    stub and zero KG vectors respectively.
    """

    def __init__(self, l_a=1, l_d=5, l_c=3, l_s=7, hidden_dim=16, head_count=4, kg_dim=100,
                 gamma=0.2, delta=10.0, lambda_syn=0.5, lambda_amr=0.2, lambda_kg=0.5,
                 epochs=15, batch_size=8, learning_rate=1e-3, seed=0,
                 views=ALL_VIEWS, losses=ALL_LOSSES, cross_modal=True, pooling="mean",
                 sem_top_p=None, max_length=100, vocabulary=None, embeddings=None, kg=None):
        self.l_a = l_a
        self.l_d = l_d
        self.l_c = l_c
        self.l_s = l_s
        self.hidden_dim = hidden_dim
        self.head_count = head_count
        self.kg_dim = kg_dim
        self.gamma = gamma
        self.delta = delta
        self.lambda_syn = lambda_syn
        self.lambda_amr = lambda_amr
        self.lambda_kg = lambda_kg
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.views = views
        self.losses = losses
        self.cross_modal = cross_modal
        self.pooling = pooling
        self.sem_top_p = sem_top_p
        self.max_length = max_length
        self.vocabulary = vocabulary
        self.embeddings = embeddings
        self.kg = kg

    def to_config(self) -> TrainConfig:
        return TrainConfig(
            l_a=self.l_a, l_d=self.l_d, l_c=self.l_c, l_s=self.l_s,
            hidden_dim=self.hidden_dim, head_count=self.head_count, kg_dim=self.kg_dim,
            contrastive=ContrastiveConfig(self.gamma, self.delta, self.lambda_syn,
                                          self.lambda_amr, self.lambda_kg),
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, seed=self.seed,
            views=tuple(self.views), losses=tuple(self.losses),
            cross_modal=self.cross_modal, pooling=self.pooling,
            sem_top_p=self.sem_top_p, max_length=self.max_length,
        )

    def _sources(self):
        emb = self.embeddings or EmbeddingSource(self.hidden_dim, seed=self.seed)
        kg = self.kg or KgSource(self.kg_dim)
        return emb, kg

    def fit(self, X, y=None, X_dev=None):
        """Train on ``X``; ``y`` overrides the examples' own labels when given.

        Dev evaluation (and best-epoch selection) uses ``X_dev``, or ``X``
        itself when no dev set is passed.
        """
        config = self.to_config()
        examples = check_examples(X, config.max_length)
        if y is not None:
            examples = [ParsedExample(**{**ex.__dict__, "label": lab})
                        for ex, lab in zip(examples, check_labels(y, len(examples)))]
        dev = check_examples(X_dev, config.max_length) if X_dev is not None else examples
        emb, kg = self._sources()
        result = train(config, examples, dev, vocab=_vocab(self.vocabulary),
                       embeddings=emb, kg=kg)
        self.model_ = result.model
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.array(LABELS)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        emb, kg = self._sources()
        prepared = self.model_.prepare(check_examples(X, self.max_length), emb, kg)
        return self.model_.predict_proba(prepared)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def score(self, X, y=None, sample_weight=None) -> float:
        """Accuracy; labels default to those stored on the examples."""
        examples = check_examples(X, self.max_length)
        if y is None:
            y = [ex.label for ex in examples]
        return super().score(examples, check_labels(y, len(examples)), sample_weight)

    def report(self, X) -> EvalReport:
        check_is_fitted(self, "model_")
        emb, kg = self._sources()
        return evaluate(self.model_, check_examples(X, self.max_length), emb, kg)
