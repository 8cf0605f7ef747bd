"""scikit-learn style estimator wrapping the models and training loop.

One estimator covers all three model kinds; the constructor mirrors
ModelConfig field for field so get_params/set_params/clone behave the
standard way. X is a sequence of EncodedSample; answers ride inside the
samples, so y is optional and overrides them when given.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import EncodedSample, Vocabulary
from .episodic import ModelConfig
from .errors import ArgumentError, ConfigError, VocabularyError
from .training import evaluate, model_forward, predict_ids, scorer_for, train


def validate_samples(X, y=None, vocab_size=None):
    """Check X (and optional y) and return a concrete sample list.

    y, when given, must align with X and replaces the embedded answer ids.
    vocab_size, when given, bounds every token id.
    """
    samples = list(X)
    if not samples:
        raise ArgumentError("no samples given")
    for i, sample in enumerate(samples):
        if not isinstance(sample, EncodedSample):
            raise ArgumentError(
                f"sample {i} is {type(sample).__name__}, expected EncodedSample"
            )
    if y is not None:
        answers = [int(a) for a in y]
        if len(answers) != len(samples):
            raise ArgumentError(f"y has {len(answers)} labels for {len(samples)} samples")
        samples = [
            dataclasses.replace(s, answer_id=a) for s, a in zip(samples, answers)
        ]
    if vocab_size is not None:
        for i, sample in enumerate(samples):
            worst = max(int(sample.input_ids.max()), int(sample.question_ids.max()),
                        int(sample.answer_id))
            if worst >= vocab_size:
                raise VocabularyError(
                    f"sample {i} uses token id {worst}, vocabulary has {vocab_size} entries"
                )
    return samples


class MemoryNetworkQA(BaseEstimator):
    """Question answering over encoded stories with fit/predict/score."""

    def __init__(self, model="dmtn", scorer="ntn2", hidden=40, slices=40,
                 hops=5, embed=50, epochs=150, l2=1e-4, dropout=0.0, lr=0.001,
                 batch_size=32, seed=0, clip_norm=40.0, tied=True):
        self.model = model
        self.scorer = scorer
        self.hidden = hidden
        self.slices = slices
        self.hops = hops
        self.embed = embed
        self.epochs = epochs
        self.l2 = l2
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.clip_norm = clip_norm
        self.tied = tied

    def _config(self):
        return ModelConfig(
            model=self.model, scorer=self.scorer, hidden=self.hidden,
            slices=self.slices, hops=self.hops, embed=self.embed,
            epochs=self.epochs, l2=self.l2, dropout=self.dropout, lr=self.lr,
            batch_size=self.batch_size, seed=self.seed, clip_norm=self.clip_norm,
        ).validate()

    def fit(self, X, y=None, vocab=None):
        """Train a fresh model; vocab is the id space (Vocabulary or size)."""
        if vocab is None:
            raise ArgumentError("fit requires vocab= (a Vocabulary or its size)")
        size = int(vocab) if isinstance(vocab, (int, np.integer)) else len(vocab)
        samples = validate_samples(X, y, vocab_size=size)
        cfg = self._config()
        self.store_, self.history_ = train(cfg, samples, size, tied=self.tied)
        self.config_ = cfg
        self.vocab_ = vocab if isinstance(vocab, Vocabulary) else None
        self.scorer_ = None if cfg.model == "memn2n" else scorer_for(cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "store_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )

    def predict(self, X):
        """Answer ids, one per sample."""
        self._check_fitted()
        samples = validate_samples(X)
        return np.array(
            predict_ids(self.store_, self.config_, samples, scorer=self.scorer_),
            dtype=np.int64,
        )

    def predict_tokens(self, X):
        """Answer tokens; needs the estimator fitted with a real Vocabulary."""
        self._check_fitted()
        if self.vocab_ is None:
            raise ArgumentError("fitted with a bare vocabulary size; token decoding needs a Vocabulary")
        return [self.vocab_.token_of(i) for i in self.predict(X)]

    def score(self, X, y=None):
        """Mean exact-match accuracy as a fraction in [0, 1]."""
        self._check_fitted()
        samples = validate_samples(X, y)
        predictions = predict_ids(self.store_, self.config_, samples, scorer=self.scorer_)
        hits = sum(1 for p, s in zip(predictions, samples) if p == s.answer_id)
        return hits / len(samples)

    def eval_report(self, X, task=0):
        """Full evaluation report with the >= 95% pass flag."""
        self._check_fitted()
        return evaluate(
            self.store_, self.config_, validate_samples(X), task=task, scorer=self.scorer_
        )

    def gate_trace(self, sample):
        """Hops-by-facts gate matrix for one sample (episodic models only)."""
        self._check_fitted()
        if self.config_.model == "memn2n":
            raise ConfigError("gate traces exist only for the episodic models")
        _, trace = model_forward(sample, self.store_, self.config_, scorer=self.scorer_)
        return trace
