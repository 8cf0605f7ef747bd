"""Adam optimizer, seeded training loop, evaluation, and gate-trace export.

The loop is deliberately single-threaded and allocation-light: one tape per
sample, gradients averaged over the mini-batch, one Adam step per batch.
Three independent RNG streams (initialization, shuffling, dropout) are
derived from the config seed so that, for example, changing the epoch count
never changes the initial weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .episodic import dmtn_forward, init_episodic, sample_loss, scorer_for
from .errors import ArgumentError, ConfigError, DimensionError, NumericError, VocabularyError
from .memn2n import bind_memn2n, init_memn2n, memn2n_forward


@dataclass
class AdamState:
    """Optimizer moments and step counter; moments mirror parameter shapes."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, grads, state):
    """One Adam update in place; parameters without gradients are untouched."""
    state.t += 1
    b1 = state.beta1
    b2 = state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in store:
            raise ArgumentError(f"adam_step: gradient for unknown parameter {name!r}")
        theta = store[name]
        g = np.asarray(g, dtype=float)
        if g.shape != theta.shape:
            raise DimensionError(
                f"adam_step: gradient shape {g.shape} does not match {name!r} shape {theta.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


def clip_gradients(grads, max_norm):
    """Scale gradients in place so their global norm is at most max_norm.

    A max_norm of 0 disables clipping. Returns the pre-clip global norm.
    """
    if max_norm < 0:
        raise ArgumentError(f"clip_gradients: max_norm must be nonnegative, got {max_norm}")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def init_model(store, cfg, vocab, rng, tied=True):
    """Register all parameters for cfg's model; returns the scorer, if any."""
    size = int(vocab) if isinstance(vocab, (int, np.integer)) else len(vocab)
    if cfg.model == "memn2n":
        init_memn2n(store, cfg, size, rng, tied=tied)
        return None
    return init_episodic(store, cfg, size, rng)


def model_forward(sample, store, cfg, scorer=None, graph=None, dropout_rng=None):
    """Logits for one sample; episodic models also return their gate trace."""
    if cfg.model == "memn2n":
        p = bind_memn2n(store, cfg.hops, graph)
        return memn2n_forward(sample, p), None
    return dmtn_forward(
        sample, store, cfg, scorer=scorer, graph=graph, dropout_rng=dropout_rng
    )


@dataclass
class EpochStats:
    """One epoch of training: cumulative step count, mean loss, accuracy %."""

    epoch: int
    steps: int
    loss: float
    accuracy: float


def train(cfg, samples, vocab, tied=True, epochs=None, log_fn=None):
    """Train a fresh model on encoded samples; returns (store, epoch stats).

    ``epochs`` overrides cfg.epochs when given; 0 is allowed and returns the
    untouched initialization. Fixing the seed fixes the result bit-for-bit.
    """
    cfg.validate()
    samples = list(samples)
    if not samples:
        raise ArgumentError("train: empty corpus")
    n_epochs = cfg.epochs if epochs is None else int(epochs)
    if n_epochs < 0:
        raise ArgumentError(f"train: epochs must be nonnegative, got {n_epochs}")

    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    store = ad.ParameterStore()
    scorer = init_model(store, cfg, vocab, np.random.default_rng(init_seq), tied=tied)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq) if cfg.dropout > 0 else None
    state = AdamState(lr=cfg.lr)
    history = []
    steps = 0

    # per-op finite checks are redundant here: the loop checks every loss
    checks_were_on = ad.finite_checks_enabled()
    ad.set_finite_checks(False)
    try:
        for epoch in range(1, n_epochs + 1):
            order = shuffle_rng.permutation(len(samples))
            epoch_loss = 0.0
            seen = 0
            correct = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                sums = {}
                for idx in batch:
                    sample = samples[int(idx)]
                    logits, _ = model_forward(
                        sample, store, cfg,
                        scorer=scorer, graph=ad.Graph(), dropout_rng=dropout_rng,
                    )
                    loss = sample_loss(logits, sample.answer_id, store, cfg.l2)
                    value = float(loss.data)
                    if not np.isfinite(value):
                        raise NumericError(
                            f"non-finite loss ({value}) at epoch {epoch}, "
                            f"batch {start // cfg.batch_size + 1}"
                        )
                    epoch_loss += value
                    seen += 1
                    if int(np.argmax(logits.data)) == sample.answer_id:
                        correct += 1
                    for name, grad in ad.backward(loss).items():
                        held = sums.get(name)
                        if held is None:
                            sums[name] = grad
                        else:
                            held += grad
                for grad in sums.values():
                    grad *= 1.0 / len(batch)
                clip_gradients(sums, cfg.clip_norm)
                adam_step(store, sums, state)
                steps += 1
            stats = EpochStats(
                epoch=epoch, steps=steps,
                loss=epoch_loss / seen, accuracy=100.0 * correct / seen,
            )
            history.append(stats)
            if log_fn is not None:
                log_fn(stats)
    finally:
        ad.set_finite_checks(checks_were_on)
    return store, history


def _vocab_rows(store):
    if "embed" in store:
        return store["embed"].shape[0]
    return store["mem.A1"].shape[0]


def _check_ids(sample, rows):
    worst = max(int(sample.input_ids.max()), int(sample.question_ids.max()),
                int(sample.answer_id))
    if worst >= rows:
        raise VocabularyError(
            f"token id {worst} outside the model's vocabulary of {rows} entries"
        )


def predict_ids(store, cfg, samples, scorer=None):
    """Argmax answer ids from detached forward passes."""
    if cfg.model != "memn2n" and scorer is None:
        scorer = scorer_for(cfg)
    rows = _vocab_rows(store)
    out = []
    for sample in samples:
        _check_ids(sample, rows)
        logits, _ = model_forward(sample, store, cfg, scorer=scorer)
        out.append(int(np.argmax(logits.data)))
    return out


@dataclass
class EvalReport:
    """Exact-match accuracy over a test set and the >= 95% pass flag."""

    task: int
    count: int
    correct: int
    accuracy: float
    passed: bool

    def to_json(self):
        return json.dumps({
            "task": self.task, "count": self.count, "correct": self.correct,
            "accuracy": self.accuracy, "passed": self.passed,
        })


def evaluate(store, cfg, samples, task=0, scorer=None):
    """Score argmax predictions against answer ids; pass rule is >= 95.0."""
    samples = list(samples)
    if not samples:
        raise ArgumentError("evaluate: no samples (accuracy undefined)")
    predictions = predict_ids(store, cfg, samples, scorer=scorer)
    correct = sum(
        1 for pred, sample in zip(predictions, samples) if pred == sample.answer_id
    )
    accuracy = 100.0 * correct / len(samples)
    return EvalReport(
        task=task, count=len(samples), correct=correct,
        accuracy=accuracy, passed=accuracy >= 95.0,
    )


def format_gate_trace(trace, sample, predicted_text):
    """Render a gate trace as commented CSV: one row per hop, 6 decimals."""
    lines = [f"# question: {sample.question_text}"]
    lines.append(f"# predicted: {predicted_text}")
    lines.append(f"# gold: {sample.answer_text}")
    for i, text in enumerate(sample.fact_texts):
        lines.append(f"# fact {i + 1}: {text}")
    lines.append(",".join(f"fact_{t + 1}" for t in range(trace.facts)))
    for row in trace.values:
        lines.append(",".join(f"{value:.6f}" for value in row))
    return "\n".join(lines) + "\n"


def export_gate_trace(store, cfg, vocab, sample, destination, scorer=None):
    """Write one sample's hops-by-facts gate matrix as commented CSV.

    Only the episodic models have gates; the softmax-attention baseline is
    rejected. Returns the text written, which is deterministic for a fixed
    model and sample.
    """
    if cfg.model == "memn2n":
        raise ConfigError("gate traces exist only for the episodic models")
    if scorer is None:
        scorer = scorer_for(cfg)
    logits, trace = dmtn_forward(sample, store, cfg, scorer=scorer)
    predicted = vocab.token_of(int(np.argmax(logits.data)))
    text = format_gate_trace(trace, sample, predicted)
    with open(destination, "w", encoding="utf-8") as handle:
        handle.write(text)
    return text
