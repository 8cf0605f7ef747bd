"""Episodic memory recurrence, multi-hop memory updates and answer head.

One forward pass encodes the story and question with a shared GRU, then
runs M episodes. Episode i sweeps the fact states with gates computed
against the current memory:

    h_t = g_t * GRU_inner(c_t, h_{t-1}) + (1 - g_t) * h_{t-1},   e = h_T

and updates the memory with a dedicated GRU, m_i = GRU_mem(e_i, m_{i-1}),
starting from m_0 = q. Answer logits are W_a [m_M; q] + b_a. Supervision
is answer-only; supporting-fact annotations never enter the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .encoders import GruParams, bind_gru, encode_input, encode_question, gru_cell, init_embeddings, init_gru
from .errors import ArgumentError, ConfigError, DimensionError
from .scoring import SCORER_KINDS, make_scorer

MODEL_KINDS = ("dmn", "dmtn", "memn2n")


@dataclass
class ModelConfig:
    """Hyperparameters for every model and the training loop."""

    model: str = "dmtn"
    scorer: str = "ntn2"
    hidden: int = 40
    slices: int = 40
    hops: int = 5
    embed: int = 50
    epochs: int = 150
    l2: float = 1e-4
    dropout: float = 0.0
    lr: float = 0.001
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 40.0

    def validate(self):
        for name in ("hidden", "slices", "hops", "embed", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be nonnegative, got {self.l2}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be nonnegative (0 disables), got {self.clip_norm}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {', '.join(MODEL_KINDS)}")
        if self.model == "dmn" and self.scorer != "dmn":
            raise ConfigError("model 'dmn' uses the handcrafted gate; set scorer to 'dmn'")
        if self.model == "dmtn" and self.scorer not in ("ntn2", "ntn3", "xntn"):
            raise ConfigError(
                f"model 'dmtn' needs a tensor scorer (ntn2, ntn3 or xntn), got {self.scorer!r}"
            )
        if self.model != "memn2n" and self.scorer not in SCORER_KINDS:
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class GateTrace:
    """Gate activations of one forward pass: one row per hop, one column per fact."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DimensionError(f"gate trace must be a matrix, got shape {self.values.shape}")

    @property
    def hops(self):
        return self.values.shape[0]

    @property
    def facts(self):
        return self.values.shape[1]


@dataclass
class EpisodicParams:
    """All bound tensors of one episodic model."""

    embed: ad.Tensor
    enc: GruParams
    inner: GruParams
    mem: GruParams
    gate: object
    w_a: ad.Tensor
    b_a: ad.Tensor


def scorer_for(cfg):
    """The scorer object a config selects (episodic models only)."""
    return make_scorer(cfg.scorer, cfg.hidden, k=cfg.slices, hidden=cfg.hidden)


def init_episodic(store, cfg, vocab_size, rng, scorer=None):
    """Register every parameter of the episodic model in the store."""
    scorer = scorer if scorer is not None else scorer_for(cfg)
    d = cfg.hidden
    init_embeddings(store, rng, _SizeOnly(vocab_size), cfg.embed)
    init_gru(store, rng, "enc", cfg.embed, d)
    init_gru(store, rng, "epi", d, d)
    init_gru(store, rng, "mem", d, d)
    scorer.init(store, rng)
    bound = np.sqrt(6.0 / (vocab_size + 2 * d))
    store.add("answer.W", rng.uniform(-bound, bound, size=(vocab_size, 2 * d)), l2=True)
    store.add("answer.b", np.zeros(vocab_size))
    return scorer


class _SizeOnly:
    """Adapter so embedding init can size a table without a Vocabulary."""

    def __init__(self, n):
        self._n = n

    def __len__(self):
        return self._n


def bind_episodic(store, scorer, graph=None):
    return EpisodicParams(
        embed=ad.bind(graph, store, "embed"),
        enc=bind_gru(store, "enc", graph),
        inner=bind_gru(store, "epi", graph),
        mem=bind_gru(store, "mem", graph),
        gate=scorer.bind(store, graph),
        w_a=ad.bind(graph, store, "answer.W"),
        b_a=ad.bind(graph, store, "answer.b"),
    )


def episode_pass(facts, m_prev, q, p, scorer):
    """One gated sweep over the fact states. Returns (e, gate tensors)."""
    if not facts:
        raise ArgumentError("episode_pass: no facts to attend over")
    ctx = scorer.prepare(p.gate, m_prev, q)
    h = ad.constant(np.zeros(p.inner.hidden_size))
    gates = []
    for c in facts:
        g = scorer.score(p.gate, ctx, c)
        candidate = gru_cell(c, h, p.inner)
        h = ad.gated_blend(g, candidate, h)
        gates.append(g)
    return h, gates


def memory_update(e, m_prev, p):
    """Next memory state: one memory-GRU step on the episode vector."""
    return gru_cell(e, m_prev, p.mem)


def answer_logits(m_final, q, p):
    """Feed-forward answer head over the final memory and the question."""
    return ad.add(ad.matmul(p.w_a, ad.concat([m_final, q])), p.b_a)


def _dropout_facts(facts, rate, rng):
    if rate <= 0.0 or rng is None:
        return facts
    keep = 1.0 - rate
    out = []
    for c in facts:
        mask = (rng.random(c.data.shape[0]) < keep).astype(float) / keep
        out.append(ad.mul(c, ad.constant(mask)))
    return out


def dmtn_forward(sample, store, cfg, scorer=None, graph=None, dropout_rng=None):
    """Full episodic forward pass.

    Returns (logits, GateTrace). Pass a Graph to record for backward;
    without one the computation runs detached, which evaluation uses.
    ``dropout_rng`` enables the inverted-dropout hook on the fact states
    when cfg.dropout > 0 (training only).
    """
    if sample.fact_count < 1:
        raise ArgumentError("dmtn_forward: sample has no facts")
    scorer = scorer if scorer is not None else scorer_for(cfg)
    p = bind_episodic(store, scorer, graph)
    facts = encode_input(sample, p.embed, p.enc)
    facts = _dropout_facts(facts, cfg.dropout, dropout_rng)
    q = encode_question(sample.question_ids, p.embed, p.enc)
    m = q
    rows = []
    for _ in range(cfg.hops):
        e, gates = episode_pass(facts, m, q, p, scorer)
        m = memory_update(e, m, p)
        rows.append([g.item() for g in gates])
    logits = answer_logits(m, q, p)
    return logits, GateTrace(np.asarray(rows))


def sample_loss(logits, answer_id, store, l2):
    """Cross-entropy of the answer token plus L2 on flagged weights.

    The regularizer binds the weight tensors on the same graph as the
    logits, so one backward pass yields both terms' gradients.
    """
    vocab_size = logits.data.shape[0]
    answer_id = int(answer_id)
    if not 0 <= answer_id < vocab_size:
        raise ArgumentError(f"answer id {answer_id} outside vocabulary of size {vocab_size}")
    ce = ad.cross_entropy_logits(logits, answer_id)
    if l2 <= 0.0:
        return ce
    graph = logits.graph
    reg = None
    for name in store.l2_names():
        term = ad.sumsq(ad.bind(graph, store, name))
        reg = term if reg is None else ad.add(reg, term)
    if reg is None:
        return ce
    return ad.add(ce, ad.scale(reg, l2))
