"""Canonical finite-difference checks behind the gradcheck command.

Each target builds a small seeded instance, treats the inputs as extra
parameters, and returns the max relative error between analytic and
central-difference gradients. All targets are expected under 1e-4.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import encoders as enc
from .corpus import EncodedSample
from .episodic import ModelConfig, dmtn_forward, init_episodic, sample_loss
from .errors import ArgumentError
from .memn2n import bind_memn2n, init_memn2n, memn2n_forward
from .scoring import make_scorer

TARGETS = ("dmn", "ntn2", "ntn3", "xntn", "gru", "dmtn", "memn2n")
TOLERANCE = 1e-4


def _toy_sample():
    """Two facts and a question over a ten-token id space."""
    return EncodedSample(
        input_ids=np.array([2, 3, 1, 4, 5, 1], dtype=np.int64),
        eos_positions=[2, 5],
        question_ids=np.array([6, 7], dtype=np.int64),
        answer_id=8,
        supporting=[1],
        context_lines=[1, 2],
        fact_texts=["fact 1", "fact 2"],
        question_text="toy question",
        answer_text="toy",
    )


def check_scorer(kind, d=4, k=3, hidden=3, seed=55):
    """Gate gradient for one scorer kind, inputs included as parameters."""
    scorer = make_scorer(kind, d, k=k, hidden=hidden)
    store = ad.ParameterStore()
    scorer.init(store, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    store.add("c", rng.normal(size=d))
    store.add("m", rng.normal(size=d))
    store.add("q", rng.normal(size=d))

    def f(params):
        g = ad.Graph()
        p = scorer.bind(store, g)
        return scorer.gate_value(
            p, g.param(store, "c"), g.param(store, "m"), g.param(store, "q")
        )

    return ad.gradient_check(f, dict(store.items()))


def check_gru(input_size=2, hidden_size=3, seed=46):
    """All eleven fused-cell inputs, through a two-step chain."""
    store = ad.ParameterStore()
    enc.init_gru(store, np.random.default_rng(seed), "enc", input_size, hidden_size)
    rng = np.random.default_rng(seed + 1)
    store.add("x1", rng.normal(size=input_size))
    store.add("x2", rng.normal(size=input_size))
    store.add("h0", rng.normal(size=hidden_size))

    def f(params):
        g = ad.Graph()
        p = enc.bind_gru(store, "enc", g)
        h = enc.gru_cell(g.param(store, "x1"), g.param(store, "h0"), p)
        h = enc.gru_cell(g.param(store, "x2"), h, p)
        return ad.sumsq(h)

    return ad.gradient_check(f, dict(store.items()))


def check_episodic(scorer_kind="ntn2", seed=7):
    """Full episodic forward plus regularized loss on the toy sample."""
    model = "dmn" if scorer_kind == "dmn" else "dmtn"
    cfg = ModelConfig(
        model=model, scorer=scorer_kind, hidden=4, slices=3, hops=2,
        embed=4, l2=1e-3,
    ).validate()
    store = ad.ParameterStore()
    scorer = init_episodic(store, cfg, 10, np.random.default_rng(seed))
    sample = _toy_sample()

    def f(params):
        logits, _ = dmtn_forward(sample, store, cfg, scorer=scorer, graph=ad.Graph())
        return sample_loss(logits, sample.answer_id, store, cfg.l2)

    return ad.gradient_check(f, dict(store.items()))


def check_memn2n(seed=9):
    """Baseline forward plus loss on the toy sample, tied tables."""
    cfg = ModelConfig(model="memn2n", hops=2, embed=4).validate()
    store = ad.ParameterStore()
    init_memn2n(store, cfg, 10, np.random.default_rng(seed), tied=True)
    sample = _toy_sample()

    def f(params):
        p = bind_memn2n(store, cfg.hops, ad.Graph())
        return ad.cross_entropy_logits(memn2n_forward(sample, p), sample.answer_id)

    return ad.gradient_check(f, dict(store.items()))


def run_target(name):
    """Dispatch one named target; returns its max relative error."""
    if name in ("dmn", "ntn2", "ntn3", "xntn"):
        return check_scorer(name)
    if name == "gru":
        return check_gru()
    if name == "dmtn":
        return check_episodic("ntn2")
    if name == "memn2n":
        return check_memn2n()
    raise ArgumentError(f"unknown gradcheck target {name!r}")
