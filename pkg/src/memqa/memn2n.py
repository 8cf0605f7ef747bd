"""End-to-end memory network baseline: softmax attention over bag-of-words
sentence memories, multi-hop, linear answer head.

Hop h embeds every context sentence twice (input table A^h, output table
C^h), attends with p = softmax(u . m_i), reads o = sum p_i c_i and passes
u + o to the next hop. Logits are W (o^H + u^H).

Adjacent tying is the default: C^h and A^{h+1} are the same table, the
question embedding B is A^1, and W is C^H. Untied keeps every table
separate. The tied layout stores tables mem.A1 .. mem.A{H+1}; untied adds
mem.C1 .. mem.CH, mem.B and mem.W, and the store layout itself records
which variant a checkpoint used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ConfigError, DimensionError


@dataclass
class MemN2NParams:
    """Bound embedding tables for each hop, plus the answer matrix."""

    a: list  # input table per hop
    c: list  # output table per hop
    b: ad.Tensor  # question table
    w: ad.Tensor  # answer matrix, |V| x d
    hops: int
    tied: bool


def init_memn2n(store, cfg, vocab_size, rng, tied=True):
    """Register the baseline's tables; embeddings carry no L2."""
    d = cfg.embed
    hops = cfg.hops

    def table():
        t = rng.uniform(-0.1, 0.1, size=(vocab_size, d))
        t[0] = 0.0
        return t

    if tied:
        for h in range(hops + 1):
            store.add(f"mem.A{h + 1}", table(), l2=False)
    else:
        for h in range(hops):
            store.add(f"mem.A{h + 1}", table(), l2=False)
        for h in range(hops):
            store.add(f"mem.C{h + 1}", table(), l2=False)
        store.add("mem.B", table(), l2=False)
        store.add("mem.W", rng.uniform(-0.1, 0.1, size=(vocab_size, d)), l2=True)


def bind_memn2n(store, hops, graph=None):
    """Bind tables for a forward pass; tying is read off the store layout."""
    tied = "mem.W" not in store
    if tied:
        expected = [f"mem.A{h + 1}" for h in range(hops + 1)]
        missing = [n for n in expected if n not in store]
        if missing:
            raise ConfigError(f"tied layout is missing tables: {missing}")
        tables = [ad.bind(graph, store, n) for n in expected]
        a = tables[:hops]
        c = tables[1:]
        return MemN2NParams(a=a, c=c, b=tables[0], w=tables[hops], hops=hops, tied=True)
    a = [ad.bind(graph, store, f"mem.A{h + 1}") for h in range(hops)]
    c = [ad.bind(graph, store, f"mem.C{h + 1}") for h in range(hops)]
    return MemN2NParams(
        a=a, c=c,
        b=ad.bind(graph, store, "mem.B"),
        w=ad.bind(graph, store, "mem.W"),
        hops=hops, tied=False,
    )


def embed_bow(token_ids, table):
    """Bag-of-words sentence vector: sum of the tokens' embedding rows."""
    if len(token_ids) == 0:
        raise ArgumentError("embed_bow: empty sentence")
    return ad.rows_sum(table, [int(t) for t in token_ids])


def sentence_id_lists(sample):
    """Per-sentence token ids, splitting the flat stream at EOS markers.

    The EOS tokens themselves are sequence-model punctuation and are left
    out of bag-of-words memories.
    """
    ids = sample.input_ids
    sentences = []
    start = 0
    for eos in sample.eos_positions:
        sentence = [int(t) for t in ids[start:eos]]
        if not sentence:
            raise ArgumentError("sentence with no tokens before its EOS marker")
        sentences.append(sentence)
        start = eos + 1
    return sentences


def _attention_scores(u, mems):
    """Fused dot products of u with every memory, as one score vector."""
    ud = u.data
    md = [m.data for m in mems]
    scores = np.array([ud @ m for m in md])

    def vjp(v):
        du = np.zeros_like(ud)
        for vi, mi in zip(v, md):
            du += vi * mi
        return [du] + [vi * ud for vi in v]

    return ad.custom([u] + list(mems), scores, vjp, context="attention_scores")


def _weighted_sum(p, outs):
    """Fused o = sum_i p_i c_i over a probability vector and output vectors."""
    pd = p.data
    cd = [c.data for c in outs]
    o = np.zeros_like(cd[0])
    for pi, ci in zip(pd, cd):
        o += pi * ci

    def vjp(v):
        dp = np.array([v @ ci for ci in cd])
        return [dp] + [pi * v for pi in pd]

    return ad.custom([p] + list(outs), o, vjp, context="weighted_sum")


def memn2n_hop(u, mem_in, mem_out):
    """One attention hop. Returns (o, p) with p a probability vector."""
    if len(mem_in) == 0:
        raise ArgumentError("memn2n_hop: no memories")
    if len(mem_in) != len(mem_out):
        raise DimensionError(
            f"memn2n_hop: {len(mem_in)} input memories vs {len(mem_out)} output memories"
        )
    p = ad.softmax(_attention_scores(u, mem_in))
    o = _weighted_sum(p, mem_out)
    return o, p


def memn2n_forward(sample, p):
    """Logits for one sample. Attention vectors are not returned; use
    memn2n_attention for inspection."""
    logits, _ = _run(sample, p)
    return logits


def memn2n_attention(sample, p):
    """Per-hop attention matrix (hops x sentences) from a detached run."""
    _, rows = _run(sample, p)
    return np.asarray(rows)


def _run(sample, p):
    sentences = sentence_id_lists(sample)
    if not sentences:
        raise ArgumentError("memn2n forward: no context sentences")
    u = embed_bow(sample.question_ids, p.b)
    attention = []
    for h in range(p.hops):
        mem_in = [embed_bow(s, p.a[h]) for s in sentences]
        mem_out = [embed_bow(s, p.c[h]) for s in sentences]
        o, probs = memn2n_hop(u, mem_in, mem_out)
        attention.append(probs.data.copy())
        u = ad.add(u, o)
    # u now holds u^H + o^H, the answer head input
    logits = ad.matmul(p.w, u)
    return logits, attention


def parameter_count(store):
    """Total scalar entries across all registered tables."""
    return store.entry_count()
