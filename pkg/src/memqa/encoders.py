"""Word embeddings and GRU encoders for input facts and questions.

One GRU convention is used everywhere:

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    hbar = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hbar

so z = 1 writes the candidate state and z = 0 keeps the previous state.
The input and question encoders share one parameter set; facts are read off
at end-of-sentence positions. The cell is a single fused tape node with a
hand-written backward rule, which keeps the per-sample graph small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import EOS_ID
from .errors import ArgumentError, DimensionError

_GATE_SUFFIXES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


@dataclass
class GruParams:
    """One GRU's nine tensors, bound to a graph (or detached for eval)."""

    w_z: ad.Tensor
    u_z: ad.Tensor
    b_z: ad.Tensor
    w_r: ad.Tensor
    u_r: ad.Tensor
    b_r: ad.Tensor
    w_h: ad.Tensor
    u_h: ad.Tensor
    b_h: ad.Tensor

    @property
    def hidden_size(self):
        return self.u_z.data.shape[0]

    @property
    def input_size(self):
        return self.w_z.data.shape[1]


def _glorot(rng, rows, cols):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_gru(store, rng, prefix, input_size, hidden_size):
    """Register the nine GRU arrays under ``prefix``; weights carry L2."""
    for suffix in _GATE_SUFFIXES:
        name = f"{prefix}.{suffix}"
        if suffix.startswith("W"):
            store.add(name, _glorot(rng, hidden_size, input_size), l2=True)
        elif suffix.startswith("U"):
            store.add(name, _glorot(rng, hidden_size, hidden_size), l2=True)
        else:
            store.add(name, np.zeros(hidden_size), l2=False)


def bind_gru(store, prefix, graph=None):
    bound = [ad.bind(graph, store, f"{prefix}.{s}") for s in _GATE_SUFFIXES]
    return GruParams(*bound)


def gru_cell(x, h_prev, p):
    """One GRU step as a fused node. Returns the next hidden state."""
    wz, uz, bz = p.w_z.data, p.u_z.data, p.b_z.data
    wr, ur, br = p.w_r.data, p.u_r.data, p.b_r.data
    wh, uh, bh = p.w_h.data, p.u_h.data, p.b_h.data
    xd, hd = x.data, h_prev.data
    if xd.ndim != 1 or xd.shape[0] != wz.shape[1]:
        raise DimensionError(f"gru_cell: input shape {xd.shape} does not match W_z {wz.shape}")
    if hd.ndim != 1 or hd.shape[0] != uz.shape[0]:
        raise DimensionError(f"gru_cell: state shape {hd.shape} does not match U_z {uz.shape}")

    z = ad._sigmoid_values(wz @ xd + uz @ hd + bz)
    r = ad._sigmoid_values(wr @ xd + ur @ hd + br)
    rh = r * hd
    hbar = np.tanh(wh @ xd + uh @ rh + bh)
    out = (1.0 - z) * hd + z * hbar

    def vjp(v):
        d_hbar = v * z
        d_z = v * (hbar - hd)
        d_h = v * (1.0 - z)

        d_ah = d_hbar * (1.0 - hbar * hbar)
        d_wh = np.outer(d_ah, xd)
        d_x = wh.T @ d_ah
        d_rh = uh.T @ d_ah
        d_uh = np.outer(d_ah, rh)

        d_r = d_rh * hd
        d_h += d_rh * r
        d_ar = d_r * r * (1.0 - r)
        d_wr = np.outer(d_ar, xd)
        d_x += wr.T @ d_ar
        d_ur = np.outer(d_ar, hd)
        d_h += ur.T @ d_ar

        d_az = d_z * z * (1.0 - z)
        d_wz = np.outer(d_az, xd)
        d_x += wz.T @ d_az
        d_uz = np.outer(d_az, hd)
        d_h += uz.T @ d_az

        return [d_x, d_h, d_wz, d_uz, d_az, d_wr, d_ur, d_ar, d_wh, d_uh, d_ah]

    inputs = [x, h_prev, p.w_z, p.u_z, p.b_z, p.w_r, p.u_r, p.b_r, p.w_h, p.u_h, p.b_h]
    return ad.custom(inputs, out, vjp, context="gru_cell")


def init_embeddings(store, rng, vocab, dim, pretrained=None):
    """Register the embedding table, optionally seeding rows from vectors.

    ``pretrained`` maps token to a vector of size ``dim``; tokens absent
    from it keep their random initialization. Embeddings carry no L2.
    """
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    table[0] = 0.0  # padding row
    if pretrained:
        for token, vec in pretrained.items():
            if token not in vocab:
                continue
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (dim,):
                raise DimensionError(
                    f"pretrained vector for {token!r} has shape {vec.shape}, expected ({dim},)"
                )
            table[vocab.id_of(token)] = vec
    store.add("embed", table, l2=False)


def load_embedding_file(path, dim):
    """Read whitespace-separated token/vector lines into a dict."""
    vectors = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DimensionError(
                    f"embedding line {line_no}: expected {dim} values, got {len(values)}"
                )
            vectors[token] = np.array([float(v) for v in values])
    return vectors


def encode_input(sample, embed, p):
    """Run the input GRU over the full token stream; return fact states.

    The returned list holds the hidden state at each end-of-sentence
    position, one per context statement, in story order.
    """
    ids = sample.input_ids
    if len(ids) == 0:
        raise ArgumentError("encode_input: sample has no input tokens")
    eos_set = set(sample.eos_positions)
    h = ad.constant(np.zeros(p.hidden_size))
    facts = []
    for pos, token_id in enumerate(ids):
        x = ad.gather_row(embed, int(token_id))
        h = gru_cell(x, h, p)
        if pos in eos_set:
            facts.append(h)
    if len(facts) != sample.fact_count:
        raise ArgumentError(
            f"encode_input: {len(facts)} fact states for {sample.fact_count} statements"
        )
    return facts


def encode_question(question_ids, embed, p):
    """Final hidden state of the question GRU (same weights as the input)."""
    if len(question_ids) == 0:
        raise ArgumentError("encode_question: question has no tokens")
    h = ad.constant(np.zeros(p.hidden_size))
    for token_id in question_ids:
        x = ad.gather_row(embed, int(token_id))
        h = gru_cell(x, h, p)
    return h
