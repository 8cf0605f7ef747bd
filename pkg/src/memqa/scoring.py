"""Attention gate scorers and the reference relation-scoring models.

Every gate maps a (fact, memory, question) triple to a scalar in (0, 1):

  dmn    sigmoid MLP over a handcrafted similarity feature vector
  ntn2   per-slice bilinear forms between the pairs of the triple
  ntn3   ntn2 plus a rank-4 slice tensor contracting all three vectors
  xntn   per-slice quadratic form over the stacked vector z = [c; m; q]

The ntn linear term uses the ordering [c; q; m]; the xntn stacked vector
uses [c; m; q]. Both orderings are intentional and fixed.

Each scorer splits into ``prepare`` (everything that depends only on the
memory and question, done once per episode) and ``score`` (the per-fact
part). ``<name>_gate`` convenience functions compose the two, so scoring a
triple through either path gives bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ConfigError, DimensionError

SCORER_KINDS = ("dmn", "ntn2", "ntn3", "xntn")


def _glorot(rng, shape):
    fan = shape[-2] + shape[-1] if len(shape) >= 2 else shape[0] + 1
    bound = np.sqrt(6.0 / fan)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# handcrafted-feature gate


@dataclass
class DmnGateParams:
    w_b: ad.Tensor
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


def dmn_feature_vector(c, m, q, w_b):
    """Similarity features [c; m; q; c*q; c*m; |c-q|; |c-m|; cWq; cWm]."""
    d = c.data.shape[0]
    if m.data.shape != (d,) or q.data.shape != (d,):
        raise DimensionError(
            f"dmn_feature_vector: shapes {c.data.shape}, {m.data.shape}, {q.data.shape} differ"
        )
    cwq = ad.reshape(ad.dot(c, ad.matmul(w_b, q)), (1,))
    cwm = ad.reshape(ad.dot(c, ad.matmul(w_b, m)), (1,))
    return ad.concat(
        [
            c,
            m,
            q,
            ad.mul(c, q),
            ad.mul(c, m),
            ad.absolute(ad.sub(c, q)),
            ad.absolute(ad.sub(c, m)),
            cwq,
            cwm,
        ]
    )


def _dmn_score(p, ctx, c):
    cwq = ad.reshape(ad.dot(c, ctx.wbq), (1,))
    cwm = ad.reshape(ad.dot(c, ctx.wbm), (1,))
    z = ad.concat(
        [
            c,
            ctx.m,
            ctx.q,
            ad.mul(c, ctx.q),
            ad.mul(c, ctx.m),
            ad.absolute(ad.sub(c, ctx.q)),
            ad.absolute(ad.sub(c, ctx.m)),
            cwq,
            cwm,
        ]
    )
    hidden = ad.tanh(ad.add(ad.matmul(p.w1, z), p.b1))
    pre = ad.add(ad.dot(ctx.w2v, hidden), p.b2)
    return ad.sigmoid(pre)


def _dmn_prepare(p, m, q):
    return SimpleNamespace(
        m=m,
        q=q,
        wbq=ad.matmul(p.w_b, q),
        wbm=ad.matmul(p.w_b, m),
        w2v=ad.reshape(p.w2, (p.w2.data.shape[1],)),
    )


def dmn_gate(c, m, q, p):
    """sigmoid(W2 tanh(W1 z + b1) + b2) over the handcrafted features."""
    return _dmn_score(p, _dmn_prepare(p, m, q), c)


# ---------------------------------------------------------------------------
# neural-tensor gates


@dataclass
class NtnGateParams:
    w_cq: ad.Tensor
    w_mq: ad.Tensor
    w_cm: ad.Tensor
    v_r: ad.Tensor
    b_r: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor
    w_r3: ad.Tensor = None


def _ntn_prepare(p, m, q, three_way):
    if three_way and p.w_r3 is None:
        raise ConfigError("three-way scoring requires the W_R3 slice tensor")
    d = q.data.shape[0]
    if m.data.shape != (d,):
        raise DimensionError(f"ntn gate: memory shape {m.data.shape} != question shape {q.data.shape}")
    if p.v_r.data.shape[1] != 3 * d:
        raise DimensionError(
            f"ntn gate: V_R has {p.v_r.data.shape[1]} columns, expected {3 * d}"
        )
    return SimpleNamespace(
        a_cq=ad.slices_matvec(p.w_cq, q),
        a_cm=ad.slices_matvec(p.w_cm, m),
        base=ad.add(
            ad.add(ad.matmul(ad.slices_matvec(p.w_mq, q), m), p.b_r),
            ad.add(
                ad.matmul(ad.slice_cols(p.v_r, d, 2 * d), q),
                ad.matmul(ad.slice_cols(p.v_r, 2 * d, 3 * d), m),
            ),
        ),
        v_c=ad.slice_cols(p.v_r, 0, d),
        a3=ad.trilinear_reduce(p.w_r3, q, m) if three_way else None,
        w2v=ad.reshape(p.w2, (p.w2.data.shape[1],)),
    )


def _ntn_slices(ctx, c):
    s = ad.add(
        ad.add(ad.matmul(ctx.a_cq, c), ad.matmul(ctx.a_cm, c)),
        ad.add(ad.matmul(ctx.v_c, c), ctx.base),
    )
    if ctx.a3 is not None:
        s = ad.add(s, ad.matmul(ctx.a3, c))
    return s


def _ntn_score(p, ctx, c):
    s = _ntn_slices(ctx, c)
    return ad.sigmoid(ad.add(ad.dot(ctx.w2v, ad.tanh(s)), p.b2))


def ntn_gate(c, m, q, p, three_way=False):
    """sigmoid(W2 tanh(s) + b2) for the per-slice tensor score s.

    s[l] = c W_cq[l] q + m W_mq[l] q + c W_cm[l] m + (V_R [c;q;m])[l] + b_R[l],
    plus the full trilinear contraction of W_R3 with (c, q, m) when
    ``three_way`` is set.
    """
    return _ntn_score(p, _ntn_prepare(p, m, q, three_way), c)


@dataclass
class XntnGateParams:
    w_r: ad.Tensor
    v_r: ad.Tensor
    b_r: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


def _xntn_prepare(p, m, q):
    return SimpleNamespace(
        m=m, q=q, w2v=ad.reshape(p.w2, (p.w2.data.shape[1],))
    )


def _xntn_slices(p, ctx, c):
    z = ad.concat([c, ctx.m, ctx.q])
    if p.w_r.data.shape[1] != z.data.shape[0]:
        raise DimensionError(
            f"xntn gate: slice tensor {p.w_r.data.shape} expects z of size {p.w_r.data.shape[1]}, "
            f"got {z.data.shape[0]}"
        )
    quad = ad.matmul(ad.slices_matvec(p.w_r, z), z)
    return ad.add(ad.add(quad, ad.matmul(p.v_r, z)), p.b_r)


def _xntn_score(p, ctx, c):
    s = _xntn_slices(p, ctx, c)
    return ad.sigmoid(ad.add(ad.dot(ctx.w2v, ad.tanh(s)), p.b2))


def xntn_gate(c, m, q, p):
    """Per-slice quadratic form over z = [c; m; q], then sigmoid(W2 tanh + b2)."""
    return _xntn_score(p, _xntn_prepare(p, m, q), c)


# ---------------------------------------------------------------------------
# scorer objects: named parameters plus the prepare/score split


class DmnGate:
    kind = "dmn"

    def __init__(self, d, hidden=40, prefix="gate"):
        self.d = d
        self.hidden = hidden
        self.prefix = prefix

    def init(self, store, rng):
        d, h, pf = self.d, self.hidden, self.prefix
        store.add(f"{pf}.W_b", _glorot(rng, (d, d)), l2=True)
        store.add(f"{pf}.W1", _glorot(rng, (h, 7 * d + 2)), l2=True)
        store.add(f"{pf}.b1", np.zeros(h))
        store.add(f"{pf}.W2", _glorot(rng, (1, h)), l2=True)
        store.add(f"{pf}.b2", np.zeros(()))

    def bind(self, store, graph=None):
        pf = self.prefix
        return DmnGateParams(
            w_b=ad.bind(graph, store, f"{pf}.W_b"),
            w1=ad.bind(graph, store, f"{pf}.W1"),
            b1=ad.bind(graph, store, f"{pf}.b1"),
            w2=ad.bind(graph, store, f"{pf}.W2"),
            b2=ad.bind(graph, store, f"{pf}.b2"),
        )

    def prepare(self, p, m, q):
        return _dmn_prepare(p, m, q)

    def score(self, p, ctx, c):
        return _dmn_score(p, ctx, c)

    def gate_value(self, p, c, m, q):
        return dmn_gate(c, m, q, p)


class NtnGate:
    def __init__(self, d, k=40, three_way=False, prefix="gate"):
        self.d = d
        self.k = k
        self.three_way = three_way
        self.kind = "ntn3" if three_way else "ntn2"
        self.prefix = prefix

    def init(self, store, rng):
        d, k, pf = self.d, self.k, self.prefix
        bound = np.sqrt(6.0 / (2 * d))
        for name in ("W_cq", "W_mq", "W_cm"):
            store.add(f"{pf}.{name}", rng.uniform(-bound, bound, size=(k, d, d)), l2=True)
        if self.three_way:
            b3 = np.sqrt(6.0 / (3 * d))
            store.add(f"{pf}.W_R3", rng.uniform(-b3, b3, size=(k, d, d, d)), l2=True)
        store.add(f"{pf}.V_R", _glorot(rng, (k, 3 * d)), l2=True)
        store.add(f"{pf}.b_R", np.zeros(k))
        store.add(f"{pf}.W2", _glorot(rng, (1, k)), l2=True)
        store.add(f"{pf}.b2", np.zeros(()))

    def bind(self, store, graph=None):
        pf = self.prefix
        return NtnGateParams(
            w_cq=ad.bind(graph, store, f"{pf}.W_cq"),
            w_mq=ad.bind(graph, store, f"{pf}.W_mq"),
            w_cm=ad.bind(graph, store, f"{pf}.W_cm"),
            w_r3=ad.bind(graph, store, f"{pf}.W_R3") if self.three_way else None,
            v_r=ad.bind(graph, store, f"{pf}.V_R"),
            b_r=ad.bind(graph, store, f"{pf}.b_R"),
            w2=ad.bind(graph, store, f"{pf}.W2"),
            b2=ad.bind(graph, store, f"{pf}.b2"),
        )

    def prepare(self, p, m, q):
        return _ntn_prepare(p, m, q, self.three_way)

    def score(self, p, ctx, c):
        return _ntn_score(p, ctx, c)

    def slice_values(self, p, ctx, c):
        """Pre-tanh slice vector s; exposed for encapsulation checks."""
        return _ntn_slices(ctx, c)

    def gate_value(self, p, c, m, q):
        return ntn_gate(c, m, q, p, three_way=self.three_way)


class XntnGate:
    kind = "xntn"

    def __init__(self, d, k=40, prefix="gate"):
        self.d = d
        self.k = k
        self.prefix = prefix

    def init(self, store, rng):
        d, k, pf = self.d, self.k, self.prefix
        bound = np.sqrt(6.0 / (6 * d))
        store.add(f"{pf}.W_R", rng.uniform(-bound, bound, size=(k, 3 * d, 3 * d)), l2=True)
        store.add(f"{pf}.V_R", _glorot(rng, (k, 3 * d)), l2=True)
        store.add(f"{pf}.b_R", np.zeros(k))
        store.add(f"{pf}.W2", _glorot(rng, (1, k)), l2=True)
        store.add(f"{pf}.b2", np.zeros(()))

    def bind(self, store, graph=None):
        pf = self.prefix
        return XntnGateParams(
            w_r=ad.bind(graph, store, f"{pf}.W_R"),
            v_r=ad.bind(graph, store, f"{pf}.V_R"),
            b_r=ad.bind(graph, store, f"{pf}.b_R"),
            w2=ad.bind(graph, store, f"{pf}.W2"),
            b2=ad.bind(graph, store, f"{pf}.b2"),
        )

    def prepare(self, p, m, q):
        return _xntn_prepare(p, m, q)

    def score(self, p, ctx, c):
        return _xntn_score(p, ctx, c)

    def slice_values(self, p, ctx, c):
        return _xntn_slices(p, ctx, c)

    def gate_value(self, p, c, m, q):
        return xntn_gate(c, m, q, p)


def make_scorer(kind, d, k=40, hidden=40, prefix="gate"):
    """Scorer instance for a selection string: dmn, ntn2, ntn3 or xntn."""
    if kind == "dmn":
        return DmnGate(d, hidden=hidden, prefix=prefix)
    if kind == "ntn2":
        return NtnGate(d, k=k, three_way=False, prefix=prefix)
    if kind == "ntn3":
        return NtnGate(d, k=k, three_way=True, prefix=prefix)
    if kind == "xntn":
        return XntnGate(d, k=k, prefix=prefix)
    raise ConfigError(f"unknown scorer {kind!r}; expected one of {', '.join(SCORER_KINDS)}")


# ---------------------------------------------------------------------------
# reference relation-scoring models (plain numpy; used by encapsulation tests)


@dataclass
class RelationParams:
    """Parameters for the four reference models; set the relevant fields."""

    w_r1: np.ndarray = None
    w_r2: np.ndarray = None
    u_r: np.ndarray = None
    bias: np.ndarray = None
    w1: np.ndarray = None
    w2: np.ndarray = None
    w_rel1: np.ndarray = None
    w_rel2: np.ndarray = None
    e_r: np.ndarray = None
    b1: np.ndarray = None
    b2: np.ndarray = None
    w_r: np.ndarray = None


def _need(p, kind, *fields):
    for f in fields:
        if getattr(p, f) is None:
            raise ArgumentError(f"reference_score {kind!r} needs parameter {f!r}")


def reference_score(kind, e1, e2, p):
    """Scalar relation score between two entity vectors.

    distance      ||W_R1 e1 - W_R2 e2||_1
    single_layer  u_R . tanh(W_R1 e1 + W_R2 e2 [+ bias])
    hadamard      (W1 e1 * W_rel1 e_R + b1) . (W2 e2 * W_rel2 e_R + b2)
    bilinear      e1 . W_R e2
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if kind == "distance":
        _need(p, kind, "w_r1", "w_r2")
        return float(np.abs(p.w_r1 @ e1 - p.w_r2 @ e2).sum())
    if kind == "single_layer":
        _need(p, kind, "u_r", "w_r1", "w_r2")
        h = p.w_r1 @ e1 + p.w_r2 @ e2
        if p.bias is not None:
            h = h + p.bias
        return float(p.u_r @ np.tanh(h))
    if kind == "hadamard":
        _need(p, kind, "w1", "w2", "w_rel1", "w_rel2", "e_r", "b1", "b2")
        left = p.w1 @ e1 * (p.w_rel1 @ p.e_r) + p.b1
        right = p.w2 @ e2 * (p.w_rel2 @ p.e_r) + p.b2
        return float(left @ right)
    if kind == "bilinear":
        _need(p, kind, "w_r")
        return float(e1 @ p.w_r @ e2)
    raise ConfigError(f"unknown reference scoring kind {kind!r}")
