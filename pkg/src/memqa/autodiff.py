"""Dense float64 tensors on a dynamic tape with reverse-mode differentiation.

A ``Graph`` records one forward pass; ``backward`` replays it in reverse and
returns gradients for every named parameter the loss actually reached.
Tensors built without a graph are detached constants: the same operations
work on them and simply skip tape recording, which is how evaluation runs
without autodiff overhead.

Tapes are single-owner and rebuilt per forward pass. Detached tensors
(parameter values between updates, encoded corpora) are immutable by
convention and safe to share.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError

_F8 = np.float64
_MAX_RANK = 4

# Finiteness checks at op boundaries. On by default so tests and interactive
# use fail fast; the training loop disables them in its hot path and checks
# the loss value instead.
_finite_checks = True


def set_finite_checks(enabled):
    """Toggle NaN/Inf checking at op boundaries. Returns the previous value."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


def finite_checks_enabled():
    return _finite_checks


def _check_finite(data, context):
    if _finite_checks and not bool(np.isfinite(data).all()):
        raise NumericError(f"non-finite value in {context}")


class Tensor:
    """A float64 array, optionally attached to a differentiation graph.

    ``graph``/``nid`` are None for detached constants. ``data`` is owned by
    the tensor and must not be mutated while a pass that uses it is alive.
    """

    __slots__ = ("data", "graph", "nid")

    def __init__(self, values):
        data = np.asarray(values, dtype=_F8)
        if data.ndim > _MAX_RANK:
            raise DimensionError(f"rank {data.ndim} exceeds supported maximum {_MAX_RANK}")
        _check_finite(data, "tensor constructor")
        self.data = data
        self.graph = None
        self.nid = None

    @classmethod
    def _node(cls, data, graph, nid):
        t = cls.__new__(cls)
        t.data = data
        t.graph = graph
        t.nid = nid
        return t

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = "detached" if self.graph is None else f"node {self.nid}"
        return f"Tensor(shape={self.data.shape}, {tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values):
    """Detached tensor; participates in ops but receives no gradient."""
    return Tensor(values)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=_F8))


class ParameterStore:
    """Named collection of trainable arrays.

    ``l2=True`` marks a parameter as a weight matrix/tensor subject to L2
    regularization; biases and embeddings are registered with ``l2=False``.
    Insertion order is preserved and is the iteration order everywhere.
    """

    def __init__(self):
        self._arrays = {}
        self._l2 = {}

    def add(self, name, values, l2=False):
        if name in self._arrays:
            raise ArgumentError(f"parameter {name!r} already registered")
        data = np.asarray(values, dtype=_F8)
        _check_finite(data, f"parameter {name!r}")
        self._arrays[name] = data
        self._l2[name] = bool(l2)
        return data

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, values):
        if name not in self._arrays:
            raise ArgumentError(f"unknown parameter {name!r}")
        data = np.asarray(values, dtype=_F8)
        if data.shape != self._arrays[name].shape:
            raise DimensionError(
                f"parameter {name!r}: shape {data.shape} != {self._arrays[name].shape}"
            )
        self._arrays[name] = data

    def __contains__(self, name):
        return name in self._arrays

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def l2_names(self):
        return [n for n, flag in self._l2.items() if flag]

    def has_l2(self, name):
        return self._l2[name]

    def copy(self):
        dup = ParameterStore()
        for name, arr in self._arrays.items():
            dup.add(name, arr.copy(), l2=self._l2[name])
        return dup

    def entry_count(self):
        return sum(a.size for a in self._arrays.values())


class Graph:
    """Tape for one forward pass. Not shareable while the pass is running."""

    __slots__ = ("_vjps", "_param_names", "_bound")

    def __init__(self):
        self._vjps = []
        self._param_names = {}  # nid -> parameter name
        self._bound = {}  # parameter name -> Tensor, so rebinding reuses the leaf

    def _register(self, data, vjp, context):
        _check_finite(data, context)
        nid = len(self._vjps)
        self._vjps.append(vjp)
        return Tensor._node(data, self, nid)

    def leaf(self, values):
        """Unnamed graph input; gradients flow to it but are not reported."""
        data = np.asarray(values, dtype=_F8)
        return self._register(data, None, "leaf")

    def param(self, store, name):
        """Bind a named parameter as a graph leaf (cached per graph)."""
        t = self._bound.get(name)
        if t is None:
            t = self._register(store[name], None, f"parameter {name!r}")
            self._param_names[t.nid] = name
            self._bound[name] = t
        return t


def bind(graph, store, name):
    """Parameter as a graph leaf, or detached when graph is None."""
    if graph is None:
        return Tensor(store[name])
    return graph.param(store, name)


def _acc(adj, t, delta, own=True):
    """Accumulate a gradient contribution into a tensor's adjoint slot.

    ``own`` means delta is freshly allocated and may be stored (and later
    mutated) directly; pass-through gradients must use own=False. Slots
    always hold real ndarrays: a ufunc over all-0-d operands yields an
    immutable numpy scalar, which would silently drop later '+=' updates.
    """
    nid = t.nid
    if nid is None:
        return
    cur = adj[nid]
    if cur is None:
        if own and isinstance(delta, np.ndarray):
            adj[nid] = delta
        else:
            adj[nid] = np.array(delta)
    else:
        cur += delta


def _graph_of(*tensors):
    g = None
    for t in tensors:
        tg = t.graph
        if tg is not None:
            if g is None:
                g = tg
            elif g is not tg:
                raise ArgumentError("operands belong to different graphs")
    return g


def _result(g, data, make_vjp, context):
    if g is None:
        _check_finite(data, context)
        return Tensor._node(data, None, None)
    return g._register(data, make_vjp(), context)


# ---------------------------------------------------------------------------
# elementwise and linear algebra ops


def add(a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    g = _graph_of(a, b)
    data = a.data + b.data

    def make():
        def vjp(v, adj):
            _acc(adj, a, v, own=False)
            _acc(adj, b, v, own=False)

        return vjp

    return _result(g, data, make, "add")


def sub(a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")
    g = _graph_of(a, b)
    data = a.data - b.data

    def make():
        def vjp(v, adj):
            _acc(adj, a, v, own=False)
            _acc(adj, b, -v)

        return vjp

    return _result(g, data, make, "sub")


def mul(a, b):
    """Hadamard product; shapes must match exactly."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    g = _graph_of(a, b)
    ad, bd = a.data, b.data
    data = ad * bd

    def make():
        def vjp(v, adj):
            _acc(adj, a, v * bd)
            _acc(adj, b, v * ad)

        return vjp

    return _result(g, data, make, "mul")


def absolute(a):
    g = _graph_of(a)
    ad = a.data
    data = np.abs(ad)

    def make():
        def vjp(v, adj):
            _acc(adj, a, v * np.sign(ad))

        return vjp

    return _result(g, data, make, "abs")


def scale(a, c):
    """Multiply by a plain Python scalar (no gradient for the scalar)."""
    c = float(c)
    g = _graph_of(a)
    data = a.data * c

    def make():
        def vjp(v, adj):
            _acc(adj, a, v * c)

        return vjp

    return _result(g, data, make, "scale")


def matmul(a, b):
    """Matrix product. Supports (m,n)@(n,p), (m,n)@(n,) and (n,)@(n,p)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: inner dimensions disagree: {ad.shape} @ {bd.shape}")
        data = ad @ bd

        def make():
            def vjp(v, adj):
                _acc(adj, a, v @ bd.T)
                _acc(adj, b, ad.T @ v)

            return vjp

    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: inner dimensions disagree: {ad.shape} @ {bd.shape}")
        data = ad @ bd

        def make():
            def vjp(v, adj):
                _acc(adj, a, np.outer(v, bd))
                _acc(adj, b, ad.T @ v)

            return vjp

    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise DimensionError(f"matmul: inner dimensions disagree: {ad.shape} @ {bd.shape}")
        data = ad @ bd

        def make():
            def vjp(v, adj):
                _acc(adj, a, bd @ v)
                _acc(adj, b, np.outer(ad, v))

            return vjp

    else:
        raise DimensionError(f"matmul: unsupported ranks: {ad.shape} @ {bd.shape}")
    return _result(_graph_of(a, b), data, make, "matmul")


def dot(a, b):
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise DimensionError(f"dot: needs equal-length vectors, got {a.data.shape} and {b.data.shape}")
    g = _graph_of(a, b)
    ad, bd = a.data, b.data
    data = np.asarray(ad @ bd)

    def make():
        def vjp(v, adj):
            _acc(adj, a, v * bd)
            _acc(adj, b, v * ad)

        return vjp

    return _result(g, data, make, "dot")


def concat(parts):
    if not parts:
        raise ArgumentError("concat: empty part list")
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat: parts must be vectors, got shape {p.data.shape}")
    g = _graph_of(*parts)
    data = np.concatenate([p.data for p in parts])
    sizes = [p.data.shape[0] for p in parts]

    def make():
        def vjp(v, adj):
            off = 0
            for p, n in zip(parts, sizes):
                _acc(adj, p, v[off : off + n], own=False)
                off += n

        return vjp

    return _result(g, data, make, "concat")


def reshape(a, shape):
    g = _graph_of(a)
    data = a.data.reshape(shape)
    old = a.data.shape

    def make():
        def vjp(v, adj):
            _acc(adj, a, v.reshape(old), own=False)

        return vjp

    return _result(g, data, make, "reshape")


def slice_cols(a, j0, j1):
    """Columns [j0, j1) of a matrix as a new tensor."""
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols: needs a matrix, got shape {a.data.shape}")
    g = _graph_of(a)
    data = a.data[:, j0:j1].copy()
    full = a.data.shape

    def make():
        def vjp(v, adj):
            d = np.zeros(full, dtype=_F8)
            d[:, j0:j1] = v
            _acc(adj, a, d)

        return vjp

    return _result(g, data, make, "slice_cols")


def sumsq(a):
    """Sum of squared entries, as a scalar tensor."""
    g = _graph_of(a)
    ad = a.data
    data = np.asarray(np.sum(ad * ad))

    def make():
        def vjp(v, adj):
            _acc(adj, a, (2.0 * float(v)) * ad)

        return vjp

    return _result(g, data, make, "sumsq")


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid_values(x):
    # exp of a non-positive argument never overflows
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def tanh(a):
    g = _graph_of(a)
    data = np.tanh(a.data)

    def make():
        def vjp(v, adj):
            _acc(adj, a, v * (1.0 - data * data))

        return vjp

    return _result(g, data, make, "tanh")


def sigmoid(a):
    g = _graph_of(a)
    data = _sigmoid_values(a.data)

    def make():
        def vjp(v, adj):
            _acc(adj, a, v * data * (1.0 - data))

        return vjp

    return _result(g, data, make, "sigmoid")


def softmax(a):
    """Stable softmax over a vector; output sums to 1."""
    if a.data.ndim != 1 or a.data.shape[0] < 1:
        raise DimensionError(f"softmax: needs a non-empty vector, got shape {a.data.shape}")
    g = _graph_of(a)
    shifted = a.data - np.max(a.data)
    e = np.exp(shifted)
    data = e / np.sum(e)

    def make():
        def vjp(v, adj):
            _acc(adj, a, data * (v - float(v @ data)))

        return vjp

    return _result(g, data, make, "softmax")


# ---------------------------------------------------------------------------
# fused ops


def bilinear_slices(e1, w, e2):
    """Per-slice bilinear forms: out[l] = e1 . (w[l] @ e2), for w of shape (k, d1, d2)."""
    wd = w.data
    if wd.ndim != 3:
        raise DimensionError(f"bilinear_slices: slice tensor must have rank 3, got shape {wd.shape}")
    k, d1, d2 = wd.shape
    if e1.data.shape != (d1,) or e2.data.shape != (d2,):
        raise DimensionError(
            f"bilinear_slices: slice tensor {wd.shape} expects vectors ({d1},) and ({d2},), "
            f"got {e1.data.shape} and {e2.data.shape}"
        )
    g = _graph_of(e1, w, e2)
    a = (wd.reshape(k * d1, d2) @ e2.data).reshape(k, d1)
    data = a @ e1.data
    e1d, e2d = e1.data, e2.data

    def make():
        def vjp(v, adj):
            _acc(adj, e1, a.T @ v)
            m = np.tensordot(v, wd, axes=(0, 0))  # (d1, d2)
            _acc(adj, e2, e1d @ m)
            _acc(adj, w, v[:, None, None] * np.outer(e1d, e2d)[None, :, :])

        return vjp

    return _result(g, data, make, "bilinear_slices")


def slices_matvec(w, v):
    """Contract the right index of a stack of matrices: out[l, a] = sum_b w[l, a, b] v[b]."""
    wd = w.data
    if wd.ndim != 3 or v.data.ndim != 1 or wd.shape[2] != v.data.shape[0]:
        raise DimensionError(
            f"slices_matvec: incompatible shapes {wd.shape} and {v.data.shape}"
        )
    k, d1, d2 = wd.shape
    g = _graph_of(w, v)
    vd = v.data
    data = (wd.reshape(k * d1, d2) @ vd).reshape(k, d1)

    def make():
        def vjp(gv, adj):
            _acc(adj, w, gv[:, :, None] * vd[None, None, :])
            _acc(adj, v, np.tensordot(wd, gv, axes=((0, 1), (0, 1))))

        return vjp

    return _result(g, data, make, "slices_matvec")


def trilinear_reduce(w, u, v):
    """Contract the last two indices of a rank-4 stack: out[l, a] = sum_{b,e} w[l,a,b,e] u[b] v[e]."""
    wd = w.data
    if (
        wd.ndim != 4
        or u.data.ndim != 1
        or v.data.ndim != 1
        or wd.shape[2] != u.data.shape[0]
        or wd.shape[3] != v.data.shape[0]
    ):
        raise DimensionError(
            f"trilinear_reduce: incompatible shapes {wd.shape}, {u.data.shape}, {v.data.shape}"
        )
    k, d1, d2, d3 = wd.shape
    g = _graph_of(w, u, v)
    ud, vd = u.data, v.data
    wv = wd.reshape(k * d1 * d2, d3) @ vd  # (k*d1*d2,)
    wv = wv.reshape(k * d1, d2)
    data = (wv @ ud).reshape(k, d1)

    def make():
        def vjp(gv, adj):
            # d w[l,a,b,e] = gv[l,a] u[b] v[e]
            _acc(adj, w, gv[:, :, None, None] * np.outer(ud, vd)[None, None, :, :])
            _acc(adj, u, wv.T @ gv.reshape(k * d1))
            wu = np.tensordot(wd, ud, axes=(2, 0))  # (k, d1, d3)
            _acc(adj, v, np.tensordot(wu, gv, axes=((0, 1), (0, 1))))

        return vjp

    return _result(g, data, make, "trilinear_reduce")


def gated_blend(gate, new, old):
    """gate * new + (1 - gate) * old, with a scalar gate."""
    if gate.data.shape != ():
        raise DimensionError(f"gated_blend: gate must be scalar, got shape {gate.data.shape}")
    if new.data.shape != old.data.shape:
        raise DimensionError(
            f"gated_blend: shapes {new.data.shape} and {old.data.shape} differ"
        )
    g = _graph_of(gate, new, old)
    gval = float(gate.data)
    nd, od = new.data, old.data
    data = gval * nd + (1.0 - gval) * od

    def make():
        def vjp(v, adj):
            _acc(adj, gate, np.asarray(np.sum(v * (nd - od))))
            _acc(adj, new, v * gval)
            _acc(adj, old, v * (1.0 - gval))

        return vjp

    return _result(g, data, make, "gated_blend")


def gather_row(e, index):
    """Row of a matrix (an embedding lookup)."""
    if e.data.ndim != 2:
        raise DimensionError(f"gather_row: needs a matrix, got shape {e.data.shape}")
    index = int(index)
    g = _graph_of(e)
    data = e.data[index].copy()

    def make():
        def vjp(v, adj):
            nid = e.nid
            cur = adj[nid]
            if cur is None:
                cur = np.zeros(e.data.shape, dtype=_F8)
                adj[nid] = cur
            cur[index] += v

        return vjp

    return _result(g, data, make, "gather_row")


def rows_sum(e, indices):
    """Sum of matrix rows (bag-of-words embedding); repeated indices allowed."""
    if e.data.ndim != 2:
        raise DimensionError(f"rows_sum: needs a matrix, got shape {e.data.shape}")
    if len(indices) == 0:
        raise ArgumentError("rows_sum: empty index list")
    idx = np.asarray(indices, dtype=np.intp)
    g = _graph_of(e)
    data = e.data[idx].sum(axis=0)

    def make():
        def vjp(v, adj):
            nid = e.nid
            cur = adj[nid]
            if cur is None:
                cur = np.zeros(e.data.shape, dtype=_F8)
                adj[nid] = cur
            np.add.at(cur, idx, v)

        return vjp

    return _result(g, data, make, "rows_sum")


def cross_entropy_logits(logits, index):
    """Negative log-softmax probability of one class, as a scalar tensor."""
    ld = logits.data
    if ld.ndim != 1:
        raise DimensionError(f"cross_entropy_logits: needs a logit vector, got shape {ld.shape}")
    index = int(index)
    if not 0 <= index < ld.shape[0]:
        raise ArgumentError(f"cross_entropy_logits: index {index} outside [0, {ld.shape[0]})")
    g = _graph_of(logits)
    m = np.max(ld)
    e = np.exp(ld - m)
    total = np.sum(e)
    data = np.asarray(np.log(total) + m - ld[index])
    probs = e / total

    def make():
        def vjp(v, adj):
            d = probs * float(v)
            d[index] -= float(v)
            _acc(adj, logits, d)

        return vjp

    return _result(g, data, make, "cross_entropy_logits")


def custom(inputs, out_data, vjp_fn, context="custom"):
    """Register a fused operation with a hand-written backward rule.

    ``vjp_fn(v)`` must return one freshly allocated gradient per input
    (``None`` to skip an input). Detached inputs are skipped automatically.
    """
    g = _graph_of(*inputs)
    out_data = np.asarray(out_data, dtype=_F8)

    def make():
        def vjp(v, adj):
            deltas = vjp_fn(v)
            for t, d in zip(inputs, deltas):
                if d is not None:
                    _acc(adj, t, d)

        return vjp

    return _result(g, out_data, make, context)


# ---------------------------------------------------------------------------
# reverse pass and gradient checking


def backward(loss):
    """Reverse-mode gradients of a scalar loss for every reachable parameter.

    Returns a dict mapping parameter name to a gradient array of the
    parameter's shape. Parameters the loss does not depend on are absent.
    """
    if not isinstance(loss, Tensor) or loss.graph is None:
        raise ArgumentError("backward: loss must be a graph-attached tensor")
    if loss.data.shape != ():
        raise ArgumentError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    g = loss.graph
    adj = [None] * len(g._vjps)
    adj[loss.nid] = np.ones((), dtype=_F8)
    vjps = g._vjps
    for nid in range(loss.nid, -1, -1):
        v = adj[nid]
        if v is None:
            continue
        vjp = vjps[nid]
        if vjp is not None:
            vjp(v, adj)
    grads = {}
    for nid, name in g._param_names.items():
        v = adj[nid]
        if v is not None:
            grads[name] = v
    return grads


def gradient_check(f, params, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``f(params)`` must deterministically build a fresh graph and return a
    scalar tensor. Every entry of every parameter in ``params`` is perturbed;
    parameters absent from the analytic gradient map count as zero.
    """
    if eps <= 0:
        raise ArgumentError("gradient_check: eps must be positive")
    loss = f(params)
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ArgumentError("gradient_check: f must return a scalar tensor")
    if not np.isfinite(loss.data):
        raise NumericError("gradient_check: f returned a non-finite value")
    analytic = backward(loss)
    worst = 0.0
    for name, arr in params.items():
        grad = analytic.get(name)
        flat = arr.reshape(-1)
        gflat = None if grad is None else grad.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params).data)
            flat[i] = orig - eps
            fm = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"gradient_check: non-finite value while perturbing {name!r}")
            numeric = (fp - fm) / (2.0 * eps)
            ana = 0.0 if gflat is None else float(gflat[i])
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
