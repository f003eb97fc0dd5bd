"""Differentiable primitives.

Every function takes and returns `Tensor` objects and records its
vector-Jacobian product on the active tape. Broadcasting is limited to the
numpy rules needed by the model (row vectors against matrices, scalars).
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, ShapeError
from .tape import Tensor, as_tensor, emit, get_default_dtype


def _t(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return as_tensor(x, dtype=dtype)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def constant(data, dtype=None):
    return Tensor(data, dtype=dtype or get_default_dtype())


def zeros(shape, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or get_default_dtype()))


def add(a, b):
    a, b = _t(a, b if isinstance(b, Tensor) else None), _t(b, a if isinstance(a, Tensor) else None)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return emit("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _t(a, b if isinstance(b, Tensor) else None), _t(b, a if isinstance(a, Tensor) else None)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return emit("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = _t(a, b if isinstance(b, Tensor) else None), _t(b, a if isinstance(a, Tensor) else None)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return emit("mul", out, (a, b), vjp)


def neg(a):
    return emit("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c):
    c = float(c)
    return emit("scale", a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def sum(a):
    shape = a.shape
    return emit("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def dot(a, b):
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return emit("dot", np.asarray(ad @ bd), (a, b), lambda g: (g * bd, g * ad))


def linear(W, b, x):
    """y = x W^T + b for a vector x of shape (in,) or a row batch (n, in).

    W has shape (out, in); b is a vector of length out or None.
    """
    if W.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-D, got {W.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: weight {W.shape} cannot map input {x.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
    Wd, xd = W.data, x.data
    out = xd @ Wd.T
    if b is not None:
        out = out + b.data

    def vjp(g):
        if xd.ndim == 1:
            gW = np.outer(g, xd)
            gb = g
        else:
            gW = g.T @ xd
            gb = g.sum(axis=0)
        gx = g @ Wd
        return (gW, gx) if b is None else (gW, gb, gx)

    parents = (W, x) if b is None else (W, b, x)
    return emit("linear", out, parents, vjp)


def reshape(a, shape):
    old = a.shape
    return emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def index(a, key):
    """Basic (slice/int) indexing."""
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        full[key] = g
        return (full,)

    return emit("index", np.array(a.data[key]), (a,), vjp)


def take_rows(a, rows):
    """Gather rows of a 2-D tensor; repeated rows accumulate gradient."""
    rows = np.asarray(rows, dtype=np.intp)
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, rows, g)
        return (full,)

    return emit("take_rows", a.data[rows], (a,), vjp)


def gather_rows(pieces, piece_idx, row_idx):
    """Stack rows drawn from several 2-D tensors of equal width.

    Row k of the result is `pieces[piece_idx[k]][row_idx[k]]`.
    """
    piece_idx = np.asarray(piece_idx, dtype=np.intp)
    row_idx = np.asarray(row_idx, dtype=np.intp)
    used = sorted(set(piece_idx.tolist()))
    parents = tuple(pieces[p] for p in used)
    width = pieces[used[0]].shape[1]
    out = np.empty((len(row_idx), width), dtype=parents[0].data.dtype)
    selections = []
    for p in used:
        sel = np.nonzero(piece_idx == p)[0]
        out[sel] = pieces[p].data[row_idx[sel]]
        selections.append(sel)

    def vjp(g):
        grads = []
        for parent, sel in zip(parents, selections):
            full = np.zeros(parent.shape, dtype=g.dtype)
            np.add.at(full, row_idx[sel], g[sel])
            grads.append(full)
        return grads

    return emit("gather_rows", out, parents, vjp)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum(sizes)[:-1]
    return emit("concat", out, tuple(tensors), lambda g: np.split(g, bounds, axis=axis))


def sigmoid(a):
    out = _sigmoid(a.data)
    return emit("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return emit("tanh", out, (a,), lambda g: (g * (1 - out * out),))


def leaky_relu(a, slope=0.2):
    mask = a.data > 0
    s = a.data.dtype.type(slope)
    out = np.where(mask, a.data, a.data * s)
    return emit("leaky_relu", out, (a,), lambda g: (np.where(mask, g, g * s),))


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(v):
    """Softmax along the last axis, with max subtraction."""
    if v.size == 0 or v.shape[-1] == 0:
        raise DomainError("softmax of an empty vector")
    if not np.all(np.isfinite(v.data)):
        raise DomainError("softmax input must be finite")
    out = _softmax(v.data)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return emit("softmax", out, (v,), vjp)


def segment_softmax(scores, segments, num_segments):
    """Softmax of a flat score vector within each segment id.

    Segments that receive no entries simply do not appear in the output.
    """
    seg = np.asarray(segments, dtype=np.intp)
    s = scores.data
    if s.ndim != 1 or s.shape[0] != seg.shape[0]:
        raise ShapeError(f"segment_softmax: scores {s.shape} vs segments {seg.shape}")
    m = np.full(num_segments, -np.inf, dtype=s.dtype)
    np.maximum.at(m, seg, s)
    e = np.exp(s - m[seg])
    z = np.zeros(num_segments, dtype=s.dtype)
    np.add.at(z, seg, e)
    out = e / z[seg]

    def vjp(g):
        inner = np.zeros(num_segments, dtype=g.dtype)
        np.add.at(inner, seg, g * out)
        return (out * (g - inner[seg]),)

    return emit("segment_softmax", out, (scores,), vjp)


def segment_sum(x, segments, num_segments):
    """Sum rows of x into `num_segments` buckets; empty buckets are zero."""
    seg = np.asarray(segments, dtype=np.intp)
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out, seg, x.data)
    return emit("segment_sum", out, (x,), lambda g: (g[seg],))


def gru_cell(W, U, b, x, h):
    """One GRU step, batched over rows.

    W (3H, in), U (3H, H) and b (3H,) stack the update gate, reset gate and
    candidate blocks in that order:

        z  = sigmoid(W_z x + U_z h + b_z)
        r  = sigmoid(W_r x + U_r h + b_r)
        n  = tanh(W_n x + U_n (r * h) + b_n)
        h' = (1 - z) * n + z * h
    """
    H = U.shape[1]
    if W.shape[0] != 3 * H or U.shape != (3 * H, H) or b.shape != (3 * H,):
        raise ShapeError(f"gru_cell: inconsistent params W{W.shape} U{U.shape} b{b.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"gru_cell: input {x.shape} vs input_dim {W.shape[1]}")
    if h.shape[-1] != H or h.ndim != x.ndim or (h.ndim == 2 and h.shape[0] != x.shape[0]):
        raise ShapeError(f"gru_cell: hidden {h.shape} vs hidden_dim {H} / input {x.shape}")
    Wd, Ud, bd = W.data, U.data, b.data
    xd, hd = x.data, h.data
    vector = xd.ndim == 1
    if vector:
        xd, hd = xd[None, :], hd[None, :]
    gx = xd @ Wd.T + bd
    gh = hd @ Ud[: 2 * H].T
    z = _sigmoid(gx[:, :H] + gh[:, :H])
    r = _sigmoid(gx[:, H:2 * H] + gh[:, H:])
    rh = r * hd
    n = np.tanh(gx[:, 2 * H:] + rh @ Ud[2 * H:].T)
    out = (1 - z) * n + z * hd

    def vjp(g):
        if vector:
            g = g[None, :]
        dz = g * (hd - n)
        dn = g * (1 - z)
        dh = g * z
        da_n = dn * (1 - n * n)
        d_rh = da_n @ Ud[2 * H:]
        dr = d_rh * hd
        dh = dh + d_rh * r
        da_z = dz * z * (1 - z)
        da_r = dr * r * (1 - r)
        da = np.concatenate([da_z, da_r, da_n], axis=1)
        dW = da.T @ xd
        dU = np.empty_like(Ud)
        dU[: 2 * H] = da[:, : 2 * H].T @ hd
        dU[2 * H:] = da_n.T @ rh
        db = da.sum(axis=0)
        dx = da @ Wd
        dh = dh + da[:, : 2 * H] @ Ud[: 2 * H]
        if vector:
            dx, dh = dx[0], dh[0]
        return dW, dU, db, dx, dh

    return emit("gru_cell", out[0] if vector else out, (W, U, b, x, h), vjp)


def cross_entropy(logits, labels, weights=None):
    """Weighted sum of -log softmax(logits)[label] over rows.

    A 1-D `logits` with an integer label gives the single-utterance loss.
    """
    ld = logits.data
    vector = ld.ndim == 1
    if vector:
        ld = ld[None, :]
        labels = np.asarray([labels], dtype=np.intp)
    else:
        labels = np.asarray(labels, dtype=np.intp)
    K = ld.shape[1]
    if labels.shape[0] != ld.shape[0]:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {ld.shape[0]} rows")
    if np.any(labels < 0) or np.any(labels >= K):
        raise DomainError(f"cross_entropy: label out of range 0..{K - 1}")
    w = np.ones(ld.shape[0], dtype=ld.dtype) if weights is None else np.asarray(weights, dtype=ld.dtype)
    rows = np.arange(ld.shape[0])
    shifted = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[rows, labels]
    out = np.asarray((w * nll).sum(), dtype=ld.dtype)

    def vjp(g):
        p = _softmax(ld)
        p[rows, labels] -= 1
        grad = p * (w * g)[:, None]
        return (grad[0] if vector else grad,)

    return emit("cross_entropy", out, (logits,), vjp)
