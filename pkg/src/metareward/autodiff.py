"""Dense tensors with a tape for reverse-mode differentiation.

Every primitive writes its pullback in terms of other primitives, so the
gradient graph is itself differentiable: calling :func:`backward` with
``create_graph=True`` returns gradients that live on the tape and can be
differentiated again (gradients of gradients, to any order).

Only the shapes the networks in this package need are supported: no
general broadcasting, no views that alias writable memory. Tensor data is
treated as immutable once wrapped.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "no_recording",
    "backward",
    "detach",
    "add",
    "sub",
    "neg",
    "mul",
    "smul",
    "scale",
    "addc",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sigmoid",
    "tanh",
    "arctan",
    "exp",
    "reciprocal",
    "clip_min",
    "sum_all",
    "mean_all",
    "index_select",
    "scatter_scalar",
    "narrow",
    "embed",
    "concat",
    "pad2d",
    "crop2d",
    "im2col",
    "col2im",
    "add_colvec",
    "sum_cols",
    "tile_cols",
    "softmax_log_probs",
]

_RECORDING = True


class no_recording:
    """Context manager that suppresses tape recording.

    Used by :func:`backward` when ``create_graph`` is false so first-order
    pullbacks run as plain numpy.
    """

    def __enter__(self):
        global _RECORDING
        self._saved = _RECORDING
        _RECORDING = False
        return self

    def __exit__(self, *exc):
        global _RECORDING
        _RECORDING = self._saved
        return False


class Tensor:
    """A dense array, optionally attached to a tape node.

    A tensor with ``tape is None`` is a constant: it carries values but no
    derivative information.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self):
        return self.tape is not None

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def detach(t):
    """Same values, no tape node; gradient does not flow through."""
    return t.detach() if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))


class _Node:
    __slots__ = ("inputs", "vjp")

    def __init__(self, inputs, vjp):
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Append-only record of operations; inputs always reference earlier nodes."""

    def __init__(self):
        self.nodes = []

    def leaf(self, data):
        """Register an array as a differentiable leaf on this tape."""
        t = Tensor(np.asarray(data), self, len(self.nodes))
        self.nodes.append(_Node((), None))
        return t

    def record(self, out_data, inputs, vjp):
        t = Tensor(out_data, self, len(self.nodes))
        self.nodes.append(_Node(inputs, vjp))
        return t

    def __len__(self):
        return len(self.nodes)


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def _d(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    if not _RECORDING:
        return None
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise TapeError("operands live on different tapes")
    return tape


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    ad, bd = _d(a), _d(b)
    _check_same_shape(ad, bd, "add")
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(ad + bd)
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, want):
        return (g if want[0] else None, g if want[1] else None)

    return tape.record(ad + bd, (a, b), vjp)


def sub(a, b):
    ad, bd = _d(a), _d(b)
    _check_same_shape(ad, bd, "sub")
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(ad - bd)
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, want):
        return (g if want[0] else None, neg(g) if want[1] else None)

    return tape.record(ad - bd, (a, b), vjp)


def neg(a):
    ad = _d(a)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(-ad)

    def vjp(g, want):
        return (neg(g),)

    return tape.record(-ad, (a,), vjp)


def mul(a, b):
    ad, bd = _d(a), _d(b)
    _check_same_shape(ad, bd, "mul")
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(ad * bd)
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, want):
        return (mul(g, b) if want[0] else None, mul(g, a) if want[1] else None)

    return tape.record(ad * bd, (a, b), vjp)


def smul(a, s):
    """Multiply tensor ``a`` by a 0-d tensor ``s``."""
    ad, sd = _d(a), _d(s)
    if sd.shape != ():
        raise ShapeError(f"smul: scalar operand has shape {sd.shape}")
    tape = _tape_of(a, s)
    if tape is None:
        return Tensor(ad * sd)
    a, s = _as_tensor(a), _as_tensor(s)

    def vjp(g, want):
        ga = smul(g, s) if want[0] else None
        gs = sum_all(mul(g, a)) if want[1] else None
        return (ga, gs)

    return tape.record(ad * sd, (a, s), vjp)


def scale(a, c):
    """Multiply by a python float (constant)."""
    ad = _d(a)
    c = float(c)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(ad * c)

    def vjp(g, want):
        return (scale(g, c),)

    return tape.record(ad * c, (a,), vjp)


def addc(a, c):
    """Add a python float (constant) elementwise."""
    ad = _d(a)
    c = float(c)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(ad + c)

    def vjp(g, want):
        return (g,)

    return tape.record(ad + c, (a,), vjp)


def relu(a):
    ad = _d(a)
    out = np.maximum(ad, 0.0)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)
    mask = Tensor((ad > 0).astype(ad.dtype))

    def vjp(g, want):
        return (mul(g, mask),)

    return tape.record(out, (a,), vjp)


def clip_min(a, c):
    ad = _d(a)
    c = float(c)
    out = np.maximum(ad, c)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)
    mask = Tensor((ad > c).astype(ad.dtype))

    def vjp(g, want):
        return (mul(g, mask),)

    return tape.record(out, (a,), vjp)


def sigmoid(a):
    ad = _d(a)
    out_data = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))), np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out_data)
    out = tape.record(out_data, (a,), None)

    def vjp(g, want):
        return (mul(mul(g, out), addc(neg(out), 1.0)),)

    tape.nodes[out.node_id].vjp = vjp
    return out


def tanh(a):
    ad = _d(a)
    out_data = np.tanh(ad)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out_data)
    out = tape.record(out_data, (a,), None)

    def vjp(g, want):
        return (mul(g, addc(neg(mul(out, out)), 1.0)),)

    tape.nodes[out.node_id].vjp = vjp
    return out


def arctan(a):
    ad = _d(a)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(np.arctan(ad))
    a = _as_tensor(a)

    def vjp(g, want):
        return (mul(g, reciprocal(addc(mul(a, a), 1.0))),)

    return tape.record(np.arctan(ad), (a,), vjp)


def exp(a):
    ad = _d(a)
    out_data = np.exp(ad)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out_data)
    out = tape.record(out_data, (a,), None)

    def vjp(g, want):
        return (mul(g, out),)

    tape.nodes[out.node_id].vjp = vjp
    return out


def reciprocal(a):
    ad = _d(a)
    out_data = 1.0 / ad
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out_data)
    out = tape.record(out_data, (a,), None)

    def vjp(g, want):
        return (neg(mul(g, mul(out, out))),)

    tape.nodes[out.node_id].vjp = vjp
    return out


# ---------------------------------------------------------------------------
# linear algebra / shape
# ---------------------------------------------------------------------------


def matmul(a, b):
    """2-D @ 2-D or 2-D @ 1-D matrix product."""
    ad, bd = _d(a), _d(b)
    if ad.ndim != 2 or bd.ndim not in (1, 2) or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} @ {bd.shape}")
    tape = _tape_of(a, b)
    out = ad @ bd
    if tape is None:
        return Tensor(out)
    a, b = _as_tensor(a), _as_tensor(b)

    if bd.ndim == 2:

        def vjp(g, want):
            ga = matmul(g, transpose(b)) if want[0] else None
            gb = matmul(transpose(a), g) if want[1] else None
            return (ga, gb)

    else:
        m, k = ad.shape

        def vjp(g, want):
            ga = matmul(reshape(g, (m, 1)), reshape(b, (1, k))) if want[0] else None
            gb = matmul(transpose(a), g) if want[1] else None
            return (ga, gb)

    return tape.record(out, (a, b), vjp)


def transpose(a):
    ad = _d(a)
    if ad.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {ad.shape}")
    tape = _tape_of(a)
    if tape is None:
        return Tensor(ad.T.copy())

    def vjp(g, want):
        return (transpose(g),)

    return tape.record(ad.T.copy(), (a,), vjp)


def reshape(a, shape):
    ad = _d(a)
    shape = tuple(shape)
    tape = _tape_of(a)
    out = ad.reshape(shape)
    if tape is None:
        return Tensor(out)
    orig = ad.shape

    def vjp(g, want):
        return (reshape(g, orig),)

    return tape.record(out, (a,), vjp)


def sum_all(a):
    ad = _d(a)
    tape = _tape_of(a)
    out = np.asarray(ad.sum())
    if tape is None:
        return Tensor(out)
    shape = ad.shape
    dtype = ad.dtype

    def vjp(g, want):
        return (smul(Tensor(np.ones(shape, dtype=dtype)), g),)

    return tape.record(out, (a,), vjp)


def mean_all(a):
    n = _d(a).size
    return scale(sum_all(a), 1.0 / n)


def index_select(a, i):
    """Pick a single entry of a 1-D tensor; returns a 0-d tensor."""
    ad = _d(a)
    if ad.ndim != 1:
        raise ShapeError(f"index_select: expected 1-D, got {ad.shape}")
    i = int(i)
    tape = _tape_of(a)
    out = np.asarray(ad[i])
    if tape is None:
        return Tensor(out)
    n = ad.shape[0]

    def vjp(g, want):
        return (scatter_scalar(g, i, n),)

    return tape.record(out, (a,), vjp)


def scatter_scalar(g, i, n):
    """Embed a 0-d tensor at index ``i`` of a zero vector of length ``n``."""
    gd = _d(g)
    tape = _tape_of(g)
    out = np.zeros(n, dtype=gd.dtype)
    out[i] = gd
    if tape is None:
        return Tensor(out)

    def vjp(gg, want):
        return (index_select(gg, i),)

    return tape.record(out, (g,), vjp)


def narrow(a, start, length):
    ad = _d(a)
    if ad.ndim != 1:
        raise ShapeError(f"narrow: expected 1-D, got {ad.shape}")
    tape = _tape_of(a)
    out = ad[start : start + length].copy()
    if tape is None:
        return Tensor(out)
    n = ad.shape[0]

    def vjp(g, want):
        return (embed(g, start, n),)

    return tape.record(out, (a,), vjp)


def embed(a, start, n):
    """Place a 1-D tensor into a zero vector of length ``n`` at ``start``."""
    ad = _d(a)
    tape = _tape_of(a)
    out = np.zeros(n, dtype=ad.dtype)
    out[start : start + ad.shape[0]] = ad
    if tape is None:
        return Tensor(out)
    length = ad.shape[0]

    def vjp(g, want):
        return (narrow(g, start, length),)

    return tape.record(out, (a,), vjp)


def concat(parts):
    """Concatenate 1-D tensors."""
    datas = [_d(p) for p in parts]
    tape = _tape_of(*parts)
    out = np.concatenate(datas)
    if tape is None:
        return Tensor(out)
    parts = tuple(_as_tensor(p) for p in parts)
    offsets = np.cumsum([0] + [d.shape[0] for d in datas])

    def vjp(g, want):
        return tuple(
            narrow(g, int(offsets[k]), int(offsets[k + 1] - offsets[k])) if want[k] else None
            for k in range(len(parts))
        )

    return tape.record(out, parts, vjp)


# ---------------------------------------------------------------------------
# convolution building blocks
# ---------------------------------------------------------------------------


def pad2d(a, p):
    """Zero-pad the two trailing axes of a (C, H, W) tensor by ``p``."""
    ad = _d(a)
    if ad.ndim != 3:
        raise ShapeError(f"pad2d: expected (C,H,W), got {ad.shape}")
    tape = _tape_of(a)
    out = np.pad(ad, ((0, 0), (p, p), (p, p)))
    if tape is None:
        return Tensor(out)

    def vjp(g, want):
        return (crop2d(g, p),)

    return tape.record(out, (a,), vjp)


def crop2d(a, p):
    ad = _d(a)
    tape = _tape_of(a)
    out = ad[:, p:-p, p:-p].copy()
    if tape is None:
        return Tensor(out)

    def vjp(g, want):
        return (pad2d(g, p),)

    return tape.record(out, (a,), vjp)


def _im2col_data(x, kh, kw):
    c, hp, wp = x.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    # win: (C, Ho, Wo, kh, kw) -> (Ho*Wo, C*kh*kw)
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c * kh * kw)


def _col2im_data(cols, shape, kh, kw):
    c, hp, wp = shape
    ho, wo = hp - kh + 1, wp - kw + 1
    out = np.zeros(shape, dtype=cols.dtype)
    patches = cols.reshape(ho, wo, c, kh, kw)
    for u in range(kh):
        for v in range(kw):
            out[:, u : u + ho, v : v + wo] += patches[:, :, :, u, v].transpose(2, 0, 1)
    return out


def im2col(a, kh, kw):
    """Extract sliding (kh, kw) patches of a (C, H, W) tensor as rows."""
    ad = _d(a)
    if ad.ndim != 3:
        raise ShapeError(f"im2col: expected (C,H,W), got {ad.shape}")
    tape = _tape_of(a)
    out = _im2col_data(ad, kh, kw)
    if tape is None:
        return Tensor(out)
    shape = ad.shape

    def vjp(g, want):
        return (col2im(g, shape, kh, kw),)

    return tape.record(out, (a,), vjp)


def col2im(a, shape, kh, kw):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to (C, H, W)."""
    ad = _d(a)
    tape = _tape_of(a)
    out = _col2im_data(ad, shape, kh, kw)
    if tape is None:
        return Tensor(out)

    def vjp(g, want):
        return (im2col(g, kh, kw),)

    return tape.record(out, (a,), vjp)


def add_colvec(m, v):
    """Add a length-F vector to every column of an (F, P) matrix."""
    md, vd = _d(m), _d(v)
    if md.ndim != 2 or vd.shape != (md.shape[0],):
        raise ShapeError(f"add_colvec: shapes {md.shape} and {vd.shape}")
    tape = _tape_of(m, v)
    out = md + vd[:, None]
    if tape is None:
        return Tensor(out)
    m, v = _as_tensor(m), _as_tensor(v)

    def vjp(g, want):
        return (g if want[0] else None, sum_cols(g) if want[1] else None)

    return tape.record(out, (m, v), vjp)


def sum_cols(m):
    md = _d(m)
    tape = _tape_of(m)
    out = md.sum(axis=1)
    if tape is None:
        return Tensor(out)
    p = md.shape[1]

    def vjp(g, want):
        return (tile_cols(g, p),)

    return tape.record(out, (m,), vjp)


def tile_cols(v, p):
    vd = _d(v)
    tape = _tape_of(v)
    out = np.repeat(vd[:, None], p, axis=1)
    if tape is None:
        return Tensor(out)

    def vjp(g, want):
        return (sum_cols(g),)

    return tape.record(out, (v,), vjp)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

LOG_PROB_FLOOR = -80.0


def softmax_log_probs(logits):
    """Numerically stable log-softmax of a 1-D logits vector.

    Log probabilities are floored at ``LOG_PROB_FLOOR``.
    """
    ld = _d(logits)
    if ld.ndim != 1:
        raise ShapeError(f"softmax_log_probs: expected 1-D, got {ld.shape}")
    m = ld.max()
    shifted = ld - m
    lse = np.log(np.exp(shifted).sum())
    out_data = np.maximum(shifted - lse, LOG_PROB_FLOOR)
    tape = _tape_of(logits)
    if tape is None:
        return Tensor(out_data)
    floor_mask = Tensor((shifted - lse > LOG_PROB_FLOOR).astype(ld.dtype))
    out = tape.record(out_data, (logits,), None)

    def vjp(g, want):
        g = mul(g, floor_mask)
        return (sub(g, smul(exp(out), sum_all(g))),)

    tape.nodes[out.node_id].vjp = vjp
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(scalar, wrt, create_graph=False):
    """Gradients of a 0-d tape tensor with respect to leaf tensors.

    ``wrt`` is a sequence of tape tensors; the result is a list of tensors
    of matching shapes. With ``create_graph`` the returned gradients stay
    on the tape so they can be differentiated again; otherwise they are
    detached constants and the pullbacks run without recording.
    """
    if not isinstance(scalar, Tensor) or scalar.data.shape != ():
        raise TapeError("backward expects a 0-d tensor")
    if scalar.tape is None:
        raise TapeError("backward target is detached from any tape")
    tape = scalar.tape
    wrt = list(wrt)
    for t in wrt:
        if t.tape is not tape:
            raise TapeError("a requested parameter is not on the target's tape")

    limit = scalar.node_id + 1
    needed = np.zeros(limit, dtype=bool)
    for t in wrt:
        if t.node_id < limit:
            needed[t.node_id] = True
    nodes = tape.nodes
    for nid in range(limit):
        if needed[nid]:
            continue
        for inp in nodes[nid].inputs:
            if inp.tape is tape and inp.node_id < limit and needed[inp.node_id]:
                needed[nid] = True
                break

    cot = {}
    if needed[scalar.node_id]:
        cot[scalar.node_id] = Tensor(np.ones((), dtype=scalar.data.dtype))

    def run():
        for nid in range(scalar.node_id, -1, -1):
            g = cot.pop(nid, None)
            if g is None:
                continue
            node = nodes[nid]
            if node.vjp is None:
                cot[nid] = g  # leaf: keep its accumulated gradient
                continue
            want = tuple(
                inp.tape is tape and inp.node_id < limit and bool(needed[inp.node_id])
                for inp in node.inputs
            )
            contribs = node.vjp(g, want)
            for inp, c in zip(node.inputs, contribs):
                if c is None or inp.tape is not tape or not needed[inp.node_id]:
                    continue
                prev = cot.get(inp.node_id)
                cot[inp.node_id] = c if prev is None else add(prev, c)

    if create_graph:
        run()
    else:
        with no_recording():
            run()

    grads = []
    for t in wrt:
        g = cot.get(t.node_id)
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        grads.append(g if create_graph else g.detach())
    return grads
