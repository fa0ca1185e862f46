"""Dense tensor engine with reverse-mode automatic differentiation.

Values are float64 numpy arrays wrapped in :class:`DiffTensor`. Every
differentiable operation records a node on the ambient :class:`Tape`;
``backward`` replays the tape in reverse creation order (a valid reverse
topological order, since parents are always created before children) and
accumulates gradients into ``.grad``. The reference path is single threaded
and bit-reproducible for a fixed seed and configuration.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DiffTensor",
    "Tape",
    "BatchNormState",
    "tensor",
    "zeros",
    "no_grad",
    "record_op",
    "active_tape",
    "add",
    "add_broadcast",
    "sub",
    "mul",
    "mul_scalar",
    "square",
    "relu",
    "relu6",
    "sum_over",
    "mean_over",
    "concat0",
    "slice_rows",
    "conv2d",
    "conv_transpose2d",
    "batchnorm2d",
    "batchnorm_rows",
    "backward",
    "grad_check",
]


class DiffTensor:
    """N-d float64 value with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "tape_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape_node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data.copy())

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, DiffTensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    def __rmul__(self, other):
        return mul_scalar(self, float(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        return f"DiffTensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


class _TapeNode:
    __slots__ = ("out", "parents", "backward_fn", "index")

    def __init__(self, out, parents, backward_fn, index):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.index = index


class Tape:
    """Ordered record of differentiable operations.

    Creation order is a topological order of the compute graph, so a single
    reverse sweep visits each node exactly once with all downstream
    gradients already accumulated.
    """

    def __init__(self):
        self.nodes: list[_TapeNode] = []

    def record(self, out, parents, backward_fn) -> _TapeNode:
        node = _TapeNode(out, parents, backward_fn, len(self.nodes))
        self.nodes.append(node)
        out.tape_node = node
        return node

    def clear(self):
        for node in self.nodes:
            node.out.tape_node = None
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def record_op(out: DiffTensor, parents, backward_fn):
    """Attach a custom differentiable op to the ambient tape.

    ``backward_fn(grad_out)`` must accumulate into each parent via
    :func:`accumulate_grad`. Recording happens only if grads are enabled and
    some parent requires grad; otherwise the output stays constant.
    """
    parents = tuple(p for p in parents if p is not None)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPE.record(out, parents, backward_fn)
    return out


def accumulate_grad(t: DiffTensor, g: np.ndarray):
    """Add ``g`` into ``t.grad``; tensors not requiring grad never accumulate."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def tensor(data, requires_grad: bool = False) -> DiffTensor:
    return DiffTensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> DiffTensor:
    return DiffTensor(np.zeros(shape), requires_grad=requires_grad)


def _as_dt(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


# ---------------------------------------------------------------------------
# pointwise and reduction ops
# ---------------------------------------------------------------------------


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a, b) -> DiffTensor:
    a, b = _as_dt(a), _as_dt(b)
    _check_same_shape("add", a, b)
    out = DiffTensor(a.data + b.data)

    def backward_fn(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return record_op(out, (a, b), backward_fn)


def add_broadcast(x: DiffTensor, p: DiffTensor) -> DiffTensor:
    """x + p with numpy broadcasting; the grad of p sums over broadcast axes."""
    try:
        out_data = x.data + p.data
    except ValueError as e:
        raise ValueError(f"add_broadcast: incompatible shapes {x.shape} vs {p.shape}") from e
    if out_data.shape != x.data.shape:
        raise ValueError(f"add_broadcast: rhs {tuple(p.shape)} must broadcast into lhs {tuple(x.shape)}")
    out = DiffTensor(out_data)

    def backward_fn(g):
        accumulate_grad(x, g)
        if p.requires_grad:
            gp = g
            # sum out leading axes then any axes where p has extent 1
            extra = gp.ndim - p.data.ndim
            if extra:
                gp = gp.sum(axis=tuple(range(extra)))
            axes = tuple(i for i, d in enumerate(p.data.shape) if d == 1 and gp.shape[i] != 1)
            if axes:
                gp = gp.sum(axis=axes, keepdims=True)
            accumulate_grad(p, gp)

    return record_op(out, (x, p), backward_fn)


def sub(a, b) -> DiffTensor:
    a, b = _as_dt(a), _as_dt(b)
    _check_same_shape("sub", a, b)
    out = DiffTensor(a.data - b.data)

    def backward_fn(g):
        accumulate_grad(a, g)
        accumulate_grad(b, -g)

    return record_op(out, (a, b), backward_fn)


def mul(a, b) -> DiffTensor:
    a, b = _as_dt(a), _as_dt(b)
    _check_same_shape("mul", a, b)
    out = DiffTensor(a.data * b.data)

    def backward_fn(g):
        accumulate_grad(a, g * b.data)
        accumulate_grad(b, g * a.data)

    return record_op(out, (a, b), backward_fn)


def mul_scalar(x: DiffTensor, s: float) -> DiffTensor:
    x = _as_dt(x)
    s = float(s)
    out = DiffTensor(x.data * s)

    def backward_fn(g):
        accumulate_grad(x, g * s)

    return record_op(out, (x,), backward_fn)


def square(x: DiffTensor) -> DiffTensor:
    x = _as_dt(x)
    out = DiffTensor(x.data * x.data)

    def backward_fn(g):
        accumulate_grad(x, 2.0 * x.data * g)

    return record_op(out, (x,), backward_fn)


def relu(x: DiffTensor) -> DiffTensor:
    x = _as_dt(x)
    out = DiffTensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0  # subgradient 0 at the kink

    def backward_fn(g):
        accumulate_grad(x, g * mask)

    return record_op(out, (x,), backward_fn)


def relu6(x: DiffTensor) -> DiffTensor:
    x = _as_dt(x)
    out = DiffTensor(np.clip(x.data, 0.0, 6.0))
    mask = (x.data > 0.0) & (x.data < 6.0)  # subgradient 0 at both kinks

    def backward_fn(g):
        accumulate_grad(x, g * mask)

    return record_op(out, (x,), backward_fn)


def sum_over(x: DiffTensor, axes=None) -> DiffTensor:
    x = _as_dt(x)
    if axes is None:
        out = DiffTensor(x.data.sum())

        def backward_fn(g):
            accumulate_grad(x, np.broadcast_to(g, x.data.shape))

        return record_op(out, (x,), backward_fn)

    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    out = DiffTensor(x.data.sum(axis=axes))

    def backward_fn(g):
        ge = np.expand_dims(g, axes)
        accumulate_grad(x, np.broadcast_to(ge, x.data.shape))

    return record_op(out, (x,), backward_fn)


def mean_over(x: DiffTensor, over=None) -> DiffTensor:
    """Mean of ``x`` over a boolean mask, a set of axes, or everything.

    ``over`` may be None (global mean), an int/tuple of axes, or a boolean
    numpy array broadcastable to ``x``'s shape; in the mask form the result
    is the scalar mean of the selected entries.
    """
    x = _as_dt(x)
    if isinstance(over, np.ndarray):
        if over.dtype != bool:
            raise ValueError("mean_over: mask must be boolean")
        mask = np.broadcast_to(over, x.data.shape)
        count = int(mask.sum())
        if count == 0:
            raise ValueError("mean_over: empty selection mask")
        out = DiffTensor(x.data[mask].sum() / count)

        def backward_fn(g):
            accumulate_grad(x, (float(g) / count) * mask)

        return record_op(out, (x,), backward_fn)

    if over is None:
        n = x.data.size
        out = DiffTensor(x.data.sum() / n)

        def backward_fn(g):
            accumulate_grad(x, np.broadcast_to(g / n, x.data.shape))

        return record_op(out, (x,), backward_fn)

    axes = (over,) if isinstance(over, int) else tuple(over)
    n = int(np.prod([x.data.shape[a] for a in axes]))
    out = DiffTensor(x.data.mean(axis=axes))

    def backward_fn(g):
        ge = np.expand_dims(g, axes)
        accumulate_grad(x, np.broadcast_to(ge / n, x.data.shape))

    return record_op(out, (x,), backward_fn)


def concat0(parts) -> DiffTensor:
    """Concatenate along axis 0; backward slices the gradient back apart."""
    parts = [_as_dt(p) for p in parts]
    if not parts:
        raise ValueError("concat0: empty input list")
    out = DiffTensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.data.shape[0] for p in parts]

    def backward_fn(g):
        off = 0
        for p, n in zip(parts, sizes):
            accumulate_grad(p, g[off : off + n])
            off += n

    return record_op(out, tuple(parts), backward_fn)


def slice_rows(x: DiffTensor, start: int, stop: int) -> DiffTensor:
    x = _as_dt(x)
    if not (0 <= start <= stop <= x.data.shape[0]):
        raise ValueError(f"slice_rows: [{start}:{stop}] out of range for {x.data.shape[0]} rows")
    out = DiffTensor(x.data[start:stop].copy())

    def backward_fn(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            accumulate_grad(x, gx)

    return record_op(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[N,C,H,W] -> [N, C*kh*kw, Ho*Wo] patch matrix (copies)."""
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x
    else:
        xp = x
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(win).reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, xshape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to [N,C,H,W]."""
    n, c, h, w = xshape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols6 = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols6[:, :, i, j]
    if padding:
        return np.ascontiguousarray(xp[:, :, padding : padding + h, padding : padding + w])
    return xp


def conv2d(x: DiffTensor, w: DiffTensor, b: DiffTensor | None = None, stride: int = 1, padding: int = 0) -> DiffTensor:
    """Cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw] weights."""
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-d [N,C,H,W], got {x.ndim}-d")
    if w.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-d [Cout,Cin,kh,kw], got {w.ndim}-d")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input channel dim {cin} != weight in-channel dim {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {tuple(b.shape)} != out-channel dim ({cout},)")
    if padding < 0:
        raise ValueError("conv2d: padding must be >= 0")
    if stride == 1 and (kh % 2 == 0 or kw % 2 == 0):
        raise ValueError(f"conv2d: even kernel {kh}x{kw} requires stride > 1")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wd} with padding {padding}")

    cols = _im2col(x.data, kh, kw, stride, padding)
    wm = w.data.reshape(cout, cin * kh * kw)
    flat = np.matmul(wm, cols)  # [N, Cout, Ho*Wo]
    if b is not None:
        flat = flat + b.data[:, None]
    out = DiffTensor(flat.reshape(n, cout, ho, wo))

    def backward_fn(g):
        gf = g.reshape(n, cout, ho * wo)
        if w.requires_grad:
            accumulate_grad(w, np.einsum("nol,nkl->ok", gf, cols).reshape(w.shape))
        if x.requires_grad:
            accumulate_grad(x, _col2im(np.matmul(wm.T, gf), x.shape, kh, kw, stride, padding))
        if b is not None and b.requires_grad:
            accumulate_grad(b, g.sum(axis=(0, 2, 3)))

    return record_op(out, (x, w, b), backward_fn)


def conv_transpose2d(
    x: DiffTensor,
    w: DiffTensor,
    b: DiffTensor | None = None,
    stride: int = 2,
    padding: int = 1,
    require_doubling: bool = True,
) -> DiffTensor:
    """Transposed convolution; weight layout is [Cin, Cout, kh, kw].

    The default (kernel 4, stride 2, padding 1) exactly doubles the spatial
    size. Other geometries must be requested with ``require_doubling=False``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv_transpose2d: input and weight must be 4-d")
    n, cin, h, wd = x.shape
    cin_w, cout, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv_transpose2d: input channel dim {cin} != weight in-channel dim {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv_transpose2d: bias shape {tuple(b.shape)} != out-channel dim ({cout},)")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ValueError("conv_transpose2d: degenerate output size")
    if require_doubling and (ho != 2 * h or wo != 2 * wd):
        raise ValueError(
            f"conv_transpose2d: kernel {kh}, stride {stride}, padding {padding} "
            f"gives {ho}x{wo} from {h}x{wd}; non-doubling configs need require_doubling=False"
        )

    wm = w.data.reshape(cin, cout * kh * kw)
    xf = x.data.reshape(n, cin, h * wd)
    cols = np.matmul(wm.T, xf)  # [N, Cout*kh*kw, H*W]
    y = _col2im(cols, (n, cout, ho, wo), kh, kw, stride, padding)
    if b is not None:
        y = y + b.data[None, :, None, None]
    out = DiffTensor(y)

    def backward_fn(g):
        gcols = _im2col(g, kh, kw, stride, padding)  # [N, Cout*kh*kw, H*W]
        if x.requires_grad:
            accumulate_grad(x, np.matmul(wm, gcols).reshape(x.shape))
        if w.requires_grad:
            accumulate_grad(w, np.einsum("ncl,nkl->ck", xf, gcols).reshape(w.shape))
        if b is not None and b.requires_grad:
            accumulate_grad(b, g.sum(axis=(0, 2, 3)))

    return record_op(out, (x, w, b), backward_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


class BatchNormState:
    """Running statistics for one batch-norm layer (per-channel, float64)."""

    __slots__ = ("running_mean", "running_var", "momentum")

    def __init__(self, channels: int, momentum: float = 0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum

    def copy(self) -> "BatchNormState":
        st = BatchNormState(len(self.running_mean), self.momentum)
        st.running_mean = self.running_mean.copy()
        st.running_var = self.running_var.copy()
        return st


def _batchnorm(x, gamma, beta, state, mode, eps, axes):
    """Shared BN core; ``axes`` are the reduction axes (channel axis excluded)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    c = gamma.data.size
    bshape = [1] * x.ndim
    caxis = [i for i in range(x.ndim) if i not in axes]
    assert len(caxis) == 1
    bshape[caxis[0]] = c
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)

    m = x.data.size // c
    if mode == "train":
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        mom = state.momentum
        state.running_mean = (1 - mom) * state.running_mean + mom * mu.reshape(c)
        state.running_var = (1 - mom) * state.running_var + mom * unbiased.reshape(c)
    else:
        mu = state.running_mean.reshape(bshape)
        var = state.running_var.reshape(bshape)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = DiffTensor(gb * xhat + bb)

    if mode == "train":

        def backward_fn(g):
            dxhat = g * gb
            if x.requires_grad:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                accumulate_grad(x, (inv / m) * (m * dxhat - s1 - xhat * s2))
            if gamma.requires_grad:
                accumulate_grad(gamma, (g * xhat).sum(axis=axes).reshape(c))
            if beta.requires_grad:
                accumulate_grad(beta, g.sum(axis=axes).reshape(c))

    else:

        def backward_fn(g):
            if x.requires_grad:
                accumulate_grad(x, g * gb * inv)
            if gamma.requires_grad:
                accumulate_grad(gamma, (g * xhat).sum(axis=axes).reshape(c))
            if beta.requires_grad:
                accumulate_grad(beta, g.sum(axis=axes).reshape(c))

    return record_op(out, (x, gamma, beta), backward_fn)


def batchnorm2d(
    x: DiffTensor,
    gamma: DiffTensor,
    beta: DiffTensor,
    state: BatchNormState,
    mode: str = "train",
    eps: float = 1e-5,
) -> DiffTensor:
    """Per-channel batch norm over (N, H, W) of a [N,C,H,W] tensor."""
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d: input must be 4-d, got {x.ndim}-d")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(
            f"batchnorm2d: gamma/beta must have shape ({x.shape[1]},), "
            f"got {tuple(gamma.shape)} and {tuple(beta.shape)}"
        )
    return _batchnorm(x, gamma, beta, state, mode, eps, axes=(0, 2, 3))


def batchnorm_rows(
    x: DiffTensor,
    gamma: DiffTensor,
    beta: DiffTensor,
    state: BatchNormState,
    mode: str = "train",
    eps: float = 1e-5,
) -> DiffTensor:
    """Column-wise batch norm of a [rows, C] matrix (used by sparse layers)."""
    if x.ndim != 2:
        raise ValueError(f"batchnorm_rows: input must be 2-d, got {x.ndim}-d")
    if x.shape[0] == 0:
        raise ValueError("batchnorm_rows: no rows to normalize")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"batchnorm_rows: gamma/beta must have shape ({x.shape[1]},)")
    return _batchnorm(x, gamma, beta, state, mode, eps, axes=(0,))


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------


def backward(loss: DiffTensor):
    """Populate gradients of everything the scalar ``loss`` depends on.

    Walks the ambient tape once in reverse creation order and then clears
    it; each recorded node is visited exactly once.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    node = loss.tape_node
    if node is None:
        _TAPE.clear()
        return
    loss.grad = np.ones_like(loss.data)
    for n in reversed(_TAPE.nodes[: node.index + 1]):
        if n.out.grad is None:
            continue
        n.backward_fn(n.out.grad)
    _TAPE.clear()


def grad_check(f, inputs, eps: float = 1e-5, max_entries_per_input: int | None = None, rng=None) -> float:
    """Max relative error between analytic grads of ``f(inputs)`` and central differences.

    ``f`` maps the list of tensors to a scalar DiffTensor. Errors are scaled
    by max(1, |analytic|, |numeric|) per entry, so near-zero gradients are
    compared absolutely. With ``max_entries_per_input`` only a random subset
    of coordinates per input is probed (for large parameter sets).
    """
    for t in inputs:
        t.zero_grad()
    out = f(inputs)
    backward(out)
    analytic = {}
    for i, t in enumerate(inputs):
        if t.requires_grad:
            analytic[i] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for i, t in enumerate(inputs):
        if i not in analytic:
            continue
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_input is not None and flat.size > max_entries_per_input:
            idxs = np.sort(rng.choice(flat.size, size=max_entries_per_input, replace=False))
        a_flat = analytic[i].reshape(-1)
        for j in idxs:
            orig = flat[j]
            with no_grad():
                flat[j] = orig + eps
                fp = f(inputs).item()
                flat[j] = orig - eps
                fm = f(inputs).item()
            flat[j] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(a_flat[j] - num) / max(1.0, abs(a_flat[j]), abs(num))
            if err > worst:
                worst = err
    for t in inputs:
        t.zero_grad()
    return worst
