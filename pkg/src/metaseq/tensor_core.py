"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

The operation set is deliberately small: exactly what a projection +
multi-window sequence convolution + BiLSTM + softmax classifier needs,
plus the finite-difference utility used to verify every gradient. All
arithmetic is 64-bit. There is no broadcasting beyond the explicit
``add_bias`` row op.

Tape recording is thread-local: each model instance runs its forward and
backward on one thread, while independent instances may run concurrently.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    LabelError,
    NumericError,
    ParameterError,
    StateError,
    WindowError,
)

PROB_FLOOR = 1e-12  # clamp applied to probabilities before taking logs


def _asarray(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64, order="C")
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains non-finite values")
    return arr


class Tensor:
    """A dense float64 array plus an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    """Wrap arrays/lists as constant tensors; pass Tensor through unchanged."""
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TLS = threading.local()


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], None]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended at execution time, so the list is topologically
    sorted by construction; ``backward`` replays it once, in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_TLS, "stack", None)
        if stack is None:
            stack = _TLS.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TLS.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    stack = getattr(_TLS, "stack", None)
    return stack[-1] if stack else None


def _record(op: str, inputs: tuple[Tensor, ...], output: Tensor,
            backward_fn: Callable[[np.ndarray], None]) -> None:
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape.nodes.append(_Node(op, inputs, output, backward_fn))


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def backward(loss: Tensor, tape: Tape,
             parameters: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    ``loss`` must be a scalar. Parameters passed explicitly but never used
    on the tape receive a zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        node.backward_fn(out_grad)
    if parameters is not None:
        for p in parameters:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(parameters: Iterable[Tensor]) -> None:
    for p in parameters:
        p.grad = None


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

class RngStream:
    """Deterministic random source keyed by (seed, stream id).

    The same key always yields the same draw sequence, regardless of how
    many other streams exist or which thread consumes it.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def spawn(self, stream_id: int) -> "RngStream":
        """A sibling stream under the same seed."""
        return RngStream(self.seed, stream_id)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int) -> int:
        return int(self._gen.integers(0, n))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def _require_2d(name: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise DimensionError(f"{name} expects a 2-D tensor, got shape {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product with the usual transpose-product gradients."""
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    _record("matmul", (a, b), out, bw)
    return out


def matvec(w: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product (m x k) . (k,) -> (m,)."""
    _require_2d("matvec", w)
    if v.data.ndim != 1 or w.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: incompatible shapes {w.shape} and {v.shape}")
    out = Tensor(w.data @ v.data, requires_grad=w.requires_grad or v.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(w, np.outer(g, v.data))
        _accumulate(v, w.data.T @ g)

    _record("matvec", (w, v), out, bw)
    return out


def transpose(x: Tensor) -> Tensor:
    _require_2d("transpose", x)
    out = Tensor(x.data.T, requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(x, g.T)

    _record("transpose", (x,), out, bw)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    _record("add", (a, b), out, bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    _record("mul", (a, b), out, bw)
    return out


def add_bias(m: Tensor, bias: Tensor) -> Tensor:
    """Add a length-k bias row to every row of an (n, k) matrix."""
    _require_2d("add_bias", m)
    if bias.data.ndim != 1 or bias.shape[0] != m.shape[1]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit matrix {m.shape}")
    out = Tensor(m.data + bias.data[None, :], requires_grad=m.requires_grad or bias.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(m, g)
        _accumulate(bias, g.sum(axis=0))

    _record("add_bias", (m, bias), out, bw)
    return out


def tanh_act(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - t * t))

    _record("tanh", (x,), out, bw)
    return out


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s, requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(x, g * s * (1.0 - s))

    _record("sigmoid", (x,), out, bw)
    return out


def softmax(logits: Tensor) -> Tensor:
    """Probability vector(s) over the last axis, max-subtracted for stability.

    Accepts a length-k vector or an (n, k) matrix of per-row logits; k >= 2.
    """
    z = logits.data
    if z.ndim not in (1, 2):
        raise DimensionError(f"softmax expects a vector or matrix, got shape {logits.shape}")
    if z.shape[-1] < 2:
        raise DimensionError(f"softmax needs at least 2 classes, got shape {logits.shape}")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, requires_grad=logits.requires_grad)

    def bw(g: np.ndarray) -> None:
        inner = (g * p).sum(axis=-1, keepdims=True)
        _accumulate(logits, p * (g - inner))

    _record("softmax", (logits,), out, bw)
    return out


def weighted_cross_entropy(probs: Tensor, labels: Sequence[int],
                           weights: Sequence[float],
                           mask: Sequence[bool] | None = None) -> Tensor:
    """Class-weighted negative log likelihood over masked positions.

    ``probs`` is (n, k) with rows summing to 1; probabilities are clamped
    at PROB_FLOOR before the log so confident mistakes stay finite.
    """
    _require_2d("weighted_cross_entropy", probs)
    n, k = probs.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise DimensionError(f"labels shape {y.shape} does not match {n} rows")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"label outside [0, {k}) in {sorted(set(y.tolist()))}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise DimensionError(f"weights shape {w.shape} does not match {k} classes")
    m = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (n,):
        raise DimensionError(f"mask shape {m.shape} does not match {n} rows")

    picked = probs.data[np.arange(n), y]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = -(w[y] * np.log(clamped) * m).sum()
    out = Tensor(loss, requires_grad=probs.requires_grad)

    def bw(g: np.ndarray) -> None:
        dp = np.zeros_like(probs.data)
        live = m & (picked >= PROB_FLOOR)  # inside the clamp the log is flat
        rows = np.arange(n)[live]
        dp[rows, y[live]] = -w[y[live]] / picked[live] * float(g)
        _accumulate(probs, dp)

    _record("weighted_cross_entropy", (probs,), out, bw)
    return out


def dropout(x: Tensor, rate: float, rng: RngStream, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out = Tensor(x.data * keep, requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(x, g * keep)

    _record("dropout", (x,), out, bw)
    return out


def _conv_prepare(stack, kernel_block: Tensor, op: str):
    inp = getattr(stack, "tensor", stack)
    if not isinstance(inp, Tensor) or inp.data.ndim != 3:
        raise DimensionError(f"{op} expects a (channel, position, dim) input")
    kb = kernel_block.data
    c, n, d = inp.shape
    kk, kc, w, kd = kb.shape
    if (kc, kd) != (c, d):
        raise DimensionError(
            f"{op}: kernel channels/dim {(kc, kd)} do not match input {(c, d)}")
    if w < 1:
        raise WindowError(f"{op}: window must be >= 1, got {w}")
    if n < 1:
        raise WindowError(f"{op}: window {w} does not fit padded sequence of length {n}")
    padded = np.concatenate([inp.data, np.zeros((c, w - 1, d))], axis=1) if w > 1 else inp.data
    # windows[c, i, d, o] = padded[c, i + o, d]
    windows = np.lib.stride_tricks.sliding_window_view(padded, w, axis=1)
    return inp, windows, (c, n, d, w)


def conv_bank(stack, kernels: Tensor) -> Tensor:
    """All feature maps of one window size at once: (k,c,w,d) kernels -> (n,k).

    Position i of map k is the full sum over channels, window offsets and
    embedding dimensions of input[c, i+o, d] * kernel[k, c, o, d], with the
    sequence zero-padded at the end so every position yields a value.
    """
    inp, windows, (c, n, d, w) = _conv_prepare(stack, kernels, "conv_bank")
    out_data = np.einsum("cido,kcod->ik", windows, kernels.data)
    out = Tensor(out_data, requires_grad=inp.requires_grad or kernels.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(kernels, np.einsum("ik,cido->kcod", g, windows))
        if inp.requires_grad:
            contrib = np.einsum("ik,kcod->icod", g, kernels.data)
            dpad = np.zeros((c, n + w - 1, d))
            for o in range(w):
                dpad[:, o:o + n, :] += contrib[:, :, o, :].transpose(1, 0, 2)
            _accumulate(inp, dpad[:, :n, :])

    _record("conv_bank", (inp, kernels), out, bw)
    return out


def conv_seq(stack, kernel: Tensor, pad: str = "end") -> Tensor:
    """One kernel (c,w,d) slid over the sequence -> one scalar per position."""
    if pad != "end":
        raise ParameterError(f"unsupported padding policy {pad!r}")
    if kernel.data.ndim != 3:
        raise DimensionError(f"conv_seq kernel must be (channel, window, dim), got {kernel.shape}")
    inp, windows, (c, n, d, w) = _conv_prepare(stack, Tensor(kernel.data[None]), "conv_seq")
    out_data = np.einsum("cido,cod->i", windows, kernel.data)
    out = Tensor(out_data, requires_grad=inp.requires_grad or kernel.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(kernel, np.einsum("i,cido->cod", g, windows))
        if inp.requires_grad:
            contrib = np.einsum("i,cod->icod", g, kernel.data)
            dpad = np.zeros((c, n + w - 1, d))
            for o in range(w):
                dpad[:, o:o + n, :] += contrib[:, :, o, :].transpose(1, 0, 2)
            _accumulate(inp, dpad[:, :n, :])

    _record("conv_seq", (inp, kernel), out, bw)
    return out


def row(x: Tensor, i: int) -> Tensor:
    """Row i of an (n, k) matrix as a (1, k) tensor."""
    _require_2d("row", x)
    if not 0 <= i < x.shape[0]:
        raise DimensionError(f"row {i} out of range for shape {x.shape}")
    out = Tensor(x.data[i:i + 1, :], requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[i, :] = g[0]
        _accumulate(x, full)

    _record("row", (x,), out, bw)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d("slice_cols", x)
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"column slice [{start}:{stop}] invalid for shape {x.shape}")
    out = Tensor(x.data[:, start:stop], requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    _record("slice_cols", (x,), out, bw)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Horizontal concatenation of (n, k_i) matrices."""
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    n = parts[0].shape[0]
    for p in parts:
        _require_2d("concat_cols", p)
        if p.shape[0] != n:
            raise DimensionError(f"concat_cols: row counts differ, {p.shape[0]} vs {n}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1),
                 requires_grad=any(p.requires_grad for p in parts))
    widths = [p.shape[1] for p in parts]

    def bw(g: np.ndarray) -> None:
        at = 0
        for p, width in zip(parts, widths):
            _accumulate(p, g[:, at:at + width])
            at += width

    _record("concat_cols", tuple(parts), out, bw)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack n tensors of shape (1, k) into an (n, k) matrix."""
    if not rows:
        raise ContractError("stack_rows needs at least one row")
    k = rows[0].shape[-1]
    for r in rows:
        if r.data.ndim != 2 or r.shape != (1, k):
            raise DimensionError(f"stack_rows expects (1, {k}) rows, got {r.shape}")
    out = Tensor(np.concatenate([r.data for r in rows], axis=0),
                 requires_grad=any(r.requires_grad for r in rows))

    def bw(g: np.ndarray) -> None:
        for i, r in enumerate(rows):
            _accumulate(r, g[i:i + 1, :])

    _record("stack_rows", tuple(rows), out, bw)
    return out


def stack_mats(mats: Sequence[Tensor]) -> Tensor:
    """Stack c matrices of shape (n, d) into a (c, n, d) block."""
    if not mats:
        raise ContractError("stack_mats needs at least one matrix")
    shape = mats[0].shape
    for m in mats:
        _require_2d("stack_mats", m)
        if m.shape != shape:
            raise DimensionError(f"stack_mats: shapes differ, {m.shape} vs {shape}")
    out = Tensor(np.stack([m.data for m in mats], axis=0),
                 requires_grad=any(m.requires_grad for m in mats))

    def bw(g: np.ndarray) -> None:
        for i, m in enumerate(mats):
            _accumulate(m, g[i])

    _record("stack_mats", tuple(mats), out, bw)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), requires_grad=x.requires_grad)

    def bw(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.data, float(g)))

    _record("sum_all", (x,), out, bw)
    return out


# ---------------------------------------------------------------------------
# Optimizer and verification
# ---------------------------------------------------------------------------

def sgd_step(parameters: Iterable[Tensor] | Mapping[str, Tensor], lr: float) -> None:
    """In-place p <- p - lr * grad for every parameter; clears gradients."""
    params = parameters.values() if isinstance(parameters, Mapping) else parameters
    params = list(params)
    for p in params:
        if p.grad is None:
            raise StateError("sgd_step: parameter has no gradient (run backward first)")
    for p in params:
        p.data -= lr * p.grad
        p.grad = None


def fd_gradient(f: Callable[[], float], tensors: Sequence[Tensor],
                h: float = 1e-6) -> list[np.ndarray]:
    """Central finite-difference gradients of ``f()`` w.r.t. each tensor.

    ``f`` must be a pure function of the tensors' current data. This is the
    independent oracle used to verify every analytic gradient.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(f())
            flat[i] = keep - h
            down = float(f())
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads
