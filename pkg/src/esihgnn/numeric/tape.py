"""Tensors, trainable parameters and the reverse-mode computation record."""

from __future__ import annotations

import contextlib
import os
import threading

import numpy as np

from ..errors import NumericalError, ShapeError, UsageError

_DTYPES = {"float32": np.float32, "float64": np.float64}


def _initial_dtype():
    return np.float64 if os.environ.get("ESIHGNN_DETERMINISTIC") == "1" else np.float32


_state = threading.local()
_default_dtype = _initial_dtype()


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    """Select the float width used for new parameters and constants."""
    global _default_dtype
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise UsageError(f"unknown dtype {dtype!r}")
        dtype = _DTYPES[dtype]
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise UsageError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """An n-dimensional array that can participate in a recorded computation.

    `data` is a numpy array whose shape never changes after creation.
    `requires_grad` marks tensors whose gradient must be tracked.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype, copy=True)
        arr.flags.writeable = True
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}{label})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def sum(self):
        from . import ops
        return ops.sum(self)


def _not_scalar(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """A trainable tensor; always requires grad."""

    __slots__ = ()

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)

    def zero_grad(self):
        self.grad = None


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _Record:
    __slots__ = ("op", "out", "parents", "vjp")

    def __init__(self, op, out, parents, vjp):
        self.op = op
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations for one forward/backward pass.

    Use as a context manager while building the computation, then call
    `backward(loss)`. A tape belongs to one thread; nested tapes are allowed
    and only the innermost one records.
    """

    def __init__(self):
        self.records = []
        self.watched = {}
        self._outputs = set()

    def __enter__(self):
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tape exited out of order")
        stack.pop()
        return False

    def watch(self, *params):
        for p in params:
            if isinstance(p, (list, tuple)):
                self.watch(*p)
                continue
            self.watched[id(p)] = p

    def record(self, op, out, parents, vjp):
        self.records.append(_Record(op, out, parents, vjp))
        self._outputs.add(id(out))
        for p in parents:
            if isinstance(p, Parameter):
                self.watched.setdefault(id(p), p)

    def __len__(self):
        return len(self.records)

    def backward(self, loss, accumulate=True):
        """Propagate d(loss)/d(.) to every watched parameter.

        Returns a dict mapping each parameter to its gradient for this tape.
        With `accumulate`, gradients are also summed into `param.grad`.
        Parameters are never modified.
        """
        if not isinstance(loss, Tensor) or id(loss) not in self._outputs:
            raise UsageError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            parent_grads = rec.vjp(g)
            for parent, pg in zip(rec.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        result = {}
        for key, p in self.watched.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(p.data)
            else:
                g = np.asarray(g, dtype=p.data.dtype).reshape(p.data.shape)
            result[p] = g
            if accumulate:
                p.grad = g.copy() if p.grad is None else p.grad + g
        return result


def backward(tape, loss):
    return tape.backward(loss)


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_record():
    """Temporarily suspend recording (used by evaluation and finite differences)."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def emit(op, out, parents, vjp):
    """Wrap a forward result and record it on the active tape if needed."""
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite value produced by {op}")
    needs = any(p.requires_grad for p in parents)
    t = Tensor._wrap(out, needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.record(op, t, parents, vjp)
        else:
            t.requires_grad = False
    return t
