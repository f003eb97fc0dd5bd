"""Parameter containers and initializers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import gru_cell
from .tape import Parameter, get_default_dtype


def init_linear(out_dim, in_dim, rng, name=None, bound=None):
    """Weight of shape (out_dim, in_dim) drawn from U(-1/sqrt(in), 1/sqrt(in))."""
    if bound is None:
        bound = 1.0 / np.sqrt(in_dim)
    data = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return Parameter(data.astype(get_default_dtype()), name=name)


@dataclass
class GruParams:
    """Update gate, reset gate and candidate blocks stacked row-wise in W, U, b."""

    W: Parameter
    U: Parameter
    b: Parameter

    @property
    def input_dim(self):
        return self.W.shape[1]

    @property
    def hidden_dim(self):
        return self.U.shape[1]

    def parameters(self):
        return [self.W, self.U, self.b]

    def __call__(self, x, h):
        return gru_cell(self.W, self.U, self.b, x, h)


def init_gru(input_dim, hidden_dim, rng, name="gru"):
    bound = 1.0 / np.sqrt(hidden_dim)
    dtype = get_default_dtype()
    W = rng.uniform(-bound, bound, size=(3 * hidden_dim, input_dim)).astype(dtype)
    U = rng.uniform(-bound, bound, size=(3 * hidden_dim, hidden_dim)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(3 * hidden_dim,)).astype(dtype)
    return GruParams(Parameter(W, name=f"{name}.W"), Parameter(U, name=f"{name}.U"), Parameter(b, name=f"{name}.b"))
