"""LSTM and GRU cells over row batches.

States are ``[n x hidden]`` so a whole set of agents steps at once; a
single sequence is simply ``n = 1``.

LSTM gate layout in the fused weights is ``[input, forget, candidate, output]``.
GRU layout is ``[reset, update, candidate]`` with
``h' = (1 - u) * h + u * n`` so a saturated update gate copies the candidate.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .layers import Module
from .tensor import DimensionError, Tensor, concat, gru_cell, lstm_cell, slice_cols, zeros


class LSTMCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 forget_bias: float = 1.0):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        k = 1.0 / np.sqrt(hidden_size)
        h = hidden_size
        self.w_ih = self.add_param("w_ih", rng.uniform(-k, k, (4 * h, input_size)))
        self.w_hh = self.add_param("w_hh", rng.uniform(-k, k, (4 * h, h)))
        b = rng.uniform(-k, k, (1, 4 * h))
        b[0, h:2 * h] = forget_bias
        self.bias = self.add_param("bias", b)

    def initial_state(self, n: int = 1) -> tuple[Tensor, Tensor]:
        return zeros(n, self.hidden_size), zeros(n, self.hidden_size)

    def __call__(self, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_step(self, h_prev, c_prev, x)


class GRUCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        k = 1.0 / np.sqrt(hidden_size)
        h = hidden_size
        self.w_ih = self.add_param("w_ih", rng.uniform(-k, k, (3 * h, input_size)))
        self.w_hh = self.add_param("w_hh", rng.uniform(-k, k, (3 * h, h)))
        self.b_ih = self.add_param("b_ih", rng.uniform(-k, k, (1, 3 * h)))
        self.b_hh = self.add_param("b_hh", rng.uniform(-k, k, (1, 3 * h)))

    def initial_state(self, n: int = 1) -> Tensor:
        return zeros(n, self.hidden_size)

    def __call__(self, h_prev: Tensor, x: Tensor) -> Tensor:
        return gru_step(self, h_prev, x)


def _check(cell, x: Tensor, *states: Tensor) -> None:
    if x.data.ndim != 2 or x.shape[1] != cell.input_size:
        raise DimensionError(f"input {x.shape} does not match input size {cell.input_size}")
    for s in states:
        if s.shape != (x.shape[0], cell.hidden_size):
            raise DimensionError(f"state {s.shape} does not match ({x.shape[0]}, {cell.hidden_size})")


def lstm_step(cell: LSTMCell, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    _check(cell, x, h_prev, c_prev)
    hc = lstm_cell(x, concat([h_prev, c_prev], axis=1), cell.w_ih, cell.w_hh, cell.bias)
    n = cell.hidden_size
    return slice_cols(hc, 0, n), slice_cols(hc, n, 2 * n)


def lstm_step_packed(cell: LSTMCell, hc: Tensor, x: Tensor) -> Tensor:
    """Same update on a packed ``[h | c]`` state, for callers that keep it packed."""
    return lstm_cell(x, hc, cell.w_ih, cell.w_hh, cell.bias)


def gru_step(cell: GRUCell, h_prev: Tensor, x: Tensor) -> Tensor:
    _check(cell, x, h_prev)
    return gru_cell(x, h_prev, cell.w_ih, cell.w_hh, cell.b_ih, cell.b_hh)


def lstm_unroll(cell: LSTMCell, xs: Sequence[Tensor], h0: Tensor | None = None,
                c0: Tensor | None = None) -> tuple[list[Tensor], Tensor]:
    """Run ``cell`` over ``xs``; returns every hidden state and the final cell state."""
    if not xs:
        raise ValueError("empty input sequence")
    if h0 is None or c0 is None:
        h0, c0 = cell.initial_state(xs[0].shape[0])
    h, c = h0, c0
    hs = []
    for x in xs:
        h, c = lstm_step(cell, h, c, x)
        hs.append(h)
    return hs, c


def gru_unroll(cell: GRUCell, xs: Sequence[Tensor], h0: Tensor | None = None) -> list[Tensor]:
    if not xs:
        raise ValueError("empty input sequence")
    h = cell.initial_state(xs[0].shape[0]) if h0 is None else h0
    hs = []
    for x in xs:
        h = gru_step(cell, h, x)
        hs.append(h)
    return hs
