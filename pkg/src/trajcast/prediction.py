"""Trajectory prediction network: attention gate, LSTM encoder/decoder, variety loss.

Agents are rows. The encoder and decoder share one input layout,
``[e_p, v, q]``: displacement embedding, environment embedding and the
attention-gated interaction feature. LSTM states are kept packed as
``[h | c]`` rows.
"""
from __future__ import annotations

import numpy as np

from .layers import Linear, Module
from .recurrent import LSTMCell, lstm_step_packed
from .tensor import (DimensionError, Tensor, concat, mul, sigmoid, slice_cols, square, sub, take_rows,
                     total, zeros)


class PredictionNet(Module):
    """Attention, displacement embedding, output head and noise merge.

    The two LSTMs are held here for convenience but are registered as
    top-level children of the full model (``enc_lstm.*``, ``dec_lstm.*``).
    """

    def __init__(self, rng: np.random.Generator, fst_dim: int = 256, embed_dim: int = 64,
                 env_dim: int = 64, hidden: int = 64, noise_dim: int = 16):
        super().__init__()
        self.fst_dim, self.hidden, self.noise_dim = fst_dim, hidden, noise_dim
        self.attn = self.add_child("attn", Linear(2, fst_dim, rng))
        self.disp = self.add_child("disp", Linear(2, embed_dim, rng))
        self.head = self.add_child("head", Linear(hidden, 2, rng))
        self.noise = self.add_child("noise", Linear(hidden + noise_dim, hidden, rng))
        n_in = embed_dim + env_dim + fst_dim
        self.enc_lstm = LSTMCell(n_in, hidden, rng)
        self.dec_lstm = LSTMCell(n_in, hidden, rng)

    def attention(self, positions: Tensor, fst: Tensor) -> Tensor:
        """``q = fst * sigmoid(W_c p + b_c)`` row by row."""
        if fst.shape != (positions.shape[0], self.fst_dim):
            raise DimensionError(f"fst {fst.shape} does not match ({positions.shape[0]}, {self.fst_dim})")
        return mul(fst, sigmoid(self.attn(positions)))

    def displacement(self, p_now: Tensor, p_prev: Tensor | None = None) -> Tensor:
        """Embedding of ``p_now - p_prev``; a missing previous position means zero displacement."""
        d = zeros(*p_now.shape) if p_prev is None else sub(p_now, p_prev)
        return self.disp(d)

    def hidden_of(self, hc: Tensor) -> Tensor:
        return slice_cols(hc, 0, self.hidden)

    def encode_step(self, hc: Tensor, e_p: Tensor, v: Tensor, q: Tensor) -> Tensor:
        return lstm_step_packed(self.enc_lstm, hc, concat([e_p, v, q], axis=1))

    def init_decoder(self, h_e: Tensor, z: Tensor) -> Tensor:
        """Decoder state from the last encoder hidden state and noise; the cell state starts at zero."""
        if z.shape != (h_e.shape[0], self.noise_dim):
            raise DimensionError(f"noise {z.shape} does not match ({h_e.shape[0]}, {self.noise_dim})")
        h_d = self.noise(concat([h_e, z], axis=1))
        return concat([h_d, zeros(h_e.shape[0], self.hidden)], axis=1)

    def decode_step(self, hc: Tensor, e_p: Tensor, v: Tensor, q: Tensor,
                    p_now: Tensor) -> tuple[Tensor, Tensor]:
        """One decoder step; returns the new packed state and the next position."""
        hc = lstm_step_packed(self.dec_lstm, hc, concat([e_p, v, q], axis=1))
        delta = self.head(self.hidden_of(hc))
        return hc, p_now + delta


# --- variety loss ----------------------------------------------------------------

def modality_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Summed squared error per (modality, agent): ``pred [H, N, T, 2]``, ``truth [N, T, 2]``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape[1:] != truth.shape:
        raise ValueError(f"prediction {pred.shape[1:]} and truth {truth.shape} differ")
    return ((pred - truth[None]) ** 2).sum(axis=(2, 3))


def select_winners(errors: np.ndarray, scenario_of_agent: np.ndarray, targets: np.ndarray,
                   mode: str = "scene") -> np.ndarray:
    """Winning modality for each agent (losers get no gradient).

    ``errors`` is ``[H, N]``. In ``scene`` mode all agents of a scenario share
    the modality minimising their summed error; in ``agent`` mode each agent
    picks its own. Ties go to the lowest modality index.
    """
    if mode not in ("scene", "agent"):
        raise ValueError(f"variety_min must be 'scene' or 'agent', got {mode!r}")
    err = np.where(targets[None, :], errors, 0.0)
    if mode == "agent":
        return np.argmin(err, axis=0)
    winners = np.zeros(err.shape[1], dtype=np.intp)
    for b in np.unique(scenario_of_agent):
        rows = scenario_of_agent == b
        winners[rows] = int(np.argmin(err[:, rows].sum(axis=1)))
    return winners


def variety_loss(pred: Tensor, truth: np.ndarray, modalities: int, scenario_of_agent=None,
                 targets=None, mode: str = "scene") -> tuple[Tensor, np.ndarray]:
    """Min-over-modalities squared error.

    ``pred`` is ``[H*N, 2T]`` with row ``h*N + j`` holding agent ``j`` under
    modality ``h`` as ``x1, y1, x2, y2, ...``; ``truth`` is ``[N, T, 2]``.
    Each scenario contributes ``min_h sum_j sum_t |p_hat - p|^2 / (N_s T)``
    where ``N_s`` counts its scored agents; scenarios are summed. Only the
    winning rows enter the graph, so other modalities receive exactly zero
    gradient. Returns the loss and the winning modality per agent.
    """
    truth = np.asarray(truth, dtype=np.float64)
    n, t_len = truth.shape[0], truth.shape[1]
    h = int(modalities)
    if h < 1:
        raise ValueError("need at least one modality")
    if pred.shape != (h * n, 2 * t_len):
        raise ValueError(f"prediction {pred.shape} does not match {h} x {n} agents x {t_len} steps")
    scen = np.zeros(n, dtype=np.intp) if scenario_of_agent is None else np.asarray(scenario_of_agent)
    tgt = np.ones(n, dtype=bool) if targets is None else np.asarray(targets, dtype=bool)
    if np.isnan(truth[tgt]).any():
        raise ValueError("scored agents need complete ground truth")
    errors = modality_errors(pred.data.reshape(h, n, t_len, 2), np.where(np.isnan(truth), 0.0, truth))
    winners = select_winners(errors, scen, tgt, mode)
    agents = np.nonzero(tgt)[0]
    if agents.size == 0:
        return zeros(1, 1), winners
    counts = {b: int(np.sum(tgt & (scen == b))) for b in np.unique(scen[tgt])}
    weight = np.array([1.0 / (counts[scen[j]] * t_len) for j in agents])
    rows = winners[agents] * n + agents
    diff = sub(take_rows(pred, rows), Tensor(truth[agents].reshape(agents.size, 2 * t_len)))
    w = Tensor(np.repeat(weight[:, None], 2 * t_len, axis=1))
    return total(mul(square(diff), w)), winners
