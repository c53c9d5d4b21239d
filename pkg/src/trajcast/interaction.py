"""Agent interaction network (AIN).

Everything here works on *groups*: a group is the set of agents that share
one pooled feature, i.e. one scenario (times one modality once decoding
starts). Agent rows of a group are contiguous and ``starts`` gives the
first row of each group, so a whole batch is pooled with one
``segment_max``.

Per group and time step the AIN produces

* ``o`` -- max over agents of an embedding of their positions,
* ``r`` -- max over agents of an embedding of their recurrent hidden state,
* ``m`` -- an embedding of the ego displacement since the previous step,
* ``st`` -- a projection of a GRU run over ``[o, r, m]``,
* ``f`` -- max over the ego's remaining future waypoints of their embedding,

and ``fst = [f, st]``. Features switched off by :class:`Toggles` become zero
blocks of the same width, so shapes (and checkpoints) never change.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import Linear, Module
from .recurrent import GRUCell, gru_step
from .tensor import DimensionError, Tensor, concat, mul, segment_max, zeros


@dataclass(frozen=True)
class Toggles:
    """Feature switches: position, tracking, ego motion, ego trajectory, environment."""
    PF: bool = True
    TF: bool = True
    EMF: bool = True
    ETF: bool = True
    EF: bool = True

    @classmethod
    def all_off(cls) -> "Toggles":
        return cls(False, False, False, False, False)

    def as_dict(self) -> dict[str, bool]:
        return asdict(self)

    def label(self) -> str:
        on = [k for k, v in self.as_dict().items() if v]
        return "+".join(on) if on else "none"


#: the six rows of the ablation table, in order
ABLATION_ROWS: tuple[tuple[str, Toggles], ...] = (
    ("Baseline", Toggles(False, False, False, False, False)),
    ("Our-v1", Toggles(True, False, False, False, False)),
    ("Our-v2", Toggles(True, True, False, False, False)),
    ("Our-v3", Toggles(True, True, True, False, False)),
    ("Our-v4", Toggles(True, True, True, True, False)),
    ("Our-full", Toggles(True, True, True, True, True)),
)


def _starts(starts, n_rows: int) -> np.ndarray:
    s = np.asarray([0] if starts is None else starts, dtype=np.intp)
    if n_rows < 1:
        raise ValueError("pooling needs at least one row")
    if s.size == 0 or s[0] != 0 or np.any(np.diff(s) <= 0) or s[-1] >= n_rows:
        raise ValueError("every pooled group needs at least one member")
    return s


class InteractionNet(Module):
    def __init__(self, rng: np.random.Generator, embed_dim: int = 64, hidden_dim: int = 64,
                 gru_hidden: int = 128):
        super().__init__()
        d = embed_dim
        self.embed_dim = d
        self.d_st = 3 * d
        self.pos = self.add_child("pos", Linear(2, d, rng))
        self.track = self.add_child("track", Linear(hidden_dim, d, rng))
        self.motion = self.add_child("motion", Linear(2, d, rng))
        self.gru = self.add_child("gru", GRUCell(3 * d, gru_hidden, rng))
        self.proj = self.add_child("proj", Linear(gru_hidden, self.d_st, rng))
        self.plan = self.add_child("plan", Linear(2, d, rng))

    @property
    def fst_dim(self) -> int:
        return self.embed_dim + self.d_st

    def initial_state(self, groups: int = 1) -> Tensor:
        return self.gru.initial_state(groups)

    def position_feature(self, positions: Tensor, starts=None) -> Tensor:
        """``[G, d_o]``: per-agent embedding of positions, max-pooled per group."""
        return segment_max(self.pos(positions), _starts(starts, positions.shape[0]))

    def tracking_feature(self, hidden: Tensor, starts=None) -> Tensor:
        """``[G, d_r]``: embedding of each agent's recurrent hidden state, max-pooled per group."""
        return segment_max(self.track(hidden), _starts(starts, hidden.shape[0]))

    def ego_motion_feature(self, p_now, p_prev=None) -> Tensor:
        """``[G, d_m]`` embedding of the ego displacement; no previous position means zero displacement."""
        now = p_now if isinstance(p_now, Tensor) else Tensor(np.reshape(p_now, (-1, 2)))
        if p_prev is None:
            disp = zeros(*now.shape)
        else:
            prev = p_prev if isinstance(p_prev, Tensor) else Tensor(np.reshape(p_prev, (-1, 2)))
            disp = now - prev
        return self.motion(disp)

    def fuse(self, o: Tensor, r: Tensor, m: Tensor, h_gru: Tensor) -> tuple[Tensor, Tensor]:
        """One GRU step on ``[o, r, m]``; returns ``(st, new GRU state)``."""
        d = self.embed_dim
        for name, x in (("o", o), ("r", r), ("m", m)):
            if x.data.ndim != 2 or x.shape[1] != d:
                raise DimensionError(f"{name} has shape {x.shape}, expected (*, {d})")
        h = gru_step(self.gru, h_gru, concat([o, r, m], axis=1))
        return self.proj(h), h

    def ego_plan_feature(self, waypoints: Tensor | np.ndarray, starts=None) -> Tensor:
        """``[G, d_f]``: embedding of the ego's remaining waypoints, max-pooled per group."""
        w = waypoints if isinstance(waypoints, Tensor) else Tensor(np.reshape(waypoints, (-1, 2)))
        if w.shape[0] == 0:
            raise ValueError("ego trajectory feature needs at least one remaining waypoint")
        return segment_max(self.plan(w), _starts(starts, w.shape[0]))

    def assemble_fst(self, f: Tensor, st: Tensor) -> Tensor:
        if f.shape[0] != st.shape[0]:
            raise DimensionError(f"f {f.shape} and st {st.shape} have different group counts")
        return concat([f, st], axis=1)

    def zero_block(self, groups: int) -> Tensor:
        return zeros(groups, self.embed_dim)


def masked(x: Tensor, keep: np.ndarray) -> Tensor:
    """Zero the rows of ``x`` where ``keep`` is false (gradient is zeroed too)."""
    keep = np.asarray(keep, dtype=bool)
    if keep.all():
        return x
    return mul(x, Tensor(np.repeat(keep[:, None].astype(np.float64), x.shape[1], axis=1)))
