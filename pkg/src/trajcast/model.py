"""The full forecaster: interaction net + environment net + prediction net.

A batch of scenarios is packed into agent rows. Once decoding starts every
agent is replicated per modality, row ``h*A + a`` holding agent ``a`` under
modality ``h``, and pooling groups become (modality, scenario) pairs, so
one pass over the rows serves the whole batch.

Time line for a scenario with ``t_obs`` observed frames:

* the interaction net runs once per frame ``t = 1 .. t_pred-1``; its
  tracking feature at ``t`` pools the hidden states of frame ``t-1``
  (encoder states up to ``t_obs``, decoder states afterwards, zero at ``t=1``);
* the encoder consumes frames ``1 .. t_obs``;
* the decoder starts from the noise-merged encoder state and makes one step
  for each ``t = t_obs .. t_pred-1``, emitting the position at ``t+1``; its
  first step sees the same inputs as the last encoder step.

With the ego-trajectory feature on and a plan available, the ego's decoded
positions are replaced by its plan; otherwise the ego is rolled out like
any other agent.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Scenario, scenario_arrays
from .environment import ConvEncoder, encode_map, roi_features
from .interaction import InteractionNet, Toggles, masked
from .layers import Linear, Module
from .maps import RasterConfig, SemanticImage, rasterize
from .prediction import PredictionNet, variety_loss
from .tensor import Tensor, add, concat, mul, segment_max, take_rows, zeros


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    gru_hidden: int = 128
    lstm_hidden: int = 64
    noise_dim: int = 16
    conv_widths: tuple[int, ...] = (8, 16, 32)
    raster: RasterConfig = field(default_factory=RasterConfig)
    roi_radius: float = 20.0
    roi_bins: int = 3
    roi_sampling: int = 1
    include_ego_in_pooling: bool = True
    coordinate_frame: str = "relative"      # or "world"

    def __post_init__(self):
        if self.coordinate_frame not in ("relative", "world"):
            raise ValueError(f"coordinate_frame must be 'relative' or 'world', got {self.coordinate_frame!r}")
        if min(self.embed_dim, self.gru_hidden, self.lstm_hidden, self.noise_dim, self.roi_bins) < 1:
            raise ValueError("all sizes must be positive")

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        """Tiny sizes for gradient checks and fast tests."""
        base = dict(embed_dim=4, gru_hidden=5, lstm_hidden=3, noise_dim=2, conv_widths=(2, 2, 2),
                    raster=RasterConfig(height=32, width=32, extent_y=40.0, extent_x=40.0),
                    roi_radius=6.0, roi_bins=2)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "raster"}
        d["conv_widths"] = list(self.conv_widths)
        r = self.raster
        d["raster"] = dict(height=r.height, width=r.width, extent_y=r.extent_y, extent_x=r.extent_x,
                           half_width=r.half_width, channels=r.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "raster" in d:
            d["raster"] = RasterConfig(**d["raster"])
        if "conv_widths" in d:
            d["conv_widths"] = tuple(d["conv_widths"])
        return cls(**d)


# --- packing ---------------------------------------------------------------------

@dataclass
class ScenePack:
    """One scenario as arrays in the model's working frame (ego first when present)."""
    scenario_id: str
    agent_ids: np.ndarray       # [N]
    observed: np.ndarray        # [N, t_obs, 2]
    future: np.ndarray          # [N, T, 2], NaN where unknown
    targets: np.ndarray         # [N] bool
    has_ego: bool
    plan: np.ndarray | None     # [T, 2]
    shift: np.ndarray           # working = scenario frame - shift
    image: SemanticImage | None
    t_obs: int
    t_pred: int


def prepare(s: Scenario, config: ModelConfig, with_image: bool = True) -> ScenePack:
    arr = scenario_arrays(s)
    order = np.arange(len(arr.agent_ids))
    if arr.ego_index is not None:
        order = np.concatenate([[arr.ego_index], np.delete(order, arr.ego_index)])
    obs = arr.observed[order]
    center = obs[0, -1] if arr.ego_index is not None else obs[:, -1].mean(axis=0)
    shift = center.copy() if config.coordinate_frame == "relative" else np.zeros(2)
    image = None
    if with_image:
        hd_map = None if s.hd_map is None else s.hd_map.translated(-shift)
        image = rasterize(hd_map, center - shift, config.raster)
    plan = None if (arr.ego_index is None or s.ego_plan is None) else np.asarray(s.ego_plan) - shift
    return ScenePack(s.scenario_id, arr.agent_ids[order], obs - shift, arr.future[order] - shift,
                     arr.targets[order], arr.ego_index is not None, plan, shift, image, s.t_obs, s.t_pred)


@dataclass
class Batch:
    packs: list[ScenePack]
    t_obs: int
    t_pred: int
    offsets: np.ndarray         # [B+1] first agent row of each scenario
    scenario_of_row: np.ndarray  # [A]
    observed: np.ndarray        # [A, t_obs, 2]
    future: np.ndarray          # [A, T, 2]
    targets: np.ndarray         # [A]
    has_ego: np.ndarray         # [B]
    has_plan: np.ndarray        # [B]
    ego_path: np.ndarray        # [B, t_pred, 2] observed ego + plan (zeros where unknown)

    @property
    def n_scenarios(self) -> int:
        return len(self.packs)

    @property
    def n_agents(self) -> int:
        return int(self.offsets[-1])

    @property
    def horizon(self) -> int:
        return self.t_pred - self.t_obs


def collate(packs: Sequence[ScenePack]) -> Batch:
    packs = list(packs)
    if not packs:
        raise ValueError("empty batch")
    t_obs, t_pred = packs[0].t_obs, packs[0].t_pred
    if any(p.t_obs != t_obs or p.t_pred != t_pred for p in packs):
        raise ValueError("all scenarios in a batch need the same t_obs and t_pred")
    counts = np.array([len(p.agent_ids) for p in packs])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    b = len(packs)
    ego_path = np.zeros((b, t_pred, 2))
    has_plan = np.zeros(b, dtype=bool)
    for k, p in enumerate(packs):
        if p.has_ego:
            ego_path[k, :t_obs] = p.observed[0]
            if p.plan is not None:
                ego_path[k, t_obs:] = p.plan
                has_plan[k] = True
    return Batch(packs, t_obs, t_pred, offsets, np.repeat(np.arange(b), counts),
                 np.concatenate([p.observed for p in packs]), np.concatenate([p.future for p in packs]),
                 np.concatenate([p.targets for p in packs]), np.array([p.has_ego for p in packs]),
                 has_plan, ego_path)


# --- model -----------------------------------------------------------------------

@dataclass
class Rollout:
    batch: Batch
    modalities: int
    steps: list[Tensor]          # T tensors [H*A, 2], working frame
    z: Tensor

    def stacked(self) -> Tensor:
        """``[H*A, 2T]`` rows ``x1, y1, x2, y2, ...``."""
        return concat(self.steps, axis=1)

    def trajectories(self) -> np.ndarray:
        """``[H, A, T, 2]`` predicted positions in the working frame."""
        a, h = self.batch.n_agents, self.modalities
        return np.stack([s.data for s in self.steps], axis=1).reshape(h, a, len(self.steps), 2)


class _Groups:
    """Pooling layout for rows replicated ``reps`` times."""

    def __init__(self, batch: Batch, reps: int, include_ego: bool):
        a, b = batch.n_agents, batch.n_scenarios
        first = batch.offsets[:-1]
        counts = np.diff(batch.offsets)
        skip = (~include_ego) & batch.has_ego & (counts > 1)
        pool_rows, starts = [], []
        for h in range(reps):
            for k in range(b):
                lo = first[k] + (1 if skip[k] else 0)
                starts.append(len(pool_rows))
                pool_rows.extend(range(h * a + lo, h * a + first[k] + counts[k]))
        self.pool_rows = np.array(pool_rows, dtype=np.intp)
        self.identity = self.pool_rows.size == reps * a
        self.starts = np.array(starts, dtype=np.intp)
        self.group_of_row = (np.arange(reps)[:, None] * b + batch.scenario_of_row[None, :]).reshape(-1)
        self.ego_row = np.concatenate([h * a + first for h in range(reps)])
        self.scenario = np.tile(np.arange(b), reps)
        self.n = reps * b

    def pooled(self, x: Tensor) -> Tensor:
        return x if self.identity else take_rows(x, self.pool_rows)


class TrajectoryNet(Module):
    def __init__(self, config: ModelConfig | None = None, seed: int = 0, toggles: Toggles | None = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        self.toggles = toggles or Toggles()
        rng = np.random.default_rng(seed)
        d = cfg.embed_dim
        self.ain = self.add_child("ain", InteractionNet(rng, d, cfg.lstm_hidden, cfg.gru_hidden))
        self.env_cnn = self.add_child("env_cnn", ConvEncoder(rng, cfg.raster.channels, cfg.conv_widths))
        roi_width = cfg.conv_widths[-1] * cfg.roi_bins ** 2
        self.env_embed = self.add_child("env_embed", Linear(roi_width, d, rng))
        self.pred = self.add_child("pred", PredictionNet(rng, self.ain.fst_dim, d, d, cfg.lstm_hidden,
                                                         cfg.noise_dim))
        self.add_child("enc_lstm", self.pred.enc_lstm)
        self.add_child("dec_lstm", self.pred.dec_lstm)

    # feature helpers --------------------------------------------------------------

    def _env(self, fm, positions: Tensor, scen_index: np.ndarray) -> Tensor:
        if fm is None:
            return zeros(positions.shape[0], self.config.embed_dim)
        cfg = self.config
        g = roi_features(fm, positions, cfg.roi_radius, cfg.roi_bins, cfg.roi_sampling, batch_index=scen_index)
        return self.env_embed(g)

    def _ain_step(self, batch: Batch, groups: _Groups, t: int, positions: Tensor, hidden_prev: Tensor,
                  ego_prev: Tensor | None, h_gru: Tensor, plan_feats: Tensor | None) -> tuple[Tensor, Tensor, Tensor]:
        """Interaction features at frame ``t``; returns ``(fst per group, GRU state, ego positions)``."""
        tg, ain = self.toggles, self.ain
        o = ain.position_feature(groups.pooled(positions), groups.starts) if tg.PF else ain.zero_block(groups.n)
        r = ain.tracking_feature(groups.pooled(hidden_prev), groups.starts) if tg.TF else ain.zero_block(groups.n)
        ego_now = take_rows(positions, groups.ego_row)
        if tg.EMF:
            m = masked(ain.ego_motion_feature(ego_now, ego_prev), batch.has_ego[groups.scenario])
        else:
            m = ain.zero_block(groups.n)
        st, h_gru = ain.fuse(o, r, m, h_gru)
        f = plan_feats if plan_feats is not None else ain.zero_block(groups.n)
        return ain.assemble_fst(f, st), h_gru, ego_now

    # rollout ------------------------------------------------------------------------

    def rollout(self, batch: Batch, modalities: int = 1, z: Tensor | np.ndarray | None = None,
                rng: np.random.Generator | None = None) -> Rollout:
        cfg, tg, pred = self.config, self.toggles, self.pred
        h_mod = int(modalities)
        if h_mod < 1:
            raise ValueError("need at least one modality")
        a, b = batch.n_agents, batch.n_scenarios
        t_obs, t_pred = batch.t_obs, batch.t_pred
        if z is None:
            rng = rng or np.random.default_rng(0)
            z = rng.standard_normal((h_mod * a, cfg.noise_dim))
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))

        fm = None
        if tg.EF:
            fm = encode_map([p.image for p in batch.packs], self.env_cnn)
        plan_rows = None
        if tg.ETF:
            plan_rows = self.ain.plan(Tensor(batch.ego_path.reshape(-1, 2)))

        def plan_feature(t: int, reps: int) -> Tensor | None:
            if plan_rows is None:
                return None
            rows = (np.arange(b)[:, None] * t_pred + np.arange(t, t_pred)[None, :]).reshape(-1)
            f = masked(segment_max(take_rows(plan_rows, rows), np.arange(b) * (t_pred - t)), batch.has_plan)
            return f if reps == 1 else take_rows(f, np.tile(np.arange(b), reps))

        # encoder over observed frames
        g1 = _Groups(batch, 1, cfg.include_ego_in_pooling)
        h_gru = self.ain.initial_state(b)
        hc = zeros(a, 2 * cfg.lstm_hidden)
        hidden_prev = zeros(a, cfg.lstm_hidden)
        p_prev = ego_prev = None
        for t in range(1, t_obs + 1):
            p_t = Tensor(batch.observed[:, t - 1])
            fst, h_gru, ego_prev = self._ain_step(batch, g1, t, p_t, hidden_prev, ego_prev, h_gru,
                                                  plan_feature(t, 1))
            q = pred.attention(p_t, take_rows(fst, batch.scenario_of_row))
            v = self._env(fm, p_t, batch.scenario_of_row)
            e_p = pred.displacement(p_t, p_prev)
            hc = pred.encode_step(hc, e_p, v, q)
            hidden_prev = pred.hidden_of(hc)
            p_prev = p_t
        h_e = hidden_prev

        # decoder, one row per (modality, agent)
        rep = np.tile(np.arange(a), h_mod)
        gh = _Groups(batch, h_mod, cfg.include_ego_in_pooling)
        scen_rep = np.tile(batch.scenario_of_row, h_mod)
        h_e_rep = take_rows(h_e, rep)
        inputs = (take_rows(e_p, rep), take_rows(v, rep), take_rows(q, rep))
        h_gru = take_rows(h_gru, np.tile(np.arange(b), h_mod))
        ego_prev = take_rows(ego_prev, np.tile(np.arange(b), h_mod))
        hc = pred.init_decoder(h_e_rep, z)
        p_cur = Tensor(np.tile(batch.observed[:, t_obs - 1], (h_mod, 1)))
        p_before = Tensor(np.tile(batch.observed[:, t_obs - 2], (h_mod, 1))) if t_obs > 1 else None
        force = None
        if tg.ETF and batch.has_plan.any():
            plan_groups = np.nonzero(batch.has_plan[gh.scenario])[0]
            ego_plan_rows = gh.ego_row[plan_groups]
            keep = np.ones((h_mod * a, 2))
            keep[ego_plan_rows] = 0.0
            force = Tensor(keep)
        steps = []
        hidden_prev = h_e_rep
        for t in range(t_obs, t_pred):
            if t > t_obs:
                fst, h_gru, ego_prev = self._ain_step(batch, gh, t, p_cur, hidden_prev, ego_prev, h_gru,
                                                      plan_feature(t, h_mod))
                q = pred.attention(p_cur, take_rows(fst, gh.group_of_row))
                v = self._env(fm, p_cur, scen_rep)
                e_p = pred.displacement(p_cur, p_before)
                inputs = (e_p, v, q)
            hc, p_next = pred.decode_step(hc, *inputs, p_cur)
            if force is not None:
                plan_now = np.zeros((h_mod * a, 2))
                plan_now[ego_plan_rows] = batch.ego_path[gh.scenario[plan_groups], t]
                p_next = add(mul(p_next, force), Tensor(plan_now))
            steps.append(p_next)
            hidden_prev = pred.hidden_of(hc)
            p_before, p_cur = p_cur, p_next
        return Rollout(batch, h_mod, steps, z)

    # convenience --------------------------------------------------------------------

    def loss(self, batch: Batch, modalities: int = 1, z=None, rng=None,
             variety_min: str = "scene") -> tuple[Tensor, np.ndarray, Rollout]:
        ro = self.rollout(batch, modalities, z=z, rng=rng)
        loss, winners = variety_loss(ro.stacked(), batch.future, modalities, batch.scenario_of_row,
                                     batch.targets, variety_min)
        return loss, winners, ro


# --- inference -------------------------------------------------------------------

@dataclass
class PredictionSet:
    """H predicted trajectories per agent, in the scenario's own frame."""
    scenario_id: str
    agent_ids: np.ndarray        # [N]
    trajectories: np.ndarray     # [H, N, T, 2]
    truth: np.ndarray            # [N, T, 2], NaN where unknown
    targets: np.ndarray          # [N] agents that are scored
    t_obs: int

    @property
    def modalities(self) -> int:
        return self.trajectories.shape[0]

    def scored(self) -> tuple[np.ndarray, np.ndarray]:
        return self.trajectories[:, self.targets], self.truth[self.targets]

    def squared_errors(self) -> np.ndarray:
        """``[H, N]`` summed squared error per modality and scored agent."""
        p, t = self.scored()
        return ((p - t[None]) ** 2).sum(axis=(2, 3))


def scenario_noise(seed: int, index: int, modalities: int, agents: int, dim: int) -> np.ndarray:
    """Evaluation noise ``[H, N, d_z]`` for one scenario, independent of batching."""
    return np.random.default_rng([seed, index, 7]).standard_normal((modalities, agents, dim))


def batch_noise(packs: Sequence[ScenePack], indices: Sequence[int], seed: int, modalities: int,
                dim: int) -> np.ndarray:
    per = [scenario_noise(seed, i, modalities, len(p.agent_ids), dim) for p, i in zip(packs, indices)]
    return np.concatenate(per, axis=1).reshape(-1, dim)


def predict(net: TrajectoryNet, packs: Sequence[ScenePack], modalities: int = 1, seed: int = 0,
            batch_size: int = 8, noise: str = "gaussian") -> list[PredictionSet]:
    """Roll the model out on every scenario with fixed per-scenario noise.

    ``noise="zero"`` feeds ``z = 0`` (a deterministic single-path decoder).
    """
    if noise not in ("gaussian", "zero"):
        raise ValueError(f"noise must be 'gaussian' or 'zero', got {noise!r}")
    out: list[PredictionSet] = []
    packs = list(packs)
    for lo in range(0, len(packs), batch_size):
        chunk = packs[lo:lo + batch_size]
        batch = collate(chunk)
        z = batch_noise(chunk, range(lo, lo + len(chunk)), seed, modalities, net.config.noise_dim)
        if noise == "zero":
            z = np.zeros_like(z)
        traj = net.rollout(batch, modalities, z=z).trajectories()
        for k, p in enumerate(chunk):
            rows = slice(batch.offsets[k], batch.offsets[k + 1])
            out.append(PredictionSet(p.scenario_id, p.agent_ids, traj[:, rows] + p.shift, p.future + p.shift,
                                     p.targets, p.t_obs))
    return out


def write_predictions_csv(path: str | Path, sets: Sequence[PredictionSet]) -> None:
    """One row per predicted point, ordered by scenario, agent, modality, frame."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", "agent_id", "modality", "t", "x", "y"])
        for ps in sorted(sets, key=lambda s: s.scenario_id):
            for j in np.argsort(ps.agent_ids, kind="stable"):
                for h in range(ps.modalities):
                    for k, (x, y) in enumerate(ps.trajectories[h, j]):
                        w.writerow([ps.scenario_id, int(ps.agent_ids[j]), h, ps.t_obs + 1 + k, repr(float(x)),
                                    repr(float(y))])


def read_predictions_csv(path: str | Path) -> dict[tuple[str, int, int], np.ndarray]:
    """``(scenario_id, agent_id, modality) -> [T, 2]``."""
    acc: dict[tuple[str, int, int], list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["scenario_id"], int(row["agent_id"]), int(row["modality"]))
            acc.setdefault(key, []).append((int(row["t"]), float(row["x"]), float(row["y"])))
    return {k: np.array([(x, y) for _, x, y in sorted(v)]) for k, v in acc.items()}
