"""Synthetic scenarios for desk-scale experiments.

Three templates:

``crossing_pedestrians``
    Two groups walking toward each other, integrated with a two-term social
    force (relaxation toward a desired velocity plus exponential pairwise
    repulsion).
``lane_following_vehicle``
    Vehicles moving at constant speed along one curved map centerline.
``ego_with_plan``
    An ego vehicle on a curved road with a known plan, vehicles on other
    lanes, and pedestrians crossing in front of the ego. Pedestrians repel
    each other and the vehicles; vehicles are kinematic.

Every scenario draws from its own generator seeded by ``(seed, index)``, so
output is bitwise reproducible and independent of generation order.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .data import AgentTrack, Scenario, translate
from .maps import HdMap

TEMPLATES = ("crossing_pedestrians", "lane_following_vehicle", "ego_with_plan")


@dataclass(frozen=True)
class SocialForceParams:
    relaxation_time: float = 0.5     # s
    repulsion: float = 2.0           # m/s^2 magnitude
    repulsion_range: float = 0.8     # m
    vehicle_repulsion: float = 4.0   # pedestrians pushed away from vehicles
    vehicle_range: float = 2.5
    max_speed: float = 3.0


@dataclass(frozen=True)
class SyntheticConfig:
    t_obs: int = 6
    t_pred: int = 12
    timestep: float = 0.4            # s between frames
    substeps: int = 8                # integration steps per frame
    n_pedestrians: int = 4
    n_vehicles: int = 2
    ped_speed: tuple[float, float] = (1.0, 1.6)
    vehicle_speed: tuple[float, float] = (3.0, 7.0)
    noise: float = 0.0               # position noise std, m
    world_offset: float = 0.0        # scenes are shifted by a random offset in [-v, v]^2
    social: SocialForceParams = SocialForceParams()

    def with_overrides(self, **kw) -> "SyntheticConfig":
        social_keys = {f.name for f in fields(SocialForceParams)}
        social = {k: kw.pop(k) for k in list(kw) if k in social_keys}
        cfg = replace(self, **kw)
        if social:
            cfg = replace(cfg, social=replace(cfg.social, **social))
        return cfg


# --- geometry helpers -------------------------------------------------------------

def arc_polyline(start, heading: float, curvature: float, length: float, step: float = 2.0) -> np.ndarray:
    """Points of a constant-curvature arc (a straight line when curvature is 0)."""
    n = max(2, int(np.ceil(length / step)) + 1)
    s = np.linspace(0.0, length, n)
    if abs(curvature) < 1e-12:
        x = start[0] + s * np.cos(heading)
        y = start[1] + s * np.sin(heading)
    else:
        r = 1.0 / curvature
        x = start[0] + r * (np.sin(heading + curvature * s) - np.sin(heading))
        y = start[1] - r * (np.cos(heading + curvature * s) - np.cos(heading))
    return np.stack([x, y], axis=1)


def polyline_point(line: np.ndarray, s) -> np.ndarray:
    """Position at arc length ``s`` along ``line`` (extrapolates linearly past the ends)."""
    seg = np.diff(line, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / seg_len[k]
    return line[k] + frac[:, None] * seg[k]


def polyline_length(line: np.ndarray) -> float:
    d = np.diff(line, axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


# --- social force --------------------------------------------------------------------

def social_force_rollout(x0, v0, v_des, n_frames: int, dt: float, substeps: int,
                         params: SocialForceParams, repellers=None) -> np.ndarray:
    """Integrate pedestrians with semi-implicit Euler; returns ``[n_frames, n, 2]``.

    Frame 0 is the initial position. ``repellers`` is an optional callable
    mapping time (s) to an ``[m, 2]`` array of moving obstacles that push
    pedestrians away but are not pushed back.
    """
    x = np.array(x0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    v_des = np.asarray(v_des, dtype=np.float64)
    n = x.shape[0]
    h = dt / substeps
    out = np.empty((n_frames, n, 2))
    out[0] = x
    for f in range(1, n_frames):
        for k in range(substeps):
            t = ((f - 1) * substeps + k) * h
            force = (v_des - v) / params.relaxation_time
            if n > 1 and params.repulsion != 0.0:
                diff = x[:, None, :] - x[None, :, :]
                dist = np.hypot(diff[..., 0], diff[..., 1])
                np.fill_diagonal(dist, np.inf)
                mag = params.repulsion * np.exp(-dist / params.repulsion_range)
                force += np.sum(mag[..., None] * diff / dist[..., None], axis=1)
            if repellers is not None and params.vehicle_repulsion != 0.0:
                obs = repellers(t)
                if len(obs):
                    diff = x[:, None, :] - obs[None, :, :]
                    dist = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), 1e-6)
                    mag = params.vehicle_repulsion * np.exp(-dist / params.vehicle_range)
                    force += np.sum(mag[..., None] * diff / dist[..., None], axis=1)
            v = v + h * force
            speed = np.hypot(v[:, 0], v[:, 1])
            over = speed > params.max_speed
            if np.any(over):
                v[over] *= (params.max_speed / speed[over])[:, None]
            x = x + h * v
        out[f] = x
    return out


# --- templates -------------------------------------------------------------------------

def _tracks_from_positions(pos: np.ndarray, first_id: int = 0) -> list[AgentTrack]:
    frames = np.arange(1, pos.shape[0] + 1)
    return [AgentTrack(first_id + i, frames, pos[:, i]) for i in range(pos.shape[1])]


def _crossing(rng: np.random.Generator, cfg: SyntheticConfig) -> Scenario:
    n = max(1, cfg.n_pedestrians)
    n_frames = cfg.t_pred
    duration = (n_frames - 1) * cfg.timestep
    heading = rng.uniform(0, 2 * np.pi)
    x0, v_des = [], []
    for i in range(n):
        direction = heading if i % 2 == 0 else heading + np.pi + rng.normal(0, 0.3)
        speed = rng.uniform(*cfg.ped_speed)
        u = np.array([np.cos(direction), np.sin(direction)])
        # groups start on opposite sides so paths meet mid-episode
        lateral = np.array([-u[1], u[0]]) * rng.uniform(-1.5, 1.5)
        start = -u * speed * duration / 2 + lateral + rng.normal(0, 0.3, 2)
        x0.append(start)
        v_des.append(u * speed)
    x0, v_des = np.array(x0), np.array(v_des)
    pos = social_force_rollout(x0, v_des.copy(), v_des, n_frames, cfg.timestep, cfg.substeps, cfg.social)
    if cfg.noise > 0:
        pos = pos + rng.normal(0, cfg.noise, pos.shape)
    return Scenario(tuple(_tracks_from_positions(pos)), cfg.t_obs, cfg.t_pred)


def _lane_following(rng: np.random.Generator, cfg: SyntheticConfig) -> Scenario:
    n = max(1, cfg.n_vehicles)
    heading = rng.uniform(0, 2 * np.pi)
    curvature = rng.uniform(-0.02, 0.02)
    line = arc_polyline((0.0, 0.0), heading, curvature, 200.0)
    t = np.arange(cfg.t_pred) * cfg.timestep
    pos = np.empty((cfg.t_pred, n, 2))
    for i in range(n):
        s0 = rng.uniform(10.0, 60.0)
        speed = rng.uniform(*cfg.vehicle_speed)
        pos[:, i] = polyline_point(line, s0 + speed * t)
    if cfg.noise > 0:
        pos = pos + rng.normal(0, cfg.noise, pos.shape)
    return Scenario(tuple(_tracks_from_positions(pos)), cfg.t_obs, cfg.t_pred, hd_map=HdMap((line,)))


def _ego_with_plan(rng: np.random.Generator, cfg: SyntheticConfig) -> Scenario:
    n_frames = cfg.t_pred
    dt = cfg.timestep
    t = np.arange(n_frames) * dt
    heading = rng.uniform(0, 2 * np.pi)
    main = arc_polyline((0.0, 0.0), heading, rng.uniform(-0.015, 0.015), 160.0)
    lanes = [main]
    # opposite-direction lane 3.5 m to the left of the main road
    d = np.diff(main, axis=0)
    normal = np.stack([-d[:, 1], d[:, 0]], axis=1) / np.hypot(d[:, 0], d[:, 1])[:, None]
    normal = np.vstack([normal, normal[-1:]])
    lanes.append((main + 3.5 * normal)[::-1].copy())
    # a curved side road leaving the main road
    branch_s = rng.uniform(50.0, 80.0)
    branch_start = polyline_point(main, branch_s)[0]
    side_heading = heading + rng.choice([-1, 1]) * rng.uniform(0.9, 1.6)
    lanes.append(arc_polyline(branch_start, side_heading, rng.uniform(-0.03, 0.03), 70.0))

    ego_s0, ego_speed = rng.uniform(20.0, 30.0), rng.uniform(*cfg.vehicle_speed)
    ego_pos = polyline_point(main, ego_s0 + ego_speed * t)

    veh_pos = []
    for k in range(cfg.n_vehicles):
        lane = lanes[1 + k % (len(lanes) - 1)]
        s0 = rng.uniform(5.0, 0.5 * polyline_length(lane))
        veh_pos.append(polyline_point(lane, s0 + rng.uniform(*cfg.vehicle_speed) * t))
    veh_pos = np.stack(veh_pos, axis=1) if veh_pos else np.zeros((n_frames, 0, 2))

    # pedestrians cross the main road ahead of the ego, in facing pairs
    x0, v_des = [], []
    ped_duration = (n_frames - 1) * dt
    for k in range(cfg.n_pedestrians):
        s_cross = ego_s0 + ego_speed * rng.uniform(0.5, 1.0) * ped_duration + rng.uniform(-4, 4)
        anchor = polyline_point(main, s_cross)[0]
        seg = polyline_point(main, s_cross + 1.0)[0] - anchor
        along = seg / np.hypot(*seg)
        across = np.array([-along[1], along[0]])
        side = 1.0 if k % 2 == 0 else -1.0
        speed = rng.uniform(*cfg.ped_speed)
        start = anchor + side * across * rng.uniform(3.0, 6.0) + along * rng.uniform(-1.0, 1.0)
        x0.append(start)
        v_des.append(-side * across * speed)
    if x0:
        all_vehicles = np.concatenate([ego_pos[:, None], veh_pos], axis=1)

        def repellers(time):
            f = min(time / dt, n_frames - 1.0)
            lo = int(np.floor(f))
            hi = min(lo + 1, n_frames - 1)
            w = f - lo
            return (1 - w) * all_vehicles[lo] + w * all_vehicles[hi]

        v_des = np.array(v_des)
        ped_pos = social_force_rollout(np.array(x0), v_des.copy(), v_des, n_frames, dt, cfg.substeps,
                                       cfg.social, repellers)
    else:
        ped_pos = np.zeros((n_frames, 0, 2))
    pos = np.concatenate([ego_pos[:, None], veh_pos, ped_pos], axis=1)
    if cfg.noise > 0:
        noise = rng.normal(0, cfg.noise, pos.shape)
        noise[:, 0] = 0.0  # the plan is exact
        pos = pos + noise
    tracks = _tracks_from_positions(pos)
    plan = pos[cfg.t_obs:, 0].copy()
    return Scenario(tuple(tracks), cfg.t_obs, cfg.t_pred, ego_id=0, ego_plan=plan, hd_map=HdMap(tuple(lanes)))


_BUILDERS = {
    "crossing_pedestrians": _crossing,
    "lane_following_vehicle": _lane_following,
    "ego_with_plan": _ego_with_plan,
}


def generate_synthetic(template: str, count: int = 1, seed: int = 0,
                       config: SyntheticConfig | None = None, group: str | None = None,
                       **overrides) -> list[Scenario]:
    """Generate ``count`` scenarios from ``template``.

    Keyword overrides patch :class:`SyntheticConfig` or its social-force
    parameters, e.g. ``repulsion=0.0``.
    """
    if template not in _BUILDERS:
        raise ValueError(f"unknown template {template!r}; choose from {', '.join(TEMPLATES)}")
    if count < 1:
        raise ValueError("count must be at least 1")
    cfg = (config or SyntheticConfig()).with_overrides(**overrides)
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        s = _BUILDERS[template](rng, cfg)
        shift = rng.uniform(-cfg.world_offset, cfg.world_offset, 2) if cfg.world_offset > 0 else np.zeros(2)
        s = translate(s, -shift)
        s = replace(s, origin=(0.0, 0.0), scenario_id=f"{template}-{seed}-{k}",
                    group=group if group is not None else template,
                    metadata={"template": template, "seed": seed, "index": k})
        out.append(s)
    return out
