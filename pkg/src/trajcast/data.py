"""Scenario data model, file ingestion and windowing.

Frames inside a scenario are numbered ``1..t_pred``; frames ``1..t_obs``
are observed and ``t_obs+1..t_pred`` are the prediction horizon.

Plain-text track files hold whitespace-separated ``frame_id agent_id x y``
rows (meters); ``#`` starts a comment line. Scenario JSON holds one
document per scenario (a single object, a list, or one object per line)::

    {"id": "s0", "ego_id": 0, "t_obs": 6, "t_pred": 12, "map": "m.json",
     "tracks": [{"id": 0, "points": [[1, x, y], ...]}, ...],
     "ego_plan": [[7, x, y], ...]}
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .maps import HdMap, load_map, save_map

logger = logging.getLogger(__name__)


class TrackParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class IncompleteTrackWarning(UserWarning):
    def __init__(self, count: int):
        super().__init__(f"dropped {count} agent(s) with incomplete observation windows")
        self.count = count


@dataclass(frozen=True)
class AgentTrack:
    agent_id: int
    frames: np.ndarray      # int, strictly increasing
    xy: np.ndarray          # [n, 2] meters

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if frames.size != xy.shape[0]:
            raise ValueError(f"agent {self.agent_id}: {frames.size} frames but {xy.shape[0]} points")
        if np.any(np.diff(frames) <= 0):
            raise ValueError(f"agent {self.agent_id}: frame indices must be strictly increasing")
        frames.setflags(write=False)
        xy.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "xy", xy)

    def position(self, t: int) -> np.ndarray | None:
        k = np.searchsorted(self.frames, t)
        if k < self.frames.size and self.frames[k] == t:
            return self.xy[k]
        return None

    def covers(self, first: int, last: int) -> bool:
        need = np.arange(first, last + 1)
        return bool(np.isin(need, self.frames).all())


@dataclass(frozen=True)
class Frame:
    t: int
    entries: tuple[tuple[int, float, float], ...]


@dataclass(frozen=True)
class Scenario:
    tracks: tuple[AgentTrack, ...]
    t_obs: int
    t_pred: int
    ego_id: int | None = None
    ego_plan: np.ndarray | None = None      # [t_pred - t_obs, 2] for frames t_obs+1..t_pred
    map_ref: str | None = None
    hd_map: HdMap | None = None
    scenario_id: str = ""
    group: str = ""
    origin: tuple[float, float] = (0.0, 0.0)   # world offset already subtracted
    dropped_agents: int = 0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if not (0 < self.t_obs < self.t_pred):
            raise ValueError(f"need 0 < t_obs < t_pred, got {self.t_obs}, {self.t_pred}")
        ids = [tr.agent_id for tr in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate agent ids")
        for tr in self.tracks:
            if not tr.covers(1, self.t_obs):
                raise ValueError(f"agent {tr.agent_id} does not cover frames 1..{self.t_obs}")
        if self.ego_id is not None and self.ego_id not in ids:
            raise ValueError(f"ego {self.ego_id} has no track")
        if self.ego_plan is not None:
            plan = np.asarray(self.ego_plan, dtype=np.float64).reshape(-1, 2)
            if plan.shape[0] != self.t_pred - self.t_obs:
                raise ValueError(f"ego plan has {plan.shape[0]} points, expected {self.t_pred - self.t_obs}")
            if self.ego_id is None:
                raise ValueError("ego plan given without an ego agent")
            plan.setflags(write=False)
            object.__setattr__(self, "ego_plan", plan)

    @property
    def agent_ids(self) -> list[int]:
        return [tr.agent_id for tr in self.tracks]

    def track(self, agent_id: int) -> AgentTrack:
        for tr in self.tracks:
            if tr.agent_id == agent_id:
                return tr
        raise KeyError(agent_id)

    def frame(self, t: int) -> Frame:
        entries = []
        for tr in self.tracks:
            p = tr.position(t)
            if p is not None:
                entries.append((tr.agent_id, float(p[0]), float(p[1])))
        return Frame(t, tuple(entries))


def _truncate(track: AgentTrack, first: int, last: int) -> AgentTrack:
    keep = (track.frames >= first) & (track.frames <= last)
    return AgentTrack(track.agent_id, track.frames[keep], track.xy[keep])


# --- arrays consumed by the networks ------------------------------------------

@dataclass(frozen=True)
class ScenarioArrays:
    agent_ids: np.ndarray          # [N]
    observed: np.ndarray           # [N, t_obs, 2]
    future: np.ndarray             # [N, t_pred - t_obs, 2], NaN where unknown
    ego_index: int | None
    ego_plan: np.ndarray | None    # [t_pred - t_obs, 2]
    targets: np.ndarray            # [N] bool, agents scored by loss/metrics


def scenario_arrays(s: Scenario) -> ScenarioArrays:
    n = len(s.tracks)
    horizon = s.t_pred - s.t_obs
    obs = np.empty((n, s.t_obs, 2))
    fut = np.full((n, horizon, 2), np.nan)
    for k, tr in enumerate(s.tracks):
        for t in range(1, s.t_pred + 1):
            p = tr.position(t)
            if t <= s.t_obs:
                obs[k, t - 1] = p
            elif p is not None:
                fut[k, t - s.t_obs - 1] = p
    ego_index = None if s.ego_id is None else s.agent_ids.index(s.ego_id)
    targets = ~np.isnan(fut).any(axis=(1, 2))
    if ego_index is not None and s.ego_plan is not None:
        targets[ego_index] = False
    return ScenarioArrays(np.array(s.agent_ids), obs, fut, ego_index, s.ego_plan, targets)


# --- frame handling ------------------------------------------------------------

def window(s: Scenario) -> tuple[list[Frame], list[Frame]]:
    """Observed frames ``1..t_obs`` and ground-truth frames ``t_obs+1..t_pred``."""
    observed = [s.frame(t) for t in range(1, s.t_obs + 1)]
    future = [s.frame(t) for t in range(s.t_obs + 1, s.t_pred + 1)]
    return observed, future


def translate(s: Scenario, offset) -> Scenario:
    off = np.asarray(offset, dtype=np.float64).reshape(2)
    tracks = tuple(AgentTrack(tr.agent_id, tr.frames, tr.xy - off) for tr in s.tracks)
    plan = None if s.ego_plan is None else s.ego_plan - off
    hd_map = None if s.hd_map is None else s.hd_map.translated(-off)
    origin = (s.origin[0] + float(off[0]), s.origin[1] + float(off[1]))
    return replace(s, tracks=tracks, ego_plan=plan, hd_map=hd_map, origin=origin)


def to_relative_frame(s: Scenario) -> Scenario:
    """Shift everything so the ego position at ``t_obs`` is the origin.

    One origin is used for all frames, so velocities are unchanged. The
    accumulated shift is kept in ``origin``.
    """
    if s.ego_id is None:
        raise ValueError("scenario has no ego agent")
    ref = s.track(s.ego_id).position(s.t_obs)
    if ref is None:
        raise ValueError("ego has no position at t_obs")
    return translate(s, ref)


def to_world_frame(s: Scenario) -> Scenario:
    return translate(s, (-s.origin[0], -s.origin[1]))


# --- ingestion -------------------------------------------------------------------

def _parse_plain(path: Path) -> list[tuple[int, int, float, float]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) < 4:
                raise TrackParseError(path, lineno, f"expected 'frame agent x y', got {text!r}")
            try:
                frame, agent = int(float(parts[0])), int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise TrackParseError(path, lineno, f"non-numeric field in {text!r}") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise TrackParseError(path, lineno, "non-finite coordinate")
            rows.append((frame, agent, x, y))
    return rows


def _scenarios_from_rows(rows, t_obs: int, t_pred: int, stride: int, ego_id: int | None,
                         group: str, stem: str) -> tuple[list[Scenario], int]:
    if not rows:
        return [], 0
    frame_ids = sorted({r[0] for r in rows})
    index_of = {f: k for k, f in enumerate(frame_ids)}
    by_agent: dict[int, dict[int, tuple[float, float]]] = {}
    for frame, agent, x, y in rows:
        slot = by_agent.setdefault(agent, {})
        if index_of[frame] in slot:
            raise ValueError(f"agent {agent} appears twice in frame {frame}")
        slot[index_of[frame]] = (x, y)
    out, dropped_total = [], 0
    for start in range(0, len(frame_ids) - t_pred + 1, stride):
        tracks, dropped = [], 0
        for agent in sorted(by_agent):
            pts = by_agent[agent]
            local = [(k - start + 1, pts[k]) for k in range(start, start + t_pred) if k in pts]
            if not local:
                continue
            frames = np.array([f for f, _ in local])
            if not np.isin(np.arange(1, t_obs + 1), frames).all():
                dropped += 1
                continue
            tracks.append(AgentTrack(agent, frames, np.array([p for _, p in local])))
        if not tracks:
            dropped_total += dropped
            continue
        ego = ego_id if ego_id is not None and any(t.agent_id == ego_id for t in tracks) else None
        out.append(Scenario(tuple(tracks), t_obs, t_pred, ego_id=ego, scenario_id=f"{stem}:{frame_ids[start]}",
                            group=group, dropped_agents=dropped))
        dropped_total += dropped
    return out, dropped_total


def _scenario_from_doc(doc: dict, base: Path, group: str) -> Scenario:
    t_obs, t_pred = int(doc["t_obs"]), int(doc["t_pred"])
    tracks, dropped = [], 0
    for tr in doc.get("tracks", []):
        pts = np.asarray(tr["points"], dtype=np.float64).reshape(-1, 3)
        track = AgentTrack(int(tr["id"]), pts[:, 0].astype(np.int64), pts[:, 1:])
        if track.covers(1, t_obs):
            tracks.append(track)
        else:
            dropped += 1
    ego_id = doc.get("ego_id")
    ego_id = None if ego_id is None else int(ego_id)
    plan = doc.get("ego_plan")
    if plan is not None:
        plan_arr = np.asarray(plan, dtype=np.float64).reshape(-1, 3)
        order = np.argsort(plan_arr[:, 0])
        expect = np.arange(t_obs + 1, t_pred + 1)
        if not np.array_equal(plan_arr[order, 0].astype(int), expect):
            raise ValueError("ego_plan must cover exactly frames t_obs+1..t_pred")
        plan = plan_arr[order, 1:]
    map_ref = doc.get("map")
    hd_map = None
    if map_ref:
        mpath = Path(map_ref)
        hd_map = load_map(mpath if mpath.is_absolute() else base / mpath)
    elif "centerlines" in doc:
        hd_map = HdMap.from_json(doc)
    origin = tuple(doc.get("origin", (0.0, 0.0)))
    return Scenario(tuple(tracks), t_obs, t_pred, ego_id=ego_id, ego_plan=plan, map_ref=map_ref,
                    hd_map=hd_map, scenario_id=str(doc.get("id", "")), group=str(doc.get("group", group)),
                    origin=(float(origin[0]), float(origin[1])), dropped_agents=dropped)


def _read_json_docs(path: Path) -> list[dict]:
    text = path.read_text()
    if not text.strip():
        return []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        docs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    docs.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise TrackParseError(path, lineno, exc.msg) from None
        return docs
    return doc if isinstance(doc, list) else [doc]


def load_tracks(path: str | Path, format: str = "plain_text", *, t_obs: int = 8, t_pred: int = 20,
                stride: int = 1, ego_id: int | None = 0, group: str | None = None) -> list[Scenario]:
    """Read scenarios from a track file.

    Plain-text files are cut into sliding windows of ``t_pred`` consecutive
    distinct frame ids (``stride`` apart) and renumbered ``1..t_pred``.
    Agents lacking any frame in the observation window are dropped; the
    total is reported through an :class:`IncompleteTrackWarning`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    group = path.stem if group is None else group
    if format == "plain_text":
        scenarios, dropped = _scenarios_from_rows(_parse_plain(path), t_obs, t_pred, stride, ego_id,
                                                  group, path.stem)
    elif format == "scenario_json":
        scenarios = []
        for k, d in enumerate(_read_json_docs(path)):
            try:
                scenarios.append(_scenario_from_doc(d, path.parent, group))
            except KeyError as exc:
                raise ValueError(f"{path}: scenario {k} lacks field {exc.args[0]!r}") from None
        dropped = sum(s.dropped_agents for s in scenarios)
    else:
        raise ValueError(f"unknown track format {format!r}")
    if dropped:
        logger.warning("%s: dropped %d agent(s) with incomplete observation windows", path, dropped)
        warnings.warn(IncompleteTrackWarning(dropped), stacklevel=2)
    return scenarios


def scenario_to_doc(s: Scenario, map_path: str | None = None) -> dict:
    doc = {
        "id": s.scenario_id, "group": s.group, "ego_id": s.ego_id,
        "t_obs": s.t_obs, "t_pred": s.t_pred,
        "tracks": [{"id": tr.agent_id,
                    "points": [[int(f), float(x), float(y)] for f, (x, y) in zip(tr.frames, tr.xy)]}
                   for tr in s.tracks],
    }
    if s.ego_plan is not None:
        doc["ego_plan"] = [[s.t_obs + 1 + k, float(x), float(y)] for k, (x, y) in enumerate(s.ego_plan)]
    if s.origin != (0.0, 0.0):
        doc["origin"] = list(s.origin)
    if map_path is not None:
        doc["map"] = map_path
    elif s.hd_map is not None:
        doc["centerlines"] = s.hd_map.to_json()["centerlines"]
    return doc


def save_scenarios(path: str | Path, scenarios: Sequence[Scenario], format: str = "scenario_json") -> None:
    """Write scenarios so that :func:`load_tracks` reads them back unchanged.

    ``scenario_json`` writes one JSON document per line with maps inlined.
    ``plain_text`` writes consecutive non-overlapping windows, which only
    round-trips positions (no ego plan or map).
    """
    path = Path(path)
    if format == "scenario_json":
        with open(path, "w") as fh:
            for s in scenarios:
                fh.write(json.dumps(scenario_to_doc(s)) + "\n")
    elif format == "plain_text":
        with open(path, "w") as fh:
            fh.write("# frame_id agent_id x y\n")
            offset = 0
            for s in scenarios:
                rows = sorted((int(f) + offset, tr.agent_id, x, y)
                              for tr in s.tracks for f, (x, y) in zip(tr.frames, tr.xy))
                for f, a, x, y in rows:
                    fh.write(f"{f} {a} {float(x)!r} {float(y)!r}\n")
                offset += s.t_pred
    else:
        raise ValueError(f"unknown track format {format!r}")


def save_map_for(path: str | Path, s: Scenario) -> None:
    if s.hd_map is None:
        raise ValueError("scenario has no map")
    save_map(path, s.hd_map)


def group_scenarios(scenarios: Iterable[Scenario]) -> dict[str, list[Scenario]]:
    groups: dict[str, list[Scenario]] = {}
    for s in scenarios:
        groups.setdefault(s.group, []).append(s)
    return groups
