"""Training loop, configuration, run directories and leave-one-set-out splits.

A batch is a set of scenarios whose losses (and therefore gradients) are
summed before one Adam step. Noise is redrawn at every step; evaluation
uses fixed per-scenario noise derived from the seed.

Run directory layout::

    config.snapshot   resolved configuration (JSON), written before step 1
    log.csv           step, loss, ade, winners, wall_clock
    ckpt_<step>.bin   periodic parameter checkpoints
    final.bin         parameters after the last step
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import save_params
from .data import Scenario
from .interaction import Toggles
from .metrics import MetricReport, evaluate
from .model import ModelConfig, ScenePack, TrajectoryNet, collate, predict, prepare
from .optim import Adam
from .tensor import backward

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, group: str, norm: float):
        super().__init__(f"non-finite loss at step {step}; largest gradient norm in '{group}' ({norm:.3g})")
        self.step, self.group, self.norm = step, group, norm


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    steps: int = 20000
    lr: float = 5e-4
    modalities: int = 1
    toggles: Toggles = field(default_factory=Toggles)
    variety_min: str = "scene"
    seed: int = 0
    noise: str = "gaussian"                  # "zero" gives the plain LSTM baseline
    checkpoint_every: int = 0                 # 0: only final.bin
    eval_every: int = 0                       # 0: evaluate only after the last step
    train_paths: tuple[str, ...] = ()
    test_paths: tuple[str, ...] = ()
    data_format: str = "scenario_json"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0 or self.modalities < 1:
            raise ConfigError("batch_size and modalities must be >= 1 and steps >= 0")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.variety_min not in ("scene", "agent"):
            raise ConfigError(f"variety_min must be 'scene' or 'agent', got {self.variety_min!r}")
        if self.noise not in ("gaussian", "zero"):
            raise ConfigError(f"noise must be 'gaussian' or 'zero', got {self.noise!r}")

    @property
    def coordinate_frame(self) -> str:
        return self.model.coordinate_frame

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["toggles"] = self.toggles.as_dict()
        d["model"] = self.model.to_dict()
        d["train_paths"] = list(self.train_paths)
        d["test_paths"] = list(self.test_paths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)} | {"coordinate_frame"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        model = dict(d.pop("model", {}) or {})
        if "coordinate_frame" in d:
            model["coordinate_frame"] = d.pop("coordinate_frame")
        try:
            if "toggles" in d:
                t = d["toggles"]
                bad = sorted(set(t) - set(Toggles().as_dict()))
                if bad:
                    raise ConfigError(f"unknown toggles: {bad}")
                d["toggles"] = Toggles(**{k: _as_bool(v) for k, v in t.items()})
            for key in ("train_paths", "test_paths"):
                if key in d:
                    v = d[key]
                    d[key] = (v,) if isinstance(v, str) else tuple(v)
            d["model"] = ModelConfig.from_dict(model)
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, assignments: Sequence[str]) -> "TrainConfig":
        """Apply ``key=value`` strings; dotted keys reach nested sections (``toggles.EF=false``)."""
        d = self.to_dict()
        for a in assignments:
            if "=" not in a:
                raise ConfigError(f"override {a!r} is not key=value")
            key, raw = a.split("=", 1)
            parts = key.strip().split(".")
            node = d
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            leaf = parts[-1]
            if len(parts) == 1 and leaf == "coordinate_frame":
                node = d["model"]
            elif leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = _parse_value(raw)
        return TrainConfig.from_dict(d)


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false", "1", "0", "yes", "no", "on", "off"):
        return v.lower() in ("true", "1", "yes", "on")
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path: str | Path) -> TrainConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return TrainConfig.from_dict(doc)


# --- run log -----------------------------------------------------------------------

@dataclass
class RunLog:
    config: dict
    losses: list[float] = field(default_factory=list)
    winners: np.ndarray | None = None            # histogram over modalities
    wall_clock: list[float] = field(default_factory=list)
    evals: dict[int, float] = field(default_factory=dict)
    checksums: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.config = _freeze(self.config)

    @property
    def final_ade(self) -> float | None:
        return self.evals[max(self.evals)] if self.evals else None


def _freeze(d):
    """Deep read-only view of the config snapshot."""
    from types import MappingProxyType
    if isinstance(d, dict):
        return MappingProxyType({k: _freeze(v) for k, v in d.items()})
    if isinstance(d, list):
        return tuple(_freeze(v) for v in d)
    return d


def _thaw(d):
    if hasattr(d, "items"):
        return {k: _thaw(v) for k, v in d.items()}
    if isinstance(d, tuple):
        return [_thaw(v) for v in d]
    return d


def params_checksum(state: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name], dtype="<f8").tobytes())
    return h.hexdigest()


def _group_of(name: str) -> str:
    parts = name.split(".")
    return ".".join(parts[:2]) if len(parts) > 2 else parts[0]


def _worst_group(net: TrajectoryNet) -> tuple[str, float]:
    norms: dict[str, float] = {}
    for name, p in net.named_parameters().items():
        if p.grad is None:
            continue
        g = p.grad
        val = float(np.sqrt(np.sum(np.where(np.isfinite(g), g, 0.0) ** 2))) if np.isfinite(g).all() else np.inf
        key = _group_of(name)
        norms[key] = np.hypot(norms.get(key, 0.0), val) if np.isfinite(val) else np.inf
    if not norms:
        return "(none)", 0.0
    key = max(norms, key=lambda k: norms[k])
    return key, norms[key]


def evaluate_model(net: TrajectoryNet, packs: Sequence[ScenePack], modalities: int, seed: int,
                   noise: str = "gaussian", metric: str = "l2") -> MetricReport:
    sets = predict(net, packs, modalities, seed=seed, noise=noise)
    preds = [s.scored()[0] for s in sets]
    truths = [s.scored()[1] for s in sets]
    return evaluate(preds, truths, [s.scenario_id for s in sets], metric)


def _batches(n: int, size: int, rng: np.random.Generator):
    """Endless stream of index batches; every scenario is used once per pass."""
    pool: list[int] = []
    while True:
        batch = []
        while len(batch) < min(size, n):
            if not pool:
                pool = list(rng.permutation(n))
            i = pool.pop(0)
            if i not in batch:
                batch.append(i)
            else:
                pool.append(i)
        yield batch


def train(config: TrainConfig, scenarios: Sequence[Scenario] | Sequence[ScenePack], run_dir: str | Path | None = None,
          net: TrajectoryNet | None = None, progress_every: int = 0) -> tuple[TrajectoryNet, RunLog]:
    """Train on ``scenarios`` and return the model and its log.

    With ``run_dir`` set, the snapshot, log and checkpoints are written
    there. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    if len(scenarios) == 0:
        raise ConfigError("training needs at least one scenario")
    cfg = config
    packs = [s if isinstance(s, ScenePack) else prepare(s, cfg.model, with_image=cfg.toggles.EF)
             for s in scenarios]
    if net is None:
        net = TrajectoryNet(cfg.model, seed=cfg.seed, toggles=cfg.toggles)
    else:
        net.toggles = cfg.toggles
    params = net.named_parameters()
    opt = Adam(params, lr=cfg.lr)
    runlog = RunLog(cfg.to_dict(), winners=np.zeros(cfg.modalities, dtype=np.int64))
    out = Path(run_dir) if run_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.snapshot").write_text(json.dumps(_thaw(runlog.config), indent=2, sort_keys=True))
        fh = open(out / "log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "ade", "winners", "wall_clock"])
    batch_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    stream = _batches(len(packs), cfg.batch_size, batch_rng)
    t_start = time.perf_counter()
    try:
        for step in range(1, cfg.steps + 1):
            idx = next(stream)
            batch = collate([packs[i] for i in idx])
            z = noise_rng.standard_normal((cfg.modalities * batch.n_agents, cfg.model.noise_dim))
            if cfg.noise == "zero":
                z = np.zeros_like(z)
            opt.zero_grad()
            loss, winners, _ = net.loss(batch, cfg.modalities, z=z, variety_min=cfg.variety_min)
            value = float(loss.data.reshape(()))
            if loss.requires_grad:
                backward(loss)
            if not np.isfinite(value):
                group, norm = _worst_group(net)
                raise TrainingDiverged(step, group, norm)
            opt.step()
            runlog.losses.append(value)
            scored = winners[batch.targets]
            runlog.winners += np.bincount(scored, minlength=cfg.modalities)[:cfg.modalities]
            runlog.wall_clock.append(time.perf_counter() - t_start)
            ade_val = None
            if step == cfg.steps or (cfg.eval_every and step % cfg.eval_every == 0):
                ade_val = evaluate_model(net, packs, cfg.modalities, cfg.seed, cfg.noise).ade
                runlog.evals[step] = ade_val
            if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                state = net.state_dict()
                save_params(out / f"ckpt_{step}.bin", state)
                runlog.checksums[step] = params_checksum(state)
            if writer is not None:
                writer.writerow([step, repr(value), "" if ade_val is None else repr(ade_val),
                                 " ".join(str(int(c)) for c in np.bincount(scored, minlength=cfg.modalities)),
                                 f"{runlog.wall_clock[-1]:.3f}"])
            if progress_every and step % progress_every == 0:
                log.info("step %d loss %.6g", step, value)
        if cfg.steps == 0:
            runlog.evals[0] = evaluate_model(net, packs, cfg.modalities, cfg.seed, cfg.noise).ade
        if out is not None:
            state = net.state_dict()
            save_params(out / "final.bin", state)
            runlog.checksums[cfg.steps] = params_checksum(state)
    finally:
        if fh is not None:
            fh.close()
    return net, runlog


def split_leave_one_out(groups: dict[str, Sequence[Scenario]], held_out: str) -> tuple[list[Scenario], list[Scenario]]:
    """Train on every group except ``held_out``, which becomes the test set."""
    if held_out not in groups:
        raise ConfigError(f"unknown group {held_out!r}; available: {sorted(groups)}")
    train_set = [s for name, ss in groups.items() if name != held_out for s in ss]
    return train_set, list(groups[held_out])
