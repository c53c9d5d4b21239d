"""Central finite-difference verification of recorded gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, backward

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-7


@dataclass
class GradReport:
    name: str
    worst: float        # max over checked entries of excess error relative to magnitude
    checked: int

    def ok(self, rtol: float = RTOL) -> bool:
        return self.worst <= rtol


def entry_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = ATOL) -> np.ndarray:
    """Error measure that passes iff ``|a - n| <= atol + rtol * max(|a|, |n|)``."""
    diff = np.abs(analytic - numeric)
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    excess = np.maximum(diff - atol, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(excess == 0.0, 0.0, excess / np.maximum(mag, 1e-300))


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], *,
                    step: float = STEP, atol: float = ATOL, max_entries: int | None = None,
                    seed: int = 0) -> dict[str, GradReport]:
    """Compare backward-pass gradients against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. With ``max_entries`` set, at most that many entries per
    tensor are probed (chosen with ``seed``).
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    rng = np.random.default_rng(seed)
    reports = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + step
            up = float(loss_fn().data.reshape(()))
            flat[k] = orig - step
            down = float(loss_fn().data.reshape(()))
            flat[k] = orig
            numeric[n] = (up - down) / (2.0 * step)
        err = entry_error(analytic.reshape(-1)[idx], numeric, atol)
        reports[name] = GradReport(name, float(err.max()) if err.size else 0.0, int(idx.size))
    for p in params.values():
        p.grad = None
    return reports


# --- full suite ------------------------------------------------------------------

def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    """Small randomized losses, one per differentiable operation."""
    from . import tensor as T

    def leaf(*shape, lo=-1.0, hi=1.0):
        return T.tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    mix = T.tensor(rng.normal(size=(3, 4)))     # fixed weights make every output entry matter
    cases = {}
    a, b = leaf(3, 4), leaf(3, 4)
    for op in ("add", "sub", "mul"):
        cases[op] = ((lambda op=op: T.total(T.mul(T.elementwise(op, a, b), mix))), {"a": a, "b": b})
    x = leaf(3, 4, lo=-2, hi=2)
    for op in ("sigmoid", "tanh", "relu", "square", "neg"):
        cases[op] = ((lambda op=op: T.total(T.mul(getattr(T, op)(x), mix))), {"x": x})
    s = leaf(1, 1)
    cases["scalar_mul"] = (lambda: T.total(T.mul(T.mul(x, s), mix)), {"x": x, "s": s})
    m1, m2 = leaf(3, 4), leaf(4, 2)
    w2 = T.tensor(rng.normal(size=(3, 2)))
    cases["matmul"] = (lambda: T.total(T.mul(T.matmul(m1, m2), w2)), {"a": m1, "b": m2})
    lw, lb = leaf(2, 4), leaf(1, 2)
    cases["linear"] = (lambda: T.total(T.mul(T.linear(m1, lw, lb), w2)), {"x": m1, "w": lw, "b": lb})
    c1, c2 = leaf(2, 4), leaf(1, 4)
    wc = T.tensor(rng.normal(size=(3, 4)))
    cases["concat"] = (lambda: T.total(T.mul(T.concat([c1, c2], 0), wc)), {"a": c1, "b": c2})
    wt = T.tensor(rng.normal(size=(4, 3)))
    cases["transpose"] = (lambda: T.total(T.mul(T.transpose(x), wt)), {"x": x})
    pool = leaf(6, 4)
    wmax = T.tensor(rng.normal(size=(1, 4)))
    cases["maxpool_rows"] = (lambda: T.total(T.mul(T.maxpool_rows(pool), wmax)), {"x": pool})
    wseg = T.tensor(rng.normal(size=(2, 4)))
    cases["segment_max"] = (lambda: T.total(T.mul(T.segment_max(pool, [0, 4]), wseg)), {"x": pool})
    wr = T.tensor(rng.normal(size=(5, 4)))
    cases["take_rows"] = (lambda: T.total(T.mul(T.take_rows(x, [2, 0, 2, 1, 0]), wr)), {"x": x})
    wsl = T.tensor(rng.normal(size=(3, 2)))
    cases["slice_cols"] = (lambda: T.total(T.mul(T.slice_cols(x, 1, 3), wsl)), {"x": x})
    wrs = T.tensor(rng.normal(size=(2, 6)))
    cases["reshape"] = (lambda: T.total(T.mul(T.reshape(x, (2, 6)), wrs)), {"x": x})
    img, kern, kb = leaf(1, 2, 8, 8), leaf(3, 2, 3, 3), leaf(3)
    wconv = T.tensor(rng.normal(size=(1, 3, 4, 4)))
    cases["conv2d"] = (lambda: T.total(T.mul(T.conv2d(img, kern, kb), wconv)), {"x": img, "w": kern, "b": kb})
    fm = leaf(3, 6, 6)
    pts = T.tensor(rng.uniform(0.3, 4.7, (5, 2)) + 0.013, requires_grad=True)
    wg = T.tensor(rng.normal(size=(5, 3)))
    cases["bilinear_gather"] = (lambda: T.total(T.mul(T.bilinear_gather(fm, pts), wg)), {"fm": fm, "coords": pts})
    xl, hc = leaf(2, 3), leaf(2, 4)
    wih, whh, bl = leaf(8, 3), leaf(8, 2), leaf(1, 8)
    wl = T.tensor(rng.normal(size=(2, 4)))
    cases["lstm_cell"] = (lambda: T.total(T.mul(T.lstm_cell(xl, hc, wih, whh, bl), wl)),
                          {"x": xl, "hc": hc, "w_ih": wih, "w_hh": whh, "bias": bl})
    hg = leaf(2, 2)
    gih, ghh, gbi, gbh = leaf(6, 3), leaf(6, 2), leaf(1, 6), leaf(1, 6)
    wgr = T.tensor(rng.normal(size=(2, 2)))
    cases["gru_cell"] = (lambda: T.total(T.mul(T.gru_cell(xl, hg, gih, ghh, gbi, gbh), wgr)),
                         {"x": xl, "h": hg, "w_ih": gih, "w_hh": ghh, "b_ih": gbi, "b_hh": gbh})
    return cases


def toy_problem(seed: int = 0, agents: int = 2, t_obs: int = 3, t_pred: int = 5):
    """A small scenario with a map and an ego plan (the ego is agent 0)."""
    from .data import AgentTrack, Scenario
    from .maps import HdMap

    rng = np.random.default_rng([seed, 99])
    frames = np.arange(1, t_pred + 1)
    tracks = []
    for i in range(agents):
        start = rng.normal(scale=3.0, size=2)
        vel = rng.normal(size=2)
        xy = start + np.outer(frames, vel) + rng.normal(scale=0.1, size=(t_pred, 2))
        tracks.append(AgentTrack(i, frames, xy))
    plan = tracks[0].xy[t_obs:] + 0.05
    hd_map = HdMap((np.array([[-20.0, -1.0], [20.0, 1.5]]), np.array([[0.0, -20.0], [1.0, 20.0]])))
    return Scenario(tuple(tracks), t_obs, t_pred, ego_id=0, ego_plan=plan, hd_map=hd_map, scenario_id="toy")


#: the toy map encoder has only two channels per layer; at some seeds every
#: ReLU is off at init and its gradient check would be vacuous. Seed 1 is live.
MODEL_SEED = 1


def model_case(seed: int = MODEL_SEED, modalities: int = 2, agents: int = 2):
    """End-to-end loss of the toy-sized full model; returns ``(loss_fn, params, net, batch)``."""
    from .model import ModelConfig, TrajectoryNet, collate, prepare

    cfg = ModelConfig.toy()
    net = TrajectoryNet(cfg, seed=seed)
    batch = collate([prepare(toy_problem(seed, agents), cfg)])
    z = np.random.default_rng([seed, 5]).standard_normal((modalities * batch.n_agents, cfg.noise_dim))
    return (lambda: net.loss(batch, modalities, z=z)[0]), net.named_parameters(), net, batch


def zero_gradient_params(seed: int = MODEL_SEED) -> list[str]:
    """Model parameters whose end-to-end gradient is identically zero (unchecked in practice)."""
    fn, params, _, _ = model_case(seed)
    for p in params.values():
        p.grad = None
    backward(fn())
    return [k for k, p in params.items() if p.grad is None or not np.any(p.grad)]


def run_suite(seed: int = MODEL_SEED, rtol: float = RTOL, include_model: bool = True) -> dict[str, float]:
    """Worst relative error per operation and per model parameter group."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, (fn, params) in _op_cases(rng).items():
        reports = check_gradients(fn, params)
        worst[f"op.{name}"] = max(r.worst for r in reports.values())
    if include_model:
        fn, params, _, _ = model_case(seed)
        for name, r in check_gradients(fn, params).items():
            group = "model." + ".".join(name.split(".")[:-1])
            worst[group] = max(worst.get(group, 0.0), r.worst)
    return worst
