"""Displacement metrics and result tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} differs from truth shape {t.shape}")
    if p.ndim < 2 or p.shape[-1] != 2 or p.shape[-2] < 1:
        raise ValueError(f"expected [..., T>=1, 2] trajectories, got {p.shape}")
    return p, t


def step_errors(pred, truth, metric: str = "l2") -> np.ndarray:
    """Per-step error: Euclidean distance (``l2``) or squared distance (``mse``)."""
    p, t = _pair(pred, truth)
    sq = ((p - t) ** 2).sum(axis=-1)
    if metric == "l2":
        return np.sqrt(sq)
    if metric == "mse":
        return sq
    raise ValueError(f"metric must be 'l2' or 'mse', got {metric!r}")


def ade(pred, truth, metric: str = "l2") -> float | np.ndarray:
    """Mean over steps of the displacement error; leading axes are kept."""
    e = step_errors(pred, truth, metric).mean(axis=-1)
    return float(e) if np.ndim(e) == 0 else e


def fde(pred, truth, metric: str = "l2") -> float | np.ndarray:
    e = step_errors(pred, truth, metric)[..., -1]
    return float(e) if np.ndim(e) == 0 else e


@dataclass
class MetricReport:
    ade: float
    fde: float
    k: int
    best_of_k: bool
    agents: int
    frames: int
    metric: str = "l2"
    per_scenario: dict[str, tuple[float, float, int]] = field(default_factory=dict)

    def cell(self, digits: int = 2) -> str:
        return f"{self.ade:.{digits}f}/{self.fde:.{digits}f}"


def best_of_k(pred, truth, metric: str = "l2") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per agent, the modality with the lowest ADE and its (ADE, FDE).

    ``pred`` is ``[H, N, T, 2]`` and ``truth`` ``[N, T, 2]``; returns
    ``(ade [N], fde [N], chosen modality [N])``. Ties go to the lowest index.
    """
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 4 or p.shape[0] < 1:
        raise ValueError(f"expected [H, N, T, 2] predictions, got {p.shape}")
    t = np.broadcast_to(np.asarray(truth, dtype=np.float64), p.shape)
    err = step_errors(p, t, metric)                  # [H, N, T]
    ades = err.mean(axis=-1)
    pick = np.argmin(ades, axis=0)
    cols = np.arange(p.shape[1])
    return ades[pick, cols], err[pick, cols, -1], pick


def evaluate(predictions: Sequence[np.ndarray], truths: Sequence[np.ndarray],
             scenario_ids: Sequence[str] | None = None, metric: str = "l2") -> MetricReport:
    """Aggregate best-of-K over scenarios, weighting every scored agent equally.

    ``predictions[s]`` is ``[H, N_s, T, 2]`` and ``truths[s]`` ``[N_s, T, 2]``
    for the scored agents of scenario ``s``.
    """
    ids = list(scenario_ids) if scenario_ids is not None else [str(k) for k in range(len(predictions))]
    all_ade, all_fde, per = [], [], {}
    k = frames = 0
    for sid, pr, tr in zip(ids, predictions, truths):
        pr = np.asarray(pr, dtype=np.float64)
        k, frames = pr.shape[0], pr.shape[2]
        if pr.shape[1] == 0:
            continue
        a, f, _ = best_of_k(pr, tr, metric)
        all_ade.append(a)
        all_fde.append(f)
        per[sid] = (float(a.mean()), float(f.mean()), int(a.size))
    if not all_ade:
        raise ValueError("no scored agents to evaluate")
    a = np.concatenate(all_ade)
    f = np.concatenate(all_fde)
    return MetricReport(float(a.mean()), float(f.mean()), k, k > 1, int(a.size), frames, metric, per)


def write_report_csv(path: str | Path, rows: Sequence[tuple[str, MetricReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "ade", "fde", "k", "best_of_k", "agents", "frames", "metric"])
        for name, r in rows:
            w.writerow([name, repr(r.ade), repr(r.fde), r.k, int(r.best_of_k), r.agents, r.frames, r.metric])


def format_table(rows: Sequence[tuple[str, MetricReport]], title: str = "ADE/FDE", digits: int = 2,
                 extra: Sequence[Sequence[str]] | None = None, extra_header: Sequence[str] = ()) -> str:
    """Aligned plain-text table with ``ADE/FDE`` cells such as ``0.39/0.79``."""
    header = ["Method", *extra_header, title]
    body = [[name, *(extra[i] if extra else []), r.cell(digits)] for i, (name, r) in enumerate(rows)]
    widths = [max(len(str(row[c])) for row in [header, *body]) for c in range(len(header))]
    line = lambda row: "  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(r) for r in body)])
