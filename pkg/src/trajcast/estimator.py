"""scikit-learn style estimators over lists of scenarios.

``fit(X)`` takes a list of :class:`~trajcast.data.Scenario` (the ground
truth lives inside each scenario, so ``y`` is ignored) and ``predict(X)``
returns one :class:`~trajcast.model.PredictionSet` per scenario. ``score``
is the negated best-of-K ADE so that larger is better.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import KalmanCV, linear_extrapolate
from .checkpoint import load_params, save_params
from .data import Scenario, scenario_arrays
from .interaction import Toggles
from .metrics import MetricReport, evaluate
from .model import PredictionSet, TrajectoryNet, predict, prepare
from .training import TrainConfig, train


def check_scenarios(X, require_truth: bool = False) -> list[Scenario]:
    """Validate an estimator input: a non-empty sequence of scenarios sharing one window."""
    if isinstance(X, Scenario):
        X = [X]
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("expected a non-empty list of Scenario objects")
    bad = [type(s).__name__ for s in X if not isinstance(s, Scenario)]
    if bad:
        raise TypeError(f"expected Scenario objects, got {sorted(set(bad))}")
    windows = {(s.t_obs, s.t_pred) for s in X}
    if len(windows) > 1:
        raise ValueError(f"scenarios disagree on (t_obs, t_pred): {sorted(windows)}")
    if require_truth and not any(scenario_arrays(s).targets.any() for s in X):
        raise ValueError("no scenario has an agent with complete ground truth")
    return list(X)


def score_predictions(sets: Sequence[PredictionSet], metric: str = "l2") -> MetricReport:
    preds, truths, ids = [], [], []
    for s in sets:
        p, t = s.scored()
        preds.append(p)
        truths.append(t)
        ids.append(s.scenario_id)
    return evaluate(preds, truths, ids, metric)


class _ScoreMixin:
    def score(self, X, y=None) -> float:
        return -score_predictions(self.predict(X)).ade


class TrajectoryForecaster(_ScoreMixin, BaseEstimator):
    """The full interaction + environment + prediction network.

    ``toggles`` is a dict over ``PF, TF, EMF, ETF, EF`` (missing keys default
    to on). ``model_config`` is a dict of :class:`~trajcast.model.ModelConfig`
    fields. ``eval_seed`` fixes the noise used by :meth:`predict`.
    """

    def __init__(self, modalities: int = 1, steps: int = 20000, batch_size: int = 8, lr: float = 5e-4,
                 toggles: dict | None = None, variety_min: str = "scene", noise: str = "gaussian",
                 coordinate_frame: str = "relative", seed: int = 0, eval_seed: int | None = None,
                 model_config: dict | None = None):
        self.modalities = modalities
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.toggles = toggles
        self.variety_min = variety_min
        self.noise = noise
        self.coordinate_frame = coordinate_frame
        self.seed = seed
        self.eval_seed = eval_seed
        self.model_config = model_config

    def _train_config(self) -> TrainConfig:
        model = dict(self.model_config or {})
        model["coordinate_frame"] = self.coordinate_frame
        return TrainConfig.from_dict(dict(
            batch_size=self.batch_size, steps=self.steps, lr=self.lr, modalities=self.modalities,
            toggles=dict(self.toggles or {}), variety_min=self.variety_min, noise=self.noise,
            seed=self.seed, model=model))

    def fit(self, X, y=None, run_dir=None):
        scenarios = check_scenarios(X, require_truth=True)
        cfg = self._train_config()
        self.config_ = cfg
        self.net_, self.log_ = train(cfg, scenarios, run_dir=run_dir)
        self.n_params_ = sum(p.size for p in self.net_.named_parameters().values())
        return self

    def predict(self, X) -> list[PredictionSet]:
        check_is_fitted(self, "net_")
        scenarios = check_scenarios(X)
        packs = [prepare(s, self.net_.config, with_image=self.net_.toggles.EF) for s in scenarios]
        seed = self.seed if self.eval_seed is None else self.eval_seed
        return predict(self.net_, packs, self.modalities, seed=seed, noise=self.noise)

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        save_params(path, self.net_.state_dict())

    def load(self, path):
        """Restore parameters saved by :meth:`save` (architecture from this estimator's settings)."""
        cfg = self._train_config()
        net = TrajectoryNet(cfg.model, seed=cfg.seed, toggles=cfg.toggles)
        net.load_state_dict(load_params(path))
        self.config_, self.net_ = cfg, net
        return self


class VanillaLSTM(TrajectoryForecaster):
    """Encoder/decoder with every interaction and map feature off, one deterministic path."""

    def __init__(self, steps: int = 20000, batch_size: int = 8, lr: float = 5e-4,
                 coordinate_frame: str = "relative", seed: int = 0, model_config: dict | None = None):
        super().__init__(modalities=1, steps=steps, batch_size=batch_size, lr=lr,
                         toggles=Toggles.all_off().as_dict(), noise="zero",
                         coordinate_frame=coordinate_frame, seed=seed, model_config=model_config)


class NoiseLSTM(TrajectoryForecaster):
    """The same encoder/decoder with Gaussian noise in the decoder state and ``modalities`` samples."""

    def __init__(self, modalities: int = 1, steps: int = 20000, batch_size: int = 8, lr: float = 5e-4,
                 variety_min: str = "scene", coordinate_frame: str = "relative", seed: int = 0,
                 eval_seed: int | None = None, model_config: dict | None = None):
        super().__init__(modalities=modalities, steps=steps, batch_size=batch_size, lr=lr,
                         toggles=Toggles.all_off().as_dict(), variety_min=variety_min, noise="gaussian",
                         coordinate_frame=coordinate_frame, seed=seed, eval_seed=eval_seed,
                         model_config=model_config)


class _PerAgentBaseline(_ScoreMixin, BaseEstimator):
    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def _one(self, observed: np.ndarray, horizon: int) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> list[PredictionSet]:
        out = []
        for s in check_scenarios(X):
            arr = scenario_arrays(s)
            horizon = s.t_pred - s.t_obs
            traj = np.stack([self._one(o, horizon) for o in arr.observed])[None]
            out.append(PredictionSet(s.scenario_id, arr.agent_ids, traj, arr.future, arr.targets, s.t_obs))
        return out


class LinearExtrapolation(_PerAgentBaseline):
    """Least-squares line through the observed frames."""

    def _one(self, observed, horizon):
        return linear_extrapolate(observed, horizon)


class ConstantVelocityKalman(_PerAgentBaseline):
    def __init__(self, process_noise: float = 0.1, obs_noise: float = 0.05, dt: float = 1.0):
        self.process_noise = process_noise
        self.obs_noise = obs_noise
        self.dt = dt

    def _one(self, observed, horizon):
        return KalmanCV(self.process_noise, self.obs_noise, self.dt).predict(observed, horizon)


BASELINES = {"linear": LinearExtrapolation, "kalman": ConstantVelocityKalman, "lstm": VanillaLSTM,
             "noise_lstm": NoiseLSTM}
