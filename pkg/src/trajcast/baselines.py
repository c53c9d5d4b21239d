"""Non-learned baselines: least-squares line fit and a constant-velocity Kalman filter.

Both work per agent on ``[T_obs, 2]`` observations taken at frames
``1..T_obs`` and predict frames ``T_obs+1..T_obs+horizon``.

The filter is a plain linear KF: with a constant-velocity transition and
direct position observations every map is linear, so the "extended" filter
reduces to this one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def linear_fit(observed, frames=None) -> np.ndarray:
    """Least-squares ``x(t) = a_x t + b_x``, ``y(t) = a_y t + b_y``; returns ``[[a_x, a_y], [b_x, b_y]]``."""
    obs = np.asarray(observed, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 2:
        raise ValueError(f"expected [T, 2] observations, got {obs.shape}")
    if obs.shape[0] < 2:
        raise ValueError("linear extrapolation needs at least two observed points")
    t = np.arange(1, obs.shape[0] + 1, dtype=np.float64) if frames is None else np.asarray(frames, dtype=np.float64)
    A = np.stack([t, np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(A, obs, rcond=None)
    return coef


def linear_extrapolate(observed, horizon: int) -> np.ndarray:
    obs = np.asarray(observed, dtype=np.float64)
    coef = linear_fit(obs)
    t = np.arange(obs.shape[0] + 1, obs.shape[0] + horizon + 1, dtype=np.float64)
    return np.stack([t, np.ones_like(t)], axis=1) @ coef


@dataclass
class KalmanCV:
    """Constant-velocity filter over state ``[x, y, vx, vy]``.

    ``process_noise`` is the standard deviation of the white acceleration
    driving the model, ``obs_noise`` that of the position measurements.
    ``init="two_point"`` starts from the first two observations (position
    and finite-difference velocity); ``init="prior"`` starts from
    ``prior_mean`` / ``prior_cov`` before the first observation.
    """
    process_noise: float = 0.1
    obs_noise: float = 0.05
    dt: float = 1.0
    init: str = "two_point"
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None
    check_psd: bool = True
    history: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.init not in ("two_point", "prior"):
            raise ValueError(f"init must be 'two_point' or 'prior', got {self.init!r}")
        if self.process_noise < 0 or self.obs_noise < 0 or self.dt <= 0:
            raise ValueError("noise scales must be non-negative and dt positive")

    @property
    def F(self) -> np.ndarray:
        F = np.eye(4)
        F[0, 2] = F[1, 3] = self.dt
        return F

    @property
    def Q(self) -> np.ndarray:
        dt = self.dt
        g = np.array([[dt * dt / 2, 0.0], [0.0, dt * dt / 2], [dt, 0.0], [0.0, dt]])
        return self.process_noise ** 2 * g @ g.T

    @property
    def R(self) -> np.ndarray:
        return self.obs_noise ** 2 * np.eye(2)

    H = np.hstack([np.eye(2), np.zeros((2, 2))])

    def _psd(self, P: np.ndarray) -> np.ndarray:
        P = 0.5 * (P + P.T)
        if self.check_psd and np.linalg.eigvalsh(P).min() < -1e-10:
            raise FloatingPointError("covariance lost positive semi-definiteness")
        return P

    def predict_step(self, x: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        F = self.F
        return F @ x, self._psd(F @ P @ F.T + self.Q)

    def update_step(self, x: np.ndarray, P: np.ndarray, z) -> tuple[np.ndarray, np.ndarray]:
        H, R = self.H, self.R
        S = H @ P @ H.T + R
        K = np.linalg.solve(S.T, (P @ H.T).T).T
        x = x + K @ (np.asarray(z, dtype=np.float64) - H @ x)
        I_KH = np.eye(4) - K @ H
        P = I_KH @ P @ I_KH.T + K @ R @ K.T          # Joseph form
        return x, self._psd(P)

    def filter(self, observed) -> tuple[np.ndarray, np.ndarray]:
        """Filtered state and covariance after the last observation."""
        obs = np.asarray(observed, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != 2 or obs.shape[0] < 1:
            raise ValueError(f"expected [T>=1, 2] observations, got {obs.shape}")
        self.history = []
        r2 = self.obs_noise ** 2
        if self.init == "prior":
            x = np.zeros(4) if self.prior_mean is None else np.asarray(self.prior_mean, dtype=np.float64).copy()
            P = np.eye(4) * 1e3 if self.prior_cov is None else np.asarray(self.prior_cov, dtype=np.float64).copy()
            x, P = self.update_step(x, P, obs[0])
            first = 1
        elif obs.shape[0] == 1:
            # no velocity evidence: hold position
            x = np.concatenate([obs[0], np.zeros(2)])
            P = np.diag([r2, r2, 0.0, 0.0])
            first = 1
        else:
            dt = self.dt
            x = np.concatenate([obs[1], (obs[1] - obs[0]) / dt])
            P = np.zeros((4, 4))
            for k in (0, 1):
                P[k, k] = r2
                P[k, k + 2] = P[k + 2, k] = r2 / dt
                P[k + 2, k + 2] = 2 * r2 / dt ** 2
            self.history.append((np.concatenate([obs[0], np.zeros(2)]), np.diag([r2, r2, 0.0, 0.0])))
            first = 2
        self.history.append((x.copy(), P.copy()))
        for z in obs[first:]:
            x, P = self.predict_step(x, P)
            x, P = self.update_step(x, P, z)
            self.history.append((x.copy(), P.copy()))
        return x, P

    def predict(self, observed, horizon: int) -> np.ndarray:
        """Filter the observations, then run the transition open loop for ``horizon`` frames."""
        x, P = self.filter(observed)
        out = np.empty((horizon, 2))
        for k in range(horizon):
            x, P = self.predict_step(x, P)
            out[k] = x[:2]
        return out


def kalman_predict(observed, horizon: int, process_noise: float = 0.1, obs_noise: float = 0.05,
                   dt: float = 1.0) -> np.ndarray:
    return KalmanCV(process_noise, obs_noise, dt).predict(observed, horizon)


def predict_all(method: str, observed: np.ndarray, horizon: int, **kw) -> np.ndarray:
    """Apply a baseline to every agent of ``observed [N, T_obs, 2]``; returns ``[N, horizon, 2]``."""
    if method == "linear":
        fn = lambda o: linear_extrapolate(o, horizon)
    elif method == "kalman":
        kf = KalmanCV(**kw)
        fn = lambda o: kf.predict(o, horizon)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    obs = np.asarray(observed, dtype=np.float64)
    return np.stack([fn(o) for o in obs]) if len(obs) else np.zeros((0, horizon, 2))
