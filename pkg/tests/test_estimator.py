import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from trajcast.estimator import (BASELINES, ConstantVelocityKalman, LinearExtrapolation, NoiseLSTM,
                                TrajectoryForecaster, VanillaLSTM, check_scenarios)
from trajcast.model import ModelConfig
from trajcast.synthetic import generate_synthetic

TOY = ModelConfig.toy().to_dict()


@pytest.fixture(scope="module")
def scen():
    return generate_synthetic("ego_with_plan", 3, seed=2, n_pedestrians=2, n_vehicles=1)


def test_get_params_and_clone():
    est = TrajectoryForecaster(modalities=3, steps=7, toggles={"EF": False}, model_config=TOY)
    params = est.get_params()
    assert params["modalities"] == 3 and params["toggles"] == {"EF": False}
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=1e-3)
    assert est.lr == 1e-3
    assert VanillaLSTM().get_params()["steps"] == 20000
    assert "modalities" in NoiseLSTM().get_params()


def test_fit_predict_score(scen, tmp_path):
    est = TrajectoryForecaster(modalities=2, steps=3, batch_size=2, model_config=TOY)
    with pytest.raises(NotFittedError):
        est.predict(scen)
    est.fit(scen, run_dir=tmp_path)
    out = est.predict(scen)
    assert len(out) == 3 and out[0].trajectories.shape[:1] == (2,)
    assert est.score(scen) < 0
    assert (tmp_path / "final.bin").exists()
    est.save(tmp_path / "m.bin")
    other = TrajectoryForecaster(modalities=2, steps=3, batch_size=2, model_config=TOY).load(tmp_path / "m.bin")
    assert np.array_equal(other.predict(scen)[1].trajectories, out[1].trajectories)


def test_vanilla_lstm_is_deterministic_single_path(scen):
    est = VanillaLSTM(steps=2, batch_size=2, model_config=TOY).fit(scen)
    assert est.config_.toggles.label() == "none" and est.noise == "zero"
    a = est.predict(scen)
    assert a[0].trajectories.shape[0] == 1
    est.eval_seed = 99          # noise is zero, so the evaluation seed cannot matter
    assert np.array_equal(a[0].trajectories, est.predict(scen)[0].trajectories)


def test_baselines_predict_one_path_per_agent():
    s = generate_synthetic("lane_following_vehicle", 2, seed=0)
    for name in ("linear", "kalman"):
        sets = BASELINES[name]().fit().predict(s)
        assert sets[0].trajectories.shape == (1, 2, 6, 2)
        assert np.isfinite(sets[1].trajectories).all()


def test_constant_velocity_scenes_give_zero_error():
    from trajcast.data import AgentTrack, Scenario

    frames = np.arange(1, 11)
    tracks = [AgentTrack(i, frames, np.outer(frames, [1.0 + i, -0.5]) + i) for i in range(3)]
    s = Scenario(tuple(tracks), 4, 10, scenario_id="cv")
    assert LinearExtrapolation().fit().score([s]) > -1e-10
    assert ConstantVelocityKalman(obs_noise=1e-6).fit().score([s]) > -1e-9


def test_input_validation(scen):
    with pytest.raises(ValueError):
        check_scenarios([])
    with pytest.raises(TypeError):
        check_scenarios([1, 2])
    other = generate_synthetic("ego_with_plan", 1, seed=0, t_obs=4, t_pred=9)
    with pytest.raises(ValueError, match="disagree"):
        check_scenarios(scen + other)
    assert len(check_scenarios(scen[0])) == 1
