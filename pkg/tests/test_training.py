import csv
import json

import numpy as np
import pytest

from trajcast.checkpoint import load_params
from trajcast.model import ModelConfig, TrajectoryNet
from trajcast.optim import Adam
from trajcast.synthetic import generate_synthetic
from trajcast.training import (ConfigError, TrainConfig, TrainingDiverged, _batches, load_config,
                               params_checksum, split_leave_one_out, train)
from trajcast import tensor as T


def small_config(**kw):
    base = dict(steps=6, batch_size=2, modalities=2, seed=0, model=ModelConfig.toy())
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def scen():
    return generate_synthetic("ego_with_plan", 4, seed=0, n_pedestrians=2, n_vehicles=1)


def test_same_seed_same_loss_trace(scen):
    _, a = train(small_config(), scen)
    _, b = train(small_config(), scen)
    assert a.losses == b.losses and len(a.losses) == 6
    assert a.final_ade == b.final_ade
    _, c = train(small_config(seed=1), scen)
    assert c.losses != a.losses


def test_loss_decreases_on_tiny_problem(scen):
    _, log = train(small_config(steps=150, modalities=1, noise="zero", lr=5e-3, batch_size=4), scen[:2])
    assert np.mean(log.losses[-10:]) < 0.5 * np.mean(log.losses[:10])


def test_run_directory_contents(tmp_path, scen):
    cfg = small_config(checkpoint_every=3, eval_every=2)
    net, log = train(cfg, scen, run_dir=tmp_path)
    snap = json.loads((tmp_path / "config.snapshot").read_text())
    assert load_config(tmp_path / "config.snapshot") == cfg
    assert snap["toggles"]["EF"] is True
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert [r["step"] for r in rows] == [str(k) for k in range(1, 7)]
    assert rows[1]["ade"] != "" and rows[0]["ade"] == ""
    assert sorted(p.name for p in tmp_path.glob("*.bin")) == ["ckpt_3.bin", "ckpt_6.bin", "final.bin"]
    final = load_params(tmp_path / "final.bin")
    assert params_checksum(final) == log.checksums[6] == params_checksum(net.state_dict())
    assert sorted(log.evals) == [2, 4, 6]
    assert log.winners.sum() > 0


def test_run_log_config_is_frozen(scen):
    _, log = train(small_config(steps=1), scen)
    with pytest.raises(TypeError):
        log.config["lr"] = 1.0
    with pytest.raises(TypeError):
        log.config["toggles"]["EF"] = False


def test_non_finite_loss_aborts_with_step_and_group(scen):
    cfg = small_config(steps=3)
    net = TrajectoryNet(cfg.model, seed=0)
    net.named_parameters()["pred.head.bias"].data[...] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        train(cfg, scen, net=net)
    assert exc.value.step == 1
    groups = {".".join(n.split(".")[:2]) for n in net.named_parameters()}
    assert exc.value.group in groups
    assert not np.isfinite(exc.value.norm)
    assert "step 1" in str(exc.value)


def test_segment_max_routes_nan_gradient():
    x = T.tensor(np.array([[1.0, 2.0], [np.nan, 0.0], [np.nan, 5.0]]), requires_grad=True)
    y = T.segment_max(x, [0])
    T.backward(T.total(y))
    assert np.isnan(y.data[0, 0]) and y.data[0, 1] == 5.0
    assert np.array_equal(x.grad, [[0, 0], [1, 0], [0, 1]])


def test_batches_visit_every_scenario_each_pass():
    stream = _batches(5, 2, np.random.default_rng(0))
    seen = [i for _ in range(5) for i in next(stream)]
    assert sorted(seen) == sorted(list(range(5)) * 2)
    for _ in range(20):
        b = next(stream)
        assert len(set(b)) == len(b) == 2
    assert next(_batches(1, 4, np.random.default_rng(0))) == [0]


def test_config_overrides_and_errors(tmp_path):
    cfg = TrainConfig().with_overrides(["toggles.EF=false", "lr=0.001", "coordinate_frame=world",
                                        "model.embed_dim=8"])
    assert cfg.toggles.EF is False and cfg.lr == 0.001
    assert cfg.coordinate_frame == "world" and cfg.model.embed_dim == 8
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (["nope=1"], ["toggles.XF=true"], ["lr"], ["toggles.EF=maybe"], ["variety_min=global"],
                ["model.coordinate_frame=polar"], ["batch_size=0"]):
        with pytest.raises(ConfigError):
            TrainConfig().with_overrides(bad)
    (tmp_path / "c.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    (tmp_path / "d.json").write_text("{bad")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "d.json")


def test_empty_training_set_rejected():
    with pytest.raises(ConfigError):
        train(small_config(), [])


def test_leave_one_out_split():
    groups = {"a": [1, 2], "b": [3], "c": [4, 5]}
    tr, te = split_leave_one_out(groups, "b")
    assert tr == [1, 2, 4, 5] and te == [3]
    with pytest.raises(ConfigError):
        split_leave_one_out(groups, "z")


def test_adam_matches_reference_update():
    p = T.tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    m = v = np.zeros(2)
    ref = p.data.copy()
    for k in range(1, 4):
        g = np.array([0.5, -1.5]) * k
        p.grad = g.reshape(1, 2).copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.1 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)


def test_adam_minimises_quadratic():
    x = T.tensor(np.array([[5.0, -3.0]]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        T.backward(T.total(T.square(x)))
        opt.step()
    assert np.abs(x.data).max() < 1e-3
