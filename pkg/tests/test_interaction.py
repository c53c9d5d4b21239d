import itertools

import numpy as np
import pytest

from trajcast import tensor as T
from trajcast.interaction import ABLATION_ROWS, InteractionNet, Toggles, masked
from trajcast.recurrent import LSTMCell, lstm_unroll
from trajcast.tensor import DimensionError


@pytest.fixture
def ain():
    return InteractionNet(np.random.default_rng(0), embed_dim=6, hidden_dim=5, gru_hidden=7)


def test_all_720_permutations_leave_pooled_features_unchanged(ain):
    rng = np.random.default_rng(1)
    pos = rng.normal(size=(6, 2)) * 5
    hid = rng.normal(size=(6, 5))
    way = rng.normal(size=(6, 2)) * 5
    o0 = ain.position_feature(T.tensor(pos)).data
    r0 = ain.tracking_feature(T.tensor(hid)).data
    f0 = ain.ego_plan_feature(way).data
    count = 0
    for perm in itertools.permutations(range(6)):
        p = list(perm)
        assert np.array_equal(ain.position_feature(T.tensor(pos[p])).data, o0)
        assert np.array_equal(ain.tracking_feature(T.tensor(hid[p])).data, r0)
        assert np.array_equal(ain.ego_plan_feature(way[p]).data, f0)
        count += 1
    assert count == 720


def test_pooling_matches_per_group_max(ain):
    rng = np.random.default_rng(2)
    pos = rng.normal(size=(7, 2))
    got = ain.position_feature(T.tensor(pos), starts=[0, 3, 4]).data
    emb = pos @ ain.pos.weight.data.T + ain.pos.bias.data
    expect = np.stack([emb[0:3].max(0), emb[3:4].max(0), emb[4:7].max(0)])
    np.testing.assert_array_equal(got, expect)


def test_empty_groups_rejected(ain):
    with pytest.raises(ValueError):
        ain.position_feature(T.tensor(np.zeros((3, 2))), starts=[0, 3])
    with pytest.raises(ValueError):
        ain.ego_plan_feature(np.zeros((0, 2)))


def test_identity_swap_seen_by_tracking_not_position(ain):
    """Two agents that exchange lanes mid-way versus two that bounce back.

    The position sets agree frame by frame, so the position feature cannot
    tell the scenes apart; the tracking feature pools per-agent histories
    and does.
    """
    t = np.arange(6, dtype=np.float64)
    y = 1 - 0.4 * t                                   # lanes meet between frames 2 and 3
    crossing = np.stack([np.stack([t, y], 1), np.stack([t, -y], 1)])
    bounce = np.stack([np.stack([t, np.abs(y)], 1), np.stack([t, -np.abs(y)], 1)])
    for k in range(6):
        assert np.array_equal(ain.position_feature(T.tensor(crossing[:, k])).data,
                              ain.position_feature(T.tensor(bounce[:, k])).data)
    cell = LSTMCell(2, 5, np.random.default_rng(3))

    def pooled_track(traj):
        hs = lstm_unroll(cell, [T.tensor(traj[:, k]) for k in range(traj.shape[1])])[0]
        return ain.tracking_feature(hs[-1]).data

    assert not np.allclose(pooled_track(crossing), pooled_track(bounce))


def test_ego_motion_zero_without_previous(ain):
    m0 = ain.ego_motion_feature(np.array([[3.0, 4.0]]))
    np.testing.assert_array_equal(m0.data, ain.motion.bias.data.reshape(1, -1))
    m1 = ain.ego_motion_feature(np.array([[3.0, 4.0]]), np.array([[3.0, 4.0]]))
    np.testing.assert_array_equal(m0.data, m1.data)


def test_fuse_shapes_and_validation(ain):
    g = 3
    o, r, m = (T.tensor(np.random.default_rng(k).normal(size=(g, 6))) for k in range(3))
    st, h = ain.fuse(o, r, m, ain.initial_state(g))
    assert st.shape == (g, 18) and h.shape == (g, 7)
    fst = ain.assemble_fst(ain.zero_block(g), st)
    assert fst.shape == (g, ain.fst_dim) and not fst.data[:, :6].any()
    with pytest.raises(DimensionError):
        ain.fuse(T.tensor(np.zeros((g, 5))), r, m, ain.initial_state(g))


def test_masked_zeroes_rows_and_gradient():
    x = T.tensor(np.ones((3, 2)), requires_grad=True)
    y = masked(x, np.array([True, False, True]))
    T.backward(T.total(y))
    assert np.array_equal(y.data[1], [0, 0])
    assert np.array_equal(x.grad, [[1, 1], [0, 0], [1, 1]])


def test_toggles_and_rows():
    assert Toggles().label() == "PF+TF+EMF+ETF+EF"
    assert Toggles.all_off().label() == "none"
    names = [n for n, _ in ABLATION_ROWS]
    assert names == ["Baseline", "Our-v1", "Our-v2", "Our-v3", "Our-v4", "Our-full"]
    # each row switches on exactly one more feature, in PF, TF, EMF, ETF, EF order
    on = [sum(t.as_dict().values()) for _, t in ABLATION_ROWS]
    assert on == [0, 1, 2, 3, 4, 5]
