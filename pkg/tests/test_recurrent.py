import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajcast import tensor as T
from trajcast.gradcheck import check_gradients
from trajcast.recurrent import GRUCell, LSTMCell, gru_step, gru_unroll, lstm_step, lstm_unroll


def composite_lstm(cell, h, c, x):
    """Reference LSTM assembled from primitive ops (independent of the fused kernel)."""
    n = cell.hidden_size
    z = T.add(T.linear(x, cell.w_ih, cell.bias), T.linear(h, cell.w_hh))
    i = T.sigmoid(T.slice_cols(z, 0, n))
    f = T.sigmoid(T.slice_cols(z, n, 2 * n))
    g = T.tanh(T.slice_cols(z, 2 * n, 3 * n))
    o = T.sigmoid(T.slice_cols(z, 3 * n, 4 * n))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    return T.mul(o, T.tanh(c_new)), c_new


def composite_gru(cell, h, x):
    n = cell.hidden_size
    gx = T.linear(x, cell.w_ih, cell.b_ih)
    gh = T.linear(h, cell.w_hh, cell.b_hh)
    r = T.sigmoid(T.add(T.slice_cols(gx, 0, n), T.slice_cols(gh, 0, n)))
    u = T.sigmoid(T.add(T.slice_cols(gx, n, 2 * n), T.slice_cols(gh, n, 2 * n)))
    cand = T.tanh(T.add(T.slice_cols(gx, 2 * n, 3 * n), T.mul(r, T.slice_cols(gh, 2 * n, 3 * n))))
    one = T.ones(*u.shape)
    return T.add(T.mul(T.sub(one, u), h), T.mul(u, cand))


def _zero_out(cell):
    for p in cell.named_parameters().values():
        p.data[...] = 0.0


def test_lstm_zero_weights_give_zero_hidden():
    cell = LSTMCell(4, 5, np.random.default_rng(0))
    _zero_out(cell)
    h, c = cell.initial_state()
    h, c = lstm_step(cell, h, c, T.tensor(np.random.default_rng(1).normal(size=(1, 4))))
    assert np.array_equal(h.data, np.zeros((1, 5)))
    assert h.shape == c.shape == (1, 5)


def test_lstm_forget_bias_initialised_to_one():
    cell = LSTMCell(3, 4, np.random.default_rng(0))
    assert np.array_equal(cell.bias.data[0, 4:8], np.ones(4))
    k = 1 / np.sqrt(4)
    assert np.all(np.abs(cell.w_ih.data) <= k) and np.all(np.abs(cell.w_hh.data) <= k)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_lstm_hidden_bounded(seed):
    rng = np.random.default_rng(seed)
    cell = LSTMCell(3, 6, rng)
    for p in cell.named_parameters().values():
        p.data[...] = rng.normal(scale=3.0, size=p.shape)
    h, c = cell.initial_state(2)
    for _ in range(4):
        h, c = lstm_step(cell, h, c, T.tensor(rng.normal(scale=5.0, size=(2, 3))))
        assert np.all(np.abs(h.data) < 1.0)


def test_fused_lstm_matches_composite():
    rng = np.random.default_rng(2)
    cell = LSTMCell(3, 5, rng)
    h, c = cell.initial_state(2)
    hr, cr = h, c
    for _ in range(4):
        x = T.tensor(rng.normal(size=(2, 3)))
        h, c = lstm_step(cell, h, c, x)
        hr, cr = composite_lstm(cell, hr, cr, x)
    assert np.allclose(h.data, hr.data, rtol=0, atol=1e-14)
    assert np.allclose(c.data, cr.data, rtol=0, atol=1e-14)


def test_fused_gru_matches_composite():
    rng = np.random.default_rng(3)
    cell = GRUCell(3, 5, rng)
    h = hr = cell.initial_state(2)
    for _ in range(4):
        x = T.tensor(rng.normal(size=(2, 3)))
        h = gru_step(cell, h, x)
        hr = composite_gru(cell, hr, x)
    assert np.allclose(h.data, hr.data, rtol=0, atol=1e-14)


def test_lstm_three_step_gradient():
    rng = np.random.default_rng(4)
    cell = LSTMCell(2, 3, rng)
    xs = [T.tensor(rng.normal(size=(1, 2))) for _ in range(3)]

    def loss():
        hs, _ = lstm_unroll(cell, xs)
        return T.total(hs[-1])

    reports = check_gradients(loss, cell.named_parameters())
    assert max(r.worst for r in reports.values()) <= 1e-4


def test_gru_three_step_gradient():
    rng = np.random.default_rng(5)
    cell = GRUCell(2, 3, rng)
    xs = [T.tensor(rng.normal(size=(1, 2))) for _ in range(3)]
    reports = check_gradients(lambda: T.total(gru_unroll(cell, xs)[-1]), cell.named_parameters())
    assert max(r.worst for r in reports.values()) <= 1e-4


def test_gru_zero_weights_zero_state():
    cell = GRUCell(2, 4, np.random.default_rng(6))
    _zero_out(cell)
    h = gru_step(cell, cell.initial_state(), T.tensor([[1.5, -2.0]]))
    assert np.array_equal(h.data, np.zeros((1, 4)))


def test_gru_saturated_update_gate_copies_candidate():
    rng = np.random.default_rng(7)
    cell = GRUCell(2, 3, rng)
    cell.b_ih.data[0, 3:6] = 50.0  # update gate -> 1
    x = T.tensor(rng.normal(size=(1, 2)))
    h_prev = T.tensor(rng.normal(size=(1, 3)))
    h = gru_step(cell, h_prev, x).data
    gx = x.data @ cell.w_ih.data.T + cell.b_ih.data
    gh = h_prev.data @ cell.w_hh.data.T + cell.b_hh.data
    r = 1 / (1 + np.exp(-(gx[:, :3] + gh[:, :3])))
    cand = np.tanh(gx[:, 6:] + r * gh[:, 6:])
    assert np.allclose(h, cand, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gru_state_within_convex_hull(seed):
    rng = np.random.default_rng(seed)
    cell = GRUCell(2, 4, rng)
    h_prev = T.tensor(rng.uniform(-1, 1, (3, 4)))
    x = T.tensor(rng.normal(size=(3, 2)))
    h = gru_step(cell, h_prev, x).data
    gx = x.data @ cell.w_ih.data.T + cell.b_ih.data
    gh = h_prev.data @ cell.w_hh.data.T + cell.b_hh.data
    r = 1 / (1 + np.exp(-(gx[:, :4] + gh[:, :4])))
    cand = np.tanh(gx[:, 8:] + r * gh[:, 8:])
    lo = np.minimum(h_prev.data, cand) - 1e-15
    hi = np.maximum(h_prev.data, cand) + 1e-15
    assert np.all((h >= lo) & (h <= hi))


def test_unroll_equals_manual_threading():
    rng = np.random.default_rng(8)
    lcell, gcell = LSTMCell(2, 3, rng), GRUCell(2, 3, rng)
    xs = [T.tensor(rng.normal(size=(2, 2))) for _ in range(5)]
    hs, c_final = lstm_unroll(lcell, xs)
    h, c = lcell.initial_state(2)
    for k, x in enumerate(xs):
        h, c = lcell(h, c, x)
        assert np.array_equal(h.data, hs[k].data)
    assert np.array_equal(c.data, c_final.data)
    gs = gru_unroll(gcell, xs)
    g = gcell.initial_state(2)
    for k, x in enumerate(xs):
        g = gcell(g, x)
        assert np.array_equal(g.data, gs[k].data)


def test_shape_errors():
    cell = LSTMCell(2, 3, np.random.default_rng(0))
    h, c = cell.initial_state()
    with pytest.raises(T.DimensionError):
        lstm_step(cell, h, c, T.zeros(1, 5))
    with pytest.raises(T.DimensionError):
        lstm_step(cell, T.zeros(1, 4), c, T.zeros(1, 2))
    gcell = GRUCell(2, 3, np.random.default_rng(0))
    with pytest.raises(T.DimensionError):
        gru_step(gcell, T.zeros(1, 2), T.zeros(1, 2))
