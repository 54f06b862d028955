"""Wealth recursion and its reverse-mode adjoint."""

import numpy as np
import pytest

from folionet.market import ReturnPathSet
from folionet.policy import NetTopology, init_parameters
from folionet.wealth import (
    InvestmentHorizon,
    WealthSimError,
    backprop_through_time,
    roll_forward,
    terminal_wealth_csv,
)


def _path_set(gross: np.ndarray, dt: float) -> ReturnPathSet:
    labels = tuple(f"a{i}" for i in range(gross.shape[2]))
    return ReturnPathSet(
        gross_returns=gross, dt=dt, asset_labels=labels, provenance="simulated"
    )


def _uniform_net(n_assets: int, hidden=(1, 2)) -> "PolicyNetwork":
    topo = NetTopology(hidden_layers=hidden[0], hidden_width=hidden[1], n_assets=n_assets)
    net = init_parameters(topo, seed=0)
    return net.with_theta(np.zeros(topo.n_parameters()))


def test_single_step_arithmetic():
    # (100 + 10) invested 50/50 in returns (1.3, 0.7) grows by 1.0.
    horizon = InvestmentHorizon(T=1.0, N_rb=1, w0=100.0, contributions=10.0)
    gross = np.array([[[1.3, 0.7]]])
    batch = roll_forward(_uniform_net(2), horizon, _path_set(gross, 1.0))
    assert batch.terminal_wealth[0] == pytest.approx(110.0, abs=1e-12)


def test_unit_returns_conserve_cash():
    rng = np.random.default_rng(1)
    horizon = InvestmentHorizon(
        T=2.0, N_rb=4, w0=50.0, contributions=np.array([1.0, 2.0, 3.0, 4.0])
    )
    gross = np.ones((16, 4, 3))
    topo = NetTopology(hidden_layers=2, hidden_width=5, n_assets=3)
    net = init_parameters(topo, seed=7)
    net = net.with_theta(rng.standard_normal(topo.n_parameters()))
    batch = roll_forward(net, horizon, _path_set(gross, 0.5))
    assert np.allclose(batch.terminal_wealth, 60.0, atol=1e-10)


def test_hand_computed_recursion():
    # Two annual steps at 5%: ((120+12)*1.05 + 12)*1.05 = 158.13.
    horizon = InvestmentHorizon(T=2.0, N_rb=2, w0=120.0, contributions=12.0)
    gross = np.full((1, 2, 2), 1.05)
    batch = roll_forward(_uniform_net(2), horizon, _path_set(gross, 1.0))
    assert batch.terminal_wealth[0] == pytest.approx(158.13, abs=1e-10)


def test_wealth_blind_policy_is_linear_in_w0():
    # With the wealth feature scaled away and no contributions, terminal
    # wealth is proportional to w0.
    topo = NetTopology(hidden_layers=1, hidden_width=4, n_assets=2)
    net = init_parameters(topo, seed=5, feature_scale=np.array([1.0, 0.0]))
    rng = np.random.default_rng(3)
    gross = np.exp(0.05 * rng.standard_normal((32, 4, 2)))
    paths = _path_set(gross, 0.25)
    one = roll_forward(net, InvestmentHorizon(T=1.0, N_rb=4, w0=100.0), paths)
    two = roll_forward(net, InvestmentHorizon(T=1.0, N_rb=4, w0=200.0), paths)
    assert np.allclose(two.terminal_wealth, 2.0 * one.terminal_wealth, rtol=1e-12)


def test_batch_decomposition_matches_full_run():
    rng = np.random.default_rng(9)
    gross = np.exp(0.1 * rng.standard_normal((10, 3, 2)))
    paths = _path_set(gross, 1.0)
    horizon = InvestmentHorizon(T=3.0, N_rb=3, w0=10.0)
    net = init_parameters(NetTopology(hidden_layers=1, hidden_width=3, n_assets=2), seed=2)
    full = roll_forward(net, horizon, paths).terminal_wealth
    head = roll_forward(net, horizon, paths, np.arange(4)).terminal_wealth
    tail = roll_forward(net, horizon, paths, np.arange(4, 10)).terminal_wealth
    assert np.allclose(np.concatenate([head, tail]), full, rtol=1e-14)


def test_terminal_wealth_stays_positive():
    rng = np.random.default_rng(11)
    for trial in range(5):
        gross = np.exp(rng.standard_normal((64, 6, 3)))  # wild but positive
        paths = _path_set(gross, 0.5)
        horizon = InvestmentHorizon(T=3.0, N_rb=6, w0=1.0)
        net = init_parameters(
            NetTopology(hidden_layers=1, hidden_width=4, n_assets=3), seed=trial
        )
        batch = roll_forward(net, horizon, paths)
        assert np.all(batch.terminal_wealth > 0.0)


def test_bptt_matches_finite_differences():
    rng = np.random.default_rng(13)
    topo = NetTopology(hidden_layers=2, hidden_width=4, n_assets=3)
    net = init_parameters(topo, seed=17)
    gross = np.exp(0.08 * rng.standard_normal((8, 5, 3)) + 0.01)
    paths = _path_set(gross, 0.2)
    horizon = InvestmentHorizon(T=1.0, N_rb=5, w0=1.0, contributions=0.05)
    d_terminal = rng.standard_normal(8)

    batch = roll_forward(net, horizon, paths)
    grad = backprop_through_time(net, batch, d_terminal)

    h = 1e-6
    fd = np.zeros_like(grad)
    for k in range(net.theta.size):
        vals = []
        for sign in (+1.0, -1.0):
            theta = net.theta.copy()
            theta[k] += sign * h
            out = roll_forward(net.with_theta(theta), horizon, paths, retain=False)
            vals.append(float((d_terminal * out.terminal_wealth).sum()))
        fd[k] = (vals[0] - vals[1]) / (2.0 * h)
    scale = max(1.0, float(np.abs(fd).max()))
    assert np.abs(grad - fd).max() / scale < 1e-6


def test_zero_cotangent_gives_zero_gradient():
    gross = np.exp(0.05 * np.random.default_rng(0).standard_normal((4, 3, 2)))
    paths = _path_set(gross, 1.0)
    horizon = InvestmentHorizon(T=3.0, N_rb=3, w0=5.0)
    net = init_parameters(NetTopology(hidden_layers=1, hidden_width=3, n_assets=2), seed=1)
    batch = roll_forward(net, horizon, paths)
    grad = backprop_through_time(net, batch, np.zeros(4))
    assert np.all(grad == 0.0)


def test_backprop_requires_retained_records():
    gross = np.ones((3, 2, 2))
    paths = _path_set(gross, 1.0)
    horizon = InvestmentHorizon(T=2.0, N_rb=2, w0=1.0)
    net = _uniform_net(2)
    batch = roll_forward(net, horizon, paths, retain=False)
    assert batch.records is None
    with pytest.raises(WealthSimError, match="forward pass not retained"):
        backprop_through_time(net, batch, np.ones(3))


def test_d_terminal_shape_checked():
    gross = np.ones((3, 2, 2))
    paths = _path_set(gross, 1.0)
    horizon = InvestmentHorizon(T=2.0, N_rb=2, w0=1.0)
    net = _uniform_net(2)
    batch = roll_forward(net, horizon, paths)
    with pytest.raises(WealthSimError):
        backprop_through_time(net, batch, np.ones(5))


def test_roll_forward_input_validation():
    gross = np.ones((3, 2, 2))
    paths = _path_set(gross, 1.0)
    net = _uniform_net(2)
    with pytest.raises(WealthSimError, match="periods"):
        roll_forward(net, InvestmentHorizon(T=3.0, N_rb=3, w0=1.0), paths)
    horizon = InvestmentHorizon(T=2.0, N_rb=2, w0=1.0)
    with pytest.raises(WealthSimError, match="out of range"):
        roll_forward(net, horizon, paths, np.array([0, 3]))


def test_horizon_validation():
    with pytest.raises(WealthSimError):
        InvestmentHorizon(T=0.0, N_rb=1, w0=1.0)
    with pytest.raises(WealthSimError):
        InvestmentHorizon(T=1.0, N_rb=0, w0=1.0)
    with pytest.raises(WealthSimError):
        InvestmentHorizon(T=1.0, N_rb=1, w0=0.0)
    with pytest.raises(WealthSimError):
        InvestmentHorizon(T=1.0, N_rb=2, w0=1.0, contributions=-1.0)
    with pytest.raises(WealthSimError):
        InvestmentHorizon(T=1.0, N_rb=2, w0=1.0, contributions=np.ones(3))
    with pytest.raises(WealthSimError):
        InvestmentHorizon(T=1.0, N_rb=2, w0=1.0, t0=0.5)


def test_rebalance_times_grid():
    horizon = InvestmentHorizon(T=1.0, N_rb=4, w0=1.0)
    assert np.allclose(horizon.rebalance_times(), [0.0, 0.25, 0.5, 0.75])
    assert horizon.dt == pytest.approx(0.25)


def test_terminal_wealth_csv_round_trip(tmp_path):
    values = np.array([100.0, 99.123456789012, 3.5e-4])
    path = tmp_path / "tw.csv"
    terminal_wealth_csv(values, str(path))
    loaded = np.loadtxt(str(path))
    assert np.allclose(loaded, values, rtol=1e-11)
