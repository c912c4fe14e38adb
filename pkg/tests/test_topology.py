"""Wiring, construction determinism, and propagation tests."""

import numpy as np
import pytest

from symstdp.neurodyn import ContractViolation
from symstdp.topology import (
    INHIBITORY,
    NetworkConfig,
    SynapseMatrix,
    build_network,
    propagate,
)

EMPTY = np.array([], dtype=np.int64)


def small_config(**kw):
    defaults = dict(n_input=16, n_hidden=8, n_labels=4, seed=1)
    defaults.update(kw)
    return NetworkConfig(**defaults)


class TestConstruction:
    def test_shapes_and_fixed_wiring(self):
        net = build_network(small_config())
        assert net.w_in.weights.shape == (16, 8)
        assert net.w_out.weights.shape == (8, 4)
        assert net.w_ei.weights.shape == (8, 8)
        # one-to-one drive of the inhibitory partner
        np.testing.assert_array_equal(net.w_ei.weights, np.eye(8) * 10.4)
        # all-but-self feedback
        assert (np.diag(net.w_ie.weights) == 0.0).all()
        off_diag = net.w_ie.weights[~np.eye(8, dtype=bool)]
        assert (off_diag == 17.4).all()
        assert net.w_ie.kind == INHIBITORY

    def test_plastic_init_range_and_determinism(self):
        cfg = small_config(seed=7)
        a = build_network(cfg)
        b = build_network(cfg)
        np.testing.assert_array_equal(a.w_in.weights, b.w_in.weights)
        np.testing.assert_array_equal(a.w_out.weights, b.w_out.weights)
        assert a.w_in.weights.min() >= 0.0
        assert a.w_in.weights.max() < 0.3 * 1.0
        assert a.w_out.weights.max() < 0.3 * 8.0
        c = build_network(small_config(seed=8))
        assert not np.array_equal(a.w_in.weights, c.w_in.weights)

    def test_matrices_draw_independent_streams(self):
        # same shape would otherwise expose key reuse
        cfg = NetworkConfig(n_input=8, n_hidden=8, n_labels=8, seed=3)
        net = build_network(cfg)
        assert not np.array_equal(net.w_in.weights, net.w_out.weights / 8.0)

    def test_direct_topology(self):
        net = build_network(small_config(hidden_blocks=0))
        assert not net.has_hidden
        assert net.hidden_exc is None
        assert net.w_out is None
        assert net.w_in.weights.shape == (16, 4)
        assert net.w_in.w_max == 8.0

    def test_output_layer_threshold(self):
        net = build_network(small_config())
        # fixed at v_th_const + frozen theta = -72 + 20
        assert net.config.sl_params.v_th_const + net.sl.theta[0] == -52.0
        assert not net.config.theta_sl.enabled

    def test_amplitude_defaults_scale_with_range(self):
        cfg = small_config()
        assert cfg.stdp_in.a_plus == pytest.approx(0.01)
        assert cfg.stdp_out.a_plus == pytest.approx(0.08)

    def test_two_hidden_blocks_rejected(self):
        with pytest.raises(ContractViolation):
            small_config(hidden_blocks=2)


class TestSynapseMatrix:
    def test_range_invariant_checked(self):
        with pytest.raises(ContractViolation):
            SynapseMatrix(np.array([[-0.1]]), w_max=1.0, plastic=True)
        with pytest.raises(ContractViolation):
            SynapseMatrix(np.array([[1.5]]), w_max=1.0, plastic=True)

    def test_inhibitory_cannot_be_plastic(self):
        with pytest.raises(ContractViolation):
            SynapseMatrix(np.zeros((2, 2)), w_max=1.0, plastic=True, kind=INHIBITORY)


class TestPropagation:
    def test_single_input_spike_copies_row(self):
        net = build_network(small_config())
        d = propagate(net, np.array([3]), EMPTY, EMPTY)
        np.testing.assert_array_equal(d.hidden_g_exc, net.w_in.weights[3, :])
        assert (d.hidden_g_inh == 0.0).all()
        assert (d.sl_g_exc == 0.0).all()

    def test_multiple_spikes_sum_rows_in_order(self):
        net = build_network(small_config())
        d = propagate(net, np.array([1, 4, 9]), EMPTY, EMPTY)
        expected = np.zeros(8)
        for i in (1, 4, 9):
            expected += net.w_in.weights[i, :]
        np.testing.assert_array_equal(d.hidden_g_exc, expected)

    def test_hidden_spike_drives_partner_and_output(self):
        net = build_network(small_config())
        d = propagate(net, EMPTY, np.array([2]), EMPTY)
        expected_inh_drive = np.zeros(8)
        expected_inh_drive[2] = 10.4
        np.testing.assert_array_equal(d.inh_g_exc, expected_inh_drive)
        np.testing.assert_array_equal(d.sl_g_exc, net.w_out.weights[2, :])

    def test_inhibitory_spike_lands_in_inhibitory_channel(self):
        net = build_network(small_config())
        d = propagate(net, EMPTY, EMPTY, np.array([5]))
        np.testing.assert_array_equal(d.hidden_g_inh, net.w_ie.weights[5, :])
        assert d.hidden_g_inh[5] == 0.0
        assert (d.hidden_g_exc == 0.0).all()

    def test_direct_topology_routes_input_to_output(self):
        net = build_network(small_config(hidden_blocks=0))
        d = propagate(net, np.array([0, 15]))
        np.testing.assert_array_equal(
            d.sl_g_exc, net.w_in.weights[0, :] + net.w_in.weights[15, :]
        )
        assert d.hidden_g_exc is None
