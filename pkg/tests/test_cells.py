import numpy as np
import pytest

from rcnet import autodiff as ad
from rcnet import cells
from rcnet.autodiff import Node, ParamSet
from rcnet.errors import ShapeError

from conftest import scalar_gru_step, scalar_lstm_step, scalar_template_encode


def _scalar_lstm_weights(vals):
    kw = {name: Node(np.full((1, 1, 1, 1), v) if name.startswith("w")
                     else np.full(1, v))
          for name, v in vals.items()}
    return cells.ConvLstmWeights(k=1, **kw)


def _scalar_gru_weights(vals):
    kw = {name: Node(np.full((1, 1, 1, 1), v) if name.startswith("w")
                     else np.full(1, v))
          for name, v in vals.items()}
    return cells.ConvGruWeights(k=1, **kw)


def _rand_lstm_vals(r):
    return {name: r.normal() for g in cells.LSTM_GATES
            for name in (f"w_x{g}", f"w_h{g}", f"b_{g}")}


def _rand_gru_vals(r):
    return {name: r.normal() for g in cells.GRU_GATES
            for name in (f"w_x{g}", f"w_h{g}", f"b_{g}")}


class TestScalarFidelity:
    def test_lstm_step_matches_scalar_transcription(self, rng):
        for _ in range(30):
            vals = _rand_lstm_vals(rng)
            x, h0, c0 = rng.normal(size=3)
            w = _scalar_lstm_weights(vals)
            state = cells.ConvLstmState(Node(np.full((1, 1, 1), h0)),
                                        Node(np.full((1, 1, 1), c0)))
            h_node, new = cells.conv_lstm_step(Node(np.full((1, 1, 1), x)), state, w)
            want_h, want_c = scalar_lstm_step(x, h0, c0, vals)
            assert abs(h_node.value.item() - want_h) < 1e-12
            assert abs(new.c.value.item() - want_c) < 1e-12

    def test_gru_step_matches_scalar_transcription(self, rng):
        for _ in range(30):
            vals = _rand_gru_vals(rng)
            x, h0 = rng.normal(size=2)
            w = _scalar_gru_weights(vals)
            h_node = cells.conv_gru_step(Node(np.full((1, 1, 1), x)),
                                         Node(np.full((1, 1, 1), h0)), w)
            assert abs(h_node.value.item() - scalar_gru_step(x, h0, vals)) < 1e-12

    def test_template_encode_matches_scalar_transcription(self, rng):
        for _ in range(30):
            vals = _rand_lstm_vals(rng)
            x = rng.normal()
            w = _scalar_lstm_weights(vals)
            out = cells.template_encode(Node(np.full((1, 1, 1), x)), w)
            assert abs(out.value.item() - scalar_template_encode(x, vals)) < 1e-12


class TestMemoryRetention:
    def test_saturated_gates_hold_cell_state_10_steps(self):
        # f -> 1, i -> 0: c must persist within 1e-3 over 10 steps
        vals = {name: 0.0 for g in cells.LSTM_GATES
                for name in (f"w_x{g}", f"w_h{g}", f"b_{g}")}
        vals["b_f"] = 30.0
        vals["b_i"] = -30.0
        w = _scalar_lstm_weights(vals)
        c0 = 0.8
        state = cells.ConvLstmState(Node(np.zeros((1, 1, 1))),
                                    Node(np.full((1, 1, 1), c0)))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = Node(rng.normal(size=(1, 1, 1)))
            _, state = cells.conv_lstm_step(x, state, w)
        assert abs(state.c.value.item() - c0) < 1e-3

    def test_gru_carry_gate_holds_state_10_steps(self):
        vals = {name: 0.0 for g in cells.GRU_GATES
                for name in (f"w_x{g}", f"w_h{g}", f"b_{g}")}
        vals["b_z"] = 30.0  # z -> 1 keeps h_prev
        w = _scalar_gru_weights(vals)
        h = Node(np.full((1, 1, 1), 0.6))
        rng = np.random.default_rng(0)
        for _ in range(10):
            h = cells.conv_gru_step(Node(rng.normal(size=(1, 1, 1))), h, w)
        assert abs(h.value.item() - 0.6) < 1e-3


class TestInitAndBinding:
    def test_even_kernel_rejected(self):
        ps = ParamSet()
        with pytest.raises(ShapeError, match="odd"):
            cells.init_conv_lstm(ps, "c", 4, 8, 2, np.random.default_rng(0))

    def test_lstm_param_shapes(self):
        ps = ParamSet()
        cells.init_conv_lstm(ps, "c", 4, 8, 3, np.random.default_rng(0))
        assert ps["c.w_xi"].value.shape == (8, 4, 3, 3)
        assert ps["c.w_hc"].value.shape == (8, 8, 3, 3)
        assert ps["c.b_o"].value.shape == (8,)

    def test_forget_bias_initialized_positive(self):
        ps = ParamSet()
        cells.init_conv_lstm(ps, "c", 4, 8, 3, np.random.default_rng(0))
        assert np.all(ps["c.b_f"].value > 0)
        np.testing.assert_array_equal(ps["c.b_i"].value, np.zeros(8))

    def test_literal_coupling_uses_channel_vector(self):
        ps = ParamSet()
        cells.init_conv_lstm(ps, "c", 4, 8, 3, np.random.default_rng(0),
                             literal_coupling=True)
        assert ps["c.w_hc"].value.shape == (8,)
        w = cells.bind_lstm(ps.leaves(), "c", 3, literal_coupling=True)
        x = Node(np.random.default_rng(1).normal(size=(4, 6, 6)))
        h, state = cells.conv_lstm_step(x, cells.zero_state(8, 6, 6), w)
        assert h.value.shape == (8, 6, 6)

    def test_step_preserves_spatial_shape(self, rng):
        ps = ParamSet()
        cells.init_conv_lstm(ps, "c", 3, 5, 3, np.random.default_rng(0))
        w = cells.bind_lstm(ps.leaves(), "c", 3)
        x = Node(rng.normal(size=(3, 7, 7)))
        h, state = cells.conv_lstm_step(x, cells.zero_state(5, 7, 7), w)
        assert h.value.shape == (5, 7, 7) and state.c.value.shape == (5, 7, 7)

    def test_template_encode_shares_step_weights(self, rng):
        # zero state + saturated f/i wiring is the only difference: with
        # f ~ 0 and zero previous state a step equals the severed encoder
        ps = ParamSet()
        cells.init_conv_lstm(ps, "c", 3, 5, 3, np.random.default_rng(2))
        ps["c.b_f"].value[...] = -40.0
        leaves = ps.leaves()
        w = cells.bind_lstm(leaves, "c", 3)
        x = Node(rng.normal(size=(3, 6, 6)))
        stepped, _ = cells.conv_lstm_step(x, cells.zero_state(5, 6, 6), w)
        encoded = cells.template_encode(x, w)
        np.testing.assert_allclose(stepped.value, encoded.value, atol=1e-12)


def test_lstm_step_gradient_flow(rng):
    ps = ParamSet()
    cells.init_conv_lstm(ps, "c", 2, 3, 3, np.random.default_rng(0))
    x = rng.normal(size=(2, 4, 4))

    def fn(leaves):
        w = cells.bind_lstm(leaves, "c", 3)
        h, _ = cells.conv_lstm_step(Node(x), cells.zero_state(3, 4, 4), w)
        return ad.sum_all(h)

    assert ad.grad_check(fn, ps, samples_per_tensor=10) < 1e-5
