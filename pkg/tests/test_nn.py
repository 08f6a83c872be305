import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucan import nn
from ucan.errors import DomainError, NumericError, ParseError, ShapeError, StateError

import oracles


def _scalar_loss(model, x, weights):
    """A fixed random linear functional of the output, so every gradient entry is exercised."""
    return float(np.sum(nn.mlp_forward(model, x) * weights))


def random_model(rng, head=None):
    depth = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    head = head or rng.choice(["identity", "sigmoid", "leaky_relu"])
    model = nn.build_mlp(dims, head, rng)
    for layer in model.layers:
        layer.bias[:] = rng.normal(0, 0.5, layer.bias.shape)
    return model


class TestForward:
    def test_identity_layer(self):
        model = nn.MlpModel([nn.Layer(np.eye(2), np.zeros(2), "identity")])
        np.testing.assert_array_equal(nn.mlp_forward(model, [[1.0, 2.0]]), [[1.0, 2.0]])

    def test_zero_sigmoid_model_gives_half(self):
        rng = np.random.default_rng(0)
        model = nn.build_mlp([3, 4, 1], "sigmoid", rng)
        for layer in model.layers:
            layer.weight[:] = 0
        out = nn.mlp_forward(model, rng.normal(size=(5, 3)) * 100)
        np.testing.assert_array_equal(out, 0.5)

    def test_two_layer_leaky_hand_value(self):
        model = nn.MlpModel([
            nn.Layer(np.eye(2), np.zeros(2), "leaky_relu"),
            nn.Layer(np.array([[1.0, 1.0]]), np.zeros(1), "identity"),
        ])
        expected = oracles.leaky(-1.0) + oracles.leaky(3.0)
        assert nn.mlp_forward(model, [[-1.0, 3.0]])[0, 0] == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(2.8)

    def test_shape_mismatch(self):
        model = nn.identity_generator(3)
        with pytest.raises(ShapeError):
            nn.mlp_forward(model, np.zeros((2, 4)))

    def test_layer_chain_checked(self):
        with pytest.raises(ShapeError):
            nn.MlpModel([nn.Layer(np.zeros((3, 2)), np.zeros(3)), nn.Layer(np.zeros((1, 4)), np.zeros(1))])

    def test_builders_match_declared_architecture(self):
        rng = np.random.default_rng(1)
        g = nn.build_generator(7, rng)
        assert [l.weight.shape for l in g.layers] == [(512, 7), (512, 512), (7, 512)]
        assert [l.activation for l in g.layers] == ["leaky_relu", "leaky_relu", "identity"]
        d = nn.build_discriminator(7, rng)
        assert d.output_dim == 1 and d.layers[-1].activation == "sigmoid"
        assert d.input_dropout == 0.1
        assert nn.build_generator(400, rng).layers[0].out_dim == 800

    def test_xavier_bounds(self):
        layer = nn.xavier_layer(30, 50, "identity", np.random.default_rng(2))
        limit = math.sqrt(6 / 80)
        assert np.abs(layer.weight).max() <= limit
        assert np.abs(layer.weight).max() > 0.9 * limit
        assert not layer.bias.any()

    def test_dropout_only_in_training_mode(self):
        rng = np.random.default_rng(3)
        d = nn.build_discriminator(4, rng, hidden=8)
        x = rng.normal(size=(10, 4))
        np.testing.assert_array_equal(d(x), d(x))
        tape = nn.GradientTape()
        nn.mlp_forward(d, x, tape, np.random.default_rng(0))
        assert tape.dropout_mask is not None
        assert set(np.unique(tape.dropout_mask)) <= {0.0, 1.0 / 0.9}

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
    def test_sigmoid_outputs_strictly_inside_unit_interval(self, x, seed):
        d = nn.build_discriminator(3, np.random.default_rng(seed), hidden=6)
        p = d(np.array([x]))
        assert 0.0 < p[0, 0] < 1.0


class TestBackward:
    def test_sigmoid_scalar_derivative(self):
        model = nn.MlpModel([nn.Layer(np.zeros((1, 1)), np.zeros(1), "sigmoid")])
        tape = nn.GradientTape()
        nn.mlp_forward(model, [[1.0]], tape)
        nn.mlp_backward(model, tape, np.ones((1, 1)))
        assert tape.weight_grads[0][0, 0] == pytest.approx(0.25)
        assert tape.bias_grads[0][0] == pytest.approx(0.25)

    def test_zero_output_grad(self):
        rng = np.random.default_rng(4)
        model = random_model(rng)
        tape = nn.GradientTape()
        out = nn.mlp_forward(model, rng.normal(size=(3, model.input_dim)), tape)
        nn.mlp_backward(model, tape, np.zeros_like(out))
        assert all(not g.any() for g in tape.gradients())
        assert not tape.input_grad.any()

    def test_backward_without_forward(self):
        with pytest.raises(StateError):
            nn.mlp_backward(nn.identity_generator(2), nn.GradientTape(), np.zeros((1, 2)))

    def test_gradient_shapes_mirror_parameters(self):
        rng = np.random.default_rng(5)
        model = random_model(rng)
        tape = nn.GradientTape()
        out = nn.mlp_forward(model, rng.normal(size=(4, model.input_dim)), tape)
        nn.mlp_backward(model, tape, np.ones_like(out))
        assert [g.shape for g in tape.gradients()] == [p.shape for p in model.parameters()]
        tape.zero()
        assert all(not g.any() for g in tape.gradients())

    def test_finite_differences_single(self):
        rng = np.random.default_rng(6)
        model = random_model(rng, head="sigmoid")
        x = rng.normal(size=(5, model.input_dim))
        w = rng.normal(size=(5, model.output_dim))
        tape = nn.GradientTape()
        nn.mlp_forward(model, x, tape)
        nn.mlp_backward(model, tape, w)
        numeric = oracles.central_difference(lambda: _scalar_loss(model, x, w), model.parameters())
        for a, n in zip(tape.gradients(), numeric):
            np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-8)

    def test_logit_grad_matches_bce_derivative(self):
        # d/dz of -[t log s(z) + (1-t) log(1-s(z))] is s(z) - t
        rng = np.random.default_rng(7)
        model = nn.build_mlp([3, 4, 1], "sigmoid", rng)
        x = rng.normal(size=(6, 3))
        t = (rng.random((6, 1)) < 0.5).astype(float)

        def bce():
            p = nn.mlp_forward(model, x)
            return float(-np.sum(t * np.log(p) + (1 - t) * np.log(1 - p)))

        tape = nn.GradientTape()
        p = nn.mlp_forward(model, x, tape)
        nn.mlp_backward(model, tape, p - t, logit_grad=True)
        numeric = oracles.central_difference(bce, model.parameters())
        for a, n in zip(tape.gradients(), numeric):
            np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-8)

    def test_input_grad_finite_difference(self):
        rng = np.random.default_rng(8)
        model = random_model(rng)
        x = rng.normal(size=(3, model.input_dim))
        w = rng.normal(size=(3, model.output_dim))
        tape = nn.GradientTape()
        nn.mlp_forward(model, x, tape)
        nn.mlp_backward(model, tape, w)
        (numeric,) = oracles.central_difference(lambda: _scalar_loss(model, x, w), [x])
        np.testing.assert_allclose(tape.input_grad, numeric, rtol=1e-4, atol=1e-8)


class TestOptimizer:
    def _one_param_model(self, w):
        return nn.MlpModel([nn.Layer(np.array([[w]]), np.zeros(1), "identity")])

    def _tape(self, gw, gb=0.0):
        tape = nn.GradientTape()
        tape.weight_grads = [np.array([[gw]])]
        tape.bias_grads = [np.array([gb])]
        return tape

    def test_sgd_step(self):
        model = self._one_param_model(1.0)
        nn.Optimizer("sgd", lr=0.1).step(model, self._tape(2.0))
        assert model.layers[0].weight[0, 0] == pytest.approx(0.8)

    def test_sgd_zero_gradient(self):
        model = self._one_param_model(1.0)
        opt = nn.Optimizer("sgd", lr=0.1)
        opt.step(model, self._tape(0.0))
        assert model.layers[0].weight[0, 0] == 1.0
        assert opt.step_count == 1

    @pytest.mark.parametrize("g, expected", [(2.0, 0.9999000000005), (-3e-6, 1.0000996677740863)])
    def test_adam_first_step(self, g, expected):
        model = self._one_param_model(1.0)
        nn.Optimizer("adam", lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8).step(model, self._tape(g))
        oracle = oracles.adam_first_step(1.0, g, 1e-4, 0.5, 0.999, 1e-8)
        assert oracle == pytest.approx(expected, abs=1e-15)
        assert model.layers[0].weight[0, 0] == pytest.approx(oracle, abs=1e-15)
        # bias-corrected first step moves by lr * g / (|g| + eps)
        assert 1.0 - model.layers[0].weight[0, 0] == pytest.approx(1e-4 * g / (abs(g) + 1e-8), rel=1e-6)

    def test_non_finite_gradient_names_layer(self):
        model = nn.MlpModel([nn.Layer(np.eye(2), np.zeros(2)), nn.Layer(np.eye(2), np.zeros(2))])
        tape = nn.GradientTape()
        tape.weight_grads = [np.zeros((2, 2)), np.array([[0.0, np.nan], [0.0, 0.0]])]
        tape.bias_grads = [np.zeros(2), np.zeros(2)]
        with pytest.raises(NumericError, match="layer 1"):
            nn.Optimizer().step(model, tape)

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            nn.Optimizer("rmsprop")


class TestCosine:
    @pytest.mark.parametrize("a, b, expected", [
        ((1, 0), (0, 1), 0.0),
        ((2, 0), (5, 0), 1.0),
        ((1, 1), (1, 0), 1 / math.sqrt(2)),
    ])
    def test_examples(self, a, b, expected):
        assert nn.cosine_similarity(a, b) == pytest.approx(expected, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(DomainError):
            nn.cosine_similarity((0, 0), (1, 0))

    @given(
        st.lists(st.floats(-100, 100), min_size=4, max_size=4),
        st.lists(st.floats(-100, 100), min_size=4, max_size=4),
        st.floats(1e-3, 1e3),
        st.floats(1e-3, 1e3),
    )
    def test_scale_invariance_and_symmetry(self, a, b, s, t):
        a, b = np.array(a), np.array(b)
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        c = nn.cosine_similarity(a, b)
        assert -1.0 <= c <= 1.0
        assert nn.cosine_similarity(s * a, t * b) == pytest.approx(c, abs=1e-12)
        assert nn.cosine_similarity(b, a) == pytest.approx(c, abs=1e-15)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        model = nn.build_discriminator(5, rng, hidden=7)
        path = tmp_path / "m.json"
        nn.save_model(model, path)
        back = nn.load_model(path)
        for p, q in zip(model.parameters(), back.parameters()):
            assert p.tobytes() == q.tobytes()
        assert back.input_dropout == model.input_dropout
        assert [l.activation for l in back.layers] == [l.activation for l in model.layers]

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"layers": [{"in": 2}]}))
        with pytest.raises(ParseError):
            nn.load_model(path)
        path.write_text("{nope")
        with pytest.raises(ParseError):
            nn.load_model(path)


def test_forward_deterministic_given_seed():
    a = nn.build_generator(4, np.random.default_rng(11), hidden=8)
    b = nn.build_generator(4, np.random.default_rng(11), hidden=8)
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.tobytes() == q.tobytes()
