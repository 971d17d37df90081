import numpy as np
import pytest

from auxlearn import model as M
from auxlearn.curation import LabeledExample
from auxlearn.errors import DomainError, ParseError
from auxlearn.loss import compute_class_weights, softmax

from oracles import max_rel_error, numeric_grad


def random_case(rng, activation="tanh"):
    dims = [int(rng.integers(2, 9))]
    dims += [int(rng.integers(2, 7)) for _ in range(int(rng.integers(0, 2)))]
    dims.append(int(rng.integers(2, 4)))
    model = M.init_model(dims, activation, int(rng.integers(1 << 31)))
    for b in model.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    n = int(rng.integers(1, 5))
    x = rng.uniform(-1, 1, size=(n, dims[0]))
    y = np.eye(dims[-1])[rng.integers(dims[-1], size=n)]
    weights = compute_class_weights(rng.uniform(0.5, 10, size=dims[-1]))
    return model, x, y, weights


def end_to_end_check(model, x, y, kind, weights, h=1e-5):
    probs, cache = M.forward(model, x)
    grads = M.backward(model, cache, y, kind, weights)

    def total():
        return M.loss_value(M.forward(model, x)[0], y, kind, weights)

    worst = 0.0
    for param, g in zip(model.parameters(), grads.arrays()):
        worst = max(worst, max_rel_error(g, numeric_grad(total, param, h)))
    return worst


class TestInit:

    def test_deterministic(self):
        a = M.init_model([4, 8, 3], seed=7)
        b = M.init_model([4, 8, 3], seed=7)
        assert a == b
        assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
        assert M.init_model([4, 8, 3], seed=8) != a

    def test_zero_biases(self):
        assert M.init_model([4, 3]).biases[0].tolist() == [0.0, 0.0, 0.0]

    def test_shapes_and_scale(self):
        m = M.init_model([4, 8, 3], seed=1)
        assert [w.shape for w in m.weights] == [(4, 8), (8, 3)]
        assert np.abs(m.weights[0]).max() <= np.sqrt(6 / 12)
        assert np.abs(m.weights[1]).max() <= np.sqrt(6 / 11)

    @pytest.mark.parametrize("dims", [[], [3], [3, 0], [0, 2]])
    def test_bad_dims(self, dims):
        with pytest.raises(DomainError):
            M.init_model(dims)

    def test_bad_activation(self):
        with pytest.raises(DomainError):
            M.init_model([2, 2], activation="sigmoid")


class TestForward:

    def test_zero_model_is_uniform(self):
        m = M.MlpModel((3, 4, 3), [np.zeros((3, 4)), np.zeros((4, 3))], [np.zeros(4), np.zeros(3)])
        p, _ = M.forward(m, [0.3, -0.2, 0.9])
        np.testing.assert_allclose(p, [1 / 3] * 3, atol=1e-15)

    def test_probabilities_sum_to_one(self, rng):
        m = M.init_model([5, 7, 4], "relu", 3)
        p, _ = M.forward(m, rng.uniform(-1, 1, size=(50, 5)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_single_layer_matches_matrix_product(self):
        w = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
        b = np.array([0.1, 0.2, -0.3])
        m = M.MlpModel((2, 3), [w], [b])
        x = np.array([0.4, -0.7])
        logits = [sum(x[i] * w[i, j] for i in range(2)) + b[j] for j in range(3)]
        e = np.exp(logits)
        np.testing.assert_allclose(M.forward(m, x)[0], e / e.sum(), rtol=1e-14)

    def test_dim_mismatch(self):
        with pytest.raises(DomainError):
            M.forward(M.init_model([3, 2]), [1.0, 2.0])


class TestBackward:

    @pytest.mark.parametrize("kind", ["cce", "wcce"])
    def test_finite_differences(self, rng, kind):
        worst = max(end_to_end_check(m, x, y, kind, w)
                    for m, x, y, w in (random_case(rng) for _ in range(20)))
        assert worst < 1e-4

    def test_relu_finite_differences(self, rng):
        checked = 0
        while checked < 10:
            m, x, y, w = random_case(rng, "relu")
            _, cache = M.forward(m, x)
            if any(np.min(np.abs(z)) < 1e-3 for z in cache.pre_activations):
                continue  # too close to the kink for a central difference
            assert end_to_end_check(m, x, y, "wcce", w) < 1e-4
            checked += 1

    def test_perfect_prediction_has_tiny_gradient(self):
        w = np.zeros((2, 3))
        b = np.array([40.0, 0.0, 0.0])
        m = M.MlpModel((2, 3), [w], [b])
        _, cache = M.forward(m, [0.5, 0.5])
        g = M.backward(m, cache, [1, 0, 0], "cce")
        assert np.sqrt(sum(np.sum(a ** 2) for a in g.arrays())) < 1e-5

    def test_linear_in_weights(self, rng):
        m, x, y, w = random_case(rng)
        _, cache = M.forward(m, x)
        g1 = M.backward(m, cache, y, "wcce", w)
        g2 = M.backward(m, cache, y, "wcce", w.scaled(2.0))
        for a, b in zip(g1.arrays(), g2.arrays()):
            np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)

    def test_wcce_needs_weights(self):
        m = M.init_model([2, 2])
        _, cache = M.forward(m, [0.1, 0.2])
        with pytest.raises(DomainError):
            M.backward(m, cache, [1, 0], "wcce")

    def test_shape_mismatch(self):
        m = M.init_model([2, 2])
        _, cache = M.forward(m, [0.1, 0.2])
        with pytest.raises(DomainError):
            M.backward(m, cache, [1, 0, 0], "cce")


class TestSgdStep:

    def test_zero_lr(self):
        m = M.init_model([3, 4, 2], seed=2)
        g = M.Gradients([np.ones_like(w) for w in m.weights], [np.ones_like(b) for b in m.biases])
        assert M.sgd_step(m, g, 0.0) == m

    def test_scalar(self):
        m = M.MlpModel((1, 1), [np.array([[1.0]])], [np.array([0.0])])
        g = M.Gradients([np.array([[0.5]])], [np.array([0.0])])
        assert M.sgd_step(m, g, 0.1).weights[0][0, 0] == 0.95

    def test_reversible(self, rng):
        m = M.init_model([3, 5, 2], seed=4)
        g = M.Gradients([rng.normal(size=w.shape) for w in m.weights],
                        [rng.normal(size=b.shape) for b in m.biases])
        neg = M.Gradients([-a for a in g.weights], [-a for a in g.biases])
        back = M.sgd_step(M.sgd_step(m, g, 0.3), neg, 0.3)
        for a, b in zip(back.parameters(), m.parameters()):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_does_not_mutate(self):
        m = M.init_model([2, 2], seed=1)
        before = m.copy()
        M.sgd_step(m, M.Gradients([np.ones((2, 2))], [np.ones(2)]), 1.0)
        assert m == before

    def test_shape_mismatch(self):
        m = M.init_model([2, 2])
        with pytest.raises(DomainError):
            M.sgd_step(m, M.Gradients([np.ones((3, 2))], [np.ones(2)]), 0.1)


def blobs(rng, n_per_class=60, k=3, dim=2, spread=0.08):
    centres = np.array([[0.6 * np.cos(a), 0.6 * np.sin(a)] for a in np.linspace(0, 2 * np.pi, k, endpoint=False)])
    out = []
    for c in range(k):
        pts = np.clip(centres[c] + spread * rng.standard_normal((n_per_class, dim)), -1, 1)
        out += [LabeledExample(p, c) for p in pts]
    return out


class TestTrain:

    def test_zero_epochs(self, rng):
        data = blobs(rng)
        m = M.init_model([2, 3], seed=0)
        rep = M.train(m, data, M.TrainConfig(epochs=0, loss_kind="cce"))
        assert rep.model == m and rep.loss_history == [] and rep.epochs_run == 0

    def test_separable_blobs(self, rng):
        data = blobs(rng)
        m = M.init_model([2, 8, 3], seed=0)
        rep = M.train(m, data, M.TrainConfig(learning_rate=0.05, epochs=200, loss_kind="cce"))
        x = np.array([e.features for e in data])
        y = np.array([e.label for e in data])
        assert np.mean(M.predict(rep.model, x) == y) >= 0.95
        h = rep.loss_history
        assert len(h) == 200
        assert sum(b > a for a, b in zip(h[:50], h[1:50])) <= 2

    def test_deterministic(self, rng):
        data = blobs(rng, n_per_class=20)
        w = compute_class_weights([1, 1, 1])
        cfg = M.TrainConfig(epochs=5, loss_kind="wcce", class_weights=w, seed=11)
        a = M.train(M.init_model([2, 4, 3], seed=1), data, cfg)
        b = M.train(M.init_model([2, 4, 3], seed=1), data, cfg)
        assert a.loss_history == b.loss_history and a.model == b.model

    def test_errors(self, rng):
        m = M.init_model([2, 3])
        with pytest.raises(DomainError):
            M.train(m, [], M.TrainConfig(loss_kind="cce"))
        with pytest.raises(DomainError):
            M.train(m, [LabeledExample([0.0, 0.0], 3)], M.TrainConfig(loss_kind="cce"))
        with pytest.raises(DomainError):
            M.TrainConfig(loss_kind="wcce")


class TestPredict:

    def test_tie_goes_to_lowest(self):
        m = M.MlpModel((2, 3), [np.zeros((2, 3))], [np.zeros(3)])
        assert M.predict(m, [0.2, 0.3]) == 0

    def test_argmax(self):
        b = np.log([0.1, 0.7, 0.2])
        m = M.MlpModel((1, 3), [np.zeros((1, 3))], [b])
        np.testing.assert_allclose(M.forward(m, [0.0])[0], softmax(b))
        assert M.predict(m, [0.0]) == 1

    def test_bias_shift_invariance(self, rng):
        m = M.init_model([4, 6, 3], seed=5)
        x = rng.uniform(-1, 1, size=(100, 4))
        shifted = m.copy()
        shifted.biases[-1] += 17.0
        np.testing.assert_array_equal(M.predict(m, x), M.predict(shifted, x))


class TestCheckpoint:

    def test_round_trip_is_exact(self, tmp_path, rng):
        m = M.init_model([5, 7, 3], "relu", 9)
        m.biases[0] += rng.normal(size=7)
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(m, path)
        back = M.load_checkpoint(path)
        assert back == m
        assert M.dumps_checkpoint(back) == path.read_text()

    def test_header(self):
        text = M.dumps_checkpoint(M.init_model([2, 2]))
        assert text.splitlines()[0] == "auxlearn-checkpoint 1"
        assert text.splitlines()[2] == "layer_dims 2 2"

    @pytest.mark.parametrize("mutate", [
        lambda t: t.replace("auxlearn-checkpoint 1", "auxlearn-checkpoint 9"),
        lambda t: t.replace("layer_dims 2 2", "layer_dims 2 3"),
        lambda t: "\n".join(t.splitlines()[:-1]),
        lambda t: t.replace("b0 2", "b0 x"),
    ])
    def test_rejects_corrupt(self, mutate):
        text = M.dumps_checkpoint(M.init_model([2, 2], seed=3))
        with pytest.raises((ParseError, ValueError)):
            M.loads_checkpoint(mutate(text))
