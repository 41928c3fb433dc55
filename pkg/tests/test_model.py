import json
import math

import numpy as np
import pytest

from ctxrank.domain import Impression, SessionLog
from ctxrank.errors import CorruptModel, DimensionMismatch, EmptyLog, InvalidConfig, VersionMismatch
from ctxrank.evaluation import normalized_entropy
from ctxrank.model import (
    Adam,
    ScorerModel,
    TrainConfig,
    batch_loss,
    forward,
    init_model,
    initial_model,
    load_model,
    loss,
    loss_and_grads,
    model_from_dict,
    model_to_dict,
    save_model,
    train,
)
from ctxrank.simgen import WorldConfig, generate_world, simulate_sessions
from oracles import forward_oracle, log_loss_oracle


def random_net(rng, dims):
    layers = [(rng.standard_normal((a, b)) * 0.7, rng.standard_normal(b) * 0.3)
              for a, b in zip(dims[:-1], dims[1:])]
    return ScorerModel(layers, "contextual")


def finite_difference_grads(model, X, Y, h=1e-4):
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = batch_loss(model, X, Y)
            p[idx] = orig - h
            down = batch_loss(model, X, Y)
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def grad_relative_error(analytic, numeric):
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


class TestForward:
    def test_zero_weights_give_half(self):
        model = ScorerModel([(np.zeros((3, 4)), np.zeros(4)), (np.zeros((4, 2)), np.zeros(2))])
        np.testing.assert_array_equal(forward(model, [1.0, -2.0, 3.0]), [0.5, 0.5])

    def test_single_layer_closed_form(self):
        w = np.eye(2)
        b = np.array([0.5, -1.0])
        model = ScorerModel([(w, b)])
        got = forward(model, [1.0, 2.0])
        want = [1 / (1 + math.exp(-1.5)), 1 / (1 + math.exp(-1.0))]
        np.testing.assert_allclose(got, want, rtol=1e-15)

    def test_random_net_matches_scalar_loops(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            dims = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
            model = random_net(rng, dims)
            x = rng.standard_normal(dims[0])
            np.testing.assert_allclose(forward(model, x), forward_oracle(
                list(zip(model.weights, model.biases)), x), rtol=1e-12, atol=1e-15)

    def test_input_dimension_checked(self):
        model = init_model(4, (3,), 1)
        with pytest.raises(DimensionMismatch):
            model.predict(np.zeros((2, 5)))

    def test_standardization_applied(self):
        rng = np.random.default_rng(2)
        model = random_net(rng, [3, 4, 1])
        mean, scale = np.array([1.0, -1.0, 0.5]), np.array([2.0, 0.5, 1.0])
        normed = ScorerModel(list(zip(model.weights, model.biases)), "contextual", None, mean, scale)
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(normed.predict(x), model.predict((x - mean) / scale), rtol=1e-15)


class TestLoss:
    def test_half_positive(self):
        assert loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect_prediction(self):
        assert loss([1.0, 0.0, 1.0], [1, 0, 1]) <= 1e-11

    def test_matches_scalar_sum(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 1, (40, 3))
        y = (rng.uniform(0, 1, (40, 3)) < 0.4).astype(float)
        assert loss(p, y) == pytest.approx(log_loss_oracle(p.ravel(), y.ravel()), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            loss([0.5, 0.5], [1])


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_two_layer_net(self, seed):
        rng = np.random.default_rng(seed)
        model = random_net(rng, [4, 6, 2])
        X = rng.standard_normal((8, 4))
        Y = (rng.uniform(size=(8, 2)) < 0.5).astype(float)
        _, g = loss_and_grads(model, X, Y)
        assert grad_relative_error(g, finite_difference_grads(model, X, Y)) < 1e-4

    def test_loss_value_matches_batch_loss(self):
        rng = np.random.default_rng(9)
        model = random_net(rng, [3, 5, 4, 2])
        X = rng.standard_normal((10, 3))
        Y = (rng.uniform(size=(10, 2)) < 0.5).astype(float)
        value, _ = loss_and_grads(model, X, Y)
        assert value == pytest.approx(batch_loss(model, X, Y), rel=1e-14)


def adam_oracle(theta, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8, decay=0):
    theta = list(theta)
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads_seq, 1):
        step = lr / (1 + (t - 1) / decay) if decay else lr
        for i in range(len(theta)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            theta[i] -= step * mh / (math.sqrt(vh) + eps)
    return theta


class TestAdam:
    @pytest.mark.parametrize("decay", [0, 7])
    def test_matches_scalar_reference(self, decay):
        rng = np.random.default_rng(4)
        theta0 = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(12)]
        p = theta0.copy()
        opt = Adam([p], lr=0.01, decay_steps=decay)
        for g in grads:
            opt.step([g])
        np.testing.assert_allclose(p, adam_oracle(theta0, grads, 0.01, decay=decay), rtol=1e-12)

    def test_average_tracks_constant_params(self):
        p = np.array([1.0, 2.0])
        opt = Adam([p], lr=0.0, ema_decay=0.99)
        for _ in range(5):
            opt.step([np.ones(2)])
        assert opt.averaged()[0].tobytes() == p.tobytes()


def toy_log(n=1600, seed=0):
    """One separable feature: label 1 exactly when x > 0."""
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal(n)
    imps = [Impression(i, 0, "u", f"i{i}", 0, [x], [0.0] * 10, [int(x > 0)], 0.0)
            for i, x in enumerate(xs)]
    return SessionLog(imps, {})


@pytest.fixture(scope="module")
def small_logs():
    world = generate_world(WorldConfig(num_users=60, num_items=300, num_days=8,
                                       sessions_per_day=40, heldout_sessions=300, seed=5))
    return simulate_sessions(world, "train"), simulate_sessions(world, "heldout")


class TestTrain:
    def test_zero_learning_rate_keeps_init(self, small_logs):
        cfg = TrainConfig(learning_rate=0.0, initial_window_days=4)
        init = initial_model(small_logs[0], cfg, "contextual")
        result = train(small_logs[0], cfg, "contextual")
        for a, b in zip(init.params(), result.model.params()):
            assert a.tobytes() == b.tobytes()

    def test_separable_toy_loss_decreases(self):
        log = toy_log()
        cfg = TrainConfig(batch_size=8, hidden_dims=(8,), lr_decay_steps=0, ema_decay=0.0,
                          init_output_bias=False)
        X, Y, _, _ = log.matrices("baseline")
        before = batch_loss(initial_model(log, cfg, "baseline"), X, Y)
        result = train(log, cfg, "baseline")
        assert result.steps == 200
        assert batch_loss(result.model, X, Y) < before

    def test_deterministic(self, small_logs):
        cfg = TrainConfig(initial_window_days=4, hidden_dims=(16, 8))
        a = train(small_logs[0], cfg, "contextual").model
        b = train(small_logs[0], cfg, "contextual").model
        assert json.dumps(model_to_dict(a)) == json.dumps(model_to_dict(b))

    def test_trajectory_covers_recurrent_days(self, small_logs):
        cfg = TrainConfig(initial_window_days=4, hidden_dims=(16, 8))
        result = train(small_logs[0], cfg, "baseline")
        assert [r.day for r in result.trajectory] == [4, 5, 6, 7]
        assert all(r.ne > 0 for r in result.trajectory)

    def test_input_dims_per_mode(self, small_logs):
        cfg = TrainConfig(initial_window_days=4, hidden_dims=(8,))
        base = train(small_logs[0], cfg, "baseline").model
        ctx = train(small_logs[0], cfg, "contextual").model
        assert ctx.input_dim == base.input_dim + 10
        assert base.feature_mode == "baseline"

    def test_zeroed_context_matches_baseline(self, small_logs):
        """With the contextual inputs blanked, the extra ten inputs carry nothing."""
        train_log, heldout = small_logs
        blank = lambda log: SessionLog(
            [Impression(i.session_id, i.day, i.user_id, i.item_id, i.position, i.pointwise,
                        np.zeros(10), i.labels, i.similarity_score) for i in log.impressions],
            log.metadata)
        cfg = TrainConfig(initial_window_days=4)
        start = initial_model(train_log, cfg, "baseline")
        # same starting weights; the ten extra inputs get zero rows
        w0 = np.vstack([start.weights[0], np.zeros((10, start.weights[0].shape[1]))])
        layers = [(w0, start.biases[0])] + list(zip(start.weights[1:], start.biases[1:]))
        padded = ScorerModel(layers, "contextual", start.meta)
        base = train(train_log, cfg, "baseline").model
        ctx = train(blank(train_log), cfg, "contextual", init=padded).model
        Xb, Y, _, _ = heldout.matrices("baseline")
        Xc = blank(heldout).matrices("contextual")[0]
        ne_b = normalized_entropy(base.predict(Xb)[:, 0], Y[:, 0])
        ne_c = normalized_entropy(ctx.predict(Xc)[:, 0], Y[:, 0])
        assert abs(ne_c - ne_b) / ne_b < 0.002

    def test_empty_log(self):
        with pytest.raises(EmptyLog):
            train(SessionLog([]), TrainConfig())

    def test_bad_objective(self, small_logs):
        with pytest.raises(InvalidConfig):
            train(small_logs[0], TrainConfig(objective_task=5), "baseline")

    def test_bad_config(self):
        with pytest.raises(InvalidConfig):
            TrainConfig(learning_rate=-1.0)


class TestPersistence:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(6)
        model = random_net(rng, [5, 7, 3])
        model.input_mean = rng.standard_normal(5)
        model.input_scale = rng.uniform(0.5, 2.0, 5)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        for a, b in zip(model.params(), back.params()):
            assert a.tobytes() == b.tobytes()
        assert back.input_scale.tobytes() == model.input_scale.tobytes()

    def test_truncated_file(self, tmp_path):
        save_model(init_model(4, (3,), 1), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(text[: len(text) // 2])
        with pytest.raises(CorruptModel):
            load_model(tmp_path / "m.json")

    def test_declared_tasks_must_match(self):
        doc = model_to_dict(init_model(4, (8,), 2))
        doc["task_count"] = 3
        with pytest.raises(CorruptModel):
            model_from_dict(doc)

    def test_shape_chain(self):
        doc = model_to_dict(init_model(4, (8,), 2))
        doc["layers"][1]["w"] = doc["layers"][1]["w"][:-1]
        with pytest.raises(CorruptModel):
            model_from_dict(doc)

    def test_version(self):
        doc = model_to_dict(init_model(4, (8,), 2))
        doc["version"] = 99
        with pytest.raises(VersionMismatch):
            model_from_dict(doc)
