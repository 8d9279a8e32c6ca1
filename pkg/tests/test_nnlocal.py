import numpy as np
import pytest

from trianglescope import flags as fl
from trianglescope import nnlocal as nn
from trianglescope.dist_core import (
    ValidationError,
    deterministic,
    distance,
    ejm_distribution,
    from_sym_coords,
    uniform_distribution,
    SymCoords,
)


def fd_relative_error(model, objective, m=64, seed=0, h=1e-7):
    # a small step keeps ReLU kinks of the fixed sample set out of the stencil
    grads = nn.gradient(model, objective, m, seed)
    params = model.parameters()
    fd = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = nn.loss_at(model, objective, m, seed)
            p[idx] = old - h
            down = nn.loss_at(model, objective, m, seed)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        fd.append(g)
    a = np.concatenate([g.ravel() for g in grads])
    b = np.concatenate([g.ravel() for g in fd])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def small_model(seed, n=4, hidden=(3, 3)):
    return nn.NeuralLocalModel.init(np.random.default_rng(seed), n, hidden)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    model = small_model(seed)
    target = nn.DistanceObjective(ejm_distribution())
    assert fd_relative_error(model, target, seed=seed) <= 1e-4
    assert fd_relative_error(model, nn.InequalityObjective(0.4, 2), seed=seed) <= 1e-4


def test_gradient_on_two_unit_model():
    model = small_model(5, n=3, hidden=(2,))
    assert fd_relative_error(model, nn.DistanceObjective(uniform_distribution(3))) <= 1e-4


def test_uniform_model_has_zero_gradient_to_uniform():
    model = nn.uniform_model(4, hidden=(5, 5))
    grads = nn.gradient(model, nn.DistanceObjective(uniform_distribution(4)), 128, 0)
    assert max(np.abs(g).max() for g in grads) < 1e-12


def test_monte_carlo_trivial_models():
    p = nn.monte_carlo_distribution(nn.uniform_model(4), 100, seed=1)
    assert np.allclose(p.probs.astype(float), 1 / 64)
    p = nn.monte_carlo_distribution(nn.constant_model(4, 1), 100, seed=1)
    assert distance(p, deterministic(4, 1, 1, 1)) < 1e-12


def test_monte_carlo_sums_to_one():
    for seed in range(5):
        p = nn.monte_carlo_distribution(small_model(seed), 37, seed)
        assert abs(p.probs.astype(float).sum() - 1) < 1e-12


def test_output_relabel_permutes_distribution():
    model = small_model(2, n=3)
    perm = [2, 0, 1]
    p = nn.monte_carlo_distribution(model, 200, 4).probs.astype(float)
    relabeled = model.copy()
    for net in relabeled.parties():
        w, b = net.weights[-1].copy(), net.biases[-1].copy()
        net.weights[-1][:, perm] = w
        net.biases[-1][perm] = b
    q = nn.monte_carlo_distribution(relabeled, 200, 4).probs.astype(float)
    assert np.allclose(q[np.ix_(perm, perm, perm)], p)


def test_squares_network_close_to_squares_flags():
    p = nn.monte_carlo_distribution(nn.squares_model(), 40_000, seed=3)
    exact = fl.evaluate(fl.squares_flags())
    assert np.abs(p.probs.astype(float) - exact.to_float().probs).max() < 5 / np.sqrt(40_000)


def test_discretize_examples():
    assert fl.evaluate(nn.discretize_to_flags(nn.squares_model(), 2)) == fl.evaluate(fl.squares_flags())
    p = fl.evaluate(nn.discretize_to_flags(nn.uniform_model(4), 3))
    assert p[1, 1, 1] == 1
    with pytest.raises(ValidationError):
        nn.discretize_to_flags(nn.uniform_model(4), 1)


def test_loss_examples():
    u = uniform_distribution(4)
    assert nn.loss(u, nn.DistanceObjective(u)) == 0
    expected = (1 - 1 / 64) ** 2 + 63 / 64 ** 2
    assert nn.loss(deterministic(4, 1, 1, 1), nn.DistanceObjective(u)) == pytest.approx(expected)
    assert nn.loss(ejm_distribution(), nn.InequalityObjective(0.3, 1)) == pytest.approx(-0.3 * 25 / 64)


def short_config(target, **kw):
    base = dict(objective=nn.DistanceObjective(target), n_outcomes=target.n_outcomes, n_samples=512,
                epochs=60, sgd_epochs=10, restarts=2, seed=0, hidden=(8, 8))
    base.update(kw)
    return nn.TrainConfig(**base)


def test_training_is_deterministic_and_envelope_monotone():
    cfg = short_config(from_sym_coords(SymCoords.of("1/4", "3/8", "3/8"), 4))
    a, b = nn.train(cfg), nn.train(cfg)
    assert a.history == b.history and a.loss == b.loss
    env = nn.best_so_far(a.history)
    assert all(y <= x for x, y in zip(env, env[1:]))
    assert len(a.restart_losses) == 2


def test_training_reaches_uniform_quickly():
    result = nn.train(short_config(uniform_distribution(4), epochs=800, eval_samples=20_000))
    assert distance(result.distribution, uniform_distribution(4)) <= 1e-2


def test_train_config_validation():
    with pytest.raises(ValidationError):
        short_config(uniform_distribution(4), restarts=0)
    with pytest.raises(ValidationError):
        short_config(uniform_distribution(4), n_samples=0)


def test_model_json_round_trip(tmp_path):
    model = small_model(1)
    nn.save_model(model, tmp_path / "m.json")
    back = nn.load_model(tmp_path / "m.json")
    x = np.random.default_rng(0).random((10, 2))
    assert np.allclose(back.alice.forward(x), model.alice.forward(x))
