import numpy as np
import pytest

from hypothesis import given, strategies
from anyscene.lspi import PolicyWeights, QSample, clipped_returns
from anyscene.lspi import lspi_train, policy_evaluate, policy_improve
from anyscene.lspi import validation_auc
from anyscene.policy import GreedyPolicy, RandomPolicy, meta_layout


def q_samples(phi, values):
    return [
        QSample(phi=np.asarray(p, dtype=np.float64), value=float(v),
                image='x', step=i)
        for i, (p, v) in enumerate(zip(phi, values))
    ]


def test_clipped_returns():
    assert clipped_returns([1.0, -2.0, 3.0], 0.5) == [1.0, -0.5, 3.0]
    assert clipped_returns([0.5], 0.9) == [0.5]
    assert clipped_returns([], 0.9) == []


@given(
    rewards=strategies.lists(
        strategies.floats(-10, 10, allow_nan=False), max_size=10),
    gamma=strategies.sampled_from([0.0, 0.5, 0.9, 1.0]))
def test_clipped_returns_recursion(rewards, gamma):
    values = clipped_returns(rewards, gamma)

    for t in range(len(rewards)):
        if t == len(rewards) - 1:
            expected = rewards[t]
        else:
            expected = rewards[t] + gamma * max(values[t + 1], 0.0)

        assert values[t] == expected


def test_policy_evaluate(scenes, pool):
    samples = policy_evaluate(RandomPolicy(pool, 1), scenes, 0.9, horizon=6)
    assert samples

    for image in {s.image for s in samples}:
        steps = sorted(
            (s for s in samples if s.image == image), key=lambda s: s.step)

        assert [s.step for s in steps] == list(range(len(steps)))

        for current, following in zip(steps, steps[1:]):
            assert current.reward > 0
            assert current.value == pytest.approx(
                current.reward + 0.9 * max(following.value, 0.0))

        assert steps[-1].value == pytest.approx(steps[-1].reward)

    scene = scenes[0]
    dimension = len(meta_layout(len(scene.registry), scene.tree.layers))
    assert all(s.phi.shape == (dimension, ) for s in samples)


def test_ridge_shrinks_towards_zero():
    generator = np.random.default_rng(0)
    phi = generator.normal(size=(50, 4))
    values = phi @ np.array([1.0, -2.0, 0.5, 0.0])

    samples = q_samples(phi, values)

    assert np.abs(policy_improve(samples, 1e9).eta).max() < 1e-6

    loose = np.linalg.norm(policy_improve(samples, 0.01).eta)
    tight = np.linalg.norm(policy_improve(samples, 1e6).eta)
    assert tight < 1e-3 * loose


def test_ridge_recovers_one_hot_values():
    phi = np.eye(5)
    values = np.array([0.3, -1.0, 2.0, 0.0, 5.0])

    eta = policy_improve(q_samples(phi, values), 1e-8).eta
    assert eta == pytest.approx(values, abs=1e-6)


def test_ridge_ignores_duplicates():
    generator = np.random.default_rng(1)
    phi = generator.normal(size=(20, 3))
    values = generator.normal(size=20)

    once = policy_improve(q_samples(phi, values), 0.1).eta
    twice = policy_improve(
        q_samples(np.vstack((phi, phi)), np.concatenate((values, values))),
        0.1).eta

    assert twice == pytest.approx(once)


def test_ridge_requires_samples():
    with pytest.raises(AssertionError):
        policy_improve([], 0.1)

    with pytest.raises(AssertionError):
        policy_improve(q_samples(np.eye(2), [1, 2]), 0.0)


def test_policy_weights_serialization():
    weights = PolicyWeights(
        eta=np.array([0.5, -1.0]), layout=('a', 'b'), noise=0.1, pool='p',
        iteration=2)

    loaded = PolicyWeights.from_dict(weights.to_dict())

    assert (loaded.eta == weights.eta).all()
    assert loaded.layout == ('a', 'b')
    assert loaded.pool == 'p'
    assert loaded.iteration == 2


def test_lspi_without_iterations(scenes, pool):
    train, validation = scenes[:2], scenes[2:]

    weights = lspi_train(pool, train, validation, iterations=0, horizon=6)

    samples = policy_evaluate(GreedyPolicy(pool), train, 0.9, horizon=6)
    expected = policy_improve(samples, 0.01)

    assert weights.eta == pytest.approx(expected.eta)
    assert weights.iteration == 0
    assert weights.pool == pool.digest
    assert len(weights.layout) == len(weights.eta)


def test_lspi_keeps_the_best_validation_auc(scenes, pool):
    train, validation = scenes[:2], scenes[2:]

    initial = lspi_train(pool, train, validation, iterations=0, horizon=6)
    trained = lspi_train(
        pool, train, validation, iterations=2, horizon=6, seed=3)

    before = validation_auc(pool, initial, validation, 6)
    after = validation_auc(pool, trained, validation, 6)

    assert after >= before - 1e-3

    again = lspi_train(
        pool, train, validation, iterations=2, horizon=6, seed=3)

    assert (again.eta == trained.eta).all()
