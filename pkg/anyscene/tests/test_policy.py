import numpy as np
import pytest

from types import SimpleNamespace
from anyscene.dataset import SyntheticSpec, generate_synthetic
from anyscene.dhm import Boost, Scene, Split, predict_labels
from anyscene.lspi import PolicyWeights
from anyscene.policy import HORIZON, GreedyPolicy, LinearPolicy
from anyscene.policy import RandomPolicy
from anyscene.policy import SequencePolicy, greedy_static_policy
from anyscene.policy import meta_dimension, meta_features, meta_layout
from anyscene.policy import policy_init, rollout
from anyscene.proposal import ActionPool
from anyscene.segtree import annotate_ground_truth, build_hierarchy


def named(scene, state, previous, action):
    layout = meta_layout(len(scene.registry), scene.tree.layers)
    phi = meta_features(scene, state, previous, action)

    assert len(phi) == len(layout)
    return dict(zip(layout, phi))


def typed_learner(*types):
    return SimpleNamespace(
        id=f'typed-{types}', feature_types=types, alpha=0.0, apply_cost=0.5,
        responses=lambda inputs: np.zeros((len(inputs), 3)))


def test_meta_dimension():
    assert meta_dimension(6, 4) == 12 + 2 * 6 + 2 * 4
    assert meta_dimension(1, 1) == 16
    assert len(set(meta_layout(6, 4))) == meta_dimension(6, 4)


def test_meta_features_of_the_initial_state(scene):
    state = scene.initial_state()
    phi = named(scene, state, None, Split(0.6))

    assert phi['entropy'] == pytest.approx(1.0)
    assert phi['entropy-gap'] == 0.0
    assert phi['margin-0'] == 1.0
    assert phi['active-area'] == 1.0
    assert phi['active-entropy'] == pytest.approx(1.0)
    assert phi['layer-0'] == 1.0
    assert phi['active-layer-0'] == 1.0
    assert phi['split'] == 1.0
    assert phi['boost'] == 0.0

    created = len(scene.tree.children[scene.tree.root])
    assert phi['cost'] == pytest.approx(
        scene.costs.split * created / scene.costs.reference)

    assert all(phi[f'used-{i}'] == 0 for i in range(len(scene.registry)))


def test_meta_features_mark_new_feature_types(scene):
    state = scene.initial_state()
    action = Boost(typed_learner(2, 4))

    phi = named(scene, state, None, action)

    assert phi['boost'] == 1.0
    assert phi['new-2'] == phi['new-4'] == 1.0
    assert phi['new-0'] == 0.0

    reached = scene.transition(state, action)
    phi = named(scene, reached, state, action)

    assert phi['used-2'] == phi['used-4'] == 1.0
    assert phi['new-2'] == phi['new-4'] == 0.0
    assert phi['cost'] == pytest.approx(0.5 / scene.costs.reference)


def test_meta_features_are_finite(scenes, pool):
    policy = RandomPolicy(pool, 3)

    for scene in scenes:
        trajectory = rollout(policy, scene, horizon=6)
        previous = None
        used = np.zeros(len(scene.registry))

        for state in trajectory.states:
            for action in pool:
                phi = named(scene, state, previous, action)

                assert np.isfinite(list(phi.values())).all()
                assert phi['split'] + phi['boost'] == 1.0

            # the used indicators only ever switch on
            now = np.array([
                phi[f'used-{i}'] for i in range(len(scene.registry))])

            assert (now >= used).all()
            used, previous = now, state


def test_random_policy_is_reproducible(scene, pool):
    state = scene.initial_state()

    a = RandomPolicy(pool, 7).select(scene, state, None)
    b = RandomPolicy(pool, 7).select(scene, state, None)

    assert a == b

    first = rollout(RandomPolicy(pool, 7), scene, horizon=5)
    again = rollout(RandomPolicy(pool, 7), scene, horizon=5)

    assert first.actions == again.actions


def test_random_policy_is_uniform():
    pool = ActionPool([Split(0.0), Split(0.3), Split(0.6), Split(1.0)])
    policy = RandomPolicy(pool, 0)

    scene = SimpleNamespace(name='uniform')
    counts = np.zeros(len(pool))

    for step in range(10000):
        index, _ = policy.select(scene, SimpleNamespace(step=step), None)
        counts[index] += 1

    assert np.abs(counts / 10000 - 0.25).max() <= 0.02


def test_single_action_pool(scene):
    pool = ActionPool([Split(0.6)])

    # the static sequence repeats the action while it gains
    static = greedy_static_policy(pool, [scene])
    trajectory = rollout(static, scene)

    assert trajectory.actions
    assert set(trajectory.actions) == {0}
    assert all(r.reward > 0 for r in trajectory.records)

    _, record = scene.step(trajectory.final, Split(0.6))
    assert record.reward <= 0

    # a random pick out of one action is that sequence
    for seed in range(5):
        random = rollout(
            RandomPolicy(pool, seed), scene, horizon=len(static.sequence))

        assert random.actions == trajectory.actions
        assert random.final.digest == trajectory.final.digest


def test_greedy_policy(scene, pool):
    state = scene.initial_state()
    index, score = GreedyPolicy(pool).select(scene, state, None)

    loss = scene.loss(state)
    rewards = []

    for action in pool:
        reached = scene.transition(state, action)
        rewards.append(
            (loss - scene.loss(reached)) / (reached.cost - state.cost)
            if reached.cost > state.cost else 0.0)

    assert index == int(np.argmax(rewards))
    assert score == pytest.approx(max(rewards))

    # ties go to the first action
    tied = ActionPool([Split(1.0), Split(1.0)])
    assert GreedyPolicy(tied).select(scene, state, None) == (0, 0.0)

    assert isinstance(policy_init(pool), GreedyPolicy)


def test_static_policy_on_a_single_image(scene, pool):
    static = greedy_static_policy(pool, [scene], horizon=5)
    greedy = rollout(GreedyPolicy(pool), scene, horizon=5, early_stop=True)

    assert list(static.sequence) == greedy.actions


def test_sequence_policy(scene, pool):
    policy = SequencePolicy(pool, [1, 3])
    trajectory = rollout(policy, scene)

    assert trajectory.actions == [1, 3]
    assert trajectory.final.step == 2


def test_budget_of_the_initial_cost(scene, pool):
    policy = SequencePolicy(pool, [pool.index(Split(0.6))])
    trajectory = rollout(policy, scene, budget=scene.costs.initial)

    assert trajectory.actions == []
    assert trajectory.final.cost == scene.costs.initial
    assert (predict_labels(trajectory.final, scene.tree) == 0).all()


def test_budgeted_rollouts_are_prefixes(scenes, pool):
    generator = np.random.default_rng(0)
    eta = generator.normal(size=meta_dimension(
        len(scenes[0].registry), scenes[0].tree.layers))

    policies = [
        RandomPolicy(pool, 11),
        LinearPolicy(pool, PolicyWeights(eta), noise=0.5, seed=2),
    ]

    for policy in policies:
        for scene in scenes[:2]:
            full = rollout(policy, scene, horizon=8)

            for budget in (2.0, 2.5, 4.0, 10.0):
                limited = rollout(policy, scene, budget=budget, horizon=8)

                assert full.actions[:len(limited.actions)] == limited.actions
                assert limited.final.cost <= budget
                assert limited.final.digest == full.at_budget(budget).digest


def test_linear_policy_argmax_invariance(scene, pool):
    layout = meta_layout(len(scene.registry), scene.tree.layers)
    eta = np.random.default_rng(4).normal(size=len(layout))

    shifted = eta.copy()
    shifted[layout.index('split')] += 3.0
    shifted[layout.index('boost')] += 3.0

    state = scene.transition(scene.initial_state(), Split(0.6))

    for weights in (eta * 2.5, shifted):
        expected = LinearPolicy(pool, PolicyWeights(eta)).select(
            scene, state, None)[0]

        assert LinearPolicy(pool, PolicyWeights(weights)).select(
            scene, state, None)[0] == expected


def test_linear_policy_scores(scene, pool):
    layout = meta_layout(len(scene.registry), scene.tree.layers)
    eta = np.zeros(len(layout))
    eta[layout.index('boost')] = 1.0

    policy = LinearPolicy(pool, PolicyWeights(eta))
    state = scene.initial_state()

    scores = policy.scores(scene, state, None)
    assert list(scores) == [float(a.kind == 'boost') for a in pool]

    index, score = policy.select(scene, state, None)
    assert pool[index].kind == 'boost' and score == 1.0


def test_rollouts_stay_in_the_pool(scenes, pool):
    for seed in range(3):
        for scene in scenes:
            trajectory = rollout(RandomPolicy(pool, seed), scene, horizon=10)

            assert all(0 <= i < len(pool) for i in trajectory.actions)
            assert len(trajectory.states) == len(trajectory.actions) + 1
            assert len(trajectory.records) == len(trajectory.actions)

            costs = [s.cost for s in trajectory.states]
            assert all(a <= b for a, b in zip(costs, costs[1:]))


def test_at_budget(scene, pool):
    trajectory = rollout(SequencePolicy(pool, [1, 3, 4]), scene)

    assert trajectory.at_budget(0.0) is trajectory.states[0]
    assert trajectory.at_budget(np.inf) is trajectory.final


def test_until_no_gain(scene, pool):
    trajectory = rollout(
        RandomPolicy(pool, 5), scene, horizon=20, until_no_gain=True)

    rewards = [r.reward for r in trajectory.records]
    assert all(r > 0 for r in rewards[:-1])


def test_early_stop_without_value_estimates(scene, pool):
    sequence = SequencePolicy(pool, [0, 1, 3])

    stopped = rollout(sequence, scene, early_stop=True)
    assert stopped.actions == rollout(sequence, scene).actions == [0, 1, 3]

    random = RandomPolicy(pool, 2)

    stopped = rollout(random, scene, horizon=5, early_stop=True)
    assert stopped.actions == rollout(random, scene, horizon=5).actions
    assert len(stopped.actions) == 5


def test_early_stop_of_the_linear_policy(scene, pool):
    layout = meta_layout(len(scene.registry), scene.tree.layers)

    # a constant score for every action
    def constant(value):
        eta = np.zeros(len(layout))
        eta[layout.index('split')] = eta[layout.index('boost')] = value

        return LinearPolicy(pool, PolicyWeights(eta))

    stopped = rollout(constant(-1.0), scene, horizon=4, early_stop=True)
    assert stopped.actions == []

    assert len(rollout(constant(-1.0), scene, horizon=4).actions) == 4

    hopeful = rollout(constant(1.0), scene, horizon=4, early_stop=True)
    assert hopeful.actions == rollout(constant(1.0), scene, horizon=4).actions
    assert len(hopeful.actions) == 4


def test_early_stop_of_the_greedy_policy(scene, pool):
    trajectory = rollout(GreedyPolicy(pool), scene, early_stop=True)

    assert trajectory.actions
    assert all(r.reward > 0 for r in trajectory.records)

    # the next greedy pick would not gain anything
    _, score = GreedyPolicy(pool).select(
        scene, trajectory.final, trajectory.states[-2])
    assert score <= 0 or len(trajectory.actions) == HORIZON


@pytest.fixture(scope='module')
def labeled_scenes(registry, costs):
    spec = SyntheticSpec(
        seed=17, classes=3, height=24, width=24, shapes=(2, 4), noise=0.1)

    return [
        Scene(sample, annotate_ground_truth(
            build_hierarchy(sample, layers=4, k=100.0, min_size=10), sample),
            registry, costs)
        for sample in generate_synthetic(spec, 20)
    ]


def test_budgeted_predictions_are_truncated_trajectories(
        labeled_scenes, pool):

    eta = np.random.default_rng(8).normal(size=meta_dimension(
        len(labeled_scenes[0].registry), labeled_scenes[0].tree.layers))

    policy = LinearPolicy(pool, PolicyWeights(eta), noise=0.2, seed=1)

    for scene in labeled_scenes:
        full = rollout(policy, scene, horizon=10)
        budgets = np.linspace(scene.costs.initial, full.cost, 5)

        for budget in budgets:
            limited = rollout(policy, scene, budget=budget, horizon=10)
            truncated = full.at_budget(budget)

            assert limited.final.digest == truncated.digest
            assert np.array_equal(
                predict_labels(limited.final, scene.tree),
                predict_labels(truncated, scene.tree))
