import numpy as np

from dataclasses import dataclass
from anyscene import log
from anyscene.dhm import cost_normalized_gain, normalized_entropy
from anyscene.proposal import fixed_candidates, greedy_sequence
from anyscene.utils import rng


HORIZON = 40

# upper edges of the histogram of the gap between the two largest marginals
GAP_BINS = (0.25, 0.5, 0.75)


def meta_layout(features, layers):
    """ Names of the meta-feature entries, in order. """

    return (
        ['entropy', 'entropy-gap']
        + [f'used-{i}' for i in range(features)]
        + [f'new-{i}' for i in range(features)]
        + [f'margin-{i}' for i in range(len(GAP_BINS) + 1)]
        + ['active-area', 'active-entropy', 'active-entropy-gap']
        + [f'layer-{i}' for i in range(layers)]
        + [f'active-layer-{i}' for i in range(layers)]
        + ['split', 'boost', 'cost']
    )


def meta_dimension(features, layers):
    return len(meta_layout(features, layers))


def area_mean(values, areas):
    total = areas.sum()
    return float((values * areas).sum() / total) if total else 0.0


def pixel_entropy(state, tree):
    """ The normalized entropy of the leaf covering each pixel. """

    return normalized_entropy(state.marginals)[tree.cover(state.leaves)]


def layer_distribution(tree, leaves):
    counts = np.bincount(tree.layer_of[leaves], minlength=tree.layers)
    return counts / counts.sum() if counts.sum() else counts.astype(float)


def state_features(scene, state, previous=None):
    """ The action independent part of the meta-features.

    Averages are taken over pixels, so large regions count more than small
    ones. The ground truth is never looked at.

    """
    tree = scene.tree
    features = len(scene.registry)

    areas = tree.areas[state.leaves].astype(np.float64)
    entropy = normalized_entropy(state.marginals)

    current = pixel_entropy(state, tree)
    gap = 0.0 if previous is None else float(
        (pixel_entropy(previous, tree) - current).mean())

    used = np.zeros(features)
    used[list(state.used)] = 1

    ordered = np.sort(state.marginals, axis=1)
    margins = ordered[:, -1] - ordered[:, -2] if ordered.shape[1] > 1 else (
        np.ones(len(ordered)))
    margin = np.bincount(
        np.digitize(margins, GAP_BINS), weights=areas,
        minlength=len(GAP_BINS) + 1)
    margin /= margin.sum()

    active = state.active
    active_area = areas[active].sum() / areas.sum()

    if active.any():
        mask = np.isin(tree.cover(state.leaves), np.flatnonzero(active))
        active_entropy = area_mean(entropy[active], areas[active])
        active_gap = 0.0 if previous is None else float(
            (pixel_entropy(previous, tree) - current)[mask].mean())
    else:
        active_entropy = active_gap = 0.0

    return np.concatenate((
        [area_mean(entropy, areas), gap],
        used,
        np.zeros(features),
        margin,
        [active_area, active_entropy, active_gap],
        layer_distribution(tree, state.leaves),
        layer_distribution(tree, state.active_leaves),
        np.zeros(3)
    ))


def action_features(scene, state, action, base):
    """ Fills the action dependent entries into a copy of `base`. """

    features = len(scene.registry)
    layers = scene.tree.layers

    phi = base.copy()
    offset = 2 + features

    if action.kind == 'boost':
        for type_id in set(action.learner.feature_types) - state.used:
            phi[offset + type_id] = 1

    reference = scene.costs.reference or 1.0

    tail = 2 + 2 * features + len(GAP_BINS) + 1 + 3 + 2 * layers
    phi[tail] = action.kind == 'split'
    phi[tail + 1] = action.kind == 'boost'
    phi[tail + 2] = scene.action_cost(state, action) / reference

    return phi


def meta_features(scene, state, previous, action):
    """ The meta-feature vector of taking the action in the given state. """

    return action_features(
        scene, state, action, state_features(scene, state, previous))


class Policy(object):
    """ Picks an action of the pool for a given state.

    `select` returns the index of the action and its score, or (None, None)
    if the policy has nothing left to do. Policies without a value estimate
    report None as score.

    """

    def __init__(self, pool):
        self.pool = pool

    def select(self, scene, state, previous):
        raise NotImplementedError  # pragma: nocover


class SequencePolicy(Policy):
    """ Applies a fixed sequence of pool actions to every image. """

    def __init__(self, pool, sequence):
        super().__init__(pool)
        self.sequence = tuple(sequence)

    def select(self, scene, state, previous):
        if state.step >= len(self.sequence):
            return None, None

        return self.sequence[state.step], None


class RandomPolicy(Policy):
    """ Picks a uniformly random pool action at each step.

    The draw only depends on the seed, the image and the step, so budgeted
    rollouts are prefixes of unlimited ones.

    """

    def __init__(self, pool, seed):
        super().__init__(pool)
        self.seed = seed

    def select(self, scene, state, previous):
        generator = rng(self.seed, 'random-policy', scene.name, state.step)
        return int(generator.integers(len(self.pool))), None


class GreedyPolicy(Policy):
    """ Picks the action with the highest immediate reward on the image.

    Looks at the ground truth, so it can only run on training images.

    """

    def select(self, scene, state, previous):
        loss = scene.loss(state)
        rewards = []

        for action in self.pool:
            reached = scene.transition(state, action)
            rewards.append(cost_normalized_gain(
                loss, scene.loss(reached), reached.cost - state.cost))

        best = int(np.argmax(rewards))
        return best, rewards[best]


class LinearPolicy(Policy):
    """ Picks the action maximizing the linear Q estimate, optionally
    perturbed by uniform noise in [-noise, noise].

    """

    def __init__(self, pool, weights, noise=0.0, seed=0):
        super().__init__(pool)
        self.weights = weights
        self.noise = noise
        self.seed = seed

    def scores(self, scene, state, previous):
        base = state_features(scene, state, previous)
        phi = np.array([
            action_features(scene, state, action, base)
            for action in self.pool
        ])

        return phi @ self.weights.eta

    def select(self, scene, state, previous):
        scores = self.scores(scene, state, previous)

        if self.noise > 0:
            generator = rng(self.seed, 'noise', scene.name, state.step)
            scores = scores + generator.uniform(
                -self.noise, self.noise, len(scores))

        best = int(np.argmax(scores))
        return best, float(scores[best])


@dataclass
class Trajectory(object):
    """ The states visited by a rollout, with the taken pool actions and
    the transition records.

    """

    name: str
    states: list
    actions: list
    records: list

    @property
    def final(self):
        return self.states[-1]

    @property
    def cost(self):
        return self.final.cost

    def at_budget(self, budget):
        """ The last state whose cumulative cost stays within the budget
        (the initial state if none does).

        """
        reached = self.states[0]

        for state in self.states[1:]:
            if state.cost > budget:
                break

            reached = state

        return reached


def rollout(policy, scene, budget=np.inf, horizon=HORIZON, early_stop=False,
            until_no_gain=False):
    """ Runs the policy on the scene, stopping before the first action
    exceeding the budget, after `horizon` actions, once the policy's best
    score is non-positive (with `early_stop`, if the policy has scores) or
    after the first action without a positive reward (with
    `until_no_gain`).

    """
    state = scene.initial_state()
    loss = scene.loss(state)

    trajectory = Trajectory(scene.name, [state], [], [])
    previous = None

    while state.step < horizon:
        index, score = policy.select(scene, state, previous)

        if index is None:
            break

        if early_stop and score is not None and score <= 0:
            break

        action = policy.pool[index]

        if state.cost + scene.action_cost(state, action) > budget:
            break

        previous = state
        state, record = scene.step(state, action, loss)
        loss = record.loss_after

        trajectory.states.append(state)
        trajectory.actions.append(index)
        trajectory.records.append(record)

        if until_no_gain and record.reward <= 0:
            break

    return trajectory


def greedy_static_policy(pool, train, horizon=HORIZON):
    """ The fixed action sequence maximizing the mean immediate reward on
    the train scenes at each step, stopping once no action gains.

    """
    sequence = greedy_sequence(
        train, fixed_candidates(pool.actions), horizon)

    indices = [pool.index(action) for action, _ in sequence]
    log.info(f"Static sequence of {len(indices)} actions")

    return SequencePolicy(pool, indices)


def random_policy(pool, seed):
    return RandomPolicy(pool, seed)


def policy_init(pool):
    """ The behaviour policy of the first policy iteration. """

    return GreedyPolicy(pool)
