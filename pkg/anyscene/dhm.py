import csv
import time

import numpy as np

from dataclasses import dataclass, replace
from typing import ClassVar
from anyscene.features import RegionFeatures, action_cost
from anyscene.utils import hash_implementation


# floor of marginals before the multiplicative update is renormalized
EPSILON = 1e-8

# floor inside the logarithms of the labeling loss
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Split(object):
    """ Splits every leaf with a normalized entropy above theta. """

    theta: float
    kind: ClassVar[str] = 'split'

    @property
    def key(self):
        return ('split', float(self.theta))

    def __str__(self):
        return f'split({self.theta:g})'


@dataclass(frozen=True, eq=False)
class Boost(object):
    """ Applies a weak learner to the active leaves. """

    learner: object
    kind: ClassVar[str] = 'boost'

    @property
    def key(self):
        return ('boost', self.learner.id)

    def __eq__(self, other):
        return isinstance(other, Boost) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __str__(self):
        return f'boost({self.learner.id[:12]})'


@dataclass(frozen=True, eq=False)
class DhmState(object):
    """ The state of a dynamic hierarchical model.

    The leaves are a cut through the segmentation tree, ordered by node id.
    `marginals`, `inherited` and `active` are aligned with the leaves, the
    inherited marginal being the one a leaf got from its parent when it
    was created by a split.

    """

    leaves: np.ndarray
    marginals: np.ndarray
    inherited: np.ndarray
    active: np.ndarray
    step: int = 0
    cost: float = 0.0
    used: frozenset = frozenset()

    @property
    def active_leaves(self):
        return self.leaves[self.active]

    @property
    def digest(self):
        m = hash_implementation()

        arrays = (self.leaves, self.marginals, self.inherited, self.active)

        for array in arrays:
            m.update(np.ascontiguousarray(array).tobytes())

        m.update(repr((self.step, self.cost, sorted(self.used))).encode())
        return m.hexdigest()


@dataclass(frozen=True)
class TransitionRecord(object):
    step: int
    before: str
    action: str
    after: str
    loss_before: float
    loss_after: float
    cost: float
    reward: float
    seconds: float = None


def normalized_entropy(marginals):
    """ Entropy of each row, divided by log K so that it lies in [0, 1]. """

    marginals = np.atleast_2d(marginals)
    classes = marginals.shape[-1]

    if classes < 2:
        return np.zeros(len(marginals))

    logs = np.log(np.where(marginals > 0, marginals, 1.0))
    return -(marginals * logs).sum(axis=-1) / np.log(classes)


def uniform(classes):
    return np.full(classes, 1.0 / classes)


def initial_state(tree, prior='uniform', initial_cost=0.0):
    """ The single root leaf with the uniform or the given prior marginal.
    The initial cost accounts for building the hierarchy.

    """
    if isinstance(prior, str):
        assert prior == 'uniform'
        prior = uniform(tree.classes)

    prior = np.asarray(prior, dtype=np.float64)
    prior = prior / prior.sum()

    return DhmState(
        leaves=np.array([tree.root], dtype=np.int64),
        marginals=prior[None, :].copy(),
        inherited=prior[None, :].copy(),
        active=np.ones(1, dtype=bool),
        step=0,
        cost=float(initial_cost),
        used=frozenset()
    )


def splitting(state, theta, tree):
    """ Returns the mask of the leaves the given split would replace. """

    entropy = normalized_entropy(state.marginals)
    has_children = np.array([bool(tree.children[n]) for n in state.leaves])

    return (entropy > theta) & has_children


def split_size(state, theta, tree):
    """ The number of regions the given split would create. """

    mask = splitting(state, theta, tree)
    return sum(len(tree.children[n]) for n in state.leaves[mask])


def apply_split(state, theta, tree, costs):
    """ Replaces the qualifying leaves by their children, which inherit the
    marginal of their parent and form the new active set.

    """
    mask = splitting(state, theta, tree)

    leaves, marginals, inherited, active = [], [], [], []

    for index, node in enumerate(state.leaves):
        if mask[index]:
            for child in tree.children[node]:
                leaves.append(child)
                marginals.append(state.marginals[index])
                inherited.append(state.marginals[index])
                active.append(True)
        else:
            leaves.append(node)
            marginals.append(state.marginals[index])
            inherited.append(state.inherited[index])
            active.append(False)

    leaves = np.array(leaves, dtype=np.int64)
    order = np.argsort(leaves, kind='stable')
    created = int(np.sum(active))

    return replace(
        state,
        leaves=leaves[order],
        marginals=np.array(marginals)[order],
        inherited=np.array(inherited)[order],
        active=np.array(active, dtype=bool)[order],
        step=state.step + 1,
        cost=state.cost + action_cost(Split(theta), created, costs, state.used)
    )


def local_update(marginals, responses, alpha):
    """ The multiplicative belief update q'(k) ~ q(k) exp(alpha h_k). """

    if alpha == 0:
        return marginals.copy()

    updated = marginals * np.exp(alpha * responses)
    updated = np.maximum(updated, EPSILON)

    return updated / updated.sum(axis=-1, keepdims=True)


def learner_inputs(state, tree, features, feature_types, index=None):
    """ Builds the learner input f = [x, q_parent] for the given leaf
    indices (defaults to the active leaves). The root has no parent and
    uses its own marginal.

    """
    index = np.flatnonzero(state.active) if index is None else index
    leaves = state.leaves[index]

    parent = state.inherited[index].copy()
    is_root = leaves == tree.root
    parent[is_root] = state.marginals[index][is_root]

    return np.hstack((features.stack(feature_types, leaves), parent))


def apply_boost(state, learner, tree, features, costs):
    """ Updates the marginals of the active leaves with the weak learner.

    An empty active set leaves the marginals untouched, the learner is
    charged regardless.

    """
    index = np.flatnonzero(state.active)
    marginals = state.marginals

    if len(index):
        inputs = learner_inputs(state, tree, features, learner.feature_types)
        responses = learner.responses(inputs)

        marginals = marginals.copy()
        marginals[index] = local_update(
            marginals[index], responses, learner.alpha)

    cost = action_cost(Boost(learner), None, costs, state.used)

    return replace(
        state,
        marginals=marginals,
        step=state.step + 1,
        cost=state.cost + cost,
        used=state.used | frozenset(learner.feature_types)
    )


def labeling_loss(state, tree, alpha):
    """ Cross-entropy between the ground truth and the leaf marginals plus
    alpha times the ground-truth entropy of the leaves.

    """
    weights = tree.weights[state.leaves]
    truth = tree.distributions[state.leaves]

    keep = weights > 0
    weights, truth = weights[keep], truth[keep]
    marginals = state.marginals[keep]

    cross = -(weights * (truth * np.log(
        np.maximum(marginals, LOG_FLOOR))).sum(axis=1)).sum()

    logs = np.log(np.where(truth > 0, truth, 1.0))
    purity = -(weights * (truth * logs).sum(axis=1)).sum()

    return float(cross + alpha * purity)


def cost_normalized_gain(loss_before, loss_after, cost):
    if cost <= 0:
        return 0.0

    return (loss_before - loss_after) / cost


def reward(state, action, next_state, tree, alpha):
    """ The loss improvement of the transition divided by its cost. """

    return cost_normalized_gain(
        labeling_loss(state, tree, alpha),
        labeling_loss(next_state, tree, alpha),
        next_state.cost - state.cost)


def trajectory_value(rewards, gamma):
    """ The discounted sum of the rewards. """

    assert 0 <= gamma <= 1
    return float(sum(r * gamma ** t for t, r in enumerate(rewards)))


def predict_labels(state, tree):
    """ Labels each pixel with the most likely class of its leaf, the lowest
    class index winning ties.

    """
    return np.argmax(state.marginals, axis=1)[tree.cover(state.leaves)]


class Scene(object):
    """ One image together with everything needed to run the MDP on it:
    the annotated tree, the lazily extracted region features and the cost
    model.

    """

    def __init__(self, sample, tree, registry, costs, alpha=1.0,
                 prior='uniform'):
        self.sample = sample
        self.tree = tree
        self.registry = registry
        self.costs = costs
        self.alpha = alpha
        self.prior = prior
        self.features = RegionFeatures(sample, tree, registry)

    @property
    def name(self):
        return self.sample.name

    @property
    def classes(self):
        return self.sample.classes

    def initial_state(self):
        return initial_state(self.tree, self.prior, self.costs.initial)

    def action_cost(self, state, action):
        if action.kind == 'split':
            created = split_size(state, action.theta, self.tree)
            return action_cost(action, created, self.costs, state.used)

        return action_cost(action, None, self.costs, state.used)

    def transition(self, state, action):
        if action.kind == 'split':
            return apply_split(state, action.theta, self.tree, self.costs)

        return apply_boost(
            state, action.learner, self.tree, self.features, self.costs)

    def loss(self, state):
        return labeling_loss(state, self.tree, self.alpha)

    def step(self, state, action, loss_before=None):
        """ Runs the transition, returning the next state and its record. """

        if loss_before is None:
            loss_before = self.loss(state)

        started = time.perf_counter()
        next_state = self.transition(state, action)
        seconds = time.perf_counter() - started

        loss_after = self.loss(next_state)
        cost = next_state.cost - state.cost

        record = TransitionRecord(
            step=state.step,
            before=state.digest,
            action=str(action),
            after=next_state.digest,
            loss_before=loss_before,
            loss_after=loss_after,
            cost=cost,
            reward=cost_normalized_gain(loss_before, loss_after, cost),
            seconds=seconds if self.costs.wallclock else None
        )

        return next_state, record


def write_trajectory(records, path):
    """ Writes the transition records as CSV for debugging. """

    columns = ['step', 'action', 'cost', 'loss', 'reward']
    wallclock = any(r.seconds is not None for r in records)

    if wallclock:
        columns.append('seconds')

    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(columns)

        for record in records:
            row = [
                record.step,
                record.action,
                f'{record.cost:.9g}',
                f'{record.loss_after:.9g}',
                f'{record.reward:.9g}'
            ]

            if wallclock:
                row.append(f'{record.seconds:.6f}')

            writer.writerow(row)
