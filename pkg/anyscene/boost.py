import itertools

import numpy as np

from dataclasses import dataclass, replace
from sklearn.tree import DecisionTreeRegressor
from anyscene import log
from anyscene.dhm import local_update
from anyscene.errors import DegenerateSamplesError
from anyscene.utils import json_digest


ALPHAS = (0.0, 0.125, 0.25, 0.5, 1.0)


@dataclass(frozen=True, eq=False)
class RegressionTree(object):
    """ A fitted regression tree in array form.

    Leaves have -1 as their children, `value` holds the prediction of each
    node (only the leaf values are used).

    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray

    @classmethod
    def from_estimator(cls, estimator):
        tree = estimator.tree_

        return cls(
            left=tree.children_left.astype(np.int64),
            right=tree.children_right.astype(np.int64),
            feature=tree.feature.astype(np.int64),
            threshold=tree.threshold.astype(np.float64),
            value=tree.value[:, 0, 0].astype(np.float64))

    def predict(self, inputs):
        node = np.zeros(len(inputs), dtype=np.int64)

        while True:
            internal = self.left[node] >= 0

            if not internal.any():
                return self.value[node]

            rows = np.flatnonzero(internal)
            current = node[rows]
            goes_left = (
                inputs[rows, self.feature[current]] <= self.threshold[current])

            node[rows] = np.where(
                goes_left, self.left[current], self.right[current])

    def to_dict(self):
        return {
            'left': self.left.tolist(),
            'right': self.right.tolist(),
            'feature': self.feature.tolist(),
            'threshold': self.threshold.tolist(),
            'value': self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            left=np.array(data['left'], dtype=np.int64),
            right=np.array(data['right'], dtype=np.int64),
            feature=np.array(data['feature'], dtype=np.int64),
            threshold=np.array(data['threshold'], dtype=np.float64),
            value=np.array(data['value'], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class WeakLearner(object):
    """ One regression tree per class over f = [x, q_parent], where x are
    the vectors of `feature_types` (in that order) and q_parent the
    marginal inherited from the parent region.

    The id is a digest of the parameters, identical learners share it.

    """

    trees: tuple
    alpha: float
    feature_types: tuple
    apply_cost: float
    penalty: float = 0.0
    error: float = None
    id: str = None

    def __post_init__(self):
        if self.id is None:
            object.__setattr__(self, 'id', json_digest(self.fingerprint()))

    def fingerprint(self):
        def rounded(values):
            return [round(float(v), 10) for v in values]

        return {
            'alpha': self.alpha,
            'feature_types': list(self.feature_types),
            'trees': [{
                'feature': t.feature.tolist(),
                'threshold': rounded(t.threshold),
                'value': rounded(t.value)
            } for t in self.trees]
        }

    def responses(self, inputs):
        return np.column_stack([tree.predict(inputs) for tree in self.trees])

    def to_dict(self):
        return {
            'id': self.id,
            'alpha': self.alpha,
            'feature_types': list(self.feature_types),
            'apply_cost': self.apply_cost,
            'penalty': self.penalty,
            'error': self.error,
            'trees': [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            trees=tuple(RegressionTree.from_dict(t) for t in data['trees']),
            alpha=data['alpha'],
            feature_types=tuple(data['feature_types']),
            apply_cost=data['apply_cost'],
            penalty=data['penalty'],
            error=data['error'],
            id=data['id'])


@dataclass(frozen=True, eq=False)
class ResidualSample(object):
    """ An active region as seen by the weak learner fit. """

    node: int
    weight: float
    target: np.ndarray
    marginal: np.ndarray
    parent: np.ndarray
    features: dict
    root: bool = False


def residual_samples(scene, state):
    """ The residual samples of the active leaves of the given state. """

    tree = scene.tree
    index = np.flatnonzero(state.active)
    leaves = state.leaves[index]

    features = {
        t: scene.features.get(t, leaves) for t in scene.registry.ids
    }

    samples = []

    for row, (i, node) in enumerate(zip(index, leaves)):
        root = node == tree.root
        marginal = state.marginals[i]

        samples.append(ResidualSample(
            node=int(node),
            weight=float(tree.weights[node]),
            target=tree.distributions[node] - marginal,
            marginal=marginal,
            parent=marginal if root else state.inherited[i],
            features={t: v[row] for t, v in features.items()},
            root=bool(root)
        ))

    return samples


def candidate_subsets(type_ids, max_types=2):
    """ All feature type subsets up to the given size, the empty subset
    (parent marginal only) first.

    """
    for size in range(0, max_types + 1):
        yield from itertools.combinations(sorted(type_ids), size)


def fit_tree(inputs, targets, weights, depth):
    estimator = DecisionTreeRegressor(max_depth=depth, random_state=0)
    estimator.fit(inputs, targets, sample_weight=weights)

    return RegressionTree.from_estimator(estimator)


def weighted_error(truth, marginals, weights):
    return float(
        (weights * ((truth - marginals) ** 2).sum(axis=1)).sum()
        / weights.sum())


def line_search(marginals, truth, responses, weights, alphas):
    """ Picks the coefficient whose multiplicative update leaves the
    smallest weighted squared error, the smallest coefficient on ties.

    """
    best = None

    for alpha in sorted(alphas):
        updated = local_update(marginals, responses, alpha)
        error = weighted_error(truth, updated, weights)

        if best is None or error < best[1]:
            best = (alpha, error)

    return best


def fit_weak_learner(samples, penalty, used, registry, costs,
                     depth=2, alphas=ALPHAS, max_types=2):
    """ Fits the candidate minimizing the weighted squared error of the
    updated marginals plus penalty * (learner cost + new feature costs).

    The candidates are all feature type subsets of up to `max_types`
    types. Ties go to the cheapest candidate, then the lowest type ids.

    """
    weights = np.array([s.weight for s in samples], dtype=np.float64)

    if not len(samples) or not (weights > 0).any():
        raise DegenerateSamplesError(len(samples))

    targets = np.array([s.target for s in samples])
    marginals = np.array([s.marginal for s in samples])
    parents = np.array([s.parent for s in samples])
    truth = targets + marginals

    blocks = {
        t: np.array([s.features[t] for s in samples]).reshape(len(samples), -1)
        for t in registry.ids
    }

    best = None

    for subset in candidate_subsets(registry.ids, max_types):
        inputs = np.hstack([blocks[t] for t in subset] + [parents])

        trees = tuple(
            fit_tree(inputs, targets[:, k], weights, depth)
            for k in range(targets.shape[1])
        )

        responses = np.column_stack([t.predict(inputs) for t in trees])
        alpha, error = line_search(
            marginals, truth, responses, weights, alphas)

        incremental = costs.feature_cost(subset, used)
        objective = error + penalty * (costs.learner + incremental)
        key = (objective, incremental, subset)

        if best is None or key < best[0]:
            best = (key, subset, trees, alpha, error)

    _, subset, trees, alpha, error = best

    return WeakLearner(
        trees=trees,
        alpha=alpha,
        feature_types=subset,
        apply_cost=costs.learner,
        penalty=penalty,
        error=error)


def advance(samples, learner):
    """ Applies the learner to the samples, returning updated samples. """

    parents = np.array([s.parent for s in samples])
    inputs = np.hstack(
        [np.array([s.features[t] for s in samples]).reshape(len(samples), -1)
         for t in learner.feature_types] + [parents])

    marginals = np.array([s.marginal for s in samples])
    updated = local_update(marginals, learner.responses(inputs), learner.alpha)

    return [
        replace(
            s,
            target=s.target + s.marginal - q,
            marginal=q,
            parent=q if s.root else s.parent)
        for s, q in zip(samples, updated)
    ]


def fit_learner_sequence(samples, count, penalty, used, registry, costs,
                         **options):
    """ Fits `count` learners stage-wise, each on the residuals left by the
    marginals updated with the previous learners.

    """
    assert count >= 1

    learners = []
    used = frozenset(used)

    for stage in range(count):
        learner = fit_weak_learner(
            samples, penalty, used, registry, costs, **options)

        log.debug((
            f"Stage {stage}: types {learner.feature_types}, "
            f"alpha {learner.alpha}, error {learner.error:.6f}"
        ))

        learners.append(learner)
        samples = advance(samples, learner)
        used = used | frozenset(learner.feature_types)

    return learners
