import json
import numpy as np
import pytest
import tempfile

from pathlib import Path
from anyscene.boost import fit_learner_sequence, residual_samples
from anyscene.config import DEFAULTS
from anyscene.dataset import SyntheticSpec, generate_synthetic
from anyscene.dhm import Boost, DhmState, Scene, Split, uniform
from anyscene.features import CostModel, FeatureRegistry
from anyscene.proposal import ActionPool
from anyscene.segtree import annotate_ground_truth, build_hierarchy


@pytest.fixture(scope='function')
def temporary_path():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


@pytest.fixture(scope='session')
def spec():
    return SyntheticSpec(
        seed=3, classes=3, height=24, width=24, shapes=(2, 4), noise=0.1)


@pytest.fixture(scope='session')
def samples(spec):
    return generate_synthetic(spec, 4).samples


@pytest.fixture(scope='session')
def trees(samples):
    return [
        annotate_ground_truth(
            build_hierarchy(s, layers=4, k=100.0, min_size=10), s)
        for s in samples
    ]


@pytest.fixture(scope='session')
def registry():
    return FeatureRegistry.from_config(DEFAULTS['features'])


@pytest.fixture(scope='session')
def costs(registry):
    return CostModel(registry.costs)


@pytest.fixture(scope='session')
def scenes(samples, trees, registry, costs):
    return [
        Scene(sample, tree, registry, costs)
        for sample, tree in zip(samples, trees)
    ]


@pytest.fixture(scope='session')
def scene(scenes):
    return scenes[0]


def finest_state(tree, classes):
    """ All finest regions as active leaves with uniform marginals. """

    leaves = tree.layer_nodes(tree.finest)
    marginals = np.tile(uniform(classes), (len(leaves), 1))

    return DhmState(
        leaves=leaves,
        marginals=marginals,
        inherited=marginals.copy(),
        active=np.ones(len(leaves), dtype=bool))


@pytest.fixture(scope='session')
def finest():
    return finest_state


@pytest.fixture(scope='session')
def active_samples(scenes):
    return [
        sample
        for scene in scenes
        for sample in residual_samples(
            scene, finest_state(scene.tree, scene.classes))
    ]


@pytest.fixture(scope='session')
def learners(active_samples, registry, costs):
    return fit_learner_sequence(
        active_samples, 2, 0.01, frozenset(), registry, costs, max_types=1)


@pytest.fixture(scope='session')
def pool(learners):
    actions = [Split(0.0), Split(0.6), Split(1.0)]
    actions.extend(Boost(learner) for learner in learners)

    return ActionPool(actions)


@pytest.fixture(scope='session')
def random_state():
    """ Returns a function producing a random valid state of a tree. """

    def make(tree, generator, classes=None):
        classes = classes or tree.classes
        leaves, stack = [], [tree.root]

        while stack:
            node = stack.pop()

            if tree.children[node] and generator.random() < 0.7:
                stack.extend(tree.children[node])
            else:
                leaves.append(node)

        leaves = np.array(sorted(leaves), dtype=np.int64)

        return DhmState(
            leaves=leaves,
            marginals=generator.dirichlet(np.ones(classes), len(leaves)),
            inherited=generator.dirichlet(np.ones(classes), len(leaves)),
            active=generator.random(len(leaves)) < 0.5,
            step=int(generator.integers(0, 5)),
            cost=float(generator.uniform(0, 10)))

    return make


@pytest.fixture(scope='function')
def run_config(temporary_path):
    """ Writes a tiny run configuration and returns its path. """

    data = {
        'dataset': {
            'synthetic': {
                'seed': 5, 'classes': 3, 'height': 24, 'width': 24,
                'shapes': [2, 3], 'noise': 0.1
            },
            'count': 8,
        },
        'split': {'fractions': [0.5, 0.25, 0.25], 'seed': 1},
        'hierarchy': {'layers': 4, 'k': 100.0, 'min_size': 10},
        'boost': {'max_types': 1},
        'proposal': {
            'thetas': [0.0, 0.6, 1.0],
            'lambdas': [0.1],
            'learners': [1, 2],
            'clusters': 2,
            'horizon': 4,
        },
        'lspi': {'iterations': 1, 'horizon': 6},
        'evaluation': {'budgets': 4},
        'artifacts': str(temporary_path / 'artifacts'),
    }

    path = temporary_path / 'run.json'

    with path.open('w') as f:
        json.dump(data, f)

    return path
