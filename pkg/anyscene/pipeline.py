import numpy as np

from anyscene import log
from anyscene.dataset import generate_synthetic, label_prior, load_dataset
from anyscene.dataset import save_dataset, split_dataset, write_labels
from anyscene.dhm import Scene, predict_labels, write_trajectory
from anyscene.errors import EmptyDatasetError, StaleArtifactError
from anyscene.errors import UnknownMethodError
from anyscene.lspi import PolicyWeights, lspi_train
from anyscene.metrics import accuracy_gap, budget_grid, curve_from_trajectories
from anyscene.metrics import full_trajectories, write_curves, write_gaps
from anyscene.metrics import write_losses, write_normalized
from anyscene.policy import GreedyPolicy, LinearPolicy, RandomPolicy
from anyscene.policy import SequencePolicy
from anyscene.policy import greedy_static_policy, rollout
from anyscene.proposal import ActionPool, propose_actions
from anyscene.segtree import annotate_ground_truth, build_hierarchy
from anyscene.store import ArtifactStore
from anyscene.utils import parallel_map


METHODS = ('dnm', 'sm', 'rs', 'oracle')


def artifact_store(config):
    return ArtifactStore(config['artifacts'], config.digest)


def load_data(config):
    """ Loads (or generates) the dataset of the run and splits it, unless
    it comes with its own split.

    """
    dataset = config['dataset']

    if config.synthetic:
        data = generate_synthetic(config.synthetic_spec(), dataset['count'])
    else:
        data = load_dataset(dataset['root'], dataset['classes'])

    if data.split and set(data.split) >= set(data.names):
        return data

    split = config['split']
    return split_dataset(data, split['fractions'], split['seed'])


def build_tree(job):
    sample, hierarchy = job
    tree = build_hierarchy(sample, **hierarchy)

    return annotate_ground_truth(tree, sample)


def build_trees(config, store=None, data=None):
    """ Builds and caches the annotated hierarchy of every image. """

    store = store or artifact_store(config)
    data = load_data(config) if data is None else data

    log.info(f"Building hierarchies for {len(data)} images")

    jobs = [(sample, config['hierarchy']) for sample in data]
    trees = parallel_map(build_tree, jobs, config['workers'])

    for sample, tree in zip(data, trees):
        store.write_tree(sample.name, tree)

    return dict(zip(data.names, trees))


def make_scenes(config, store, data, split):
    """ The scenes of the given split, using the cached trees. """

    registry, costs = config.registry(), config.cost_model()
    alpha = config['loss']['alpha']
    prior = scene_prior(config, data)

    return [
        Scene(sample, store.read_tree(sample.name), registry, costs,
              alpha=alpha, prior=prior)
        for sample in data.subset(split)
    ]


def propose(config, store=None, data=None):
    store = store or artifact_store(config)
    data = load_data(config) if data is None else data

    train = make_scenes(config, store, data, 'train')
    validation = make_scenes(config, store, data, 'validation')

    options = config['proposal']

    pool = propose_actions(
        train, validation,
        clusters=options['clusters'],
        seed=config['seed'],
        horizon=options['horizon'],
        thetas=tuple(options['thetas']),
        iterations=options['kmeans_iterations'],
        lambdas=tuple(options['lambdas']),
        counts=tuple(options['learners']),
        scale=config.cost_model().reference,
        **config.boost_options())

    store.write_json('pool.json', pool.to_dict())
    return pool


def load_pool(store):
    return ActionPool.from_dict(store.read_json('pool.json'))


def train(config, store=None, data=None):
    """ Learns the dynamic policy and the static sequence from the pool. """

    store = store or artifact_store(config)
    data = load_data(config) if data is None else data

    pool = load_pool(store)
    scenes = make_scenes(config, store, data, 'train')
    validation = make_scenes(config, store, data, 'validation') or scenes

    options = config['lspi']

    static = greedy_static_policy(pool, scenes, options['horizon'])
    weights = lspi_train(
        pool, scenes, validation,
        gamma=options['gamma'],
        beta=options['beta'],
        iterations=options['iterations'],
        tolerance=options['tolerance'],
        noise=options['noise'],
        horizon=options['horizon'],
        seed=config['seed'])

    store.write_json('policy.json', {
        'weights': weights.to_dict(),
        'static': list(static.sequence),
        'seed': config['seed'],
    })

    return weights, static


def load_policy(config, store, method):
    """ Returns the policy of the given method.

    'dnm' is the learned dynamic policy, 'sm' the static sequence and 'rs'
    the random one. 'oracle' picks the best immediate reward by looking at
    the ground truth of each image, so it only works on labeled images.

    """
    if method not in METHODS:
        raise UnknownMethodError(method)

    pool = load_pool(store)

    if method == 'rs':
        return RandomPolicy(pool, config['seed'])

    if method == 'oracle':
        return GreedyPolicy(pool)

    document = store.read_json('policy.json')

    if method == 'sm':
        return SequencePolicy(pool, document['static'])

    weights = PolicyWeights.from_dict(document['weights'])

    if weights.pool != pool.digest:
        raise StaleArtifactError('policy.json', pool.digest, weights.pool)

    return LinearPolicy(pool, weights)


def predict(config, image, budget, out, method='dnm', trajectory=None,
            store=None, data=None):
    """ Labels one image within the budget, writing the label map. """

    store = store or artifact_store(config)
    data = load_data(config) if data is None else data

    sample = data.get(image)
    scene = Scene(
        sample, store.read_tree(sample.name), config.registry(),
        config.cost_model(), alpha=config['loss']['alpha'],
        prior=scene_prior(config, data))

    policy = load_policy(config, store, method)
    options = config['lspi']

    result = rollout(
        policy, scene, budget=budget, horizon=options['horizon'],
        early_stop=options['early_stop'])

    labels = predict_labels(result.final, scene.tree)
    write_labels(labels.astype(np.uint8), out)

    if trajectory:
        write_trajectory(result.records, trajectory)

    log.info((
        f"Labeled {image} with {len(result.actions)} actions "
        f"at cost {result.cost:.6g}"
    ))

    return result


def scene_prior(config, data):
    if config['prior'] != 'global':
        return 'uniform'

    return label_prior(data.subset('train'), data.samples[0].classes)


def method_trajectories(config, store, methods, scenes):
    options = config['lspi']

    return {
        method: full_trajectories(
            load_policy(config, store, method), scenes,
            options['horizon'], options['early_stop'])
        for method in methods
    }


def evaluate(config, methods, out, split='test', store=None, data=None,
             normalized=None, losses=None):
    """ Writes the anytime curves of the methods on one shared budget grid,
    optionally with their normalized form and their labeling loss.

    """
    store = store or artifact_store(config)
    data = load_data(config) if data is None else data

    scenes = make_scenes(config, store, data, split)

    if not scenes:
        raise EmptyDatasetError(split)

    trajectories = method_trajectories(config, store, methods, scenes)

    final = max(t.cost for runs in trajectories.values() for t in runs)
    budgets = budget_grid(
        config.cost_model().initial, final,
        config['evaluation']['budgets'])

    curves = [
        curve_from_trajectories(
            method, split, scenes, trajectories[method], budgets)
        for method in methods
    ]

    write_curves(curves, out)

    if normalized:
        write_normalized(curves, normalized)

    if losses:
        write_losses(curves, losses)

    return curves


def gap(config, method_a, method_b, out, split='test', store=None, data=None):
    """ Writes the per-image accuracy gap between two methods. """

    store = store or artifact_store(config)
    data = load_data(config) if data is None else data

    scenes = make_scenes(config, store, data, split)

    if not scenes:
        raise EmptyDatasetError(split)

    trajectories = method_trajectories(
        config, store, (method_a, method_b), scenes)

    gaps = accuracy_gap(
        scenes, trajectories[method_a], trajectories[method_b])

    write_gaps(method_a, method_b, gaps, out)
    return gaps


def generate(config, out):
    """ Writes the (split) synthetic dataset of the configuration. """

    data = load_data(config)
    save_dataset(data, out)

    log.info(f"Wrote {len(data)} synthetic images to {out}")
    return data
