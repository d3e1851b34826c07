import numpy as np

from cached_property import cached_property
from dataclasses import dataclass
from scipy.cluster.vq import kmeans2
from anyscene import log
from anyscene.boost import WeakLearner, fit_learner_sequence, residual_samples
from anyscene.dhm import Boost, Split, cost_normalized_gain
from anyscene.errors import DegenerateSamplesError
from anyscene.errors import EmptyDatasetError
from anyscene.errors import InvalidHorizonError
from anyscene.utils import json_digest


POOL_VERSION = 1

THETAS = (0.0, 0.3, 0.6, 1.0)
LAMBDAS = (0.01, 0.1, 1.0)
LEARNER_COUNTS = (5, 10, 20)


class ActionPool(object):
    """ The discrete action space shared by all policies.

    Each action has a provenance record naming the sequence which produced
    it ('all' for the full train set, 'cluster-<i>' for image clusters and
    'grid' for splits added to complete the theta grid) and the step.

    """

    def __init__(self, actions, provenance=None):
        assert actions, "an action pool must not be empty"

        self.actions = tuple(actions)
        self.provenance = tuple(
            provenance or ({'source': 'grid', 'step': 0}, ) * len(actions))

        assert len(self.provenance) == len(self.actions)

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, index):
        return self.actions[index]

    def index(self, action):
        return self.actions.index(action)

    @property
    def thetas(self):
        return tuple(a.theta for a in self.actions if a.kind == 'split')

    @property
    def learners(self):
        return tuple(a.learner for a in self.actions if a.kind == 'boost')

    @cached_property
    def digest(self):
        return json_digest(self.to_dict())

    def to_dict(self):
        actions = []

        for action in self.actions:
            if action.kind == 'split':
                actions.append({'kind': 'split', 'theta': action.theta})
            else:
                actions.append({'kind': 'boost', 'learner': action.learner.id})

        return {
            'version': POOL_VERSION,
            'actions': actions,
            'provenance': list(self.provenance),
            'learners': {x.id: x.to_dict() for x in self.learners},
        }

    @classmethod
    def from_dict(cls, data):
        learners = {
            key: WeakLearner.from_dict(value)
            for key, value in data['learners'].items()
        }

        actions = []

        for entry in data['actions']:
            if entry['kind'] == 'split':
                actions.append(Split(entry['theta']))
            else:
                actions.append(Boost(learners[entry['learner']]))

        return cls(actions, [dict(p) for p in data['provenance']])

    @classmethod
    def merge(cls, sequences, thetas=THETAS):
        """ Unions the given sequences of (action, provenance) pairs in
        order, dropping duplicate splits (by theta) and duplicate boosts (by
        learner id). Missing splits of the theta grid are appended.

        """
        seen = set()
        actions, provenance = [], []

        for sequence in sequences:
            for action, origin in sequence:
                if action.key in seen:
                    continue

                seen.add(action.key)
                actions.append(action)
                provenance.append(origin)

        for theta in thetas:
            action = Split(theta)

            if action.key not in seen:
                seen.add(action.key)
                actions.append(action)
                provenance.append({'source': 'grid', 'step': 0})

        return cls(actions, provenance)


@dataclass(frozen=True)
class ChainOutcome(object):
    """ The states reached by running a chain of actions on each image. """

    states: tuple
    rewards: tuple

    @property
    def mean_reward(self):
        return float(np.mean(self.rewards)) if self.rewards else 0.0


def run_chain(scene, state, chain):
    """ Runs the actions in order, returning the state reached and the loss
    improvement divided by the cost of the whole chain.

    """
    before = scene.loss(state)
    current = state

    for action in chain:
        current = scene.transition(current, action)

    return current, cost_normalized_gain(
        before, scene.loss(current), current.cost - state.cost)


def run_chains(scenes, states, chain):
    outcomes = [
        run_chain(scene, state, chain)
        for scene, state in zip(scenes, states)
    ]

    return ChainOutcome(
        states=tuple(o[0] for o in outcomes),
        rewards=tuple(o[1] for o in outcomes))


def fixed_candidates(actions):
    """ Candidate provider offering each of the given actions on its own. """

    chains = [(action, ) for action in actions]

    def provide(scenes, states):
        return chains

    return provide


class ProposalCandidates(object):
    """ Candidate provider of the action proposal.

    Offers one split per theta and, for each lambda and each learner count
    p, the chain of the first p learners fitted stage-wise on the active
    regions of all images.

    """

    def __init__(self, thetas=THETAS, lambdas=LAMBDAS, counts=LEARNER_COUNTS,
                 scale=1.0, **options):
        self.thetas = tuple(thetas)
        self.lambdas = tuple(lambdas)
        self.counts = tuple(sorted(counts))
        self.scale = scale
        self.options = options

    def __call__(self, scenes, states):
        chains = [(Split(theta), ) for theta in self.thetas]

        samples = [
            sample
            for scene, state in zip(scenes, states)
            for sample in residual_samples(scene, state)
        ]

        # feature types used by all images are free for everyone
        used = frozenset.intersection(*(s.used for s in states))
        registry, costs = scenes[0].registry, scenes[0].costs

        for lam in self.lambdas:
            try:
                learners = fit_learner_sequence(
                    samples, self.counts[-1], lam * self.scale, used,
                    registry, costs, **self.options)
            except DegenerateSamplesError:
                log.warn("No active region with labeled pixels, splits only")
                break

            for count in self.counts:
                chains.append(tuple(Boost(x) for x in learners[:count]))

        return chains


def greedy_sequence(scenes, candidates, horizon, validation=(),
                    stop_on_loss=True):
    """ Runs the synchronized greedy generator.

    At each step the candidate chain with the highest mean reward over all
    images is picked (the first one on ties) and every image is advanced
    by it. The sequence ends after `horizon` actions or, with
    `stop_on_loss`, once the picked chain has a non-positive mean reward on
    the validation scenes (the training scenes if there are none).

    Returns the list of (action, step) pairs.

    """
    if horizon < 1:
        raise InvalidHorizonError(horizon)

    if not scenes:
        raise EmptyDatasetError('train')

    states = tuple(s.initial_state() for s in scenes)
    held_out = tuple(s.initial_state() for s in validation)

    sequence = []
    step = 0

    while len(sequence) < horizon:
        chains = candidates(scenes, states)

        if not chains:
            break

        outcomes = [run_chains(scenes, states, c) for c in chains]
        rewards = [o.mean_reward for o in outcomes]
        best = int(np.argmax(rewards))

        chain = chains[best][:horizon - len(sequence)]
        outcome = outcomes[best]

        if len(chain) < len(chains[best]):
            outcome = run_chains(scenes, states, chain)

        if validation:
            checked = run_chains(validation, held_out, chain)
            score = checked.mean_reward
        else:
            checked = None
            score = outcome.mean_reward

        if stop_on_loss and score <= 0:
            log.info(f"Proposal stops at step {step}, mean reward {score:.6g}")
            break

        log.info((
            f"Proposal step {step} picked "
            f"{', '.join(str(a) for a in chain)} "
            f"(mean reward {outcome.mean_reward:.6g})"
        ))

        states = outcome.states
        held_out = checked.states if checked else held_out

        sequence.extend((action, step) for action in chain)
        step += 1

    return sequence


def image_descriptor(sample, classes, bins=8):
    """ The 24-bin global colour histogram followed by the label prior. """

    pixels = sample.pixels.reshape(-1, 3).astype(np.int64)
    histogram = np.concatenate([
        np.bincount(pixels[:, c] * bins // 256, minlength=bins)
        for c in range(3)
    ]).astype(np.float64)

    histogram /= histogram.sum()

    labels = sample.labels[sample.labeled].astype(np.int64)
    prior = np.bincount(labels, minlength=classes)[:classes].astype(float)

    if prior.sum():
        prior = prior / prior.sum()
    else:
        prior = np.full(classes, 1 / classes)

    return np.concatenate((histogram, prior))


def cluster_images(samples, clusters, seed, iterations=50):
    """ Groups the samples by K-means on their descriptors, returning the
    list of non-empty clusters (as sample index lists).

    """
    clusters = min(clusters, len(samples))

    if clusters <= 1:
        return [list(range(len(samples)))]

    data = np.array([image_descriptor(s, s.classes) for s in samples])
    _, labels = kmeans2(
        data, clusters, iter=iterations, minit='points', seed=seed)

    groups = [np.flatnonzero(labels == c).tolist() for c in range(clusters)]

    if any(not g for g in groups):
        log.warn(f"{sum(not g for g in groups)} of {clusters} clusters empty")

    return [g for g in groups if g]


def propose_actions(train, validation, clusters=3, seed=0, horizon=40,
                    thetas=THETAS, iterations=50, **options):
    """ Builds the action pool from greedy sequences on the full train set
    and on each image cluster.

    `train` and `validation` are lists of scenes, the remaining options are
    passed to `ProposalCandidates`.

    """
    if not train:
        raise EmptyDatasetError('train')

    if horizon < 1:
        raise InvalidHorizonError(horizon)

    candidates = ProposalCandidates(thetas=thetas, **options)

    def tagged(scenes, source):
        log.info(f"Proposing actions on {len(scenes)} images ({source})")
        sequence = greedy_sequence(scenes, candidates, horizon, validation)

        return [
            (action, {'source': source, 'step': step})
            for action, step in sequence
        ]

    sequences = [tagged(train, 'all')]
    groups = cluster_images([s.sample for s in train], clusters, seed,
                            iterations)

    if len(groups) > 1:
        for index, group in enumerate(groups):
            sequences.append(
                tagged([train[i] for i in group], f'cluster-{index}'))

    pool = ActionPool.merge(sequences, thetas)
    log.info(f"Proposed {len(pool)} actions ({len(pool.learners)} learners)")

    return pool
