import copy
import json

from cached_property import cached_property
from anyscene.dataset import SyntheticSpec
from anyscene.errors import ConfigError
from anyscene.features import CostModel, FeatureRegistry
from anyscene.utils import json_digest


# the default costs are order-of-magnitude ratios (cheap colour and
# position, expensive texture), not measured timings
DEFAULTS = {
    'dataset': {
        'root': None,
        'classes': None,
        'synthetic': {},
        'count': 100,
    },
    'split': {
        'fractions': [0.6, 0.2, 0.2],
        'seed': 0,
    },
    'hierarchy': {
        'layers': 8,
        'k': 200.0,
        'sigma': 0.8,
        'min_size': 20,
    },
    'features': [
        {'name': 'color', 'kind': 'color-stat', 'cost': 1.0},
        {'name': 'position', 'kind': 'position', 'cost': 0.5},
        {'name': 'gradient', 'kind': 'gradient-hist', 'cost': 4.0},
        {'name': 'lbp', 'kind': 'lbp-hist', 'cost': 8.0},
        {'name': 'channel0', 'kind': 'synthetic-channel', 'cost': 16.0,
         'channel': 0},
        {'name': 'channel1', 'kind': 'synthetic-channel', 'cost': 2.0,
         'channel': 1},
    ],
    'costs': {
        'split': 0.05,
        'learner': 0.5,
        'initial': 2.0,
        'wallclock': False,
    },
    'loss': {
        'alpha': 1.0,
    },
    'prior': 'uniform',
    'boost': {
        'depth': 2,
        'alphas': [0.0, 0.125, 0.25, 0.5, 1.0],
        'max_types': 2,
    },
    'proposal': {
        'thetas': [0.0, 0.3, 0.6, 1.0],
        'lambdas': [0.01, 0.1, 1.0],
        'learners': [5, 10, 20],
        'clusters': 3,
        'kmeans_iterations': 50,
        'horizon': 40,
    },
    'lspi': {
        'gamma': 0.9,
        'beta': 0.01,
        'iterations': 5,
        'tolerance': 1e-3,
        'noise': 0.1,
        'early_stop': False,
        'horizon': 40,
    },
    'evaluation': {
        'budgets': 12,
    },
    'seed': 0,
    'workers': 1,
    'artifacts': 'artifacts',
}


def merge(defaults, overrides, prefix=''):
    """ Deep-merges the overrides into a copy of the defaults. Unknown keys
    are rejected.

    """
    result = copy.deepcopy(defaults)

    for key, value in overrides.items():
        path = f'{prefix}{key}'

        if key not in defaults:
            raise ConfigError(path, 'unknown key')

        if isinstance(defaults[key], dict) and key != 'synthetic':
            if not isinstance(value, dict):
                raise ConfigError(path, 'expected a mapping')

            result[key] = merge(defaults[key], value, f'{path}.')
        else:
            result[key] = value

    return result


class RunConfig(object):
    """ The fully resolved configuration of a run.

    The digest identifies the configuration and is stamped into every
    artifact built with it.

    """

    def __init__(self, data=None):
        self.data = merge(DEFAULTS, data or {})
        self.validate()

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f'invalid json: {e.msg}')

        if not isinstance(data, dict):
            raise ConfigError(str(path), 'expected a mapping')

        return cls(data)

    def __getitem__(self, key):
        return self.data[key]

    @cached_property
    def digest(self):
        return json_digest(self.data)

    def validate(self):
        def require(condition, key, reason):
            if not condition:
                raise ConfigError(key, reason)

        dataset = self.data['dataset']

        if dataset['root'] is not None:
            require(isinstance(dataset['classes'], int) and
                    dataset['classes'] >= 1,
                    'dataset.classes', 'required for datasets on disk')
        else:
            require(dataset['count'] >= 1, 'dataset.count', 'must be >= 1')

            try:
                SyntheticSpec.from_dict(dataset['synthetic'])
            except (TypeError, ValueError) as e:
                raise ConfigError('dataset.synthetic', str(e))

        fractions = self.data['split']['fractions']
        require(len(fractions) == 3, 'split.fractions', 'expected 3 values')

        require(self.data['hierarchy']['layers'] >= 2,
                'hierarchy.layers', 'must be >= 2')

        require(len(self.data['features']) >= 1,
                'features', 'at least one feature type is required')

        for index, entry in enumerate(self.data['features']):
            require({'name', 'kind', 'cost'} <= set(entry),
                    f'features.{index}', 'name, kind and cost are required')
            require(entry['cost'] >= 0, f'features.{index}.cost', 'negative')

        # raises for unknown kinds
        self.registry()

        for key, value in self.data['costs'].items():
            if key != 'wallclock':
                require(value >= 0, f'costs.{key}', 'negative')

        require(self.data['loss']['alpha'] >= 0, 'loss.alpha', 'negative')
        require(self.data['prior'] in ('uniform', 'global'),
                'prior', 'expected uniform or global')

        proposal = self.data['proposal']
        require(proposal['horizon'] >= 1, 'proposal.horizon', 'must be >= 1')
        require(proposal['learners'], 'proposal.learners', 'empty')
        require(all(0 <= t <= 1 for t in proposal['thetas']),
                'proposal.thetas', 'must be within [0, 1]')

        lspi = self.data['lspi']
        require(0 <= lspi['gamma'] <= 1, 'lspi.gamma', 'must be within [0, 1]')
        require(lspi['beta'] > 0, 'lspi.beta', 'must be positive')
        require(lspi['iterations'] >= 0, 'lspi.iterations', 'negative')

        require(self.data['evaluation']['budgets'] >= 1,
                'evaluation.budgets', 'must be >= 1')
        require(self.data['workers'] >= 1, 'workers', 'must be >= 1')

    @property
    def synthetic(self):
        return self.data['dataset']['root'] is None

    def synthetic_spec(self):
        return SyntheticSpec.from_dict(self.data['dataset']['synthetic'])

    def registry(self):
        return FeatureRegistry.from_config(self.data['features'])

    def cost_model(self):
        costs = self.data['costs']

        return CostModel(
            features=self.registry().costs,
            split=costs['split'],
            learner=costs['learner'],
            initial=costs['initial'],
            wallclock=costs['wallclock'])

    def boost_options(self):
        boost = self.data['boost']

        return {
            'depth': boost['depth'],
            'alphas': tuple(boost['alphas']),
            'max_types': boost['max_types'],
        }
