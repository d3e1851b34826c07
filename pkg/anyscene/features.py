import numpy as np

from dataclasses import dataclass
from scipy import ndimage
from skimage.feature import local_binary_pattern
from anyscene.errors import DimensionMismatchError, UnknownFeatureTypeError


AVAILABLE_KINDS = {}


class FeatureKind(object):
    """ Interface to implement a kind of feature. Each kind turns an image
    into a per-pixel map, which is then pooled into one vector per region.

    Most kinds are mean-pooled, so the vector of a region is the area
    weighted mean of the vectors of its children.

    """

    dim = None
    mean_pooled = True

    def __init_subclass__(cls, kind, **kwargs):
        assert kind not in AVAILABLE_KINDS
        AVAILABLE_KINDS[kind] = cls

        cls.kind = kind
        super().__init_subclass__(**kwargs)

    def __init__(self, feature_type):
        self.feature_type = feature_type

    def pixel_map(self, sample):
        """ Returns an HxWxD array for the given sample. """

        raise NotImplementedError  # pragma: nocover

    def pool(self, tree, pixels):
        """ Returns an NxD array with the vector of each node of the tree. """

        return mean_pool(tree, pixels)


def mean_pool(tree, pixels):
    pooled = np.zeros((len(tree), pixels.shape[-1]))

    for layer in range(tree.layers):
        nodes = tree.assignment[layer].ravel()

        for d in range(pixels.shape[-1]):
            pooled[:, d] += np.bincount(
                nodes, weights=pixels[..., d].ravel(), minlength=len(tree))

    return pooled / tree.areas[:, None]


def grayscale(sample):
    return sample.pixels.astype(np.float64).mean(axis=-1) / 255


class ColorStats(FeatureKind, kind='color-stat'):
    """ Per-channel mean and standard deviation of the RGB values. """

    dim = 6
    mean_pooled = False

    def pixel_map(self, sample):
        return sample.pixels.astype(np.float64) / 255

    def pool(self, tree, pixels):
        means = mean_pool(tree, pixels)
        variance = np.zeros_like(means)

        for layer in range(tree.layers):
            nodes = tree.assignment[layer]
            deviation = (pixels - means[nodes]) ** 2

            for d in range(pixels.shape[-1]):
                variance[:, d] += np.bincount(
                    nodes.ravel(), weights=deviation[..., d].ravel(),
                    minlength=len(tree))

        variance /= tree.areas[:, None]
        return np.hstack((means, np.sqrt(variance)))


class Position(FeatureKind, kind='position'):
    """ Normalized centroid and bounding box extent of the region. """

    dim = 4
    mean_pooled = False

    def pixel_map(self, sample):
        height, width = sample.shape
        rows, cols = np.mgrid[0:height, 0:width]

        return np.stack((rows, cols), axis=-1).astype(np.float64)

    def pool(self, tree, pixels):
        height, width = tree.shape
        centroid = mean_pool(tree, pixels + 0.5) / (height, width)

        low = np.full((len(tree), 2), np.inf)
        high = np.full((len(tree), 2), -np.inf)

        for layer in range(tree.layers):
            nodes = tree.assignment[layer].ravel()

            for d in range(2):
                np.minimum.at(low[:, d], nodes, pixels[..., d].ravel())
                np.maximum.at(high[:, d], nodes, pixels[..., d].ravel())

        extent = (high - low + 1) / (height, width)
        return np.hstack((centroid, extent))


class GradientHistogram(FeatureKind, kind='gradient-hist'):
    """ Gradient magnitude accumulated into 8 orientation bins. """

    dim = 8

    def pixel_map(self, sample):
        gray = grayscale(sample)

        dx = ndimage.sobel(gray, axis=1)
        dy = ndimage.sobel(gray, axis=0)

        magnitude = np.hypot(dx, dy)
        angle = np.arctan2(dy, dx)

        bins = np.floor((angle + np.pi) / (2 * np.pi) * self.dim)
        bins = np.clip(bins.astype(np.int64), 0, self.dim - 1)

        result = np.zeros((*gray.shape, self.dim))
        np.put_along_axis(result, bins[..., None], magnitude[..., None], -1)

        return result


class LbpHistogram(FeatureKind, kind='lbp-hist'):
    """ Histogram of the 16 uniform local binary patterns with 14 points on
    a circle of radius 2.

    """

    dim = 16

    def pixel_map(self, sample):
        gray = np.round(grayscale(sample) * 255).astype(np.uint8)
        codes = local_binary_pattern(gray, P=14, R=2, method='uniform')
        codes = np.clip(codes.astype(np.int64), 0, self.dim - 1)

        return np.eye(self.dim)[codes]


class SyntheticChannel(FeatureKind, kind='synthetic-channel'):
    """ Mean of one of the extra channels carried by synthetic samples. """

    dim = 1

    def pixel_map(self, sample):
        channel = self.feature_type.channel or 0

        if sample.channels is None or channel >= sample.channels.shape[-1]:
            found = 0 if sample.channels is None else sample.channels.shape[-1]
            raise DimensionMismatchError(
                'channels', (channel + 1, ), (found, ))

        return sample.channels[..., channel:channel + 1].astype(np.float64)


@dataclass(frozen=True)
class FeatureType(object):
    id: int
    name: str
    kind: str
    cost: float
    channel: int = None

    def __post_init__(self):
        if self.kind not in AVAILABLE_KINDS:
            raise UnknownFeatureTypeError(self.kind)

        assert self.cost >= 0

    @property
    def dim(self):
        return AVAILABLE_KINDS[self.kind].dim

    @property
    def implementation(self):
        return AVAILABLE_KINDS[self.kind](self)


class FeatureRegistry(object):
    """ The feature types available to weak learners, with dense ids. """

    def __init__(self, types):
        self.types = tuple(types)

        for index, feature_type in enumerate(self.types):
            assert feature_type.id == index

    @classmethod
    def from_config(cls, entries):
        return cls(
            FeatureType(
                id=index,
                name=entry['name'],
                kind=entry['kind'],
                cost=float(entry['cost']),
                channel=entry.get('channel')
            ) for index, entry in enumerate(entries)
        )

    def __len__(self):
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def __getitem__(self, type_id):
        if not isinstance(type_id, (int, np.integer)):
            raise UnknownFeatureTypeError(type_id)

        if not 0 <= type_id < len(self.types):
            raise UnknownFeatureTypeError(type_id)

        return self.types[type_id]

    @property
    def ids(self):
        return tuple(t.id for t in self.types)

    @property
    def costs(self):
        return tuple(t.cost for t in self.types)


@dataclass(frozen=True)
class CostModel(object):
    """ Deterministic cost units of all actions.

    The feature costs are charged once per image, the first time a feature
    type is used. Splits cost `split` per newly created region, applying a
    weak learner costs `learner` and building the hierarchy `initial`.

    """

    features: tuple
    split: float = 0.05
    learner: float = 0.5
    initial: float = 2.0
    wallclock: bool = False

    def __post_init__(self):
        assert all(c >= 0 for c in self.features)
        assert self.split >= 0 and self.learner >= 0 and self.initial >= 0

    @property
    def reference(self):
        return self.learner + sum(self.features)

    def feature_cost(self, types, used=frozenset()):
        return sum(self.features[t] for t in sorted(set(types) - set(used)))


def compute_feature(feature_type, sample, tree, node_ids):
    """ Returns the vectors of the given feature type for the given nodes,
    one row per node id.

    """
    kind = feature_type.implementation
    pooled = kind.pool(tree, kind.pixel_map(sample))

    return pooled[np.asarray(list(node_ids), dtype=np.int64)]


def action_cost(action, context, model, used_features):
    """ The cost of an action, given the number of newly created regions
    (splits) or nothing (boosts) as context.

    """
    if action.kind == 'split':
        return model.split * context

    learner = action.learner
    return learner.apply_cost + model.feature_cost(
        learner.feature_types, used_features)


class RegionFeatures(object):
    """ Region features of one image, extracted lazily per feature type.

    Each feature type is extracted once for the whole image and pooled for
    all nodes of the tree, later lookups are free.

    """

    def __init__(self, sample, tree, registry):
        self.sample = sample
        self.tree = tree
        self.registry = registry
        self.cache = {}

    def vectors(self, type_id):
        if type_id not in self.cache:
            feature_type = self.registry[type_id]
            self.cache[type_id] = compute_feature(
                feature_type, self.sample, self.tree, range(len(self.tree)))

        return self.cache[type_id]

    def get(self, type_id, node_ids):
        return self.vectors(type_id)[np.asarray(node_ids, dtype=np.int64)]

    def stack(self, type_ids, node_ids):
        node_ids = np.asarray(node_ids, dtype=np.int64)

        if not type_ids:
            return np.zeros((len(node_ids), 0))

        return np.hstack([self.get(t, node_ids) for t in type_ids])
