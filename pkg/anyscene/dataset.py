import json

import numpy as np

from dataclasses import dataclass, field, replace
from pathlib import Path
from PIL import Image
from anyscene import log, VOID
from anyscene.errors import DimensionMismatchError
from anyscene.errors import EmptyDatasetError
from anyscene.errors import FractionSumError
from anyscene.errors import ImageTooSmallError
from anyscene.errors import LabelRangeError
from anyscene.errors import MissingPairError
from anyscene.errors import UnknownImageError
from anyscene.utils import rng


SPLITS = ('train', 'validation', 'test')
MIN_SIZE = 8

# well separated colours, permuted per seed to get the class palette
PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (170, 110, 40),
)

TEXTURE_AMPLITUDE = 12.0
COLOR_NOISE = 48.0


@dataclass(frozen=True, eq=False)
class ImageSample(object):
    """ A single image with its label map.

    Synthetic samples also carry `channels`, an HxWxC float array of extra
    feature channels with a known amount of class information.

    """

    name: str
    pixels: np.ndarray
    labels: np.ndarray
    classes: int
    channels: np.ndarray = None

    def __post_init__(self):
        height, width = self.labels.shape[:2]

        if self.pixels.shape[:2] != self.labels.shape:
            raise DimensionMismatchError(
                self.name, self.pixels.shape[:2], self.labels.shape)

        if height < MIN_SIZE or width < MIN_SIZE:
            raise ImageTooSmallError(self.name, self.labels.shape)

        if self.channels is not None:
            if self.channels.shape[:2] != self.labels.shape:
                raise DimensionMismatchError(
                    self.name, self.labels.shape, self.channels.shape[:2])

        invalid = (self.labels >= self.classes) & (self.labels != VOID)

        if invalid.any():
            raise LabelRangeError(
                self.name, self.labels[invalid].max(), self.classes)

    @property
    def shape(self):
        return self.labels.shape

    @property
    def labeled(self):
        return self.labels != VOID


@dataclass(frozen=True)
class Dataset(object):
    """ An immutable, ordered list of samples with an optional assignment of
    each sample to the train, validation or test split.

    """

    samples: tuple
    split: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def names(self):
        return tuple(s.name for s in self.samples)

    def get(self, name):
        for sample in self.samples:
            if sample.name == name:
                return sample

        raise UnknownImageError(name)

    def subset(self, split):
        """ Returns the samples of the given split, in dataset order. """

        return tuple(
            s for s in self.samples if self.split.get(s.name) == split)


@dataclass(frozen=True)
class SyntheticSpec(object):
    """ Describes a family of synthetic scenes.

    The informativeness maps 'color', 'texture' and 'channel<j>' to values
    in [0, 1]. At zero, the respective cue carries no class information.

    """

    seed: int = 0
    classes: int = 4
    height: int = 64
    width: int = 64
    shapes: tuple = (3, 7)
    noise: float = 0.2
    channels: int = 2
    informativeness: dict = field(default_factory=lambda: {
        'color': 0.4,
        'texture': 0.6,
        'channel0': 1.0,
        'channel1': 0.3
    })

    def __post_init__(self):
        if not 0 <= self.noise <= 1:
            raise ValueError(f"noise must be within [0, 1]: {self.noise}")

        for key, value in self.informativeness.items():
            if not 0 <= value <= 1:
                raise ValueError(f"{key} must be within [0, 1]: {value}")

        if self.height < MIN_SIZE or self.width < MIN_SIZE:
            raise ImageTooSmallError('synthetic', (self.height, self.width))

        if not 1 <= self.shapes[0] <= self.shapes[1]:
            raise ValueError(f"invalid shape range: {self.shapes}")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)

        if 'shapes' in data:
            data['shapes'] = tuple(data['shapes'])

        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))

    def info(self, key):
        return self.informativeness.get(key, 0.0)


def read_image(path):
    with Image.open(path) as image:
        return np.asarray(image.convert('RGB'), dtype=np.uint8)


def read_labels(path):
    with Image.open(path) as image:
        labels = np.array(image, dtype=np.uint8)

    if labels.ndim != 2:
        raise DimensionMismatchError(path, ('H', 'W'), labels.shape)

    return labels


def write_labels(labels, path):
    Image.fromarray(labels.astype(np.uint8)).save(path)


def load_dataset(root, classes):
    """ Loads all image/label pairs below the given root, ordered by name.

    The expected layout is:

        <root>/images/<id>.png
        <root>/labels/<id>.png
        <root>/channels/<id>.npy (optional)
        <root>/split.json (optional)

    """

    root = Path(root)

    images = {p.stem: p for p in (root / 'images').glob('*.png')}
    labels = {p.stem: p for p in (root / 'labels').glob('*.png')}

    for name in sorted(set(images) ^ set(labels)):
        raise MissingPairError(images.get(name) or labels.get(name))

    samples = []

    for name in sorted(images):
        pixels = read_image(images[name])
        label_map = read_labels(labels[name])

        if pixels.shape[:2] != label_map.shape:
            raise DimensionMismatchError(
                labels[name], pixels.shape[:2], label_map.shape)

        invalid = (label_map >= classes) & (label_map != VOID)

        if invalid.any():
            raise LabelRangeError(
                labels[name], label_map[invalid].max(), classes)

        channels = root / 'channels' / f'{name}.npy'
        channels = np.load(channels) if channels.exists() else None

        samples.append(ImageSample(name, pixels, label_map, classes, channels))

    split = {}

    if (root / 'split.json').exists():
        with (root / 'split.json').open('r') as f:
            split = json.load(f)

    log.info(f"Loaded {len(samples)} samples from {root}")

    return Dataset(tuple(samples), split)


def save_dataset(dataset, root):
    """ Writes the dataset in the layout read by `load_dataset`. """

    root = Path(root)

    for folder in ('images', 'labels', 'channels'):
        (root / folder).mkdir(parents=True, exist_ok=True)

    for sample in dataset:
        Image.fromarray(np.ascontiguousarray(sample.pixels)).save(
            root / 'images' / f'{sample.name}.png')

        write_labels(sample.labels, root / 'labels' / f'{sample.name}.png')

        if sample.channels is not None:
            np.save(root / 'channels' / f'{sample.name}.npy', sample.channels)

    if dataset.split:
        with (root / 'split.json').open('w') as f:
            json.dump(dataset.split, f, sort_keys=True, indent=2)


def class_palette(spec):
    order = rng(spec.seed, 'palette').permutation(len(PALETTE))
    colors = [PALETTE[i] for i in order[:spec.classes]]

    # more classes than prepared colours get random ones
    extra = spec.classes - len(colors)

    if extra > 0:
        generator = rng(spec.seed, 'palette-extra')
        colors.extend(generator.integers(0, 256, size=(extra, 3)).tolist())

    return np.array(colors, dtype=np.float64)


def class_texture(label, classes, height, width):
    """ Class dependent stripes: each class gets its own frequency and
    orientation, the amplitude is applied by the caller.

    """
    y, x = np.mgrid[0:height, 0:width]
    angle = label * np.pi / max(classes, 1)
    frequency = 2 + label

    phase = (x * np.cos(angle) + y * np.sin(angle)) / max(height, width)
    return np.sin(2 * np.pi * frequency * phase)


def render_scene(spec, index):
    """ Renders the label map of the scene with the given index: a
    background class overdrawn by rectangles and ellipses.

    """
    generator = rng(spec.seed, 'scene', index)
    height, width = spec.height, spec.width

    background = int(generator.integers(spec.classes))
    labels = np.full((height, width), background, dtype=np.uint8)

    y, x = np.mgrid[0:height, 0:width]

    for _ in range(generator.integers(spec.shapes[0], spec.shapes[1] + 1)):
        label = int(generator.integers(spec.classes))
        cy, cx = generator.uniform(0, height), generator.uniform(0, width)
        ry = generator.uniform(height / 10, height / 3)
        rx = generator.uniform(width / 10, width / 3)

        if generator.random() < 0.5:
            mask = (np.abs(y - cy) <= ry) & (np.abs(x - cx) <= rx)
        else:
            mask = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1

        labels[mask] = label

    return labels


def synthetic_sample(spec, index, palette=None):
    palette = class_palette(spec) if palette is None else palette
    generator = rng(spec.seed, 'noise', index)
    height, width = spec.height, spec.width

    labels = render_scene(spec, index)

    gray = np.full(3, 128.0)
    pixels = np.zeros((height, width, 3))
    channels = np.zeros((height, width, spec.channels), dtype=np.float32)

    for label in range(spec.classes):
        mask = labels == label

        if not mask.any():
            continue

        color = gray + spec.info('color') * (palette[label] - gray)
        texture = class_texture(label, spec.classes, height, width)[mask]
        texture *= spec.info('texture') * TEXTURE_AMPLITUDE

        pixels[mask] = color + texture[:, None]

        for j in range(spec.channels):
            code = ((label + j) % spec.classes) / max(spec.classes - 1, 1)
            channels[mask, j] = spec.info(f'channel{j}') * code

    pixels += spec.noise * COLOR_NOISE * generator.standard_normal(
        pixels.shape)

    channels += (0.15 + 0.5 * spec.noise) * generator.standard_normal(
        channels.shape).astype(np.float32)

    pixels = np.clip(np.round(pixels), 0, 255).astype(np.uint8)

    return ImageSample(
        f'synthetic-{spec.seed}-{index:05d}',
        pixels, labels, spec.classes, channels)


def generate_synthetic(spec, count):
    """ Generates `count` synthetic scenes. The result is a pure function of
    the scene parameters and the count.

    """
    if count < 1:
        raise EmptyDatasetError('synthetic')

    palette = class_palette(spec)

    return Dataset(tuple(
        synthetic_sample(spec, index, palette) for index in range(count)
    ))


def split_dataset(dataset, fractions, seed):
    """ Assigns each sample to train, validation or test using a seeded
    shuffle of the sample names.

    """
    fractions = tuple(fractions)

    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9:
        raise FractionSumError(fractions)

    if any(f < 0 for f in fractions):
        raise FractionSumError(fractions)

    names = sorted(dataset.names)
    order = rng(seed, 'split').permutation(len(names))

    train = int(round(fractions[0] * len(names)))
    validation = int(round(fractions[1] * len(names)))
    validation = min(validation, len(names) - train)

    split = {}

    for position, index in enumerate(order):
        if position < train:
            split[names[index]] = 'train'
        elif position < train + validation:
            split[names[index]] = 'validation'
        else:
            split[names[index]] = 'test'

    return replace(dataset, split=split)


def label_prior(samples, classes):
    """ Returns the label frequencies over all labeled pixels. """

    counts = np.zeros(classes)

    for sample in samples:
        labels = sample.labels[sample.labeled]
        counts += np.bincount(labels.ravel(), minlength=classes)[:classes]

    if counts.sum() == 0:
        return np.full(classes, 1.0 / classes)

    return counts / counts.sum()
