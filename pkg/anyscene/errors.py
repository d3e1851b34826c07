class AnysceneError(Exception):
    """ Base class of all errors raised by anyscene.

    Errors keep the offending values as attributes. The command line turns
    them into a machine-readable record using `category` and `details`.

    """

    category = 'error'
    exit_code = 1

    @property
    def details(self):
        return {k: v for k, v in vars(self).items() if not k.startswith('_')}


class ConfigError(AnysceneError):
    """ Raised when a run configuration is invalid. """

    category = 'config'
    exit_code = 2

    def __init__(self, key, reason):
        self.key = key
        self.reason = reason


class MissingPairError(AnysceneError):
    """ Raised when an image has no label map or the other way around. """

    category = 'data'
    exit_code = 3

    def __init__(self, path):
        self.path = str(path)


class LabelRangeError(AnysceneError):
    """ Raised when a label map contains a class index outside of 0..K-1
    which is not the VOID marker.

    """

    category = 'data'
    exit_code = 3

    def __init__(self, path, value, classes):
        self.path = str(path)
        self.value = int(value)
        self.classes = classes


class DimensionMismatchError(AnysceneError):
    """ Raised when two arrays which should cover the same pixels don't. """

    category = 'data'
    exit_code = 3

    def __init__(self, name, expected, found):
        self.name = str(name)
        self.expected = tuple(expected)
        self.found = tuple(found)


class ImageTooSmallError(AnysceneError):
    """ Raised when an image is smaller than 8x8 pixels. """

    category = 'data'
    exit_code = 3

    def __init__(self, name, shape):
        self.name = str(name)
        self.shape = tuple(shape)


class FractionSumError(AnysceneError):
    """ Raised when the train/validation/test fractions don't sum up to 1. """

    category = 'data'
    exit_code = 3

    def __init__(self, fractions):
        self.fractions = tuple(fractions)


class EmptyDatasetError(AnysceneError):
    """ Raised when an operation needs samples but got none. """

    category = 'data'
    exit_code = 3

    def __init__(self, name):
        self.name = name


class UnknownImageError(AnysceneError):
    """ Raised when an image id is not part of the dataset. """

    category = 'data'
    exit_code = 3

    def __init__(self, name):
        self.name = name


class UnknownFeatureTypeError(AnysceneError):
    """ Raised when a feature type id is not registered. """

    category = 'feature'
    exit_code = 4

    def __init__(self, type_id):
        self.type_id = type_id


class DegenerateSamplesError(AnysceneError):
    """ Raised when a weak learner is fitted without any positive weight. """

    category = 'fit'
    exit_code = 5

    def __init__(self, count):
        self.count = count


class InvalidHorizonError(AnysceneError):
    """ Raised when the action proposal is asked for zero steps. """

    category = 'fit'
    exit_code = 5

    def __init__(self, horizon):
        self.horizon = horizon


class StaleArtifactError(AnysceneError):
    """ Raised when an artifact was produced with a different configuration
    or format version. Stale artifacts are never rebuilt silently.

    """

    category = 'artifact'
    exit_code = 6

    def __init__(self, name, expected, found):
        self.name = name
        self.expected = expected
        self.found = found


class MissingArtifactError(AnysceneError):
    """ Raised when a command needs an artifact that was not built yet. """

    category = 'artifact'
    exit_code = 6

    def __init__(self, name):
        self.name = name


class TooFewPointsError(AnysceneError):
    """ Raised when an area under a curve is requested for a single point. """

    category = 'metric'
    exit_code = 7

    def __init__(self, count):
        self.count = count


class UnknownMethodError(AnysceneError):
    """ Raised when an unknown labeling method is requested. """

    category = 'usage'
    exit_code = 8

    def __init__(self, method):
        self.method = method


class MethodCountError(AnysceneError):
    """ Raised when a command gets another number of methods than it
    compares.

    """

    category = 'usage'
    exit_code = 8

    def __init__(self, expected, methods):
        self.expected = expected
        self.methods = tuple(methods)
