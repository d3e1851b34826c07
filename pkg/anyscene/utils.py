import hashlib
import json
import signal
import zlib

import numpy as np

from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager, ExitStack
from anyscene import log


KILL_SIGNALS = (signal.SIGTERM, signal.SIGINT)


def hash_implementation():
    """ We use blake2b with a 32 bytes digest size for all fingerprints
    (configurations, states, learners). They are used to detect differences,
    not for security.

    """
    return hashlib.blake2b(digest_size=32)


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def json_digest(data):
    m = hash_implementation()
    m.update(canonical_json(data).encode('utf-8'))

    return m.hexdigest()


def rng(seed, *keys):
    """ Returns a numpy generator seeded by the seed and any number of
    additional keys (strings or integers).

    Strings are turned into integers with crc32, which is stable across
    interpreter runs (unlike `hash`).

    """
    entropy = [seed]

    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode('utf-8'))

        entropy.append(int(key))

    return np.random.default_rng(entropy)


def parallel_map(fn, items, workers=1):
    """ Maps the function over the items, using a process pool if more than
    one worker is requested. The order of the results matches the input.

    """
    items = list(items)

    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


# coverage is skipped here because it is tested in a subprocess
class delay_signal(object):  # pragma: no cover
    """ Blocks the handling of the given signal inside the with statement.
    Once the with statement is exited, the last received signal is replayed.

    This keeps artifacts from being half-written when a long training run
    is interrupted.

    Usage:

        with delay_signal(SIGTERM, 'writing pool.json'):
            pass

    """

    def __init__(self, signal, message):
        self.signal = signal
        self.message = message

    def __enter__(self):
        self.received = None
        self.previous = signal.signal(self.signal, self.handler)

    def handler(self, signal, frame):
        self.received = (signal, frame)
        log.warn(f"Delaying handling of {self.signal.name}: {self.message}")

    def __exit__(self, type, value, traceback):
        signal.signal(self.signal, self.previous)

        if not self.received:
            return

        if callable(self.previous):
            self.previous(*self.received)
        else:
            signal.raise_signal(self.signal)


@contextmanager
def delay_signals(message, signals=KILL_SIGNALS):
    """ Delay multiple signals at once. """

    with ExitStack() as stack:
        for signum in signals:
            stack.enter_context(delay_signal(signum, message))

        yield
