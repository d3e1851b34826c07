import json
import os

from pathlib import Path
from anyscene import log
from anyscene.errors import MissingArtifactError, StaleArtifactError
from anyscene.segtree import load_tree, save_tree
from anyscene.utils import delay_signals


ARTIFACT_VERSION = 1


class ArtifactStore(object):
    """ Keeps the artifacts of one configuration in a directory.

    Every artifact carries the format version and the digest of the
    configuration it was built with. Reading an artifact built with another
    configuration fails, artifacts are never rebuilt behind the user's back.

    Layout:

        <root>/pool.json
        <root>/policy.json
        <root>/trees/<image>.npz

    """

    def __init__(self, root, digest):
        self.root = Path(root)
        self.digest = digest

    def path(self, name):
        return self.root / name

    def exists(self, name):
        return self.path(name).exists()

    def tree_path(self, image):
        return self.root / 'trees' / f'{image}.npz'

    def write_json(self, name, payload):
        document = {
            'version': ARTIFACT_VERSION,
            'config': self.digest,
            'payload': payload,
        }

        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        temporary = path.with_name(f'.{path.name}.tmp')

        with delay_signals(f"writing {name}"):
            with temporary.open('w') as f:
                json.dump(document, f, sort_keys=True, indent=2)

            os.replace(temporary, path)

        log.info(f"Wrote {path}")

    def read_json(self, name):
        path = self.path(name)

        if not path.exists():
            raise MissingArtifactError(name)

        with path.open('r') as f:
            document = json.load(f)

        if document.get('version') != ARTIFACT_VERSION:
            raise StaleArtifactError(
                name, ARTIFACT_VERSION, document.get('version'))

        if document.get('config') != self.digest:
            raise StaleArtifactError(name, self.digest, document.get('config'))

        return document['payload']

    def write_tree(self, image, tree):
        path = self.tree_path(image)
        path.parent.mkdir(parents=True, exist_ok=True)

        with delay_signals(f"writing the tree of {image}"):
            save_tree(tree, path, self.digest)

    def read_tree(self, image):
        path = self.tree_path(image)

        if not path.exists():
            raise MissingArtifactError(f'trees/{image}.npz')

        return load_tree(path, self.digest)
