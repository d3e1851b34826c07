import heapq

import numpy as np

from cached_property import cached_property
from dataclasses import dataclass
from scipy import ndimage
from anyscene import log
from anyscene.errors import DimensionMismatchError, StaleArtifactError


TREE_VERSION = 1


class SegTree(object):
    """ A nested partition of the image pixels into L layers.

    Nodes are numbered layer by layer, the root being node 0. For each
    layer, `assignment[layer]` holds the id of the node covering each pixel.

    The ground-truth statistics (`weights` and `distributions`) are only
    present after `annotate_ground_truth`.

    """

    def __init__(self, assignment, parents, layer_of,
                 areas=None, weights=None, distributions=None):
        self.assignment = assignment
        self.parents = parents
        self.layer_of = layer_of

        if areas is None:
            areas = np.zeros(len(parents), dtype=np.int64)

            for layer in range(assignment.shape[0]):
                counts = np.bincount(
                    assignment[layer].ravel(), minlength=len(parents))
                areas += counts

        self.areas = areas
        self.weights = weights
        self.distributions = distributions

    def __len__(self):
        return len(self.parents)

    @property
    def layers(self):
        return self.assignment.shape[0]

    @property
    def shape(self):
        return self.assignment.shape[1:]

    @property
    def root(self):
        return 0

    @property
    def finest(self):
        return self.layers - 1

    @property
    def annotated(self):
        return self.weights is not None

    @property
    def classes(self):
        return self.distributions.shape[1] if self.annotated else None

    @cached_property
    def children(self):
        children = [[] for _ in range(len(self))]

        for node, parent in enumerate(self.parents):
            if parent >= 0:
                children[parent].append(node)

        return tuple(tuple(c) for c in children)

    def layer_nodes(self, layer):
        return np.flatnonzero(self.layer_of == layer)

    def mask(self, node):
        return self.assignment[self.layer_of[node]] == node

    def cover(self, leaves):
        """ Returns the per-pixel index into `leaves` for a tree cut. """

        index = np.full(self.shape, -1, dtype=np.int64)
        lookup = np.full(len(self), -1, dtype=np.int64)
        lookup[np.asarray(leaves, dtype=np.int64)] = np.arange(len(leaves))

        for layer in np.unique(self.layer_of[np.asarray(leaves)]):
            found = lookup[self.assignment[layer]]
            index = np.where(found >= 0, found, index)

        return index


def smooth(pixels, sigma):
    pixels = pixels.astype(np.float64)

    if sigma > 0:
        pixels = ndimage.gaussian_filter(pixels, sigma=(sigma, sigma, 0))

    return pixels


def grid_edges(pixels):
    """ Returns the edges of the 4-connected pixel grid, weighted by the
    euclidean RGB distance and ordered by weight (stable).

    """
    height, width = pixels.shape[:2]
    index = np.arange(height * width).reshape(height, width)

    right = np.linalg.norm(pixels[:, 1:] - pixels[:, :-1], axis=-1)
    down = np.linalg.norm(pixels[1:, :] - pixels[:-1, :], axis=-1)

    a = np.concatenate((index[:, :-1].ravel(), index[:-1, :].ravel()))
    b = np.concatenate((index[:, 1:].ravel(), index[1:, :].ravel()))
    w = np.concatenate((right.ravel(), down.ravel()))

    order = np.argsort(w, kind='stable')
    return a[order], b[order], w[order]


class Forest(object):
    """ Union-find over the pixels of an image, keeping component sizes. """

    def __init__(self, size):
        self.parent = list(range(size))
        self.rank = [0] * size
        self.size = [1] * size

    def find(self, n):
        root = n

        while root != self.parent[root]:
            root = self.parent[root]

        while n != root:
            self.parent[n], n = root, self.parent[n]

        return root

    def merge(self, a, b):
        if self.rank[a] > self.rank[b]:
            a, b = b, a

        self.parent[a] = b
        self.size[b] += self.size[a]

        if self.rank[a] == self.rank[b]:
            self.rank[b] += 1

        return b


def felzenszwalb(pixels, k, sigma, min_size):
    """ Graph-based segmentation of the image on the 4-connected grid.

    Two components are merged when the edge between them is no heavier
    than the internal difference of both plus k/|C|. Components smaller
    than min_size are merged with their neighbours afterwards.

    Returns a label map with labels numbered in raster order.

    """
    height, width = pixels.shape[:2]
    a, b, w = grid_edges(smooth(pixels, sigma))

    forest = Forest(height * width)
    threshold = [float(k)] * (height * width)

    for u, v, weight in zip(a.tolist(), b.tolist(), w.tolist()):
        ru, rv = forest.find(u), forest.find(v)

        if ru != rv and weight <= threshold[ru] and weight <= threshold[rv]:
            root = forest.merge(ru, rv)
            threshold[root] = weight + k / forest.size[root]

    for u, v in zip(a.tolist(), b.tolist()):
        ru, rv = forest.find(u), forest.find(v)

        if ru != rv and min(forest.size[ru], forest.size[rv]) < min_size:
            forest.merge(ru, rv)

    roots = np.array([forest.find(i) for i in range(height * width)])
    _, first, labels = np.unique(roots, return_index=True, return_inverse=True)

    # renumber by first occurrence in raster order
    rank = np.argsort(np.argsort(first))
    return rank[labels].reshape(height, width)


def bisect_regions(labels, count):
    """ Splits the largest regions along their longer extent until there
    are at least `count` regions (or nothing can be split anymore).

    """
    labels = labels.copy()

    while labels.max() + 1 < count:
        areas = np.bincount(labels.ravel())
        region = int(np.argmax(areas))

        if areas[region] < 2:
            break

        rows, cols = np.nonzero(labels == region)
        axis = rows if np.ptp(rows) >= np.ptp(cols) else cols

        threshold = np.sort(axis)[len(axis) // 2]
        part = axis < threshold

        if not part.any():
            part = axis <= threshold

        labels[rows[part], cols[part]] = labels.max() + 1

    return labels


def region_adjacency(labels):
    pairs = set()

    shifts = (
        (labels[:, :-1], labels[:, 1:]),
        (labels[:-1, :], labels[1:, :]),
    )

    for a, b in shifts:
        differ = a != b
        lo = np.minimum(a[differ], b[differ])
        hi = np.maximum(a[differ], b[differ])

        pairs.update(zip(lo.tolist(), hi.tolist()))

    return pairs


def layer_schedule(regions, layers):
    """ Region counts per layer (root first), following a geometric decay
    from the finest layer to a single root region.

    """
    ratio = regions ** (-1 / (layers - 1))
    counts = [regions]

    for depth in range(1, layers):
        target = max(1, int(round(regions * ratio ** depth)))
        counts.append(min(target, counts[-1]))

    counts[-1] = 1
    return counts[::-1]


def agglomerate(pixels, labels, schedule):
    """ Merges adjacent regions greedily by mean colour similarity.

    Returns one label map per layer of the schedule (root first), each
    using the region ids of the finest labels they descend from.

    """
    regions = labels.max() + 1

    colors = np.zeros((regions, 3))
    for channel in range(3):
        colors[:, channel] = np.bincount(
            labels.ravel(), weights=pixels[..., channel].ravel(),
            minlength=regions)

    area = np.bincount(labels.ravel(), minlength=regions).astype(np.int64)
    sums = colors.tolist()
    area = area.tolist()

    neighbours = [set() for _ in range(regions)]
    for a, b in region_adjacency(labels):
        neighbours[a].add(b)
        neighbours[b].add(a)

    alive = [True] * regions
    owner = list(range(regions))

    def distance(a, b):
        ma = np.array(sums[a]) / area[a]
        mb = np.array(sums[b]) / area[b]
        return round(float(np.linalg.norm(ma - mb)), 9)

    def entry(a, b):
        a, b = min(a, b), max(a, b)
        return (distance(a, b), area[a] + area[b], a, b)

    heap = [
        entry(a, b) for a in range(regions) for b in neighbours[a] if a < b
    ]
    heapq.heapify(heap)

    def resolve(region):
        while owner[region] != region:
            owner[region] = owner[owner[region]]
            region = owner[region]
        return region

    current = regions
    maps = [labels]

    for target in schedule[-2::-1]:
        while current > target and heap:
            d, merged, a, b = heapq.heappop(heap)

            if not (alive[a] and alive[b]) or merged != area[a] + area[b]:
                continue

            if b not in neighbours[a] or distance(a, b) != d:
                continue

            # b is absorbed by a
            alive[b] = False
            owner[b] = a
            sums[a] = [x + y for x, y in zip(sums[a], sums[b])]
            area[a] += area[b]

            neighbours[a] |= neighbours[b]
            neighbours[a] -= {a, b}

            for n in neighbours[b]:
                neighbours[n].discard(b)
                if n != a:
                    neighbours[n].add(a)

            neighbours[b] = set()
            current -= 1

            for n in sorted(neighbours[a]):
                heapq.heappush(heap, entry(a, n))

        lookup = np.array([resolve(r) for r in range(regions)])
        maps.append(lookup[labels])

    return maps[::-1]


def build_hierarchy(sample, layers=8, k=200.0, sigma=0.8, min_size=20):
    """ Builds the segmentation tree of the given sample.

    The finest layer comes from graph-based segmentation, coarser layers
    from agglomerating adjacent regions of the finest layer, which
    guarantees the nesting of all layers.

    """
    assert layers >= 2

    finest = felzenszwalb(sample.pixels, k, sigma, min_size)

    if finest.max() + 1 < layers:
        log.warn((
            f"{sample.name} yields {finest.max() + 1} regions, "
            f"bisecting to get at least {layers}"
        ))
        finest = bisect_regions(finest, layers)

    schedule = layer_schedule(int(finest.max()) + 1, layers)
    maps = agglomerate(sample.pixels.astype(np.float64), finest, schedule)

    return tree_from_label_maps(maps)


def tree_from_label_maps(maps):
    """ Turns nested label maps (root first) into a SegTree. Within each
    layer, nodes are ordered by the label they carry.

    """
    assignment = np.zeros((len(maps), *maps[0].shape), dtype=np.int64)
    layer_of = []
    offset = 0

    for layer, labels in enumerate(maps):
        ids, inverse = np.unique(labels, return_inverse=True)
        assignment[layer] = inverse.reshape(labels.shape) + offset
        layer_of.extend([layer] * len(ids))
        offset += len(ids)

    parents = np.full(offset, -1, dtype=np.int64)

    for layer in range(1, len(maps)):
        child = assignment[layer].ravel()
        parent = assignment[layer - 1].ravel()
        parents[child] = parent

    return SegTree(assignment, parents, np.array(layer_of, dtype=np.int64))


def annotate_ground_truth(tree, sample):
    """ Returns a copy of the tree with the normalized labeled area (w) and
    the ground-truth label distribution (p) of every node.

    Nodes without labeled pixels get w = 0 and a uniform distribution.

    """
    if tree.shape != sample.shape:
        raise DimensionMismatchError(sample.name, tree.shape, sample.shape)

    classes = sample.classes
    labeled = sample.labeled
    labels = sample.labels[labeled].astype(np.int64)

    counts = np.zeros((len(tree), classes))

    for layer in range(tree.layers):
        nodes = tree.assignment[layer][labeled]
        flat = np.bincount(
            nodes * classes + labels, minlength=len(tree) * classes)
        counts += flat.reshape(len(tree), classes)

    totals = counts.sum(axis=1)
    labeled_area = labeled.sum()

    weights = totals / labeled_area if labeled_area else np.zeros(len(tree))

    distributions = np.full((len(tree), classes), 1.0 / classes)
    nonempty = totals > 0
    distributions[nonempty] = counts[nonempty] / totals[nonempty, None]

    return SegTree(
        tree.assignment, tree.parents, tree.layer_of,
        tree.areas, weights, distributions)


@dataclass(frozen=True)
class TreeReport(object):
    violation: str = None
    node: int = None

    @property
    def ok(self):
        return self.violation is None


def validate_tree(tree, tolerance=1e-9):
    """ Checks all invariants of the tree, returning the first violation. """

    roots = np.flatnonzero(tree.parents < 0)

    if len(roots) != 1 or tree.layer_of[roots[0]] != 0:
        return TreeReport('root', int(roots[0]) if len(roots) else None)

    for node, parent in enumerate(tree.parents):
        if parent >= 0 and tree.layer_of[node] <= tree.layer_of[parent]:
            return TreeReport('layer-ordering', node)

    areas = np.zeros(len(tree), dtype=np.int64)

    for layer in range(tree.layers):
        nodes = tree.assignment[layer]

        if (tree.layer_of[nodes] != layer).any():
            return TreeReport('partition', int(nodes[
                tree.layer_of[nodes] != layer][0]))

        areas += np.bincount(nodes.ravel(), minlength=len(tree))

    mismatch = np.flatnonzero((areas != tree.areas) | (areas == 0))

    if len(mismatch):
        return TreeReport('partition', int(mismatch[0]))

    for layer in range(1, tree.layers):
        nodes = tree.assignment[layer]
        wrong = tree.parents[nodes] != tree.assignment[layer - 1]

        if wrong.any():
            return TreeReport('nesting', int(nodes[wrong][0]))

    for node in tree.layer_nodes(tree.finest):
        if tree.children[node]:
            return TreeReport('finest-children', int(node))

    for node in range(len(tree)):
        if tree.layer_of[node] < tree.finest and not tree.children[node]:
            return TreeReport('missing-children', node)

    if not tree.annotated:
        return TreeReport()

    return validate_annotation(tree, tolerance)


def validate_annotation(tree, tolerance):
    weights, distributions = tree.weights, tree.distributions

    for node in range(len(tree)):
        if not 0 <= weights[node] <= 1:
            return TreeReport('weight-range', node)

        if abs(distributions[node].sum() - 1) > tolerance:
            return TreeReport('distribution', node)

    for layer in range(tree.layers):
        total = weights[tree.layer_nodes(layer)].sum()

        if weights.sum() > 0 and abs(total - 1) > tolerance:
            return TreeReport('weight-sum', int(tree.layer_nodes(layer)[0]))

    mass = weights[:, None] * distributions

    for node, children in enumerate(tree.children):
        if not children or weights[node] == 0:
            continue

        parts = mass[list(children)].sum(axis=0)

        if np.abs(mass[node] - parts).max() > tolerance:
            return TreeReport('mass-conservation', node)

    return TreeReport()


def save_tree(tree, path, digest=''):
    arrays = {
        'version': np.array(TREE_VERSION),
        'digest': np.array(digest),
        'assignment': tree.assignment,
        'parents': tree.parents,
        'layer_of': tree.layer_of,
        'areas': tree.areas,
    }

    if tree.annotated:
        arrays['weights'] = tree.weights
        arrays['distributions'] = tree.distributions

    with open(path, 'wb') as f:
        np.savez(f, **arrays)


def load_tree(path, digest=None):
    """ Loads a cached tree, verifying the format version and (optionally)
    the configuration digest it was built with.

    """
    with np.load(path) as data:
        version = int(data['version'])

        if version != TREE_VERSION:
            raise StaleArtifactError(str(path), TREE_VERSION, version)

        found = str(data['digest'])

        if digest is not None and found != digest:
            raise StaleArtifactError(str(path), digest, found)

        return SegTree(
            data['assignment'], data['parents'], data['layer_of'],
            data['areas'],
            data['weights'] if 'weights' in data else None,
            data['distributions'] if 'distributions' in data else None)
