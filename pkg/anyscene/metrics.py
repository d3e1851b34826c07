import csv

import numpy as np

from dataclasses import dataclass, replace
from anyscene import VOID
from anyscene.dhm import predict_labels
from anyscene.errors import DimensionMismatchError, LabelRangeError
from anyscene.errors import TooFewPointsError
from anyscene.policy import HORIZON, rollout


CURVE_COLUMNS = ('method', 'budget', 'cost', 'pixel_acc', 'class_acc', 'miou')
GAP_COLUMNS = ('method_a', 'method_b', 'fraction', 'gap')
NORMALIZED_COLUMNS = ('method', 'cost_fraction', 'pixel_fraction')
LOSS_COLUMNS = ('method', 'budget', 'cost', 'loss')

BUDGETS = 12
FRACTIONS = tuple(np.round(np.linspace(0.05, 1.0, 20), 2))


@dataclass(frozen=True)
class Scores(object):
    pixel: float
    classes: float
    iou: float

    def __iter__(self):
        return iter((self.pixel, self.classes, self.iou))


def confusion_matrix(pred, truth, classes):
    """ Rows are the true classes, columns the predicted ones. VOID pixels
    are left out.

    """
    if pred.shape != truth.shape:
        raise DimensionMismatchError('prediction', truth.shape, pred.shape)

    labeled = truth != VOID
    truth = truth[labeled].astype(np.int64)
    pred = pred[labeled].astype(np.int64)

    outside = (pred < 0) | (pred >= classes)

    if outside.any():
        raise LabelRangeError('prediction', pred[outside][0], classes)

    return np.bincount(
        truth * classes + pred, minlength=classes ** 2
    ).reshape(classes, classes)


def compute_metrics(pred, truth, classes):
    """ Pixel accuracy, mean class accuracy and mean IOU, the means being
    taken over the classes present in the truth. An image without labeled
    pixels scores zero.

    """
    matrix = confusion_matrix(pred, truth, classes)
    total = matrix.sum()

    if not total:
        return Scores(0.0, 0.0, 0.0)

    hits = np.diag(matrix).astype(np.float64)
    present = matrix.sum(axis=1) > 0

    per_class = hits[present] / matrix.sum(axis=1)[present]
    union = matrix.sum(axis=1) + matrix.sum(axis=0) - np.diag(matrix)
    iou = hits[present] / union[present]

    return Scores(
        float(hits.sum() / total),
        float(per_class.mean()),
        float(iou.mean()))


@dataclass(frozen=True)
class CurvePoint(object):
    """ The mean metrics of an image set at a budget. The point stands for
    all grid budgets from `budget` to `until` (which reach the same states).

    """

    budget: float
    cost: float
    pixel: float
    classes: float
    iou: float
    loss: float = 0.0
    until: float = None

    @property
    def span(self):
        return (self.budget, self.budget if self.until is None else self.until)


@dataclass(frozen=True)
class MetricCurve(object):
    """ Mean metrics over an image set at increasing budgets. The cost is
    the mean cost actually spent at that budget and increases strictly from
    point to point.

    """

    method: str
    images: str
    points: tuple

    def __len__(self):
        return len(self.points)

    @property
    def budgets(self):
        return np.array([p.budget for p in self.points])

    @property
    def costs(self):
        return np.array([p.cost for p in self.points])

    @property
    def pixel(self):
        return np.array([p.pixel for p in self.points])

    @property
    def final(self):
        return self.points[-1]

    def steps(self):
        """ The (budget, pixel accuracy) pairs of the whole budget range the
        curve covers, the accuracy being constant over each point's span.

        """
        steps = []

        for point in self.points:
            for budget in sorted(set(point.span)):
                steps.append((budget, point.pixel))

        return steps


def budget_grid(initial, final, count=BUDGETS):
    """ Log-spaced budgets from the initial cost to the given final cost.
    Without initial cost, the grid starts at zero and the remaining budgets
    are log-spaced from a hundredth of the final cost.

    """
    if final <= initial:
        return (float(initial), )

    if initial > 0:
        grid = np.geomspace(initial, final, count)
    else:
        grid = np.concatenate(([0.0], np.geomspace(final / 100, final,
                                                   count - 1)))

    grid[-1] = final
    return tuple(float(b) for b in np.unique(grid))


def image_scores(scene, state):
    return compute_metrics(
        predict_labels(state, scene.tree), scene.sample.labels, scene.classes)


def curve_from_trajectories(method, images, scenes, trajectories, budgets):
    """ Evaluates the trajectories at each budget, using the fact that a
    budgeted rollout is a prefix of the unlimited one.

    Budgets reaching the same state on every image are merged into one
    point, which keeps the smallest of them as its budget.

    """
    points = []
    previous = None

    for budget in budgets:
        reached = [t.at_budget(budget) for t in trajectories]

        if previous is not None and all(
                a is b for a, b in zip(reached, previous)):
            points[-1] = replace(points[-1], until=float(budget))
            continue

        previous = reached

        scores = np.array([
            tuple(image_scores(scene, state))
            for scene, state in zip(scenes, reached)
        ])

        pixel, classes, iou = scores.mean(axis=0)
        loss = np.mean([
            scene.loss(state) for scene, state in zip(scenes, reached)])

        points.append(CurvePoint(
            budget=float(budget),
            cost=float(np.mean([s.cost for s in reached])),
            pixel=float(pixel),
            classes=float(classes),
            iou=float(iou),
            loss=float(loss)))

    return MetricCurve(method, images, tuple(points))


def full_trajectories(policy, scenes, horizon=HORIZON, early_stop=False):
    return [
        rollout(policy, scene, horizon=horizon, early_stop=early_stop)
        for scene in scenes
    ]


def anytime_curve(policy, scenes, budgets=None, method='', images='',
                  horizon=HORIZON, early_stop=False):
    """ The metric curve of the policy on the scenes. Without budgets, the
    default grid up to the largest full-trajectory cost is used.

    """
    trajectories = full_trajectories(policy, scenes, horizon, early_stop)

    if budgets is None:
        budgets = budget_grid(
            scenes[0].costs.initial, max(t.cost for t in trajectories))

    return curve_from_trajectories(
        method, images, scenes, trajectories, budgets)


def auc(curve):
    """ Trapezoidal area under pixel accuracy over budget, divided by the
    budget span. Merged points count with their whole span.

    """
    steps = curve.steps()

    if len(steps) < 2:
        raise TooFewPointsError(len(steps))

    budgets, pixel = (np.array(values) for values in zip(*steps))
    span = budgets[-1] - budgets[0]

    area = ((pixel[1:] + pixel[:-1]) / 2 * np.diff(budgets)).sum()
    return float(area / span)


def normalized_curve(curve):
    """ The curve as (fraction of the final cost, fraction of the final
    pixel accuracy) pairs.

    """
    final = curve.final
    cost = final.cost or 1.0
    pixel = final.pixel or 1.0

    return tuple((p.cost / cost, p.pixel / pixel) for p in curve.points)


def cost_to_reach(curve, fraction):
    """ The smallest budget at which the curve reaches the given fraction
    of its final pixel accuracy.

    """
    target = fraction * curve.final.pixel

    for point in curve.points:
        if point.pixel >= target:
            return point.budget

    return curve.final.budget


def accuracy_gap(scenes, trajectories_a, trajectories_b, fractions=FRACTIONS):
    """ The mean per-image pixel accuracy of method A minus the one of
    method B, each method being stopped at the same fraction of its own
    full-trajectory cost on every image.

    """
    gaps = []

    for fraction in fractions:
        differences = []

        for scene, a, b in zip(scenes, trajectories_a, trajectories_b):
            score_a = image_scores(scene, a.at_budget(fraction * a.cost))
            score_b = image_scores(scene, b.at_budget(fraction * b.cost))
            differences.append(score_a.pixel - score_b.pixel)

        gaps.append((float(fraction), float(np.mean(differences))))

    return tuple(gaps)


def number(value):
    return f'{value:.6f}' if np.isfinite(value) else str(value)


def write_curves(curves, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CURVE_COLUMNS)

        for curve in curves:
            for p in curve.points:
                writer.writerow((
                    curve.method, number(p.budget), number(p.cost),
                    number(p.pixel), number(p.classes), number(p.iou)))


def write_gaps(method_a, method_b, gaps, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(GAP_COLUMNS)

        for fraction, gap in gaps:
            writer.writerow(
                (method_a, method_b, number(fraction), number(gap)))


def write_normalized(curves, path):
    """ Writes the curves as fractions of their final cost and accuracy. """

    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(NORMALIZED_COLUMNS)

        for curve in curves:
            for cost, pixel in normalized_curve(curve):
                writer.writerow((curve.method, number(cost), number(pixel)))


def write_losses(curves, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(LOSS_COLUMNS)

        for curve in curves:
            for p in curve.points:
                writer.writerow((
                    curve.method, number(p.budget), number(p.cost),
                    number(p.loss)))
