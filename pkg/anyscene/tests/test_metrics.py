import csv
import numpy as np
import pytest

from anyscene import VOID
from anyscene.errors import DimensionMismatchError, LabelRangeError
from anyscene.errors import TooFewPointsError
from anyscene.metrics import CURVE_COLUMNS, CurvePoint, MetricCurve
from anyscene.metrics import accuracy_gap, anytime_curve, auc, budget_grid
from anyscene.metrics import compute_metrics, confusion_matrix
from anyscene.metrics import cost_to_reach, curve_from_trajectories
from anyscene.metrics import full_trajectories, image_scores, normalized_curve
from anyscene.metrics import write_curves, write_gaps, write_losses
from anyscene.metrics import write_normalized
from anyscene.policy import RandomPolicy, SequencePolicy


def curve(points, method='x'):
    return MetricCurve(method, 'test', tuple(
        CurvePoint(budget=b, cost=b, pixel=p, classes=p, iou=p)
        for b, p in points
    ))


def test_compute_metrics_example():
    truth = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    pred = np.array([[0, 1], [1, 1]])

    scores = compute_metrics(pred, truth, 2)

    assert scores.pixel == pytest.approx(0.75)
    assert scores.classes == pytest.approx((0.5 + 1.0) / 2)
    assert scores.iou == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_compute_metrics_skips_absent_classes():
    truth = np.zeros((4, 4), dtype=np.uint8)
    pred = np.zeros((4, 4), dtype=np.int64)
    pred[0, 0] = 2

    scores = compute_metrics(pred, truth, 3)

    assert scores.pixel == pytest.approx(15 / 16)
    assert scores.classes == pytest.approx(15 / 16)
    assert scores.iou == pytest.approx(15 / 16)


def test_compute_metrics_ignores_void():
    truth = np.array([[0, VOID], [1, VOID]], dtype=np.uint8)
    pred = np.array([[0, 1], [1, 0]])

    assert tuple(compute_metrics(pred, truth, 2)) == (1.0, 1.0, 1.0)

    void = np.full((2, 2), VOID, dtype=np.uint8)
    assert tuple(compute_metrics(pred, void, 2)) == (0.0, 0.0, 0.0)


def test_confusion_matrix_counts():
    generator = np.random.default_rng(0)

    for _ in range(20):
        truth = generator.integers(0, 4, (10, 12)).astype(np.uint8)
        truth[generator.random((10, 12)) < 0.1] = VOID
        pred = generator.integers(0, 4, (10, 12))

        matrix = confusion_matrix(pred, truth, 4)

        for i in range(4):
            for j in range(4):
                assert matrix[i, j] == ((truth == i) & (pred == j)).sum()

        labeled = truth != VOID
        scores = compute_metrics(pred, truth, 4)

        assert scores.pixel == pytest.approx(
            (pred[labeled] == truth[labeled]).mean())


def test_confusion_matrix_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        confusion_matrix(np.zeros((2, 3)), np.zeros((3, 2), np.uint8), 2)


def test_auc():
    assert auc(curve([(0, 0.5), (10, 0.5)])) == pytest.approx(0.5)
    assert auc(curve([(0, 0.0), (10, 1.0)])) == pytest.approx(0.5)
    assert auc(curve([(1, 0.0), (2, 1.0), (3, 1.0)])) == pytest.approx(0.75)

    with pytest.raises(TooFewPointsError):
        auc(curve([(0, 0.5)]))


def test_budget_grid():
    grid = budget_grid(2.0, 200.0, 3)

    assert grid == pytest.approx((2.0, 20.0, 200.0))
    assert budget_grid(0.0, 100.0, 3) == pytest.approx((0.0, 1.0, 100.0))
    assert budget_grid(5.0, 5.0) == (5.0, )
    assert budget_grid(5.0, 1.0) == (5.0, )

    grid = budget_grid(2.0, 50.0)
    assert all(a < b for a, b in zip(grid, grid[1:]))
    assert grid[-1] == 50.0


def test_anytime_curve(scenes, pool):
    policy = RandomPolicy(pool, 1)
    result = anytime_curve(
        policy, scenes, method='rs', images='test', horizon=6)

    assert result.method == 'rs'
    assert result.budgets[0] == scenes[0].costs.initial
    assert all(a < b for a, b in zip(result.budgets, result.budgets[1:]))

    costs = result.costs
    assert all(a < b for a, b in zip(costs, costs[1:]))
    assert all(p.cost <= p.budget + 1e-9 for p in result.points)

    for p in result.points:
        assert 0 <= p.pixel <= 1 and 0 <= p.classes <= 1 and 0 <= p.iou <= 1


def test_anytime_curve_without_budget_limit(scenes, pool):
    policy = SequencePolicy(pool, [1, 3])
    result = anytime_curve(policy, scenes, budgets=[np.inf])

    assert len(result) == 1
    assert result.final.budget == np.inf

    trajectories = full_trajectories(policy, scenes)
    assert result.final.cost == pytest.approx(
        np.mean([t.cost for t in trajectories]))


def test_normalized_curve_and_cost_to_reach():
    result = curve([(1, 0.2), (2, 0.5), (4, 0.8), (8, 1.0)])

    normalized = normalized_curve(result)
    assert normalized[-1] == (1.0, 1.0)
    assert normalized[1] == pytest.approx((0.25, 0.5))

    assert cost_to_reach(result, 0.5) == 2
    assert cost_to_reach(result, 0.8) == 4
    assert cost_to_reach(result, 0.0) == 1


def test_accuracy_gap_of_a_method_with_itself(scenes, pool):
    trajectories = full_trajectories(RandomPolicy(pool, 4), scenes, 6)
    gaps = accuracy_gap(scenes, trajectories, trajectories)

    assert len(gaps) == 20
    assert all(gap == 0.0 for _, gap in gaps)
    assert gaps[0][0] == 0.05 and gaps[-1][0] == 1.0


def test_write_curves(temporary_path):
    path = temporary_path / 'curves.csv'
    curves = [curve([(2, 0.5), (4, 0.75)], 'dnm'), curve([(2, 0.4)], 'rs')]

    write_curves(curves, path)

    with path.open() as f:
        rows = list(csv.reader(f))

    assert tuple(rows[0]) == CURVE_COLUMNS
    assert rows[1] == ['dnm', '2.000000', '2.000000', '0.500000',
                       '0.500000', '0.500000']
    assert len(rows) == 4

    first = path.read_bytes()
    write_curves(curves, path)
    assert path.read_bytes() == first


def test_write_gaps(temporary_path):
    path = temporary_path / 'gap.csv'
    write_gaps('dnm', 'sm', ((0.5, 0.125), (1.0, -0.25)), path)

    assert path.read_text().splitlines() == [
        'method_a,method_b,fraction,gap',
        'dnm,sm,0.500000,0.125000',
        'dnm,sm,1.000000,-0.250000',
    ]


def test_confusion_matrix_rejects_unknown_predictions():
    truth = np.array([[0, 1], [VOID, 1]], dtype=np.uint8)

    with pytest.raises(LabelRangeError) as e:
        confusion_matrix(np.array([[0, 3], [0, 1]]), truth, 3)

    assert e.value.value == 3

    # predictions on unlabeled pixels are never looked at
    assert confusion_matrix(np.array([[0, 1], [7, 1]]), truth, 3).sum() == 3


def test_curve_merges_budgets_reaching_the_same_states(scenes, pool):
    trajectories = full_trajectories(RandomPolicy(pool, 3), scenes, 8)

    final = max(t.cost for t in trajectories)
    budgets = np.linspace(scenes[0].costs.initial, final, 60)

    result = curve_from_trajectories('rs', 'test', scenes, trajectories,
                                     budgets)

    assert 1 < len(result) < len(budgets)
    assert all(a < b for a, b in zip(result.costs, result.costs[1:]))
    assert result.points[0].budget == budgets[0]
    assert result.final.span[1] == budgets[-1]

    # the area is the one of the full grid
    pixel = np.array([
        np.mean([
            image_scores(scene, t.at_budget(budget)).pixel
            for scene, t in zip(scenes, trajectories)
        ])
        for budget in budgets
    ])

    expected = ((pixel[1:] + pixel[:-1]) / 2 * np.diff(budgets)).sum() / (
        budgets[-1] - budgets[0])

    assert auc(result) == pytest.approx(expected)


def test_auc_of_a_merged_point():
    flat = MetricCurve('sm', 'test', (
        CurvePoint(budget=1, cost=1, pixel=0.5, classes=0.5, iou=0.5,
                   until=3), ))

    assert auc(flat) == pytest.approx(0.5)


def test_curve_losses(scenes, pool):
    result = anytime_curve(SequencePolicy(pool, [1, 1, 1]), scenes)
    losses = [p.loss for p in result.points]

    assert losses[0] == pytest.approx(
        np.mean([s.loss(s.initial_state()) for s in scenes]))

    # splits never increase the loss
    assert all(a >= b - 1e-9 for a, b in zip(losses, losses[1:]))


def test_write_normalized_and_losses(temporary_path):
    curves = [curve([(2, 0.5), (4, 1.0)], 'dnm'), curve([(8, 0.4)], 'rs')]

    path = temporary_path / 'normalized.csv'
    write_normalized(curves, path)

    assert path.read_text().splitlines() == [
        'method,cost_fraction,pixel_fraction',
        'dnm,0.500000,0.500000',
        'dnm,1.000000,1.000000',
        'rs,1.000000,1.000000',
    ]

    path = temporary_path / 'losses.csv'
    write_losses(curves, path)

    assert path.read_text().splitlines() == [
        'method,budget,cost,loss',
        'dnm,2.000000,2.000000,0.000000',
        'dnm,4.000000,4.000000,0.000000',
        'rs,8.000000,8.000000,0.000000',
    ]
