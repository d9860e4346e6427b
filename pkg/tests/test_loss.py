import numpy as np
import pytest

from parkgate.loss import (
    CellBox,
    GridExample,
    GridPrediction,
    GridTarget,
    LossWeights,
    ToyModel,
    TrainingDiverged,
    classification_loss,
    format_grid,
    grad_loss,
    load_prediction_grid,
    load_target_grid,
    localization_loss,
    make_toy_dataset,
    mean_loss,
    objectness_loss,
    total_loss,
    toy_train,
)


def hand_fixture():
    """Two cells, one box each, two classes.

    Cell 0 holds an object: center x off by 0.1, objectness 0.8 vs 1, class
    probabilities (0.7, 0.3) vs (1, 0). Cell 1 is background with objectness
    0.3 vs 0 and deliberately wrong (masked) center/class values.
    """
    pred = GridPrediction.from_cells([
        [CellBox(x=0.6, y=0.5, objectness=0.8, class_probs=(0.7, 0.3))],
        [CellBox(x=0.9, y=0.9, objectness=0.3, class_probs=(0.2, 0.8))],
    ])
    target = GridTarget.from_cells([
        [CellBox(x=0.5, y=0.5, objectness=1.0, class_probs=(1.0, 0.0))],
        [CellBox(x=0.0, y=0.0, objectness=0.0, class_probs=(0.0, 0.0))],
    ], obj_mask=[[1], [0]])
    return pred, target


class TestComponents:
    def test_zero_when_equal(self):
        pred, target = hand_fixture()
        same = GridPrediction(target.x.copy(), target.y.copy(),
                              target.objectness.copy(), target.class_probs.copy())
        assert localization_loss(same, target) == 0.0
        assert objectness_loss(same, target) == (0.0, 0.0, 0.0)
        assert classification_loss(same, target) == 0.0
        assert total_loss(same, target).total == 0.0

    def test_hand_values(self):
        pred, target = hand_fixture()
        assert abs(localization_loss(pred, target) - 0.01) < 1e-12
        present, absent, total = objectness_loss(pred, target)
        assert abs(present - 0.04) < 1e-12
        assert abs(absent - 0.09) < 1e-12
        assert abs(total - 0.13) < 1e-12
        assert abs(classification_loss(pred, target) - 0.18) < 1e-12

    def test_total_and_reweighting(self):
        pred, target = hand_fixture()
        breakdown = total_loss(pred, target, LossWeights(1, 1, 1))
        assert abs(breakdown.total - 0.32) < 1e-12
        heavy = total_loss(pred, target, LossWeights(5, 1, 1))
        assert abs(heavy.total - 0.36) < 1e-12

    def test_noobj_deviation_masked(self):
        pred, target = hand_fixture()
        pred.x[1, 0] = 123.0
        pred.class_probs[1, 0] = (9.0, -9.0)
        assert abs(localization_loss(pred, target) - 0.01) < 1e-12
        assert abs(classification_loss(pred, target) - 0.18) < 1e-12

    def test_obj_deviation_never_changes_background_term(self):
        pred, target = hand_fixture()
        _, absent_before, _ = objectness_loss(pred, target)
        pred.objectness[0, 0] = -5.0
        _, absent_after, _ = objectness_loss(pred, target)
        assert absent_before == absent_after

    def test_weight_homogeneity(self):
        pred, target = hand_fixture()
        base = total_loss(pred, target, LossWeights(1, 1, 1))
        scaled = total_loss(pred, target, LossWeights(3, 3, 3))
        assert abs(scaled.total - 3 * base.total) < 1e-12
        assert scaled.loc == base.loc and scaled.cls == base.cls

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1, 0, 0)

    def test_shape_mismatch(self):
        pred, target = hand_fixture()
        bad = GridPrediction(pred.x[:1], pred.y[:1], pred.objectness[:1],
                             pred.class_probs[:1])
        with pytest.raises(ValueError):
            localization_loss(bad, target)

    def test_two_boxes_per_cell(self):
        pred = GridPrediction(
            x=np.array([[0.6, 0.1]]), y=np.array([[0.5, 0.2]]),
            objectness=np.array([[0.8, 0.4]]),
            class_probs=np.array([[[0.7, 0.3], [0.5, 0.5]]]))
        target = GridTarget(
            x=np.array([[0.5, 0.0]]), y=np.array([[0.5, 0.0]]),
            objectness=np.array([[1.0, 0.0]]),
            class_probs=np.array([[[1.0, 0.0], [0.0, 0.0]]]),
            obj_mask=np.array([[1.0, 0.0]]))
        # box 0 carries the object; box 1 contributes only background objectness
        assert abs(localization_loss(pred, target) - 0.01) < 1e-12
        present, absent, _ = objectness_loss(pred, target)
        assert abs(present - 0.04) < 1e-12
        assert abs(absent - 0.16) < 1e-12
        assert abs(classification_loss(pred, target) - 0.18) < 1e-12

    def test_breakdown_total_exactly_as_summed(self):
        pred, target = hand_fixture()
        w = LossWeights(2.5, 0.5, 1.5)
        b = total_loss(pred, target, w)
        assert b.total == w.loc * b.loc + w.obj * b.obj + w.cls * b.cls


def _fd_gradient(model, batch, weights, step=1e-5):
    grad = np.zeros_like(model.theta)
    for idx in np.ndindex(model.theta.shape):
        for sign in (+1, -1):
            theta = model.theta.copy()
            theta[idx] += sign * step
            probe = ToyModel(theta, model.n_classes)
            value = mean_loss(probe, batch, weights).total
            grad[idx] += sign * value
        grad[idx] /= 2 * step
    return grad


class TestGradient:
    def test_zero_residual_zero_gradient(self):
        dataset = make_toy_dataset(count=3, seed=1)
        # build a model that reproduces the targets exactly via least squares
        feats = np.vstack([ex.features for ex in dataset])
        outs = np.vstack([np.hstack([ex.target.x, ex.target.y, ex.target.objectness,
                                     ex.target.class_probs[:, 0, :]])
                          for ex in dataset])
        theta, *_ = np.linalg.lstsq(feats, outs, rcond=None)
        model = ToyModel(theta.T, n_classes=2)
        grad = grad_loss(model, dataset)
        assert np.allclose(grad, 0.0, atol=1e-9)

    def test_matches_finite_differences(self):
        rng = np.random.RandomState(0)
        weights = LossWeights(1.3, 0.7, 2.0)
        for trial in range(20):
            dataset = make_toy_dataset(count=2, cells=3, seed=trial)
            model = ToyModel(rng.uniform(-1, 1, size=(5, 4)), n_classes=2)
            analytic = grad_loss(model, dataset, weights)
            numeric = _fd_gradient(model, dataset, weights)
            rel = np.linalg.norm(numeric - analytic) / max(np.linalg.norm(analytic), 1e-12)
            assert rel <= 1e-6

    def test_doubling_residuals_doubles_gradient(self):
        dataset = make_toy_dataset(count=2, seed=3)
        zero = ToyModel.zeros(n_classes=2, feat_dim=4)
        g1 = grad_loss(zero, dataset)
        doubled = [GridExample(ex.features,
                               GridTarget(2 * ex.target.x, 2 * ex.target.y,
                                          2 * ex.target.objectness,
                                          2 * ex.target.class_probs,
                                          ex.target.obj_mask))
                   for ex in dataset]
        g2 = grad_loss(zero, doubled)
        assert np.allclose(g2, 2 * g1, rtol=1e-12, atol=1e-12)


class TestToyTrain:
    def test_zero_learning_rate_keeps_parameters(self):
        dataset = make_toy_dataset(count=4, seed=2)
        model = ToyModel.zeros(n_classes=2, feat_dim=4)
        trained, _ = toy_train(model, dataset, learning_rate=0.0, epochs=3, seed=0)
        assert np.array_equal(trained.theta, model.theta)

    def test_optimal_model_stays_at_minimum(self):
        dataset = make_toy_dataset(count=4, seed=4)
        feats = np.vstack([ex.features for ex in dataset])
        outs = np.vstack([np.hstack([ex.target.x, ex.target.y, ex.target.objectness,
                                     ex.target.class_probs[:, 0, :]])
                          for ex in dataset])
        theta, *_ = np.linalg.lstsq(feats, outs, rcond=None)
        model = ToyModel(theta.T, n_classes=2)
        trained, trace = toy_train(model, dataset, learning_rate=0.01, epochs=5, seed=0)
        assert all(abs(b.total) < 1e-18 for b in trace)

    def test_descent_on_synthetic_set(self):
        dataset = make_toy_dataset(count=20, seed=0)
        model = ToyModel.zeros(n_classes=2, feat_dim=4)
        initial = mean_loss(model, dataset).total
        trained, trace = toy_train(model, dataset, learning_rate=0.01,
                                   epochs=500, seed=0)
        assert trace[-1].total <= 0.10 * initial
        totals = [initial] + [b.total for b in trace]
        assert all(b <= a + 1e-15 for a, b in zip(totals, totals[1:]))

    def test_divergence_detected(self):
        dataset = make_toy_dataset(count=5, seed=5)
        model = ToyModel.zeros(n_classes=2, feat_dim=4)
        with pytest.raises(TrainingDiverged):
            toy_train(model, dataset, learning_rate=50.0, epochs=200, seed=0)


class TestGridFiles:
    def test_round_trip(self, tmp_path):
        pred, target = hand_fixture()
        path = tmp_path / "target.grid"
        path.write_text(format_grid(target.x, target.y, target.objectness,
                                    target.class_probs, target.obj_mask))
        loaded = load_target_grid(path)
        assert np.allclose(loaded.x, target.x)
        assert np.allclose(loaded.obj_mask, target.obj_mask)
        assert np.allclose(loaded.class_probs, target.class_probs)

    def test_prediction_load_ignores_indicator(self, tmp_path):
        pred, target = hand_fixture()
        path = tmp_path / "pred.grid"
        path.write_text(format_grid(pred.x, pred.y, pred.objectness,
                                    pred.class_probs, target.obj_mask))
        loaded = load_prediction_grid(path)
        assert np.allclose(loaded.x, pred.x)

    def test_incomplete_grid_rejected(self, tmp_path):
        path = tmp_path / "bad.grid"
        path.write_text("0 0 1 0.1 0.2 0.3 1 0\n2 0 0 0.1 0.2 0.3 0 1\n")
        with pytest.raises(ValueError, match="cover"):
            load_target_grid(path)

    def test_bad_indicator_rejected(self, tmp_path):
        path = tmp_path / "bad.grid"
        path.write_text("0 0 2 0.1 0.2 0.3 1 0\n")
        with pytest.raises(ValueError, match="indicator"):
            load_target_grid(path)
