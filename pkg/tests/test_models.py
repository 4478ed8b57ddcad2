"""Tests for data generation, optimizers and shared losses."""

import numpy as np
import pytest

from sparsegrad import tensor as T
from sparsegrad.data import (bfs_geodesics, chronological_split, make_classify,
                             make_traffic, window_series)
from sparsegrad.models.losses import (error_rate, mape, mre_loss, one_hot,
                                      softmax_xent)
from sparsegrad.optim import Adam, Sgd, late_halving, step_decay
from sparsegrad.tensor import Tensor, backward


class TestClassifyData:
    def test_shapes_and_labels(self):
        x, y = make_classify(n_samples=40, n_features=6, seed=0)
        assert x.shape == (40, 6)
        assert y.shape == (40,)
        assert set(np.unique(y)) <= {0, 1}

    def test_deterministic(self):
        x1, y1 = make_classify(30, 8, seed=7)
        x2, y2 = make_classify(30, 8, seed=7)
        assert np.array_equal(x1, x2)
        assert np.array_equal(y1, y2)

    def test_informative_features_separate_classes(self):
        x, y = make_classify(400, 8, seed=1, informative=3)
        gap = np.abs(x[y == 0].mean(axis=0) - x[y == 1].mean(axis=0))
        # informative columns come first; the shift lives on a unit
        # direction of length 2 * 1.25 across them
        assert np.linalg.norm(gap[:3]) > 1.5
        assert np.all(gap[3:] < 0.5)


class TestGeodesics:
    def test_line_graph(self):
        adj = np.eye(4)
        for i in range(3):
            adj[i, i + 1] = adj[i + 1, i] = 1.0
        d = bfs_geodesics(adj)
        assert d[0, 3] == 3
        assert d[1, 2] == 1
        assert np.all(np.diag(d) == 0)

    def test_unreachable_marked_beyond_n(self):
        adj = np.eye(3)
        d = bfs_geodesics(adj)
        assert d[0, 1] == 4  # n + 1 marks unreachable
        assert d[0, 0] == 0


class TestTrafficData:
    def test_shapes_and_positivity(self):
        data = make_traffic(n_nodes=10, t_steps=50, seed=3)
        assert data.series.shape == (50, 10)
        assert np.all(data.series >= 1.0)
        assert data.adjacency.shape == (10, 10)
        assert data.geodesic.shape == (10, 10)

    def test_adjacency_symmetric_with_self_loops(self):
        data = make_traffic(n_nodes=12, t_steps=20, seed=5)
        assert np.array_equal(data.adjacency, data.adjacency.T)
        assert np.all(np.diag(data.adjacency) == 1.0)

    def test_graph_connected(self):
        data = make_traffic(n_nodes=15, t_steps=20, seed=9)
        d = bfs_geodesics(data.adjacency)
        assert np.all(d <= 15)

    def test_deterministic(self):
        a = make_traffic(n_nodes=8, t_steps=30, seed=11)
        b = make_traffic(n_nodes=8, t_steps=30, seed=11)
        assert np.array_equal(a.series, b.series)
        assert np.array_equal(a.adjacency, b.adjacency)

    def test_neighbors_drive_dynamics(self):
        # the series must reflect the diffusion term, so a node's next value
        # correlates with its neighbors' current values more than with a
        # non-neighbor's
        data = make_traffic(n_nodes=10, t_steps=400, seed=2)
        s = data.series
        nbr = data.adjacency.copy()
        np.fill_diagonal(nbr, 0.0)
        i = int(np.argmax(nbr.sum(axis=1)))
        j = int(np.flatnonzero(nbr[i])[0])
        k_candidates = np.flatnonzero((nbr[i] == 0.0) & (np.arange(10) != i))
        assert k_candidates.size > 0
        k = int(k_candidates[0])
        c_nbr = np.corrcoef(s[1:, i], s[:-1, j])[0, 1]
        c_far = np.corrcoef(s[1:, i], s[:-1, k])[0, 1]
        assert c_nbr > c_far


class TestWindowing:
    def test_window_shapes_and_content(self):
        series = np.arange(60, dtype=np.float64).reshape(12, 5)
        feats, targets = window_series(series, history=4)
        assert feats.shape == (8, 5, 4)
        assert targets.shape == (8, 5)
        # first window: node 0 sees t=0..3, target is t=4
        assert np.array_equal(feats[0, 0], series[0:4, 0])
        assert targets[0, 0] == series[4, 0]

    def test_split_is_chronological_partition(self):
        tr, va, te = chronological_split(100)
        assert len(tr) == 70 and len(va) == 15 and len(te) == 15
        assert tr[-1] < va[0] < te[0]
        joined = np.concatenate([tr, va, te])
        assert np.array_equal(joined, np.arange(100))


class TestOptimizers:
    def test_sgd_momentum_two_steps(self):
        opt = Sgd(lr=0.1, momentum=0.9)
        p = {"w": Tensor(np.array([1.0]))}
        g = {"w": Tensor(np.array([2.0]))}
        p = opt.step(p, g)
        assert np.allclose(p["w"].data, 1.0 - 0.1 * 2.0)
        p = opt.step(p, g)
        # velocity = 0.9 * 2 + 2 = 3.8
        assert np.allclose(p["w"].data, 0.8 - 0.1 * 3.8)

    def test_adam_first_step_magnitude(self):
        opt = Adam(lr=0.01)
        p = {"w": Tensor(np.array([0.0]))}
        g = {"w": Tensor(np.array([5.0]))}
        p = opt.step(p, g)
        # bias-corrected first step moves by about lr regardless of g scale
        assert np.allclose(p["w"].data, -0.01, atol=1e-6)

    def test_sgd_converges_on_quadratic(self):
        opt = Sgd(lr=0.05, momentum=0.9)
        params = {"w": Tensor(np.array([3.0, -2.0]))}
        for _ in range(200):
            w = params["w"]
            loss = T.tsum(w * w)
            grads = backward(loss, wrt=[w])
            params = opt.step(params, {"w": grads[w]})
        assert np.all(np.abs(params["w"].data) < 1e-4)

    def test_step_decay_schedule(self):
        assert step_decay(1.0, 0, 100) == 1.0
        assert step_decay(1.0, 49, 100) == 1.0
        assert np.isclose(step_decay(1.0, 50, 100), 0.1)
        assert np.isclose(step_decay(1.0, 75, 100), 0.01)

    def test_late_halving_schedule(self):
        assert late_halving(1.0, 0, 100) == 1.0
        assert np.isclose(late_halving(1.0, 80, 100), 0.5)
        assert np.isclose(late_halving(1.0, 90, 100), 0.25)


class TestLosses:
    def test_one_hot(self):
        oh = one_hot(np.array([0, 2, 1]), 3)
        assert np.array_equal(oh, np.array([[1.0, 0, 0], [0, 0, 1], [0, 1, 0]]))

    def test_xent_uniform_logits(self):
        logits = Tensor(np.zeros((4, 3)))
        loss = softmax_xent(logits, np.array([0, 1, 2, 0]))
        assert np.isclose(loss.data, np.log(3.0))

    def test_xent_gradient_direction(self):
        logits = Tensor(np.zeros((1, 2)))
        loss = softmax_xent(logits, np.array([0]))
        g = backward(loss, wrt=[logits])[logits].data
        # pushing the true-class logit up lowers the loss
        assert g[0, 0] < 0.0 < g[0, 1]

    def test_error_rate(self):
        logits = np.array([[2.0, 1.0], [0.0, 1.0], [3.0, 0.0], [0.0, 2.0]])
        labels = np.array([0, 0, 0, 1])
        assert error_rate(logits, labels) == 0.25

    def test_mre_hand_value(self):
        pred = Tensor(np.array([[2.2, 4.0]]))
        loss = mre_loss(pred, np.array([[2.0, 5.0]]))
        assert np.isclose(loss.data, 0.5 * (0.2 / 2.0 + 1.0 / 5.0), atol=1e-12)

    def test_mre_rejects_nonpositive_targets(self):
        with pytest.raises(ValueError, match="positive targets"):
            mre_loss(Tensor(np.array([1.0])), np.array([0.0]))
        with pytest.raises(ValueError, match="positive targets"):
            mape(np.array([1.0]), np.array([-2.0]))

    def test_mape_is_percent_mre(self):
        pred = np.array([1.1, 2.0])
        target = np.array([1.0, 2.5])
        loss = mre_loss(Tensor(pred), target)
        assert np.isclose(mape(pred, target), 100.0 * float(loss.data))

    def test_mre_gradient_matches_fd(self):
        from sparsegrad.gradcheck import check_gradients

        target = np.array([[2.0, 3.0], [1.5, 4.0]])

        def build(p):
            return mre_loss(p["pred"], target)

        report = check_gradients(build, {"pred": np.array([[2.7, 2.1],
                                                           [1.1, 5.0]])})
        assert report.passed, list(report.lines())
