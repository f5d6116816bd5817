from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcfloat import autodiff as ad
from mcfloat import hyperbolic as hb
from mcfloat.mct import MCTensor, approx, from_float
from mcfloat.oracle import exact, hp_arcosh

from .conftest import random_mc


def exact_distance(x, y):
    """arcosh(1 + |x-y|^2 / (2 x_n y_n)) with the ratio in rationals, arcosh in mpmath."""
    xs = [exact(v) for v in np.asarray(x, dtype=np.float64)]
    ys = [exact(v) for v in np.asarray(y, dtype=np.float64)]
    t = sum((a - b) ** 2 for a, b in zip(xs, ys)) / (2 * xs[-1] * ys[-1])
    return hp_arcosh(1 + t, bits=200)


class TestDistance:
    def test_vertical_geodesic_has_log_length(self):
        d = hb.halfspace_distance(np.array([0.0, 1.0]), np.array([0.0, math.e]), nc=2)
        assert abs(d - 1.0) < 1e-12

    @pytest.mark.parametrize("nc", [1, 2])
    def test_self_distance_is_zero(self, rng, nc):
        x = rng.uniform(0.1, 2, (20, 4))
        assert np.all(hb.halfspace_distance(x, x, nc=nc) == 0)

    @pytest.mark.parametrize("dtype", [np.float16, np.float64])
    def test_bitwise_symmetric(self, rng, dtype):
        x = random_mc(rng, (50, 5), 2, dtype, signed=False)
        y = random_mc(rng, (50, 5), 2, dtype, signed=False)
        assert np.array_equal(hb.halfspace_distance(x, y), hb.halfspace_distance(y, x))

    def test_nonpositive_height_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            hb.halfspace_distance(np.array([0.0, 1.0]), np.array([0.5, 0.0]))

    def test_matches_high_precision_oracle(self, rng):
        x = rng.uniform(-1, 1, (30, 3))
        y = rng.uniform(-1, 1, (30, 3))
        x[:, -1] = rng.uniform(0.05, 2, 30)
        y[:, -1] = rng.uniform(0.05, 2, 30)
        got = hb.halfspace_distance(x, y, nc=2)
        for g, a, b in zip(got, x, y):
            ref = exact_distance(a, b)
            assert abs(Fraction(float(g)) - ref) <= 4 * 2.0 ** -52 * ref

    def test_nearby_points_keep_relative_accuracy(self):
        # 1 + t rounds to 1 in binary64 here; the distance must not collapse to 0
        x = np.array([0.0, 1.0])
        y = np.array([2.0 ** -30, 1.0])
        d = hb.halfspace_distance(x, y, nc=2)
        ref = exact_distance(x, y)
        assert d > 0
        assert abs(Fraction(float(d)) - ref) <= 2.0 ** -50 * ref

    def test_binary16_far_points_are_finite(self):
        x = from_float(np.array([[0.0, 2.0 ** -10]], dtype=np.float16), 2)
        y = from_float(np.array([[100.0, 2.0 ** -10]], dtype=np.float16), 2)
        d = hb.halfspace_distance(x, y)
        assert np.all(np.isfinite(d)) and d[0] > 10

    @pytest.mark.parametrize("nc", [2, 3])
    def test_binary16_wide_path_is_bitwise_native(self, rng, monkeypatch, nc):
        def points(n):
            x = rng.standard_normal((n, 4)) * np.exp2(rng.integers(-12, 8, (n, 1)))
            x[:, -1] = np.exp2(rng.uniform(-14, 4, n))
            return from_float(x.astype(np.float16), nc)

        x, y = points(400), points(400)
        fast = hb.halfspace_t(x, y)
        monkeypatch.setattr(hb, "fma_enabled", lambda prec: False)
        slow = hb.halfspace_t(x, y)
        assert fast.dtype == np.float16
        assert np.array_equal(fast.data, slow.data)
        assert (approx(slow) == np.finfo(np.float16).max).any()

    def test_arcosh_guard(self):
        a = 1 + 2.0 ** -40
        ref = hp_arcosh(Fraction(a))
        assert abs(Fraction(float(hb.arcosh(a))) - ref) <= 1e-10 * ref
        assert hb.arcosh(1.0) == 0
        with pytest.raises(ValueError):
            hb.arcosh(0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3),
           st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 5))
    def test_triangle_inequality(self, shifts, h1, h2, h3):
        p = np.array([[0.0, h1], [shifts[0], h2], [shifts[1], h3]])
        d = lambda i, j: float(hb.halfspace_distance(p[i], p[j], nc=2))
        assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9


def toy_table(rng, n=3, dim=3):
    x = rng.uniform(-0.5, 0.5, (n, dim))
    x[:, -1] = rng.uniform(0.3, 1.5, n)
    return x


class TestGradients:
    def test_loss_matches_finite_differences(self, rng):
        x0 = toy_table(rng)
        batch = np.array([[0, 1, 2], [2, 1, 0]])

        def loss(x):
            return float(hb.reconstruction_loss(from_float(x, 1), batch).value)

        table = from_float(x0, 2)
        ad.backward(hb.reconstruction_loss(table, batch))
        h = 1e-6
        for idx in np.ndindex(x0.shape):
            xp, xm = x0.copy(), x0.copy()
            xp[idx] += h
            xm[idx] -= h
            fd = (loss(xp) - loss(xm)) / (2 * h)
            assert fd == pytest.approx(table.grad[idx], rel=1e-5, abs=1e-8)

    def test_distance_gradient_at_coincident_points_is_finite(self):
        u = ad.param(from_float(np.array([[0.0, 1.0]]), 2))
        v = ad.param(from_float(np.array([[0.0, 1.0]]), 2))
        ad.backward(hb.distance_var(u, v).sum())
        assert np.all(np.isfinite(u.mc.grad))

    def test_rsgd_zero_gradient_is_noop(self, rng):
        table = from_float(toy_table(rng), 2)
        before = table.data.copy()
        table.grad = np.zeros(table.shape)
        assert hb.rsgd_step(table, 0.5) == 0
        assert np.array_equal(table.data, before)

    def test_rsgd_scales_by_height_squared(self):
        table = from_float(np.array([[0.0, 2.0], [0.0, 1.0]]), 2)
        table.grad = np.array([[1.0, 0.0], [1.0, 0.0]])
        hb.rsgd_step(table, 0.01)
        assert approx(table)[0, 0] == -0.04
        assert approx(table)[1, 0] == -0.01

    def test_rsgd_clamps_heights(self):
        table = from_float(np.array([[0.0, 1.0]]), 2)
        table.grad = np.array([[0.0, 10.0]])
        assert hb.rsgd_step(table, 1.0) == 1
        assert approx(table)[0, 1] == hb.eps_n("b64")

    def test_rsgd_clamped_height_with_overflowed_gradient_stays_finite(self):
        eps = hb.eps_n("b64")
        table = from_float(np.array([[0.5, eps], [0.0, 1.0]]), 2)
        table.grad = np.array([[np.inf, -np.inf], [1.0, 0.0]])
        hb.rsgd_step(table, 1.0)
        assert np.all(np.isfinite(table.data))
        assert approx(table)[0, 0] == 0.5 and approx(table)[0, 1] == eps
        assert approx(table)[1, 0] == -1.0

    def test_rsgd_needs_gradient(self):
        with pytest.raises(RuntimeError):
            hb.rsgd_step(from_float(np.ones((2, 2)), 2), 0.1)


def test_two_points_pull_together(rng):
    ds = hb.EdgeDataset(["a", "b", "c"], np.array([[0, 1], [1, 0]]), negatives=1)
    table, losses = hb.train_embedding(ds, dim=2, nc=2, lr=0.5, epochs=200, seed=1)
    d = hb.all_distances(table)
    assert d[0, 1] < d[0, 2] and d[0, 1] < d[1, 2]
    assert losses[-1] < losses[0]


class TestRanking:
    def test_three_node_path(self):
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = True
        pos = np.array([0.0, 1.0, 2.0])
        dist = np.abs(pos[:, None] - pos[None, :])
        assert hb.evaluate_map_mr(dist, adj) == (1.0, 1.0)

    def test_three_node_path_misordered(self):
        # anchor 0 sees its non-neighbor first; anchor 2 has a tie
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = True
        dist = np.array([[0, 2, 1], [2, 0, 1], [1, 1, 0]], dtype=float)
        m, r = hb.evaluate_map_mr(dist, adj)
        assert m == pytest.approx(2 / 3) and r == pytest.approx(1.25)

    def test_random_distances_on_tree_score_below_one(self, rng):
        ds = hb.EdgeDataset([str(i) for i in range(40)], hb.balanced_tree(40))
        d = rng.uniform(0, 1, (40, 40))
        d = d + d.T
        m, r = hb.evaluate_map_mr(d, ds.adjacency)
        assert m < 1 and r > 1

    def test_brute_force_agreement(self, rng):
        n = 10
        adj = rng.random((n, n)) < 0.3
        adj = adj | adj.T
        np.fill_diagonal(adj, False)
        d = rng.integers(1, 6, (n, n)).astype(float)
        d = d + d.T
        aps, ranks = [], []
        for u in range(n):
            nbs = [v for v in range(n) if adj[u, v]]
            if not nbs:
                continue
            prec = []
            for v in nbs:
                closer = [w for w in range(n) if w != u and d[u, w] <= d[u, v]]
                hits = sum(adj[u, w] for w in closer)
                prec.append(hits / len(closer))
                ranks.append(1 + sum(1 for w in range(n)
                                     if w != u and not adj[u, w] and d[u, w] < d[u, v]))
            aps.append(np.mean(prec))
        m, r = hb.evaluate_map_mr(d, adj)
        assert m == pytest.approx(np.mean(aps)) and r == pytest.approx(np.mean(ranks))

    def test_invariant_to_scaling(self, rng):
        ds = hb.EdgeDataset([str(i) for i in range(30)], hb.balanced_tree(30))
        d = rng.uniform(0, 1, (30, 30))
        assert hb.evaluate_map_mr(d, ds.adjacency) == hb.evaluate_map_mr(2 * d, ds.adjacency)


class TestData:
    def test_read_edges_interns_in_order(self, tmp_path):
        f = tmp_path / "g.tsv"
        f.write_text("# comment\nroot\ta\nroot\tb\n\na\tc\n")
        names, edges = hb.read_edges(f)
        assert names == ["root", "a", "b", "c"]
        assert edges.tolist() == [[0, 1], [0, 2], [1, 3]]

    @pytest.mark.parametrize("text", ["a b\n", "a\t\n", "a\tb\tc\n", "\n"])
    def test_read_edges_rejects_bad_lines(self, tmp_path, text):
        f = tmp_path / "g.tsv"
        f.write_text(text)
        with pytest.raises(ValueError):
            hb.read_edges(f)

    def test_closure_of_chain(self):
        pairs = hb.transitive_closure(4, np.array([[0, 1], [1, 2], [2, 3]]))
        assert pairs.tolist() == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]

    def test_balanced_tree_parents(self):
        assert hb.balanced_tree(5, 2).tolist() == [[0, 1], [0, 2], [1, 3], [1, 4]]

    def test_unknown_node_rejected(self):
        with pytest.raises(ValueError):
            hb.EdgeDataset(["a"], np.array([[0, 1]]))

    def test_negatives_avoid_neighbors(self, rng):
        ds = hb.EdgeDataset([str(i) for i in range(30)], hb.balanced_tree(30), negatives=10)
        batch = hb.sample_batch(ds, ds.edges, rng)
        u, neg = batch[:, 0], batch[:, 2:]
        padded = neg == batch[:, 1:2]
        assert not np.any(ds.adjacency[u[:, None], neg] & ~padded)
        assert not np.any(neg == u[:, None])


@pytest.mark.parametrize("nc", [1, 2])
def test_long_chain_training_stays_finite(nc):
    n = 20
    edges = np.array([[i, i + 1] for i in range(n - 1)])
    ds = hb.EdgeDataset([str(i) for i in range(n)], np.concatenate([edges, edges[:, ::-1]]), negatives=10)
    table, losses = hb.train_embedding(ds, dim=3, nc=nc, lr=0.3, epochs=500, seed=0)
    assert np.all(np.isfinite(table.data)) and np.all(np.isfinite(losses))
    assert np.all(approx(table)[:, -1] > 0)


def test_binary16_training_stays_finite():
    ds = hb.EdgeDataset([str(i) for i in range(40)], hb.balanced_tree(40))
    ds = hb.EdgeDataset(ds.names, np.concatenate([ds.edges, ds.edges[:, ::-1]]), negatives=10)
    table, losses = hb.train_embedding(ds, dim=3, nc=2, precision="b16", lr=3.0, epochs=30, seed=0)
    assert np.all(np.isfinite(approx(table))) and np.all(np.isfinite(losses))


def test_save_embedding(tmp_path, rng):
    from mcfloat.serialize import load
    table = from_float(toy_table(rng), 2)
    hb.save_embedding(table, ["a", "b", "c"], tmp_path / "e.mct")
    assert np.array_equal(load(tmp_path / "e.mct").data, table.data)
    assert (tmp_path / "e.mct.ids.json").read_text() == '{"a": 0, "b": 1, "c": 2}'
