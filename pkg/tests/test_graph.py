import numpy as np
import pytest

from curvib.graph import (Graph, LabelSet, build_graph, hop_distance,
                          inject_noise, mass_matrix, sbm_generate)


class TestBuildGraph:
    def test_dedupe_and_self_loops(self):
        g = build_graph([(0, 1), (1, 0), (1, 1)], 2)
        assert g.edges == ((0, 1),)

    def test_empty(self):
        g = build_graph([], 3)
        assert g.node_count == 3
        assert g.edges == ()
        assert g.degrees().tolist() == [0, 0, 0]

    def test_path_degrees(self):
        g = build_graph([(0, 1), (1, 2)], 3)
        assert g.degrees().tolist() == [1, 2, 1]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            build_graph([(0, 5)], 3)
        with pytest.raises(ValueError):
            build_graph([], 0)

    def test_idempotent_rebuild(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 15))
            pairs = [(int(rng.integers(0, n)), int(rng.integers(0, n)))
                     for _ in range(n * 2)]
            g = build_graph(pairs, n)
            assert build_graph(g.edges, n) == g

    def test_symmetry(self):
        g = build_graph([(0, 1), (2, 1)], 4)
        for i, j in g.edges:
            assert j in g.neighbors[i]
            assert i in g.neighbors[j]


class TestMassMatrix:
    def test_alpha_one_identity(self):
        g = build_graph([(0, 1), (1, 2)], 3)
        m = mass_matrix(g, 1.0)
        assert np.allclose(m.to_dense(), np.eye(3))

    def test_p3_center_row(self):
        g = build_graph([(0, 1), (1, 2)], 3)
        m = mass_matrix(g, 0.5).to_dense()
        assert np.allclose(m[1], [0.25, 0.5, 0.25])

    def test_k2_alpha_zero(self):
        g = build_graph([(0, 1)], 2)
        m = mass_matrix(g, 0.0).to_dense()
        assert np.allclose(m, [[0.0, 1.0], [1.0, 0.0]])

    def test_isolated_identity_row(self):
        g = build_graph([(0, 1)], 3)
        m = mass_matrix(g, 0.3).to_dense()
        assert m[2, 2] == 1.0
        assert np.allclose(m[2].sum(), 1.0)

    def test_row_sums_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 20))
            pairs = [(int(rng.integers(0, n)), int(rng.integers(0, n)))
                     for _ in range(n * 2)]
            g = build_graph(pairs, n)
            alpha = float(rng.random())
            sums = mass_matrix(g, alpha).row_sums()
            assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_alpha_out_of_range(self):
        g = build_graph([(0, 1)], 2)
        with pytest.raises(ValueError):
            mass_matrix(g, 1.5)


class TestHopDistance:
    def test_path_ends(self):
        g = build_graph([(0, 1), (1, 2)], 3)
        assert hop_distance(g, 0, {2}, 5) == {2: 2}

    def test_self_distance(self):
        g = build_graph([(0, 1)], 2)
        assert hop_distance(g, 0, {0}, 1) == {0: 0}

    def test_unreachable_absent(self):
        g = build_graph([(0, 1), (2, 3)], 4)
        assert hop_distance(g, 0, {3}, 10) == {}

    def test_radius_cap(self):
        g = build_graph([(0, 1), (1, 2), (2, 3)], 4)
        assert hop_distance(g, 0, {3}, 2) == {}
        assert hop_distance(g, 0, {3}, 3) == {3: 3}

    def test_symmetric_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = int(rng.integers(4, 20))
            pairs = [(int(rng.integers(0, n)), int(rng.integers(0, n)))
                     for _ in range(n * 2)]
            g = build_graph(pairs, n)
            nodes = list(range(n))
            for u in nodes:
                forward = hop_distance(g, u, set(nodes), n)
                for v, d in forward.items():
                    assert hop_distance(g, v, {u}, n)[u] == d


class TestInjectNoise:
    def test_ratio_zero_noop(self):
        g = build_graph([(0, 1), (1, 2)], 3)
        assert inject_noise(g, 0.0, "remove", 1) == g

    def test_p3_half_remove(self):
        g = build_graph([(0, 1), (1, 2)], 3)
        noisy = inject_noise(g, 0.5, "remove", 5)
        assert noisy.edge_count() == 1

    def test_saturated_add(self):
        k4 = build_graph([(i, j) for i in range(4) for j in range(i + 1, 4)], 4)
        assert inject_noise(k4, 0.5, "add", 2).edge_count() == k4.edge_count()

    def test_deterministic(self):
        g = build_graph([(i, i + 1) for i in range(9)], 10)
        a = inject_noise(g, 0.4, "mixed", 9)
        b = inject_noise(g, 0.4, "mixed", 9)
        assert a == b

    def test_invariants_after_removal(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(4, 15))
            pairs = [(int(rng.integers(0, n)), int(rng.integers(0, n)))
                     for _ in range(n * 3)]
            g = build_graph(pairs, n)
            noisy = inject_noise(g, 0.5, "remove", int(rng.integers(0, 100)))
            assert build_graph(noisy.edges, n) == noisy
            assert all(i < j for i, j in noisy.edges)

    def test_ratio_out_of_range(self):
        g = build_graph([(0, 1)], 2)
        with pytest.raises(ValueError):
            inject_noise(g, 1.5, "add", 0)


class TestSbm:
    def test_two_triangles(self):
        g, x, labels = sbm_generate([3, 3], 1.0, 0.0, 2, 0.1, seed=0)
        assert g.node_count == 6
        assert g.edge_count() == 6  # two disjoint triangles
        assert labels.labels.tolist() == [0, 0, 0, 1, 1, 1]
        assert hop_distance(g, 0, {3}, 10) == {}

    def test_determinism(self):
        a = sbm_generate([50, 50], 0.2, 0.02, 4, 0.5, seed=42)
        b = sbm_generate([50, 50], 0.2, 0.02, 4, 0.5, seed=42)
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2].labels, b[2].labels)
        assert np.array_equal(a[2].train_mask, b[2].train_mask)

    def test_intra_edge_count_binomial(self):
        # expected intra-block edges: 2 * C(50,2) * 0.2 = 490
        counts = []
        for seed in range(20):
            g, _, labels = sbm_generate([50, 50], 0.2, 0.02, 4, 0.5, seed=seed)
            intra = sum(1 for i, j in g.edges if labels.labels[i] == labels.labels[j])
            counts.append(intra)
        n_pairs = 2 * (50 * 49 // 2)
        expected = n_pairs * 0.2
        sigma_one = np.sqrt(n_pairs * 0.2 * 0.8)
        se_mean = sigma_one / np.sqrt(20)
        assert abs(np.mean(counts) - expected) <= 4 * se_mean

    def test_mask_invariants(self):
        _, _, labels = sbm_generate([30, 20, 10], 0.3, 0.05, 4, 1.0, seed=3)
        labels.validate()
        assert labels.train_mask.sum() >= 3

    def test_empty_block_rejected(self):
        with pytest.raises(ValueError):
            sbm_generate([0, 5], 0.5, 0.1, 2, 0.1, seed=0)
