"""Tests for the synthetic benchmark construction."""

import itertools

import numpy as np
import pytest

from lgc import datagen
from lgc.errors import InvalidShape
from lgc.poly_gnn import forward


class TestTemplate:
    def test_edge_count_default_benchmark(self):
        edges = datagen.template_edges(3)
        per_community = len(datagen.INTRA_EDGES)
        assert len(edges) == 3 * per_community + 3
        assert len(set(edges)) == len(edges)

    def test_theta_on_applied_to_all_template_edges(self):
        gt = datagen.build_ground_truth()
        on = gt.dist_star.theta > 0
        assert int(on.sum()) == len(datagen.template_edges(3))
        assert np.all(gt.dist_star.theta[on] == 0.75)
        assert np.all(np.diag(gt.dist_star.theta) == 0.0)

    def test_large_graph_shape(self):
        gt = datagen.build_ground_truth(n_communities=30)
        assert gt.n == 120

    def test_invalid_community_size(self):
        with pytest.raises(InvalidShape):
            datagen.build_ground_truth(community_size=5)

    def test_ring_links_local3_to_next_local0(self):
        edges = set(datagen.template_edges(3))
        assert (3, 4) in edges and (7, 8) in edges and (11, 0) in edges


class TestGenerate:
    def test_input_standard_deviation(self):
        gt = datagen.build_ground_truth()
        ds = datagen.generate(gt, n_pairs=35_000, seed=11)
        assert abs(ds.x.std() - 1.5) < 0.01

    def test_all_zero_theta_gives_zero_outputs(self):
        gt = datagen.build_ground_truth(theta_on=1e-12)
        gt.dist_star.theta[:] = 0.0
        ds = datagen.generate(gt, n_pairs=200, seed=0)
        assert not ds.y.any()

    def test_outputs_inside_tanh_range(self):
        gt = datagen.build_ground_truth()
        ds = datagen.generate(gt, n_pairs=500, seed=1)
        assert np.all(np.abs(ds.y) < 1.0)

    def test_splits_partition_the_pairs(self):
        gt = datagen.build_ground_truth()
        ds = datagen.generate(gt, n_pairs=1000, seed=2)
        combined = np.concatenate([ds.splits[k] for k in ("train", "validation", "test")])
        assert np.array_equal(np.sort(combined), np.arange(1000))
        assert ds.splits["train"].size == 800
        assert ds.splits["validation"].size == 100

    def test_regeneration_is_bit_exact(self):
        gt = datagen.build_ground_truth()
        ds = datagen.generate(gt, n_pairs=300, seed=3)
        ds2 = datagen.regenerate(ds.manifest)
        assert np.array_equal(ds.x, ds2.x)
        assert np.array_equal(ds.y, ds2.y)


class TestPersistence:
    def test_csv_round_trip_bit_exact(self, tmp_path):
        gt = datagen.build_ground_truth()
        ds = datagen.generate(gt, n_pairs=120, seed=4)
        datagen.save_dataset(ds, tmp_path)
        loaded = datagen.load_dataset(tmp_path)
        assert np.array_equal(ds.x, loaded.x)
        assert np.array_equal(ds.y, loaded.y)
        for k in ds.splits:
            assert np.array_equal(ds.splits[k], loaded.splits[k])
        assert loaded.manifest["seed"] == 4


class TestOutputDistribution:
    def test_reduced_ground_truth_matches_enumeration(self):
        # 4 stochastic edges: enumerate the 16 outcomes exactly and compare
        # atom frequencies over fresh adjacency draws, 3 binomial SEs apart
        gt = datagen.build_ground_truth()
        theta = np.zeros((12, 12))
        kept = datagen.template_edges(3)[:4]
        for i, j in kept:
            theta[i, j] = 0.75
        gt.dist_star.theta[:] = theta
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1.5, (12, 4))

        atom_probs = {}
        for bits in itertools.product([0.0, 1.0], repeat=4):
            a = np.zeros((12, 12))
            p = 1.0
            for bit, (i, j) in zip(bits, kept):
                a[i, j] = bit
                p *= 0.75 if bit else 0.25
            key = tuple(np.round(forward(gt.model_star, x, a).ravel(), 12))
            atom_probs[key] = atom_probs.get(key, 0.0) + p

        n = 100_000
        adjs = gt.dist_star.sample_many(rng, n)
        counts = {}
        for a in adjs:
            key = tuple(np.round(forward(gt.model_star, x, a).ravel(), 12))
            counts[key] = counts.get(key, 0) + 1
        assert set(counts) <= set(atom_probs)
        for key, p in atom_probs.items():
            se = np.sqrt(p * (1 - p) / n)
            assert abs(counts.get(key, 0) / n - p) <= 3 * se + 1e-12


class TestOptimalErrorOracle:
    def test_degenerate_ground_truth_is_zero(self):
        gt = datagen.build_ground_truth()
        gt.dist_star.theta[:] = (gt.dist_star.theta > 0.5).astype(float)
        assert datagen.optimal_error_oracle(gt, "mse", n_mc=200, n_adj=16) < 1e-12
        assert datagen.optimal_error_oracle(gt, "mae", n_mc=200, n_adj=16) < 1e-12

    def test_seed_stability(self):
        gt = datagen.build_ground_truth()
        vals = [
            datagen.optimal_error_oracles(gt, n_mc=20_000, n_adj=256, seed=s)
            for s in (1, 2)
        ]
        for metric in ("mae", "mse"):
            assert vals[0][metric] >= 0.0
            assert abs(vals[0][metric] - vals[1][metric]) <= 0.002

    def test_invalid_metric(self):
        gt = datagen.build_ground_truth()
        with pytest.raises(ValueError):
            datagen.optimal_error_oracle(gt, "rmse", n_mc=10, n_adj=4)


class TestMisconfiguredConstraints:
    def test_freezes_only_community0_edges_touching_nodes_2_and_3(self):
        gt = datagen.build_ground_truth()
        frozen, values = datagen.misconfigured_constraints(gt)
        assert np.all(values[frozen] == 0.25)
        for i, j in np.argwhere(frozen):
            assert i in (2, 3) or j in (2, 3)
            assert gt.dist_star.theta[i, j] == 0.75
        # no frozen edge lies fully inside the unperturbed communities
        assert not any(i >= 4 and j >= 4 for i, j in np.argwhere(frozen))
