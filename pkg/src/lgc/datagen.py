"""Synthetic benchmark: community-patterned ground truth and datasets.

The ground-truth edge probabilities follow a repeated community template:
within each community of 4 local nodes every directed off-diagonal pair
carries probability theta_on, and each community's local node 3 links to
local node 0 of the next community in a ring.  All other entries
(including the diagonal) are exactly zero.  The generating model is a
fixed two-hop PolyGnn; inputs are i.i.d. Gaussian.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass

import numpy as np

from .edge_dist import EdgeDistribution
from .errors import InvalidShape
from .poly_gnn import PolyGnn, forward_from_hops, hop_matrices_batch

COMMUNITY_SIZE = 4
INTRA_EDGES = tuple(itertools.permutations(range(COMMUNITY_SIZE), 2))
DEFAULT_PSI = ([[0.3, -0.2, 0.1, -0.2]], [[-0.3, 0.1, 0.2, -0.1]])
DEFAULT_THETA_ON = 0.75
DEFAULT_SIGMA_X = 1.5

_GEN_CHUNK = 2048  # fixed so the draw sequence is independent of memory limits


def template_edges(n_communities: int, community_size: int = COMMUNITY_SIZE) -> list:
    """Directed edges of the ground-truth pattern as (i, j) global pairs."""
    if community_size != COMMUNITY_SIZE:
        raise InvalidShape(f"community template is defined for size {COMMUNITY_SIZE}")
    if n_communities < 1:
        raise InvalidShape("need at least one community")
    edges = []
    for c in range(n_communities):
        base = c * community_size
        edges.extend((base + i, base + j) for i, j in INTRA_EDGES)
        nxt = ((c + 1) % n_communities) * community_size
        if nxt != base:
            edges.append((base + 3, nxt))
    return edges


@dataclass
class GroundTruth:
    """Frozen generating process: edge distribution, model, input scale."""

    dist_star: EdgeDistribution
    model_star: PolyGnn
    sigma_x: float
    n_communities: int
    community_size: int
    theta_on: float

    @property
    def n(self) -> int:
        return self.dist_star.n

    def params_dict(self) -> dict:
        return {
            "n_communities": self.n_communities,
            "community_size": self.community_size,
            "theta_on": self.theta_on,
            "sigma_x": self.sigma_x,
            "psi_layers": [w.tolist() for w in self.model_star.layers],
        }


def build_ground_truth(
    n_communities: int = 3,
    community_size: int = COMMUNITY_SIZE,
    theta_on: float = DEFAULT_THETA_ON,
    psi_layers=None,
    sigma_x: float = DEFAULT_SIGMA_X,
) -> GroundTruth:
    """Assemble the canonical ground truth.

    theta* equals theta_on on the template edges (zero elsewhere, including
    the diagonal); the model weights default to the benchmark values.
    """
    if theta_on <= 0.0 or theta_on > 1.0 or sigma_x <= 0.0:
        raise InvalidShape("theta_on and sigma_x must be positive")
    n = n_communities * community_size
    theta = np.zeros((n, n))
    for i, j in template_edges(n_communities, community_size):
        theta[i, j] = theta_on
    dist = EdgeDistribution(theta, mask=np.zeros((n, n), dtype=bool))
    model = PolyGnn(psi_layers if psi_layers is not None else DEFAULT_PSI)
    return GroundTruth(
        dist_star=dist,
        model_star=model,
        sigma_x=sigma_x,
        n_communities=n_communities,
        community_size=community_size,
        theta_on=theta_on,
    )


def ground_truth_from_params(params: dict) -> GroundTruth:
    return build_ground_truth(
        n_communities=int(params["n_communities"]),
        community_size=int(params["community_size"]),
        theta_on=float(params["theta_on"]),
        psi_layers=params.get("psi_layers"),
        sigma_x=float(params["sigma_x"]),
    )


def misconfigured_constraints(
    gt: GroundTruth, wrong_value: float = 0.25, community: int = 0, local_nodes=(2, 3)
):
    """Frozen-entry constraints fixing a wrong probability on part of theta.

    Every template edge touching the given local nodes of one community is
    frozen at wrong_value instead of theta_on.  Returns (frozen_mask,
    values) suitable for trainer.init_run.
    """
    n = gt.n
    targets = {community * gt.community_size + v for v in local_nodes}
    frozen = np.zeros((n, n), dtype=bool)
    for i, j in template_edges(gt.n_communities, gt.community_size):
        if i in targets or j in targets:
            frozen[i, j] = True
    values = np.where(frozen, wrong_value, 0.0)
    return frozen, values


# -- dataset ---------------------------------------------------------------------


@dataclass
class Dataset:
    """Input/output pairs with split indices and a generation manifest."""

    x: np.ndarray  # (n_pairs, N, d_in)
    y: np.ndarray  # (n_pairs, N, d_out)
    splits: dict  # name -> index array
    manifest: dict

    @property
    def n_pairs(self) -> int:
        return self.x.shape[0]

    def split(self, name: str):
        idx = self.splits[name]
        return self.x[idx], self.y[idx]


def generate(
    gt: GroundTruth,
    n_pairs: int = 35_000,
    seed: int = 0,
    split_fractions=(0.8, 0.1, 0.1),
) -> Dataset:
    """Draw (x, y) pairs from the ground truth: x Gaussian, one adjacency
    sample per pair, y = model_star(x, A).  Bit-exact for a fixed seed."""
    if n_pairs < 1:
        raise InvalidShape("n_pairs must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 100)))
    n, d_in, d_out = gt.n, gt.model_star.d_in, gt.model_star.d_out
    x = np.empty((n_pairs, n, d_in))
    y = np.empty((n_pairs, n, d_out))
    for lo in range(0, n_pairs, _GEN_CHUNK):
        hi = min(lo + _GEN_CHUNK, n_pairs)
        x[lo:hi] = rng.normal(0.0, gt.sigma_x, (hi - lo, n, d_in))
        adjs = gt.dist_star.sample_many(rng, hi - lo)
        hops = hop_matrices_batch(adjs[:, None], gt.model_star.hops)
        out, _ = forward_from_hops(gt.model_star, x[lo:hi], hops)
        y[lo:hi] = out[:, 0]
    n_train = int(round(n_pairs * split_fractions[0]))
    n_val = int(round(n_pairs * split_fractions[1]))
    splits = {
        "train": np.arange(0, n_train),
        "validation": np.arange(n_train, min(n_train + n_val, n_pairs)),
        "test": np.arange(min(n_train + n_val, n_pairs), n_pairs),
    }
    manifest = {
        "seed": seed,
        "n_pairs": n_pairs,
        "split_fractions": list(split_fractions),
        "sizes": {k: int(v.size) for k, v in splits.items()},
        **gt.params_dict(),
    }
    return Dataset(x=x, y=y, splits=splits, manifest=manifest)


def regenerate(manifest: dict) -> Dataset:
    """Rebuild a dataset bit-exactly from its manifest."""
    gt = ground_truth_from_params(manifest)
    return generate(
        gt,
        n_pairs=int(manifest["n_pairs"]),
        seed=int(manifest["seed"]),
        split_fractions=tuple(manifest["split_fractions"]),
    )


def save_dataset(ds: Dataset, out_dir) -> None:
    """Write manifest.json plus one CSV per split.

    CSV columns: pair_id, node, x0..x{d_in-1}, y0..y{d_out-1}; floats are
    printed with 17 significant digits so reloading is bit-exact.
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(ds.manifest, f, indent=2)
    n, d_in, d_out = ds.x.shape[1], ds.x.shape[2], ds.y.shape[2]
    header = (
        ["pair_id", "node"]
        + [f"x{k}" for k in range(d_in)]
        + [f"y{k}" for k in range(d_out)]
    )
    for name, idx in ds.splits.items():
        rows = np.empty((idx.size * n, 2 + d_in + d_out))
        rows[:, 0] = np.repeat(idx, n)
        rows[:, 1] = np.tile(np.arange(n), idx.size)
        rows[:, 2 : 2 + d_in] = ds.x[idx].reshape(-1, d_in)
        rows[:, 2 + d_in :] = ds.y[idx].reshape(-1, d_out)
        np.savetxt(
            os.path.join(out_dir, f"{name}.csv"),
            rows,
            delimiter=",",
            header=",".join(header),
            comments="",
            fmt=["%d", "%d"] + ["%.17g"] * (d_in + d_out),
        )


def load_dataset(data_dir) -> Dataset:
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    n = int(manifest["n_communities"]) * int(manifest["community_size"])
    d_in = len(manifest["psi_layers"][0][0])
    d_out = len(manifest["psi_layers"][0])
    n_pairs = int(manifest["n_pairs"])
    x = np.empty((n_pairs, n, d_in))
    y = np.empty((n_pairs, n, d_out))
    splits = {}
    for name in manifest["sizes"]:
        table = np.loadtxt(
            os.path.join(data_dir, f"{name}.csv"), delimiter=",", skiprows=1, ndmin=2
        )
        ids = table[::n, 0].astype(int)
        splits[name] = ids
        x[ids] = table[:, 2 : 2 + d_in].reshape(ids.size, n, d_in)
        y[ids] = table[:, 2 + d_in :].reshape(ids.size, n, d_out)
    return Dataset(x=x, y=y, splits=splits, manifest=manifest)


# -- irreducible-error oracle ------------------------------------------------------


def optimal_error_oracle(
    gt: GroundTruth,
    metric: str,
    n_mc: int = 100_000,
    n_adj: int = 256,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of the best achievable point-prediction error.

    For "mse", the per-entry variance of the output under the ground truth
    (the error of the conditional mean); for "mae", the expected absolute
    deviation from the per-entry conditional median.  Averaged over inputs
    and output entries.
    """
    if metric not in ("mae", "mse"):
        raise ValueError("metric must be 'mae' or 'mse'")
    return optimal_error_oracles(gt, n_mc=n_mc, n_adj=n_adj, seed=seed)[metric]


def optimal_error_oracles(
    gt: GroundTruth, n_mc: int = 100_000, n_adj: int = 256, seed: int = 0
) -> dict:
    """Both oracle values from one sample stream (see optimal_error_oracle)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 101)))
    n, d_in = gt.n, gt.model_star.d_in
    chunk = max(1, 4_000_000 // (n_adj * n * n))
    sse = sae = 0.0
    count = 0
    for lo in range(0, n_mc, chunk):
        c = min(chunk, n_mc - lo)
        x = rng.normal(0.0, gt.sigma_x, (c, n, d_in))
        adjs = gt.dist_star.sample_many(rng, c * n_adj).reshape(c, n_adj, n, n)
        hops = hop_matrices_batch(adjs, gt.model_star.hops)
        yhat, _ = forward_from_hops(gt.model_star, x, hops)  # (c, n_adj, N, d_out)
        sse += float(np.sum(yhat.var(axis=1, ddof=1)))
        med = np.median(yhat, axis=1, keepdims=True)
        sae += float(np.sum(np.abs(yhat - med))) / n_adj
        count += c * n * gt.model_star.d_out
    return {"mse": sse / count, "mae": sae / count}
