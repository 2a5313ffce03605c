"""Evaluation metrics: calibration of theta and point-prediction quality."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .poly_gnn import forward_from_hops, hop_matrices_batch

_CHUNK_ELEMS = 4_000_000


def calibration_metrics(theta_learned, theta_star) -> dict:
    """Mean and maximum absolute error between two edge-probability matrices.

    mae averages |theta* - theta| over all N^2 entries.
    """
    a = np.asarray(theta_learned, dtype=np.float64)
    b = np.asarray(theta_star, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} != {b.shape}")
    d = np.abs(a - b)
    return {"mae": float(d.mean()), "max_ae": float(d.max())}


def point_metrics(dist, model, xs, ys, n_eval_adj: int, rng) -> dict:
    """Monte-Carlo point-prediction errors of (dist, model) on a data split.

    Per pair, n_eval_adj adjacency samples produce output draws; the
    per-entry mean is the prediction scored by MSE, the per-entry median the
    prediction scored by MAE.  mae_y_mean additionally scores the mean
    prediction with MAE (both functionals are reported because either
    convention appears in practice).
    """
    if n_eval_adj < 2:
        raise ValueError("n_eval_adj must be >= 2")
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n_pairs, n = xs.shape[0], dist.n
    sse = sae_med = sae_mean = 0.0
    count = 0
    chunk = max(1, min(n_pairs, _CHUNK_ELEMS // (n_eval_adj * n * n)))
    for lo in range(0, n_pairs, chunk):
        hi = min(lo + chunk, n_pairs)
        adjs = dist.sample_many(rng, (hi - lo) * n_eval_adj).reshape(
            hi - lo, n_eval_adj, n, n
        )
        hops = hop_matrices_batch(adjs, model.hops)
        yhat, _ = forward_from_hops(model, xs[lo:hi], hops)
        mean_pred = yhat.mean(axis=1)
        med_pred = np.median(yhat, axis=1)
        resid_mean = mean_pred - ys[lo:hi]
        sse += float(np.sum(resid_mean**2))
        sae_mean += float(np.sum(np.abs(resid_mean)))
        sae_med += float(np.sum(np.abs(med_pred - ys[lo:hi])))
        count += resid_mean.size
    return {
        "mse_y": sse / count,
        "mae_y": sae_med / count,
        "mae_y_mean": sae_mean / count,
    }
