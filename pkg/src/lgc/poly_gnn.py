"""Polynomial hop-aggregation network over a sampled adjacency matrix.

The predictor is y = tanh(sum_l H_l x W_l^T) where H_l is the binary
reachability matrix of exactly-l-step walks of the adjacency matrix A and
W_l is a (d_out, d_in) weight matrix.  All heavy routines operate on stacks
of adjacency matrices at once; the single-sample operations are thin
wrappers over the batched ones.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


class PolyGnn:
    """Hop-aggregation predictor with one weight matrix per hop depth.

    layers: list of L arrays, each of shape (d_out, d_in).
    """

    def __init__(self, layers):
        layers = [np.array(w, dtype=np.float64) for w in layers]
        if not layers:
            raise ShapeMismatch("at least one layer is required")
        shape = layers[0].shape
        if len(shape) != 2 or any(w.shape != shape for w in layers):
            raise ShapeMismatch("all layers must share one (d_out, d_in) shape")
        self.layers = layers

    @property
    def hops(self) -> int:
        return len(self.layers)

    @property
    def d_out(self) -> int:
        return self.layers[0].shape[0]

    @property
    def d_in(self) -> int:
        return self.layers[0].shape[1]

    def copy(self) -> "PolyGnn":
        return PolyGnn([w.copy() for w in self.layers])

    def perturb(self, max_pert: float, rng: np.random.Generator) -> "PolyGnn":
        """Rescale every scalar weight by (1 + delta), delta ~ U(-max_pert, max_pert)."""
        if max_pert < 0.0:
            raise ValueError("max_pert must be non-negative")
        out = []
        for w in self.layers:
            delta = rng.uniform(-max_pert, max_pert, size=w.shape)
            out.append(w * (1.0 + delta))
        return PolyGnn(out)

    def to_json_dict(self) -> dict:
        return {
            "L": self.hops,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "layers": [w.ravel().tolist() for w in self.layers],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PolyGnn":
        shape = (int(d["d_out"]), int(d["d_in"]))
        return cls([np.asarray(w, dtype=np.float64).reshape(shape) for w in d["layers"]])


# -- hop reachability ---------------------------------------------------------


def hop_matrices(adjacency, hops: int) -> list:
    """Binary reachability matrices of exactly-l-step walks, l = 1..hops.

    Element l-1 has entry (i, j) = 1 iff (A^l)_ij > 0.  Built with boolean
    (saturating) matrix products, so no integer overflow for any depth.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    return [h[0] for h in hop_matrices_batch(a[None], hops)]


def hop_matrices_batch(adjacencies: np.ndarray, hops: int) -> list:
    """Batched :func:`hop_matrices` over a stack (..., N, N).

    The first element is the input stack itself (entries are already 0/1).
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    out = [adjacencies]
    h = adjacencies
    for _ in range(1, hops):
        h = (np.matmul(h, adjacencies) > 0.0).astype(np.float64)
        out.append(h)
    return out


# -- forward / backward --------------------------------------------------------


def forward(model: PolyGnn, x, adjacency) -> np.ndarray:
    """Evaluate the predictor for one input and one adjacency matrix."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    _check_forward_shapes(model, x, a)
    hops = hop_matrices_batch(a[None, None], model.hops)
    y, _ = forward_from_hops(model, x[None], hops)
    return y[0, 0]


def forward_from_hops(model: PolyGnn, xs: np.ndarray, hops: list):
    """Batched forward pass from precomputed hop matrices.

    xs: (B, N, d_in); hops: list of L arrays (B, S, N, N).
    Returns (y, z) with shapes (B, S, N, d_out); y = tanh(z).
    """
    z = None
    for h, w in zip(hops, model.layers):
        xw = np.matmul(xs, w.T)  # (B, N, d_out)
        term = np.matmul(h, xw[:, None])  # (B, S, N, d_out)
        z = term if z is None else z + term
    return np.tanh(z), z


def backward(model: PolyGnn, x, adjacency, dL_dy) -> list:
    """Exact loss gradients w.r.t. every layer for one input/adjacency.

    With z = sum_l H_l x W_l^T, returns for each l
    dL/dW_l = (dL_dy * (1 - tanh(z)^2))^T (H_l x).
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    g = np.asarray(dL_dy, dtype=np.float64)
    _check_forward_shapes(model, x, a)
    if g.shape != (x.shape[0], model.d_out):
        raise ShapeMismatch(f"dL_dy shape {g.shape} != {(x.shape[0], model.d_out)}")
    hops = hop_matrices_batch(a[None, None], model.hops)
    y, _ = forward_from_hops(model, x[None], hops)
    return backward_from_hops(model, x[None], hops, y, g[None, None])


def backward_from_hops(model: PolyGnn, xs, hops, y, dL_dy) -> list:
    """Batched backward pass; sums layer gradients over batch and samples.

    xs: (B, N, d_in); hops: list of (B, S, N, N); y: (B, S, N, d_out) from
    :func:`forward_from_hops`; dL_dy: (B, S, N, d_out).  Returns a list of
    (d_out, d_in) gradients.  Any batch averaging must be baked into dL_dy.
    """
    g = dL_dy * (1.0 - y * y)  # (B, S, N, d_out)
    grads = []
    for h in hops:
        hx = np.matmul(h, xs[:, None])  # (B, S, N, d_in)
        grads.append(np.einsum("bsnk,bsnj->kj", g, hx))
    return grads


def _check_forward_shapes(model: PolyGnn, x: np.ndarray, a: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeMismatch(f"x shape {x.shape} incompatible with d_in={model.d_in}")
    if a.ndim != 2 or a.shape != (x.shape[0], x.shape[0]):
        raise ShapeMismatch(f"adjacency shape {a.shape} != ({x.shape[0]},) * 2")
