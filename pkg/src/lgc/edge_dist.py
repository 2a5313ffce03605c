"""Product-Bernoulli distributions over binary adjacency matrices.

Each entry (i, j) of an N x N adjacency matrix is an independent Bernoulli
variable with success probability theta_ij.  Entries can be trainable (kept
inside [epsilon, 1 - epsilon] at all times) or frozen (held at an arbitrary
constant, including exactly 0 or 1).  The frozen mechanism covers both
structurally absent edges and deliberately misconfigured probabilities.
"""

from __future__ import annotations

import numpy as np

from .errors import ImpossibleSample, ShapeMismatch

DEFAULT_EPSILON = 1e-4


class EdgeDistribution:
    """Independent-edge Bernoulli distribution with parameter matrix theta.

    Parameters
    ----------
    theta : (N, N) array of edge probabilities.
    mask : (N, N) boolean array; True marks trainable entries.  Defaults to
        all-trainable.
    epsilon : probability clamp for trainable entries.

    Trainable entries are projected into [epsilon, 1 - epsilon] on
    construction and must be re-projected (via :meth:`project`) after every
    in-place parameter update.  Frozen entries are never touched.
    """

    def __init__(self, theta, mask=None, epsilon: float = DEFAULT_EPSILON):
        theta = np.array(theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ShapeMismatch(f"theta must be square, got {theta.shape}")
        if mask is None:
            mask = np.ones(theta.shape, dtype=bool)
        else:
            mask = np.array(mask, dtype=bool)
            if mask.shape != theta.shape:
                raise ShapeMismatch(
                    f"mask shape {mask.shape} != theta shape {theta.shape}"
                )
        if not 0.0 < epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {epsilon}")
        frozen = theta[~mask]
        if frozen.size and (np.any(frozen < 0.0) or np.any(frozen > 1.0)):
            raise ValueError("frozen entries must be probabilities in [0, 1]")
        self.theta = theta
        self.mask = mask
        self.epsilon = float(epsilon)
        self.project()

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "EdgeDistribution":
        return EdgeDistribution(self.theta.copy(), self.mask.copy(), self.epsilon)

    # -- sampling -----------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one adjacency matrix; entries are exactly 0.0 or 1.0."""
        return self.sample_many(rng, 1)[0]

    def sample_many(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` independent adjacency matrices, shape (count, N, N)."""
        u = rng.random((count,) + self.theta.shape)
        return (u < self.theta).astype(np.float64)

    # -- likelihood and gradients -------------------------------------------

    def log_likelihood(self, adjacency) -> float:
        """Log-probability of a binary adjacency matrix under this distribution.

        Sums a_ij*ln(theta_ij) + (1 - a_ij)*ln(1 - theta_ij) over every entry
        whose probability is strictly inside (0, 1); entries frozen at exactly
        0 or 1 contribute nothing when the sample agrees with them.

        Raises
        ------
        ImpossibleSample
            If the sample assigns 1 to a hard-zero edge (or 0 to a hard-one).
        """
        a = self._as_adjacency(adjacency)
        t = self.theta
        if np.any(a[t == 0.0] == 1.0) or np.any(a[t == 1.0] == 0.0):
            raise ImpossibleSample("sample lies outside the distribution support")
        inner = (t > 0.0) & (t < 1.0)
        ti, ai = t[inner], a[inner]
        return float(np.sum(ai * np.log(ti) + (1.0 - ai) * np.log1p(-ti)))

    def score_gradient(self, adjacency) -> np.ndarray:
        """Gradient of log_likelihood w.r.t. theta at the given sample.

        Entry (i, j) is a_ij/theta_ij - (1 - a_ij)/(1 - theta_ij) for
        trainable entries and 0 for frozen ones.  The epsilon clamp keeps the
        result finite.
        """
        a = self._as_adjacency(adjacency)
        return self.score_gradient_many(a[None])[0]

    def score_gradient_many(self, adjacencies: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`score_gradient` over a stack (count, N, N)."""
        t = self.theta
        # (a - t) / (t (1 - t)) equals a/t - (1-a)/(1-t) for binary a
        denom = np.where(self.mask, t * (1.0 - t), 1.0)
        return np.where(self.mask, (adjacencies - t) / denom, 0.0)

    def kl_to(self, prior: "EdgeDistribution") -> float:
        """KL divergence to another independent-edge distribution.

        Requires the prior's entries to lie strictly inside (0, 1).  Entries
        of self frozen at exactly 0 or 1 follow the 0*ln 0 = 0 convention.
        """
        if prior.theta.shape != self.theta.shape:
            raise ShapeMismatch(
                f"prior shape {prior.theta.shape} != {self.theta.shape}"
            )
        p = prior.theta
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("prior entries must lie strictly inside (0, 1)")
        t = self.theta
        on = np.where(t > 0.0, t * (np.log(np.where(t > 0.0, t, 1.0)) - np.log(p)), 0.0)
        off = np.where(
            t < 1.0,
            (1.0 - t) * (np.log1p(-np.where(t < 1.0, t, 0.0)) - np.log1p(-p)),
            0.0,
        )
        return float(np.sum(on + off))

    # -- parameter maintenance ----------------------------------------------

    def project(self) -> "EdgeDistribution":
        """Clamp trainable entries into [epsilon, 1 - epsilon], in place."""
        np.clip(
            self.theta,
            self.epsilon,
            1.0 - self.epsilon,
            out=self.theta,
            where=self.mask,
        )
        return self

    # -- serialization --------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "theta": self.theta.ravel().tolist(),
            "mask": self.mask.ravel().tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EdgeDistribution":
        n = int(d["n"])
        theta = np.asarray(d["theta"], dtype=np.float64).reshape(n, n)
        mask = np.asarray(d["mask"], dtype=bool).reshape(n, n)
        return cls(theta, mask, float(d["epsilon"]))

    def _as_adjacency(self, adjacency) -> np.ndarray:
        a = np.asarray(adjacency, dtype=np.float64)
        if a.shape != self.theta.shape:
            raise ShapeMismatch(f"adjacency shape {a.shape} != {self.theta.shape}")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("adjacency entries must be exactly 0 or 1")
        return a
