"""Mini-batch training objectives over a latent edge distribution.

Every estimator returns a scalar loss plus gradients for both parameter
groups: theta (edge probabilities) via score-function estimators, psi
(predictor weights) via exact pathwise differentiation of the computed
value holding the sampled adjacencies fixed.

theta-gradient estimators are exactly unbiased for their population
targets:

* scalar baselines (lit1, elbo) and the point-prediction mean use
  leave-one-out means, which decouple the baseline/functional from the
  score factor without extra sampling;
* the distributional-loss baselines beta1/beta2 are plain batch means of
  the already-computed kernel values, folded in after the batch pass via
  grad += (beta2 - beta1) * (2/S) * sum(scores), which is algebraically
  identical to subtracting them inside the pairwise/cross sums.

Batches are processed in memory-bounded chunks of data pairs; chunking
never changes the result, only peak memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .edge_dist import EdgeDistribution
from .errors import ConfigMismatch
from .kernels import KernelSpec
from .poly_gnn import PolyGnn, backward_from_hops, forward_from_hops, hop_matrices_batch

DIST_MMD = "dist_mmd"
DIST_CRPS = "dist_crps"
POINT_MSE = "point_mse"
LIT1 = "lit1"
LIT2 = "lit2"
ELBO = "elbo"

ALL_KINDS = (DIST_MMD, DIST_CRPS, POINT_MSE, LIT1, LIT2, ELBO)

# target element count of one (chunk, n_adj, N, N) adjacency stack
_CHUNK_ELEMS = 4_000_000


@dataclass
class LossConfig:
    """Configuration shared by all loss estimators.

    kind: one of ALL_KINDS.
    inner_metric: per-entry error ("mae" or "mse") for lit1/lit2.
    n_adj: adjacency samples per data pair (>= 2 for the distributional and
        point losses, whose estimators need at least a pair of samples).
    control_variates: subtract baselines inside the score-function terms.
    kernel: kernel for the distributional losses (the energy kernel is
        forced for dist_crps).
    elbo_sigma: output standard deviation of the Gaussian likelihood.
    elbo_prior: prior edge distribution for the KL term.
    baseline_momentum: moving-average factor for lit2's per-node baselines.
    """

    kind: str
    inner_metric: str = "mae"
    n_adj: int = 16
    control_variates: bool = True
    kernel: KernelSpec = field(default_factory=KernelSpec)
    elbo_sigma: float = 0.1
    elbo_prior: EdgeDistribution | None = None
    baseline_momentum: float = 0.99

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ConfigMismatch(f"unknown loss kind {self.kind!r}")
        min_adj = 2 if self.kind in (DIST_MMD, DIST_CRPS, POINT_MSE) else 1
        if self.n_adj < min_adj:
            raise ConfigMismatch(f"{self.kind} requires n_adj >= {min_adj}")
        if self.inner_metric not in ("mae", "mse"):
            raise ConfigMismatch(f"inner_metric must be mae or mse")
        if self.elbo_sigma <= 0.0:
            raise ConfigMismatch("elbo_sigma must be positive")
        if not 0.0 <= self.baseline_momentum < 1.0:
            raise ConfigMismatch("baseline_momentum must lie in [0, 1)")


@dataclass
class LossEstimate:
    """One mini-batch estimate: loss value plus parameter gradients.

    grad_theta is an (N, N) matrix with zeros at frozen entries; grad_psi is
    a list matching the model layers.  Either is None when the caller asked
    to skip it.  aux carries diagnostic scalars (baselines etc.).
    """

    value: float
    grad_theta: np.ndarray | None
    grad_psi: list | None
    aux: dict


def _require_kind(cfg: LossConfig, kind: str) -> None:
    if cfg.kind != kind:
        raise ConfigMismatch(f"config kind {cfg.kind!r}, expected {kind!r}")


def _chunks(n_pairs: int, n_adj: int, n_nodes: int):
    per_pair = n_adj * n_nodes * n_nodes
    size = max(1, min(n_pairs, _CHUNK_ELEMS // max(per_pair, 1)))
    for lo in range(0, n_pairs, size):
        yield lo, min(lo + size, n_pairs)


def _sampled_outputs(dist, model, xs_chunk, n_adj, rng):
    b = xs_chunk.shape[0]
    n = dist.n
    adjs = dist.sample_many(rng, b * n_adj).reshape(b, n_adj, n, n)
    hops = hop_matrices_batch(adjs, model.hops)
    y, _ = forward_from_hops(model, xs_chunk, hops)
    return adjs, hops, y


def _check_batch(dist, model, xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = dist.n
    if xs.ndim != 3 or xs.shape[1] != n or xs.shape[2] != model.d_in:
        raise ConfigMismatch(f"xs shape {xs.shape} incompatible with batch layout")
    if ys.shape != (xs.shape[0], n, model.d_out):
        raise ConfigMismatch(f"ys shape {ys.shape} incompatible with batch layout")
    return xs, ys


# -- distributional losses -----------------------------------------------------


def mmd2_batch(
    dist, model, xs, ys, cfg, rng, with_grads=True, with_grad_psi=True
) -> LossEstimate:
    """Sampled squared-MMD loss (constant target-target term omitted).

    Per pair, with n_adj sampled outputs yhat_i and kernel k:
    value = 2 sum_{j<i} k(yhat_i, yhat_j) / (S(S-1)) - 2 sum_i k(y*, yhat_i) / S,
    averaged over the batch.  theta-gradient weights the summed score
    gradients of each sample pair by (k - beta1) and the cross terms by
    (k - beta2); beta1/beta2 are the batch means of the same kernel values.
    """
    _require_kind(cfg, DIST_MMD)
    return _mmd_core(
        dist, model, xs, ys, cfg, rng, cfg.kernel, with_grads, with_grad_psi
    )


def crps_batch(
    dist, model, xs, ys, cfg, rng, with_grads=True, with_grad_psi=True
) -> LossEstimate:
    """Energy-distance loss: the MMD estimator with the energy kernel."""
    _require_kind(cfg, DIST_CRPS)
    spec = KernelSpec(kind=kernels.ENERGY)
    return _mmd_core(dist, model, xs, ys, cfg, rng, spec, with_grads, with_grad_psi)


def _mmd_core(dist, model, xs, ys, cfg, rng, spec, with_grads, with_grad_psi=True):
    xs, ys = _check_batch(dist, model, xs, ys)
    n_pairs, n, s = xs.shape[0], dist.n, cfg.n_adj
    d_flat = n * model.d_out
    ystar = ys.reshape(n_pairs, d_flat)
    idx = np.arange(s)

    value_sum = 0.0
    pair_k_sum = 0.0
    cross_k_sum = 0.0
    base_grad = np.zeros((n, n)) if with_grads else None
    score_sum = np.zeros((n, n)) if with_grads else None
    psi_grads = (
        [np.zeros_like(w) for w in model.layers]
        if with_grads and with_grad_psi
        else None
    )

    for lo, hi in _chunks(n_pairs, s, n):
        adjs, hops, yhat = _sampled_outputs(dist, model, xs[lo:hi], s, rng)
        yflat = yhat.reshape(hi - lo, s, d_flat)
        sq_pair = kernels.pairwise_sq_dists(yflat)
        k_pair = kernels.values_from_sq(spec, sq_pair)
        k_pair[:, idx, idx] = 0.0
        sq_cross = kernels.cross_sq_dists(ystar[lo:hi], yflat)
        k_cross = kernels.values_from_sq(spec, sq_cross)

        row_k = k_pair.sum(axis=2)  # sum_{j != i} k_ij per sample
        value_sum += row_k.sum() / (s * (s - 1)) - 2.0 * k_cross.sum() / s
        pair_k_sum += row_k.sum()
        cross_k_sum += k_cross.sum()

        if not with_grads:
            continue

        scores = dist.score_gradient_many(adjs.reshape(-1, n, n)).reshape(
            hi - lo, s, n, n
        )
        coeff = 2.0 * row_k / (s * (s - 1)) - 2.0 * k_cross / s
        base_grad += np.einsum("bs,bsnm->nm", coeff, scores)
        score_sum += scores.sum(axis=(0, 1))

        if psi_grads is None:
            continue
        g_pair = kernels.grad_factors_from_sq(spec, sq_pair)
        g_pair[:, idx, idx] = 0.0
        g_cross = kernels.grad_factors_from_sq(spec, sq_cross)
        d_yhat = (2.0 / (s * (s - 1))) * (
            g_pair.sum(axis=2)[..., None] * yflat - np.matmul(g_pair, yflat)
        )
        d_yhat -= (2.0 / s) * g_cross[..., None] * (yflat - ystar[lo:hi, None, :])
        d_yhat /= n_pairs
        for acc, g in zip(
            psi_grads,
            backward_from_hops(
                model, xs[lo:hi], hops, yhat, d_yhat.reshape(yhat.shape)
            ),
        ):
            acc += g

    beta1 = pair_k_sum / (n_pairs * s * (s - 1))
    beta2 = cross_k_sum / (n_pairs * s)
    grad_theta = None
    if with_grads:
        grad_theta = base_grad / n_pairs
        if cfg.control_variates:
            grad_theta = grad_theta + (beta2 - beta1) * (2.0 / s) * score_sum / n_pairs
    return LossEstimate(
        value=value_sum / n_pairs,
        grad_theta=grad_theta,
        grad_psi=psi_grads,
        aux={"beta1": float(beta1), "beta2": float(beta2)},
    )


def mmd2_three_term(spec: KernelSpec, yhat_samples, ystar_samples) -> float:
    """Unbiased full squared-MMD estimate including the target-target term.

    Needs several target draws per input; used for diagnostics and tests,
    never for training.
    """
    yh = np.asarray(yhat_samples, dtype=np.float64)[None]
    yt = np.asarray(ystar_samples, dtype=np.float64)[None]

    def offdiag_mean(y):
        m = y.shape[1]
        k = kernels.values_from_sq(spec, kernels.pairwise_sq_dists(y))[0]
        return (k.sum() - np.trace(k)) / (m * (m - 1))

    sq = (
        np.sum(yh[0] ** 2, axis=1)[None, :]
        + np.sum(yt[0] ** 2, axis=1)[:, None]
        - 2.0 * yt[0] @ yh[0].T
    )
    cross = kernels.values_from_sq(spec, np.maximum(sq, 0.0)).mean()
    return float(offdiag_mean(yh) + offdiag_mean(yt) - 2.0 * cross)


# -- point-prediction loss ------------------------------------------------------


def point_mse_batch(
    dist, model, xs, ys, cfg, rng, with_grads=True, with_grad_psi=True
) -> LossEstimate:
    """Squared error of the Monte-Carlo mean prediction.

    value = mean over the batch of ||ybar - y*||^2 / (N d_out) with
    ybar = mean_i yhat_i.  The theta-gradient estimates
    2 (E[yhat] - y*) . E[yhat * score] with a leave-one-out mean replacing
    E[yhat] so that the two factors stay independent.
    """
    _require_kind(cfg, POINT_MSE)
    xs, ys = _check_batch(dist, model, xs, ys)
    n_pairs, n, s = xs.shape[0], dist.n, cfg.n_adj
    d_flat = n * model.d_out
    ystar = ys.reshape(n_pairs, d_flat)

    value_sum = 0.0
    grad_theta = np.zeros((n, n)) if with_grads else None
    psi_grads = (
        [np.zeros_like(w) for w in model.layers]
        if with_grads and with_grad_psi
        else None
    )

    for lo, hi in _chunks(n_pairs, s, n):
        adjs, hops, yhat = _sampled_outputs(dist, model, xs[lo:hi], s, rng)
        yflat = yhat.reshape(hi - lo, s, d_flat)
        ybar = yflat.mean(axis=1)
        resid = ybar - ystar[lo:hi]
        value_sum += np.sum(resid * resid) / d_flat

        if not with_grads:
            continue

        scores = dist.score_gradient_many(adjs.reshape(-1, n, n)).reshape(
            hi - lo, s, n, n
        )
        loo = (s * ybar[:, None, :] - yflat) / (s - 1) - ystar[lo:hi, None, :]
        coeff = 2.0 * np.einsum("bsd,bsd->bs", loo, yflat) / (d_flat * s)
        grad_theta += np.einsum("bs,bsnm->nm", coeff, scores)

        if psi_grads is None:
            continue
        d_yhat = np.broadcast_to(
            2.0 * resid[:, None, :] / (d_flat * s * n_pairs), yflat.shape
        )
        for acc, g in zip(
            psi_grads,
            backward_from_hops(
                model, xs[lo:hi], hops, yhat, d_yhat.reshape(yhat.shape)
            ),
        ):
            acc += g

    if with_grads:
        grad_theta /= n_pairs
    return LossEstimate(
        value=value_sum / n_pairs, grad_theta=grad_theta, grad_psi=psi_grads, aux={}
    )


# -- expectation-of-error losses -------------------------------------------------


def _entry_errors(yflat, ystar, metric):
    r = yflat - ystar[:, None, :]
    return np.abs(r) if metric == "mae" else r * r


def _entry_error_grad(yflat, ystar, metric):
    r = yflat - ystar[:, None, :]
    return np.sign(r) if metric == "mae" else 2.0 * r


def lit1_batch(
    dist, model, xs, ys, cfg, rng, with_grads=True, with_grad_psi=True
) -> LossEstimate:
    """Expected per-sample prediction error, expectation outside the metric.

    value = mean over pairs and adjacency samples of the entry-averaged MAE
    or MSE.  theta-gradient: (loss - b) * score with b the leave-one-out
    batch mean of the per-sample losses (0 when control variates are off).
    """
    _require_kind(cfg, LIT1)
    return _expected_error_core(
        dist, model, xs, ys, cfg, rng, with_grads, with_grad_psi
    )


def lit2_batch(
    dist,
    model,
    xs,
    ys,
    cfg,
    rng,
    with_grads=True,
    with_grad_psi=True,
    node_baselines=None,
) -> LossEstimate:
    """Node-factored variant of :func:`lit1_batch`.

    The value is identical; the theta-gradient treats each node separately:
    the node-n residual (minus its moving-average baseline) multiplies the
    score gradient of row n of the adjacency only.  ``node_baselines`` is an
    (N,) array updated in place with ``cfg.baseline_momentum`` after the
    gradient is formed from the pre-update values.
    """
    _require_kind(cfg, LIT2)
    xs, ys = _check_batch(dist, model, xs, ys)
    n_pairs, n, s = xs.shape[0], dist.n, cfg.n_adj
    d_flat = n * model.d_out
    ystar = ys.reshape(n_pairs, d_flat)
    if node_baselines is None:
        node_baselines = np.zeros(n)
    b_pre = node_baselines.copy()

    value_sum = 0.0
    node_mean_sum = np.zeros(n)
    grad_theta = np.zeros((n, n)) if with_grads else None
    psi_grads = (
        [np.zeros_like(w) for w in model.layers]
        if with_grads and with_grad_psi
        else None
    )

    for lo, hi in _chunks(n_pairs, s, n):
        adjs, hops, yhat = _sampled_outputs(dist, model, xs[lo:hi], s, rng)
        yflat = yhat.reshape(hi - lo, s, d_flat)
        errs = _entry_errors(yflat, ystar[lo:hi], cfg.inner_metric)
        node_errs = errs.reshape(hi - lo, s, n, model.d_out).mean(axis=3)
        value_sum += node_errs.mean(axis=2).sum()
        node_mean_sum += node_errs.sum(axis=(0, 1))

        if not with_grads:
            continue

        scores = dist.score_gradient_many(adjs.reshape(-1, n, n)).reshape(
            hi - lo, s, n, n
        )
        centered = node_errs - b_pre if cfg.control_variates else node_errs
        grad_theta += np.einsum("bsn,bsnm->nm", centered, scores)

        if psi_grads is None:
            continue
        d_yhat = _entry_error_grad(yflat, ystar[lo:hi], cfg.inner_metric)
        d_yhat = d_yhat / (d_flat * s * n_pairs)
        for acc, g in zip(
            psi_grads,
            backward_from_hops(
                model, xs[lo:hi], hops, yhat, d_yhat.reshape(yhat.shape)
            ),
        ):
            acc += g

    if with_grads:
        grad_theta /= n * s * n_pairs
    batch_node_mean = node_mean_sum / (n_pairs * s)
    m = cfg.baseline_momentum
    node_baselines *= m
    node_baselines += (1.0 - m) * batch_node_mean
    return LossEstimate(
        value=value_sum / (n_pairs * s),
        grad_theta=grad_theta,
        grad_psi=psi_grads,
        aux={"node_baseline_mean": float(b_pre.mean())},
    )


def elbo_batch(
    dist, model, xs, ys, cfg, rng, with_grads=True, with_grad_psi=True
) -> LossEstimate:
    """Negative evidence lower bound with a Gaussian output likelihood.

    value = mean over pairs and samples of the negative log-likelihood of y*
    under N(yhat, elbo_sigma^2 I), plus KL(dist || prior).  theta-gradient:
    score-function term on the NLL (scalar leave-one-out baseline) plus the
    exact KL gradient logit(theta) - logit(prior) on trainable entries.
    """
    _require_kind(cfg, ELBO)
    if cfg.elbo_prior is None:
        raise ConfigMismatch("elbo requires elbo_prior")
    xs, ys = _check_batch(dist, model, xs, ys)
    n = dist.n
    d_flat = n * model.d_out
    sig2 = cfg.elbo_sigma**2
    const = 0.5 * d_flat * np.log(2.0 * np.pi * sig2)

    def per_sample_loss(yflat, ystar_chunk):
        r = yflat - ystar_chunk[:, None, :]
        return const + np.sum(r * r, axis=2) / (2.0 * sig2)

    def per_entry_grad(yflat, ystar_chunk):
        return (yflat - ystar_chunk[:, None, :]) / sig2

    est = _sfe_scalar_core(
        dist,
        model,
        xs,
        ys,
        cfg,
        rng,
        with_grads,
        with_grad_psi,
        per_sample_loss,
        per_entry_grad,
    )
    kl = dist.kl_to(cfg.elbo_prior)
    est.aux["nll"] = est.value
    est.aux["kl"] = kl
    est.value += kl
    if with_grads:
        p = cfg.elbo_prior.theta
        t = np.where(dist.mask, dist.theta, 0.5)
        kl_grad = np.where(
            dist.mask, np.log(t) - np.log1p(-t) - np.log(p) + np.log1p(-p), 0.0
        )
        est.grad_theta = est.grad_theta + kl_grad
    return est


def _expected_error_core(dist, model, xs, ys, cfg, rng, with_grads, with_grad_psi):
    def per_sample_loss(yflat, ystar_chunk):
        return _entry_errors(yflat, ystar_chunk, cfg.inner_metric).mean(axis=2)

    def per_entry_grad(yflat, ystar_chunk):
        d = yflat.shape[-1]
        return _entry_error_grad(yflat, ystar_chunk, cfg.inner_metric) / d

    return _sfe_scalar_core(
        dist,
        model,
        xs,
        ys,
        cfg,
        rng,
        with_grads,
        with_grad_psi,
        per_sample_loss,
        per_entry_grad,
    )


def _sfe_scalar_core(
    dist, model, xs, ys, cfg, rng, with_grads, with_grad_psi, per_sample_loss, per_entry_grad
):
    """Shared machinery for losses of the form E_A[l(yhat(A), y*)].

    per_sample_loss maps (yflat (b,S,D), ystar (b,D)) -> (b,S) scalars;
    per_entry_grad gives dl/dyhat entries.  The score-function gradient uses
    a leave-one-out scalar baseline over all (pair, sample) losses when
    control variates are enabled, which keeps the estimator exactly
    unbiased.
    """
    xs, ys = _check_batch(dist, model, xs, ys)
    n_pairs, n, s = xs.shape[0], dist.n, cfg.n_adj
    d_flat = n * model.d_out
    ystar = ys.reshape(n_pairs, d_flat)

    loss_sum = 0.0
    loss_score_sum = np.zeros((n, n)) if with_grads else None
    score_sum = np.zeros((n, n)) if with_grads else None
    psi_grads = (
        [np.zeros_like(w) for w in model.layers]
        if with_grads and with_grad_psi
        else None
    )

    for lo, hi in _chunks(n_pairs, s, n):
        adjs, hops, yhat = _sampled_outputs(dist, model, xs[lo:hi], s, rng)
        yflat = yhat.reshape(hi - lo, s, d_flat)
        losses = per_sample_loss(yflat, ystar[lo:hi])
        loss_sum += losses.sum()

        if not with_grads:
            continue

        scores = dist.score_gradient_many(adjs.reshape(-1, n, n)).reshape(
            hi - lo, s, n, n
        )
        loss_score_sum += np.einsum("bs,bsnm->nm", losses, scores)
        score_sum += scores.sum(axis=(0, 1))

        if psi_grads is None:
            continue
        d_yhat = per_entry_grad(yflat, ystar[lo:hi]) / (s * n_pairs)
        for acc, g in zip(
            psi_grads,
            backward_from_hops(
                model, xs[lo:hi], hops, yhat, d_yhat.reshape(yhat.shape)
            ),
        ):
            acc += g

    m_total = n_pairs * s
    mean_loss = loss_sum / m_total
    grad_theta = None
    if with_grads:
        if cfg.control_variates and m_total > 1:
            # sum_i (l_i - b_loo_i) s_i with b_loo_i = (T - l_i) / (M - 1)
            grad_theta = (
                m_total / (m_total - 1) * loss_score_sum
                - loss_sum / (m_total - 1) * score_sum
            ) / m_total
        else:
            grad_theta = loss_score_sum / m_total
    return LossEstimate(
        value=mean_loss,
        grad_theta=grad_theta,
        grad_psi=psi_grads,
        aux={"baseline": mean_loss},
    )


# -- dispatch and diagnostics ----------------------------------------------------

_OPS = {
    DIST_MMD: mmd2_batch,
    DIST_CRPS: crps_batch,
    POINT_MSE: point_mse_batch,
    LIT1: lit1_batch,
    LIT2: lit2_batch,
    ELBO: elbo_batch,
}


def loss_fn_for(kind: str):
    try:
        return _OPS[kind]
    except KeyError:
        raise ConfigMismatch(f"unknown loss kind {kind!r}") from None


def estimate(
    dist,
    model,
    xs,
    ys,
    cfg,
    rng,
    with_grads=True,
    with_grad_psi=True,
    node_baselines=None,
) -> LossEstimate:
    """Evaluate the estimator selected by cfg.kind."""
    if cfg.kind == LIT2:
        return lit2_batch(
            dist,
            model,
            xs,
            ys,
            cfg,
            rng,
            with_grads,
            with_grad_psi,
            node_baselines=node_baselines,
        )
    return loss_fn_for(cfg.kind)(dist, model, xs, ys, cfg, rng, with_grads, with_grad_psi)


def estimator_variance_profile(loss_fn, dist, model, xs, ys, cfg, resamples, rng):
    """Elementwise variance of grad_theta under repeated fresh adjacency draws.

    Recomputes the gradient ``resamples`` times on the fixed batch and
    returns (per-entry variance matrix, mean variance over trainable
    entries).
    """
    if resamples < 2:
        raise ValueError("resamples must be >= 2")
    grads = np.empty((resamples,) + dist.theta.shape)
    for r in range(resamples):
        grads[r] = loss_fn(dist, model, xs, ys, cfg, rng).grad_theta
    var = grads.var(axis=0, ddof=1)
    mean_var = float(var[dist.mask].mean()) if dist.mask.any() else 0.0
    return var, mean_var
