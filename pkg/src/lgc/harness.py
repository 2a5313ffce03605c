"""Experiment orchestration: recipes, multi-seed aggregation, exact oracles.

An experiment is a set of arms (loss plus training configuration plus a
model source) crossed with a seed list.  Runs execute in parallel worker
processes (capped by the LGC_THREADS environment variable), each writing
its own output subdirectory; aggregation computes per-arm mean +/- std and
Welch's t-test p-values against the best arm per metric.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import datagen, losses, trainer
from .edge_dist import EdgeDistribution
from .errors import ConfigError, InsufficientSamples, TooManyEdges
from .kernels import KernelSpec
from .losses import LossConfig
from .metrics import calibration_metrics, point_metrics  # re-exported
from .poly_gnn import forward_from_hops, hop_matrices_batch
from .trainer import RunRecord, TrainConfig

__all__ = [
    "ArmSpec",
    "ExperimentSpec",
    "ComparisonReport",
    "run_experiment",
    "report_from_records",
    "calibration_metrics",
    "point_metrics",
    "enumeration_oracle",
    "welch_t_test",
    "build_loss_config",
    "epochs_to_threshold",
]

REPORT_METRICS = ("theta_mae", "test_mae_y", "test_mse_y")


# -- Welch's t-test ----------------------------------------------------------------


def welch_t_test(sample_a, sample_b) -> float:
    """Two-sided Welch unequal-variance t-test p-value.

    Uses the Welch-Satterthwaite degrees of freedom and evaluates the
    Student-t tail through the regularized incomplete beta function.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientSamples("both samples need size >= 2")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / a.size, vb / b.size
    if sa + sb == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (
        sa**2 / (a.size - 1) + sb**2 / (b.size - 1)
    )
    x = df / (df + t * t)
    return _betainc_reg(df / 2.0, 0.5, x)


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) via Lentz's continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-15):
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


# -- exact enumeration oracle --------------------------------------------------------


def enumeration_oracle(dist, model, x, ystar, cfg: LossConfig):
    """Exact population loss and theta-gradient for one data pair.

    Enumerates every adjacency outcome with nonzero probability variation
    (entries strictly inside (0, 1); at most 12 of them) and sums the
    loss-specific expressions weighted by exact likelihoods.  For every kind
    except lit2 the gradient equals the analytic derivative of the exact
    value; for lit2 it is the exact expectation of lit2's node-factored
    gradient estimator, which is the quantity that estimator targets.
    """
    x = np.asarray(x, dtype=np.float64)
    ystar = np.asarray(ystar, dtype=np.float64)
    theta = dist.theta
    n = dist.n
    free = np.argwhere((theta > 0.0) & (theta < 1.0))
    k = len(free)
    if k > 12:
        raise TooManyEdges(f"{k} stochastic edges exceed the enumeration bound of 12")
    m = 1 << k
    combos = ((np.arange(m)[:, None] >> np.arange(k)) & 1).astype(np.float64)
    adjs = np.broadcast_to((theta == 1.0).astype(np.float64), (m, n, n)).copy()
    adjs[:, free[:, 0], free[:, 1]] = combos
    p_edge = theta[free[:, 0], free[:, 1]]
    probs = np.prod(np.where(combos > 0, p_edge, 1.0 - p_edge), axis=1)

    hops = hop_matrices_batch(adjs[None], model.hops)
    yhat, _ = forward_from_hops(model, x[None], hops)  # (1, m, N, d_out)
    yflat = yhat[0].reshape(m, -1)
    ysflat = ystar.ravel()
    d_flat = ysflat.size
    scores = dist.score_gradient_many(adjs)

    kind = cfg.kind
    if kind in (losses.DIST_MMD, losses.DIST_CRPS):
        spec = cfg.kernel if kind == losses.DIST_MMD else KernelSpec(kind="energy")
        from . import kernels as _k

        sq = _k.pairwise_sq_dists(yflat[None])[0]
        kp = _k.values_from_sq(spec, sq)
        kc = _k.values_from_sq(
            spec, np.sum((yflat - ysflat) ** 2, axis=1)
        )
        value = probs @ kp @ probs - 2.0 * probs @ kc
        w = 2.0 * (kp @ probs) - 2.0 * kc
        grad = np.einsum("m,m,mij->ij", probs, w, scores)
        return float(value), grad
    if kind == losses.POINT_MSE:
        mu = probs @ yflat
        resid = mu - ysflat
        value = float(resid @ resid / d_flat)
        w = 2.0 * (yflat @ resid) / d_flat
        grad = np.einsum("m,m,mij->ij", probs, w, scores)
        return value, grad
    if kind in (losses.LIT1, losses.LIT2):
        errs = np.abs(yflat - ysflat) if cfg.inner_metric == "mae" else (
            yflat - ysflat
        ) ** 2
        if kind == losses.LIT1:
            ell = errs.mean(axis=1)
            value = float(probs @ ell)
            grad = np.einsum("m,m,mij->ij", probs, ell, scores)
            return value, grad
        node_ell = errs.reshape(m, n, model.d_out).mean(axis=2)
        value = float(probs @ node_ell.mean(axis=1))
        grad = np.einsum("m,mi,mij->ij", probs, node_ell, scores) / n
        return value, grad
    if kind == losses.ELBO:
        if cfg.elbo_prior is None:
            raise ConfigError("elbo oracle requires elbo_prior")
        sig2 = cfg.elbo_sigma**2
        nll = 0.5 * d_flat * np.log(2.0 * np.pi * sig2) + np.sum(
            (yflat - ysflat) ** 2, axis=1
        ) / (2.0 * sig2)
        value = float(probs @ nll) + dist.kl_to(cfg.elbo_prior)
        pt = np.where(dist.mask, theta, 0.5)
        pp = cfg.elbo_prior.theta
        kl_grad = np.where(
            dist.mask,
            np.log(pt) - np.log1p(-pt) - np.log(pp) + np.log1p(-pp),
            0.0,
        )
        grad = np.einsum("m,m,mij->ij", probs, nll, scores) + kl_grad
        return value, grad
    raise ConfigError(f"unsupported oracle kind {kind!r}")


# -- experiment specification ----------------------------------------------------------


@dataclass
class ArmSpec:
    """One training condition of an experiment.

    model_source: "joint" (psi trained from scratch), "true_psi" (frozen at
    the generating weights), or "perturbed" (frozen at a rescaled copy with
    max relative perturbation max_pert).  misconfigured freezes part of
    theta at a wrong constant.
    """

    name: str
    loss: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    model_source: str = "joint"
    max_pert: float = 0.0
    misconfigured: bool = False

    def __post_init__(self):
        if self.model_source not in ("joint", "true_psi", "perturbed"):
            raise ConfigError(f"unknown model_source {self.model_source!r}")


@dataclass
class ExperimentSpec:
    name: str
    arms: list
    seeds: list
    base_loss: dict = field(default_factory=dict)
    base_train: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.arms:
            raise ConfigError("experiment needs at least one arm")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")


@dataclass
class ComparisonReport:
    """Per-arm aggregate statistics and Welch p-values against the best arm."""

    arms: dict  # arm -> metric -> {"mean": float, "std": float}
    pvalues: dict  # metric -> arm -> p-value vs best arm
    best: dict  # metric -> best arm name
    records: list  # long-format rows (arm, seed, metric, value)

    def to_json_dict(self) -> dict:
        return {
            "arms": self.arms,
            "pvalues": self.pvalues,
            "best": self.best,
        }


def build_loss_config(settings: dict, gt: datagen.GroundTruth) -> LossConfig:
    """Resolve a raw loss-config mapping into a LossConfig.

    kernel.* keys build the KernelSpec; elbo_prior accepts "all-<p>" for a
    uniform Bernoulli prior or "pattern" for theta_on/0.05 on/off the
    ground-truth template.
    """
    d = dict(settings)
    kern = d.pop("kernel", {})
    if kern:
        d["kernel"] = KernelSpec(**kern)
    prior = d.pop("elbo_prior", None)
    if prior is not None:
        d["elbo_prior"] = _resolve_prior(prior, gt)
    return LossConfig(**d)


def _resolve_prior(spec, gt: datagen.GroundTruth) -> EdgeDistribution:
    if isinstance(spec, EdgeDistribution):
        return spec
    n = gt.n
    if spec == "pattern":
        theta = np.where(gt.dist_star.theta > 0.0, gt.theta_on, 0.05)
    elif isinstance(spec, str) and spec.startswith("all-"):
        theta = np.full((n, n), float(spec[4:]))
    else:
        theta = np.full((n, n), float(spec))
    return EdgeDistribution(theta, mask=np.zeros((n, n), dtype=bool))


# -- run execution ---------------------------------------------------------------------


def _max_workers(n_runs: int) -> int:
    cap = os.environ.get("LGC_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(cap, n_runs))


def _single_run(gt, dataset, spec, arm: ArmSpec, seed: int, out_dir):
    train_kwargs = {**spec.base_train, **arm.train, "seed": seed}
    if arm.model_source != "joint":
        train_kwargs["freeze_psi"] = True
    cfg = trainer.train_config_from_dict(train_kwargs)
    loss_cfg = build_loss_config({**spec.base_loss, **arm.loss}, gt)

    model = None
    if arm.model_source == "true_psi":
        model = gt.model_star
    elif arm.model_source == "perturbed":
        rng = np.random.default_rng(np.random.SeedSequence((seed, 900)))
        model = gt.model_star.perturb(arm.max_pert, rng)
    constraints = (
        datagen.misconfigured_constraints(gt) if arm.misconfigured else None
    )
    state = trainer.init_run(
        cfg,
        loss_cfg,
        gt.n,
        hops=gt.model_star.hops,
        d_in=gt.model_star.d_in,
        d_out=gt.model_star.d_out,
        model=model,
        theta_constraints=constraints,
    )
    run_dir = None
    if out_dir is not None:
        run_dir = os.path.join(out_dir, "runs", arm.name, f"seed_{seed}")
    record = trainer.train(
        state, dataset, theta_star=gt.dist_star.theta, out_dir=run_dir
    )
    return record


_WORKER_CTX = {}


def _worker_init(gt, dataset, spec, out_dir):
    _WORKER_CTX["args"] = (gt, dataset, spec, out_dir)


def _worker_run(job):
    arm_idx, seed = job
    gt, dataset, spec, out_dir = _WORKER_CTX["args"]
    arm = spec.arms[arm_idx]
    try:
        record = _single_run(gt, dataset, spec, arm, seed, out_dir)
        return arm.name, seed, record.summary, record.epochs, None
    except Exception as exc:  # keep remaining runs alive, flag failure
        return arm.name, seed, None, None, f"{type(exc).__name__}: {exc}"


def run_experiment(
    spec: ExperimentSpec, gt, dataset, out_dir=None, workers=None
) -> ComparisonReport:
    """Execute every (arm, seed) combination and aggregate the results.

    Failed runs are reported in the records (metric "failed") and excluded
    from the aggregation; remaining runs continue.
    """
    jobs = [(i, s) for i in range(len(spec.arms)) for s in spec.seeds]
    workers = workers or _max_workers(len(jobs))
    results = []
    if workers == 1:
        _worker_init(gt, dataset, spec, out_dir)
        results = [_worker_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_worker_init,
            initargs=(gt, dataset, spec, out_dir),
        ) as ex:
            results = list(ex.map(_worker_run, jobs))

    records = []
    curves = {}
    failures = []
    for arm_name, seed, summary, epochs, error in results:
        if error is not None:
            failures.append((arm_name, seed, error))
            records.append(
                {"arm": arm_name, "seed": seed, "metric": "failed", "value": 1.0}
            )
            continue
        curves[(arm_name, seed)] = epochs
        for metric in REPORT_METRICS + ("theta_max_ae", "test_mae_y_mean"):
            if metric in summary:
                records.append(
                    {
                        "arm": arm_name,
                        "seed": seed,
                        "metric": metric,
                        "value": float(summary[metric]),
                    }
                )
    report = report_from_records(records)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_records_csv(os.path.join(out_dir, "records.csv"), records)
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(
                {**report.to_json_dict(), "failures": failures, "name": spec.name},
                f,
                indent=2,
            )
    report.curves = curves
    return report


def report_from_records(records) -> ComparisonReport:
    """Deterministic aggregation of long-format records into a report."""
    by_arm_metric = {}
    for r in records:
        if r["metric"] == "failed":
            continue
        by_arm_metric.setdefault(r["metric"], {}).setdefault(r["arm"], []).append(
            (r["seed"], r["value"])
        )
    arms, pvalues, best = {}, {}, {}
    for metric, arm_vals in sorted(by_arm_metric.items()):
        samples = {
            arm: np.array([v for _, v in sorted(vals)])
            for arm, vals in arm_vals.items()
        }
        for arm, vals in samples.items():
            arms.setdefault(arm, {})[metric] = {
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            }
        best_arm = min(samples, key=lambda a: samples[a].mean())
        best[metric] = best_arm
        if metric in REPORT_METRICS:
            pvalues[metric] = {
                arm: (
                    1.0
                    if arm == best_arm
                    else welch_t_test(samples[best_arm], samples[arm])
                )
                for arm in samples
            }
    return ComparisonReport(arms=arms, pvalues=pvalues, best=best, records=records)


def load_records_csv(path) -> list:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                {
                    "arm": row["arm"],
                    "seed": int(row["seed"]),
                    "metric": row["metric"],
                    "value": float(row["value"]),
                }
            )
    return out


def _write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["arm", "seed", "metric", "value"])
        w.writeheader()
        for r in records:
            w.writerow({**r, "value": repr(r["value"])})


def epochs_to_threshold(epoch_rows, threshold: float):
    """First epoch whose validation distributional loss falls at or below
    the threshold; None when never reached."""
    for row in epoch_rows:
        if row["val_dist"] <= threshold:
            return row["epoch"]
    return None
