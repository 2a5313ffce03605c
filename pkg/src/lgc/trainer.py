"""Mini-batch first-order training of the edge distribution and predictor.

Adam updates both parameter groups; theta is re-projected into its clamp
after every step.  All randomness derives from the run seed through tagged
seed sequences, so equal (seed, config, dataset) yields bit-equal results.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses
from .edge_dist import EdgeDistribution
from .errors import ConfigError, NumericalDivergence, ShapeMismatch
from .losses import LossConfig, LossEstimate
from .metrics import calibration_metrics, point_metrics
from .poly_gnn import PolyGnn

# seed-sequence tags: init, epoch shuffle, batch sampling, validation sampling
_TAG_INIT, _TAG_SHUFFLE, _TAG_LOSS, _TAG_VAL = 0, 1, 2, 3

EPOCH_COLUMNS = (
    "epoch",
    "val_dist",
    "theta_mae",
    "theta_max_ae",
    "val_mse_y",
    "val_mae_y",
    "seconds",
)


@dataclass
class TrainConfig:
    """Optimization schedule and initialization ranges."""

    lr_initial: float = 0.05
    lr_after_drop: float = 0.01
    drop_epoch: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 15
    theta_init_low: float = 0.0
    theta_init_high: float = 0.1
    freeze_psi: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lr_after_drop <= self.lr_initial:
            raise ConfigError("need 0 <= lr_after_drop <= lr_initial")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 <= b < 1.0:
                raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size >= 1 and epochs >= 0 required")
        if not 0.0 <= self.theta_init_low <= self.theta_init_high <= 1.0:
            raise ConfigError("theta init range must satisfy 0 <= low <= high <= 1")


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update; returns (param, m, v) as new arrays."""
    if grad.shape != param.shape:
        raise ShapeMismatch(f"grad shape {grad.shape} != param {param.shape}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class RunRecord:
    """Per-epoch validation metrics plus a final summary.

    Epoch rows carry: the sampled squared-MMD validation loss (val_dist),
    MAE and max AE between theta and theta* when theta* is known, validation
    point MSE (mean functional) and MAE (median functional), and wall-clock
    seconds for the epoch.
    """

    epochs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(EPOCH_COLUMNS)
            for row in self.epochs:
                w.writerow([repr(float(row[c])) for c in EPOCH_COLUMNS])

    @classmethod
    def from_csv(cls, path, summary=None) -> "RunRecord":
        rows = []
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                row = {c: float(rec[c]) for c in EPOCH_COLUMNS}
                row["epoch"] = int(row["epoch"])
                rows.append(row)
        return cls(epochs=rows, summary=summary or {})


@dataclass
class TrainerState:
    """Everything that evolves during a run."""

    cfg: TrainConfig
    loss_cfg: LossConfig
    dist: EdgeDistribution
    model: PolyGnn
    m_theta: np.ndarray = None
    v_theta: np.ndarray = None
    m_psi: list = None
    v_psi: list = None
    step: int = 0
    node_baselines: np.ndarray = None

    def __post_init__(self):
        if self.m_theta is None:
            self.m_theta = np.zeros_like(self.dist.theta)
            self.v_theta = np.zeros_like(self.dist.theta)
            self.m_psi = [np.zeros_like(w) for w in self.model.layers]
            self.v_psi = [np.zeros_like(w) for w in self.model.layers]
            self.node_baselines = np.zeros(self.dist.n)


def _rng(seed: int, tag: int, *extra) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag) + extra))


def init_run(
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    n_nodes: int,
    hops: int = 2,
    d_in: int = 4,
    d_out: int = 1,
    model: PolyGnn | None = None,
    theta_constraints=None,
) -> TrainerState:
    """Initialize a run: theta ~ U(theta_init_low, theta_init_high) on
    trainable entries, psi ~ U(-0.5, 0.5) unless a model is supplied.

    theta_constraints, when given, is a (frozen_mask, values) pair fixing a
    subset of theta at constants for the whole run (the misconfigured-
    distribution setting).  A supplied model is copied; with freeze_psi it
    stays untouched during training.
    """
    rng = _rng(cfg.seed, _TAG_INIT)
    theta = rng.uniform(cfg.theta_init_low, cfg.theta_init_high, (n_nodes, n_nodes))
    mask = np.ones((n_nodes, n_nodes), dtype=bool)
    if theta_constraints is not None:
        frozen_mask, values = theta_constraints
        frozen_mask = np.asarray(frozen_mask, dtype=bool)
        theta = np.where(frozen_mask, values, theta)
        mask &= ~frozen_mask
    dist = EdgeDistribution(theta, mask)
    if model is None:
        if cfg.freeze_psi:
            raise ConfigError("freeze_psi requires a supplied model")
        model = PolyGnn([rng.uniform(-0.5, 0.5, (d_out, d_in)) for _ in range(hops)])
    else:
        model = model.copy()
    return TrainerState(cfg=cfg, loss_cfg=loss_cfg, dist=dist, model=model)


def train(
    state: TrainerState,
    dataset,
    theta_star=None,
    out_dir=None,
    eval_n_adj: int = 64,
    test_eval_n_adj: int = 256,
) -> RunRecord:
    """Run the configured number of epochs and return the RunRecord.

    Per epoch: shuffle the training pairs with an epoch-derived seed,
    apply Adam to psi (unless frozen) and theta from each batch's
    LossEstimate, project theta, then evaluate validation metrics.  Raises
    NumericalDivergence if any parameter becomes non-finite.
    """
    cfg, loss_cfg = state.cfg, state.loss_cfg
    xs_train, ys_train = dataset.split("train")
    record = RunRecord()
    wall_start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.lr_initial if epoch <= cfg.drop_epoch else cfg.lr_after_drop
        perm = _rng(cfg.seed, _TAG_SHUFFLE, epoch).permutation(xs_train.shape[0])
        loss_rng = _rng(cfg.seed, _TAG_LOSS, epoch)
        for lo in range(0, perm.size, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            est = losses.estimate(
                state.dist,
                state.model,
                xs_train[sel],
                ys_train[sel],
                loss_cfg,
                loss_rng,
                with_grad_psi=not cfg.freeze_psi,
                node_baselines=state.node_baselines,
            )
            state.step += 1
            state.dist.theta, state.m_theta, state.v_theta = adam_step(
                state.dist.theta,
                est.grad_theta,
                state.m_theta,
                state.v_theta,
                state.step,
                lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )
            state.dist.project()
            if not cfg.freeze_psi:
                for i, w in enumerate(state.model.layers):
                    state.model.layers[i], state.m_psi[i], state.v_psi[i] = adam_step(
                        w,
                        est.grad_psi[i],
                        state.m_psi[i],
                        state.v_psi[i],
                        state.step,
                        lr,
                        cfg.adam_beta1,
                        cfg.adam_beta2,
                        cfg.adam_eps,
                    )
            _check_finite(state, epoch)
        row = _validation_row(state, dataset, theta_star, eval_n_adj, epoch)
        row["seconds"] = time.perf_counter() - t0
        record.epochs.append(row)

    record.summary = _summary(
        state, dataset, theta_star, test_eval_n_adj, record, wall_start
    )
    if out_dir is not None:
        write_run_outputs(state, record, out_dir)
    return record


def _validation_row(state, dataset, theta_star, eval_n_adj, epoch) -> dict:
    xs, ys = dataset.split("validation")
    val_rng = _rng(state.cfg.seed, _TAG_VAL, epoch)
    dist_cfg = replace(
        state.loss_cfg,
        kind=losses.DIST_MMD,
        n_adj=max(2, state.loss_cfg.n_adj),
    )
    val_dist = losses.mmd2_batch(
        state.dist, state.model, xs, ys, dist_cfg, val_rng, with_grads=False
    ).value
    pm = point_metrics(state.dist, state.model, xs, ys, eval_n_adj, val_rng)
    row = {
        "epoch": epoch,
        "val_dist": val_dist,
        "val_mse_y": pm["mse_y"],
        "val_mae_y": pm["mae_y"],
    }
    if theta_star is not None:
        cm = calibration_metrics(state.dist.theta, theta_star)
        row["theta_mae"], row["theta_max_ae"] = cm["mae"], cm["max_ae"]
    else:
        row["theta_mae"] = row["theta_max_ae"] = float("nan")
    return row


def _summary(state, dataset, theta_star, test_eval_n_adj, record, wall_start) -> dict:
    xs, ys = dataset.split("test")
    test_rng = _rng(state.cfg.seed, _TAG_VAL, 0)
    pm = point_metrics(state.dist, state.model, xs, ys, test_eval_n_adj, test_rng)
    summary = {
        "test_mse_y": pm["mse_y"],
        "test_mae_y": pm["mae_y"],
        "test_mae_y_mean": pm["mae_y_mean"],
        "epochs_run": len(record.epochs),
        "final_val_dist": record.epochs[-1]["val_dist"] if record.epochs else None,
        "wall_seconds": time.perf_counter() - wall_start,
        "seed": state.cfg.seed,
        "loss_kind": state.loss_cfg.kind,
    }
    if theta_star is not None:
        cm = calibration_metrics(state.dist.theta, theta_star)
        summary["theta_mae"], summary["theta_max_ae"] = cm["mae"], cm["max_ae"]
    return summary


def _check_finite(state, epoch) -> None:
    ok = np.isfinite(state.dist.theta).all() and all(
        np.isfinite(w).all() for w in state.model.layers
    )
    if not ok:
        raise NumericalDivergence(
            f"non-finite parameters at epoch {epoch}, step {state.step}"
        )


# -- run outputs -----------------------------------------------------------------


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_run_outputs(state: TrainerState, record: RunRecord, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    record.to_csv(os.path.join(out_dir, "metrics.csv.tmp"))
    os.replace(
        os.path.join(out_dir, "metrics.csv.tmp"), os.path.join(out_dir, "metrics.csv")
    )
    _atomic_write(
        os.path.join(out_dir, "summary.json"), json.dumps(record.summary, indent=2)
    )
    _atomic_write(
        os.path.join(out_dir, "dist.json"), json.dumps(state.dist.to_json_dict())
    )
    _atomic_write(
        os.path.join(out_dir, "model.json"), json.dumps(state.model.to_json_dict())
    )


def train_config_from_dict(d: dict) -> TrainConfig:
    allowed = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**d)
