"""TOML run-configuration loading.

Config files carry up to four sections:

[dataset]     n_communities, community_size, theta_on, sigma_x, n_pairs, seed
[loss]        kind, inner_metric, n_adj, control_variates, elbo_sigma,
              elbo_prior, baseline_momentum, kernel.{kind, sigma, alpha}
[train]       lr_initial, lr_after_drop, drop_epoch, batch_size, epochs,
              seed, freeze_psi, theta_init_low, theta_init_high
[experiment]  name, seeds, arms[] with per-arm loss/train overrides plus
              model_source, max_pert, misconfigured

The loss section stays a plain mapping here; resolving it against a ground
truth (kernel spec, elbo prior) happens in harness.build_loss_config.
"""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .harness import ArmSpec, ExperimentSpec

DATASET_KEYS = {
    "n_communities",
    "community_size",
    "theta_on",
    "sigma_x",
    "n_pairs",
    "seed",
}


def load_config(path) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)


def dataset_settings(cfg: dict) -> dict:
    d = dict(cfg.get("dataset", {}))
    unknown = set(d) - DATASET_KEYS
    if unknown:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
    return d


def experiment_spec(cfg: dict) -> ExperimentSpec:
    if "experiment" not in cfg:
        raise ConfigError("config has no [experiment] section")
    e = cfg["experiment"]
    arms = [
        ArmSpec(
            name=a["name"],
            loss=dict(a.get("loss", {})),
            train=dict(a.get("train", {})),
            model_source=a.get("model_source", "joint"),
            max_pert=float(a.get("max_pert", 0.0)),
            misconfigured=bool(a.get("misconfigured", False)),
        )
        for a in e.get("arms", [])
    ]
    return ExperimentSpec(
        name=e.get("name", "experiment"),
        arms=arms,
        seeds=[int(s) for s in e.get("seeds", [])],
        base_loss=dict(cfg.get("loss", {})),
        base_train=dict(cfg.get("train", {})),
    )
