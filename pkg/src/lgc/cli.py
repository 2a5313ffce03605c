"""Command-line entry point with the datagen/train/evaluate/experiment/oracle
subcommands."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import datagen, harness, trainer
from .edge_dist import EdgeDistribution
from .poly_gnn import PolyGnn


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lgc",
        description="Latent-graph calibration: synthetic benchmarks, training, "
        "and experiment recipes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="evaluate saved checkpoints on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--dist", required=True, help="edge-distribution checkpoint JSON")
    p.add_argument("--model", required=True, help="model checkpoint JSON")
    p.add_argument("--split", default="test")
    p.add_argument("--n-eval-adj", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("experiment", help="run a multi-arm, multi-seed recipe")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("oracle", help="irreducible point-prediction error")
    p.add_argument("--config", required=True)
    p.add_argument("--metric", choices=["mae", "mse", "both"], default="both")
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--n-adj", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def _cmd_datagen(args) -> int:
    cfg = cfgmod.load_config(args.config)
    ds_cfg = cfgmod.dataset_settings(cfg)
    seed = int(ds_cfg.pop("seed", 0))
    n_pairs = int(ds_cfg.pop("n_pairs", 35_000))
    gt = datagen.build_ground_truth(**ds_cfg)
    ds = datagen.generate(gt, n_pairs=n_pairs, seed=seed)
    datagen.save_dataset(ds, args.out)
    print(f"wrote {n_pairs} pairs (N={gt.n}) to {args.out}")
    return 0


def _load_gt_and_data(data_dir):
    ds = datagen.load_dataset(data_dir)
    gt = datagen.ground_truth_from_params(ds.manifest)
    return gt, ds


def _cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    gt, ds = _load_gt_and_data(args.data)
    train_cfg = trainer.train_config_from_dict(dict(cfg.get("train", {})))
    loss_cfg = harness.build_loss_config(dict(cfg.get("loss", {})), gt)
    model = gt.model_star if train_cfg.freeze_psi else None
    state = trainer.init_run(
        train_cfg,
        loss_cfg,
        gt.n,
        hops=gt.model_star.hops,
        d_in=gt.model_star.d_in,
        d_out=gt.model_star.d_out,
        model=model,
    )
    record = trainer.train(
        state, ds, theta_star=gt.dist_star.theta, out_dir=args.out
    )
    print(json.dumps(record.summary, indent=2))
    return 0


def _cmd_evaluate(args) -> int:
    gt, ds = _load_gt_and_data(args.data)
    with open(args.dist) as f:
        dist = EdgeDistribution.from_json_dict(json.load(f))
    with open(args.model) as f:
        model = PolyGnn.from_json_dict(json.load(f))
    xs, ys = ds.split(args.split)
    rng = np.random.default_rng(args.seed)
    out = harness.point_metrics(dist, model, xs, ys, args.n_eval_adj, rng)
    out.update(harness.calibration_metrics(dist.theta, gt.dist_star.theta))
    print(json.dumps(out, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "evaluation.json"), "w") as f:
            json.dump(out, f, indent=2)
    return 0


def _cmd_experiment(args) -> int:
    cfg = cfgmod.load_config(args.config)
    spec = cfgmod.experiment_spec(cfg)
    gt, ds = _load_gt_and_data(args.data)
    report = harness.run_experiment(
        spec, gt, ds, out_dir=args.out, workers=args.workers
    )
    print(json.dumps(report.to_json_dict(), indent=2))
    return 0


def _cmd_oracle(args) -> int:
    cfg = cfgmod.load_config(args.config)
    ds_cfg = cfgmod.dataset_settings(cfg)
    ds_cfg.pop("seed", None)
    ds_cfg.pop("n_pairs", None)
    gt = datagen.build_ground_truth(**ds_cfg)
    if args.metric == "both":
        out = datagen.optimal_error_oracles(
            gt, n_mc=args.n_mc, n_adj=args.n_adj, seed=args.seed
        )
    else:
        out = {
            args.metric: datagen.optimal_error_oracle(
                gt, args.metric, n_mc=args.n_mc, n_adj=args.n_adj, seed=args.seed
            )
        }
    print(json.dumps(out, indent=2))
    return 0


_COMMANDS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "oracle": _cmd_oracle,
}


if __name__ == "__main__":
    sys.exit(main())
