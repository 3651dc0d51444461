"""Command-line interface: dataset generation, training, evaluation,
generalization sweeps, and standalone baseline runs."""

import argparse
import sys

import numpy as np

from . import chansim, engnn, harness


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="rrmgnn",
                                     description="edge-update GNN radio resource toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset file")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train a model per the config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="checkpoint path (overrides config)")
    p.add_argument("--metrics", default=None, help="write per-epoch metrics CSV here")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a seeded test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None, help="override the embedded geometry")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", default=None, help="per-sample CSV path")
    _add_common(p)

    p = sub.add_parser("sweep", help="evaluate a checkpoint across an axis")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated axis values, e.g. 4,6,8")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--baseline", choices=("wmmse", "gp", "none"), default="none")
    p.add_argument("--out", default=None)
    _add_common(p)

    p = sub.add_parser("baseline", help="run a classical solver standalone")
    p.add_argument("--config", required=True)
    p.add_argument("--baseline", choices=("wmmse", "gp"), default="wmmse")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", default=None)
    _add_common(p)
    return parser


def _train_cfg(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        geo = chansim.GeometryConfig.from_dict({**cfg.geometry.to_dict(),
                                                "seed": args.seed})
        cfg = harness.TrainConfig(**{**_cfg_dict(cfg), "seed": args.seed,
                                     "geometry": geo})
    return cfg


def _cfg_dict(cfg):
    from dataclasses import asdict

    d = asdict(cfg)
    d["geometry"] = cfg.geometry
    d["net"] = cfg.net
    return d


def _restore(args):
    net, params, meta = engnn.load_checkpoint(args.checkpoint)
    if args.config is not None:
        cfg = harness.load_config(args.config)
        scenario, geometry = cfg.scenario, cfg.geometry
    else:
        train_meta = meta.get("train")
        if not train_meta:
            raise ValueError("checkpoint has no embedded config; pass --config")
        scenario = train_meta["scenario"]
        geometry = chansim.GeometryConfig.from_dict(train_meta["geometry"])
    return net, params, scenario, geometry


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            cfg = _train_cfg(args)
            seed = cfg.seed if args.seed is None else args.seed
            chansim.write_dataset(args.out, cfg.scenario, cfg.geometry,
                                  args.samples, seed)
            print(f"wrote {args.samples} samples to {args.out}")
        elif args.command == "train":
            cfg = _train_cfg(args)
            if args.out is not None:
                cfg = harness.TrainConfig(**{**_cfg_dict(cfg),
                                             "checkpoint_path": args.out})
            _, _, rows = harness.train(cfg, log=print)
            if args.metrics:
                harness.write_csv(args.metrics, harness.METRICS_HEADER,
                                  [[r.run_id, r.epoch, r.mean_sum_rate,
                                    r.residual_max, r.wall_seconds] for r in rows])
            print(f"checkpoint written to {cfg.checkpoint_path}")
        elif args.command == "eval":
            net, params, scenario, geometry = _restore(args)
            seed = args.seed if args.seed is not None else geometry.seed
            row, _ = harness.evaluate(net, params, scenario, geometry,
                                      args.samples, seed, out_csv=args.out)
            print(f"mean sum rate {row.mean_sum_rate:.6f} bits/s/Hz over "
                  f"{args.samples} samples (max residual {row.residual_max:.2e})")
        elif args.command == "sweep":
            net, params, scenario, geometry = _restore(args)
            seed = args.seed if args.seed is not None else geometry.seed
            values = [float(v) for v in args.values.split(",") if v]
            train_cfg = harness.load_config(args.config) if args.config else None
            harness.sweep(net, params, scenario, geometry, args.axis, values,
                          args.samples, seed, baseline=args.baseline,
                          train_cfg=train_cfg, out_csv=args.out, log=print)
        elif args.command == "baseline":
            cfg = _train_cfg(args)
            seed = cfg.seed if args.seed is None else args.seed
            rates = []
            trace_rows = []
            for i in range(args.samples):
                inst, _ = chansim.build_instance(cfg.scenario, cfg.geometry,
                                                 chansim.sample_seed(seed, i))
                res = harness.run_baseline(cfg.scenario, inst, args.baseline)
                rates.append(res.report.sum_rate_value())
                trace_rows.extend([i, t, r] for t, r in enumerate(res.trace))
            print(f"{args.baseline} mean sum rate {np.mean(rates):.6f} bits/s/Hz "
                  f"over {args.samples} samples")
            if args.out:
                harness.write_csv(args.out, ["sample", "iteration", "sum_rate"],
                                  trace_rows)
        return 0
    except Exception as exc:  # argparse handles usage errors separately
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
