"""Command-line interface.

Exit codes: 0 success, 1 validation failure (bad config, missing files,
failed gradient check), 2 runtime divergence, 64 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import decoder as dec
from . import encoding as enc
from . import experiment as ex
from . import gradcheck as gc
from . import pose as ps
from . import scene as sc
from . import trainer as tr

USAGE_EXIT = 64
VALIDATION_EXIT = 1
DIVERGENCE_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hashfield",
                     description="Hash-encoded field with joint camera "
                                 "pose refinement")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("train", help="run one experiment from a config file")
    p.add_argument("config")
    p.add_argument("--output", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    p.add_argument("checkpoint", help="checkpoint path without extension")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--output", default=None)

    p = sub.add_parser("gradcheck",
                       help="finite-difference checks of all gradients")
    p.add_argument("--module", default="all",
                   choices=["all", "encoding", "decoder", "pose", "render"])
    p.add_argument("--seeds", type=int, default=5,
                   help="number of seeds (0..n-1)")

    p = sub.add_parser("ablate", help="run the component or lambda grid")
    p.add_argument("config")
    p.add_argument("--sweep", default="components",
                   choices=["components", "lambda"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--output", default=None)

    p = sub.add_parser("profile-derivative",
                       help="1D encoding value/derivative profile CSV")
    p.add_argument("config")
    p.add_argument("--output", default=None)
    p.add_argument("--samples", type=int, default=256)

    p = sub.add_parser("gen-scene", help="generate and save a dataset")
    p.add_argument("config")
    p.add_argument("--output", default=None)
    return parser


def _out_dir(arg, cfg, default_name):
    if arg:
        return arg
    if cfg is not None and cfg.output_dir:
        return cfg.output_dir
    return os.path.join(os.environ.get(ex.OUTPUT_ROOT_ENV, "runs"),
                        default_name)


def _cmd_train(args) -> int:
    report, out_dir = ex.run_experiment(args.config, output_dir=args.output,
                                        seed=args.seed)
    print(f"report: {os.path.join(out_dir, 'report.json')}")
    print(f"rotation error (deg): {report['final']['rot_err_deg']:.4f}"
          f" (initial {report['initial']['rot_err_deg']:.4f})")
    print(f"translation error:    {report['final']['trans_err']:.6f}")
    if report["psnr_mean"] is not None:
        print(f"test PSNR: {report['psnr_mean']:.2f} dB  "
              f"SSIM: {report['ssim_mean']:.4f}")
    return DIVERGENCE_EXIT if report["diverged"] else 0


def _cmd_eval(args) -> int:
    tensors, cfg_dict, step = ckpt.load_checkpoint(args.checkpoint)
    cfg = ex.config_from_dict(cfg_dict)
    dataset = sc.load_dataset(args.dataset)
    tables = enc.HashTables(
        values=tensors["tables"],
        grads=np.zeros(tensors["tables"].shape, dtype=np.float64))
    params = dec.DecoderParams.initialize(
        cfg.decoder, cfg.encoding.output_dim, np.random.default_rng(0),
        dtype=tensors["decoder.trunk.0.w"].dtype)
    for name in params.tensor_names():
        params.tensors[name] = tensors[f"decoder.{name}"]
    twists = tensors["twists"]
    result = tr.TrainResult(tables=tables, params=params, twists=twists,
                            timeline=[])
    metrics, sim = ex._pose_metrics(twists, dataset)
    out_dir = _out_dir(args.output, cfg, "eval")
    os.makedirs(os.path.join(out_dir, "renders"), exist_ok=True)
    rows = ex.evaluate_test_views(result, dataset, cfg, sim,
                                  out_dir=out_dir)
    summary = {
        "checkpoint_step": step,
        "pose": metrics,
        "test_views": rows,
        "psnr_mean": float(np.mean([r["psnr"] for r in rows]))
        if rows else None,
        "ssim_mean": float(np.mean([r["ssim"] for r in rows]))
        if rows else None,
    }
    ex._atomic_write_text(os.path.join(out_dir, "eval.json"),
                          json.dumps(summary, indent=1, sort_keys=True)
                          + "\n")
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    ok, results = gc.run_gradcheck(args.module, seeds=range(args.seeds))
    by_family = {}
    for r in results:
        by_family.setdefault(r["family"], []).append(r)
    for family, rows in by_family.items():
        worst = max(r["max_rel_err"] for r in rows)
        tol = rows[0]["tolerance"]
        status = "pass" if all(r["passed"] for r in rows) else "FAIL"
        print(f"{family:10s} max rel err {worst:.3e}  "
              f"(tolerance {tol:.0e}, {len(rows)} seeds)  {status}")
    return 0 if ok else VALIDATION_EXIT


def _cmd_ablate(args) -> int:
    rows = ex.run_ablation(args.config, sweep=args.sweep, seeds=args.seeds,
                           output_dir=args.output)
    header = f"{'row':12s} {'rot(deg)':>10s} {'trans':>10s} {'psnr':>8s}"
    print(header)
    diverged = False
    for row in rows:
        print(f"{row['name']:12s} {row['rot_err_deg']:10.4f} "
              f"{row['trans_err']:10.5f} {row['psnr']:8.2f}")
        diverged |= any(rep["diverged"] for rep in row["reports"])
    return DIVERGENCE_EXIT if diverged else 0


def _cmd_profile(args) -> int:
    cfg = ex.load_config(args.config)
    out_dir = _out_dir(args.output, cfg, "profile")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    resolution = cfg.encoding.finest_resolution
    table = rng.uniform(0.0, 1.0, size=max(cfg.encoding.table_size,
                                           resolution + 1))
    rows = []
    for mode in ("raw", "smoothed"):
        rows.extend(enc.derivative_profile_1d(
            table, resolution, args.samples, mode=mode,
            st_mix=cfg.encoding.st_mix))
    path = os.path.join(out_dir, "derivative_profile.csv")
    enc.write_profile_csv(rows, path)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def _cmd_gen_scene(args) -> int:
    cfg = ex.load_config(args.config)
    dataset = sc.generate_scene(cfg.scene, cfg.n_views, cfg.image_size,
                                np.random.default_rng(cfg.scene_seed),
                                test_fraction=cfg.test_fraction,
                                radius=cfg.camera_radius,
                                gt_samples=cfg.gt_samples)
    out_dir = _out_dir(args.output, cfg, "dataset")
    sc.save_dataset(dataset, out_dir)
    print(f"wrote {len(dataset.gt_poses)} views "
          f"({len(dataset.train_indices)} train / "
          f"{len(dataset.test_indices)} test) to {out_dir}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
    "profile-derivative": _cmd_profile,
    "gen-scene": _cmd_gen_scene,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except ex.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return VALIDATION_EXIT
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return VALIDATION_EXIT
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return VALIDATION_EXIT


if __name__ == "__main__":
    sys.exit(main())
