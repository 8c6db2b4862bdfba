"""Experiment orchestration: config files, full runs, ablation grids.

A single JSON config covers every module; unknown keys are rejected and
every field has a default.  A run generates (or loads) a dataset, perturbs
the training poses, optimizes jointly, Procrustes-aligns the result and
writes report.json, timeline.csv, rendered test images and a checkpoint,
all atomically.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import checkpoint as ckpt
from . import decoder as dec
from . import encoding as enc
from . import metrics as mx
from . import pose as ps
from . import renderer as ren
from . import scene as sc
from . import trainer as tr

OUTPUT_ROOT_ENV = "HASHFIELD_OUTPUT_ROOT"

# components of the method toggled row by row in the ablation grid:
# straight-through estimator, smooth gradient, curriculum scheduling
ABLATION_ROWS = (
    ("a", dict(straight_through=True, smooth_grad=True, curriculum=True)),
    ("b", dict(straight_through=False, smooth_grad=True, curriculum=True)),
    ("c", dict(straight_through=False, smooth_grad=False, curriculum=True)),
    ("d", dict(straight_through=True, smooth_grad=True, curriculum=False)),
    ("e", dict(straight_through=False, smooth_grad=False, curriculum=False)),
)

LAMBDA_SWEEP = (0.5, 1.0, 2.0, 4.0)


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration content."""


@dataclass(frozen=True)
class RenderSettings:
    """Render options; depth bounds default to the dataset's."""

    n_samples: int = 64
    stratified: bool = True
    t_near: float | None = None
    t_far: float | None = None

    def resolve(self, dataset, *, stratified=None,
                n_samples=None) -> ren.RenderConfig:
        return ren.RenderConfig(
            n_samples=self.n_samples if n_samples is None else n_samples,
            t_near=self.t_near if self.t_near is not None else dataset.near,
            t_far=self.t_far if self.t_far is not None else dataset.far,
            stratified=self.stratified if stratified is None else stratified,
            white_background=True,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene_seed: int = 0
    n_views: int = 20
    image_size: int = 64
    pose_noise: float = 0.15
    test_fraction: float = 0.2
    camera_radius: float = 4.0
    gt_samples: int = 128
    dataset_path: str | None = None
    output_dir: str | None = None
    scene: sc.SceneSpec = dataclasses.field(default_factory=sc.default_scene)
    encoding: enc.EncodingConfig = enc.EncodingConfig()
    decoder: dec.DecoderConfig = dec.DecoderConfig()
    render: RenderSettings = RenderSettings()
    train: tr.TrainConfig = tr.TrainConfig()


def _from_dict(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config field(s) {unknown} in "
                          f"{path or 'top level'}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {path or 'config'}: {e}") from e


def _scene_from_dict(data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object")
    names = {f.name for f in dataclasses.fields(sc.SceneSpec)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config field(s) {unknown} in {path}")
    prims = []
    for i, p in enumerate(data.get("primitives", [])):
        prim_names = {f.name for f in dataclasses.fields(sc.Primitive)}
        bad = sorted(set(p) - prim_names)
        if bad:
            raise ConfigError(
                f"unknown config field(s) {bad} in {path}.primitives[{i}]")
        prims.append(sc.Primitive(
            kind=p["kind"], center=tuple(p["center"]),
            size=tuple(p["size"]), albedo=tuple(p["albedo"]),
            density=float(p["density"])))
    kw = {k: v for k, v in data.items() if k != "primitives"}
    if "bb_min" in kw:
        kw["bb_min"] = tuple(kw["bb_min"])
    if "bb_max" in kw:
        kw["bb_max"] = tuple(kw["bb_max"])
    try:
        return sc.SceneSpec(primitives=tuple(prims) if prims
                            else sc.default_scene().primitives, **kw)
    except ValueError as e:
        raise ConfigError(f"invalid {path}: {e}") from e


_SECTIONS = {
    "scene": None,  # handled by _scene_from_dict
    "encoding": enc.EncodingConfig,
    "decoder": dec.DecoderConfig,
    "render": RenderSettings,
    "train": tr.TrainConfig,
}


def config_from_dict(data) -> ExperimentConfig:
    """Build a validated config; every field optional, unknown fields
    rejected at every level."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config field(s) {unknown} in top level")
    kwargs = {}
    for key, value in data.items():
        if key == "scene":
            kwargs[key] = _scene_from_dict(value, "scene")
        elif key in _SECTIONS:
            section_cls = _SECTIONS[key]
            sub = dict(value) if isinstance(value, dict) else value
            if key == "encoding" and isinstance(sub, dict) \
                    and "hash_primes" in sub:
                sub["hash_primes"] = tuple(sub["hash_primes"])
            kwargs[key] = _from_dict(section_cls, sub, key)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path_or_dict) -> ExperimentConfig:
    if isinstance(path_or_dict, ExperimentConfig):
        return path_or_dict
    if isinstance(path_or_dict, dict):
        return config_from_dict(path_or_dict)
    with open(path_or_dict) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def _atomic_write_text(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_timeline_csv(timeline, path):
    lines = ["step,loss,psnr,rot_err_deg,trans_err"]
    for row in timeline:
        lines.append(f"{row['step']},{row['loss']!r},{row['psnr']!r},"
                     f"{row['rot_err_deg']!r},{row['trans_err']!r}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _derived_seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    noise, train = ss.spawn(2)
    return noise, train


def prepare_dataset(cfg: ExperimentConfig) -> sc.SceneDataset:
    """Load or generate the dataset and install the perturbed twists."""
    if cfg.dataset_path:
        dataset = sc.load_dataset(cfg.dataset_path)
    else:
        dataset = sc.generate_scene(
            cfg.scene, cfg.n_views, cfg.image_size,
            np.random.default_rng(cfg.scene_seed),
            test_fraction=cfg.test_fraction, radius=cfg.camera_radius,
            gt_samples=cfg.gt_samples)
    noise_seed, _ = _derived_seeds(cfg.seed)
    train_poses = [dataset.gt_poses[i] for i in dataset.train_indices]
    dataset.initial_twists = ps.perturb_poses(train_poses, cfg.pose_noise,
                                              seed=noise_seed)
    return dataset


def _pose_metrics(twists, dataset):
    learned = [ps.exp_map(t) for t in twists]
    reference = [dataset.gt_poses[i] for i in dataset.train_indices]
    rot, trans, sim = ps.pose_set_errors(learned, reference)
    return {"rot_err_deg": float(rot.mean()),
            "trans_err": float(trans.mean())}, sim


def evaluate_test_views(result: tr.TrainResult, dataset, cfg,
                        sim: ps.Similarity, out_dir=None):
    """Render the test views with the learned field and score them.

    Ground-truth test poses are mapped into the learned frame through the
    inverse of the Procrustes similarity, so evaluation needs no test-time
    pose optimization.
    """
    inv = sim.inverse()
    field = ren.model_field(result.tables, result.params, dataset.bounds,
                            cfg.encoding, mode=enc.RAW)
    rcfg = cfg.render.resolve(dataset, stratified=False)
    rows = []
    for view in dataset.test_indices:
        cam = inv.apply_pose(dataset.gt_poses[view])
        img = sc.render_view(field, cam, dataset.intrinsics, rcfg)
        truth = dataset.images[view].astype(np.float64)
        rows.append({
            "view": view,
            "psnr": mx.psnr(img, truth),
            "ssim": mx.ssim(img, truth),
        })
        if out_dir is not None:
            sc.write_png(os.path.join(out_dir, "renders",
                                      f"test_{view:03d}.png"), img)
    return rows


def run_experiment(config, output_dir=None, seed=None):
    """Full pipeline for one configuration.

    Args:
        config: ExperimentConfig, dict, or a path to a JSON file.
        output_dir: overrides the config's output directory.
        seed: overrides the config's seed.

    Returns:
        (report, out_dir).  Artifacts: report.json, timeline.csv,
        renders/*.png and a model checkpoint under out_dir.
    """
    cfg = load_config(config)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    out_dir = output_dir or cfg.output_dir
    if out_dir is None:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        out_dir = os.path.join(root, f"experiment-seed{cfg.seed}")
    os.makedirs(os.path.join(out_dir, "renders"), exist_ok=True)

    dataset = prepare_dataset(cfg)
    initial, _ = _pose_metrics(dataset.initial_twists, dataset)

    _, train_seed = _derived_seeds(cfg.seed)
    tcfg = replace(cfg.train, seed=int(train_seed.generate_state(1)[0]))
    rcfg = cfg.render.resolve(dataset)
    result = tr.train(dataset, cfg.encoding, cfg.decoder, rcfg, tcfg)

    final, sim = _pose_metrics(result.twists, dataset)
    test_rows = evaluate_test_views(result, dataset, cfg, sim,
                                    out_dir=out_dir)
    report = {
        "seed": cfg.seed,
        "diverged": result.diverged,
        "initial": initial,
        "final": final,
        "test_views": test_rows,
        "psnr_mean": float(np.mean([r["psnr"] for r in test_rows]))
        if test_rows else None,
        "ssim_mean": float(np.mean([r["ssim"] for r in test_rows]))
        if test_rows else None,
        "lpips": None,  # needs a pretrained perceptual network
        "config": config_to_dict(cfg),
    }
    write_timeline_csv(result.timeline,
                       os.path.join(out_dir, "timeline.csv"))
    _atomic_write_text(os.path.join(out_dir, "report.json"),
                       json.dumps(report, indent=1, sort_keys=True) + "\n")
    tensors = {"tables": result.tables.values, "twists": result.twists}
    tensors.update({f"decoder.{k}": v
                    for k, v in result.params.tensors.items()})
    ckpt.save_checkpoint(os.path.join(out_dir, "model"), tensors,
                         config_to_dict(cfg), tcfg.iterations)
    return report, out_dir


def run_ablation(config, sweep="components", seeds=(0, 1, 2),
                 output_dir=None, rows=None):
    """Run the flag grid (rows a-e) or the mixing-coefficient sweep.

    Args:
        rows: optional subset of component-row names to run (e.g.
            ("a", "c", "e")); None runs the full grid.

    Returns a list of row dicts with per-seed reports and seed-averaged
    rotation/translation errors and PSNR.
    """
    cfg = load_config(config)
    out_dir = output_dir or cfg.output_dir
    if out_dir is None:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        out_dir = os.path.join(root, f"ablation-{sweep}")
    os.makedirs(out_dir, exist_ok=True)

    # share one dataset across rows and seeds: generate once, reload per run
    data_dir = cfg.dataset_path
    if data_dir is None:
        data_dir = os.path.join(out_dir, "dataset")
        if not os.path.exists(os.path.join(data_dir, "transforms.json")):
            sc.save_dataset(sc.generate_scene(
                cfg.scene, cfg.n_views, cfg.image_size,
                np.random.default_rng(cfg.scene_seed),
                test_fraction=cfg.test_fraction, radius=cfg.camera_radius,
                gt_samples=cfg.gt_samples), data_dir)
    cfg = replace(cfg, dataset_path=data_dir)

    if sweep == "components":
        variants = [(name, replace(cfg, train=replace(cfg.train, **flags)))
                    for name, flags in ABLATION_ROWS
                    if rows is None or name in rows]
    elif sweep == "lambda":
        variants = [(f"lambda={lam:g}",
                     replace(cfg, encoding=replace(cfg.encoding,
                                                   st_mix=lam)))
                    for lam in LAMBDA_SWEEP]
    else:
        raise ConfigError(f"unknown sweep {sweep!r}")

    rows = []
    for name, variant in variants:
        reports = []
        for seed in seeds:
            run_dir = os.path.join(out_dir, f"{name.replace('=', '')}"
                                            f"-seed{seed}")
            report, _ = run_experiment(variant, output_dir=run_dir,
                                       seed=seed)
            reports.append(report)
        rows.append({
            "name": name,
            "flags": {k: getattr(variant.train, k) for k in
                      ("straight_through", "smooth_grad", "curriculum")},
            "st_mix": variant.encoding.st_mix,
            "rot_err_deg": float(np.mean([r["final"]["rot_err_deg"]
                                          for r in reports])),
            "trans_err": float(np.mean([r["final"]["trans_err"]
                                        for r in reports])),
            "psnr": float(np.mean([r["psnr_mean"] for r in reports])),
            "initial_rot_err_deg": float(np.mean(
                [r["initial"]["rot_err_deg"] for r in reports])),
            "seeds": list(seeds),
            "reports": reports,
        })
    summary = [{k: v for k, v in row.items() if k != "reports"}
               for row in rows]
    _atomic_write_text(os.path.join(out_dir, "ablation.json"),
                       json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return rows
