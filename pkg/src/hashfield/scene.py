"""Synthetic scenes with analytic density/albedo fields and dataset I/O.

Ground-truth images are rendered by the package's own compositor sampling
the analytic field, so the rendering model is exactly realizable and pose
refinement is isolated from model mismatch.  Datasets round-trip through a
transforms.json-style manifest with PNG images plus raw float32 sidecars.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import pose as ps
from . import renderer as ren


@dataclass(frozen=True)
class Primitive:
    kind: str                 # "sphere" or "box"
    center: tuple
    size: tuple               # (radius,) for spheres, half extents for boxes
    albedo: tuple
    density: float

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.density < 0:
            raise ValueError("density must be >= 0")


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    background: str = "white"          # "white" or "black"
    bb_min: tuple = (-1.0, -1.0, -1.0)
    bb_max: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.background not in ("white", "black"):
            raise ValueError("background must be 'white' or 'black'")
        lo = np.asarray(self.bb_min)
        hi = np.asarray(self.bb_max)
        for p in self.primitives:
            c = np.asarray(p.center)
            if (c < lo).any() or (c > hi).any():
                raise ValueError("primitive center outside the bounding box")


def default_scene() -> SceneSpec:
    """Asymmetric multi-primitive layout with strong color contrast."""
    return SceneSpec(primitives=(
        Primitive("sphere", (0.45, 0.0, 0.1), (0.4,), (0.85, 0.2, 0.15), 12.0),
        Primitive("box", (-0.4, 0.35, -0.25), (0.35, 0.3, 0.3),
                  (0.2, 0.7, 0.3), 12.0),
        Primitive("sphere", (-0.1, -0.5, 0.35), (0.3,), (0.2, 0.3, 0.85),
                  12.0),
        Primitive("box", (0.0, 0.1, -0.55), (0.7, 0.55, 0.12),
                  (0.6, 0.6, 0.62), 12.0),
    ))


def scene_field(spec: SceneSpec):
    """World-space (points, view_dirs) -> (sigma, rgb) of the analytic
    field: densities add where primitives overlap, albedos blend by
    density."""

    def field(points, view_dirs):
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        sigma = np.zeros(n)
        color_acc = np.zeros((n, 3))
        for prim in spec.primitives:
            c = np.asarray(prim.center)
            if prim.kind == "sphere":
                inside = ((points - c) ** 2).sum(axis=1) <= prim.size[0] ** 2
            else:
                half = np.asarray(prim.size)
                inside = (np.abs(points - c) <= half).all(axis=1)
            sigma += np.where(inside, prim.density, 0.0)
            color_acc += np.where(inside[:, None],
                                  prim.density * np.asarray(prim.albedo),
                                  0.0)
        rgb = np.where(sigma[:, None] > 0, color_acc / np.maximum(
            sigma[:, None], 1e-30), 1.0)
        return sigma, rgb

    return field


def look_at_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> ps.Pose:
    """Camera-to-world pose with the camera looking along -z at the target."""
    eye = np.asarray(eye, dtype=np.float64)
    z = eye - np.asarray(target, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return ps.Pose(R=np.stack([x, y, z], axis=1), t=eye)


def camera_ring(n_views: int, radius: float, rng: np.random.Generator):
    """Cameras spread over a sphere band around the scene, looking at the
    center, with a little random elevation jitter."""
    poses = []
    for i in range(n_views):
        az = 2.0 * np.pi * i / n_views
        el = 0.45 * np.sin(2.3 * i + 0.7) + 0.08 * rng.standard_normal()
        eye = radius * np.array([np.cos(az) * np.cos(el),
                                 np.sin(az) * np.cos(el),
                                 np.sin(el)])
        poses.append(look_at_pose(eye))
    return poses


@dataclass
class SceneDataset:
    """Images, poses, intrinsics and split tags of one synthetic scene."""

    images: np.ndarray          # (n_views, H, W, 3) float32 in [0, 1]
    gt_poses: list
    initial_twists: np.ndarray  # (n_train, 6), aligned with train_indices
    intrinsics: ps.Intrinsics
    splits: list
    bounds: ren.SceneBounds
    near: float
    far: float

    def __post_init__(self):
        if self.images.shape[0] != len(self.gt_poses) != len(self.splits):
            raise ValueError("image/pose/split counts disagree")

    @property
    def train_indices(self):
        return [i for i, s in enumerate(self.splits) if s == "train"]

    @property
    def test_indices(self):
        return [i for i, s in enumerate(self.splits) if s == "test"]

    def flat_train_pixels(self):
        """All training pixels as (cam_position, u, v) rows plus colors.

        cam_position indexes the train cameras 0..n_train-1 in
        train_indices order, matching ``initial_twists``.
        """
        h, w = self.images.shape[1:3]
        uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5,
                             indexing="xy")
        coords = np.stack([uu.ravel(), vv.ravel()], axis=1)
        rows = []
        colors = []
        for pos, idx in enumerate(self.train_indices):
            cam_col = np.full((coords.shape[0], 1), pos, dtype=np.float64)
            rows.append(np.concatenate([cam_col, coords], axis=1))
            colors.append(self.images[idx].reshape(-1, 3))
        return np.concatenate(rows), np.concatenate(colors).astype(
            np.float64)


def render_view(field, pose: ps.Pose, intrinsics: ps.Intrinsics,
                render_cfg: ren.RenderConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Render a full image of an arbitrary field from one camera."""
    h, w = intrinsics.height, intrinsics.width
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5,
                         indexing="xy")
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
    twist = ps.log_map(pose).vector
    batch = ren.build_ray_batch(pixels, np.zeros(pixels.shape[0], dtype=int),
                                twist[None, :], intrinsics,
                                np.zeros((pixels.shape[0], 3)))
    colors = ren.render_rays(batch, field, render_cfg, rng)
    return colors.reshape(h, w, 3)


def generate_scene(spec: SceneSpec, n_views: int, image_size: int,
                   rng: np.random.Generator, *, test_fraction: float = 0.2,
                   radius: float = 4.0, focal_scale: float = 1.2,
                   gt_samples: int = 128) -> SceneDataset:
    """Create a dataset of ground-truth renders of the analytic field.

    Cameras sit on a jittered ring of the given radius looking at the
    scene center; the last ceil(test_fraction * n_views) views are tagged
    as the test split.  Ground truth uses deterministic midpoint sampling
    through the same compositor as training.
    """
    if n_views < 2:
        raise ValueError("need at least 2 views")
    if not spec.primitives:
        raise ValueError("scene has no primitives")
    intr = ps.Intrinsics(focal=focal_scale * image_size,
                         cx=image_size / 2.0, cy=image_size / 2.0,
                         width=image_size, height=image_size)
    scene_radius = float(np.linalg.norm(
        np.maximum(np.abs(np.asarray(spec.bb_min)),
                   np.abs(np.asarray(spec.bb_max)))))
    near = radius - scene_radius
    far = radius + scene_radius
    cfg = ren.RenderConfig(n_samples=gt_samples, t_near=near, t_far=far,
                           stratified=False,
                           white_background=spec.background == "white")
    poses = camera_ring(n_views, radius, rng)
    field = scene_field(spec)
    images = np.stack([
        render_view(field, pose, intr, cfg).astype(np.float32)
        for pose in poses
    ])
    n_test = max(1, int(round(test_fraction * n_views)))
    splits = ["train"] * (n_views - n_test) + ["test"] * n_test
    bounds = ren.SceneBounds.with_margin(spec.bb_min, spec.bb_max)
    train_poses = [poses[i] for i in range(n_views - n_test)]
    initial = np.stack([ps.log_map(p).vector for p in train_poses])
    return SceneDataset(images=images, gt_poses=poses,
                        initial_twists=initial, intrinsics=intr,
                        splits=splits, bounds=bounds, near=near, far=far)


def _atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_png(path, image):
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def save_dataset(dataset: SceneDataset, directory):
    """Write manifest, PNGs and float32 sidecars under ``directory``."""
    directory = os.path.abspath(directory)
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    frames = []
    train_pos = {idx: pos for pos, idx in enumerate(dataset.train_indices)}
    for i, (pose, split) in enumerate(zip(dataset.gt_poses, dataset.splits)):
        name = f"view_{i:03d}"
        png_rel = f"images/{name}.png"
        raw_rel = f"images/{name}.f32"
        write_png(os.path.join(directory, png_rel), dataset.images[i])
        _atomic_write(os.path.join(directory, raw_rel),
                      dataset.images[i].astype("<f4").tobytes())
        frame = {
            "file_path": png_rel,
            "raw_path": raw_rel,
            "transform_matrix": pose.matrix().tolist(),
            "split": split,
        }
        if i in train_pos:
            frame["initial_twist"] = dataset.initial_twists[
                train_pos[i]].tolist()
        frames.append(frame)
    manifest = {
        "camera": {
            "focal": dataset.intrinsics.focal,
            "cx": dataset.intrinsics.cx,
            "cy": dataset.intrinsics.cy,
            "width": dataset.intrinsics.width,
            "height": dataset.intrinsics.height,
        },
        "near": dataset.near,
        "far": dataset.far,
        "bounds": {"lo": dataset.bounds.lo.tolist(),
                   "hi": dataset.bounds.hi.tolist()},
        "frames": frames,
    }
    _atomic_write(os.path.join(directory, "transforms.json"),
                  json.dumps(manifest, indent=1, sort_keys=True).encode())


def load_dataset(directory) -> SceneDataset:
    """Inverse of ``save_dataset``; tensors come from the raw sidecars so
    the round trip is byte-identical."""
    directory = os.path.abspath(directory)
    with open(os.path.join(directory, "transforms.json")) as fh:
        manifest = json.load(fh)
    cam = manifest["camera"]
    intr = ps.Intrinsics(focal=cam["focal"], cx=cam["cx"], cy=cam["cy"],
                         width=cam["width"], height=cam["height"])
    h, w = intr.height, intr.width
    images, poses, splits, twists = [], [], [], []
    for frame in manifest["frames"]:
        raw = os.path.join(directory, frame["raw_path"])
        if os.path.exists(raw):
            img = np.fromfile(raw, dtype="<f4").reshape(h, w, 3)
        else:
            with Image.open(os.path.join(directory,
                                         frame["file_path"])) as im:
                img = np.asarray(im, dtype=np.float32) / 255.0
        images.append(img)
        poses.append(ps.Pose.from_matrix(np.array(frame["transform_matrix"])))
        splits.append(frame["split"])
        if "initial_twist" in frame:
            twists.append(frame["initial_twist"])
    bounds = ren.SceneBounds(lo=np.array(manifest["bounds"]["lo"]),
                             hi=np.array(manifest["bounds"]["hi"]))
    initial = (np.array(twists) if twists
               else np.zeros((0, 6)))
    return SceneDataset(images=np.stack(images), gt_poses=poses,
                        initial_twists=initial, intrinsics=intr,
                        splits=splits, bounds=bounds,
                        near=manifest["near"], far=manifest["far"])
