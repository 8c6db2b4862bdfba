"""Emission-absorption volume rendering with backward paths to the feature
tables, the decoder and the camera twists.

Rays are cast along unit directions, so depth values are world distances.
Sample positions are mapped into the encoding's unit cube through the scene
bounds; samples falling outside the cube contribute zero density and zero
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from . import encoding as enc
from . import pose as ps

TERMINAL_DELTA = 1e10  # depth extent assigned to the last sample


class DivergenceError(RuntimeError):
    """Raised when a render step produces a non-finite loss."""


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 64
    t_near: float = 2.0
    t_far: float = 6.0
    stratified: bool = True
    white_background: bool = True

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be < t_far")


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned world box mapped onto the encoding's unit cube."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def with_margin(cls, bb_min, bb_max, margin: float = 0.05
                    ) -> "SceneBounds":
        bb_min = np.asarray(bb_min, dtype=np.float64)
        bb_max = np.asarray(bb_max, dtype=np.float64)
        pad = margin * (bb_max - bb_min)
        return cls(lo=bb_min - pad, hi=bb_max + pad)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def to_unit(self, x_world) -> np.ndarray:
        return (np.asarray(x_world, dtype=np.float64) - self.lo) / self.extent


@dataclass
class RayBatch:
    """Rays with ground truth and the pose Jacobians used by the backward
    pass: per-ray direction Jacobians and one origin Jacobian per camera."""

    origins: np.ndarray        # (n, 3)
    directions: np.ndarray     # (n, 3) unit
    dir_norms: np.ndarray      # (n,) length of the un-normalized direction
    cam_index: np.ndarray      # (n,) int
    jac_dir_omega: np.ndarray  # (n, 3, 3) d(R d_cam)/d omega
    jac_origin: np.ndarray     # (n_cams, 3, 6) d(camera center)/d twist
    gt_colors: np.ndarray      # (n, 3)

    def __post_init__(self):
        n = self.origins.shape[0]
        if not (self.directions.shape == (n, 3)
                and self.gt_colors.shape == (n, 3)
                and self.cam_index.shape == (n,)):
            raise ValueError("ray batch fields have mismatched lengths")


def build_ray_batch(pixels, cam_index, twists, intrinsics: ps.Intrinsics,
                    gt_colors) -> RayBatch:
    """Vectorized ray construction for a mixed-camera pixel batch.

    Args:
        pixels: (n, 2) continuous (u, v) image coordinates.
        cam_index: (n,) camera id per pixel.
        twists: (n_cams, 6) se(3) parameters of every camera.
        intrinsics: shared pinhole parameters.
        gt_colors: (n, 3) supervision colors for the pixels.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    cam_index = np.asarray(cam_index, dtype=np.int64)
    twists = np.asarray(twists, dtype=np.float64)
    n = pixels.shape[0]
    n_cams = twists.shape[0]

    d_cam = np.stack([
        (pixels[:, 0] - intrinsics.cx) / intrinsics.focal,
        (pixels[:, 1] - intrinsics.cy) / intrinsics.focal,
        -np.ones(n),
    ], axis=1)

    origins = np.empty((n, 3))
    dirs_un = np.empty((n, 3))
    jac_dir_omega = np.empty((n, 3, 3))
    jac_origin = np.empty((n_cams, 3, 6))
    for c in range(n_cams):
        pose = ps.exp_map(twists[c])
        jac_origin[c] = ps.origin_jacobian(twists[c])
        sel = np.nonzero(cam_index == c)[0]
        if sel.size == 0:
            continue
        dc = d_cam[sel]
        dirs_un[sel] = dc @ pose.R.T
        origins[sel] = pose.t
        # d(R d_cam)/d omega = -R [d_cam]x V^T, batched over the pixels
        skews = np.zeros((sel.size, 3, 3))
        skews[:, 0, 1] = -dc[:, 2]
        skews[:, 0, 2] = dc[:, 1]
        skews[:, 1, 0] = dc[:, 2]
        skews[:, 1, 2] = -dc[:, 0]
        skews[:, 2, 0] = -dc[:, 1]
        skews[:, 2, 1] = dc[:, 0]
        v_t = ps._v_matrix(twists[c, :3]).T
        jac_dir_omega[sel] = -np.einsum("ab,nbc,cd->nad", pose.R, skews, v_t)

    norms = np.linalg.norm(dirs_un, axis=1)
    return RayBatch(
        origins=origins,
        directions=dirs_un / norms[:, None],
        dir_norms=norms,
        cam_index=cam_index,
        jac_dir_omega=jac_dir_omega,
        jac_origin=jac_origin,
        gt_colors=np.asarray(gt_colors, dtype=np.float64),
    )


def sample_depths(config: RenderConfig, rng: np.random.Generator,
                  count: int | None = None) -> np.ndarray:
    """Depth values along [t_near, t_far], one per bin.

    Stratified sampling draws uniformly inside each of n_samples equal
    bins; otherwise bin midpoints are returned.  Output is strictly
    increasing.  Shape (n_samples,) or (count, n_samples).
    """
    n = config.n_samples
    edges = np.linspace(config.t_near, config.t_far, n + 1)
    lo, width = edges[:-1], (config.t_far - config.t_near) / n
    shape = (n,) if count is None else (count, n)
    if config.stratified:
        u = rng.random(shape)
    else:
        u = np.full(shape, 0.5)
    return lo + u * width


def compositing_weights(sigmas, depths, terminal_delta: float = TERMINAL_DELTA):
    """Alpha values, transmittances, blend weights and residual
    transmittance of the emission-absorption quadrature.

    sigmas/depths: (..., N).  The last interval gets ``terminal_delta``.
    Returns (alphas, trans, weights, trans_end) where weights = trans *
    alphas and trans_end is the transmittance past the last sample, so
    weights.sum(-1) + trans_end == 1 up to rounding.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    deltas = np.concatenate([
        np.diff(depths, axis=-1),
        np.full(depths.shape[:-1] + (1,), terminal_delta),
    ], axis=-1)
    alphas = 1.0 - np.exp(-sigmas * deltas)
    keep = np.cumprod(1.0 - alphas, axis=-1)
    trans = np.concatenate([
        np.ones(depths.shape[:-1] + (1,)), keep[..., :-1]
    ], axis=-1)
    weights = trans * alphas
    return alphas, trans, weights, keep[..., -1]


def composite(sigmas, rgbs, depths, white_background: bool = False,
              terminal_delta: float = TERMINAL_DELTA) -> np.ndarray:
    """Blend per-sample colors into pixel colors along each ray.

    sigmas/depths: (..., N), rgbs: (..., N, 3).  A white background adds
    the residual transmittance to every channel.
    """
    _, _, weights, trans_end = compositing_weights(sigmas, depths,
                                                   terminal_delta)
    color = (weights[..., None] * np.asarray(rgbs, dtype=np.float64)).sum(
        axis=-2)
    if white_background:
        color = color + trans_end[..., None]
    return color


def render_rays(batch: RayBatch, field_fn, config: RenderConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Forward-only rendering of a ray batch against an arbitrary field.

    field_fn maps (points (m, 3) world, view_dirs (m, 3)) to (sigma, rgb)
    and is used both for the learned model and the analytic ground-truth
    field, so both run through the same compositor.
    """
    if config.stratified and rng is None:
        raise ValueError("stratified sampling needs an rng")
    n = batch.origins.shape[0]
    depths = sample_depths(config, rng, count=n)
    points = (batch.origins[:, None, :]
              + depths[..., None] * batch.directions[:, None, :])
    view = np.repeat(batch.directions, config.n_samples, axis=0)
    sigma, rgb = field_fn(points.reshape(-1, 3), view)
    return composite(sigma.reshape(n, config.n_samples),
                     rgb.reshape(n, config.n_samples, 3), depths,
                     white_background=config.white_background)


@dataclass
class RenderTape:
    """Saved forward state of one training batch."""

    batch: RayBatch
    depths: np.ndarray       # (n, N)
    inside: np.ndarray       # (n*N,) bool, sample within the unit cube
    enc_ctx: enc.EncodingContext
    dec_tape: dec.DecoderTape
    rgb: np.ndarray          # (n, N, 3)
    alphas: np.ndarray       # (n, N)
    trans: np.ndarray        # (n, N)
    weights: np.ndarray      # (n, N)
    colors: np.ndarray       # (n, 3)
    bounds: SceneBounds
    render_cfg: RenderConfig
    view_levels: int


def render_batch(batch: RayBatch, tables: enc.HashTables,
                 params: dec.DecoderParams, bounds: SceneBounds,
                 enc_cfg: enc.EncodingConfig, render_cfg: RenderConfig,
                 mode: str = enc.STRAIGHT_THROUGH,
                 rng: np.random.Generator | None = None):
    """Differentiable render of a training batch.

    Returns (colors, loss, tape) with loss the mean squared error between
    rendered and ground-truth colors.  Raises DivergenceError on a
    non-finite loss.
    """
    if render_cfg.stratified and rng is None:
        raise ValueError("stratified sampling needs an rng")
    n = batch.origins.shape[0]
    n_samp = render_cfg.n_samples
    depths = sample_depths(render_cfg, rng, count=n)
    points = (batch.origins[:, None, :]
              + depths[..., None] * batch.directions[:, None, :])
    x_unit = bounds.to_unit(points.reshape(-1, 3))
    inside = ((x_unit >= 0.0) & (x_unit <= 1.0)).all(axis=1)

    out = enc.encode(x_unit, tables, enc_cfg, mode=mode)
    view_levels = params.config.view_enc_levels
    dir_enc = dec.sinusoidal_encode(batch.directions, view_levels)
    dir_enc_tiled = np.repeat(dir_enc, n_samp, axis=0)
    sigma, rgb, dtape = dec.decoder_forward(out.y, dir_enc_tiled, params)
    sigma = np.where(inside, sigma, 0.0)

    alphas, trans, weights, trans_end = compositing_weights(
        sigma.reshape(n, n_samp), depths)
    rgb_samples = rgb.reshape(n, n_samp, 3)
    colors = (weights[..., None] * rgb_samples).sum(axis=1)
    if render_cfg.white_background:
        colors = colors + trans_end[:, None]

    diff = colors - batch.gt_colors
    loss = float((diff * diff).mean())
    if not np.isfinite(loss):
        bad_sigma = int((~np.isfinite(sigma)).sum())
        bad_rgb = int((~np.isfinite(rgb)).sum())
        raise DivergenceError(
            f"non-finite loss {loss} ({bad_sigma} bad densities, "
            f"{bad_rgb} bad colors)")

    tape = RenderTape(batch=batch, depths=depths, inside=inside,
                      enc_ctx=out.context, dec_tape=dtape, rgb=rgb_samples,
                      alphas=alphas, trans=trans, weights=weights,
                      colors=colors, bounds=bounds, render_cfg=render_cfg,
                      view_levels=view_levels)
    return colors, loss, tape


def render_backward(tape: RenderTape, tables: enc.HashTables,
                    params: dec.DecoderParams) -> np.ndarray:
    """Backward pass of ``render_batch``.

    Accumulates table and decoder gradients into their owners and returns
    the per-camera twist gradients (n_cams, 6), chaining sample-position
    gradients through the scene normalization, the depth-scaled unit
    direction and the exponential-map Jacobians.
    """
    batch = tape.batch
    n, n_samp = tape.depths.shape
    bg = 1.0 if tape.render_cfg.white_background else 0.0

    diff = tape.colors - batch.gt_colors
    d_colors = 2.0 * diff / diff.size

    # compositing backward: reverse scan carrying the color composited
    # behind each sample
    d_rgb = tape.weights[..., None] * d_colors[:, None, :]
    d_alpha = np.empty((n, n_samp))
    behind = np.full((n, 3), bg)
    for i in range(n_samp - 1, -1, -1):
        d_alpha[:, i] = tape.trans[:, i] * (
            (tape.rgb[:, i] - behind) * d_colors).sum(axis=1)
        a = tape.alphas[:, i:i + 1]
        behind = a * tape.rgb[:, i] + (1.0 - a) * behind

    deltas = np.concatenate([
        np.diff(tape.depths, axis=-1),
        np.full((n, 1), TERMINAL_DELTA),
    ], axis=-1)
    d_sigma = d_alpha * deltas * (1.0 - tape.alphas)
    d_sigma = d_sigma.reshape(-1) * tape.inside

    d_y, d_dir_enc = dec.decoder_backward(d_sigma, d_rgb.reshape(-1, 3),
                                          tape.dec_tape, params)
    dx_unit = enc.encode_backward(d_y, tape.enc_ctx, tables)
    dx_world = (dx_unit / tape.bounds.extent).reshape(n, n_samp, 3)

    # view-direction path: per-ray sum over samples, back through the
    # sinusoidal encoding to the unit direction
    d_dir_unit = dec.sinusoidal_encode_backward(
        d_dir_enc.reshape(n, n_samp, -1).sum(axis=1), batch.directions,
        tape.view_levels)

    # position path: X_i = origin + depth_i * unit_dir
    g_origin = dx_world.sum(axis=1)
    g_dir_unit = (tape.depths[..., None] * dx_world).sum(axis=1) + d_dir_unit

    # through the direction normalization: K = (I - u u^T) / |d_un|
    u = batch.directions
    ku = (g_dir_unit - u * (u * g_dir_unit).sum(axis=1, keepdims=True))
    ku /= batch.dir_norms[:, None]

    d_psi_rays = np.einsum("nab,na->nb", batch.jac_origin[batch.cam_index],
                           g_origin)
    d_psi_rays[:, :3] += np.einsum("nab,na->nb", batch.jac_dir_omega, ku)

    d_psi = np.zeros((batch.jac_origin.shape[0], 6))
    np.add.at(d_psi, batch.cam_index, d_psi_rays)
    return d_psi


def model_field(tables: enc.HashTables, params: dec.DecoderParams,
                bounds: SceneBounds, enc_cfg: enc.EncodingConfig,
                mode: str = enc.RAW):
    """Wrap the learned model as a world-space field for ``render_rays``."""

    def field(points, view_dirs):
        x_unit = bounds.to_unit(points)
        inside = ((x_unit >= 0.0) & (x_unit <= 1.0)).all(axis=1)
        out = enc.encode(x_unit, tables, enc_cfg, mode=mode)
        dir_enc = dec.sinusoidal_encode(view_dirs,
                                        params.config.view_enc_levels)
        sigma, rgb, _ = dec.decoder_forward(out.y, dir_enc, params)
        return np.where(inside, sigma, 0.0), rgb

    return field
