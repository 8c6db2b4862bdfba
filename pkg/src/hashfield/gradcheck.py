"""Finite-difference verification of every hand-written gradient family.

All checks run in float64.  The encoding and render checks use the plain
d-linear weighting: the straight-through estimator intentionally alters
backward weights away from the true derivative, so only the raw mode can
agree with finite differences of the forward pass.
"""

from __future__ import annotations

import numpy as np

from . import decoder as dec
from . import encoding as enc
from . import pose as ps
from . import renderer as ren


def interior_points(config: enc.EncodingConfig, rng: np.random.Generator,
                    count: int, margin_cells: float = 2e-3) -> np.ndarray:
    """Sample points keeping the given margin (in cell widths) to every
    cell face at every level."""
    specs = enc.resolution_schedule(config)
    res = np.array([s.resolution for s in specs], dtype=np.float64)
    points = []
    while len(points) < count:
        x = rng.uniform(0.0, 1.0, size=(4 * count, config.n_dims))
        scaled = x[:, None, :] * res[None, :, None]
        frac = scaled - np.floor(scaled)
        ok = ((frac > margin_cells) & (frac < 1.0 - margin_cells)).all(
            axis=(1, 2))
        points.extend(x[ok])
    return np.array(points[:count])


def check_encoding(seed: int = 0, n_points: int = 200,
                   config: enc.EncodingConfig | None = None) -> dict:
    """encode_backward input gradients against central differences."""
    cfg = config or enc.EncodingConfig(n_levels=8, table_size=2 ** 14,
                                       n_features=2, base_resolution=4,
                                       finest_resolution=64, n_dims=3)
    rng = np.random.default_rng(seed)
    tables = enc.HashTables.initialize(cfg, rng, dtype=np.float64)
    tables.values = rng.standard_normal(tables.values.shape)
    g = rng.standard_normal(cfg.output_dim)
    xs = interior_points(cfg, rng, n_points)
    # the raw forward is linear along each axis inside a cell, so any
    # cell-safe step gives an exact difference quotient
    h = 1e-3 / cfg.finest_resolution

    out = enc.encode(xs, tables, cfg, mode=enc.RAW)
    dx = enc.encode_backward(np.tile(g, (n_points, 1)), out.context, tables)

    def loss(p):
        return float(g @ enc.encode(p, tables, cfg, mode=enc.RAW).y)

    worst = 0.0
    for i in range(n_points):
        for k in range(cfg.n_dims):
            step = np.zeros(cfg.n_dims)
            step[k] = h
            fd = (loss(xs[i] + step) - loss(xs[i] - step)) / (2 * h)
            err = abs(dx[i, k] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
    return {"family": "encoding", "max_rel_err": worst, "points": n_points}


def check_decoder(seed: int = 0, n_probe: int = 25) -> dict:
    """Decoder parameter and input gradients against central differences."""
    cfg = dec.DecoderConfig(depth=3, width=24, view_enc_levels=3)
    rng = np.random.default_rng(seed)
    params = dec.DecoderParams.initialize(cfg, 12, rng, dtype=np.float64)
    t = params.tensors
    # probe inputs away from the ReLU kinks
    while True:
        y = rng.standard_normal((8, 12))
        de = rng.standard_normal((8, cfg.dir_enc_dim))
        h_act = y
        margins = []
        for i in range(cfg.depth):
            pre = h_act @ t[f"trunk.{i}.w"] + t[f"trunk.{i}.b"]
            margins.append(np.abs(pre).min())
            h_act = np.maximum(pre, 0.0)
        feat = h_act @ t["feature.w"] + t["feature.b"]
        pre = np.concatenate([feat, de], 1) @ t["color_hidden.w"] \
            + t["color_hidden.b"]
        margins.append(np.abs(pre).min())
        if min(margins) >= 1e-3:
            break
    gs = rng.standard_normal(8)
    gc = rng.standard_normal((8, 3))

    def loss():
        sigma, rgb, _ = dec.decoder_forward(y, de, params)
        return float((gs * sigma).sum() + (gc * rgb).sum())

    _, _, tape = dec.decoder_forward(y, de, params)
    params.zero_grads()
    dy, ddir = dec.decoder_backward(gs, gc, tape, params)

    step = 1e-6
    worst = 0.0
    probe_rng = np.random.default_rng(seed + 1)
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        idx = probe_rng.choice(flat.size, size=min(n_probe, flat.size),
                               replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = loss()
            flat[i] = orig - step
            lo = loss()
            flat[i] = orig
            fd = (hi - lo) / (2 * step)
            got = params.grads[name].reshape(-1)[i]
            worst = max(worst, abs(got - fd) / max(abs(fd), 1e-4))
    for arr, grad in ((y, dy), (de, ddir)):
        flat = arr.reshape(-1)
        idx = probe_rng.choice(flat.size, size=min(n_probe, flat.size),
                               replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = loss()
            flat[i] = orig - step
            lo = loss()
            flat[i] = orig
            fd = (hi - lo) / (2 * step)
            worst = max(worst, abs(grad.reshape(-1)[i] - fd)
                        / max(abs(fd), 1e-4))
    return {"family": "decoder", "max_rel_err": worst}


def check_pose(seed: int = 0, n_rays: int = 20) -> dict:
    """generate_ray's world-point Jacobian against central differences."""
    rng = np.random.default_rng(seed)
    intr = ps.Intrinsics(focal=80.0, cx=32.0, cy=32.0, width=64, height=64)
    worst = 0.0
    for _ in range(n_rays):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        psi = np.concatenate([rng.uniform(0, 2.8) * axis,
                              rng.uniform(-2, 2, 3)])
        pixel = rng.uniform(0, 64, 2)
        _, jac = ps.generate_ray(pixel, intr, ps.exp_map(psi),
                                 twist=ps.Twist.from_vector(psi))
        d_cam = ps.pixel_direction(pixel, intr)
        fd = np.empty((3, 6))
        h = 1e-6
        for k in range(6):
            step = np.zeros(6)
            step[k] = h
            hi = ps.exp_map(psi + step)
            lo = ps.exp_map(psi - step)
            fd[:, k] = ((hi.R @ d_cam + hi.t) - (lo.R @ d_cam + lo.t)) \
                / (2 * h)
        worst = max(worst, float(np.abs(jac - fd).max()
                                 / max(np.abs(fd).max(), 1e-9)))
    return {"family": "pose", "max_rel_err": worst}


def _micro_scene(seed: int):
    enc_cfg = enc.EncodingConfig(n_levels=2, table_size=2 ** 8,
                                 n_features=2, base_resolution=2,
                                 finest_resolution=8, n_dims=3)
    dec_cfg = dec.DecoderConfig(depth=2, width=8, view_enc_levels=2)
    rng = np.random.default_rng(seed)
    tables = enc.HashTables.initialize(enc_cfg, rng, dtype=np.float64)
    tables.values = 0.5 * rng.standard_normal(tables.values.shape)
    params = dec.DecoderParams.initialize(dec_cfg, enc_cfg.output_dim, rng,
                                          dtype=np.float64)
    bounds = ren.SceneBounds.with_margin([-1, -1, -1], [1, 1, 1])
    intr = ps.Intrinsics(focal=48.0, cx=16.0, cy=16.0, width=32, height=32)
    n_cams = 2
    twists = []
    for i in range(n_cams):
        az = 2 * np.pi * i / n_cams + 0.3
        el = 0.35 * (1 if i % 2 == 0 else -1)
        eye = 4.0 * np.array([np.cos(az) * np.cos(el),
                              np.sin(az) * np.cos(el), np.sin(el)])
        from .scene import look_at_pose
        twists.append(ps.log_map(look_at_pose(eye)).vector)
    twists = np.stack(twists)
    cfg = ren.RenderConfig(n_samples=16, t_near=2.5, t_far=5.5,
                           stratified=False, white_background=True)
    pixels = rng.uniform(8, 24, size=(4, 2))
    cams = rng.integers(0, n_cams, size=4)
    gt = rng.uniform(0, 1, size=(4, 3))
    batch = ren.build_ray_batch(pixels, cams, twists, intr, gt)

    _, _, tape = ren.render_batch(batch, tables, params, bounds, enc_cfg,
                                  cfg, mode=enc.RAW)
    points = (batch.origins[:, None, :]
              + tape.depths[..., None] * batch.directions[:, None, :])
    xu = bounds.to_unit(points.reshape(-1, 3))
    inside = tape.inside
    safe = True
    if inside.any():
        frac = tape.enc_ctx.frac[inside]
        safe &= min(frac.min(), (1 - frac).min()) > 1e-4
        safe &= np.minimum(xu[inside], 1 - xu[inside]).min() > 1e-4
    if (~inside).any():
        safe &= np.maximum(-xu[~inside],
                           xu[~inside] - 1).max(axis=1).min() > 1e-4
    return safe, (tables, params, bounds, enc_cfg, cfg, intr, pixels, cams,
                  gt, twists)


def check_render(seed: int = 0) -> dict:
    """Twist gradients of the batch loss against central differences on a
    4-ray, 16-sample micro-scene (interior-safe seeds only)."""
    safe, setup = _micro_scene(seed)
    attempt = seed
    while not safe:
        attempt += 1000
        safe, setup = _micro_scene(attempt)
    tables, params, bounds, enc_cfg, cfg, intr, pixels, cams, gt, twists = \
        setup

    def loss_fn(tw):
        b = ren.build_ray_batch(pixels, cams, tw, intr, gt)
        _, loss, _ = ren.render_batch(b, tables, params, bounds, enc_cfg,
                                      cfg, mode=enc.RAW)
        return loss

    batch = ren.build_ray_batch(pixels, cams, twists, intr, gt)
    tables.zero_grads()
    params.zero_grads()
    _, _, tape = ren.render_batch(batch, tables, params, bounds, enc_cfg,
                                  cfg, mode=enc.RAW)
    d_psi = ren.render_backward(tape, tables, params)
    h = 1e-6
    fd = np.zeros_like(d_psi)
    for c in range(twists.shape[0]):
        for k in range(6):
            tw = twists.copy()
            tw[c, k] += h
            hi = loss_fn(tw)
            tw[c, k] -= 2 * h
            lo = loss_fn(tw)
            fd[c, k] = (hi - lo) / (2 * h)
    scale = max(float(np.abs(fd).max()), 1e-12)
    return {"family": "render",
            "max_rel_err": float(np.abs(d_psi - fd).max() / scale)}


TOLERANCES = {
    "encoding": 1e-6,
    "decoder": 1e-5,
    "pose": 1e-6,
    "render": 1e-4,
}

_CHECKS = {
    "encoding": check_encoding,
    "decoder": check_decoder,
    "pose": check_pose,
    "render": check_render,
}


def run_gradcheck(module: str = "all", seeds=range(5)) -> tuple[bool, list]:
    """Run the selected family (or all) over the seeds.

    Returns (all_passed, results) where each result carries the family,
    seed, max relative error and its tolerance.
    """
    if module == "all":
        names = list(_CHECKS)
    elif module in _CHECKS:
        names = [module]
    else:
        raise ValueError(f"unknown module {module!r}; expected one of "
                         f"{['all'] + list(_CHECKS)}")
    results = []
    ok = True
    for name in names:
        for seed in seeds:
            res = _CHECKS[name](seed=seed)
            res["seed"] = seed
            res["tolerance"] = TOLERANCES[name]
            res["passed"] = res["max_rel_err"] < res["tolerance"]
            ok &= res["passed"]
            results.append(res)
    return ok, results
