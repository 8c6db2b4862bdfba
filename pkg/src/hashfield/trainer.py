"""Joint optimization of feature tables, decoder and camera twists.

Adam with exponentially decaying learning rates; the per-level table rates
are additionally weighted by a coarse-to-fine curriculum over a configured
fraction of the run.  Ablation flags select the interpolation-weighting
mode and toggle the curriculum, so the naive joint-optimization baseline is
the same code path with everything switched off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import decoder as dec
from . import encoding as enc
from . import pose as ps
from . import renderer as ren


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 1024
    lr_start: float = 5e-4
    lr_end: float = 1e-4
    pose_lr_start: float = 5e-4
    pose_lr_end: float = 1e-5
    pose_warmup: float = 0.0         # fraction of the run during which the
                                     # poses stay frozen, so steps against
                                     # the unformed scene cannot scatter
                                     # the cameras
    curriculum_start: float = 0.10   # fraction of the run
    curriculum_end: float = 0.50
    straight_through: bool = True
    smooth_grad: bool = True
    curriculum: bool = True
    seed: int = 0
    eval_fraction: float = 0.05

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if min(self.lr_start, self.lr_end, self.pose_lr_start,
               self.pose_lr_end) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.pose_warmup <= 1.0:
            raise ValueError("pose_warmup must be in [0, 1]")
        if not 0.0 <= self.curriculum_start < self.curriculum_end <= 1.0:
            raise ValueError("need 0 <= curriculum_start < curriculum_end <= 1")


def weighting_mode(config: TrainConfig) -> str:
    if config.straight_through:
        return enc.STRAIGHT_THROUGH
    if config.smooth_grad:
        return enc.SMOOTH
    return enc.RAW


@dataclass(frozen=True)
class CurriculumSchedule:
    """Level count and the step interval over which levels are unlocked."""

    n_levels: int
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("t_start must be < t_end")


def curriculum_weight(level: int, step: float,
                      schedule: CurriculumSchedule) -> float:
    """Learning-rate weight of one table level at one step.

    The progress variable grows linearly from 0 at t_start to n_levels at
    t_end (clamped outside the interval).  A level is silent while the
    progress is below its index, ramps up through half a cosine over one
    progress unit, and is fully active beyond that.
    """
    if not 1 <= level <= schedule.n_levels:
        raise ValueError("level out of range")
    span = schedule.t_end - schedule.t_start
    alpha = schedule.n_levels * (step - schedule.t_start) / span
    alpha = min(max(alpha, 0.0), float(schedule.n_levels))
    if alpha < level:
        return 0.0
    if alpha - level < 1.0:
        return (1.0 - math.cos((alpha - level) * math.pi)) / 2.0
    return 1.0


def curriculum_weights(step: float, schedule: CurriculumSchedule
                       ) -> np.ndarray:
    return np.array([curriculum_weight(l, step, schedule)
                     for l in range(1, schedule.n_levels + 1)])


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter family."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15

    @classmethod
    def like(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros(p.shape, dtype=np.float64) for p in params],
                   v=[np.zeros(p.shape, dtype=np.float64) for p in params],
                   **kw)


def adam_step(params, grads, state: AdamState, lr: float, scales=None):
    """One bias-corrected Adam update, in place.

    Args:
        params: list of parameter arrays (updated in place, their dtype
            preserved).
        grads: matching gradient arrays.
        state: moments for this family.
        lr: step size.
        scales: optional per-parameter multiplier on the step size, each
            broadcastable against its parameter (used for the level-wise
            table learning rates).

    Raises:
        FloatingPointError: any non-finite gradient.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient in Adam step")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        update = lr * (state.m[i] / bc1) / (np.sqrt(state.v[i] / bc2)
                                            + state.eps)
        if scales is not None:
            update = update * scales[i]
        p -= update.astype(p.dtype)
    return params


def exponential_lr(start: float, end: float, step: int, total: int) -> float:
    if total <= 1:
        return start
    frac = step / (total - 1)
    return start * (end / start) ** frac


@dataclass
class TrainResult:
    tables: enc.HashTables
    params: dec.DecoderParams
    twists: np.ndarray
    timeline: list            # dict rows: step, loss, psnr, rot/trans error
    diverged: bool = False


def _timeline_row(step, loss, dataset, twists):
    learned = [ps.exp_map(t) for t in twists]
    reference = [dataset.gt_poses[i] for i in dataset.train_indices]
    rot, trans, _ = ps.pose_set_errors(learned, reference)
    if math.isnan(loss):
        psnr = math.nan
    elif loss <= 0:
        psnr = 99.0
    else:
        psnr = min(-10.0 * math.log10(loss), 99.0)
    return {
        "step": step,
        "loss": loss,
        "psnr": psnr,
        "rot_err_deg": float(rot.mean()),
        "trans_err": float(trans.mean()),
    }


def train(dataset, enc_cfg: enc.EncodingConfig, dec_cfg: dec.DecoderConfig,
          render_cfg: ren.RenderConfig, train_cfg: TrainConfig,
          dtype=np.float32) -> TrainResult:
    """Run the joint optimization loop on a scene dataset.

    The dataset supplies images, intrinsics, scene bounds, ground-truth
    poses (for the metrics timeline only) and the initial camera twists.
    Deterministic for a fixed configuration and seed.
    """
    rng = np.random.default_rng(train_cfg.seed)
    tables = enc.HashTables.initialize(enc_cfg, rng, dtype=dtype)
    params = dec.DecoderParams.initialize(dec_cfg, enc_cfg.output_dim, rng,
                                          dtype=dtype)
    twists = np.array(dataset.initial_twists, dtype=np.float64).copy()
    mode = weighting_mode(train_cfg)

    table_adam = AdamState.like([tables.values])
    dec_names = params.tensor_names()
    dec_adam = AdamState.like([params.tensors[k] for k in dec_names])
    pose_adam = AdamState.like([twists])

    schedule = CurriculumSchedule(
        n_levels=enc_cfg.n_levels,
        t_start=train_cfg.curriculum_start * train_cfg.iterations,
        t_end=train_cfg.curriculum_end * train_cfg.iterations,
    ) if train_cfg.iterations > 0 else None

    train_ids = dataset.train_indices
    pix, cols = dataset.flat_train_pixels()
    n_pix = pix.shape[0]

    eval_every = max(1, int(round(train_cfg.eval_fraction
                                  * max(train_cfg.iterations, 1))))
    timeline = []
    snapshot = None
    diverged = False

    total = train_cfg.iterations
    for step in range(total):
        if step % eval_every == 0:
            snapshot = (tables.values.copy(),
                        {k: v.copy() for k, v in params.tensors.items()},
                        twists.copy())
        sel = rng.integers(0, n_pix, size=train_cfg.batch_rays)
        batch = ren.build_ray_batch(pix[sel, 1:3], pix[sel, 0].astype(int),
                                    twists, dataset.intrinsics, cols[sel])
        try:
            _, loss, tape = ren.render_batch(
                batch, tables, params, dataset.bounds, enc_cfg, render_cfg,
                mode=mode, rng=rng)
            tables.zero_grads()
            params.zero_grads()
            d_psi = ren.render_backward(tape, tables, params)

            lr = exponential_lr(train_cfg.lr_start, train_cfg.lr_end, step,
                                total)
            pose_lr = exponential_lr(train_cfg.pose_lr_start,
                                     train_cfg.pose_lr_end, step, total)
            if step < train_cfg.pose_warmup * total:
                pose_lr = 0.0
            if train_cfg.curriculum:
                rates = curriculum_weights(step, schedule)
            else:
                rates = np.ones(enc_cfg.n_levels)
            adam_step([tables.values], [tables.grads], table_adam, lr,
                      scales=[rates[:, None, None]])
            adam_step([params.tensors[k] for k in dec_names],
                      [params.grads[k] for k in dec_names], dec_adam, lr)
            adam_step([twists], [d_psi], pose_adam, pose_lr)
        except (ren.DivergenceError, FloatingPointError):
            if snapshot is not None:
                tables.values, saved, twists = (snapshot[0],
                                                snapshot[1], snapshot[2])
                params.tensors.update(saved)
            diverged = True
            break

        if (step + 1) % eval_every == 0 or step + 1 == total:
            timeline.append(_timeline_row(step + 1, loss, dataset, twists))

    if not timeline:
        # zero-iteration runs still report the initial pose quality
        timeline.append(_timeline_row(0, math.nan, dataset, twists))

    return TrainResult(tables=tables, params=params, twists=twists,
                       timeline=timeline, diverged=diverged)
