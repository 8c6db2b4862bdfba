"""Density/color decoding MLP with hand-written reverse-mode gradients.

A ReLU trunk consumes the positional encoding.  The density head is a
softplus over one trunk output (kept soft so pose gradients survive in
empty space); the color head concatenates a trunk feature with the
sinusoidally encoded view direction, passes one hidden layer and squashes
through a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 4            # trunk hidden layers
    width: int = 256          # hidden units
    view_enc_levels: int = 4  # sinusoidal levels for view directions
    sigma_bias: float = 0.0   # initial density-head bias; negative values
                              # start the field near-empty so the color
                              # head cannot paint the images into fog
                              # before geometry forms

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        if self.view_enc_levels < 1:
            raise ValueError("view_enc_levels must be >= 1")

    @property
    def dir_enc_dim(self) -> int:
        return 3 * 2 * self.view_enc_levels


def sinusoidal_encode(dirs, levels: int) -> np.ndarray:
    """Per-axis cos/sin features at frequencies 2^l pi, l = 0..levels-1.

    dirs: (..., 3).  Returns (..., 3 * 2 * levels) ordered level-major,
    then axis, then (cos, sin).
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    dirs = np.asarray(dirs, dtype=np.float64)
    freqs = (2.0 ** np.arange(levels)) * np.pi
    ang = dirs[..., None, :] * freqs[:, None]          # (..., levels, 3)
    enc = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return enc.reshape(*dirs.shape[:-1], 3 * 2 * levels)


def sinusoidal_encode_backward(dL_denc, dirs, levels: int) -> np.ndarray:
    """Chain upstream encoding gradients back to the raw directions."""
    dirs = np.asarray(dirs, dtype=np.float64)
    dL = np.asarray(dL_denc, dtype=np.float64).reshape(
        *dirs.shape[:-1], levels, 3, 2)
    freqs = (2.0 ** np.arange(levels)) * np.pi
    ang = dirs[..., None, :] * freqs[:, None]
    dcos = -np.sin(ang) * freqs[:, None]
    dsin = np.cos(ang) * freqs[:, None]
    return (dL[..., 0] * dcos + dL[..., 1] * dsin).sum(axis=-2)


_TENSOR_ORDER = ("trunk", "sigma_head", "feature", "color_hidden",
                 "color_out")


@dataclass
class DecoderParams:
    """Weights, biases and matching gradient accumulators.

    Tensors are kept in a flat name -> array dict; ``tensor_names`` fixes
    the ordering used by the optimizer and the checkpoint format.
    """

    config: DecoderConfig
    in_dim: int
    tensors: dict
    grads: dict

    @classmethod
    def initialize(cls, config: DecoderConfig, in_dim: int,
                   rng: np.random.Generator, dtype=np.float32
                   ) -> "DecoderParams":
        """He-uniform weights, zero biases."""
        tensors = {}

        def layer(name, fan_in, fan_out):
            limit = np.sqrt(6.0 / fan_in)
            tensors[f"{name}.w"] = rng.uniform(
                -limit, limit, size=(fan_in, fan_out)).astype(dtype)
            tensors[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)

        last = in_dim
        for i in range(config.depth):
            layer(f"trunk.{i}", last, config.width)
            last = config.width
        layer("sigma_head", config.width, 1)
        tensors["sigma_head.b"][:] = config.sigma_bias
        layer("feature", config.width, config.width)
        layer("color_hidden", config.width + config.dir_enc_dim, config.width)
        layer("color_out", config.width, 3)
        grads = {k: np.zeros(v.shape, dtype=np.float64)
                 for k, v in tensors.items()}
        return cls(config=config, in_dim=in_dim, tensors=tensors, grads=grads)

    def tensor_names(self):
        return list(self.tensors.keys())

    def zero_grads(self):
        for g in self.grads.values():
            g.fill(0.0)


def softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class DecoderTape:
    """Saved activations for the backward pass of one forward batch."""

    y: np.ndarray
    dir_enc: np.ndarray
    trunk_acts: list          # post-ReLU activations, one per trunk layer
    sigma_pre: np.ndarray
    color_in: np.ndarray      # trunk feature joined with the view encoding
    color_act: np.ndarray     # post-ReLU hidden of the color head
    rgb: np.ndarray


def decoder_forward(y, dir_enc, params: DecoderParams):
    """Map encodings and encoded view directions to (sigma, rgb).

    Args:
        y: (n, in_dim) positional encodings.
        dir_enc: (n, dir_enc_dim) sinusoidally encoded view directions.
        params: decoder parameters.

    Returns:
        (sigma, rgb, tape): non-negative densities (n,), colors (n, 3)
        in (0, 1), and the tape consumed by ``decoder_backward``.
    """
    y = np.asarray(y)
    dir_enc = np.asarray(dir_enc)
    cfg = params.config
    if y.ndim != 2 or y.shape[1] != params.in_dim:
        raise ValueError(f"y must have shape (n, {params.in_dim})")
    if dir_enc.shape != (y.shape[0], cfg.dir_enc_dim):
        raise ValueError(
            f"dir_enc must have shape (n, {cfg.dir_enc_dim})")
    t = params.tensors

    h = y
    trunk_acts = []
    for i in range(cfg.depth):
        h = h @ t[f"trunk.{i}.w"] + t[f"trunk.{i}.b"]
        np.maximum(h, 0.0, out=h)
        trunk_acts.append(h)
    sigma_pre = (h @ t["sigma_head.w"] + t["sigma_head.b"])[:, 0]
    sigma = softplus(sigma_pre)
    feature = h @ t["feature.w"] + t["feature.b"]
    color_in = np.concatenate([feature, dir_enc.astype(feature.dtype)],
                              axis=1)
    ch = color_in @ t["color_hidden.w"] + t["color_hidden.b"]
    np.maximum(ch, 0.0, out=ch)
    rgb = sigmoid(ch @ t["color_out.w"] + t["color_out.b"])
    tape = DecoderTape(y=y, dir_enc=dir_enc, trunk_acts=trunk_acts,
                       sigma_pre=sigma_pre, color_in=color_in, color_act=ch,
                       rgb=rgb)
    return sigma, rgb, tape


def decoder_backward(dL_dsigma, dL_drgb, tape: DecoderTape,
                     params: DecoderParams):
    """Exact reverse-mode pass through the decoder.

    Accumulates parameter gradients into ``params.grads`` (float64) and
    returns (dL_dy, dL_ddir_enc) for the encoding and view-direction
    chains.
    """
    cfg = params.config
    t = params.tensors
    g = params.grads
    n = tape.y.shape[0]
    # arithmetic follows the tape/parameter dtype; the += into the float64
    # grad accumulators upcasts the results
    wd = tape.color_act.dtype
    dL_dsigma = np.asarray(dL_dsigma).astype(wd, copy=False)
    dL_drgb = np.asarray(dL_drgb).astype(wd, copy=False)
    if dL_dsigma.shape != (n,) or dL_drgb.shape != (n, 3):
        raise ValueError("upstream gradient shapes do not match the tape")

    # color head
    rgb = tape.rgb
    d_rgb_pre = dL_drgb * rgb * (1.0 - rgb)
    g["color_out.w"] += tape.color_act.T @ d_rgb_pre
    g["color_out.b"] += d_rgb_pre.sum(axis=0)
    d_ch = d_rgb_pre @ t["color_out.w"].T
    d_ch *= tape.color_act > 0
    g["color_hidden.w"] += tape.color_in.T @ d_ch
    g["color_hidden.b"] += d_ch.sum(axis=0)
    d_color_in = d_ch @ t["color_hidden.w"].T
    d_feature = d_color_in[:, : cfg.width]
    dL_ddir_enc = d_color_in[:, cfg.width:]

    # density head
    d_sigma_pre = dL_dsigma * sigmoid(tape.sigma_pre)
    trunk_out = tape.trunk_acts[-1]
    g["sigma_head.w"] += trunk_out.T @ d_sigma_pre[:, None]
    g["sigma_head.b"] += d_sigma_pre.sum()

    # feature head then trunk
    g["feature.w"] += trunk_out.T @ d_feature
    g["feature.b"] += d_feature.sum(axis=0)
    d_h = (d_sigma_pre[:, None] @ t["sigma_head.w"].T
           + d_feature @ t["feature.w"].T)
    for i in reversed(range(cfg.depth)):
        d_h = d_h * (tape.trunk_acts[i] > 0)
        prev = tape.y if i == 0 else tape.trunk_acts[i - 1]
        g[f"trunk.{i}.w"] += prev.T @ d_h
        g[f"trunk.{i}.b"] += d_h.sum(axis=0)
        d_h = d_h @ t[f"trunk.{i}.w"].T
    return d_h, dL_ddir_enc
