"""Multi-resolution hash grid encoding with hand-written gradients.

A point in the unit cube is looked up in L grids of exponentially growing
resolution.  Each grid vertex maps to a row of a per-level feature table,
either one-to-one (coarse levels) or through a spatial hash, and the 2^d
surrounding rows are d-linearly interpolated.  The backward pass is written
out explicitly so that the interpolation-weight gradients can be replaced by
a smoothed, straight-through variant without touching the forward values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Hashing primes in the Instant-NGP convention; the leading 1 keeps the
# first axis an identity map before the XOR.
DEFAULT_PRIMES = (1, 2654435761, 805459861)

# Weighting modes for the interpolation weights.
RAW = "raw"                            # plain d-linear weights everywhere
SMOOTH = "smooth"                      # cosine-activated weights in forward and backward
STRAIGHT_THROUGH = "straight_through"  # d-linear forward, smoothed backward

_MODES = (RAW, SMOOTH, STRAIGHT_THROUGH)

_WORD = np.uint64


@dataclass(frozen=True)
class EncodingConfig:
    """Static description of the multi-resolution encoding.

    Attributes:
        n_levels: number of resolution levels L.
        table_size: rows per level table; must be a power of two so the
            hash modulo reduces to a bitmask.
        n_features: feature width F of each table row.
        base_resolution: per-axis grid resolution of the coarsest level.
        finest_resolution: per-axis grid resolution of the finest level.
        n_dims: input dimensionality d (1, 2 or 3).
        st_mix: mixing coefficient of the smoothed backward weights in
            straight-through mode; 0 recovers raw gradients.
        hash_primes: one odd multiplier per axis for the spatial hash.
    """

    n_levels: int = 8
    table_size: int = 2 ** 14
    n_features: int = 2
    base_resolution: int = 4
    finest_resolution: int = 64
    n_dims: int = 3
    st_mix: float = 1.0
    hash_primes: tuple = DEFAULT_PRIMES

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.table_size < 1 or self.table_size & (self.table_size - 1) != 0:
            raise ValueError("table_size must be a power of two")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if not 1 <= self.base_resolution <= self.finest_resolution:
            raise ValueError("need 1 <= base_resolution <= finest_resolution")
        if self.n_dims not in (1, 2, 3):
            raise ValueError("n_dims must be 1, 2 or 3")
        if self.st_mix < 0:
            raise ValueError("st_mix must be >= 0")
        primes = tuple(self.hash_primes)
        if len(primes) < self.n_dims:
            raise ValueError("need one hash prime per axis")
        if len(set(primes[: self.n_dims])) != self.n_dims:
            raise ValueError("hash primes must be pairwise distinct")
        if any(p % 2 == 0 for p in primes[: self.n_dims]):
            raise ValueError("hash primes must be odd")

    @property
    def n_corners(self) -> int:
        return 2 ** self.n_dims

    @property
    def output_dim(self) -> int:
        return self.n_levels * self.n_features


@dataclass(frozen=True)
class LevelSpec:
    """One resolution level: 1-based index, per-axis resolution, and whether
    the (resolution+1)^d vertices fit the table without hashing."""

    level: int
    resolution: int
    dense: bool


def growth_factor(config: EncodingConfig) -> float:
    """Per-level geometric growth of the grid resolution (1.0 when L == 1)."""
    if config.n_levels == 1:
        return 1.0
    return math.exp(
        (math.log(config.finest_resolution) - math.log(config.base_resolution))
        / (config.n_levels - 1)
    )


def resolution_schedule(config: EncodingConfig) -> list[LevelSpec]:
    """Grid resolutions for all levels, coarsest to finest.

    Level l has resolution floor(base * b^(l-1)) with b the geometric
    growth factor between the configured end points.
    """
    if config.n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    if config.finest_resolution < config.base_resolution:
        raise ValueError("finest_resolution must be >= base_resolution")
    if config.n_levels == 1:
        log_step = 0.0
    else:
        log_step = (
            math.log(config.finest_resolution) - math.log(config.base_resolution)
        ) / (config.n_levels - 1)
    specs = []
    for l in range(1, config.n_levels + 1):
        # The 1e-9 guard keeps analytically integer resolutions (e.g. the
        # finest level) from rounding down through float error.
        value = config.base_resolution * math.exp((l - 1) * log_step)
        res = int(math.floor(value + 1e-9))
        dense = (res + 1) ** config.n_dims <= config.table_size
        specs.append(LevelSpec(level=l, resolution=res, dense=dense))
    return specs


@dataclass
class HashTables:
    """Trainable per-level feature tables and their gradient accumulator.

    values has shape (L, table_size, F).  Gradients are accumulated in
    float64 regardless of the value dtype.
    """

    values: np.ndarray
    grads: np.ndarray

    @classmethod
    def initialize(cls, config: EncodingConfig, rng: np.random.Generator,
                   dtype=np.float32) -> "HashTables":
        shape = (config.n_levels, config.table_size, config.n_features)
        values = rng.uniform(0.0, 1e-4, size=shape).astype(dtype)
        return cls(values=values, grads=np.zeros(shape, dtype=np.float64))

    def zero_grads(self):
        self.grads.fill(0.0)


def spatial_hash(corner, level: LevelSpec, config: EncodingConfig) -> int:
    """Table index of a single lattice vertex at the given level.

    Dense levels use the row-major vertex index; hashed levels XOR the
    per-axis products with the configured primes in 64-bit wrap-around
    arithmetic and mask down to the table size.
    """
    c = np.asarray(corner, dtype=np.int64)
    if c.shape != (config.n_dims,):
        raise ValueError(f"corner must have shape ({config.n_dims},)")
    if (c < 0).any():
        raise ValueError("corner components must be non-negative")
    return int(_table_indices(c[None, :], level, config)[0])


def _table_indices(corners: np.ndarray, level: LevelSpec,
                   config: EncodingConfig) -> np.ndarray:
    """Vectorized vertex -> table-row mapping. corners: (..., d) int64."""
    if level.dense:
        side = level.resolution + 1
        idx = corners[..., 0].astype(np.int64)
        for j in range(1, config.n_dims):
            idx = idx * side + corners[..., j]
        return idx
    acc = np.zeros(corners.shape[:-1], dtype=_WORD)
    with np.errstate(over="ignore"):
        for j in range(config.n_dims):
            acc ^= corners[..., j].astype(_WORD) * _WORD(config.hash_primes[j])
    return (acc & _WORD(config.table_size - 1)).astype(np.int64)


# Corner enumeration: corner i offsets axis j by bit j of i.
def _corner_bits(n_dims: int) -> np.ndarray:
    idx = np.arange(2 ** n_dims)
    return ((idx[:, None] >> np.arange(n_dims)[None, :]) & 1).astype(np.int64)


def _corner_indices_level(base_l: np.ndarray, spec: LevelSpec,
                          config: EncodingConfig,
                          bits: np.ndarray) -> np.ndarray:
    """Table rows of all 2^d corners of each cell, (n, C), from the lower
    corners (n, d).  Matches ``spatial_hash`` corner by corner but shares
    the per-axis products across corners."""
    d = config.n_dims
    if spec.dense:
        side = spec.resolution + 1
        strides = side ** np.arange(d - 1, -1, -1, dtype=np.int64)
        flat = base_l @ strides
        offsets = bits @ strides
        return flat[:, None] + offsets[None, :]
    out = np.empty((base_l.shape[0], bits.shape[0]), dtype=np.int64)
    mask = _WORD(config.table_size - 1)
    with np.errstate(over="ignore"):
        variants = []
        for j in range(d):
            cj = base_l[:, j].astype(_WORD)
            pj = _WORD(config.hash_primes[j])
            variants.append((cj * pj, (cj + _WORD(1)) * pj))
        for ci in range(bits.shape[0]):
            acc = variants[0][bits[ci, 0]]
            for j in range(1, d):
                acc = acc ^ variants[j][bits[ci, j]]
            out[:, ci] = (acc & mask).astype(np.int64)
    return out


def interp_weights(x_l, corners):
    """d-linear weights of a point against the corners of its cell.

    Args:
        x_l: point in level-scaled coordinates, shape (d,), inside the cell.
        corners: (2^d, d) lattice points spanning the unit cell around x_l.

    Returns:
        (w, dw_dx): weights (2^d,) summing to one and their derivatives
        (2^d, d) with respect to x_l.  The derivative sign on axis k is +1
        for the upper corner of the cell and -1 for the lower one, so the
        two corners of every cell edge carry exactly opposite derivatives.
    """
    x = np.asarray(x_l, dtype=np.float64)
    c = np.asarray(corners, dtype=np.float64)
    opposite = 1.0 - np.abs(x[None, :] - c)  # (2^d, d)
    w = np.prod(opposite, axis=1)
    upper = c == c.max(axis=0, keepdims=True)
    sign = np.where(upper, 1.0, -1.0)
    d = x.shape[0]
    dw = np.empty((c.shape[0], d))
    for k in range(d):
        masked = opposite.copy()
        masked[:, k] = 1.0
        dw[:, k] = sign[:, k] * np.prod(masked, axis=1)
    return w, dw


def smooth_weights(w, st_mix: float):
    """Straight-through reparameterization of a full d-linear weight set.

    The cosine activation delta(w) = (1 - cos(pi w)) / 2 enters the graph
    once attached and once detached, so the forward value stays the plain
    weight; the set is then renormalized by its sum, which is analytically
    one and only guards float drift.  The returned scale is the factor the
    backward pass applies to each weight gradient.

    Args:
        w: weights in [0, 1] forming a partition of unity.
        st_mix: mixing coefficient of the smoothed gradient.

    Returns:
        (w_hat, scale): forward weights (numerically equal to w) and the
        per-weight backward multiplier 1 + st_mix * (pi/2) * sin(pi w).
    """
    w = np.asarray(w, dtype=np.float64)
    if (w < -1e-9).any() or (w > 1.0 + 1e-9).any():
        raise ValueError("weights must lie in [0, 1]")
    w_hat = w / w.sum()
    scale = 1.0 + st_mix * (np.pi / 2.0) * np.sin(np.pi * w)
    return w_hat, scale


def cosine_activation(w):
    """delta(w) = (1 - cos(pi w)) / 2, zero-derivative at w in {0, 1}."""
    return (1.0 - np.cos(np.pi * np.asarray(w, dtype=np.float64))) / 2.0


@dataclass
class EncodingContext:
    """Forward state saved by ``encode`` for the manual backward pass."""

    config: EncodingConfig
    mode: str
    specs: list[LevelSpec]
    resolutions: np.ndarray     # (L,)
    x: np.ndarray               # (n, d) clamped inputs
    clamped: np.ndarray         # (n, d) bool, axes that were clipped to the cube
    scaled: np.ndarray          # (n, L, d) level-scaled coordinates
    base: np.ndarray            # (n, L, d) int64 lower cell corner
    frac: np.ndarray            # (n, L, d) in-cell offsets
    indices: np.ndarray         # (n, L, C) table rows per corner
    factors: list               # d arrays (n, L, C): per-axis opposite offsets
    weights_raw: np.ndarray     # (n, L, C) plain d-linear weights
    weights_used: np.ndarray    # (n, L, C) weights applied in the forward sum
    gathered: np.ndarray        # (n, L, C, F) table rows at the corners
    single: bool                # input was a lone point


@dataclass
class EncodingOutput:
    y: np.ndarray
    context: EncodingContext


def _cell_geometry(x: np.ndarray, resolutions: np.ndarray):
    """Scaled coordinates, cell base and in-cell offsets for a batch.

    A point landing exactly on an interior face belongs to the cell whose
    lower corner is floor(x_l); at the upper cube face the last cell is
    used so corner indices stay on the grid.
    """
    scaled = x[:, None, :] * resolutions[None, :, None]
    base = np.floor(scaled).astype(np.int64)
    top = resolutions.astype(np.int64)[None, :, None] - 1
    np.minimum(base, top, out=base)
    np.maximum(base, 0, out=base)
    frac = scaled - base
    return scaled, base, frac


def _axis_factors(frac: np.ndarray, bits: np.ndarray, dtype=None) -> list:
    """One (n, L, C) array per axis: the opposite 1D offset of each corner
    (frac for the upper corner of the cell edge, 1 - frac for the lower)."""
    fr = frac if dtype is None else frac.astype(dtype, copy=False)
    factors = []
    for j in range(frac.shape[-1]):
        fj = fr[:, :, None, j]
        factors.append(np.where(bits[None, None, :, j] == 1, fj, 1.0 - fj))
    return factors


def _weights_from_factors(factors: list) -> np.ndarray:
    w = factors[0]
    for f in factors[1:]:
        w = w * f
    return w


def encode(x, tables: HashTables, config: EncodingConfig,
           mode: str = STRAIGHT_THROUGH) -> EncodingOutput:
    """Encode points in the unit cube into concatenated level features.

    Args:
        x: (n, d) batch or a single (d,) point; values outside [0, 1] are
            clamped to the cube and the affected axes flagged in the context.
        tables: trainable feature tables.
        config: encoding layout.
        mode: weighting mode; ``straight_through`` and ``raw`` share the
            d-linear forward, ``smooth`` interpolates with the normalized
            cosine activation instead.

    Returns:
        EncodingOutput with y of shape (n, L*F) (or (L*F,) for a single
        point) and the context needed by ``encode_backward``.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != config.n_dims:
        raise ValueError(f"expected points of dimension {config.n_dims}")

    x_clamped = np.clip(x, 0.0, 1.0)
    clamped = x_clamped != x

    specs = resolution_schedule(config)
    resolutions = np.array([s.resolution for s in specs], dtype=np.float64)
    scaled, base, frac = _cell_geometry(x_clamped, resolutions)

    bits = _corner_bits(config.n_dims)  # (C, d)
    n = x.shape[0]
    L, C = config.n_levels, config.n_corners
    indices = np.empty((n, L, C), dtype=np.int64)
    for li, spec in enumerate(specs):
        indices[:, li] = _corner_indices_level(base[:, li], spec, config,
                                               bits)

    # weight arithmetic follows the table dtype (float32 training path,
    # float64 for the gradient checks)
    factors = _axis_factors(frac, bits, dtype=tables.values.dtype)
    weights_raw = _weights_from_factors(factors)

    if mode == RAW:
        weights_used = weights_raw
    elif mode == STRAIGHT_THROUGH:
        # Forward value is the plain weight; division by the (analytically
        # unit) sum only guards float drift.
        weights_used = weights_raw / weights_raw.sum(axis=-1, keepdims=True)
    else:
        delta = cosine_activation(weights_raw).astype(weights_raw.dtype)
        weights_used = delta / delta.sum(axis=-1, keepdims=True)

    flat_idx = (np.arange(L, dtype=np.int64)[None, :, None] * config.table_size
                + indices)
    gathered = tables.values.reshape(L * config.table_size, config.n_features)[
        flat_idx
    ]

    # (n, L, 1, C) @ (n, L, C, F) -> (n, L, 1, F)
    y = np.matmul(weights_used[:, :, None, :], gathered)
    y = y.reshape(n, L * config.n_features)

    ctx = EncodingContext(
        config=config, mode=mode, specs=specs, resolutions=resolutions,
        x=x_clamped, clamped=clamped, scaled=scaled, base=base, frac=frac,
        indices=indices, factors=factors, weights_raw=weights_raw,
        weights_used=weights_used, gathered=gathered, single=single,
    )
    return EncodingOutput(y=y[0] if single else y, context=ctx)


def _weight_jacobian(ctx: EncodingContext):
    """dw/dx_l per corner and axis, (n, L, C, d).

    Each column multiplies the opposite 1D offsets of all other axes with
    a sign of +1 for the upper corner of the edge and -1 for the lower;
    the two corners of an edge therefore get exactly opposite entries.
    """
    bits = _corner_bits(ctx.config.n_dims)
    factors = ctx.factors
    sign = (2.0 * bits - 1.0).astype(ctx.weights_raw.dtype)  # (C, d)
    d = ctx.config.n_dims
    out = np.empty(ctx.weights_raw.shape + (d,), dtype=ctx.weights_raw.dtype)
    for k in range(d):
        prod = None
        for j in range(d):
            if j == k:
                continue
            prod = factors[j] if prod is None else prod * factors[j]
        if prod is None:  # d == 1: empty product
            out[..., k] = sign[None, None, :, k]
        else:
            np.multiply(prod, sign[None, None, :, k], out=out[..., k])
    return out


def _st_scale(ctx: EncodingContext) -> np.ndarray:
    return 1.0 + ctx.config.st_mix * (np.pi / 2.0) * np.sin(
        np.pi * ctx.weights_raw
    )


def weight_gradients(dL_dy, ctx: EncodingContext) -> np.ndarray:
    """Gradient of the loss with respect to each interpolation weight.

    Diagnostic companion to ``encode_backward``: returns (n, L, C) entries
    d loss / d w under the context's weighting mode.
    """
    dL_dy = np.asarray(dL_dy, dtype=np.float64)
    if ctx.single and dL_dy.ndim == 1:
        dL_dy = dL_dy[None, :]
    n = ctx.x.shape[0]
    L, F = ctx.config.n_levels, ctx.config.n_features
    dl = dL_dy.reshape(n, L, F)
    g = np.einsum("nlcf,nlf->nlc", ctx.gathered.astype(np.float64), dl)
    if ctx.mode == RAW:
        return g
    if ctx.mode == STRAIGHT_THROUGH:
        return g * _st_scale(ctx)
    # smooth mode: differentiate g through delta and its normalization
    delta = cosine_activation(ctx.weights_raw)
    total = delta.sum(axis=-1, keepdims=True)
    ddelta = (np.pi / 2.0) * np.sin(np.pi * ctx.weights_raw)
    g_mean = (g * ctx.weights_used).sum(axis=-1, keepdims=True)
    return (g - g_mean) * ddelta / total


def encode_backward(dL_dy, ctx: EncodingContext, tables: HashTables):
    """Backward pass of ``encode``.

    Scatters the table gradients into ``tables.grads`` (accumulating across
    hash collisions, in float64) and returns the gradient with respect to
    the input points, including the level-resolution chain factor from the
    cube-to-grid scaling.  Axes clamped during the forward pass get a zero
    input gradient.
    """
    dL_dy = np.asarray(dL_dy, dtype=np.float64)
    if ctx.single and dL_dy.ndim == 1:
        dL_dy = dL_dy[None, :]
    n = ctx.x.shape[0]
    cfg = ctx.config
    L, C, F, T = cfg.n_levels, cfg.n_corners, cfg.n_features, cfg.table_size
    if dL_dy.shape != (n, L * F):
        raise ValueError(
            f"dL_dy has shape {dL_dy.shape}, expected {(n, L * F)}"
        )
    # arithmetic follows the table dtype; np.bincount accumulates the
    # scattered table gradients in float64 regardless
    wd = ctx.weights_used.dtype
    dl = dL_dy.astype(wd, copy=False).reshape(n, L, F)

    # Table gradients: the forward weight of each corner row.
    contrib = ctx.weights_used[..., None] * dl[:, :, None, :]
    flat_idx = (np.arange(L, dtype=np.int64)[None, :, None] * T + ctx.indices)
    flat = flat_idx.ravel()
    grads_flat = tables.grads.reshape(L * T, F)
    for f in range(F):
        grads_flat[:, f] += np.bincount(
            flat, weights=contrib[..., f].ravel(), minlength=L * T
        )

    # Input gradients through the interpolation weights.
    dw = _weight_jacobian(ctx)
    # (n, L, C, F) @ (n, L, F, 1) -> (n, L, C)
    g = np.matmul(ctx.gathered, dl[..., None])[..., 0]
    if ctx.mode == RAW:
        coeff = g
    elif ctx.mode == STRAIGHT_THROUGH:
        coeff = g * _st_scale(ctx)
    else:
        delta = cosine_activation(ctx.weights_raw).astype(wd)
        total = delta.sum(axis=-1, keepdims=True)
        ddelta = ((np.pi / 2.0) * np.sin(np.pi * ctx.weights_raw)).astype(wd)
        g_mean = (g * ctx.weights_used).sum(axis=-1, keepdims=True)
        coeff = (g - g_mean) * ddelta / total

    # chain the cube -> grid scaling per level, then contract corners
    coeff = coeff * ctx.resolutions.astype(wd)[None, :, None]
    dx = np.matmul(coeff.reshape(n, 1, L * C),
                   dw.reshape(n, L * C, ctx.config.n_dims))[:, 0, :]
    dx = dx.astype(np.float64)
    dx[ctx.clamped] = 0.0
    return dx[0] if ctx.single else dx


def analytic_input_jacobian(x, tables: HashTables, config: EncodingConfig,
                            mode: str = "raw") -> np.ndarray:
    """Closed-form Jacobian of the encoding at one strictly interior point.

    Args:
        x: (d,) point strictly inside a cell at every level.
        mode: "raw" for the exact piecewise-constant Jacobian of the
            d-linear forward, "smoothed" to apply the straight-through
            backward scale per corner.

    Returns:
        (L*F, d) array.  Raised ValueError if the point sits on a cell face
        at any level, where the raw Jacobian is undefined.
    """
    if mode not in ("raw", "smoothed"):
        raise ValueError("mode must be 'raw' or 'smoothed'")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (config.n_dims,):
        raise ValueError(f"x must have shape ({config.n_dims},)")
    enc_mode = RAW if mode == "raw" else STRAIGHT_THROUGH
    out = encode(x, tables, config, mode=enc_mode)
    ctx = out.context
    if np.any(ctx.frac == 0.0) or np.any(ctx.frac == 1.0) or ctx.clamped.any():
        raise ValueError("point lies on a cell face; Jacobian undefined there")
    dw = _weight_jacobian(ctx)
    if mode == "smoothed":
        dw = dw * _st_scale(ctx)[..., None]
    jac = np.einsum("nlcf,nlck,l->nlfk",
                    ctx.gathered.astype(np.float64), dw, ctx.resolutions)
    L, F = config.n_levels, config.n_features
    return jac.reshape(L * F, config.n_dims)


def derivative_profile_1d(table, resolution: int, n_samples: int,
                          mode: str = "raw", st_mix: float = 1.0):
    """Sample a one-level 1D encoding and its derivative for plotting.

    Args:
        table: (T,) feature values, one scalar per table row.  Indexed
            directly when the resolution+1 vertices fit, otherwise masked
            down like the spatial hash (T must then be a power of two).
        resolution: number of grid cells across [0, 1].
        n_samples: number of equally spaced sample points.
        mode: "raw" or "smoothed" derivative.
        st_mix: mixing coefficient used by the smoothed derivative.

    Returns:
        List of (x, h, dh_dx, mode) rows, one per sample.
    """
    if mode not in ("raw", "smoothed"):
        raise ValueError("mode must be 'raw' or 'smoothed'")
    values = np.asarray(table, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("table must be one-dimensional")
    size = values.shape[0]
    dense = resolution + 1 <= size
    if not dense and size & (size - 1) != 0:
        raise ValueError("hashed 1D table requires a power-of-two size")

    rows = []
    for i in range(n_samples):
        xv = (i + 0.5) / n_samples
        s = xv * resolution
        cell = min(int(math.floor(s)), resolution - 1)
        f = s - cell
        if dense:
            i0, i1 = cell, cell + 1
        else:
            i0, i1 = cell & (size - 1), (cell + 1) & (size - 1)
        v0, v1 = values[i0], values[i1]
        h = (1.0 - f) * v0 + f * v1
        dh = (v1 - v0) * resolution
        if mode == "smoothed":
            # both corner weights share sin(pi w), so one scale applies
            dh *= 1.0 + st_mix * (np.pi / 2.0) * math.sin(np.pi * f)
        rows.append((xv, float(h), float(dh), mode))
    return rows


def write_profile_csv(rows, path):
    """Write profile rows with the ``x,h,dh_dx,mode`` header."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x,h,dh_dx,mode\n")
        for x, h, dh, mode in rows:
            fh.write(f"{x!r},{h!r},{dh!r},{mode}\n")
