"""Multi-resolution hashed feature grid over the scene box.

A point is normalized into [0,1]^3, and per level the 8 surrounding grid
vertices are looked up (direct index while the dense vertex lattice fits in
the table, spatial hash above that) and trilinearly interpolated. Level
outputs are concatenated coarse-to-fine.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .geometry import Box


@dataclass(frozen=True)
class HashGridConfig:
    bound: Box
    levels: int = 18
    features: int = 8
    table_log2: int = 19
    base_res: int = 16
    finest_res: int = 512

    def __post_init__(self):
        if self.levels < 1 or self.features < 1:
            raise ValidationError("levels and features must be >= 1")
        if not 4 <= self.table_log2 <= 24:
            raise ValidationError(f"table_log2 must be in [4,24], got {self.table_log2}")
        if self.base_res < 1 or self.finest_res < self.base_res:
            raise ValidationError("need 1 <= base_res <= finest_res")

    @property
    def table_size(self):
        return 1 << self.table_log2

    @property
    def output_dim(self):
        return self.levels * self.features

    @property
    def growth_factor(self):
        if self.levels == 1:
            return 1.0
        return (self.finest_res / self.base_res) ** (1.0 / (self.levels - 1))

    def level_resolutions(self):
        b = self.growth_factor
        return np.array(
            [int(np.floor(self.base_res * b**lev)) for lev in range(self.levels)],
            dtype=np.int64,
        )

    def level_direct(self):
        """1 where the dense vertex lattice fits the table (no collisions)."""
        res = self.level_resolutions()
        return ((res + 1) ** 3 <= self.table_size).astype(np.int64)


@dataclass
class HashGridParams:
    tables: np.ndarray  # (levels, table_size, features)

    @property
    def dtype(self):
        return self.tables.dtype


def init_grid_params(cfg, rng, dtype=np.float32, init_scale=1e-4):
    """Uniform [-init_scale, init_scale] table initialization."""
    shape = (cfg.levels, cfg.table_size, cfg.features)
    tables = rng.uniform(-init_scale, init_scale, size=shape).astype(dtype)
    return HashGridParams(tables=tables)


def normalize_points(cfg, points, check=True):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if check and not np.all(cfg.bound.contains(pts)):
        bad = int(np.flatnonzero(~cfg.bound.contains(pts))[0])
        raise ValueError(f"point {pts[bad]} outside scene bound")
    span = cfg.bound.hi - cfg.bound.lo
    return (pts - cfg.bound.lo) / span


def encode_batch(cfg, params, points, check=True):
    """Encode (B,3) world points to (B, levels*features)."""
    pts01 = normalize_points(cfg, points, check=check).astype(params.dtype)
    return kernels.encode_fwd(
        pts01, params.tables, cfg.level_resolutions(), cfg.level_direct()
    )


def encode(cfg, params, point):
    """Encode a single world point to a (levels*features,) vector."""
    return encode_batch(cfg, params, np.asarray(point).reshape(1, 3))[0]


def encode_backward(cfg, params, point, upstream_grad, want_point_grad=True):
    """Gradients of `encode` w.r.t. table entries and the input point.

    Returns (grad_tables, grad_point). grad_tables is dense with at most
    8 touched rows per level; grad_point is in world units.
    """
    grad_tables, grad_points = encode_batch_backward(
        cfg,
        params,
        np.asarray(point, dtype=np.float64).reshape(1, 3),
        np.asarray(upstream_grad).reshape(1, -1),
        want_point_grad=want_point_grad,
    )
    return grad_tables, grad_points[0]


def encode_batch_backward(cfg, params, points, upstream, want_point_grad=False, check=True):
    pts01 = normalize_points(cfg, points, check=check).astype(params.dtype)
    upstream = np.ascontiguousarray(upstream, dtype=params.dtype)
    if upstream.shape != (pts01.shape[0], cfg.output_dim):
        raise ValueError(
            f"upstream shape {upstream.shape} != {(pts01.shape[0], cfg.output_dim)}"
        )
    grad_tables, grad_pts01 = kernels.encode_bwd(
        pts01,
        params.tables,
        cfg.level_resolutions(),
        cfg.level_direct(),
        upstream,
        want_point_grad,
    )
    span = (cfg.bound.hi - cfg.bound.lo).astype(grad_pts01.dtype)
    grad_points = grad_pts01 / span
    return grad_tables, grad_points
