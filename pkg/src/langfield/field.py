"""Neural field: hash encoding -> ReLU trunk -> density/RGB head + feature head.

There is deliberately no viewing-direction input anywhere: outputs depend on
position only. Density uses softplus, color logistic, the feature head is a
raw affine readout (supervision targets live in an unbounded embedding space
and are compared by dot product downstream).
"""

from dataclasses import dataclass

import numpy as np

from . import hashgrid, kernels
from .errors import ValidationError
from .hashgrid import HashGridConfig, HashGridParams, init_grid_params


@dataclass(frozen=True)
class MlpConfig:
    trunk_layers: int = 2
    trunk_width: int = 512
    feature_dim: int = 512

    def __post_init__(self):
        if self.trunk_layers < 1 or self.trunk_width < 1 or self.feature_dim < 1:
            raise ValidationError("trunk_layers, trunk_width, feature_dim must be >= 1")


@dataclass(frozen=True)
class FieldConfig:
    grid: HashGridConfig
    mlp: MlpConfig

    def __post_init__(self):
        # trunk input width must equal the hash output width
        if self.grid.output_dim < 1:
            raise ValidationError("hash encoding has zero output width")


@dataclass
class FieldParams:
    grid: HashGridParams
    trunk_w: list[np.ndarray]  # layer i: (in, width)
    trunk_b: list[np.ndarray]  # layer i: (width,)
    geo_w: np.ndarray  # (width, 4): raw sigma + raw rgb
    geo_b: np.ndarray  # (4,)
    feat_w: np.ndarray  # (width, D)
    feat_b: np.ndarray  # (D,)

    @property
    def dtype(self):
        return self.geo_w.dtype

    def named_arrays(self):
        """Fixed-order (name, array) pairs covering every trainable tensor."""
        items = [("grid.tables", self.grid.tables)]
        for i, (w, b) in enumerate(zip(self.trunk_w, self.trunk_b)):
            items.append((f"trunk.{i}.w", w))
            items.append((f"trunk.{i}.b", b))
        items += [
            ("geo.w", self.geo_w),
            ("geo.b", self.geo_b),
            ("feat.w", self.feat_w),
            ("feat.b", self.feat_b),
        ]
        return items

    def copy(self):
        return FieldParams(
            grid=HashGridParams(tables=self.grid.tables.copy()),
            trunk_w=[w.copy() for w in self.trunk_w],
            trunk_b=[b.copy() for b in self.trunk_b],
            geo_w=self.geo_w.copy(),
            geo_b=self.geo_b.copy(),
            feat_w=self.feat_w.copy(),
            feat_b=self.feat_b.copy(),
        )


@dataclass
class PointOutput:
    sigma: float
    color: np.ndarray  # (3,) in [0,1]
    feature: np.ndarray  # (D,)


def init_field_params(cfg, seed=0, dtype=np.float32):
    """Kaiming fan-in init for the ReLU trunk, linear scaling for the heads."""
    rng = np.random.default_rng(seed)
    grid = init_grid_params(cfg.grid, rng, dtype=dtype)
    widths = [cfg.grid.output_dim] + [cfg.mlp.trunk_width] * cfg.mlp.trunk_layers
    trunk_w, trunk_b = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        trunk_w.append(
            (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        )
        trunk_b.append(np.zeros(fan_out, dtype=dtype))
    width = cfg.mlp.trunk_width
    geo_w = (rng.standard_normal((width, 4)) * np.sqrt(1.0 / width)).astype(dtype)
    feat_w = (rng.standard_normal((width, cfg.mlp.feature_dim)) * np.sqrt(1.0 / width)).astype(
        dtype
    )
    return FieldParams(
        grid=grid,
        trunk_w=trunk_w,
        trunk_b=trunk_b,
        geo_w=geo_w,
        geo_b=np.zeros(4, dtype=dtype),
        feat_w=feat_w,
        feat_b=np.zeros(cfg.mlp.feature_dim, dtype=dtype),
    )


def softplus(x):
    # overflow-safe log(1 + e^x)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(-np.abs(x)))).astype(
        x.dtype
    )


def logistic(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _mm(a, b, deterministic):
    if deterministic:
        return kernels.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return a @ b


def _mm_tn(a, g, deterministic):
    if deterministic:
        return kernels.matmul_tn(np.ascontiguousarray(a), np.ascontiguousarray(g))
    return a.T @ g


@dataclass
class FieldCache:
    """Intermediates of a forward pass, reused by the backward pass."""

    points: np.ndarray
    encoding: np.ndarray
    pre: list[np.ndarray]  # pre-activations per trunk layer
    hidden: np.ndarray  # trunk output (post ReLU)
    raw_geo: np.ndarray  # (B,4)
    sigma: np.ndarray
    color: np.ndarray
    feature: np.ndarray


def forward_batch(cfg, params, points, deterministic=True, check_bound=True):
    """Evaluate (B,3) points; returns (sigma, color, feature, cache)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    enc = hashgrid.encode_batch(cfg.grid, params.grid, points, check=check_bound)
    h = enc
    pre_list = []
    for w, b in zip(params.trunk_w, params.trunk_b):
        pre = _mm(h, w, deterministic) + b
        pre_list.append(pre)
        h = np.maximum(pre, 0)
    # both heads in one matmul: a 4-wide product vectorizes poorly on its own
    heads = _mm(h, np.concatenate([params.geo_w, params.feat_w], axis=1), deterministic)
    raw_geo = heads[:, :4] + params.geo_b
    feature = heads[:, 4:] + params.feat_b
    sigma = softplus(raw_geo[:, 0])
    color = logistic(raw_geo[:, 1:4])
    cache = FieldCache(
        points=points,
        encoding=enc,
        pre=pre_list,
        hidden=h,
        raw_geo=raw_geo,
        sigma=sigma,
        color=color,
        feature=feature,
    )
    return sigma, color, feature, cache


def eval_points_batch(cfg, params, points, deterministic=True):
    """Batched field evaluation; bitwise equal to per-point evaluation when
    deterministic is on."""
    sigma, color, feature, _ = forward_batch(cfg, params, points, deterministic)
    return sigma, color, feature


def eval_point(cfg, params, point):
    sigma, color, feature = eval_points_batch(cfg, params, np.asarray(point).reshape(1, 3))
    return PointOutput(sigma=float(sigma[0]), color=color[0], feature=feature[0])


def zero_grads(params):
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays()}


def backward_from_cache(
    cfg, params, cache, d_sigma, d_color, d_feature, deterministic=True, want_point_grad=False
):
    """Backprop upstream gradients on (sigma, color, feature) to all parameters."""
    dt = params.dtype
    d_sigma = np.asarray(d_sigma, dtype=dt)
    d_color = np.asarray(d_color, dtype=dt)
    d_feature = np.ascontiguousarray(d_feature, dtype=dt)

    d_heads = np.empty((cache.raw_geo.shape[0], 4 + d_feature.shape[1]), dtype=dt)
    d_heads[:, 0] = d_sigma * logistic(cache.raw_geo[:, 0])  # softplus'
    d_heads[:, 1:4] = d_color * cache.color * (1.0 - cache.color)  # logistic'
    d_heads[:, 4:] = d_feature

    grads = {}
    d_w_heads = _mm_tn(cache.hidden, d_heads, deterministic)
    grads["geo.w"] = d_w_heads[:, :4].copy()
    grads["geo.b"] = d_heads[:, :4].sum(axis=0)
    grads["feat.w"] = d_w_heads[:, 4:].copy()
    grads["feat.b"] = d_heads[:, 4:].sum(axis=0)

    w_heads = np.concatenate([params.geo_w, params.feat_w], axis=1)
    dh = _mm(d_heads, w_heads.T, deterministic)
    for i in range(len(params.trunk_w) - 1, -1, -1):
        dpre = dh * (cache.pre[i] > 0)
        below = cache.encoding if i == 0 else np.maximum(cache.pre[i - 1], 0)
        grads[f"trunk.{i}.w"] = _mm_tn(below, dpre, deterministic)
        grads[f"trunk.{i}.b"] = dpre.sum(axis=0)
        dh = _mm(dpre, params.trunk_w[i].T, deterministic)

    grad_tables, grad_points = hashgrid.encode_batch_backward(
        cfg.grid, params.grid, cache.points, dh, want_point_grad=want_point_grad,
        check=False,
    )
    grads["grid.tables"] = grad_tables
    if want_point_grad:
        return grads, grad_points
    return grads


def field_backward(cfg, params, points, d_sigma, d_color, d_feature, deterministic=True):
    """Gradient of batched evaluation w.r.t. every parameter group."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    b = points.shape[0]
    d_sigma = np.asarray(d_sigma)
    d_color = np.asarray(d_color)
    d_feature = np.asarray(d_feature)
    if d_sigma.shape != (b,) or d_color.shape != (b, 3) or d_feature.shape != (
        b,
        cfg.mlp.feature_dim,
    ):
        raise ValueError("upstream gradient shapes do not match the point batch")
    _, _, _, cache = forward_batch(cfg, params, points, deterministic)
    return backward_from_cache(cfg, params, cache, d_sigma, d_color, d_feature, deterministic)
