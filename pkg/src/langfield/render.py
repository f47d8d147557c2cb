"""Stratified ray sampling and quadrature compositing of color/depth/feature.

Per ray: t_i stratified in [near, far], delta_i = t_{i+1} - t_i (last interval
closed at far), att_i = exp(-sigma_i * delta_i), transmittance T_1 = 1,
T_{i+1} = T_i * att_i, weights w_i = T_i * (1 - att_i). Outputs are the
weighted sums of per-sample color, ray distance, and feature.

Sample jitter comes from a counter-based hash of (seed, ray, bin), so results
are independent of batch composition and identical across both kernel lanes.
"""

from dataclasses import dataclass

import numpy as np

from . import field as field_mod
from . import kernels
from .geometry import frame_rays

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _splitmix64(x):
    # uint64 arithmetic wraps mod 2^64 by design
    with np.errstate(over="ignore"):
        x = (x + _MIX1).astype(np.uint64)
        x = ((x ^ (x >> _U64(30))) * _MIX2).astype(np.uint64)
        x = ((x ^ (x >> _U64(27))) * _MIX3).astype(np.uint64)
        return x ^ (x >> _U64(31))


def mix_seed(seed, *counters):
    """Derive an independent 64-bit stream key from a seed and counters."""
    x = np.asarray(seed, dtype=np.uint64)
    for c in counters:
        x = _splitmix64(x ^ np.asarray(c, dtype=np.uint64))
    return x


def hash_uniform(seed, idx_a, idx_b):
    """Deterministic uniforms in [0,1): one draw per (seed, idx_a, idx_b)."""
    key = _splitmix64(
        _splitmix64(np.asarray(seed, dtype=np.uint64) ^ np.asarray(idx_a, dtype=np.uint64))
        ^ np.asarray(idx_b, dtype=np.uint64)
    )
    return (key >> _U64(11)).astype(np.float64) * (1.0 / (1 << 53))


def stratified_samples(near, far, n, rng_seed, jitter=True):
    """One uniform draw per equal-width bin of [near, far]; ascending."""
    return stratified_batch(near, far, n, np.asarray([rng_seed], dtype=np.uint64), jitter)[0]


def stratified_batch(near, far, n, seeds, jitter=True):
    if not near < far:
        raise ValueError(f"need near < far, got {near}, {far}")
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    seeds = np.asarray(seeds, dtype=np.uint64)
    bins = np.arange(n, dtype=np.uint64)
    if jitter:
        u = hash_uniform(seeds[:, None], bins[None, :], _U64(0))
    else:
        u = np.full((seeds.shape[0], n), 0.5)
    h = (far - near) / n
    return near + (np.arange(n, dtype=np.float64)[None, :] + u) * h


@dataclass
class SampleSet:
    """Per-ray samples: inputs (t, delta, sigma, color, feature) and the
    quadrature products (trans, weights) filled by composite()."""

    t: np.ndarray  # (N,) ascending ray distances
    delta: np.ndarray  # (N,) spacings, last closed at far
    sigma: np.ndarray  # (N,)
    color: np.ndarray  # (N,3)
    feature: np.ndarray  # (N,D)
    trans: np.ndarray | None = None  # (N+1,), trans[0] = 1
    weights: np.ndarray | None = None  # (N,)

    @property
    def d(self):
        # per-sample ray distance used for the depth estimate
        return self.t


def make_sample_set(t, far, sigma, color, feature):
    t = np.asarray(t, dtype=np.float64)
    delta = np.empty_like(t)
    delta[:-1] = np.diff(t)
    delta[-1] = far - t[-1]
    return SampleSet(
        t=t,
        delta=delta,
        sigma=np.asarray(sigma, dtype=np.float64),
        color=np.asarray(color, dtype=np.float64),
        feature=np.asarray(feature, dtype=np.float64),
    )


@dataclass
class RenderOutput:
    color: np.ndarray  # (3,)
    depth: float
    feature: np.ndarray  # (D,)
    opacity: float


def composite(samples):
    """Fill transmittances/weights of a SampleSet and accumulate outputs."""
    t = np.asarray(samples.t, dtype=np.float64)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("sample distances must be strictly ascending")
    if np.any(np.asarray(samples.delta) < 0):
        raise ValueError("sample spacings must be non-negative")
    dt = samples.sigma.dtype
    color, depth, feat, opacity, trans, weights = kernels.composite_fwd(
        t.astype(dt)[None, :],
        np.ascontiguousarray(samples.delta, dtype=dt)[None, :],
        np.ascontiguousarray(samples.sigma)[None, :],
        np.ascontiguousarray(samples.color, dtype=dt)[None, :, :],
        np.ascontiguousarray(samples.feature, dtype=dt)[None, :, :],
    )
    samples.trans = trans[0]
    samples.weights = weights[0]
    return RenderOutput(
        color=color[0], depth=float(depth[0]), feature=feat[0], opacity=float(opacity[0])
    )


def composite_backward(samples, d_color, d_depth, d_feature):
    """Per-sample gradients on (sigma, color, feature); composite() must have
    run on this SampleSet already."""
    if samples.weights is None:
        raise ValueError("composite() has not been evaluated on this SampleSet")
    dt = samples.sigma.dtype
    d_sigma, d_rgb, d_feat = kernels.composite_bwd(
        np.asarray(samples.t, dtype=dt)[None, :],
        np.ascontiguousarray(samples.delta, dtype=dt)[None, :],
        np.ascontiguousarray(samples.sigma)[None, :],
        np.ascontiguousarray(samples.color, dtype=dt)[None, :, :],
        np.ascontiguousarray(samples.feature, dtype=dt)[None, :, :],
        samples.trans[None, :],
        samples.weights[None, :],
        np.asarray(d_color, dtype=dt)[None, :],
        np.asarray([d_depth], dtype=dt),
        np.asarray(d_feature, dtype=dt)[None, :],
    )
    return d_sigma[0], d_rgb[0], d_feat[0]


@dataclass
class RayRenderCache:
    """Everything needed to backprop a batched render."""

    t: np.ndarray  # (R,N)
    delta: np.ndarray  # (R,N)
    sigma: np.ndarray  # (R,N)
    rgb: np.ndarray  # (R,N,3)
    feat: np.ndarray  # (R,N,D)
    trans: np.ndarray  # (R,N+1)
    weights: np.ndarray  # (R,N)
    inside: np.ndarray  # (R*N,) bool mask of in-bound samples
    field_cache: field_mod.FieldCache  # cache over in-bound points only


@dataclass
class RayBatchOutput:
    color: np.ndarray  # (R,3)
    depth: np.ndarray  # (R,)
    feature: np.ndarray  # (R,D)
    opacity: np.ndarray  # (R,)


def render_rays(
    cfg,
    params,
    origins,
    dirs,
    near,
    far,
    n_samples,
    seeds,
    deterministic=True,
    want_cache=False,
):
    """Batched ray rendering. Points outside the scene bound are treated as
    empty space (zero density) and excluded from field evaluation."""
    dt = params.dtype
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    r = origins.shape[0]
    n = n_samples
    d_feat = cfg.mlp.feature_dim

    t = stratified_batch(near, far, n, seeds)
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = far - t[:, -1]

    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)
    inside = cfg.grid.bound.contains(flat)

    sigma = np.zeros(r * n, dtype=dt)
    rgb = np.zeros((r * n, 3), dtype=dt)
    feat = np.zeros((r * n, d_feat), dtype=dt)
    cache = None
    if np.any(inside):
        s_in, c_in, f_in, cache = field_mod.forward_batch(
            cfg, params, flat[inside], deterministic=deterministic, check_bound=False
        )
        sigma[inside] = s_in
        rgb[inside] = c_in
        feat[inside] = f_in

    t_dt = t.astype(dt)
    delta_dt = delta.astype(dt)
    color, depth, feature, opacity, trans, weights = kernels.composite_fwd(
        t_dt, delta_dt, sigma.reshape(r, n), rgb.reshape(r, n, 3), feat.reshape(r, n, d_feat)
    )
    out = RayBatchOutput(color=color, depth=depth, feature=feature, opacity=opacity)
    if not want_cache:
        return out
    render_cache = RayRenderCache(
        t=t_dt,
        delta=delta_dt,
        sigma=sigma.reshape(r, n),
        rgb=rgb.reshape(r, n, 3),
        feat=feat.reshape(r, n, d_feat),
        trans=trans,
        weights=weights,
        inside=inside,
        field_cache=cache,
    )
    return out, render_cache


def render_rays_backward(cfg, params, cache, d_color, d_depth, d_feature, deterministic=True):
    """Backprop upstream gradients on rendered (color, depth, feature) through
    compositing and the field to every parameter group."""
    dt = params.dtype
    d_sigma_s, d_rgb_s, d_feat_s = kernels.composite_bwd(
        cache.t,
        cache.delta,
        cache.sigma,
        cache.rgb,
        cache.feat,
        cache.trans,
        cache.weights,
        np.ascontiguousarray(d_color, dtype=dt),
        np.ascontiguousarray(d_depth, dtype=dt),
        np.ascontiguousarray(d_feature, dtype=dt),
    )
    inside = cache.inside
    if cache.field_cache is None:
        return field_mod.zero_grads(params)
    return field_mod.backward_from_cache(
        cfg,
        params,
        cache.field_cache,
        d_sigma_s.reshape(-1)[inside],
        d_rgb_s.reshape(-1, 3)[inside],
        d_feat_s.reshape(-1, d_feat_s.shape[2])[inside],
        deterministic=deterministic,
    )


def render_pixel(cfg, params, ray, near, far, n_samples, rng_seed, deterministic=True):
    """Render one ray to a RenderOutput (batched path with R = 1)."""
    out = render_rays(
        cfg,
        params,
        ray.origin.reshape(1, 3),
        ray.direction.reshape(1, 3),
        near,
        far,
        n_samples,
        np.asarray([rng_seed], dtype=np.uint64),
        deterministic=deterministic,
    )
    return RenderOutput(
        color=out.color[0],
        depth=float(out.depth[0]),
        feature=out.feature[0],
        opacity=float(out.opacity[0]),
    )


def render_view(
    cfg,
    params,
    pose,
    intrinsics,
    near,
    far,
    n_samples,
    seed,
    deterministic=True,
    chunk=8192,
):
    """Render full maps for a view. Per-pixel seeds derive from (seed, pixel
    index), so outputs are chunk-size independent in deterministic mode.

    Returns dict with rgb (H,W,3), depth (H,W) ray distance, plane_depth
    (H,W), feature (H,W,D), opacity (H,W).
    """
    h, w = intrinsics.height, intrinsics.width
    vs, us = np.mgrid[0:h, 0:w]
    us, vs = us.ravel(), vs.ravel()
    origins, dirs, scale = frame_rays(intrinsics, pose, us, vs)
    n_px = h * w
    seeds = mix_seed(np.uint64(seed), np.arange(n_px, dtype=np.uint64))

    rgb = np.empty((n_px, 3), dtype=np.float32)
    depth = np.empty(n_px, dtype=np.float32)
    feature = np.empty((n_px, cfg.mlp.feature_dim), dtype=np.float32)
    opacity = np.empty(n_px, dtype=np.float32)
    for s in range(0, n_px, chunk):
        e = min(s + chunk, n_px)
        out = render_rays(
            cfg, params, origins[s:e], dirs[s:e], near, far, n_samples, seeds[s:e],
            deterministic=deterministic,
        )
        rgb[s:e] = out.color
        depth[s:e] = out.depth
        feature[s:e] = out.feature
        opacity[s:e] = out.opacity

    return {
        "rgb": rgb.reshape(h, w, 3),
        "depth": depth.reshape(h, w),
        "plane_depth": (depth / scale.astype(np.float32)).reshape(h, w),
        "feature": feature.reshape(h, w, -1),
        "opacity": opacity.reshape(h, w),
    }
