"""Pure-numpy kernel implementations.

Fallback lane for environments without numba (or with LANGFIELD_KERNELS=numpy).
Function signatures and semantics mirror `numba_impl` exactly; the numba lane
is the default because these kernels dominate training time.
"""

import numpy as np

HASH_P1 = 1
HASH_P2 = 2654435761
HASH_P3 = 805459861

# Corner offsets of a grid cell, x-major: bit 2 = x, bit 1 = y, bit 0 = z.
_CORNERS = np.array(
    [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.int64
)


def _vertex_rows(vx, vy, vz, res, direct, table_size):
    """Map integer vertex coords to table rows (direct index or spatial hash)."""
    if direct:
        n1 = res + 1
        return (vx * n1 + vy) * n1 + vz
    h = (
        vx.astype(np.uint64) * np.uint64(HASH_P1)
        ^ vy.astype(np.uint64) * np.uint64(HASH_P2)
        ^ vz.astype(np.uint64) * np.uint64(HASH_P3)
    )
    return (h & np.uint64(table_size - 1)).astype(np.int64)


def _cell_of(pts01, res):
    """Base vertex and fractional offset for points in [0,1]^3 at resolution res."""
    pos = pts01 * res
    v0 = np.floor(pos).astype(np.int64)
    np.clip(v0, 0, res - 1, out=v0)
    frac = pos - v0
    return v0, frac


def encode_fwd(pts01, tables, res, direct):
    """Multi-level trilinear interpolation of hashed grid features.

    pts01: (B,3) in [0,1]. tables: (L,T,F). res: (L,) per-level resolution.
    direct: (L,) nonzero where (res+1)^3 <= T (collision-free direct indexing).
    Returns (B, L*F).
    """
    B = pts01.shape[0]
    L, T, F = tables.shape
    out = np.empty((B, L * F), dtype=tables.dtype)
    pts01 = pts01.astype(tables.dtype, copy=False)
    for lev in range(L):
        v0, frac = _cell_of(pts01, res[lev])
        acc = np.zeros((B, F), dtype=tables.dtype)
        for cx, cy, cz in _CORNERS:
            w = (
                (frac[:, 0] if cx else 1.0 - frac[:, 0])
                * (frac[:, 1] if cy else 1.0 - frac[:, 1])
                * (frac[:, 2] if cz else 1.0 - frac[:, 2])
            )
            rows = _vertex_rows(
                v0[:, 0] + cx, v0[:, 1] + cy, v0[:, 2] + cz, res[lev], direct[lev], T
            )
            acc += w[:, None] * tables[lev][rows]
        out[:, lev * F : (lev + 1) * F] = acc
    return out


def encode_bwd(pts01, tables, res, direct, upstream, want_point_grad):
    """Backward of encode_fwd.

    Returns (grad_tables (L,T,F), grad_pts01 (B,3) or zeros). grad_pts01 is
    w.r.t. the normalized coordinates; the caller scales to world units.
    """
    B = pts01.shape[0]
    L, T, F = tables.shape
    grad_tables = np.zeros_like(tables)
    grad_pts = np.zeros((B, 3), dtype=tables.dtype)
    pts01 = pts01.astype(tables.dtype, copy=False)
    for lev in range(L):
        up = upstream[:, lev * F : (lev + 1) * F]
        v0, frac = _cell_of(pts01, res[lev])
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        for cx, cy, cz in _CORNERS:
            wx = fx if cx else 1.0 - fx
            wy = fy if cy else 1.0 - fy
            wz = fz if cz else 1.0 - fz
            rows = _vertex_rows(
                v0[:, 0] + cx, v0[:, 1] + cy, v0[:, 2] + cz, res[lev], direct[lev], T
            )
            np.add.at(grad_tables[lev], rows, (wx * wy * wz)[:, None] * up)
            if want_point_grad:
                dot = np.einsum("bf,bf->b", up, tables[lev][rows])
                sx = 1.0 if cx else -1.0
                sy = 1.0 if cy else -1.0
                sz = 1.0 if cz else -1.0
                grad_pts[:, 0] += res[lev] * sx * wy * wz * dot
                grad_pts[:, 1] += res[lev] * sy * wx * wz * dot
                grad_pts[:, 2] += res[lev] * sz * wx * wy * dot
    return grad_tables, grad_pts


def composite_fwd(t, delta, sigma, rgb, feat):
    """Quadrature accumulation along rays.

    Shapes: t/delta/sigma (R,N), rgb (R,N,3), feat (R,N,D).
    Returns (color (R,3), depth (R,), feat_out (R,D), opacity (R,),
    trans (R,N+1), weights (R,N)) with trans[:,0] = 1 and
    trans[:,i+1] = trans[:,i]*exp(-sigma_i*delta_i).
    """
    R, N = sigma.shape
    att = np.exp(-sigma * delta)
    trans = np.empty((R, N + 1), dtype=sigma.dtype)
    trans[:, 0] = 1.0
    np.cumprod(att, axis=1, out=trans[:, 1:])
    weights = trans[:, :-1] * (1.0 - att)
    color = np.einsum("rn,rnc->rc", weights, rgb)
    depth = np.einsum("rn,rn->r", weights, t)
    feat_out = np.einsum("rn,rnd->rd", weights, feat)
    opacity = weights.sum(axis=1)
    return color, depth, feat_out, opacity, trans, weights


def composite_bwd(t, delta, sigma, rgb, feat, trans, weights, d_color, d_depth, d_feat):
    """Backward of composite_fwd w.r.t. per-sample sigma, rgb, feat."""
    # g[r,i] = upstream contribution of sample i's payload
    g = (
        np.einsum("rc,rnc->rn", d_color, rgb)
        + d_depth[:, None] * t
        + np.einsum("rd,rnd->rn", d_feat, feat)
    )
    wg = weights * g
    csum = np.cumsum(wg, axis=1)
    suffix = csum[:, -1:] - csum  # sum of w_j*g_j for j > i
    d_sigma = delta * (trans[:, 1:] * g - suffix)
    d_rgb = weights[:, :, None] * d_color[:, None, :]
    d_feat_s = weights[:, :, None] * d_feat[:, None, :]
    return d_sigma, d_rgb, d_feat_s


def matmul(a, b):
    """Deterministic a @ b: fixed per-element reduction order, batch-invariant."""
    return np.einsum("mk,kn->mn", a, b)


def matmul_tn(a, g):
    """Deterministic a.T @ g with fixed reduction order over rows."""
    return np.einsum("mk,mn->kn", a, g)
