"""Numba-compiled kernels (default lane).

Same contracts as `numpy_impl`. Every reduction runs in a fixed serial order
per output element, so results are deterministic and independent of batch
composition; the matmuls keep the k-loop scalar per element (the compiler
vectorizes over output columns, which does not reassociate sums).
"""

import numpy as np
from numba import njit

HASH_P1 = 1
HASH_P2 = 2654435761
HASH_P3 = 805459861


@njit(cache=True)
def _row_of(vx, vy, vz, res, direct, table_size):
    if direct != 0:
        n1 = res + 1
        return (vx * n1 + vy) * n1 + vz
    h = vx * HASH_P1 ^ vy * HASH_P2 ^ vz * HASH_P3
    return h & (table_size - 1)


@njit(cache=True)
def encode_fwd(pts01, tables, res, direct):
    B = pts01.shape[0]
    L, T, F = tables.shape
    out = np.zeros((B, L * F), dtype=tables.dtype)
    for i in range(B):
        x, y, z = pts01[i, 0], pts01[i, 1], pts01[i, 2]
        for lev in range(L):
            n = res[lev]
            px, py, pz = x * n, y * n, z * n
            vx = min(max(int(np.floor(px)), 0), n - 1)
            vy = min(max(int(np.floor(py)), 0), n - 1)
            vz = min(max(int(np.floor(pz)), 0), n - 1)
            fx, fy, fz = px - vx, py - vy, pz - vz
            base = lev * F
            for c in range(8):
                cx, cy, cz = (c >> 2) & 1, (c >> 1) & 1, c & 1
                w = (
                    (fx if cx else 1.0 - fx)
                    * (fy if cy else 1.0 - fy)
                    * (fz if cz else 1.0 - fz)
                )
                row = _row_of(vx + cx, vy + cy, vz + cz, n, direct[lev], T)
                for f in range(F):
                    out[i, base + f] += w * tables[lev, row, f]
    return out


@njit(cache=True)
def encode_bwd(pts01, tables, res, direct, upstream, want_point_grad):
    B = pts01.shape[0]
    L, T, F = tables.shape
    grad_tables = np.zeros_like(tables)
    grad_pts = np.zeros((B, 3), dtype=tables.dtype)
    for lev in range(L):
        n = res[lev]
        base = lev * F
        for i in range(B):
            x, y, z = pts01[i, 0], pts01[i, 1], pts01[i, 2]
            px, py, pz = x * n, y * n, z * n
            vx = min(max(int(np.floor(px)), 0), n - 1)
            vy = min(max(int(np.floor(py)), 0), n - 1)
            vz = min(max(int(np.floor(pz)), 0), n - 1)
            fx, fy, fz = px - vx, py - vy, pz - vz
            for c in range(8):
                cx, cy, cz = (c >> 2) & 1, (c >> 1) & 1, c & 1
                wx = fx if cx else 1.0 - fx
                wy = fy if cy else 1.0 - fy
                wz = fz if cz else 1.0 - fz
                w = wx * wy * wz
                row = _row_of(vx + cx, vy + cy, vz + cz, n, direct[lev], T)
                for f in range(F):
                    grad_tables[lev, row, f] += w * upstream[i, base + f]
                if want_point_grad:
                    dot = 0.0
                    for f in range(F):
                        dot += upstream[i, base + f] * tables[lev, row, f]
                    sx = 1.0 if cx else -1.0
                    sy = 1.0 if cy else -1.0
                    sz = 1.0 if cz else -1.0
                    grad_pts[i, 0] += n * sx * wy * wz * dot
                    grad_pts[i, 1] += n * sy * wx * wz * dot
                    grad_pts[i, 2] += n * sz * wx * wy * dot
    return grad_tables, grad_pts


@njit(cache=True)
def composite_fwd(t, delta, sigma, rgb, feat):
    R, N = sigma.shape
    D = feat.shape[2]
    color = np.zeros((R, 3), dtype=sigma.dtype)
    depth = np.zeros(R, dtype=sigma.dtype)
    feat_out = np.zeros((R, D), dtype=sigma.dtype)
    opacity = np.zeros(R, dtype=sigma.dtype)
    trans = np.empty((R, N + 1), dtype=sigma.dtype)
    weights = np.empty((R, N), dtype=sigma.dtype)
    for r in range(R):
        trans[r, 0] = 1.0
        for i in range(N):
            att = np.exp(-sigma[r, i] * delta[r, i])
            w = trans[r, i] * (1.0 - att)
            weights[r, i] = w
            trans[r, i + 1] = trans[r, i] * att
            for c in range(3):
                color[r, c] += w * rgb[r, i, c]
            depth[r] += w * t[r, i]
            for d in range(D):
                feat_out[r, d] += w * feat[r, i, d]
            opacity[r] += w
    return color, depth, feat_out, opacity, trans, weights


@njit(cache=True)
def composite_bwd(t, delta, sigma, rgb, feat, trans, weights, d_color, d_depth, d_feat):
    R, N = sigma.shape
    D = feat.shape[2]
    d_sigma = np.empty((R, N), dtype=sigma.dtype)
    d_rgb = np.empty((R, N, 3), dtype=sigma.dtype)
    d_feat_s = np.empty((R, N, D), dtype=sigma.dtype)
    g = np.empty(N, dtype=sigma.dtype)
    for r in range(R):
        for i in range(N):
            gi = d_depth[r] * t[r, i]
            for c in range(3):
                gi += d_color[r, c] * rgb[r, i, c]
            for d in range(D):
                gi += d_feat[r, d] * feat[r, i, d]
            g[i] = gi
        suffix = 0.0
        for i in range(N - 1, -1, -1):
            d_sigma[r, i] = delta[r, i] * (trans[r, i + 1] * g[i] - suffix)
            suffix += weights[r, i] * g[i]
            w = weights[r, i]
            for c in range(3):
                d_rgb[r, i, c] = w * d_color[r, c]
            for d in range(D):
                d_feat_s[r, i, d] = w * d_feat[r, d]
    return d_sigma, d_rgb, d_feat_s


@njit(cache=True)
def matmul(a, b):
    M, K = a.shape
    N = b.shape[1]
    out = np.zeros((M, N), dtype=a.dtype)
    for i in range(M):
        for k in range(K):
            aik = a[i, k]
            for j in range(N):
                out[i, j] += aik * b[k, j]
    return out


@njit(cache=True)
def matmul_tn(a, g):
    M, K = a.shape
    N = g.shape[1]
    out = np.zeros((K, N), dtype=a.dtype)
    for m in range(M):
        for k in range(K):
            amk = a[m, k]
            for j in range(N):
                out[k, j] += amk * g[m, j]
    return out
