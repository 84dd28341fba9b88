"""Compiled per-voxel kernels for the cost volume and the point-wise update.

Every kernel parallelizes over the first grid axis and performs only
per-voxel arithmetic in a fixed order, so results do not depend on the
number of threads.
"""

import numba as nb
import numpy as np

# prefer OpenMP; an outdated TBB would otherwise be probed with a warning
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def set_threads(n):
    """Cap the worker count; requests above the numba pool size are clipped."""
    n = max(1, min(int(n), nb.config.NUMBA_NUM_THREADS))
    nb.set_num_threads(n)
    return n


@nb.njit(cache=True, inline="always")
def _clamp(i, n):
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@nb.njit(cache=True)
def pair_dot(ffix, fmov, i, j, k, a, b, c):
    """Similarity of channel-major ffix at (i, j, k) and fmov at the clamped
    offset voxel: float64 accumulation in channel order, rounded to float32.
    The voxel-major kernels below repeat this arithmetic exactly."""
    nx, ny, nz = fmov.shape[1], fmov.shape[2], fmov.shape[3]
    ii = _clamp(i + a, nx)
    jj = _clamp(j + b, ny)
    kk = _clamp(k + c, nz)
    acc = 0.0
    for ch in range(ffix.shape[0]):
        acc += np.float64(ffix[ch, i, j, k]) * np.float64(fmov[ch, ii, jj, kk])
    return np.float32(acc)


@nb.njit(cache=True, parallel=True)
def build_cost(ffix, fpad, radius):
    """Materialized cost volume, shape (nx, ny, nz, K).

    ``ffix`` is channel-major (C, nx, ny, nz); ``fpad`` is the moving features
    edge-padded by ``radius`` on every spatial side, which realizes the
    clamping of pair_dot. The innermost loop runs along z over independent
    voxels; each voxel still accumulates its channels in index order.
    """
    C, nx, ny, nz = ffix.shape
    w = 2 * radius + 1
    out = np.empty((nx, ny, nz, w * w * w), dtype=np.float32)
    for i in nb.prange(nx):
        acc = np.empty(nz)
        for j in range(ny):
            r = 0
            for a in range(w):
                for b in range(w):
                    for c in range(w):
                        acc[:] = 0.0
                        for ch in range(C):
                            for k in range(nz):
                                acc[k] += np.float64(ffix[ch, i, j, k]) \
                                    * np.float64(fpad[ch, i + a, j + b, k + c])
                        for k in range(nz):
                            out[i, j, k, r] = np.float32(acc[k])
                        r += 1
    return out


@nb.njit(cache=True, parallel=True)
def pointwise_materialized(cost, u_hat, weight, radius):
    nx, ny, nz = cost.shape[0], cost.shape[1], cost.shape[2]
    out = np.empty((3, nx, ny, nz))
    for i in nb.prange(nx):
        for j in range(ny):
            for k in range(nz):
                u0 = u_hat[0, i, j, k]
                u1 = u_hat[1, i, j, k]
                u2 = u_hat[2, i, j, k]
                best = -np.inf
                ba = 0
                bb = 0
                bc = 0
                r = 0
                for a in range(-radius, radius + 1):
                    da = a - u0
                    da2 = da * da
                    for b in range(-radius, radius + 1):
                        db = b - u1
                        dab = da2 + db * db
                        for c in range(-radius, radius + 1):
                            dc = c - u2
                            s = np.float64(cost[i, j, k, r]) - weight * (dab + dc * dc)
                            # strict: the first (lexicographically smallest) maximum wins
                            if s > best:
                                best = s
                                ba = a
                                bb = b
                                bc = c
                            r += 1
                out[0, i, j, k] = ba
                out[1, i, j, k] = bb
                out[2, i, j, k] = bc
    return out


@nb.njit(cache=True, parallel=True)
def pointwise_streaming(ffix, fpad, u_hat, weight, radius):
    """As pointwise_materialized, computing each similarity on the fly (same
    arithmetic as build_cost) instead of reading it from memory."""
    C, nx, ny, nz = ffix.shape
    out = np.empty((3, nx, ny, nz))
    for i in nb.prange(nx):
        for j in range(ny):
            for k in range(nz):
                u0 = u_hat[0, i, j, k]
                u1 = u_hat[1, i, j, k]
                u2 = u_hat[2, i, j, k]
                best = -np.inf
                ba = 0
                bb = 0
                bc = 0
                for a in range(-radius, radius + 1):
                    da = a - u0
                    da2 = da * da
                    for b in range(-radius, radius + 1):
                        db = b - u1
                        dab = da2 + db * db
                        for c in range(-radius, radius + 1):
                            dc = c - u2
                            acc = 0.0
                            for ch in range(C):
                                acc += np.float64(ffix[ch, i, j, k]) \
                                    * np.float64(fpad[ch, i + a + radius, j + b + radius,
                                                      k + c + radius])
                            s = np.float64(np.float32(acc)) - weight * (dab + dc * dc)
                            if s > best:
                                best = s
                                ba = a
                                bb = b
                                bc = c
                out[0, i, j, k] = ba
                out[1, i, j, k] = bb
                out[2, i, j, k] = bc
    return out


@nb.njit(cache=True, inline="always")
def _axis(p, n):
    """Trilinear corner indices, fraction and derivative mask along one axis."""
    inside = 1.0 if (p >= 0.0 and p <= n - 1) else 0.0
    if n == 1:
        return 0, 0, 0.0, 0.0
    q = min(max(p, 0.0), n - 1.0)
    i0 = min(int(np.floor(q)), n - 2)
    return i0, i0 + 1, q - i0, inside


@nb.njit(cache=True, parallel=True)
def warped_similarity(ffix, fmov, u, bounds, cosine):
    """Per-voxel similarity of ffix(x) and fmov sampled at x + u(x), and its
    gradient with respect to u (shape (3, ...)).

    Features are voxel-major; fmov is sampled trilinearly with clamping.
    ``bounds`` delimits the channel parts. With ``cosine`` the sampled vector
    of every part is rescaled to unit length before the dot product (a zero
    sample contributes 0), otherwise the raw dot product is used.
    """
    nx, ny, nz, C = fmov.shape
    sim = np.empty((nx, ny, nz))
    grad = np.empty((3, nx, ny, nz))
    for i in nb.prange(nx):
        for j in range(ny):
            for k in range(nz):
                x0, x1, fx, mx = _axis(i + u[0, i, j, k], nx)
                y0, y1, fy, my = _axis(j + u[1, i, j, k], ny)
                z0, z1, fz, mz = _axis(k + u[2, i, j, k], nz)
                s = 0.0
                gx = 0.0
                gy = 0.0
                gz = 0.0
                for p in range(bounds.shape[0] - 1):
                    # <f, v>, <v, v>, <f, dv/dk> and <v, dv/dk> over the part
                    a = 0.0
                    b = 0.0
                    ax = 0.0
                    ay = 0.0
                    az = 0.0
                    bx = 0.0
                    by = 0.0
                    bz = 0.0
                    for c in range(bounds[p], bounds[p + 1]):
                        v000 = np.float64(fmov[x0, y0, z0, c])
                        v001 = np.float64(fmov[x0, y0, z1, c])
                        v010 = np.float64(fmov[x0, y1, z0, c])
                        v011 = np.float64(fmov[x0, y1, z1, c])
                        v100 = np.float64(fmov[x1, y0, z0, c])
                        v101 = np.float64(fmov[x1, y0, z1, c])
                        v110 = np.float64(fmov[x1, y1, z0, c])
                        v111 = np.float64(fmov[x1, y1, z1, c])
                        c00 = v000 * (1 - fx) + v100 * fx
                        c01 = v001 * (1 - fx) + v101 * fx
                        c10 = v010 * (1 - fx) + v110 * fx
                        c11 = v011 * (1 - fx) + v111 * fx
                        c0 = c00 * (1 - fy) + c10 * fy
                        c1 = c01 * (1 - fy) + c11 * fy
                        v = c0 * (1 - fz) + c1 * fz
                        dx = (((v100 - v000) * (1 - fy) + (v110 - v010) * fy) * (1 - fz)
                              + ((v101 - v001) * (1 - fy) + (v111 - v011) * fy) * fz) * mx
                        dy = ((c10 - c00) * (1 - fz) + (c11 - c01) * fz) * my
                        dz = (c1 - c0) * mz
                        w = np.float64(ffix[i, j, k, c])
                        a += w * v
                        ax += w * dx
                        ay += w * dy
                        az += w * dz
                        b += v * v
                        bx += v * dx
                        by += v * dy
                        bz += v * dz
                    if not cosine:
                        s += a
                        gx += ax
                        gy += ay
                        gz += az
                    elif b > 0.0:
                        n = np.sqrt(b)
                        r = a / (n * b)
                        s += a / n
                        gx += ax / n - r * bx
                        gy += ay / n - r * by
                        gz += az / n - r * bz
                sim[i, j, k] = s
                grad[0, i, j, k] = gx
                grad[1, i, j, k] = gy
                grad[2, i, j, k] = gz
    return sim, grad


@nb.njit(cache=True, parallel=True)
def trilinear(data, px, py, pz):
    """Clamped trilinear samples of channel-major ``data`` at flat point
    arrays; returns (C, M) float64. Lerps along x, then y, then z."""
    C, nx, ny, nz = data.shape
    M = px.shape[0]
    out = np.empty((C, M))
    for m in nb.prange(M):
        x0, x1, fx, _ = _axis(px[m], nx)
        y0, y1, fy, _ = _axis(py[m], ny)
        z0, z1, fz, _ = _axis(pz[m], nz)
        for c in range(C):
            c00 = np.float64(data[c, x0, y0, z0]) * (1 - fx) + np.float64(data[c, x1, y0, z0]) * fx
            c01 = np.float64(data[c, x0, y0, z1]) * (1 - fx) + np.float64(data[c, x1, y0, z1]) * fx
            c10 = np.float64(data[c, x0, y1, z0]) * (1 - fx) + np.float64(data[c, x1, y1, z0]) * fx
            c11 = np.float64(data[c, x0, y1, z1]) * (1 - fx) + np.float64(data[c, x1, y1, z1]) * fx
            c0 = c00 * (1 - fy) + c10 * fy
            c1 = c01 * (1 - fy) + c11 * fy
            out[c, m] = c0 * (1 - fz) + c1 * fz
    return out
