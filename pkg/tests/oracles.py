"""Slow, direct reference implementations used as test oracles.

These deliberately share no code with the package kernels: plain loops and
dense numpy, written straight from the defining formulas.
"""

import numpy as np


def parzen_dense(values, bins=32, bandwidth=None):
    """Dense (N, bins) kernel matrix: Gaussian at bin centers, shifted by its 3-sigma value, renormalized."""
    h = 1.0 / bins if bandwidth is None else bandwidth
    centers = (np.arange(bins) + 0.5) / bins
    u = (centers[None, :] - np.ravel(values)[:, None]) / h
    k = np.maximum(np.exp(-0.5 * u**2) - np.exp(-4.5), 0.0)
    return k / k.sum(axis=1, keepdims=True)


def joint_histogram_loops(fixed, moving, weights, bins=32):
    f, m, w = np.ravel(fixed), np.ravel(moving), np.ravel(weights)
    Kf, Km = parzen_dense(f, bins), parzen_dense(m, bins)
    P = np.zeros((bins, bins))
    for x in range(f.size):
        for i in range(bins):
            if Kf[x, i] == 0:
                continue
            for j in range(bins):
                P[i, j] += w[x] * Kf[x, i] * Km[x, j]
    return P / w.sum()


def mi_loss_from_histogram(P, eps=1e-7):
    pf = P.sum(axis=1)
    pm = P.sum(axis=0)
    total = 0.0
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            total += P[i, j] * np.log((P[i, j] + eps) / (pf[i] * pm[j] + eps))
    return 1.0 - total


def unweighted_parzen_mi_loss(fixed, moving, bins=32, eps=1e-7):
    """Plain Parzen-window MI (every voxel counts equally), via dense matrices."""
    Kf, Km = parzen_dense(fixed, bins), parzen_dense(moving, bins)
    P = Kf.T @ Km / Kf.shape[0]
    pf, pm = P.sum(1, keepdims=True), P.sum(0, keepdims=True)
    return 1.0 - float((P * np.log((P + eps) / (pf * pm + eps))).sum())


def local_variance_loops(data, window):
    r = window // 2
    out = np.zeros(data.shape)
    for idx in np.ndindex(data.shape):
        sl = tuple(slice(max(i - r, 0), min(i + r + 1, n)) for i, n in zip(idx, data.shape))
        out[idx] = data[sl].var()
    return out


def trilinear_zero(data, p, replicate=False):
    dims = data.shape
    if replicate:
        p = [min(max(c, 0.0), n - 1.0) for c, n in zip(p, dims)]
    elif any(c < 0 or c > n - 1 for c, n in zip(p, dims)):
        return 0.0
    lo = [min(int(np.floor(c)), max(n - 2, 0)) for c, n in zip(p, dims)]
    out = 0.0
    for corner in np.ndindex(2, 2, 2):
        idx = [min(l + d, n - 1) for l, d, n in zip(lo, corner, dims)]
        w = 1.0
        for c, l, d in zip(p, lo, corner):
            w *= (c - l) if d else 1.0 - (c - l)
        out += w * data[tuple(idx)]
    return out


def mind_loops(img, sigma=0.5, floor=1e-6):
    """6-neighbourhood MIND, one voxel and one patch offset at a time.

    D(x, n) = sum_p w(p) (I(c(y)) - I(c(c(y) + n)))^2 with y = x + p, where c
    clamps to the grid; w is a normalized 3x3x3 Gaussian.
    """
    dims = img.shape
    w1 = np.exp(-1.0 / (2 * sigma**2))
    w = np.array([w1, 1.0, w1]) / (1 + 2 * w1)
    offsets = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]

    def clamp(p):
        return tuple(min(max(c, 0), n - 1) for c, n in zip(p, dims))

    feats = np.zeros((6,) + dims)
    for x in np.ndindex(dims):
        D = np.zeros(6)
        for k, n in enumerate(offsets):
            acc = 0.0
            for p in np.ndindex(3, 3, 3):
                y = clamp(tuple(xi + pi - 1 for xi, pi in zip(x, p)))
                yn = clamp(tuple(yi + ni for yi, ni in zip(y, n)))
                acc += w[p[0]] * w[p[1]] * w[p[2]] * (img[y] - img[yn]) ** 2
            D[k] = acc
        V = max(D.mean(), floor)
        ch = np.exp(-D / V)
        feats[(slice(None),) + x] = ch / ch.max()
    return feats


def smind_monolithic(fixed, moving, disp, r=4, tau=0.05, sigma=2.0):
    """Warp (edge values replicated), describe, search, softmin and average, in explicit loops."""
    dims = fixed.shape
    warped = np.zeros(dims)
    for x in np.ndindex(dims):
        warped[x] = trilinear_zero(moving, np.array(x) + disp[x], replicate=True)
    Ff, Fw = mind_loops(fixed), mind_loops(warped)
    total = 0.0
    for axis in range(3):
        acc = 0.0
        for x in np.ndindex(dims):
            d0 = np.sqrt(((Ff[(slice(None),) + x] - Fw[(slice(None),) + x]) ** 2).sum())
            ds, logits = [], []
            for s in range(-r, r + 1):
                y = list(x)
                y[axis] += s
                if 0 <= y[axis] < dims[axis]:
                    d = np.sqrt(((Ff[(slice(None),) + x] - Fw[(slice(None),) + tuple(y)]) ** 2).sum())
                else:
                    d = d0
                ds.append(d)
                logits.append(-d / tau - s * s / (2 * sigma**2))
            logits = np.array(logits)
            p = np.exp(logits - logits.max())
            p /= p.sum()
            acc += float((p * np.array(ds)).sum())
        total += acc / np.prod(dims)
    return total / 3.0
