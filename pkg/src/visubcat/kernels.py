"""Hot numeric kernels, each in a numba flavour and a pure-numpy flavour.

The public functions at the bottom dispatch on :func:`visubcat._backend.backend`.
Both flavours implement identical arithmetic; they agree to rounding error
(summation order differs), and each is deterministic on its own.
"""
import math

import numpy as np

from ._backend import backend, njit

HOG_DIM = 31
HOG_EPS = 1e-4
HOG_TRUNC = 0.2
_TEXTURE_GAIN = 0.2357


# --------------------------------------------------------------------- HOG


@njit
def _hog_hist_numba(img, cell):
    h, w = img.shape
    by = h // cell
    bx = w // cell
    hist = np.zeros((by, bx, 18))
    vis_h = by * cell
    vis_w = bx * cell
    two_pi = 2.0 * math.pi
    for y in range(1, vis_h - 1):
        yp = (y + 0.5) / cell - 0.5
        iy = int(math.floor(yp))
        fy = yp - iy
        for x in range(1, vis_w - 1):
            dx = img[y, x + 1] - img[y, x - 1]
            dy = img[y + 1, x] - img[y - 1, x]
            mag = math.sqrt(dx * dx + dy * dy)
            if mag == 0.0:
                continue
            theta = math.atan2(dy, dx)
            if theta < 0.0:
                theta += two_pi
            o = theta * (18.0 / two_pi)
            o0 = int(math.floor(o))
            fo = o - o0
            o0 = o0 % 18
            o1 = (o0 + 1) % 18
            xp = (x + 0.5) / cell - 0.5
            ix = int(math.floor(xp))
            fx = xp - ix
            for sy in range(2):
                cy = iy + sy
                if cy < 0 or cy >= by:
                    continue
                wy = fy if sy == 1 else 1.0 - fy
                for sx in range(2):
                    cx = ix + sx
                    if cx < 0 or cx >= bx:
                        continue
                    wx = fx if sx == 1 else 1.0 - fx
                    v = wy * wx * mag
                    hist[cy, cx, o0] += v * (1.0 - fo)
                    hist[cy, cx, o1] += v * fo
    return hist


def _hog_hist_numpy(img, cell):
    h, w = img.shape
    by, bx = h // cell, w // cell
    vis_h, vis_w = by * cell, bx * cell
    dx = img[1:vis_h - 1, 2:vis_w] - img[1:vis_h - 1, 0:vis_w - 2]
    dy = img[2:vis_h, 1:vis_w - 1] - img[0:vis_h - 2, 1:vis_w - 1]
    mag = np.sqrt(dx * dx + dy * dy)
    theta = np.arctan2(dy, dx)
    theta = np.where(theta < 0.0, theta + 2.0 * np.pi, theta)
    o = theta * (18.0 / (2.0 * np.pi))
    o0 = np.floor(o)
    fo = o - o0
    o0 = o0.astype(np.int64) % 18
    o1 = (o0 + 1) % 18

    yp = (np.arange(1, vis_h - 1) + 0.5) / cell - 0.5
    xp = (np.arange(1, vis_w - 1) + 0.5) / cell - 0.5
    iy = np.floor(yp).astype(np.int64)
    ix = np.floor(xp).astype(np.int64)
    fy = yp - iy
    fx = xp - ix

    flat = np.zeros(by * bx * 18)
    for sy in (0, 1):
        cy = iy + sy
        wy = fy if sy else 1.0 - fy
        for sx in (0, 1):
            cx = ix + sx
            wx = fx if sx else 1.0 - fx
            valid = ((cy >= 0) & (cy < by))[:, None] & ((cx >= 0) & (cx < bx))[None, :]
            v = (wy[:, None] * wx[None, :]) * mag
            base = (cy[:, None] * bx + cx[None, :]) * 18
            for obin, ow in ((o0, 1.0 - fo), (o1, fo)):
                idx = (base + obin)[valid]
                flat += np.bincount(idx, weights=(v * ow)[valid], minlength=flat.size)
    return flat.reshape(by, bx, 18)


@njit
def _hog_normalize_numba(hist, eps, trunc):
    by, bx, _ = hist.shape
    norm = np.zeros((by, bx))
    for y in range(by):
        for x in range(bx):
            s = 0.0
            for o in range(9):
                v = hist[y, x, o] + hist[y, x, o + 9]
                s += v * v
            norm[y, x] = s
    out = np.zeros((by - 2, bx - 2, 31))
    for y in range(by - 2):
        for x in range(bx - 2):
            n1 = 1.0 / math.sqrt(norm[y + 1, x + 1] + norm[y + 1, x + 2]
                                 + norm[y + 2, x + 1] + norm[y + 2, x + 2] + eps)
            n2 = 1.0 / math.sqrt(norm[y, x + 1] + norm[y, x + 2]
                                 + norm[y + 1, x + 1] + norm[y + 1, x + 2] + eps)
            n3 = 1.0 / math.sqrt(norm[y + 1, x] + norm[y + 1, x + 1]
                                 + norm[y + 2, x] + norm[y + 2, x + 1] + eps)
            n4 = 1.0 / math.sqrt(norm[y, x] + norm[y, x + 1]
                                 + norm[y + 1, x] + norm[y + 1, x + 1] + eps)
            t1 = 0.0
            t2 = 0.0
            t3 = 0.0
            t4 = 0.0
            for o in range(18):
                v = hist[y + 1, x + 1, o]
                h1 = min(v * n1, trunc)
                h2 = min(v * n2, trunc)
                h3 = min(v * n3, trunc)
                h4 = min(v * n4, trunc)
                out[y, x, o] = 0.5 * (h1 + h2 + h3 + h4)
                t1 += h1
                t2 += h2
                t3 += h3
                t4 += h4
            for o in range(9):
                v = hist[y + 1, x + 1, o] + hist[y + 1, x + 1, o + 9]
                h1 = min(v * n1, trunc)
                h2 = min(v * n2, trunc)
                h3 = min(v * n3, trunc)
                h4 = min(v * n4, trunc)
                out[y, x, 18 + o] = 0.5 * (h1 + h2 + h3 + h4)
            out[y, x, 27] = 0.2357 * t1
            out[y, x, 28] = 0.2357 * t2
            out[y, x, 29] = 0.2357 * t3
            out[y, x, 30] = 0.2357 * t4
    return out


def _hog_normalize_numpy(hist, eps, trunc):
    by, bx, _ = hist.shape
    norm = ((hist[:, :, :9] + hist[:, :, 9:]) ** 2).sum(axis=2)
    # 2x2 block energies; block[i, j] covers cells (i..i+1, j..j+1)
    block = norm[:-1, :-1] + norm[:-1, 1:] + norm[1:, :-1] + norm[1:, 1:]
    inv = 1.0 / np.sqrt(block + eps)
    n1 = inv[1:, 1:]
    n2 = inv[:-1, 1:]
    n3 = inv[1:, :-1]
    n4 = inv[:-1, :-1]
    core = hist[1:by - 1, 1:bx - 1]
    unsigned = core[:, :, :9] + core[:, :, 9:]
    out = np.empty((by - 2, bx - 2, 31))
    signed_parts = [np.minimum(core * n[:, :, None], trunc) for n in (n1, n2, n3, n4)]
    out[:, :, :18] = 0.5 * (signed_parts[0] + signed_parts[1] + signed_parts[2] + signed_parts[3])
    un = [np.minimum(unsigned * n[:, :, None], trunc) for n in (n1, n2, n3, n4)]
    out[:, :, 18:27] = 0.5 * (un[0] + un[1] + un[2] + un[3])
    for j, part in enumerate(signed_parts):
        out[:, :, 27 + j] = _TEXTURE_GAIN * part.sum(axis=2)
    return out


# --------------------------------------------------------------- correlate


@njit
def _correlate_numba(feat, tmpl, offset, stride):
    h, w, d = feat.shape
    th, tw, _ = tmpl.shape
    oh = (h - offset - th) // stride + 1 if h - offset >= th else 0
    ow = (w - offset - tw) // stride + 1 if w - offset >= tw else 0
    out = np.zeros((oh, ow))
    for y in range(oh):
        y0 = offset + stride * y
        for x in range(ow):
            x0 = offset + stride * x
            s = 0.0
            for dy in range(th):
                for dx in range(tw):
                    for c in range(d):
                        s += feat[y0 + dy, x0 + dx, c] * tmpl[dy, dx, c]
            out[y, x] = s
    return out


def _correlate_numpy(feat, tmpl, offset, stride):
    h, w, d = feat.shape
    th, tw, _ = tmpl.shape
    oh = (h - offset - th) // stride + 1 if h - offset >= th else 0
    ow = (w - offset - tw) // stride + 1 if w - offset >= tw else 0
    if oh <= 0 or ow <= 0:
        return np.zeros((max(oh, 0), max(ow, 0)))
    prod = (feat.reshape(h * w, d) @ tmpl.reshape(th * tw, d).T).reshape(h, w, th, tw)
    out = np.zeros((oh, ow))
    ys, xs = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    for dy in range(th):
        for dx in range(tw):
            y0, x0 = offset + dy, offset + dx
            out += prod[y0:y0 + ys:stride, x0:x0 + xs:stride, dy, dx]
    return out


# ------------------------------------------------------------------- SMO
#
# Dual of the hinge SVM with an unregularised bias:
#   min 1/2 a'Qa - sum(a)  s.t.  y'a = 0, 0 <= a <= C,  Q_ij = y_i y_j K_ij.
# Working pairs use second-order selection; G = Qa - 1 is kept current.

_TAU = 1e-12


@njit
def _smo_numba(K, y, C, alpha, G, eps, max_iter):
    n = K.shape[0]
    it = 0
    viol = np.inf
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0.0:
                if alpha[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            elif alpha[t] > 0.0 and G[t] >= gmax:
                gmax = G[t]
                i = t
        if i < 0:
            viol = 0.0
            break
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0.0:
                if alpha[t] > 0.0:
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    diff = gmax + G[t]
                else:
                    continue
            else:
                if alpha[t] < C:
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    diff = gmax - G[t]
                else:
                    continue
            if diff > 0.0:
                quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                if quad <= 0.0:
                    quad = _TAU
                obj = -(diff * diff) / quad
                if obj <= best:
                    best = obj
                    j = t
        viol = gmax + gmax2
        if viol < eps or j < 0:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = _TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0.0:
                if nj < 0.0:
                    nj, ni = 0.0, diff
            elif ni < 0.0:
                ni, nj = 0.0, -diff
            if diff > 0.0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0.0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0.0:
                ni, nj = 0.0, total
        alpha[i], alpha[j] = ni, nj
        di = (ni - ai) * y[i]
        dj = (nj - aj) * y[j]
        for t in range(n):
            G[t] += y[t] * (K[i, t] * di + K[j, t] * dj)
    return it, viol


def _last_argmax(v):
    return int(len(v) - 1 - np.argmax(v[::-1]))


def _smo_numpy(K, y, C, alpha, G, eps, max_iter):
    pos = y > 0.0
    diagK = np.diagonal(K)
    it = 0
    viol = np.inf
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0.0)
        low = np.where(pos, alpha > 0.0, alpha < C)
        yg = -y * G
        if not up.any():
            viol = 0.0
            break
        cand = np.where(up, yg, -np.inf)
        # last index among maxima, matching the >= scan of the compiled flavour
        i = _last_argmax(cand)
        gmax = cand[i]
        lowv = np.where(low, -yg, -np.inf)
        gmax2 = lowv.max() if low.any() else -np.inf
        diff = gmax + lowv
        ok = low & (diff > 0.0)
        viol = gmax + gmax2
        if viol < eps or not ok.any():
            break
        quad = diagK[i] + diagK - 2.0 * K[i]
        quad = np.where(quad <= 0.0, _TAU, quad)
        obj = np.where(ok, -(diff * diff) / quad, np.inf)
        j = int(len(obj) - 1 - np.argmin(obj[::-1]))
        it += 1
        ai, aj = alpha[i], alpha[j]
        q = quad[j]
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / q
            d = ai - aj
            ni, nj = ai + delta, aj + delta
            if d > 0.0:
                if nj < 0.0:
                    nj, ni = 0.0, d
            elif ni < 0.0:
                ni, nj = 0.0, -d
            if d > 0.0:
                if ni > C:
                    ni, nj = C, C - d
            elif nj > C:
                nj, ni = C, C + d
        else:
            delta = (G[i] - G[j]) / q
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0.0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0.0:
                ni, nj = 0.0, total
        alpha[i], alpha[j] = ni, nj
        G += y * (K[i] * ((ni - ai) * y[i]) + K[j] * ((nj - aj) * y[j]))
    return it, viol


# ------------------------------------------------------ k-means assignment


@njit
def _nearest_numba(X, centers):
    n, d = X.shape
    k = centers.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    dist = np.zeros(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(k):
            s = 0.0
            for j in range(d):
                diff = X[i, j] - centers[c, j]
                s += diff * diff
            if s < best:
                best = s
                arg = c
        labels[i] = arg
        dist[i] = best
    return labels, dist


def _nearest_numpy(X, centers):
    n = X.shape[0]
    best = np.full(n, np.inf)
    labels = np.zeros(n, dtype=np.int64)
    for c in range(centers.shape[0]):
        dc = ((X - centers[c]) ** 2).sum(axis=1)
        better = dc < best
        labels[better] = c
        best[better] = dc[better]
    return labels, best


# ------------------------------------------------------------ dispatchers


def hog_features(img, cell):
    """31-channel HOG grid of a float image; border ring of cells dropped."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if backend() == "numba":
        hist = _hog_hist_numba(img, int(cell))
        return _hog_normalize_numba(hist, HOG_EPS, HOG_TRUNC)
    hist = _hog_hist_numpy(img, int(cell))
    return _hog_normalize_numpy(hist, HOG_EPS, HOG_TRUNC)


def correlate(feat, tmpl, offset=0, stride=1):
    """Valid-mode cross-correlation of a (H, W, D) grid with a (h, w, D) template.

    ``out[y, x] = sum feat[offset + stride*y + dy, offset + stride*x + dx] * tmpl[dy, dx]``
    """
    feat = np.ascontiguousarray(feat, dtype=np.float64)
    tmpl = np.ascontiguousarray(tmpl, dtype=np.float64)
    if backend() == "numba":
        return _correlate_numba(feat, tmpl, int(offset), int(stride))
    return _correlate_numpy(feat, tmpl, int(offset), int(stride))


def smo_solve(K, y, C, alpha, G, eps, max_iter):
    """Pairwise (SMO) updates until the maximal KKT violation drops below ``eps``.

    ``alpha`` and ``G`` are updated in place, so calls can be chained with a
    shrinking ``eps``. Returns (pair updates made, final violation).
    """
    if backend() == "numba":
        return _smo_numba(K, y, float(C), alpha, G, float(eps), int(max_iter))
    return _smo_numpy(K, y, float(C), alpha, G, float(eps), int(max_iter))


def nearest_center(X, centers):
    X = np.ascontiguousarray(X, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if backend() == "numba":
        return _nearest_numba(X, centers)
    return _nearest_numpy(X, centers)
