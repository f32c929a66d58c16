"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (explicit loops, float64 math) and
shares no code with the library paths it checks.
"""

import numpy as np


def numerical_gradient(f, x, h=1e-3):
    """Central finite differences of scalar f at x, step h."""
    x = np.asarray(x)
    grad = np.zeros(x.shape, np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric):
    """Relative disagreement between two gradients, vector-norm form.

    ||a - n|| / max(||a||, ||n||). The norm form keeps the check meaningful
    in float32, where individual near-zero entries sit at the finite
    difference noise floor while the gradient as a whole is well resolved.
    """
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def naive_conv2d(x, w, b, stride, pad):
    n, c_in, h, wid = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wid + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c_in, h + 2 * pad, wid + 2 * pad), np.float64)
    xp[:, :, pad : pad + h, pad : pad + wid] = x
    out = np.zeros((n, c_out, ho, wo), np.float64)
    for ni in range(n):
        for f in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(c_in):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (
                                    xp[ni, c, i * stride + ki, j * stride + kj]
                                    * w[f, c, ki, kj]
                                )
                    out[ni, f, i, j] = acc + b[f]
    return out


def naive_convt2d(x, w, b, stride, pad):
    n, c_in, h, wid = x.shape
    _, c_out, k, _ = w.shape
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wid - 1) * stride - 2 * pad + k
    outp = np.zeros((n, c_out, ho + 2 * pad, wo + 2 * pad), np.float64)
    for ni in range(n):
        for c in range(c_in):
            for i in range(h):
                for j in range(wid):
                    for f in range(c_out):
                        for ki in range(k):
                            for kj in range(k):
                                outp[ni, f, i * stride + ki, j * stride + kj] += (
                                    x[ni, c, i, j] * w[c, f, ki, kj]
                                )
    out = outp[:, :, pad : pad + ho, pad : pad + wo]
    return out + b[None, :, None, None]


def naive_batchnorm_train(x, gamma, beta, eps=1e-5):
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    xhat = (x - mean[None, :, None, None]) / np.sqrt(var + eps)[None, :, None, None]
    return gamma[None, :, None, None] * xhat + beta[None, :, None, None]


def naive_fc(x, w, b):
    n, d_in = x.shape
    d_out = w.shape[0]
    out = np.zeros((n, d_out), np.float64)
    for ni in range(n):
        for o in range(d_out):
            acc = 0.0
            for i in range(d_in):
                acc += x[ni, i] * w[o, i]
            out[ni, o] = acc + b[o]
    return out


def naive_guided_filter(guide, src, radius, eps):
    """Edge-aware smoothing of src guided by guide, windowed per pixel.

    Plain per-pixel double loop over clipped box windows; float64.
    """
    guide = np.asarray(guide, np.float64)
    src = np.asarray(src, np.float64)
    h, w = guide.shape

    def win_mean(img, i, j):
        i0, i1 = max(0, i - radius), min(h, i + radius + 1)
        j0, j1 = max(0, j - radius), min(w, j + radius + 1)
        return img[i0:i1, j0:j1].mean()

    a = np.zeros((h, w), np.float64)
    b = np.zeros((h, w), np.float64)
    for i in range(h):
        for j in range(w):
            mg = win_mean(guide, i, j)
            ms = win_mean(src, i, j)
            mgs = win_mean(guide * src, i, j)
            mgg = win_mean(guide * guide, i, j)
            var = mgg - mg * mg
            a[i, j] = (mgs - mg * ms) / (var + eps)
            b[i, j] = ms - a[i, j] * mg
    out = np.zeros((h, w), np.float64)
    for i in range(h):
        for j in range(w):
            out[i, j] = win_mean(a, i, j) * guide[i, j] + win_mean(b, i, j)
    return out


def flow_color_energy(target, source, u, v, a_field, sigma_s, sigma_c):
    """Direct summation of the joint displacement+color objective.

    data: sum_p ||target(p) - A(p) . [source(p+u(p)); 1]||^2
    reg:  sigma_s (|grad u|^2 + |grad v|^2) + sigma_c |grad A|^2
    Images are expected in [0,1]; forward differences for gradients;
    bilinear sampling with edge clamping, all in float64 loops.
    """
    t = np.asarray(target, np.float64)
    s = np.asarray(source, np.float64)
    h, w = t.shape[:2]

    def sample(img, y, x):
        y = min(max(y, 0.0), h - 1.0)
        x = min(max(x, 0.0), w - 1.0)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
        fy, fx = y - y0, x - x0
        return (
            img[y0, x0] * (1 - fy) * (1 - fx)
            + img[y0, x1] * (1 - fy) * fx
            + img[y1, x0] * fy * (1 - fx)
            + img[y1, x1] * fy * fx
        )

    data = 0.0
    for i in range(h):
        for j in range(w):
            samp = sample(s, i + v[i, j], j + u[i, j])
            hom = np.array([samp[0], samp[1], samp[2], 1.0])
            pred = a_field[i, j] @ hom
            diff = t[i, j] - pred
            data += float(diff @ diff)
    reg = 0.0
    for i in range(h):
        for j in range(w):
            if i + 1 < h:
                reg += sigma_s * ((u[i + 1, j] - u[i, j]) ** 2 + (v[i + 1, j] - v[i, j]) ** 2)
                reg += sigma_c * float(np.sum((a_field[i + 1, j] - a_field[i, j]) ** 2))
            if j + 1 < w:
                reg += sigma_s * ((u[i, j + 1] - u[i, j]) ** 2 + (v[i, j + 1] - v[i, j]) ** 2)
                reg += sigma_c * float(np.sum((a_field[i, j + 1] - a_field[i, j]) ** 2))
    return data + reg
