"""Slow, obviously-correct reference implementations used only by tests."""
import numpy as np


def gaussian_taps(sigma, ksize):
    r = ksize // 2
    k = [np.exp(-0.5 * (t / sigma) ** 2) for t in range(-r, r + 1)]
    s = sum(k)
    return [v / s for v in k]


def _reflect(i, n):
    # half-sample symmetric: ... b a | a b c ... c b | b ...
    period = 2 * n
    i %= period
    return i if i < n else period - 1 - i


def lowpass_bruteforce(x, sigma, ksize, boundary):
    """Direct 2-D convolution with the outer-product kernel, one output at a time."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    k1 = gaussian_taps(sigma, ksize)
    r = ksize // 2
    idx = _reflect if boundary == "reflect" else (lambda i, n: i % n)
    out = np.zeros_like(x)
    for y in range(h):
        for xx in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc += k1[dy + r] * k1[dx + r] * x[idx(y + dy, h), idx(xx + dx, w)]
            out[y, xx] = acc
    return out


def conv2d_naive(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = b[oi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                yy, xx = yi * stride + u - pad, xi * stride + v - pad
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += x[ni, ci, yy, xx] * w[oi, ci, u, v]
                    out[ni, oi, yi, xi] = acc
    return out


def fc_naive(x, w, b):
    n, d = x.shape
    m = w.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = b[j]
            for k in range(d):
                acc += x[i, k] * w[j, k]
            out[i, j] = acc
    return out


def adamw_scalar(p, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    """Trace of a scalar parameter under AdamW, written out longhand."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        p = p - lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (vhat ** 0.5 + eps)
        trace.append(p)
    return trace


def piecewise_linear(xs, ys, t):
    if t <= xs[0]:
        return ys[0]
    if t >= xs[-1]:
        return ys[-1]
    for i in range(len(xs) - 1):
        if xs[i] <= t <= xs[i + 1]:
            f = (t - xs[i]) / (xs[i + 1] - xs[i])
            return ys[i] + f * (ys[i + 1] - ys[i])
    raise AssertionError("unreachable")


def argmax_scan(qualities):
    """qualities: list of (alpha, q). Highest q; ties to smallest |alpha|, then smaller alpha."""
    best = None
    for a, q in qualities:
        if best is None or q > best[1]:
            best = (a, q)
        elif q == best[1]:
            if abs(a) < abs(best[0]) or (abs(a) == abs(best[0]) and a < best[0]):
                best = (a, q)
    return best[0]
