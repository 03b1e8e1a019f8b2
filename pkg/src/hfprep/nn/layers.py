"""Forward/backward pairs for the handful of layers the predictor needs.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Arrays are NCHW; computation follows the input dtype.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation of ``x`` (N, C, H, W) with ``w`` (O, C, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4 or b.shape != (w.shape[0],) or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    kh, kw = w.shape[2:]
    ho, wo = _conv_out(x.shape[2], kh, stride, pad), _conv_out(x.shape[3], kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be empty: x{x.shape} w{w.shape} stride={stride} pad={pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, xp.shape, win, w, stride, pad)


def conv2d_backward(dout, cache):
    xshape, xpshape, win, w, stride, pad = cache
    kh, kw = w.shape[2:]
    ho, wo = dout.shape[2:]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    dxp = np.zeros(xpshape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    h, wd = xshape[2:]
    return dxp[:, :, pad:pad + h, pad:pad + wd], dw, db


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, x):
    return dout * (x > 0)


def avgpool_forward(x, k=2):
    """Non-overlapping ``k`` x ``k`` mean pooling; H and W must divide by ``k``."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avgpool factor {k} does not divide spatial shape {x.shape[2:]}")
    out = x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    return out, (x.shape, k)


def avgpool_backward(dout, cache):
    shape, k = cache
    return upsample(dout, k) / (k * k)


def avgpool2_forward(x):
    return avgpool_forward(x, 2)


def upsample(x, k=2):
    """Nearest-neighbour upsampling by pixel duplication."""
    return np.repeat(np.repeat(x, k, axis=2), k, axis=3)


def global_avgpool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(dout, shape):
    n, c, h, w = shape
    return np.broadcast_to((dout / (h * w))[:, :, None, None], shape).copy()


def fc_forward(x, w, b):
    """``x`` (N, D) times ``w`` (M, D) transposed, plus ``b`` (M,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"fully_connected shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w.T + b, (x, w)


def fc_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def l1_loss(pred, gt):
    """Mean absolute error and its gradient w.r.t. ``pred`` (zero at ties)."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"l1_loss shape mismatch: pred{pred.shape} gt{gt.shape}")
    diff = pred - gt
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size
