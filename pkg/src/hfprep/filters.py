"""Gaussian low-pass, signed unsharp masking and the high-frequency mask.

The unsharp mask is ``alpha * (x - L(x)) + x``: positive ``alpha`` sharpens,
negative smooths, zero leaves the plane alone. Nothing here clips.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .frame_io import Frame, Layout, to_grayscale

ALPHA_MIN, ALPHA_MAX = -2.0, 3.0

_PAD_MODES = {"reflect": "symmetric", "wrap": "wrap"}


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = 1.0
    ksize: int = 5
    boundary: str = "reflect"

    def __post_init__(self):
        if not (isinstance(self.ksize, (int, np.integer)) and self.ksize >= 3 and self.ksize % 2 == 1):
            raise ValueError(f"ksize must be an odd integer >= 3, got {self.ksize!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if self.boundary not in _PAD_MODES:
            raise ValueError(f"boundary must be one of {sorted(_PAD_MODES)}, got {self.boundary!r}")

    @property
    def radius(self):
        return self.ksize // 2

    def kernel(self):
        """Truncated 1-D Gaussian taps, renormalized to sum to one."""
        t = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        k = np.exp(-0.5 * (t / self.sigma) ** 2)
        return k / k.sum()

    def to_dict(self):
        return asdict(self)


def _smooth_axis(x, taps, axis, mode):
    # x + sum_i w_i (x[n+i] - x[n]): identical to sum_i w_i x[n+i] when the
    # taps sum to one, but leaves constant signals bit-exact.
    r = len(taps) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    xp = np.pad(x, pad, mode=mode)
    n = x.shape[axis]
    acc = np.zeros_like(x)
    for i, w in enumerate(taps):
        if i == r:
            continue
        shifted = xp[i:i + n, :] if axis == 0 else xp[:, i:i + n]
        acc += w * (shifted - x)
    return x + acc


def _lowpass64(x, spec):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty 2-D plane, got shape {x.shape}")
    if spec.boundary == "reflect" and spec.radius > min(x.shape):
        raise ValueError(f"ksize {spec.ksize} too large for a {x.shape[1]}x{x.shape[0]} plane")
    taps = spec.kernel()
    mode = _PAD_MODES[spec.boundary]
    return _smooth_axis(_smooth_axis(x, taps, 1, mode), taps, 0, mode)


def gaussian_lowpass(x, spec=GaussianSpec()):
    """Separable Gaussian blur, horizontal pass then vertical."""
    return _lowpass64(x, spec).astype(np.float32)


def usm_filter(x, alpha, spec=GaussianSpec()):
    """Unsharp mask of strength ``alpha`` on one plane (unclipped)."""
    if not math.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha!r}")
    if alpha == 0:
        return np.array(x, dtype=np.float32, copy=True)
    x64 = np.asarray(x, dtype=np.float64)
    return (x64 + alpha * (x64 - _lowpass64(x64, spec))).astype(np.float32)


def highfreq_mask(frame, spec=GaussianSpec()):
    """Grayscale minus its low-pass, same size as the frame."""
    g = np.asarray(to_grayscale(frame), dtype=np.float64)
    return (g - _lowpass64(g, spec)).astype(np.float32)


def transfer_function(spec, shape):
    """Frequency response of the circular low-pass on a plane of ``shape``."""
    taps = spec.kernel()
    r = spec.radius
    out = []
    for n in shape:
        h = np.zeros(n)
        for i, w in enumerate(taps):
            h[(i - r) % n] += w
        out.append(np.fft.fft(h).real)
    return np.outer(out[0], out[1])


class Preprocessor:
    """Strength-keyed per-frame filter. Subclasses implement :meth:`plane`."""

    name = "base"

    def plane(self, x, alpha):
        raise NotImplementedError

    def frame(self, frame, alpha):
        if frame.layout is Layout.RGB:
            raise ValueError("preprocessing works on YUV or GRAY frames")
        if alpha == 0:
            return frame
        # chroma passes through; only luma is filtered
        return Frame((self.plane(frame.luma, alpha),) + tuple(frame.planes[1:]), frame.layout)

    def video(self, video, alpha):
        return video.with_frames(self.frame(f, alpha) for f in video.frames)

    def cache_token(self):
        return {"filter": self.name}


class UnsharpMask(Preprocessor):
    name = "usm"

    def __init__(self, spec=GaussianSpec()):
        self.spec = spec

    def plane(self, x, alpha):
        return usm_filter(x, alpha, self.spec)

    def cache_token(self):
        return {"filter": self.name, **self.spec.to_dict()}


PREPROCESSORS = {"usm": UnsharpMask}
