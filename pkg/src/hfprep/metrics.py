"""Prediction accuracy (PLCC, RMSE) and spectral energy, all in float64."""
import numpy as np


class MetricError(ValueError):
    pass


def _pair(pred, gt, min_len):
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise MetricError(f"length mismatch: {p.size} predictions vs {g.size} ground truth")
    if p.size < min_len:
        raise MetricError(f"need at least {min_len} pairs, got {p.size}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
        raise MetricError("scores must be finite")
    return p, g


def plcc(pred, gt):
    """Pearson linear correlation; no logistic remapping is applied."""
    p, g = _pair(pred, gt, 2)
    dp, dg = p - p.mean(), g - g.mean()
    sp, sg = np.sqrt(dp @ dp), np.sqrt(dg @ dg)
    if sp == 0 or sg == 0:
        raise MetricError("correlation undefined for a constant sequence")
    return float(np.clip((dp @ dg) / (sp * sg), -1.0, 1.0))


def rmse(pred, gt):
    p, g = _pair(pred, gt, 1)
    d = p - g
    return float(np.sqrt(np.mean(d * d)))


def radial_frequency(shape):
    """Radial frequency of every DFT bin, scaled so the (0.5, 0.5) corner is 1."""
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.sqrt(fx ** 2 + fy ** 2) / np.sqrt(0.5)


def hf_energy(plane, cutoff_fraction=0.5):
    """Sum of squared DFT magnitudes at radial frequency above the cutoff (DC excluded)."""
    if not 0 < cutoff_fraction < 1:
        raise MetricError(f"cutoff_fraction must lie in (0, 1), got {cutoff_fraction}")
    x = np.asarray(plane, dtype=np.float64)
    spec = np.abs(np.fft.fft2(x)) ** 2
    r = radial_frequency(x.shape)
    keep = r > cutoff_fraction
    keep[0, 0] = False
    return float(spec[keep].sum())
