"""Fixed-size network inputs: segment-based temporal sampling plus grid-patch
spatial fragmentation.

A clip records a :class:`ClipTrace` (frame indices and patch offsets) so it
can be rebuilt exactly from the source video.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .filters import GaussianSpec, highfreq_mask
from .frame_io import to_grayscale


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    segments: int = 16
    frames_per_segment: int = 2
    grid: int = 16
    patch: int = 16

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"sampler.{k} must be a positive integer, got {v!r}")

    @property
    def clip_length(self):
        return self.segments * self.frames_per_segment

    @property
    def side(self):
        return self.grid * self.patch


@dataclass(frozen=True)
class ClipTrace:
    frame_indices: tuple
    # (row, col) of each patch's top-left corner in source pixels, row-major over cells
    patch_offsets: tuple

    def to_json(self):
        return json.dumps({"frames": list(self.frame_indices),
                           "patches": [list(p) for p in self.patch_offsets]},
                          separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(d["frames"]), tuple(tuple(p) for p in d["patches"]))


@dataclass
class SampleClip:
    frames: np.ndarray  # (T, S, S) float32
    hf_masks: np.ndarray  # (T, S, S) float32
    trace: ClipTrace


def derive_seed(*parts):
    """64-bit seed from arbitrary parts via BLAKE2b of their repr, joined by '/'."""
    h = hashlib.blake2b("/".join(repr(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def segment_bounds(n, segments):
    return [k * n // segments for k in range(segments + 1)]


def temporal_sample(n_frames, cfg, rng):
    """Frame indices: ``frames_per_segment`` consecutive frames at a random
    start inside each of ``segments`` near-equal contiguous spans."""
    if hasattr(n_frames, "frames"):
        n_frames = len(n_frames)
    need = cfg.clip_length
    if n_frames < need:
        raise SamplingError(f"video has {n_frames} frames; at least {need} required")
    bounds = segment_bounds(n_frames, cfg.segments)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        start = lo + int(rng.integers(0, hi - lo - cfg.frames_per_segment + 1))
        out.extend(range(start, start + cfg.frames_per_segment))
    return out


def cell_edges(size, grid):
    """Cell boundaries; the remainder pixels go to the last cell."""
    step = size // grid
    return [i * step for i in range(grid)] + [size]


def draw_patch_offsets(height, width, cfg, rng):
    if height < cfg.side or width < cfg.side:
        raise SamplingError(f"plane {width}x{height} smaller than fragment side {cfg.side}")
    rows, cols = cell_edges(height, cfg.grid), cell_edges(width, cfg.grid)
    offsets = []
    for r in range(cfg.grid):
        for c in range(cfg.grid):
            dy = int(rng.integers(0, rows[r + 1] - rows[r] - cfg.patch + 1))
            dx = int(rng.integers(0, cols[c + 1] - cols[c] - cfg.patch + 1))
            offsets.append((rows[r] + dy, cols[c] + dx))
    return offsets


def assemble_fragment(plane, offsets, cfg):
    p = cfg.patch
    out = np.empty((cfg.side, cfg.side), dtype=np.float32)
    for i, (y, x) in enumerate(offsets):
        r, c = divmod(i, cfg.grid)
        out[r * p:(r + 1) * p, c * p:(c + 1) * p] = plane[y:y + p, x:x + p]
    return out


def spatial_fragment(plane, cfg, rng):
    """Mosaic of one random patch per grid cell, kept in grid order."""
    offsets = draw_patch_offsets(*plane.shape, cfg, rng)
    return assemble_fragment(plane, offsets, cfg)


def pad_frames(video, n):
    """Repeat the last frame until the video has at least ``n`` frames."""
    if len(video.frames) >= n:
        return video
    return video.with_frames(list(video.frames) + [video.frames[-1]] * (n - len(video.frames)))


def build_from_trace(video, trace, cfg, mask_spec=GaussianSpec()):
    video = pad_frames(video, cfg.clip_length)
    frames = np.stack([assemble_fragment(to_grayscale(video.frames[i]), trace.patch_offsets, cfg)
                       for i in trace.frame_indices])
    masks = np.stack([highfreq_mask(f, mask_spec) for f in frames])
    return SampleClip(frames, masks, trace)


def build_input_clip(video, cfg, mask_spec=GaussianSpec(), rng=None):
    """Sample one network input clip; patch positions are shared by all frames."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    video = pad_frames(video, cfg.clip_length)
    indices = temporal_sample(len(video.frames), cfg, rng)
    offsets = draw_patch_offsets(video.height, video.width, cfg, rng)
    return build_from_trace(video, ClipTrace(tuple(indices), tuple(offsets)), cfg, mask_spec)
