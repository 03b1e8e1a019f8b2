"""
Sampling network input clips
============================

Draw a clip of frames and matching high-frequency masks from a synthetic
video, then rebuild the identical clip from its recorded trace.
"""
import numpy as np

from hfprep.frame_io import gray_video
from hfprep.sampling import ClipTrace, SamplerConfig, build_from_trace, build_input_clip

rng = np.random.default_rng(1)
video = gray_video([rng.uniform(0, 255, (72, 96)) for _ in range(40)])

# 4 segments x 2 frames, a 4x4 grid of 8-pixel patches -> 8 frames of 32x32
cfg = SamplerConfig(segments=4, frames_per_segment=2, grid=4, patch=8)
clip = build_input_clip(video, cfg, rng=7)
print("frames", clip.frames.shape, "masks", clip.hf_masks.shape)
print("frame indices", clip.trace.frame_indices)

# the trace serializes to JSON and replays exactly
trace = ClipTrace.from_json(clip.trace.to_json())
again = build_from_trace(video, trace, cfg)
print("replay identical:", np.array_equal(again.frames, clip.frames))

# videos shorter than a clip repeat their last frame
short = video.with_frames(video.frames[:5])
print("short video clip:", build_input_clip(short, cfg, rng=0).trace.frame_indices)
