"""Raw video containers (YUV4MPEG2 and headerless planar YUV) as float planes.

Planes are 2-D ``float32`` arrays in the nominal 0..255 range. Nothing is
clipped until :func:`write_y4m`, so the filter algebra stays linear in between.
"""
from __future__ import annotations

import enum
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BT601 = (0.299, 0.587, 0.114)

Y4M_MAGIC = b"YUV4MPEG2"


class FrameIOError(ValueError):
    """Malformed or unsupported video data."""

    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


class Layout(str, enum.Enum):
    YUV420 = "YUV420"
    YUV444 = "YUV444"
    GRAY = "GRAY"
    # in-memory only; cannot be written to y4m
    RGB = "RGB"

    def plane_shapes(self, width, height):
        """(rows, cols) of every plane for a frame of the given size."""
        if self is Layout.YUV420:
            cw, ch = (width + 1) // 2, (height + 1) // 2
            return [(height, width), (ch, cw), (ch, cw)]
        if self is Layout.GRAY:
            return [(height, width)]
        return [(height, width)] * 3

    def frame_bytes(self, width, height):
        return sum(r * c for r, c in self.plane_shapes(width, height))


_CHROMA_TAGS = {
    "420": Layout.YUV420,
    "420jpeg": Layout.YUV420,
    "420paldv": Layout.YUV420,
    "420mpeg2": Layout.YUV420,
    "444": Layout.YUV444,
    "mono": Layout.GRAY,
}
_WRITE_TAGS = {Layout.YUV420: "420", Layout.YUV444: "444", Layout.GRAY: "mono"}


@dataclass(frozen=True)
class Frame:
    planes: tuple
    layout: Layout

    @property
    def luma(self):
        return self.planes[0]

    @property
    def height(self):
        return self.planes[0].shape[0]

    @property
    def width(self):
        return self.planes[0].shape[1]


@dataclass
class PlanarVideo:
    frames: list
    width: int
    height: int
    fps_num: int = 30
    fps_den: int = 1
    layout: Layout = Layout.YUV420
    extra_header: tuple = field(default=(), compare=False)

    def __post_init__(self):
        self.layout = Layout(self.layout)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bad frame size {self.width}x{self.height}")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise ValueError(f"bad frame rate {self.fps_num}:{self.fps_den}")
        shapes = self.layout.plane_shapes(self.width, self.height)
        for i, fr in enumerate(self.frames):
            if fr.layout is not self.layout or [p.shape for p in fr.planes] != shapes:
                raise ValueError(f"frame {i} does not match the video layout/size")

    def __len__(self):
        return len(self.frames)

    @property
    def fps(self):
        return self.fps_num / self.fps_den

    @property
    def duration(self):
        """Length in seconds."""
        return len(self.frames) * self.fps_den / self.fps_num

    def with_frames(self, frames):
        return PlanarVideo(list(frames), self.width, self.height, self.fps_num,
                           self.fps_den, self.layout, self.extra_header)


def make_frame(planes, layout):
    return Frame(tuple(np.asarray(p, dtype=np.float32) for p in planes), Layout(layout))


def gray_video(frames, fps_num=30, fps_den=1):
    """Build a GRAY video from a sequence of 2-D arrays."""
    frames = [make_frame([f], Layout.GRAY) for f in frames]
    h, w = frames[0].luma.shape
    return PlanarVideo(frames, w, h, fps_num, fps_den, Layout.GRAY)


def _parse_header(line, offset):
    fields = line.split(b" ")
    if fields[0] != Y4M_MAGIC:
        raise FrameIOError("missing YUV4MPEG2 signature", offset)
    width = height = None
    fps = (30, 1)
    layout = Layout.YUV420
    extra = []
    pos = offset + len(Y4M_MAGIC) + 1
    for tok in fields[1:]:
        if not tok:
            pos += 1
            continue
        key, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        try:
            if key == "W":
                width = int(val)
            elif key == "H":
                height = int(val)
            elif key == "F":
                num, den = val.split(":")
                fps = (int(num), int(den))
            elif key == "C":
                if val not in _CHROMA_TAGS:
                    raise FrameIOError(f"unsupported chroma tag C{val}", pos)
                layout = _CHROMA_TAGS[val]
            else:
                extra.append(tok.decode("ascii", "replace"))
        except (ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, FrameIOError):
                raise
            raise FrameIOError(f"malformed header field {tok!r}", pos) from None
        pos += len(tok) + 1
    if not width or not height or width <= 0 or height <= 0:
        raise FrameIOError("header lacks a positive W/H", offset)
    if fps[0] <= 0 or fps[1] <= 0:
        raise FrameIOError(f"bad frame rate {fps[0]}:{fps[1]}", offset)
    return width, height, fps, layout, tuple(extra)


def parse_y4m(buf):
    """Decode an in-memory y4m byte string."""
    nl = buf.find(b"\n")
    if not buf.startswith(Y4M_MAGIC):
        raise FrameIOError("missing YUV4MPEG2 signature", 0)
    if nl < 0:
        raise FrameIOError("unterminated stream header", len(buf))
    width, height, (fn, fd), layout, extra = _parse_header(buf[:nl], 0)
    shapes = layout.plane_shapes(width, height)
    fsize = layout.frame_bytes(width, height)
    frames = []
    pos = nl + 1
    while pos < len(buf):
        end = buf.find(b"\n", pos)
        if not buf.startswith(b"FRAME", pos) or end < 0:
            raise FrameIOError("expected FRAME marker", pos)
        pos = end + 1
        if pos + fsize > len(buf):
            raise FrameIOError(
                f"truncated frame {len(frames)}: need {fsize} bytes, have {len(buf) - pos}", pos)
        raw = np.frombuffer(buf, dtype=np.uint8, count=fsize, offset=pos)
        planes, o = [], 0
        for r, c in shapes:
            planes.append(raw[o:o + r * c].reshape(r, c).astype(np.float32))
            o += r * c
        frames.append(Frame(tuple(planes), layout))
        pos += fsize
    return PlanarVideo(frames, width, height, fn, fd, layout, extra)


def load_y4m(path):
    return parse_y4m(Path(path).read_bytes())


def quantize(plane):
    """Clip to [0, 255] and round half away from zero, as stored on disk."""
    p = np.asarray(plane, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise FrameIOError("non-finite sample encountered")
    return np.floor(np.clip(p, 0.0, 255.0) + 0.5).astype(np.uint8)


def encode_y4m(video):
    if video.layout not in _WRITE_TAGS:
        raise FrameIOError(f"layout {video.layout.value} cannot be stored in y4m")
    head = [f"YUV4MPEG2 W{video.width} H{video.height} F{video.fps_num}:{video.fps_den}"]
    head += list(video.extra_header) or ["Ip", "A1:1"]
    head.append(f"C{_WRITE_TAGS[video.layout]}")
    chunks = [" ".join(head).encode("ascii") + b"\n"]
    for fr in video.frames:
        chunks.append(b"FRAME\n")
        chunks.extend(quantize(p).tobytes() for p in fr.planes)
    return b"".join(chunks)


def write_y4m(video, path):
    data = encode_y4m(video)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_raw(path, width, height, layout="YUV420", fps=(30, 1)):
    """Headerless planar 8-bit video (``.yuv``)."""
    layout = Layout(layout)
    if layout is Layout.RGB:
        raise FrameIOError("raw input must be planar YUV or GRAY")
    buf = Path(path).read_bytes()
    fsize = layout.frame_bytes(width, height)
    if len(buf) % fsize:
        n = len(buf) // fsize
        raise FrameIOError(f"truncated frame {n}: {len(buf) - n * fsize} of {fsize} bytes", n * fsize)
    shapes = layout.plane_shapes(width, height)
    frames = []
    for start in range(0, len(buf), fsize):
        raw = np.frombuffer(buf, dtype=np.uint8, count=fsize, offset=start)
        planes, o = [], 0
        for r, c in shapes:
            planes.append(raw[o:o + r * c].reshape(r, c).astype(np.float32))
            o += r * c
        frames.append(Frame(tuple(planes), layout))
    return PlanarVideo(frames, width, height, fps[0], fps[1], layout)


def load_video(path, raw=None):
    """Load ``path`` as y4m, or as raw planar data when ``raw`` is given.

    ``raw`` is a dict with ``width``, ``height``, ``layout`` and ``fps``.
    """
    if raw:
        return load_raw(path, **raw)
    return load_y4m(path)


def to_grayscale(frame, weights=BT601):
    """Luma of a frame; YUV layouts return their Y plane untouched.

    Also accepts an ``(H, W, 3)`` RGB array.
    """
    if isinstance(frame, np.ndarray):
        if frame.ndim == 2:
            return frame
        rgb = np.moveaxis(frame.astype(np.float64), -1, 0)
    elif frame.layout is Layout.RGB:
        rgb = [p.astype(np.float64) for p in frame.planes]
    else:
        return frame.luma
    r, g, b = rgb
    return (weights[0] * r + weights[1] * g + weights[2] * b).astype(np.float32)


def to_rgb8(frame):
    """8-bit RGB image of a frame, full-range BT.601 for YUV input."""
    if frame.layout is Layout.GRAY:
        y = quantize(frame.luma)
        return np.stack([y, y, y], axis=-1)
    if frame.layout is Layout.RGB:
        return np.stack([quantize(p) for p in frame.planes], axis=-1)
    y = frame.planes[0].astype(np.float64)
    u, v = (p.astype(np.float64) for p in frame.planes[1:])
    if frame.layout is Layout.YUV420:
        u = np.repeat(np.repeat(u, 2, 0), 2, 1)[:frame.height, :frame.width]
        v = np.repeat(np.repeat(v, 2, 0), 2, 1)[:frame.height, :frame.width]
    u, v = u - 128.0, v - 128.0
    r = y + 1.402 * v
    g = y - 0.344136 * u - 0.714136 * v
    b = y + 1.772 * u
    return np.stack([quantize(r), quantize(g), quantize(b)], axis=-1)
