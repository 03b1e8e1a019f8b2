"""Pseudo-labelling by rate-distortion sweep.

Each video is preprocessed at every strategy strength, encoded at every
nominal bitrate, scored, and labelled with the strength whose RD curve is
highest at the target bitrate. Encodes and scores are cached under content
hashes in the work directory, so an interrupted run resumes without
re-encoding finished jobs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import shlex
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filters import GaussianSpec, UnsharpMask, gaussian_lowpass
from .frame_io import load_y4m, to_rgb8, write_y4m

log = logging.getLogger(__name__)

DEFAULT_STRATEGIES = tuple(np.round(np.arange(-2.0, 3.0 + 1e-9, 0.5), 1).tolist())
DEFAULT_BITRATES = (1000, 2000, 3000, 4000)
LABEL_COLUMNS = ["video_id", "alpha_label", "quality_at_target", "target_kbps"]
AUDIT_COLUMNS = ["video_id", "alpha", "nominal_kbps", "measured_kbps", "quality"]


class LabelError(RuntimeError):
    pass


class EncoderError(LabelError):
    pass


class MetricError(LabelError):
    pass


@dataclass(frozen=True)
class LabelJobSpec:
    strategies: tuple = DEFAULT_STRATEGIES
    bitrates_kbps: tuple = DEFAULT_BITRATES
    target_kbps: float = 2000.0
    encoder_cmd: str | None = None
    decode_cmd: str | None = None
    metric_cmd: str = "builtin"
    output_ext: str = ".mp4"
    workdir: str = "hfprep-work"
    cache: bool = True
    timeout: float | None = 600.0
    gaussian: GaussianSpec = GaussianSpec()

    def __post_init__(self):
        s = [float(a) for a in self.strategies]
        object.__setattr__(self, "strategies", tuple(s))
        object.__setattr__(self, "bitrates_kbps", tuple(float(b) for b in self.bitrates_kbps))
        if not s or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("label.strategies must be non-empty and strictly increasing")
        if 0.0 not in s:
            raise ValueError("label.strategies must contain 0.0")
        br = self.bitrates_kbps
        if len(br) < 2 or min(br) <= 0:
            raise ValueError("label.bitrates_kbps needs at least two positive values")
        if not min(br) <= self.target_kbps <= max(br):
            raise ValueError(f"label.target_kbps {self.target_kbps} outside [{min(br)}, {max(br)}]")


@dataclass
class RDPoint:
    measured_kbps: float
    quality: float | None
    strategy: float
    nominal_kbps: float


@dataclass
class RDCurve:
    points: list

    @classmethod
    def from_points(cls, points):
        """Sort by measured bitrate; equal bitrates keep the best quality."""
        best = {}
        for p in points:
            q = best.get(p.measured_kbps)
            if q is None or p.quality > q.quality:
                best[p.measured_kbps] = p
        pts = [best[k] for k in sorted(best)]
        if len(pts) < 2:
            raise LabelError("an RD curve needs at least two distinct bitrates")
        return cls(pts)

    @property
    def bitrates(self):
        return np.array([p.measured_kbps for p in self.points])

    @property
    def qualities(self):
        return np.array([p.quality for p in self.points], dtype=np.float64)


def quality_at_bitrate(curve, target_kbps):
    """Piecewise-linear reading of the curve, held flat beyond its ends."""
    return float(np.interp(target_kbps, curve.bitrates, curve.qualities))


def select_optimal(curves, target_kbps, strategies=None):
    """Strength with the highest quality at the target bitrate.

    Ties go to the smallest ``|alpha|``, then to the smaller ``alpha``.
    """
    if strategies is not None:
        missing = [a for a in strategies if a not in curves]
        if missing:
            raise LabelError(f"missing RD curves for strategies {missing}")
    if not curves:
        raise LabelError("no RD curves to select from")
    scored = [(quality_at_bitrate(c, target_kbps), a) for a, c in curves.items()]
    best = max(q for q, _ in scored)
    return min((a for q, a in scored if q == best), key=lambda a: (abs(a), a))


# -- encoders and metrics ---------------------------------------------------


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:32]


def _run(argv, timeout, what):
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise EncoderError(f"{what} timed out after {timeout}s: {shlex.join(argv)}") from None
    except OSError as exc:
        raise EncoderError(f"{what} could not start: {exc}") from None
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace").strip()[-500:]
        raise EncoderError(f"{what} exited with status {proc.returncode}: {tail}")
    return proc


def fill_template(template, **values):
    """Split a command template like a shell would, then fill placeholders per argument."""
    return [tok.format(**values) for tok in shlex.split(template)]


class CommandEncoder:
    """External encoder driven by a template with ``{input}``, ``{output}``
    and ``{bitrate_kbps}`` (``{alpha}``, ``{width}``, ``{height}``, ``{fps}``
    are also available)."""

    def __init__(self, template, timeout=600.0):
        for ph in ("{input}", "{output}", "{bitrate_kbps}"):
            if ph not in template:
                raise ValueError(f"encoder command lacks the {ph} placeholder")
        self.template = template
        self.timeout = timeout
        self.calls = 0
        self._lock = threading.Lock()

    def cache_token(self):
        return {"encoder_cmd": self.template}

    def encode(self, src, dst, bitrate_kbps, alpha, video):
        with self._lock:
            self.calls += 1
        argv = fill_template(self.template, input=src, output=dst, bitrate_kbps=_fmt(bitrate_kbps),
                             alpha=alpha, width=video.width, height=video.height,
                             fps=f"{video.fps_num}/{video.fps_den}")
        _run(argv, self.timeout, "encoder")


def _fmt(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def sample_frame_indices(n_frames, fps_num, fps_den):
    """One frame per second: indices floor(k * fps) below ``n_frames``."""
    out, k = [], 0
    while True:
        i = (k * fps_num) // fps_den
        if i >= n_frames:
            return out
        out.append(i)
        k += 1


class FrameMetric:
    """Scores decoded frames sampled at 1 fps and averages them."""

    decode_cmd = None
    timeout = 600.0

    def cache_token(self):
        raise NotImplementedError

    def score_frame(self, frame, index):
        raise NotImplementedError

    def decode(self, encoded, workdir):
        if self.decode_cmd is None:
            return load_y4m(encoded)
        out = Path(workdir) / "decoded.y4m"
        _run(fill_template(self.decode_cmd, input=encoded, output_y4m=str(out)), self.timeout, "decoder")
        try:
            return load_y4m(out)
        finally:
            out.unlink(missing_ok=True)

    def measure(self, encoded, job=None, workdir=None):
        with tempfile.TemporaryDirectory(dir=workdir) as tmp:
            video = self.decode(encoded, tmp)
            idx = sample_frame_indices(len(video.frames), video.fps_num, video.fps_den)
            if not idx:
                raise MetricError(f"{encoded}: no frames to score")
            return float(np.mean([self.score_frame(video.frames[i], i) for i in idx]))


def builtin_quality(luma, block=8):
    """Hermetic stand-in quality score for offline runs and tests.

    Not a perceptual model: a saturating measure of high-frequency RMS
    (``r / (r + 4)``) minus half the relative excess of pixel steps across
    ``block``-aligned boundaries over steps elsewhere.
    """
    y = np.asarray(luma, dtype=np.float64)
    hf = y - gaussian_lowpass(y).astype(np.float64)
    r = float(np.sqrt(np.mean(hf * hf)))
    sharp = r / (r + 4.0)
    penalties = []
    for axis in (0, 1):
        d = np.abs(np.diff(y, axis=axis))
        n = d.shape[axis]
        on = np.arange(n) % block == block - 1
        if on.any() and (~on).any():
            d_on = np.take(d, np.where(on)[0], axis=axis).mean()
            d_off = np.take(d, np.where(~on)[0], axis=axis).mean()
            penalties.append(max(0.0, d_on - d_off) / (d_off + 1.0))
    return sharp - 0.5 * (float(np.mean(penalties)) if penalties else 0.0)


class BuiltinMetric(FrameMetric):
    def __init__(self, decode_cmd=None, timeout=600.0):
        self.decode_cmd = decode_cmd
        self.timeout = timeout

    def cache_token(self):
        return {"metric": "builtin-v1", "decode_cmd": self.decode_cmd}

    def score_frame(self, frame, index):
        return builtin_quality(frame.luma)


class CommandMetric(FrameMetric):
    """Runs ``template`` (with an ``{image}`` placeholder) on every sampled
    frame saved as an RGB PNG; the command prints one number."""

    def __init__(self, template, decode_cmd=None, timeout=600.0):
        if "{image}" not in template:
            raise ValueError("metric command lacks the {image} placeholder")
        self.template = template
        self.decode_cmd = decode_cmd
        self.timeout = timeout

    def cache_token(self):
        return {"metric_cmd": self.template, "decode_cmd": self.decode_cmd}

    def score_frame(self, frame, index):
        from PIL import Image

        with tempfile.TemporaryDirectory() as tmp:
            img = Path(tmp) / f"frame{index:06d}.png"
            Image.fromarray(to_rgb8(frame)).save(img)
            try:
                proc = _run(fill_template(self.template, image=str(img)), self.timeout, "metric")
            except EncoderError as exc:
                raise MetricError(str(exc)) from None
        text = proc.stdout.decode("utf-8", "replace").strip()
        try:
            value = float(text.split()[-1])
        except (ValueError, IndexError):
            raise MetricError(f"metric printed non-numeric output {text[:80]!r}") from None
        if not np.isfinite(value):
            raise MetricError(f"metric printed non-finite value {value}")
        return value


def make_metric(spec):
    if spec.metric_cmd in (None, "", "builtin"):
        return BuiltinMetric(spec.decode_cmd, spec.timeout)
    return CommandMetric(spec.metric_cmd, spec.decode_cmd, spec.timeout)


def measure_quality(encoded, metric, job=None, workdir=None):
    return metric.measure(str(encoded), job, workdir)


# -- jobs and cache ---------------------------------------------------------


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


_hash_lock = threading.Lock()
_hash_memo = {}


def file_digest(path):
    st = os.stat(path)
    key = (os.path.abspath(path), st.st_size, st.st_mtime_ns)
    with _hash_lock:
        if key in _hash_memo:
            return _hash_memo[key]
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    with _hash_lock:
        _hash_memo[key] = h.hexdigest()
    return _hash_memo[key]


@dataclass(frozen=True)
class EncodeJob:
    video_id: str
    path: str
    alpha: float
    bitrate_kbps: float


def plan_jobs(video_id, path, spec):
    """Every (strength, bitrate) pair for one video, strength-major."""
    return [EncodeJob(video_id, str(path), a, b) for a in spec.strategies for b in spec.bitrates_kbps]


class Labeler:
    """Runs and caches encode/score jobs under ``spec.workdir``."""

    def __init__(self, spec, encoder=None, metric=None, preprocessor=None):
        self.spec = spec
        if encoder is None:
            if not spec.encoder_cmd:
                raise ValueError("no encoder configured (label.encoder_cmd)")
            encoder = CommandEncoder(spec.encoder_cmd, spec.timeout)
        self.encoder = encoder
        self.metric = metric or make_metric(spec)
        self.pre = preprocessor or UnsharpMask(spec.gaussian)
        self.workdir = Path(spec.workdir)
        self._videos = {}
        self._vlock = threading.Lock()

    def _video(self, path):
        with self._vlock:
            if path not in self._videos:
                self._videos[path] = load_y4m(path)
            return self._videos[path]

    def job_key(self, job):
        return _digest({"video": file_digest(job.path), "alpha": job.alpha,
                        "bitrate": job.bitrate_kbps, "pre": self.pre.cache_token(),
                        "enc": self.encoder.cache_token()})

    def _preprocessed(self, job, video):
        if job.alpha == 0:
            return job.path
        key = _digest({"video": file_digest(job.path), "alpha": job.alpha, "pre": self.pre.cache_token()})
        out = self.workdir / "pre" / f"{key}.y4m"
        if not out.exists():
            out.parent.mkdir(parents=True, exist_ok=True)
            write_y4m(self.pre.video(video, job.alpha), out)
        return str(out)

    def encode_variant(self, job):
        """Encode one variant (or reuse the cached one); quality left unset."""
        key = self.job_key(job)
        rec_path = self.workdir / "jobs" / f"{key}.json"
        if self.spec.cache and rec_path.exists():
            rec = json.loads(rec_path.read_text())
            if Path(rec["output"]).exists():
                return RDPoint(rec["measured_kbps"], None, job.alpha, job.bitrate_kbps), rec["output"]
        video = self._video(job.path)
        src = self._preprocessed(job, video)
        out = self.workdir / "jobs" / key / ("encoded" + self.spec.output_ext)
        out.parent.mkdir(parents=True, exist_ok=True)
        self.encoder.encode(src, str(out), job.bitrate_kbps, job.alpha, video)
        size = out.stat().st_size if out.exists() else 0
        if size == 0:
            raise EncoderError(f"encoder produced no output for {job}")
        kbps = 8.0 * size / (1000.0 * video.duration)
        _atomic_write(rec_path, json.dumps({"measured_kbps": kbps, "output": str(out),
                                            "bytes": size, "job": job.__dict__}).encode())
        return RDPoint(kbps, None, job.alpha, job.bitrate_kbps), str(out)

    def run_job(self, job):
        point, encoded = self.encode_variant(job)
        qkey = _digest({"job": self.job_key(job), "metric": self.metric.cache_token()})
        q_path = self.workdir / "jobs" / f"{qkey}.quality.json"
        if self.spec.cache and q_path.exists():
            point.quality = json.loads(q_path.read_text())["quality"]
            return point
        point.quality = measure_quality(encoded, self.metric, job, str(self.workdir))
        _atomic_write(q_path, json.dumps({"quality": point.quality}).encode())
        return point

    def label_video(self, video_id, path, pool=None):
        jobs = plan_jobs(video_id, path, self.spec)
        points = list(pool.map(self.run_job, jobs)) if pool else [self.run_job(j) for j in jobs]
        curves = {a: RDCurve.from_points([p for p in points if p.strategy == a])
                  for a in self.spec.strategies}
        alpha = select_optimal(curves, self.spec.target_kbps, self.spec.strategies)
        q = quality_at_bitrate(curves[alpha], self.spec.target_kbps)
        return alpha, q, points


@dataclass
class LabelRun:
    labels: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def _csv_row(values):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue()


def pseudo_label_dataset(entries, spec, labels_path=None, audit_path=None, workers=1,
                         encoder=None, metric=None):
    """Label every ``(video_id, path)`` entry in order.

    Rows are appended to the CSV files as each video finishes; failing videos
    are recorded in ``LabelRun.failures`` and skipped.
    """
    lab = Labeler(spec, encoder, metric)
    run = LabelRun()
    lf = open(labels_path, "w", newline="") if labels_path else None
    af = open(audit_path, "w", newline="") if audit_path else None
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for f, cols in ((lf, LABEL_COLUMNS), (af, AUDIT_COLUMNS)):
            if f:
                f.write(_csv_row(cols))
        for video_id, path in entries:
            try:
                alpha, q, points = lab.label_video(video_id, path, pool)
            except (LabelError, OSError, ValueError) as exc:
                log.warning("labelling %s failed: %s", video_id, exc)
                run.failures.append((video_id, f"{type(exc).__name__}: {exc}"))
                continue
            row = [video_id, repr(alpha), repr(q), _fmt(spec.target_kbps)]
            run.labels.append(row)
            rows = [[video_id, repr(p.strategy), _fmt(p.nominal_kbps), repr(p.measured_kbps), repr(p.quality)]
                    for p in points]
            run.audit.extend(rows)
            if lf:
                lf.write(_csv_row(row))
                lf.flush()
            if af:
                af.write("".join(_csv_row(r) for r in rows))
                af.flush()
    finally:
        if pool:
            pool.shutdown(wait=True, cancel_futures=True)
        for f in (lf, af):
            if f:
                f.close()
    return run


def curves_from_audit(rows):
    """Group audit rows (dicts with the audit columns) into per-video RD curves."""
    by_video = {}
    for r in rows:
        p = RDPoint(float(r["measured_kbps"]), float(r["quality"]), float(r["alpha"]), float(r["nominal_kbps"]))
        by_video.setdefault(r["video_id"], {}).setdefault(p.strategy, []).append(p)
    return {v: {a: RDCurve.from_points(ps) for a, ps in d.items()} for v, d in by_video.items()}
