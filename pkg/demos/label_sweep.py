"""
Pseudo-labels from a rate-distortion sweep
==========================================

Label two videos with an in-process encoder and metric. The mock encoder
writes a file whose size sets the measured bitrate; the mock metric peaks
at a strength chosen per run.
"""
import tempfile
from pathlib import Path

import numpy as np

from hfprep.frame_io import gray_video, write_y4m
from hfprep.labeler import LabelJobSpec, pseudo_label_dataset


class PaddingEncoder:
    """Output size tracks the requested bitrate; sharpening costs 10% per unit."""

    def cache_token(self):
        return {"enc": "padding"}

    def encode(self, src, dst, bitrate_kbps, alpha, video):
        kbps = bitrate_kbps * (1 + 0.1 * alpha)
        Path(dst).write_bytes(b"\0" * round(kbps * 1000 * video.duration / 8))


class PeakMetric:
    """Quality grows with rate and drops away from ``peak``."""

    def __init__(self, peak):
        self.peak = peak

    def cache_token(self):
        return {"metric": "peak", "peak": self.peak}

    def measure(self, encoded, job, workdir):
        kbps = job.bitrate_kbps * (1 + 0.1 * job.alpha)
        return 0.001 * kbps - 0.5 * (job.alpha - self.peak) ** 2


work = Path(tempfile.mkdtemp())
rng = np.random.default_rng(0)
entries = []
for k in range(2):
    path = work / f"v{k}.y4m"
    write_y4m(gray_video([rng.uniform(0, 255, (16, 16)) for _ in range(30)]), path)
    entries.append((f"v{k}", str(path)))

spec = LabelJobSpec(workdir=str(work / "cache"))
run = pseudo_label_dataset(entries, spec, work / "labels.csv", work / "audit.csv",
                           encoder=PaddingEncoder(), metric=PeakMetric(0.5))
print((work / "labels.csv").read_text())
print("audit rows:", len(run.audit))

# a second run reuses every cached encode and score
run = pseudo_label_dataset(entries, spec, encoder=PaddingEncoder(), metric=PeakMetric(0.5))
print("labels again:", [row[1] for row in run.labels])
