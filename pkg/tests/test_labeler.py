import csv
import sys
import threading
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfprep.filters import UnsharpMask
from hfprep.frame_io import gray_video, load_y4m, write_y4m
from hfprep.labeler import (DEFAULT_STRATEGIES, CommandEncoder, CommandMetric, EncoderError, LabelError,
                            Labeler, LabelJobSpec, MetricError, RDCurve, RDPoint, builtin_quality,
                            curves_from_audit, fill_template, plan_jobs, pseudo_label_dataset,
                            quality_at_bitrate, sample_frame_indices, select_optimal)

from oracles import argmax_scan, piecewise_linear


def test_default_spec():
    spec = LabelJobSpec()
    assert spec.strategies == DEFAULT_STRATEGIES
    assert DEFAULT_STRATEGIES == (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    assert spec.bitrates_kbps == (1000, 2000, 3000, 4000) and spec.target_kbps == 2000


@pytest.mark.parametrize("kw,msg", [
    (dict(strategies=()), "non-empty"), (dict(strategies=(0.0, -1.0)), "increasing"),
    (dict(strategies=(-1.0, 1.0)), "contain 0.0"), (dict(bitrates_kbps=(1000,)), "two positive"),
    (dict(target_kbps=5000), "outside")])
def test_spec_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        LabelJobSpec(**kw)


# -- curve reading and selection -------------------------------------------


def curve(pairs, alpha=0.0):
    return RDCurve.from_points([RDPoint(b, q, alpha, b) for b, q in pairs])


def test_interpolation_examples():
    c = curve([(1000, 0.4), (3000, 0.8)])
    assert quality_at_bitrate(c, 2000) == pytest.approx(0.6, abs=1e-12)
    assert quality_at_bitrate(c, 500) == 0.4
    assert quality_at_bitrate(c, 9000) == 0.8


def test_curve_sorting_and_ties():
    c = curve([(3000, 0.9), (1000, 0.2), (3000, 0.7)])
    assert c.bitrates.tolist() == [1000, 3000] and c.qualities.tolist() == [0.2, 0.9]
    with pytest.raises(LabelError):
        curve([(1000, 0.1), (1000, 0.2)])


def random_curve(r, alpha=0.0):
    b = np.sort(r.uniform(500, 5000, 4))
    q = np.sort(r.uniform(0, 1, 4))
    return curve(list(zip(b.tolist(), q.tolist())), alpha)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0, 6000))
def test_interpolation_matches_oracle(seed, t):
    c = random_curve(np.random.default_rng(seed))
    assert quality_at_bitrate(c, t) == pytest.approx(
        piecewise_linear(c.bitrates.tolist(), c.qualities.tolist(), t), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t1=st.floats(0, 6000), t2=st.floats(0, 6000))
def test_interpolation_monotone_in_target(seed, t1, t2):
    c = random_curve(np.random.default_rng(seed))
    lo, hi = sorted((t1, t2))
    assert quality_at_bitrate(c, lo) <= quality_at_bitrate(c, hi) + 1e-12


def analytic_curves(peak=-0.5, target=2000):
    """Measured rate grows with sharpening; quality is linear in measured rate
    with a concave penalty around ``peak``, so the argmax at any target is ``peak``."""
    curves = {}
    for a in DEFAULT_STRATEGIES:
        pts = [RDPoint(b * (1 + 0.1 * a), 0.001 * b * (1 + 0.1 * a) - 0.5 * (a - peak) ** 2, a, b)
               for b in (1000, 2000, 3000, 4000)]
        curves[a] = RDCurve.from_points(pts)
    return curves


def test_select_worked_example():
    assert select_optimal(analytic_curves(), 2000, DEFAULT_STRATEGIES) == -0.5


def test_select_ties_prefer_no_preprocessing():
    same = {a: curve([(1000, 0.3), (4000, 0.9)], a) for a in DEFAULT_STRATEGIES}
    assert select_optimal(same, 2000) == 0.0
    two = {a: curve([(1000, 0.5 if abs(a) == 1.0 else 0.1), (4000, 0.5 if abs(a) == 1.0 else 0.1)], a)
           for a in DEFAULT_STRATEGIES}
    assert select_optimal(two, 2000) == -1.0


def test_select_missing_strategy():
    curves = analytic_curves()
    del curves[1.5]
    with pytest.raises(LabelError, match="1.5"):
        select_optimal(curves, 2000, DEFAULT_STRATEGIES)


def random_family(seed):
    r = np.random.default_rng(seed)
    fam = {}
    for a in DEFAULT_STRATEGIES:
        c = random_curve(r, a)
        # coarse qualities make exact ties common
        fam[a] = curve([(p.measured_kbps, round(p.quality, 1)) for p in c.points], a)
    return fam


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_select_matches_bruteforce(seed):
    fam = random_family(seed)
    scan = argmax_scan([(a, piecewise_linear(c.bitrates.tolist(), c.qualities.tolist(), 2000))
                        for a, c in fam.items()])
    assert select_optimal(fam, 2000) == scan


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_select_invariant_under_increasing_affine(seed):
    fam = random_family(seed)
    moved = {a: curve([(p.measured_kbps, 2 * p.quality + 3) for p in c.points], a) for a, c in fam.items()}
    assert select_optimal(moved, 2000) == select_optimal(fam, 2000)


# -- mocks ----------------------------------------------------------------


def small_video(n=4, fps=(40, 1), seed=0, side=16):
    r = np.random.default_rng(seed)
    return gray_video([r.uniform(0, 255, (side, side)) for _ in range(n)], *fps)


class SizeEncoder:
    """Writes ``8N / (1000 D) = bitrate * (1 + 0.1 alpha)`` kbps worth of bytes."""

    def __init__(self, fail_after=None, exc=KeyboardInterrupt):
        self.calls = 0
        self.fail_after = fail_after
        self.exc = exc
        self.lock = threading.Lock()

    def cache_token(self):
        return {"enc": "size-mock"}

    def encode(self, src, dst, bitrate_kbps, alpha, video):
        with self.lock:
            if self.fail_after is not None and self.calls >= self.fail_after:
                raise self.exc("injected fault")
            self.calls += 1
        kbps = bitrate_kbps * (1 + 0.1 * alpha)
        n = round(kbps * 1000 * video.duration / 8)
        Path(dst).write_bytes(b"\0" * n)


class RateMetric:
    """Quality linear in measured rate with a penalty around -0.5."""

    def __init__(self):
        self.calls = 0

    def cache_token(self):
        return {"metric": "rate-mock"}

    def measure(self, encoded, job, workdir):
        self.calls += 1
        kbps = job.bitrate_kbps * (1 + 0.1 * job.alpha)
        return 0.001 * kbps - 0.5 * (job.alpha + 0.5) ** 2


@pytest.fixture
def videos(tmp_path):
    paths = []
    for k in range(3):
        p = tmp_path / f"v{k}.y4m"
        write_y4m(small_video(seed=k), p)
        paths.append((f"v{k}", str(p)))
    return paths


def spec_for(tmp_path, name="work", **kw):
    return LabelJobSpec(workdir=str(tmp_path / name), **kw)


def test_plan_44_jobs():
    jobs = plan_jobs("v", "v.y4m", LabelJobSpec())
    assert len(jobs) == 44 and len(set(jobs)) == 44


def test_measured_kbps_and_alpha_zero_fast_path(tmp_path, videos):
    enc = SizeEncoder()
    lab = Labeler(spec_for(tmp_path), enc, RateMetric())
    seen = []
    orig = enc.encode

    def spy(src, dst, b, a, v):
        seen.append((a, src))
        orig(src, dst, b, a, v)
    enc.encode = spy
    job = plan_jobs(*videos[0], lab.spec)[4 * 4]  # alpha 0.0, 1000 kbps
    assert job.alpha == 0.0
    point, out = lab.encode_variant(job)
    assert seen[-1][1] == videos[0][1]  # source passed through untouched
    n = Path(out).stat().st_size
    assert point.measured_kbps == pytest.approx(8 * n / (1000 * 0.1))
    assert point.measured_kbps == pytest.approx(1000)
    sharp = plan_jobs(*videos[0], lab.spec)[-1]
    lab.encode_variant(sharp)
    pre = load_y4m(seen[-1][1])
    src = load_y4m(videos[0][1])
    expect = UnsharpMask().video(src, 3.0)
    assert np.array_equal(pre.frames[0].luma, np.floor(np.clip(expect.frames[0].luma, 0, 255) + 0.5))


def test_cache_hit_zero_calls(tmp_path, videos):
    spec = spec_for(tmp_path)
    enc, met = SizeEncoder(), RateMetric()
    lab = Labeler(spec, enc, met)
    first = lab.label_video(*videos[0])
    assert enc.calls == 44 and met.calls == 44
    enc2, met2 = SizeEncoder(), RateMetric()
    again = Labeler(spec, enc2, met2).label_video(*videos[0])
    assert enc2.calls == 0 and met2.calls == 0
    assert first == again and first[0] == -0.5


def test_cache_off_reencodes(tmp_path, videos):
    spec = spec_for(tmp_path, cache=False)
    Labeler(spec, SizeEncoder(), RateMetric()).label_video(*videos[0])
    enc = SizeEncoder()
    Labeler(spec, enc, RateMetric()).label_video(*videos[0])
    assert enc.calls == 44


def read(p):
    return Path(p).read_bytes()


def test_resume_after_interrupt(tmp_path, videos):
    spec = spec_for(tmp_path)
    with pytest.raises(KeyboardInterrupt):
        pseudo_label_dataset(videos, spec, tmp_path / "l.csv", tmp_path / "a.csv",
                             encoder=SizeEncoder(fail_after=50), metric=RateMetric())
    enc = SizeEncoder()
    run = pseudo_label_dataset(videos, spec, tmp_path / "l.csv", tmp_path / "a.csv", encoder=enc,
                               metric=RateMetric())
    assert enc.calls == 3 * 44 - 50
    assert [r[1] for r in run.labels] == ["-0.5"] * 3


def test_label_files_deterministic_and_parallel_equal(tmp_path, videos):
    outs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 4)):
        d = tmp_path / name
        d.mkdir()
        pseudo_label_dataset(videos, spec_for(d), d / "labels.csv", d / "audit.csv", workers=workers,
                             encoder=SizeEncoder(), metric=RateMetric())
        outs.append((read(d / "labels.csv"), read(d / "audit.csv")))
    assert outs[0] == outs[1] == outs[2]
    rows = list(csv.DictReader(outs[0][0].decode().splitlines()))
    assert list(rows[0]) == ["video_id", "alpha_label", "quality_at_target", "target_kbps"]
    assert [r["video_id"] for r in rows] == ["v0", "v1", "v2"]
    assert float(rows[0]["quality_at_target"]) == pytest.approx(2.0)
    audit = list(csv.DictReader(outs[0][1].decode().splitlines()))
    assert len(audit) == 132
    assert list(audit[0]) == ["video_id", "alpha", "nominal_kbps", "measured_kbps", "quality"]
    # audit rows alone reproduce the labels
    curves = curves_from_audit(audit)
    assert all(select_optimal(curves[v], 2000) == -0.5 for v in ("v0", "v1", "v2"))


def test_failures_recorded_run_continues(tmp_path, videos):
    bad = tmp_path / "bad.y4m"
    bad.write_bytes(b"not a video")
    entries = [videos[0], ("bad", str(bad)), ("missing", str(tmp_path / "nope.y4m")), videos[1]]
    run = pseudo_label_dataset(entries, spec_for(tmp_path), tmp_path / "l.csv", encoder=SizeEncoder(),
                               metric=RateMetric())
    assert [r[0] for r in run.labels] == ["v0", "v1"]
    assert [f[0] for f in run.failures] == ["bad", "missing"]


def test_encoder_fault_is_per_video(tmp_path, videos):
    run = pseudo_label_dataset(videos[:1], spec_for(tmp_path), encoder=SizeEncoder(0, EncoderError),
                               metric=RateMetric())
    assert run.labels == [] and "injected fault" in run.failures[0][1]


# -- subprocess encoder, decoder and metric --------------------------------


def script(tmp_path, name, body):
    p = tmp_path / name
    p.write_text("import sys\n" + body)
    return f"{sys.executable} {p}"


def test_command_encoder_and_errors(tmp_path, videos):
    enc_cmd = script(tmp_path, "enc.py", "open(sys.argv[2], 'wb').write(b'x' * int(sys.argv[3]))\n")
    enc = CommandEncoder(enc_cmd + " {input} {output} {bitrate_kbps}")
    spec = spec_for(tmp_path)
    lab = Labeler(spec, enc, RateMetric())
    point, _ = lab.encode_variant(plan_jobs(*videos[0], spec)[0])
    assert point.measured_kbps == pytest.approx(8 * 1000 / (1000 * 0.1)) and enc.calls == 1

    with pytest.raises(ValueError, match="{output}"):
        CommandEncoder("enc {input} {bitrate_kbps}")
    failing = script(tmp_path, "fail.py", "sys.stderr.write('boom'); sys.exit(3)\n")
    with pytest.raises(EncoderError, match="status 3: boom"):
        Labeler(spec_for(tmp_path, "w2"), CommandEncoder(failing + " {input} {output} {bitrate_kbps}"),
                RateMetric()).encode_variant(plan_jobs(*videos[0], spec)[0])
    empty = script(tmp_path, "empty.py", "open(sys.argv[1], 'wb').close()\n")
    with pytest.raises(EncoderError, match="no output"):
        Labeler(spec_for(tmp_path, "w3"), CommandEncoder(empty + " {output} {input} {bitrate_kbps}"),
                RateMetric()).encode_variant(plan_jobs(*videos[0], spec)[0])
    slow = script(tmp_path, "slow.py", "import time; time.sleep(5)\n")
    with pytest.raises(EncoderError, match="timed out"):
        Labeler(spec_for(tmp_path, "w4"), CommandEncoder(slow + " {input} {output} {bitrate_kbps}", timeout=0.5),
                RateMetric()).encode_variant(plan_jobs(*videos[0], spec)[0])


def test_fill_template_quoting():
    argv = fill_template('enc -x "a={bitrate_kbps}:b={bitrate_kbps}" {output}', bitrate_kbps=2000,
                         output="/tmp/with space.mp4")
    assert argv == ["enc", "-x", "a=2000:b=2000", "/tmp/with space.mp4"]


def test_frame_sampling_one_per_second():
    assert sample_frame_indices(90, 30, 1) == [0, 30, 60]
    assert sample_frame_indices(91, 30, 1) == [0, 30, 60, 90]
    assert sample_frame_indices(100, 30000, 1001) == [0, 29, 59, 89]
    assert sample_frame_indices(5, 30, 1) == [0]


def test_command_metric_scores_sampled_frames(tmp_path):
    clip = tmp_path / "clip.y4m"
    write_y4m(small_video(n=90, fps=(30, 1), side=8), clip)
    const = CommandMetric(script(tmp_path, "m.py", "print(0.5)\n") + " {image}")
    assert const.measure(str(clip)) == 0.5
    index = CommandMetric(script(tmp_path, "i.py",
                                 "import re; print(int(re.search(r'(\\d+)\\.png$', sys.argv[1]).group(1)))\n")
                          + " {image}")
    assert index.measure(str(clip)) == pytest.approx(30.0)  # mean of 0, 30, 60
    junk = CommandMetric(script(tmp_path, "j.py", "print('n/a')\n") + " {image}")
    with pytest.raises(MetricError, match="non-numeric"):
        junk.measure(str(clip))
    crash = CommandMetric(script(tmp_path, "c.py", "sys.exit(1)\n") + " {image}")
    with pytest.raises(MetricError):
        crash.measure(str(clip))


def test_decode_command_used(tmp_path):
    clip = tmp_path / "clip.bin"
    write_y4m(small_video(n=30, fps=(30, 1), side=8), clip)
    dec = script(tmp_path, "dec.py", "import shutil; shutil.copy(sys.argv[1], sys.argv[2])\n")
    m = CommandMetric(script(tmp_path, "m.py", "print(0.25)\n") + " {image}", decode_cmd=dec + " {input} {output_y4m}")
    assert m.measure(str(clip)) == 0.25


def test_builtin_quality_behaviour():
    r = np.random.default_rng(0)
    flat = np.full((32, 32), 100.0)
    assert builtin_quality(flat) == 0.0
    tex = 100 + r.normal(0, 10, (32, 32))
    assert builtin_quality(tex) > builtin_quality(100 + r.normal(0, 2, (32, 32)))
    blocky = np.kron(r.uniform(50, 200, (4, 4)), np.ones((8, 8)))
    assert builtin_quality(blocky) < 0


MOCK_CODEC = """
import numpy as np
from hfprep.frame_io import load_y4m, write_y4m, make_frame
src, dst, kbps = sys.argv[1], sys.argv[2], float(sys.argv[3])
v = load_y4m(src)
w = 1000.0 / kbps  # weight of the 8x8 block mean: heavier at low rates
out = []
for f in v.frames:
    y = f.luma
    h8, w8 = y.shape[0] // 8 * 8, y.shape[1] // 8 * 8
    blocks = y[:h8, :w8].reshape(h8 // 8, 8, w8 // 8, 8).mean(axis=(1, 3))
    y = y.copy()
    y[:h8, :w8] = (1 - w) * y[:h8, :w8] + w * np.kron(blocks, np.ones((8, 8)))
    out.append(make_frame([y] + list(f.planes[1:]), f.layout))
pad = "X" + "p" * int(kbps)  # file size grows with the requested rate
v = v.with_frames(out)
v.extra_header = (pad,)
write_y4m(v, dst)
"""


def test_builtin_metric_end_to_end(tmp_path, videos):
    codec = script(tmp_path, "codec.py", MOCK_CODEC)
    spec = spec_for(tmp_path, encoder_cmd=codec + " {input} {output} {bitrate_kbps}", output_ext=".y4m")
    run = pseudo_label_dataset(videos[:1], spec, workers=2)
    assert len(run.audit) == 44 and not run.failures
    rates = sorted({float(r[3]) for r in run.audit if r[1] == "0.0"})
    assert len(rates) == 4
    assert float(run.labels[0][1]) in DEFAULT_STRATEGIES
