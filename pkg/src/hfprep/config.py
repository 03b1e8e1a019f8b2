"""Run configuration (YAML), dataset manifests and seeded splits.

Config schema, every key optional::

    seed: 0
    workers: 1
    log_path: null
    gaussian: {sigma: 1.0, ksize: 5, boundary: reflect}     # USM low-pass
    mask_gaussian: null                                     # mask low-pass; null = same as gaussian
    sampler: {segments: 16, frames_per_segment: 2, grid: 16, patch: 16}
    model: {stage_channels: [8, 16, 32, 64], stage_strides: [2, 2, 2, 2],
            fa_hidden: 16, head_hidden: 64, input_side: 256, clip_length: 32, use_fa: true}
    train: {epochs: 30, batch: 16, lr_backbone: 0.001, lr_head: 0.01,
            weight_decay: 0.01, patience: 5, lr_factor: 0.5, max_steps: null, target_loss: null}
    predict: {clips: 4}
    label: {strategies: [-2.0, ..., 3.0], bitrates_kbps: [1000, 2000, 3000, 4000],
            target_kbps: 2000, encoder_cmd: null, decode_cmd: null, metric_cmd: builtin,
            output_ext: .mp4, workdir: hfprep-work, cache: true, timeout: 600}
"""
from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .filters import GaussianSpec
from .labeler import LabelJobSpec
from .model import FfpnConfig, TrainSchedule
from .sampling import SamplerConfig, derive_seed


class ConfigError(ValueError):
    def __init__(self, key, msg, line=None):
        where = f" (line {line})" if line else ""
        super().__init__(f"{key}: {msg}{where}")
        self.key = key
        self.line = line


@dataclass
class RunConfig:
    gaussian: GaussianSpec = field(default_factory=GaussianSpec)
    mask_gaussian: GaussianSpec | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: FfpnConfig = field(default_factory=FfpnConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    label: LabelJobSpec = field(default_factory=LabelJobSpec)
    clips: int = 4
    seed: int = 0
    workers: int = 1
    log_path: str | None = None

    @property
    def mask_spec(self):
        return self.mask_gaussian or self.gaussian

    def to_dict(self):
        lab = {f.name: getattr(self.label, f.name) for f in dataclasses.fields(self.label)}
        lab["strategies"] = list(lab["strategies"])
        lab["bitrates_kbps"] = list(lab["bitrates_kbps"])
        lab.pop("gaussian")
        return {
            "seed": self.seed,
            "workers": self.workers,
            "log_path": self.log_path,
            "gaussian": self.gaussian.to_dict(),
            "mask_gaussian": self.mask_gaussian.to_dict() if self.mask_gaussian else None,
            "sampler": dataclasses.asdict(self.sampler),
            "model": self.model.to_dict(),
            "train": dataclasses.asdict(self.train),
            "predict": {"clips": self.clips},
            "label": lab,
        }

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTIONS = {
    "gaussian": GaussianSpec,
    "mask_gaussian": GaussianSpec,
    "sampler": SamplerConfig,
    "model": FfpnConfig,
    "train": TrainSchedule,
    "label": LabelJobSpec,
}


def _key_lines(text):
    """Map 'section.key' -> 1-based line number, best effort."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for k, v in root.value:
        lines[k.value] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for k2, _ in v.value:
                lines[f"{k.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def _build(section, cls, data, lines, extra=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(section, "expected a mapping", lines.get(section))
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{section}.{k}", "unknown key", lines.get(f"{section}.{k}"))
    kwargs = dict(data)
    for k in ("stage_channels", "stage_strides", "strategies", "bitrates_kbps"):
        if k in kwargs and kwargs[k] is not None:
            kwargs[k] = tuple(kwargs[k])
    if extra:
        kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        bad = next((k for k in data if f".{k}" in msg or msg.startswith(k)), None)
        key = f"{section}.{bad}" if bad else section
        raise ConfigError(key, msg, lines.get(key)) from None


def parse_config(text):
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<file>", f"parse error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    lines = _key_lines(text)
    known = set(_SECTIONS) | {"seed", "workers", "log_path", "predict"}
    for k in raw:
        if k not in known:
            raise ConfigError(k, "unknown key", lines.get(k))
    cfg = RunConfig()
    cfg.gaussian = _build("gaussian", GaussianSpec, raw.get("gaussian"), lines)
    if raw.get("mask_gaussian") is not None:
        cfg.mask_gaussian = _build("mask_gaussian", GaussianSpec, raw["mask_gaussian"], lines)
    cfg.sampler = _build("sampler", SamplerConfig, raw.get("sampler"), lines)
    model_raw = dict(raw.get("model") or {})
    cfg.model = _build("model", FfpnConfig, model_raw, lines)
    cfg.train = _build("train", TrainSchedule, raw.get("train"), lines)
    label_raw = raw.get("label") or {}
    if isinstance(label_raw, dict) and "workdir" not in label_raw and os.environ.get("HFPREP_WORKDIR"):
        label_raw = {**label_raw, "workdir": os.environ["HFPREP_WORKDIR"]}
    cfg.label = _build("label", LabelJobSpec, label_raw, lines, {"gaussian": cfg.gaussian})
    pred = raw.get("predict") or {}
    cfg.clips = pred.get("clips", 4)
    for key, lo, kind in (("seed", 0, "non-negative"), ("workers", 1, "positive")):
        val = raw.get(key, lo)
        if not isinstance(val, int) or isinstance(val, bool) or val < lo:
            raise ConfigError(key, f"expected a {kind} integer", lines.get(key))
    cfg.seed, cfg.workers = raw.get("seed", 0), raw.get("workers", 1)
    cfg.log_path = raw.get("log_path")
    if not isinstance(cfg.clips, int) or cfg.clips < 1:
        raise ConfigError("predict.clips", "expected a positive integer", lines.get("predict.clips"))
    validate(cfg, lines)
    return cfg


def validate(cfg, lines=None):
    lines = lines or {}
    s, m = cfg.sampler, cfg.model
    if s.side != m.input_side:
        raise ConfigError("sampler.patch", f"grid x patch = {s.grid}x{s.patch} = {s.side} "
                          f"but model.input_side is {m.input_side}", lines.get("sampler.patch"))
    if s.clip_length != m.clip_length:
        raise ConfigError("sampler.frames_per_segment",
                          f"segments x frames_per_segment = {s.clip_length} but model.clip_length "
                          f"is {m.clip_length}", lines.get("sampler.frames_per_segment"))
    sides = m.stage_sides()
    for i, side in enumerate(sides):
        if m.input_side % side:
            raise ConfigError("model.stage_strides", f"stage {i} side {side} does not divide "
                              f"input side {m.input_side}", lines.get("model.stage_strides"))
    return cfg


def load_config(path=None):
    if path is None:
        return parse_config("")
    return parse_config(Path(path).read_text())


# -- manifests --------------------------------------------------------------


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    path: str
    alpha_label: float | None = None
    mos: float | None = None


def _opt_float(v):
    return None if v in (None, "") else float(v)


def load_manifest(path, labels=None, check_paths=True):
    """CSV with ``video_id, path`` and optional ``alpha_label``, ``mos`` columns.

    Relative paths resolve against the manifest's directory. ``labels`` may
    name a label CSV whose ``alpha_label`` column overrides the manifest's.
    """
    path = Path(path)
    root = path.parent
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if rows and not {"video_id", "path"} <= set(rows[0]):
        raise ManifestError(f"{path}: manifest needs video_id and path columns")
    extra = {}
    if labels:
        with open(labels, newline="") as f:
            extra = {r["video_id"]: _opt_float(r.get("alpha_label")) for r in csv.DictReader(f)}
    entries, seen = [], set()
    for i, r in enumerate(rows, start=2):
        vid = r["video_id"]
        if vid in seen:
            raise ManifestError(f"{path}:{i}: duplicate video_id {vid!r}")
        seen.add(vid)
        p = Path(r["path"])
        p = p if p.is_absolute() else root / p
        if check_paths and not p.exists():
            raise ManifestError(f"{path}:{i}: {p} does not exist")
        alpha = extra.get(vid, _opt_float(r.get("alpha_label")))
        entries.append(ManifestEntry(vid, str(p), alpha, _opt_float(r.get("mos"))))
    return entries


def write_manifest(entries, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["video_id", "path", "alpha_label", "mos"])
        for e in entries:
            w.writerow([e.video_id, e.path, "" if e.alpha_label is None else repr(e.alpha_label),
                        "" if e.mos is None else repr(e.mos)])


def split_manifest(entries, train_fraction=0.8, seed=0):
    """Seeded shuffle, then the first ``floor(n * fraction)`` entries train."""
    if not entries:
        raise ManifestError("cannot split an empty manifest")
    if not 0 < train_fraction < 1:
        raise ManifestError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(len(entries))
    n_train = int(np.floor(len(entries) * train_fraction + 1e-9))
    shuffled = [entries[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]
