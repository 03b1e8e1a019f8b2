"""Frequency-attentive feature pyramid predictor.

A four-stage conv backbone yields multi-scale features; at every stage the
clip's high-frequency mask, pooled to the stage resolution, drives two small
conv branches that emit a per-position scale and shift for the features.
Pooled stage features are concatenated and regressed to one strength per
frame, and frame scores are averaged into the clip score.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .filters import ALPHA_MAX, ALPHA_MIN, GaussianSpec
from .nn import checkpoint
from .nn.layers import (avgpool_forward, conv2d_backward, conv2d_forward,
                        fc_backward, fc_forward, global_avgpool_backward, global_avgpool_forward,
                        l1_loss, relu_backward, relu_forward)
from .sampling import SamplerConfig, build_input_clip, derive_seed

log = logging.getLogger(__name__)

# network sees samples / 255
INPUT_SCALE = 1.0 / 255.0
# cap on frames * pixels per forward pass; larger batches are split into chunks
CHUNK_PIXELS = 1 << 21


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FfpnConfig:
    stage_channels: tuple = (8, 16, 32, 64)
    stage_strides: tuple = (2, 2, 2, 2)
    fa_hidden: int = 16
    head_hidden: int = 64
    input_side: int = 256
    clip_length: int = 32
    use_fa: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "stage_strides", tuple(int(s) for s in self.stage_strides))
        if len(self.stage_channels) != 4 or len(self.stage_strides) != 4:
            raise ModelConfigError("model needs exactly 4 stage_channels and 4 stage_strides")
        if min(self.stage_channels) <= 0 or min(self.stage_strides) < 1:
            raise ModelConfigError("stage channels must be positive and strides >= 1")
        if min(self.fa_hidden, self.head_hidden, self.input_side, self.clip_length) <= 0:
            raise ModelConfigError("fa_hidden, head_hidden, input_side, clip_length must be positive")

    def stage_sides(self):
        sides, s = [], self.input_side
        for st in self.stage_strides:
            s = (s - 1) // st + 1
            sides.append(s)
        return sides

    @property
    def feature_dim(self):
        return sum(self.stage_channels)

    def to_dict(self):
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["stage_strides"] = list(self.stage_strides)
        return d


@dataclass
class Prediction:
    s_pred: float
    per_clip_scores: list
    clip_count: int


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Ffpn:
    """Parameters live in ``self.params``, a name -> array dict.

    Names are prefixed ``backbone.``, ``fa.`` or ``head.``; the prefix picks
    the optimizer group.
    """

    def __init__(self, cfg=FfpnConfig(), seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params = {}
        rng = np.random.default_rng(seed)
        c_in = 1
        for i, c in enumerate(cfg.stage_channels):
            self._conv(rng, f"backbone.s{i}.a", c, c_in)
            self._conv(rng, f"backbone.s{i}.b", c, c)
            for br in ("gamma", "beta"):
                self._conv(rng, f"fa.s{i}.{br}.0", cfg.fa_hidden, 1)
                p = f"fa.s{i}.{br}.1"
                self.params[p + ".w"] = np.zeros((c, cfg.fa_hidden, 3, 3), self.dtype)
                self.params[p + ".b"] = np.full(c, 1.0 if br == "gamma" else 0.0, self.dtype)
            c_in = c
        d, h = cfg.feature_dim, cfg.head_hidden
        self.params["head.fc1.w"] = _he_uniform(rng, (h, d), d, self.dtype)
        self.params["head.fc1.b"] = np.zeros(h, self.dtype)
        self.params["head.fc2.w"] = _he_uniform(rng, (1, h), h, self.dtype)
        self.params["head.fc2.b"] = np.zeros(1, self.dtype)

    def _conv(self, rng, name, c_out, c_in):
        self.params[name + ".w"] = _he_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, self.dtype)
        self.params[name + ".b"] = np.zeros(c_out, self.dtype)

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def group_names(self):
        backbone = [k for k in self.params if k.startswith("backbone.")]
        return backbone, [k for k in self.params if not k.startswith("backbone.")]

    # -- forward pieces -------------------------------------------------

    def _inputs(self, frames, masks):
        frames, masks = np.asarray(frames), np.asarray(masks)
        if frames.ndim == 3:
            frames, masks = frames[None], masks[None]
        b, t, h, w = frames.shape
        side = self.cfg.input_side
        if (h, w) != (side, side) or masks.shape != frames.shape:
            raise ModelConfigError(
                f"clip frames {frames.shape} / masks {masks.shape} do not match input side {side}")
        x = (frames.reshape(b * t, 1, h, w) * INPUT_SCALE).astype(self.dtype)
        m = (masks.reshape(b * t, 1, h, w) * INPUT_SCALE).astype(self.dtype)
        return x, m, b, t

    def backbone_forward(self, x):
        """Four stage features of a (N, 1, S, S) batch, plus caches."""
        p, feats, caches = self.params, [], []
        for i, st in enumerate(self.cfg.stage_strides):
            a, ca = conv2d_forward(x, p[f"backbone.s{i}.a.w"], p[f"backbone.s{i}.a.b"], st, 1)
            a, ra = relu_forward(a)
            x, cb = conv2d_forward(a, p[f"backbone.s{i}.b.w"], p[f"backbone.s{i}.b.b"], 1, 1)
            x, rb = relu_forward(x)
            feats.append(x)
            caches.append((ca, ra, cb, rb))
        return feats, caches

    def _backbone_backward(self, dfeats, caches, grads):
        dx = 0
        for i in reversed(range(4)):
            ca, ra, cb, rb = caches[i]
            d = relu_backward(dfeats[i] + dx, rb)
            d, grads[f"backbone.s{i}.b.w"], grads[f"backbone.s{i}.b.b"] = conv2d_backward(d, cb)
            d = relu_backward(d, ra)
            dx, grads[f"backbone.s{i}.a.w"], grads[f"backbone.s{i}.a.b"] = conv2d_backward(d, ca)
        return dx

    def frequency_attention(self, i, mask, f):
        """Modulate stage-``i`` features ``f`` by the pooled mask: gamma * f + beta."""
        k = mask.shape[2] // f.shape[2]
        if k < 1 or mask.shape[2] != k * f.shape[2] or mask.shape[3] != k * f.shape[3]:
            raise ModelConfigError(f"mask {mask.shape} cannot be pooled onto features {f.shape}")
        pooled, pc = avgpool_forward(mask, k) if k > 1 else (mask, None)
        p = self.params
        branch = {}
        for br in ("gamma", "beta"):
            h, c0 = conv2d_forward(pooled, p[f"fa.s{i}.{br}.0.w"], p[f"fa.s{i}.{br}.0.b"], 1, 1)
            h, r0 = relu_forward(h)
            out, c1 = conv2d_forward(h, p[f"fa.s{i}.{br}.1.w"], p[f"fa.s{i}.{br}.1.b"], 1, 1)
            branch[br] = (out, (c0, r0, c1))
        gamma, beta = branch["gamma"][0], branch["beta"][0]
        return gamma * f + beta, (f, gamma, {b: v[1] for b, v in branch.items()}, pc)

    def _fa_backward(self, i, dF, cache, grads):
        f, gamma, bcache, pc = cache
        dbr = {"gamma": dF * f, "beta": dF}
        for br in ("gamma", "beta"):
            c0, r0, c1 = bcache[br]
            d, grads[f"fa.s{i}.{br}.1.w"], grads[f"fa.s{i}.{br}.1.b"] = conv2d_backward(dbr[br], c1)
            d = relu_backward(d, r0)
            _, grads[f"fa.s{i}.{br}.0.w"], grads[f"fa.s{i}.{br}.0.b"] = conv2d_backward(d, c0)
        return dF * gamma

    def regression_head(self, feats):
        """Per-frame scalar from the stage features."""
        pooled, pcs = zip(*(global_avgpool_forward(F) for F in feats))
        z = np.concatenate(pooled, axis=1)
        h, c1 = fc_forward(z, self.params["head.fc1.w"], self.params["head.fc1.b"])
        h, r1 = relu_forward(h)
        y, c2 = fc_forward(h, self.params["head.fc2.w"], self.params["head.fc2.b"])
        return y[:, 0], (pcs, c1, r1, c2)

    def _head_backward(self, dy, cache, grads):
        pcs, c1, r1, c2 = cache
        dh, grads["head.fc2.w"], grads["head.fc2.b"] = fc_backward(dy[:, None], c2)
        dh = relu_backward(dh, r1)
        dz, grads["head.fc1.w"], grads["head.fc1.b"] = fc_backward(dh, c1)
        splits = np.cumsum(self.cfg.stage_channels)[:-1]
        return [global_avgpool_backward(d, s) for d, s in zip(np.split(dz, splits, axis=1), pcs)]

    # -- whole network --------------------------------------------------

    def forward(self, frames, masks, use_fa=None):
        """Clip scores for frames/masks shaped (B, T, S, S) or (T, S, S)."""
        use_fa = self.cfg.use_fa if use_fa is None else use_fa
        x, m, b, t = self._inputs(frames, masks)
        feats, bcaches = self.backbone_forward(x)
        facaches = None
        if use_fa:
            fused = [self.frequency_attention(i, m, f) for i, f in enumerate(feats)]
            feats, facaches = [F for F, _ in fused], [c for _, c in fused]
        y, hcache = self.regression_head(feats)
        scores = y.reshape(b, t).mean(axis=1)
        return scores, (b, t, bcaches, facaches, hcache)

    def backward(self, dscores, cache):
        b, t, bcaches, facaches, hcache = cache
        grads = {}
        dy = np.repeat(np.asarray(dscores, dtype=self.dtype) / t, t)
        dfeats = self._head_backward(dy, hcache, grads)
        if facaches is not None:
            dfeats = [self._fa_backward(i, d, c, grads) for i, (d, c) in enumerate(zip(dfeats, facaches))]
        self._backbone_backward(dfeats, bcaches, grads)
        for k, v in self.params.items():
            g = grads.setdefault(k, np.zeros_like(v))
            grads[k] = g.astype(self.dtype, copy=False)
        return grads

    def predict_clips(self, frames, masks):
        """Forward in chunks that respect :data:`CHUNK_PIXELS`."""
        frames, masks = np.asarray(frames), np.asarray(masks)
        if frames.ndim == 3:
            frames, masks = frames[None], masks[None]
        per = max(1, CHUNK_PIXELS // max(1, frames[0].size))
        out = [self.forward(frames[i:i + per], masks[i:i + per])[0] for i in range(0, len(frames), per)]
        return np.concatenate(out)

    # -- persistence ----------------------------------------------------

    def state_tensors(self, meta=None):
        c = self.cfg
        t = {
            "meta.stage_channels": np.array(c.stage_channels, np.float32),
            "meta.stage_strides": np.array(c.stage_strides, np.float32),
            "meta.hidden": np.array([c.fa_hidden, c.head_hidden], np.float32),
            "meta.input": np.array([c.input_side, c.clip_length, float(c.use_fa)], np.float32),
        }
        for k, v in (meta or {}).items():
            t[f"meta.{k}"] = np.atleast_1d(np.asarray(v, np.float32))
        t.update(self.params)
        return t

    def save(self, path, meta=None):
        checkpoint.save(self.state_tensors(meta), path)

    def shape_table(self):
        return {k: tuple(v.shape) for k, v in self.params.items()}

    @classmethod
    def from_tensors(cls, tensors, expect=None):
        try:
            sc = tuple(int(v) for v in tensors["meta.stage_channels"])
            ss = tuple(int(v) for v in tensors["meta.stage_strides"])
            fh, hh = (int(v) for v in tensors["meta.hidden"])
            side, length, use_fa = tensors["meta.input"]
        except KeyError as exc:
            raise checkpoint.CheckpointError(f"checkpoint lacks {exc.args[0]}") from None
        cfg = FfpnConfig(sc, ss, fh, hh, int(side), int(length), bool(use_fa))
        model = cls(cfg)
        table = model.shape_table()
        if expect is not None:
            want = cls(expect).shape_table()
            if want != table:
                diff = sorted(k for k in set(want) | set(table) if want.get(k) != table.get(k))
                raise ModelConfigError(
                    "checkpoint/config mismatch: " + ", ".join(
                        f"{k}: ckpt {table.get(k)} vs config {want.get(k)}" for k in diff))
        got = {k: tuple(v.shape) for k, v in tensors.items() if not k.startswith("meta.")}
        if got != table:
            diff = sorted(k for k in set(got) | set(table) if got.get(k) != table.get(k))
            raise ModelConfigError("checkpoint shape table mismatch: " + ", ".join(
                f"{k}: file {got.get(k)} vs model {table.get(k)}" for k in diff))
        model.params = {k: np.array(tensors[k], np.float32) for k in table}
        model.meta = {k[5:]: v for k, v in tensors.items() if k.startswith("meta.")}
        return model

    @classmethod
    def load(cls, path, expect=None):
        return cls.from_tensors(checkpoint.load(path), expect)


# -- training -------------------------------------------------------------


@dataclass
class TrainSchedule:
    epochs: int = 30
    batch: int = 16
    lr_backbone: float = 1e-3
    lr_head: float = 1e-2
    weight_decay: float = 0.01
    patience: int = 5
    lr_factor: float = 0.5
    max_steps: int | None = None
    # stop once an epoch's mean loss drops below this (None trains all epochs)
    target_loss: float | None = None


@dataclass
class TrainItem:
    video_id: str
    video: object
    alpha: float


@dataclass
class TrainResult:
    model: Ffpn
    history: list = field(default_factory=list)
    best_loss: float = float("inf")
    best_epoch: int = -1
    steps: int = 0


def make_clips(items, epoch, sampler, mask_spec, seed):
    clips = [build_input_clip(it.video, sampler, mask_spec,
                              np.random.default_rng(derive_seed(seed, it.video_id, epoch)))
             for it in items]
    return np.stack([c.frames for c in clips]), np.stack([c.hf_masks for c in clips])


def train_step(model, opt, frames, masks, targets):
    """One optimizer step on a batch; returns the batch L1 loss."""
    b = len(frames)
    per = max(1, CHUNK_PIXELS // max(1, frames[0].size))
    grads, preds = None, []
    targets = np.asarray(targets, dtype=np.float64)
    # loss gradient needs every prediction first when chunking
    caches = []
    for i in range(0, b, per):
        s, cache = model.forward(frames[i:i + per], masks[i:i + per])
        preds.append(s)
        caches.append((i, cache) if per >= b else (i, None))
    pred = np.concatenate(preds).astype(np.float64)
    loss, dpred = l1_loss(pred, targets)
    for i, cache in caches:
        if cache is None:
            _, cache = model.forward(frames[i:i + per], masks[i:i + per])
        g = model.backward(dpred[i:i + per], cache)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] = grads[k] + g[k]
    nn.adamw_step(model.params, grads, opt)
    return loss


def train(items, model=None, schedule=TrainSchedule(), sampler=SamplerConfig(),
          mask_spec=GaussianSpec(), seed=0, model_cfg=None, on_epoch=None):
    """Fit the predictor to labelled videos; returns the best-loss model."""
    if not items:
        raise ValueError("training manifest is empty")
    for it in items:
        if it.alpha is None or not np.isfinite(it.alpha):
            raise ValueError(f"video {it.video_id!r} has no strategy label")
    if model is None:
        cfg = model_cfg or FfpnConfig(input_side=sampler.side, clip_length=sampler.clip_length)
        model = Ffpn(cfg, seed=derive_seed(seed, "init"))
    if (model.cfg.input_side, model.cfg.clip_length) != (sampler.side, sampler.clip_length):
        raise ModelConfigError(
            f"sampler produces {sampler.clip_length}x{sampler.side}^2 clips, model expects "
            f"{model.cfg.clip_length}x{model.cfg.input_side}^2")
    backbone, rest = model.group_names()
    opt = nn.make_optimizer([
        nn.ParamGroup(backbone, schedule.lr_backbone, schedule.weight_decay),
        nn.ParamGroup(rest, schedule.lr_head, schedule.weight_decay),
    ])
    halver = nn.PlateauHalver(opt, schedule.patience, schedule.lr_factor)
    result = TrainResult(model)
    best_params = None
    for epoch in range(schedule.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(derive_seed(seed, "order", epoch)).permutation(len(items))
        total, count = 0.0, 0
        for start in range(0, len(items), schedule.batch):
            if schedule.max_steps is not None and result.steps >= schedule.max_steps:
                break
            batch = [items[j] for j in order[start:start + schedule.batch]]
            frames, masks = make_clips(batch, epoch, sampler, mask_spec, seed)
            loss = train_step(model, opt, frames, masks, [it.alpha for it in batch])
            result.steps += 1
            total += loss * len(batch)
            count += len(batch)
        if count == 0:
            break
        epoch_loss = total / count
        lrs = [g.lr for g in opt.groups]
        if epoch_loss < result.best_loss:
            result.best_loss, result.best_epoch = epoch_loss, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        halved = halver.epoch_end(epoch_loss)
        rec = {"epoch": epoch, "loss": epoch_loss, "lr_backbone": lrs[0], "lr_head": lrs[1],
               "halved": halved, "steps": result.steps, "seconds": time.perf_counter() - t0}
        result.history.append(rec)
        log.info("epoch %d loss %.6f lr %.3g/%.3g", epoch, epoch_loss, lrs[0], lrs[1])
        if on_epoch is not None:
            on_epoch(rec)
        if schedule.target_loss is not None and epoch_loss < schedule.target_loss:
            break
    if best_params is not None:
        model.params = best_params
    return result


def sampler_from_meta(model):
    meta = getattr(model, "meta", {})
    if "sampler" in meta:
        return SamplerConfig(*(int(v) for v in meta["sampler"]))
    return SamplerConfig()


def sampler_meta(sampler):
    return [sampler.segments, sampler.frames_per_segment, sampler.grid, sampler.patch]


def predict_video(video, model, n_clips=4, seed=0, sampler=None, mask_spec=GaussianSpec()):
    """Mean clip score over ``n_clips`` seeded clips, clamped to the label range."""
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    if sampler is None:
        sampler = sampler_from_meta(model)
    if (sampler.side, sampler.clip_length) != (model.cfg.input_side, model.cfg.clip_length):
        raise ModelConfigError("sampler does not produce clips of the model's input size")
    scores = []
    for k in range(n_clips):
        clip = build_input_clip(video, sampler, mask_spec, np.random.default_rng(derive_seed(seed, "predict", k)))
        scores.append(float(model.predict_clips(clip.frames, clip.hf_masks)[0]))
    raw = float(np.mean(scores))
    return Prediction(float(np.clip(raw, ALPHA_MIN, ALPHA_MAX)), scores, n_clips)
