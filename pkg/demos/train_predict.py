"""
Training a miniature predictor
==============================

Fit a small pyramid network to eight synthetic videos whose brightness
encodes their label, then predict a strength for each.
"""
import numpy as np

from hfprep.frame_io import gray_video
from hfprep.metrics import plcc, rmse
from hfprep.model import FfpnConfig, TrainItem, TrainSchedule, predict_video, train
from hfprep.sampling import SamplerConfig


def synthetic(label, seed, n=8, side=24):
    r = np.random.default_rng(seed)
    tex = r.normal(0, 6, (side, side))
    return gray_video([np.clip(110 + 30 * label + tex + r.normal(0, 2, tex.shape), 0, 255)
                       for _ in range(n)])


labels = [-2.0, -1.5, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0]
items = [TrainItem(f"v{i}", synthetic(a, i), a) for i, a in enumerate(labels)]

sampler = SamplerConfig(segments=4, frames_per_segment=2, grid=2, patch=8)
cfg = FfpnConfig((4, 8, 8, 16), (2, 2, 2, 2), fa_hidden=4, head_hidden=16,
                 input_side=sampler.side, clip_length=sampler.clip_length)
schedule = TrainSchedule(epochs=150, batch=8, target_loss=0.05)

res = train(items, schedule=schedule, sampler=sampler, model_cfg=cfg, seed=3)
print(f"best L1 {res.best_loss:.4f} at epoch {res.best_epoch} after {res.steps} steps")

preds = [predict_video(it.video, res.model, n_clips=4, sampler=sampler).s_pred for it in items]
for a, p in zip(labels, preds):
    print(f"label {a:+.1f}  predicted {p:+.3f}")
print(f"plcc={plcc(preds, labels):.4f} rmse={rmse(preds, labels):.4f}")
