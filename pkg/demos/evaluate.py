"""
Scoring predictions
===================

Correlation and error of predicted strengths against labels, plus a
seeded train/test split of a manifest.
"""
import numpy as np

from hfprep.config import ManifestEntry, split_manifest
from hfprep.metrics import plcc, rmse

rng = np.random.default_rng(0)
labels = rng.choice(np.arange(-2.0, 3.5, 0.5), 50)
preds = labels + rng.normal(0, 0.4, labels.size)

print(f"plcc={plcc(preds, labels):.4f} rmse={rmse(preds, labels):.4f}")
# correlation ignores any affine rescaling of the predictions
print(f"plcc after 2x+3: {plcc(2 * preds + 3, labels):.4f}")

entries = [ManifestEntry(f"v{i:03d}", f"videos/v{i:03d}.y4m", float(a)) for i, a in enumerate(labels)]
train, test = split_manifest(entries, train_fraction=0.8, seed=0)
print(len(train), "train /", len(test), "test; first test ids:", [e.video_id for e in test[:3]])
