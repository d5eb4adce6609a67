"""
From heatmap to detections
==========================

Each predicted channel is thresholded with Otsu's method, cleaned with a
binary median filter, split with a watershed on the distance transform and
reduced to one centroid per sufficiently large region.
"""

import numpy as np

from uvmitosis.postprocess import PostprocessConfig, detect, median_filter, otsu_threshold, watershed_split

rows, cols = np.mgrid[0:64, 0:64]

# Two touching disks become two regions.
mask = ((cols - 20) ** 2 + (rows - 32) ** 2 <= 14**2) | ((cols - 44) ** 2 + (rows - 32) ** 2 <= 14**2)
labels = watershed_split(mask)
for k in range(1, labels.max() + 1):
    rr, cc = np.nonzero(labels == k)
    print(f"region {k}: centroid ({cc.mean():.1f}, {rr.mean():.1f}), area {len(rr)}")

# A noisy prediction with three blobs.
rng = np.random.default_rng(0)
pred = np.zeros((2, 64, 64))
for cx, cy in [(15, 15), (45, 20), (30, 50)]:
    pred[0] = np.maximum(pred[0], np.exp(-((cols - cx) ** 2 + (rows - cy) ** 2) / 18))
pred[0] += 0.05 * rng.random((64, 64))

otsu = otsu_threshold(pred[0])
print("Otsu threshold:", otsu.threshold)
print("foreground pixels before/after median:", otsu.mask.sum(), median_filter(otsu.mask).sum())

for det in detect(pred, PostprocessConfig(min_area=10, min_separation=3.0))["mitosis"]:
    print(f"detection at ({det.x:.1f}, {det.y:.1f}), area {det.area}, peak {det.peak:.2f}")
