"""
Heatmap regression targets
==========================

Box annotations become two-channel targets: a Gaussian bump at each box
centroid, mitoses in channel 0 and hard negatives in channel 1. Overlapping
bumps combine by maximum, so values stay in [0, 1] and each centroid peaks
at exactly 1.
"""

import numpy as np

from uvmitosis.targets import BoxAnnotation, GaussianSpec, centroids_from_boxes, render_heatmap

boxes = [
    BoxAnnotation(10, 10, 20, 20, "mitosis"),
    BoxAnnotation(14, 12, 22, 22, "mitosis"),
    BoxAnnotation(40, 30, 48, 40, "hard_negative"),
]
centroids = centroids_from_boxes(boxes)
print("centroids:", centroids)

heat = render_heatmap(centroids, GaussianSpec(sigma=3.0), 64, 64)
print("target shape:", heat.shape, "max:", heat.max())
print("mitosis channel row 15, columns 10-22:")
print(np.round(heat[0, 15, 10:23], 2))
print("value one sigma from an isolated centroid:", round(float(heat[1, 35, 47]), 4), "~ exp(-0.5) =",
      round(float(np.exp(-0.5)), 4))
