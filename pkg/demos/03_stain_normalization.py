"""
Macenko stain normalisation
===========================

Images are converted to optical density (OD), where stains mix linearly.
The two stain directions are the robust angular extremes of the OD scatter
in its principal plane. Normalisation re-expresses each pixel's stain
concentrations in a reference basis at a reference scale.
"""

import numpy as np

from uvmitosis.pipeline.synth import SynthSpec, render_patch
from uvmitosis.stain import (
    REFERENCE_MAX_CONCENTRATIONS,
    compute_concentrations,
    estimate_stain_matrix,
    load_stain_matrix,
    normalize_to_target,
    od_to_rgb,
    rgb_to_od,
)

rng = np.random.default_rng(0)

# Build an image from a known stain matrix: OD = S . C
truth = np.array([[0.30, 0.65], [0.75, 0.70], [0.59, 0.30]])
truth /= np.linalg.norm(truth, axis=0)
conc = rng.uniform(0, 1.0, (64 * 64, 2))
conc[rng.random(64 * 64) < 0.3, 1] = 0
conc[rng.random(64 * 64) < 0.3, 0] = 0
image = od_to_rgb((conc @ truth.T).reshape(64, 64, 3))

estimate = estimate_stain_matrix(rgb_to_od(image))
for col in range(2):
    cos = np.clip(estimate[:, col] @ truth[:, col], -1, 1)
    print(f"column {col}: estimated {np.round(estimate[:, col], 3)}, error {np.degrees(np.arccos(cos)):.2f} deg")

# Concentrations are a clamped least-squares solve.
c = compute_concentrations(rgb_to_od(image), estimate)
print("99th-percentile concentrations:", np.percentile(c.reshape(-1, 2), 99, axis=0).round(3))

# Normalise a synthetic tissue patch to the bundled reference, twice.
reference = load_stain_matrix()
patch, _ = render_patch(rng, SynthSpec())
once = normalize_to_target(patch, reference, REFERENCE_MAX_CONCENTRATIONS)
twice = normalize_to_target(once, reference, REFERENCE_MAX_CONCENTRATIONS)
print("mean RGB before:", patch.reshape(-1, 3).mean(0).round(1), "after:", once.reshape(-1, 3).mean(0).round(1))
print("largest change on re-normalising:", int(np.abs(twice.astype(int) - once).max()), "levels")
