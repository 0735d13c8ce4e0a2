"""Corruption-robustness and attack-summary metrics.

uCE averages a corruption's error over its 5 severities, mCE averages the
uCE values over all corruption types, and the degradation error is mCE
minus the clean error.  Adversarial error is a model's failure rate on a
supplied set of adversarial examples.
"""

import numpy as np

from rlab import CorruptionErrorMatrix, adversarial_error, mce_and_degradation, uce
from rlab.seeding import rng_from

rng = rng_from("demo-metrics")

corruptions = [
    "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur", "glass_blur",
    "motion_blur", "zoom_blur", "snow", "frost", "fog",
    "brightness", "contrast", "elastic", "pixelate", "jpeg",
]
# errors grow with severity, as they do on real corrupted test sets
base = rng.uniform(0.08, 0.2, size=(15, 1))
errors = np.clip(base + np.linspace(0.0, 0.25, 5)[None, :] + rng.normal(0, 0.01, (15, 5)), 0, 1)
matrix = CorruptionErrorMatrix(corruptions=corruptions, errors=errors, clean_error=0.06)

print(f"{'corruption':15s} {'uCE':>6}")
for name, row in zip(matrix.corruptions, matrix.errors):
    print(f"{name:15s} {uce(row):6.3f}")

mce, degradation = mce_and_degradation(matrix)
print(f"\nmCE {mce:.3f}, clean error {matrix.clean_error:.3f} -> degradation {degradation:.3f}")

mce5, _ = mce_and_degradation(matrix, literal_eq5=True)
print(f"literal sum-over-first-5 form for comparison: {mce5:.3f}")

flags = rng.random(200) < 0.35
print(f"\nadversarial error over {len(flags)} supplied examples: {adversarial_error(flags):.3f}")
