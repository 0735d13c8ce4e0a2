"""The desk victim and per-patch sensitivity analysis.

Trains the small reference MLP on the synthetic blob set, then probes how
much the ground-truth probability drops when the probe filter lands on each
patch.  The most sensitive patches sit on (or right next to) the blob.
"""

import numpy as np

from rlab import FilterSpec, make_patch_grid, probe_add_sensitivity
from rlab.fixtures import build_desk_victim, synthetic_blob_dataset
from rlab.sensitivity import build_state
from rlab.target import ClassifierHandle, accuracy

images, labels = synthetic_blob_dataset(110, seed=7)
victim = build_desk_victim(images, labels, seed=7)
print(f"victim: 1-hidden-layer MLP, clean accuracy {accuracy(victim, images, labels):.3f}")

classifier = ClassifierHandle.in_process(victim)
image, label = images[0], labels[0]
grid = make_patch_grid(image, 2)
base = classifier.classify_batch([image])[0]
print(f"image 0: true class {label}, P_GT = {base[label]:.4f}")

spec = FilterSpec("gaussian_noise", {"variance": 0.05})
deltas = probe_add_sensitivity(image, grid, spec, classifier, label, step_seed=1, base_probs=base)
print(f"probe cost: {classifier.query_counter - 1} classify evaluations (one per patch)")

print("\ntop-5 most sensitive patches (grid row, col):")
for patch in np.argsort(-deltas)[:5]:
    r, c = grid.coords(int(patch))
    print(f"  patch {patch:3d} at ({r:2d},{c:2d})  delta P_GT = {deltas[patch]:+.4f}")

state = build_state(deltas, {}, base, [], tracked_class=label)
vec = state.to_array()
print(f"\nstate vector length {len(vec)} "
      f"(16 add + 16 remove + 4 recent L2 + 10 probs + current L2)")
print("list_add (normalized, descending):", np.round(state.list_add[:6], 3))
