"""One attack episode, step by step, then the cleanup pass.

A random dual-action policy adds noise to sensitive patches (and sometimes
removes earlier noise) until the victim flips, after which cleanup strips
every distortion the misclassification can survive without.
"""

from rlab import FilterSpec, run_episode, random_policy
from rlab.agent import ActionCodec
from rlab.fixtures import build_desk_victim, synthetic_blob_dataset
from rlab.target import ClassifierHandle

images, labels = synthetic_blob_dataset(110, seed=7)
victim = build_desk_victim(images, labels, seed=7)
classifier = ClassifierHandle.in_process(victim)

specs = [FilterSpec("gaussian_noise", {"variance": 0.05})]
codec = ActionCodec(num_filters=1, n_max=8)

result = run_episode(
    images[3], labels[3], classifier, specs, random_policy(codec),
    budget=500, patch_size=2, episode_seed=11,
)

print(f"outcome: {result.status} in {result.steps} steps, {result.raw_queries} raw queries")
print(f"{'step':>4} {'action':>12} {'p_gt':>8} {'L2':>7} {'reward':>8}")
for row in result.trace:
    action = f"+{row['action']['n_add']}/-{row['action']['n_rem']}"
    print(f"{row['step']:>4} {action:>12} {row['p_gt']:>8.4f} {row['l2']:>7.3f} {row['reward']:>8.2f}")

print(f"\nL2 before cleanup: {result.pre_cleanup_l2:.3f}")
print(f"L2 after cleanup:  {result.post_cleanup_l2:.3f} "
      f"({result.cleanup_queries} extra queries)")
print(f"final label: {result.final_label} (true class {result.gt_class})")
