"""Train the dueling-DQN attack agent and compare it with random actions.

The desk configuration mixes a strong filter (noise) with a near-useless
one (blur), so the agent has to learn both which filter to use and how many
patches to add/remove per step.  Takes well under a minute on a laptop CPU.
"""

import numpy as np

from rlab import evaluate, greedy_policy, random_policy, train_agent
from rlab.agent import ActionCodec, DQNAgent
from rlab.fixtures import (
    DESK_BUDGET,
    DESK_ROOT_SEED,
    build_desk_victim,
    desk_agent_config,
    desk_filters,
    synthetic_blob_dataset,
)
from rlab.seeding import derive_seed
from rlab.sensitivity import StateVector
from rlab.target import ClassifierHandle

images, labels = synthetic_blob_dataset(110, seed=7)
victim = build_desk_victim(images, labels, seed=7)
classifier = ClassifierHandle.in_process(victim)
specs = desk_filters()
codec = ActionCodec(num_filters=len(specs), n_max=8)

agent = DQNAgent(StateVector.length(), codec, desk_agent_config(),
                 seed=derive_seed(DESK_ROOT_SEED, "agent"))
outcome = train_agent(images, labels, classifier, specs, agent,
                      budget=DESK_BUDGET, patch_size=2, root_seed=DESK_ROOT_SEED)
steps = [row["steps"] for row in outcome.log]
print(f"trained on {len(outcome.log)} episodes "
      f"(first 10 episode lengths {steps[:10]}, last 10 {steps[-10:]})")

held_out = outcome.eval_indices[:20]
trained = evaluate(images, labels, classifier, specs, greedy_policy(agent),
                   budget=DESK_BUDGET, patch_size=2, root_seed=DESK_ROOT_SEED, indices=held_out)
baseline = evaluate(images, labels, classifier, specs, random_policy(codec),
                    budget=DESK_BUDGET, patch_size=2, root_seed=DESK_ROOT_SEED, indices=held_out)

for name, results in (("trained", trained), ("random", baseline)):
    asr = np.mean([r.status == "success" for r in results])
    print(f"{name:8s} ASR {asr:.2f}  mean steps {np.mean([r.steps for r in results]):6.2f}  "
          f"mean post-cleanup L2 {np.mean([r.l2 for r in results]):.3f}")
