"""The attack episode state machine.

One episode owns an image, a distortion ledger, and a step loop:
probe sensitivities -> build state -> pick a dual action -> add distortion to
the most sensitive patches while removing it from the least useful ones ->
re-query the victim.  The loop ends on misclassification (or on reaching the
target class) or when the step budget runs out.  Successful episodes then go
through an iterative cleanup pass that strips every distortion the attack
can live without, re-querying after each trial reversion.

Rewards use Probability Dilution: how much classification mass the step
moved away from the ground truth (or toward the target), normalized by the
L2 cost of the step.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .agent import AttackAction, DQNAgent
from .filters import (
    DistortionLedger,
    MaskCache,
    apply_filter_patch,
    replay,
    revert_patch,
)
from .image import l2_distance, linf_distance, make_patch_grid, patch_view
from .sensitivity import (
    DEFAULT_K,
    DEFAULT_M,
    build_state,
    mask_seed,
    probe_add_sensitivity,
    probe_remove_sensitivity,
)
from .seeding import derive_seed, rng_from
from .target import top_label

REWARD_CLAMP = 100.0
DELTA_L2_EPS = 1e-6


# ---------------------------------------------------------------------------
# probability dilution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PDParams:
    top_n: int = 5          # competitor classes in the dilution sum
    prob_floor: float = 1e-6

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")
        if not 0.0 < self.prob_floor < 0.5:
            raise ValueError(f"prob_floor must be in (0, 0.5), got {self.prob_floor}")


def _dilution_terms(probs, tracked_class, params):
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= tracked_class < len(probs):
        raise IndexError(f"class {tracked_class} out of range for {len(probs)} classes")
    clamped = np.clip(probs, params.prob_floor, 1.0 - params.prob_floor)
    tracked = clamped[tracked_class]
    others = np.sort(np.delete(clamped, tracked_class))[::-1][: params.top_n]
    # 1 / ln(1/p), finite everywhere thanks to the clamp
    tracked_term = 1.0 / math.log(1.0 / tracked)
    other_terms = 1.0 / np.log(1.0 / others)
    return tracked_term, float(np.sum(other_terms))


def pd_untargeted(probs, gt_class: int, params: PDParams = PDParams()) -> float:
    """- 1/ln(1/p_gt) + sum over the top-n competitor classes of 1/ln(1/p_k).

    Grows as mass drains from the ground truth into the leading competitors.
    """
    tracked, others = _dilution_terms(probs, gt_class, params)
    return -tracked + others


def pd_targeted(probs, target_class: int, params: PDParams = PDParams(), mode: str = "corrected") -> float:
    """Dilution toward a chosen class.

    The default "corrected" form is +1/ln(1/p_tgt) - sum(...), strictly
    increasing in the target probability; "literal" evaluates the published
    formula as printed, which has the opposite monotonicity.
    """
    tracked, others = _dilution_terms(probs, target_class, params)
    if mode == "corrected":
        return tracked - others
    if mode == "literal":
        return -tracked + others
    raise ValueError(f"unknown targeted PD mode {mode!r}")


def step_reward(delta_pd: float, delta_l2: float) -> float:
    """delta-PD normalized by the L2 cost of the step.

    The denominator magnitude is floored at epsilon and the ratio clamped so
    TD targets stay bounded.  When removals shrink the L2 (negative delta)
    the signed ratio is kept: a step that farms the denominator instead of
    diluting the prediction earns a negative reward.
    """
    if delta_l2 >= 0.0:
        denom = max(delta_l2, DELTA_L2_EPS)
    else:
        denom = min(delta_l2, -DELTA_L2_EPS)
    return float(np.clip(delta_pd / denom, -REWARD_CLAMP, REWARD_CLAMP))


# ---------------------------------------------------------------------------
# episode state
# ---------------------------------------------------------------------------

class _QueryCounter:
    """Per-episode view of a shared classifier handle (episode-exact query
    tallies even when other episodes run concurrently)."""

    def __init__(self, handle):
        self._handle = handle
        self.queries = 0
        self.num_classes = handle.num_classes
        self.input_shape = handle.input_shape

    def classify_batch(self, images):
        probs = self._handle.classify_batch(images)
        self.queries += len(images)
        return probs


@dataclass
class EpisodeState:
    original: np.ndarray
    working: np.ndarray
    ledger: DistortionLedger
    grid: object
    gt_class: int
    target_class: int | None
    probs: np.ndarray               # latest victim response for `working`
    budget: int
    episode_seed: int
    specs: list
    probe_index: int = 0
    pd_params: PDParams = field(default_factory=PDParams)
    pd_mode: str = "corrected"
    k_slots: int = DEFAULT_K
    m_slots: int = DEFAULT_M
    step: int = 0
    l2_history: list = field(default_factory=list)     # most recent first
    state: object = None                               # current StateVector
    step_seed: int = 0
    cache: MaskCache = field(default_factory=MaskCache)
    verify_replay: bool = False
    trace: list = field(default_factory=list)

    @property
    def targeted(self) -> bool:
        return self.target_class is not None

    @property
    def tracked_class(self) -> int:
        return self.target_class if self.targeted else self.gt_class

    def pd(self, probs) -> float:
        if self.targeted:
            return pd_targeted(probs, self.target_class, self.pd_params, self.pd_mode)
        return pd_untargeted(probs, self.gt_class, self.pd_params)

    def goal_reached(self, probs) -> bool:
        label = top_label(probs)
        return label == self.target_class if self.targeted else label != self.gt_class

    @property
    def current_l2(self) -> float:
        return self.l2_history[0] if self.l2_history else 0.0


@dataclass
class StepOutcome:
    action: AttackAction
    delta_pd: float
    delta_l2: float
    reward: float
    misclassified: bool     # goal reached (target hit, in targeted mode)
    pd: float
    l2: float
    top_label: int
    p_tracked: float


@dataclass
class AttackResult:
    status: str             # "success" | "failure" | "skip"
    gt_class: int
    final_label: int | None
    steps: int
    raw_queries: int
    cleanup_queries: int
    l2: float
    linf: float
    pre_cleanup_l2: float
    post_cleanup_l2: float | None
    adversarial: np.ndarray | None
    trace: list
    _episode: EpisodeState | None = None

    @property
    def success(self) -> bool:
        return self.status == "success"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "gt_class": self.gt_class,
            "final_label": self.final_label,
            "steps": self.steps,
            "raw_queries": self.raw_queries,
            "cleanup_queries": self.cleanup_queries,
            "l2": self.l2,
            "linf": self.linf,
            "pre_cleanup_l2": self.pre_cleanup_l2,
            "post_cleanup_l2": self.post_cleanup_l2,
        }


# ---------------------------------------------------------------------------
# probing and stepping
# ---------------------------------------------------------------------------

def refresh_state(state: EpisodeState, classifier) -> None:
    """Probe both sensitivity lists and rebuild the state vector."""
    state.step_seed = derive_seed(state.episode_seed, "step", state.step)
    spec = state.specs[state.probe_index]
    add_deltas = probe_add_sensitivity(
        state.working,
        state.grid,
        spec,
        classifier,
        state.tracked_class,
        state.step_seed,
        base_probs=state.probs,
        targeted=state.targeted,
        cache=state.cache,
    )
    remove_deltas = probe_remove_sensitivity(
        state.working,
        state.grid,
        state.ledger,
        classifier,
        state.tracked_class,
        base_probs=state.probs,
        targeted=state.targeted,
    )
    state.state = build_state(
        add_deltas,
        remove_deltas,
        state.probs,
        state.l2_history,
        state.tracked_class,
        k=state.k_slots,
        m=state.m_slots,
        l2_current=state.current_l2,
    )


def execute_step(state: EpisodeState, action: AttackAction, classifier, filters=None) -> StepOutcome:
    """Apply the dual action, re-query once, and score the step.

    Adds the action's filter to the top n_add patches of the add ranking,
    then reverts the safest n_rem ledger entries.  Removal skips patches the
    same step just touched and only draws from patches that accumulated more
    than one distortion, so a step always makes net forward progress instead
    of shuffling fresh single distortions in and out.  Exactly one classify
    evaluation is spent on the modified image.
    """
    if state.step >= state.budget:
        raise RuntimeError(f"episode budget {state.budget} exhausted")
    if state.state is None:
        raise RuntimeError("sensitivity state is stale; call refresh_state first")
    specs = filters if filters is not None else state.specs
    spec = specs[action.filter_index]

    pd_before = state.pd(state.probs)
    l2_before = state.current_l2

    touched = []
    for patch in state.state.add_order[: min(action.n_add, state.grid.patch_count)]:
        seed = mask_seed(state.step_seed, patch, spec.kind)
        state.working, entry = apply_filter_patch(
            state.working, state.grid, patch, spec, seed, state.cache
        )
        state.ledger.push(entry)
        touched.append(patch)

    removed = []
    for patch in state.state.remove_order:
        if len(removed) >= action.n_rem:
            break
        if patch in touched or state.ledger.applied_count(patch) < 2:
            continue
        state.working = revert_patch(state.working, state.grid, state.ledger, patch)
        removed.append(patch)

    probs_after = classifier.classify_batch([state.working])[0]
    pd_after = state.pd(probs_after)
    l2_after = l2_distance(state.working, state.original)

    delta_pd = pd_after - pd_before
    delta_l2 = l2_after - l2_before
    reward = step_reward(delta_pd, delta_l2)

    state.probs = probs_after
    state.l2_history.insert(0, l2_after)
    del state.l2_history[4:]
    state.step += 1
    state.state = None  # consumed; next step must re-probe or reuse explicitly

    if state.verify_replay:
        rebuilt = replay(state.original, state.grid, state.ledger, state.cache)
        if not np.array_equal(rebuilt, state.working):
            raise AssertionError("ledger replay diverged from working image")

    outcome = StepOutcome(
        action=action,
        delta_pd=delta_pd,
        delta_l2=delta_l2,
        reward=reward,
        misclassified=state.goal_reached(probs_after),
        pd=pd_after,
        l2=l2_after,
        top_label=top_label(probs_after),
        p_tracked=float(probs_after[state.tracked_class]),
    )
    state.trace.append(
        {
            "step": state.step,
            "action": {
                "filter": spec.kind,
                "n_add": action.n_add,
                "n_rem": action.n_rem,
            },
            "pd": pd_after,
            "delta_pd": delta_pd,
            "delta_l2": delta_l2,
            "reward": reward,
            "l2": l2_after,
            "top_label": outcome.top_label,
            "p_gt": outcome.p_tracked,
        }
    )
    return outcome


# ---------------------------------------------------------------------------
# the episode driver
# ---------------------------------------------------------------------------

def run_episode(
    original: np.ndarray,
    gt_class: int,
    classifier,
    filters: list,
    policy,
    *,
    target_class: int | None = None,
    budget: int = 3500,
    patch_size: int = 2,
    episode_seed: int = 0,
    pd_params: PDParams = PDParams(),
    pd_mode: str = "corrected",
    k_slots: int = DEFAULT_K,
    m_slots: int = DEFAULT_M,
    probe_index: int = 0,
    probe_refresh_every: int = 1,
    run_cleanup: bool = True,
    verify_replay: bool = False,
    observer=None,
) -> AttackResult:
    """Attack one image.

    ``policy(state_vector, rng) -> AttackAction`` chooses the dual action.
    Returns a skip result when the victim already misclassifies the
    original.  ``observer`` (if given) receives every completed transition
    as ``observer(s, a, r, s_next, terminal)`` with numpy state vectors.
    """
    counter = _QueryCounter(classifier)
    grid = make_patch_grid(original, patch_size)
    probs = counter.classify_batch([original])[0]

    if top_label(probs) != gt_class:
        return AttackResult(
            status="skip",
            gt_class=gt_class,
            final_label=top_label(probs),
            steps=0,
            raw_queries=counter.queries,
            cleanup_queries=0,
            l2=0.0,
            linf=0.0,
            pre_cleanup_l2=0.0,
            post_cleanup_l2=None,
            adversarial=None,
            trace=[],
        )

    state = EpisodeState(
        original=original,
        working=original.copy(),
        ledger=DistortionLedger(),
        grid=grid,
        gt_class=gt_class,
        target_class=target_class,
        probs=probs,
        budget=budget,
        episode_seed=episode_seed,
        specs=list(filters),
        probe_index=probe_index,
        pd_params=pd_params,
        pd_mode=pd_mode,
        k_slots=k_slots,
        m_slots=m_slots,
        verify_replay=verify_replay,
    )

    success = state.goal_reached(probs)
    pending = None  # (state_array, action, reward) awaiting its next state
    last_vec = None

    while not success and state.step < budget:
        if last_vec is None or state.step % max(1, probe_refresh_every) == 0:
            refresh_state(state, counter)
            last_vec = state.state
        else:
            state.state = last_vec  # stale reuse under the refresh knob
        state_arr = state.state.to_array()

        if observer is not None and pending is not None:
            observer(*pending, state_arr, False)
            pending = None

        rng = rng_from(episode_seed, "policy", state.step)
        action = policy(state.state, rng)
        outcome = execute_step(state, action, counter)
        success = outcome.misclassified

        if observer is not None:
            if success:
                observer(state_arr, action, outcome.reward, np.zeros_like(state_arr), True)
            else:
                pending = (state_arr, action, outcome.reward)

    # the last pending transition of a truncated episode has no next state;
    # it is dropped rather than mislabeled terminal
    final_l2 = l2_distance(state.working, original)
    result = AttackResult(
        status="success" if success else "failure",
        gt_class=gt_class,
        final_label=top_label(state.probs),
        steps=state.step,
        raw_queries=counter.queries,
        cleanup_queries=0,
        l2=final_l2,
        linf=linf_distance(state.working, original),
        pre_cleanup_l2=final_l2,
        post_cleanup_l2=None,
        adversarial=state.working,
        trace=state.trace,
        _episode=state,
    )
    if success and run_cleanup:
        cleanup(result, classifier)
    return result


def cleanup(result: AttackResult, classifier) -> AttackResult:
    """Iteratively strip distortions the attack can live without.

    Each pass sorts the distorted patches by how little their reversion
    restores the victim's confidence, then trial-reverts one ledger entry at
    a time, keeping a reversion only if the image is still adversarial and
    the L2 did not grow.  Stops when a full pass changes nothing.
    """
    if not result.success:
        raise ValueError("cleanup only applies to successful results")
    state = result._episode
    counter = _QueryCounter(classifier)
    current_l2 = l2_distance(state.working, state.original)

    changed = True
    while changed:
        changed = False
        deltas = probe_remove_sensitivity(
            state.working,
            state.grid,
            state.ledger,
            counter,
            state.tracked_class,
            base_probs=state.probs,
            targeted=state.targeted,
        )
        for patch in sorted(deltas, key=lambda p: (abs(deltas[p]), p)):
            prior = state.ledger.peek(patch).prior
            candidate = state.working.copy()
            patch_view(candidate, state.grid, patch)[...] = prior
            candidate_l2 = l2_distance(candidate, state.original)
            if candidate_l2 > current_l2:
                continue
            probs = counter.classify_batch([candidate])[0]
            if not state.goal_reached(probs):
                continue
            state.ledger.pop(patch)
            state.working = candidate
            state.probs = probs
            current_l2 = candidate_l2
            changed = True

    result.adversarial = state.working
    result.final_label = top_label(state.probs)
    result.post_cleanup_l2 = current_l2
    result.l2 = current_l2
    result.linf = linf_distance(state.working, state.original)
    result.cleanup_queries += counter.queries
    result.raw_queries += counter.queries
    return result


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

def greedy_policy(agent: DQNAgent):
    """Always the argmax-Q action (lowest flat index on ties)."""

    def policy(state, rng):
        return agent.act(state.to_array(), 0.0, rng)

    return policy


def random_policy(codec):
    """Uniform over the composite action space; the no-learning baseline."""

    def policy(state, rng):
        return codec.decode(int(rng.integers(codec.size)))

    return policy


# ---------------------------------------------------------------------------
# training (the optimization loop over a validation set)
# ---------------------------------------------------------------------------

@dataclass
class TrainingResult:
    agent: DQNAgent
    log: list                  # one dict per episode
    train_indices: list
    eval_indices: list


def split_dataset(count: int, seed: int, train_fraction: float = 0.8):
    """Deterministic shuffle split; first fraction trains, the rest evaluates."""
    order = rng_from("split", seed).permutation(count)
    cut = int(round(train_fraction * count))
    return sorted(int(i) for i in order[:cut]), sorted(int(i) for i in order[cut:])


def train_agent(
    images,
    labels,
    classifier,
    filters: list,
    agent: DQNAgent,
    *,
    budget: int = 3500,
    patch_size: int = 2,
    root_seed: int = 0,
    target_class: int | None = None,
    pd_params: PDParams = PDParams(),
    pd_mode: str = "corrected",
    probe_index: int = 0,
    episodes_per_image: int = 1,
    train_fraction: float = 0.8,
    run_cleanup: bool = False,
) -> TrainingResult:
    """Run exploration episodes over the training split, learning per step.

    Each transition lands in the replay buffer and triggers one TD update
    (once the buffer covers a batch); the target network syncs on the
    configured period.  Already-misclassified images are logged as skips.
    """
    if len(images) == 0:
        raise ValueError("empty training dataset")
    train_idx, eval_idx = split_dataset(len(images), root_seed, train_fraction)

    log = []
    episode = 0
    for sweep in range(episodes_per_image):
        for index in train_idx:
            losses = []

            def observer(s, a, r, s_next, terminal):
                loss = agent.observe(s, a, r, s_next, terminal)
                if loss is not None:
                    losses.append(loss)

            epsilon = agent.epsilon

            def policy(state, rng):
                return agent.act(state.to_array(), agent.epsilon, rng)

            result = run_episode(
                images[index],
                int(labels[index]),
                classifier,
                filters,
                policy,
                target_class=target_class,
                budget=budget,
                patch_size=patch_size,
                episode_seed=derive_seed(root_seed, "episode", sweep, index),
                pd_params=pd_params,
                pd_mode=pd_mode,
                probe_index=probe_index,
                run_cleanup=run_cleanup,
                observer=observer,
            )
            log.append(
                {
                    "episode": episode,
                    "image_index": index,
                    "status": result.status,
                    "steps": result.steps,
                    "raw_queries": result.raw_queries,
                    "l2": result.l2,
                    "epsilon_start_of_episode": epsilon,
                    "mean_loss": float(np.mean(losses)) if losses else None,
                }
            )
            episode += 1
    return TrainingResult(agent=agent, log=log, train_indices=train_idx, eval_indices=eval_idx)


def evaluate(
    images,
    labels,
    classifier,
    filters: list,
    policy,
    *,
    budget: int = 3500,
    patch_size: int = 2,
    root_seed: int = 0,
    indices=None,
    **episode_kwargs,
) -> list:
    """Greedy (or any fixed-policy) episodes over chosen images."""
    if indices is None:
        indices = range(len(images))
    results = []
    for index in indices:
        results.append(
            run_episode(
                images[index],
                int(labels[index]),
                classifier,
                filters,
                policy,
                budget=budget,
                patch_size=patch_size,
                episode_seed=derive_seed(root_seed, "episode", 0, index),
                **episode_kwargs,
            )
        )
    return results
