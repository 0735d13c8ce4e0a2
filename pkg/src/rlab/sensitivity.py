"""Per-patch sensitivity probes and the fixed-length RL state vector.

A probe measures, for each patch, how the tracked class probability moves
when the probe filter is applied to (or an applied distortion is removed
from) that patch alone.  Probe masks derive from the same
``(step_seed, patch, kind)`` seeds the attack actions use, so the state
predicts exactly what an action will do.
"""

from dataclasses import dataclass, field

import numpy as np

from .filters import DistortionLedger, FilterSpec, MaskCache, distort_patch
from .image import PatchGrid, patch_view
from .seeding import derive_seed

N_STEPS_L2 = 4  # length of the recent-L2 window in the state

DEFAULT_K = 16  # sensitivity slots per list
DEFAULT_M = 10  # probability slots

_PROBE_CHUNK = 256  # candidate images materialized per classify call


def mask_seed(step_seed: int, patch_index: int, kind: str) -> int:
    """Seed for the distortion mask of one (step, patch, filter) triple."""
    return derive_seed("mask", step_seed, patch_index, kind)


@dataclass
class SensitivityReport:
    """Raw probe output for one step."""

    add_deltas: np.ndarray          # one entry per patch
    remove_deltas: dict             # patch index -> delta, distorted patches only
    probed_filter: FilterSpec
    step_seed: int


def probe_add_sensitivity(
    image: np.ndarray,
    grid: PatchGrid,
    spec: FilterSpec,
    classifier,
    tracked_class: int,
    step_seed: int,
    base_probs=None,
    targeted: bool = False,
    cache: MaskCache | None = None,
) -> np.ndarray:
    """Delta of the tracked probability per patch when the probe mask lands.

    Untargeted delta is the drop in P_GT (positive = patch hurts the
    classifier); targeted mode tracks the target class with flipped sign so
    positive still means "good patch to distort".  Costs one classify
    evaluation per patch (plus one for the baseline unless supplied).
    """
    if base_probs is None:
        base_probs = classifier.classify_batch([image])[0]
    base = float(base_probs[tracked_class])
    sign = -1.0 if targeted else 1.0

    deltas = np.zeros(grid.patch_count)
    for start in range(0, grid.patch_count, _PROBE_CHUNK):
        indices = range(start, min(start + _PROBE_CHUNK, grid.patch_count))
        candidates = []
        for i in indices:
            candidate = image.copy()
            block = patch_view(candidate, grid, i)
            block[...] = distort_patch(
                block.copy(), spec, i, mask_seed(step_seed, i, spec.kind), cache
            )
            candidates.append(candidate)
        probs = classifier.classify_batch(candidates)
        deltas[list(indices)] = sign * (base - probs[:, tracked_class])
    return deltas


def probe_remove_sensitivity(
    image: np.ndarray,
    grid: PatchGrid,
    ledger: DistortionLedger,
    classifier,
    tracked_class: int,
    base_probs=None,
    targeted: bool = False,
) -> dict:
    """Delta of the tracked probability per distorted patch when its top
    ledger entry is reverted.

    Untargeted delta is P(reverted) - P(current): large positive means the
    distortion there matters to the attack.  Empty ledger -> empty dict.
    """
    patches = ledger.distorted_patches()
    if not patches:
        return {}
    if base_probs is None:
        base_probs = classifier.classify_batch([image])[0]
    base = float(base_probs[tracked_class])
    sign = -1.0 if targeted else 1.0

    deltas = {}
    for start in range(0, len(patches), _PROBE_CHUNK):
        chunk = patches[start : start + _PROBE_CHUNK]
        candidates = []
        for patch in chunk:
            prior = ledger.peek(patch).prior
            candidate = image.copy()
            patch_view(candidate, grid, patch)[...] = prior
            candidates.append(candidate)
        probs = classifier.classify_batch(candidates)
        for patch, row in zip(chunk, probs):
            deltas[patch] = sign * (float(row[tracked_class]) - base)
    return deltas


# ---------------------------------------------------------------------------
# state vector
# ---------------------------------------------------------------------------

@dataclass
class StateVector:
    """Fixed-length RL observation.

    ``list_add``/``list_remove`` hold the top-K normalized sensitivities
    (descending / ascending); the full patch orderings ride along so the
    action executor can resolve "top n patches" beyond K.
    """

    list_add: np.ndarray
    list_remove: np.ndarray
    list_l2: np.ndarray
    list_prob: np.ndarray
    l2_current: float
    add_order: list = field(default_factory=list)      # patch indices, best add first
    remove_order: list = field(default_factory=list)   # patch indices, safest removal first

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [
                self.list_add,
                self.list_remove,
                self.list_l2,
                self.list_prob,
                [self.l2_current],
            ]
        ).astype(np.float64)

    @staticmethod
    def length(k: int = DEFAULT_K, m: int = DEFAULT_M) -> int:
        return 2 * k + N_STEPS_L2 + m + 1


def _normalize(values: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(values)) if values.size else 0.0
    if peak == 0.0:
        return values.astype(np.float64)
    return values / peak


def build_state(
    add_deltas: np.ndarray,
    remove_deltas: dict,
    probs: np.ndarray,
    l2_history,
    tracked_class: int,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
    l2_current: float | None = None,
) -> StateVector:
    """Assemble the state: sorted normalized sensitivities, recent L2 window,
    top class probabilities with the tracked class pinned to slot 0.

    Sorting is stable with a patch-index tie-break; short lists are
    zero-padded so the vector length never depends on image or class count.
    """
    if k < 1 or m < 1:
        raise ValueError(f"K and M must be >= 1, got K={k}, M={m}")

    add_deltas = np.asarray(add_deltas, dtype=np.float64)
    add_order = sorted(range(len(add_deltas)), key=lambda i: (-add_deltas[i], i))
    add_norm = _normalize(add_deltas)
    list_add = np.zeros(k)
    top = add_order[:k]
    list_add[: len(top)] = add_norm[top]

    rem_items = sorted(remove_deltas.items(), key=lambda kv: (kv[1], kv[0]))
    remove_order = [patch for patch, _ in rem_items]
    rem_values = np.asarray([delta for _, delta in rem_items], dtype=np.float64)
    rem_norm = _normalize(rem_values)
    list_remove = np.zeros(k)
    list_remove[: min(k, len(rem_norm))] = rem_norm[:k]

    list_l2 = np.zeros(N_STEPS_L2)
    recent = list(l2_history)[:N_STEPS_L2]
    list_l2[: len(recent)] = recent

    probs = np.asarray(probs, dtype=np.float64)
    list_prob = np.zeros(m)
    list_prob[0] = probs[tracked_class]
    others = np.sort(np.delete(probs, tracked_class))[::-1]
    take = min(m - 1, len(others))
    list_prob[1 : 1 + take] = others[:take]

    if l2_current is None:
        l2_current = float(recent[0]) if recent else 0.0

    return StateVector(
        list_add=list_add,
        list_remove=list_remove,
        list_l2=list_l2,
        list_prob=list_prob,
        l2_current=float(l2_current),
        add_order=add_order,
        remove_order=remove_order,
    )
