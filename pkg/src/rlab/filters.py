"""Patch-level distortion filters with exact reversion.

Bring-your-own-filter design: every filter is a pair
``make_mask(spec, shape, seed)`` producing the content-independent random
component (cacheable), and ``transform(patch, mask, spec, seed)`` producing
the distorted patch.  The framework supplies the rest uniformly:

* ``calibration_scale`` multiplies the patch delta, so any filter's mean
  per-patch L2 impact can be matched to the anchor's;
* results are clamped to [0, 1];
* a :class:`DistortionLedger` saves the prior patch bytes, so reverting an
  application is bit-exact no matter what the filter did.

Built-ins: gaussian_noise, gaussian_blur, brightness, dead_pixel.  Custom
filters register through :func:`register_filter`.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import CalibrationError, GeometryError, NoDistortionError
from .image import PatchGrid, l2_distance, patch_view
from .seeding import rng_from

_DEFAULT_PARAMS = {
    "gaussian_noise": {"variance": 0.005},
    "gaussian_blur": {"std": 1.0},
    "brightness": {"intensity": -0.1},
    "dead_pixel": {"drop_fraction": 0.5},
}

ANCHOR_KIND = "gaussian_noise"


@dataclass(frozen=True)
class FilterSpec:
    """One configured distortion filter.

    ``params`` is kind-specific (noise variance, blur std, brightness
    intensity, dead-pixel drop fraction).  ``calibration_scale`` multiplies
    the patch delta the filter produces.
    """

    kind: str
    params: dict = field(default_factory=dict)
    calibration_scale: float = 1.0

    def __post_init__(self):
        merged = dict(_DEFAULT_PARAMS.get(self.kind, {}))
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if self.calibration_scale <= 0:
            raise ValueError(f"calibration_scale must be > 0, got {self.calibration_scale}")
        if self.kind == "gaussian_noise" and merged["variance"] < 0:
            raise ValueError(f"noise variance must be >= 0, got {merged['variance']}")
        if self.kind == "gaussian_blur" and merged["std"] <= 0:
            raise ValueError(f"blur std must be > 0, got {merged['std']}")
        if self.kind == "brightness" and not -1 < merged["intensity"] < 1:
            raise ValueError(f"brightness intensity must be in (-1, 1), got {merged['intensity']}")
        if self.kind == "dead_pixel" and not 0 <= merged["drop_fraction"] <= 1:
            raise ValueError(f"drop fraction must be in [0, 1], got {merged['drop_fraction']}")

    def params_key(self):
        return tuple(sorted(self.params.items()))


# ---------------------------------------------------------------------------
# filter registry
# ---------------------------------------------------------------------------

def _noise_mask(spec, shape, seed):
    rng = rng_from("mask", seed)
    return rng.normal(0.0, np.sqrt(spec.params["variance"]), size=shape)


def _noise_transform(patch, mask, spec, seed):
    return patch + mask


def _brightness_transform(patch, mask, spec, seed):
    return patch + spec.params["intensity"]


def _blur_transform(patch, mask, spec, seed):
    out = np.empty_like(patch, dtype=np.float64)
    for c in range(patch.shape[0]):
        # nearest mode replicates edges, keeping the blur patch-local
        out[c] = ndimage.gaussian_filter(
            patch[c].astype(np.float64), sigma=spec.params["std"], mode="nearest"
        )
    return out


def _dead_pixel_mask(spec, shape, seed):
    _, height, width = shape
    total = height * width
    k = int(round(spec.params["drop_fraction"] * total))
    rng = rng_from("mask", seed)
    dropped = rng.choice(total, size=k, replace=False)
    mask = np.zeros(total, dtype=bool)
    mask[dropped] = True
    return mask.reshape(height, width)


def _dead_pixel_transform(patch, mask, spec, seed):
    out = patch.astype(np.float64).copy()
    out[:, mask] = 0.0
    return out


class _FilterImpl:
    def __init__(self, kind, transform, make_mask=None):
        self.kind = kind
        self.transform = transform
        self.make_mask = make_mask


_REGISTRY = {
    "gaussian_noise": _FilterImpl("gaussian_noise", _noise_transform, _noise_mask),
    "gaussian_blur": _FilterImpl("gaussian_blur", _blur_transform),
    "brightness": _FilterImpl("brightness", _brightness_transform),
    "dead_pixel": _FilterImpl("dead_pixel", _dead_pixel_transform, _dead_pixel_mask),
}


def register_filter(kind: str, apply_fn, make_mask=None) -> None:
    """Register a custom filter.

    ``apply_fn(patch, params, seed) -> patch`` receives the (C, n, n) float
    block and must return the distorted block; clamping, delta scaling,
    ledger bookkeeping, and calibration are supplied by the framework.
    """
    if kind in _REGISTRY:
        raise ValueError(f"filter kind {kind!r} already registered")

    def transform(patch, mask, spec, seed):
        return apply_fn(patch, spec.params, seed)

    _REGISTRY[kind] = _FilterImpl(kind, transform, make_mask)


def filter_kinds():
    return sorted(_REGISTRY)


class MaskCache:
    """Memo for content-independent filter masks, keyed by (spec, patch, seed)."""

    def __init__(self):
        self._store = {}
        self.hits = 0
        self.misses = 0

    def get(self, spec: FilterSpec, shape, patch_index: int, seed: int):
        impl = _REGISTRY[spec.kind]
        if impl.make_mask is None:
            return None
        key = (spec.kind, spec.params_key(), patch_index, seed)
        if key in self._store:
            self.hits += 1
            return self._store[key]
        mask = impl.make_mask(spec, shape, seed)
        self._store[key] = mask
        self.misses += 1
        return mask


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------

@dataclass
class LedgerEntry:
    patch_index: int
    spec: FilterSpec
    seed: int
    prior: np.ndarray  # saved (C, n, n) block before application
    seq: int = -1


class DistortionLedger:
    """Per-patch stacks of applied filters, enabling exact LIFO reversion."""

    def __init__(self):
        self._stacks: dict[int, list[LedgerEntry]] = {}
        self._next_seq = 0

    def push(self, entry: LedgerEntry) -> None:
        entry.seq = self._next_seq
        self._next_seq += 1
        self._stacks.setdefault(entry.patch_index, []).append(entry)

    def pop(self, patch_index: int) -> LedgerEntry:
        stack = self._stacks.get(patch_index)
        if not stack:
            raise NoDistortionError(f"patch {patch_index} has no distortion to revert")
        entry = stack.pop()
        if not stack:
            del self._stacks[patch_index]
        return entry

    def peek(self, patch_index: int) -> LedgerEntry:
        stack = self._stacks.get(patch_index)
        if not stack:
            raise NoDistortionError(f"patch {patch_index} has no distortion to revert")
        return stack[-1]

    def applied_count(self, patch_index: int) -> int:
        return len(self._stacks.get(patch_index, ()))

    def distorted_patches(self) -> list:
        """Patch indices with at least one entry, ascending."""
        return sorted(self._stacks)

    def entries_in_order(self) -> list:
        """All live entries sorted by application order (for replay)."""
        return sorted(
            (e for stack in self._stacks.values() for e in stack),
            key=lambda e: e.seq,
        )

    def __len__(self):
        return sum(len(s) for s in self._stacks.values())

    @property
    def empty(self) -> bool:
        return not self._stacks


# ---------------------------------------------------------------------------
# apply / revert / replay
# ---------------------------------------------------------------------------

def distort_patch(
    patch: np.ndarray, spec: FilterSpec, patch_index: int, seed: int, cache=None
) -> np.ndarray:
    """Distorted copy of one (C, n, n) block: transform, scale delta, clamp."""
    impl = _REGISTRY.get(spec.kind)
    if impl is None:
        raise KeyError(f"unknown filter kind {spec.kind!r}")
    if cache is not None:
        mask = cache.get(spec, patch.shape, patch_index, seed)
    elif impl.make_mask is not None:
        mask = impl.make_mask(spec, patch.shape, seed)
    else:
        mask = None
    raw = np.asarray(impl.transform(patch, mask, spec, seed), dtype=np.float64)
    scaled = patch.astype(np.float64) + spec.calibration_scale * (raw - patch)
    return np.clip(scaled, 0.0, 1.0).astype(np.float32)


def apply_filter_patch(
    image: np.ndarray,
    grid: PatchGrid,
    patch_index: int,
    spec: FilterSpec,
    seed: int,
    cache: MaskCache | None = None,
):
    """Apply one filter to one patch.

    Returns ``(new_image, entry)``; only pixels inside the patch change and
    the entry restores them bit-exactly when given to :func:`revert_patch`
    (push it onto a ledger to keep that option open).
    """
    if not 0 <= patch_index < grid.patch_count:
        raise GeometryError(f"patch index {patch_index} out of range [0, {grid.patch_count})")
    new_image = image.copy()
    block = patch_view(new_image, grid, patch_index)
    prior = block.copy()
    block[...] = distort_patch(prior, spec, patch_index, seed, cache)
    entry = LedgerEntry(patch_index=patch_index, spec=spec, seed=seed, prior=prior)
    return new_image, entry


def revert_patch(
    image: np.ndarray, grid: PatchGrid, ledger: DistortionLedger, patch_index: int
) -> np.ndarray:
    """Pop the most recent ledger entry for a patch and restore its bytes."""
    entry = ledger.pop(patch_index)
    new_image = image.copy()
    patch_view(new_image, grid, patch_index)[...] = entry.prior
    return new_image


def replay(original: np.ndarray, grid: PatchGrid, ledger: DistortionLedger, cache=None) -> np.ndarray:
    """Rebuild the working image by re-applying all live entries in order."""
    image = original.copy()
    for entry in ledger.entries_in_order():
        block = patch_view(image, grid, entry.patch_index)
        block[...] = distort_patch(block.copy(), entry.spec, entry.patch_index, entry.seed, cache)
    return image


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationEntry:
    kind: str
    scale: float
    measured_delta_l2: float
    target_delta_l2: float
    reachable: bool


@dataclass
class CalibrationResult:
    specs: list
    entries: list

    def unreachable(self):
        return [e for e in self.entries if not e.reachable]


def _mean_delta_l2(spec, references, grid, samples, seed):
    """Monte-Carlo mean per-patch L2 impact of one filter at its current scale."""
    rng = rng_from("calibration", seed, spec.kind)
    total = 0.0
    for i in range(samples):
        image = references[rng.integers(len(references))]
        patch_index = int(rng.integers(grid.patch_count))
        mask_seed = int(rng.integers(2**63))
        block = patch_view(image, grid, patch_index).copy()
        distorted = distort_patch(block, spec, patch_index, mask_seed, None)
        total += l2_distance(distorted, block)
    return total / samples


def calibrate_filters(
    specs: list,
    references: list,
    grid: PatchGrid,
    samples: int = 200,
    seed: int = 0,
    tolerance: float = 0.05,
    max_scale: float = 1e6,
) -> CalibrationResult:
    """Adjust calibration scales so every filter's mean per-patch L2 impact
    matches the gaussian_noise anchor's within ``tolerance`` relative.

    The anchor spec is left untouched.  Filters that cannot reach the anchor
    impact even at ``max_scale`` (clamping saturates them) are flagged
    unreachable in the result instead of raising.
    """
    if not references:
        raise CalibrationError("calibration needs at least one reference image")
    anchors = [s for s in specs if s.kind == ANCHOR_KIND]
    if not anchors:
        raise CalibrationError(f"anchor filter {ANCHOR_KIND!r} missing from spec set")
    anchor = anchors[0]

    target = _mean_delta_l2(anchor, references, grid, samples, seed)
    adjusted = []
    entries = []
    for spec in specs:
        if spec is anchor:
            adjusted.append(spec)
            entries.append(CalibrationEntry(spec.kind, spec.calibration_scale, target, target, True))
            continue
        scale, measured, reachable = _fit_scale(
            spec, references, grid, samples, seed, target, tolerance, max_scale
        )
        adjusted.append(dataclasses.replace(spec, calibration_scale=scale))
        entries.append(CalibrationEntry(spec.kind, scale, measured, target, reachable))
    return CalibrationResult(specs=adjusted, entries=entries)


def _fit_scale(spec, references, grid, samples, seed, target, tolerance, max_scale):
    """Monotone bisection on calibration_scale; measurement is deterministic
    in the scale, so the search converges."""

    def measure(scale):
        probe = dataclasses.replace(spec, calibration_scale=scale)
        return _mean_delta_l2(probe, references, grid, samples, seed)

    hi = max(spec.calibration_scale, 1.0)
    hi_val = measure(hi)
    while hi_val < target and hi < max_scale:
        hi = min(hi * 4.0, max_scale)
        hi_val = measure(hi)
    if hi_val < target * (1.0 - tolerance):
        return hi, hi_val, False

    lo, lo_val = 0.0, 0.0
    scale, value = hi, hi_val
    for _ in range(80):
        if abs(value - target) <= tolerance * 0.5 * target:
            break
        if value < target:
            lo, lo_val = scale, value
        else:
            hi, hi_val = scale, value
        scale = 0.5 * (lo + hi)
        value = measure(scale)
    return scale, value, abs(value - target) <= tolerance * target
