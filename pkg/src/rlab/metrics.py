"""Aggregate attack statistics and corruption-robustness metrics.

Attack summaries follow the exclusion rule: failures count only against the
success rate, never in the query/distortion averages; skipped images (the
victim already misclassified them) count nowhere.
"""

import csv
import statistics
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError

SEVERITIES = 5


@dataclass
class AttackSummary:
    asr: float
    avg_steps: float | None
    avg_raw_queries: float | None
    l2_max: float | None
    l2_avg: float | None
    linf_max: float | None
    successes: int
    failures: int
    skips: int

    def to_dict(self) -> dict:
        return {
            "asr": self.asr,
            "avg_steps": self.avg_steps,
            "avg_raw_queries": self.avg_raw_queries,
            "l2_max": self.l2_max,
            "l2_avg": self.l2_avg,
            "linf_max": self.linf_max,
            "successes": self.successes,
            "failures": self.failures,
            "skips": self.skips,
        }


def summarize(results: list) -> AttackSummary:
    """Fold attack results into the standard report row.

    Distortion and query statistics cover successes only; the success rate
    is successes / (successes + failures).
    """
    successes = [r for r in results if r.status == "success"]
    failures = [r for r in results if r.status == "failure"]
    skips = [r for r in results if r.status == "skip"]
    attempted = len(successes) + len(failures)
    if attempted == 0:
        raise ValueError("no attack outcomes to summarize (empty or all skips)")

    def over_successes(getter):
        if not successes:
            return None
        return [float(getter(r)) for r in successes]

    steps = over_successes(lambda r: r.steps)
    queries = over_successes(lambda r: r.raw_queries)
    l2s = over_successes(lambda r: r.l2)
    linfs = over_successes(lambda r: r.linf)
    return AttackSummary(
        asr=len(successes) / attempted,
        avg_steps=float(np.mean(steps)) if steps else None,
        avg_raw_queries=float(np.mean(queries)) if queries else None,
        l2_max=max(l2s) if l2s else None,
        l2_avg=float(np.mean(l2s)) if l2s else None,
        linf_max=max(linfs) if linfs else None,
        successes=len(successes),
        failures=len(failures),
        skips=len(skips),
    )


# ---------------------------------------------------------------------------
# corruption robustness
# ---------------------------------------------------------------------------

@dataclass
class CorruptionErrorMatrix:
    """Error rates per corruption type across the 5 severities."""

    corruptions: list          # names, row order
    errors: np.ndarray         # (C, 5) in [0, 1]
    clean_error: float

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if self.errors.ndim != 2 or self.errors.shape[1] != SEVERITIES:
            raise FormatError(f"error matrix must be (C, {SEVERITIES}), got {self.errors.shape}")
        if len(self.corruptions) != self.errors.shape[0]:
            raise FormatError("corruption name count does not match matrix rows")
        if self.errors.size and (self.errors.min() < 0.0 or self.errors.max() > 1.0):
            raise FormatError("error rates must lie in [0, 1]")
        if not 0.0 <= self.clean_error <= 1.0:
            raise FormatError(f"clean error must lie in [0, 1], got {self.clean_error}")

    @classmethod
    def from_csv(cls, path, clean_error: float) -> "CorruptionErrorMatrix":
        """Parse the `corruption,s1..s5` CSV."""
        names, rows = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise FormatError(f"{path}: empty corruption matrix") from None
            expected = ["corruption"] + [f"s{i}" for i in range(1, SEVERITIES + 1)]
            if [h.strip() for h in header] != expected:
                raise FormatError(f"{path}: header {header} != {expected}")
            for line in reader:
                if not line:
                    continue
                if len(line) != SEVERITIES + 1:
                    raise FormatError(f"{path}: row {line} has {len(line)} fields")
                names.append(line[0])
                try:
                    rows.append([float(v) for v in line[1:]])
                except ValueError as exc:
                    raise FormatError(f"{path}: non-numeric entry in {line}") from exc
        if not names:
            raise FormatError(f"{path}: no corruption rows")
        return cls(corruptions=names, errors=np.asarray(rows), clean_error=clean_error)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["corruption"] + [f"s{i}" for i in range(1, SEVERITIES + 1)])
            for name, row in zip(self.corruptions, self.errors):
                writer.writerow([name] + [repr(float(v)) for v in row])


def uce(severity_errors) -> float:
    """Mean error over the 5 severities of one corruption.

    Computed as an exact rational mean (correctly rounded once) so identities
    like mean of a constant row hold bit-exactly."""
    row = np.asarray(severity_errors, dtype=np.float64)
    if row.shape != (SEVERITIES,):
        raise ValueError(f"expected exactly {SEVERITIES} severity errors, got shape {row.shape}")
    if row.min() < 0.0 or row.max() > 1.0:
        raise ValueError("severity errors must lie in [0, 1]")
    return float(statistics.mean(row.tolist()))


def mce_and_degradation(matrix: CorruptionErrorMatrix, literal_eq5: bool = False):
    """(mCE, degradation).

    Default mCE is the mean of per-corruption uCE over all corruption types;
    ``literal_eq5`` instead sums the first five corruptions' uCE values (the
    published closed form, kept for comparison).
    """
    per_corruption = [uce(row) for row in matrix.errors]
    if literal_eq5:
        if len(per_corruption) < 5:
            raise ValueError(f"literal form needs >= 5 corruptions, got {len(per_corruption)}")
        mce = float(sum(per_corruption[:5]))
    else:
        mce = float(statistics.mean(per_corruption))
    return mce, mce - matrix.clean_error


def adversarial_error(misclassified_flags) -> float:
    """Fraction of supplied adversarial examples the model gets wrong."""
    flags = list(misclassified_flags)
    if not flags:
        raise ValueError("empty adversarial example set")
    return float(np.mean([bool(f) for f in flags]))
