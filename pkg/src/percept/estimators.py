"""Variance ingredients for rater-repetition-corrected paired and unpaired tests.

Rating model: a rating by rater ``r`` is ``mu_r + e`` with ``mu_r = mu_g + eps_r``,
``eps_r`` zero-mean with variance ``sigma_b^2`` (between-rater variance) and
``e`` independent zero-mean noise. Two ratings by the same rater are then
correlated with covariance ``sigma_b^2``, which the count terms below track.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateVariance, EmptyGroup, InsufficientData, InsufficientRaters
from .store import AnnotationRecord


@dataclass
class RaterStats:
    rater_means: dict[str, float]
    global_mean: float
    variance: float
    n_raters: int

    def to_dict(self) -> dict:
        return {"global_mean": self.global_mean, "between_rater_variance": self.variance, "n_raters": self.n_raters}


@dataclass
class PairedCounts:
    n: int
    m: int
    var_d: float
    mean_d: float


@dataclass
class UnpairedCounts:
    n_f: int
    n_m: int
    same_f: int
    same_m: int
    cross: int
    var_x: float
    mean_f: float
    mean_m: float
    extra: dict = field(default_factory=dict)


def between_rater_variance(ratings: Mapping[str, Sequence[float]]) -> RaterStats:
    """Equal-weight between-rater variance of per-rater mean ratings.

    Each rater contributes one mean regardless of how many ratings it has;
    the global mean is the unweighted mean of those rater means.
    """
    if len(ratings) < 2:
        raise InsufficientRaters(f"need at least 2 raters, got {len(ratings)}")
    means = {}
    # sorted so the result does not depend on the order raters were seen
    for rid in sorted(ratings):
        vals = ratings[rid]
        if len(vals) == 0:
            raise InsufficientRaters(f"rater {rid!r} has no ratings")
        means[rid] = float(np.mean(vals))
    mu = np.fromiter(means.values(), dtype=float)
    return RaterStats(
        rater_means=means,
        global_mean=float(mu.mean()),
        variance=float(mu.var(ddof=1)),
        n_raters=len(means),
    )


def rater_stats_from_records(records: Iterable[AnnotationRecord], dimension: str) -> RaterStats:
    grouped: dict[str, list[float]] = {}
    for r in records:
        grouped.setdefault(r.rater_id, []).append(r.value(dimension))
    return between_rater_variance(grouped)


def repetition_count(rater_ids: Iterable[Hashable]) -> int:
    """Ordered pairs (i, j), i != j, sharing a rater: sum over raters of c(c-1)."""
    return sum(c * (c - 1) for c in Counter(rater_ids).values())


def cross_count(ids_a: Iterable[Hashable], ids_b: Iterable[Hashable]) -> int:
    """(i in a, j in b) combinations sharing a rater: sum over raters of a_r * b_r."""
    ca, cb = Counter(ids_a), Counter(ids_b)
    return sum(n * cb[r] for r, n in ca.items() if r in cb)


def paired_counts(male_ids: Sequence[Hashable], female_ids: Sequence[Hashable], d: Sequence[float]) -> PairedCounts:
    """Counts and difference moments for utterance-aligned male/female raters.

    ``M`` counts, over ordered utterance pairs, one for a shared male rater plus
    one for a shared female rater, matching covariances of sigma_b^2 and
    2 * sigma_b^2 in the single- and double-repeat cases.
    """
    d = np.asarray(d, dtype=float)
    n = len(d)
    if n < 2:
        raise InsufficientData(f"paired test needs at least 2 utterances, got {n}")
    return PairedCounts(
        n=n,
        m=repetition_count(male_ids) + repetition_count(female_ids),
        var_d=float(d.var(ddof=1)),
        mean_d=float(d.mean()),
    )


def paired_repetition_count(ps, dimension: str) -> PairedCounts:
    uids = ps.utterance_ids()
    pairs = [ps.assignments[u] for u in uids]
    d = [f.value(dimension) - m.value(dimension) for m, f in pairs]
    return paired_counts([m.rater_id for m, _ in pairs], [f.rater_id for _, f in pairs], d)


def unpaired_counts(
    female_ids: Sequence[Hashable],
    female_values: Sequence[float],
    male_ids: Sequence[Hashable],
    male_values: Sequence[float],
) -> UnpairedCounts:
    xf = np.asarray(female_values, dtype=float)
    xm = np.asarray(male_values, dtype=float)
    if len(xf) == 0 or len(xm) == 0:
        raise EmptyGroup(f"speaker groups must be non-empty (female={len(xf)}, male={len(xm)})")
    n_f, n_m = len(xf), len(xm)
    ss = float(((xf - xf.mean()) ** 2).sum() + ((xm - xm.mean()) ** 2).sum())
    dof = n_f + n_m - 2
    return UnpairedCounts(
        n_f=n_f,
        n_m=n_m,
        same_f=repetition_count(female_ids),
        same_m=repetition_count(male_ids),
        cross=cross_count(female_ids, male_ids),
        var_x=ss / dof if dof > 0 else float("nan"),
        mean_f=float(xf.mean()),
        mean_m=float(xm.mean()),
    )


def unpaired_shared_rater_counts(
    female_spoken: Sequence[AnnotationRecord],
    male_spoken: Sequence[AnnotationRecord],
    dimension: str,
) -> UnpairedCounts:
    """Shared-rater counts for ratings by one rater gender split by speaker gender."""
    return unpaired_counts(
        [r.rater_id for r in female_spoken],
        [r.value(dimension) for r in female_spoken],
        [r.rater_id for r in male_spoken],
        [r.value(dimension) for r in male_spoken],
    )


def _between(rs: RaterStats | float) -> float:
    return rs.variance if isinstance(rs, RaterStats) else float(rs)


def paired_variance_of_mean(pc: PairedCounts, rs: RaterStats | float) -> float:
    """sigma_d^2 / N + M * sigma_b^2 / N^2."""
    if pc.n < 2:
        raise InsufficientData(f"need N >= 2, got {pc.n}")
    v = pc.var_d / pc.n + pc.m * _between(rs) / pc.n**2
    if not v > 0:
        raise DegenerateVariance(f"variance of mean difference is {v}")
    return v


def unpaired_variance_of_mean(uc: UnpairedCounts, rs: RaterStats | float) -> float:
    """(1/N_f + 1/N_m) sigma_x^2 + sigma_b^2 (S_f/N_f^2 + S_m/N_m^2 - 2 C/(N_f N_m))."""
    if uc.n_f < 2 or uc.n_m < 2:
        raise InsufficientData(f"need N_f, N_m >= 2, got {uc.n_f}, {uc.n_m}")
    nf, nm = uc.n_f, uc.n_m
    v = (1 / nf + 1 / nm) * uc.var_x + _between(rs) * (
        uc.same_f / nf**2 + uc.same_m / nm**2 - 2 * uc.cross / (nf * nm)
    )
    if not v > 0:
        raise DegenerateVariance(f"variance of mean difference is {v}")
    return v
