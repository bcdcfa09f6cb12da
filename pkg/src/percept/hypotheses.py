"""Corrected paired/unpaired t statistics, p-values and the five-hypothesis battery."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from scipy.special import betainc

from .errors import PerceptError, InsufficientData
from .estimators import (
    PairedCounts,
    RaterStats,
    UnpairedCounts,
    paired_repetition_count,
    paired_variance_of_mean,
    rater_stats_from_records,
    unpaired_shared_rater_counts,
    unpaired_variance_of_mean,
)
from .sampler import PairedSample
from .store import DIMENSIONS, AnnotationRecord, Dataset

DEFAULT_DOF = 30
TIERS = (0.001, 0.01, 0.05, 0.1)

HYPOTHESES = (
    "R_given_S_all",
    "R_given_S_female",
    "R_given_S_male",
    "S_given_R_male",
    "S_given_R_female",
)
PAIRED_HYPOTHESES = HYPOTHESES[:3]

_DIM_ALIASES = {"v": "valence", "a": "arousal", "d": "dominance"}


def resolve_dimension(name: str) -> str:
    key = name.strip().lower()
    key = _DIM_ALIASES.get(key, key)
    if key not in DIMENSIONS:
        raise ValueError(f"unknown dimension {name!r}")
    return key


def p_value(tstat: float, dof: float = DEFAULT_DOF) -> float:
    """Two-sided Student-t tail probability.

    Uses P(|T| > t) = I_{dof/(dof+t^2)}(dof/2, 1/2), the regularized incomplete
    beta function, which stays accurate far into the tail where 1 - CDF would
    cancel.
    """
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if math.isinf(tstat):
        return 0.0
    t2 = tstat * tstat
    return float(betainc(dof / 2.0, 0.5, dof / (dof + t2)))


def significance_tier(p: float) -> str:
    """Smallest tier alpha with p < alpha, as a string; ``"ns"`` otherwise."""
    for alpha in TIERS:
        if p < alpha:
            return str(alpha)
    return "ns"


@dataclass
class TestResult:
    hypothesis: str
    dimension: str
    tstat: float | None = None
    p_value: float | None = None
    significance_tier: str | None = None
    mean_difference: float | None = None
    variance_of_mean: float | None = None
    corrected: bool = True
    rater_stats: dict | None = None
    counts: dict | None = None
    n_effective: dict = field(default_factory=dict)
    error: str | None = None

    __test__ = False  # not a pytest class

    @property
    def ok(self) -> bool:
        return self.error is None

    def cell(self) -> str:
        if self.error is not None:
            return "error"
        return f"{self.tstat:.3f}({self.significance_tier})"

    def to_dict(self) -> dict:
        return asdict(self)


def _finish(hypothesis, dimension, mean_diff, var_mean, dof, corrected, rs: RaterStats, counts, n_eff) -> TestResult:
    t = mean_diff / math.sqrt(var_mean)
    p = p_value(t, dof)
    return TestResult(
        hypothesis=hypothesis,
        dimension=dimension,
        tstat=t,
        p_value=p,
        significance_tier=significance_tier(p),
        mean_difference=mean_diff,
        variance_of_mean=var_mean,
        corrected=corrected,
        rater_stats=rs.to_dict(),
        counts=counts,
        n_effective=n_eff,
    )


def paired_test(
    ps: PairedSample,
    dimension: str,
    *,
    hypothesis: str = "R_given_S_all",
    corrected: bool = True,
    dof: float = DEFAULT_DOF,
) -> TestResult:
    """Female-minus-male paired test; positive tstat means female ratings are higher.

    The between-rater variance is estimated from the sample's own annotations
    (both rater genders pooled). With ``corrected=False`` the repetition count
    is forced to zero, giving the classical paired statistic.
    """
    dimension = resolve_dimension(dimension)
    if len(ps.assignments) < 2:
        raise InsufficientData(f"{hypothesis}: need at least 2 utterances, got {len(ps.assignments)}")
    pc = paired_repetition_count(ps, dimension)
    rs = rater_stats_from_records(ps.records(), dimension)
    used = pc if corrected else PairedCounts(pc.n, 0, pc.var_d, pc.mean_d)
    var_mean = paired_variance_of_mean(used, rs)
    return _finish(
        hypothesis, dimension, pc.mean_d, var_mean, dof, corrected, rs,
        {"N": pc.n, "M": pc.m, "var_d": pc.var_d, "mean_d": pc.mean_d},
        {"utterances": pc.n, "raters": rs.n_raters},
    )


def unpaired_test(
    female_spoken: Sequence[AnnotationRecord],
    male_spoken: Sequence[AnnotationRecord],
    dimension: str,
    *,
    hypothesis: str = "S_given_R_female",
    corrected: bool = True,
    dof: float = DEFAULT_DOF,
) -> TestResult:
    """Female-spoken minus male-spoken mean rating, corrected for shared raters."""
    dimension = resolve_dimension(dimension)
    uc = unpaired_shared_rater_counts(female_spoken, male_spoken, dimension)
    if uc.n_f < 2 or uc.n_m < 2:
        raise InsufficientData(f"{hypothesis}: need >= 2 ratings per speaker group, got {uc.n_f}, {uc.n_m}")
    rs = rater_stats_from_records(list(female_spoken) + list(male_spoken), dimension)
    used = uc if corrected else UnpairedCounts(uc.n_f, uc.n_m, 0, 0, 0, uc.var_x, uc.mean_f, uc.mean_m)
    var_mean = unpaired_variance_of_mean(used, rs)
    return _finish(
        hypothesis, dimension, uc.mean_f - uc.mean_m, var_mean, dof, corrected, rs,
        {
            "N_f": uc.n_f, "N_m": uc.n_m, "N_same_f": uc.same_f, "N_same_m": uc.same_m,
            "N_cross": uc.cross, "var_x": uc.var_x, "mean_f": uc.mean_f, "mean_m": uc.mean_m,
        },
        {"ratings": uc.n_f + uc.n_m, "raters": rs.n_raters},
    )


def speaker_groups(
    ds: Dataset, rater_gender: str, records: Sequence[AnnotationRecord] | None = None
) -> tuple[list[AnnotationRecord], list[AnnotationRecord]]:
    """Ratings by ``rater_gender`` raters split into female- and male-spoken utterances.

    Speaker gender is the dataset's majority label; other labels are excluded.
    """
    pool = ds.annotations if records is None else records
    fem, mal = [], []
    for r in pool:
        if r.rater_gender != rater_gender:
            continue
        label = ds.utterances[r.utterance_id].speaker_gender_majority
        if label == "female":
            fem.append(r)
        elif label == "male":
            mal.append(r)
    return fem, mal


def run_cell(
    ds: Dataset,
    ps: PairedSample,
    hypothesis: str,
    dimension: str,
    *,
    unpaired_scope: str = "full",
    corrected: bool = True,
    dof: float = DEFAULT_DOF,
) -> TestResult:
    """One (hypothesis, dimension) cell; errors are raised, not captured."""
    dimension = resolve_dimension(dimension)
    if hypothesis == "R_given_S_all":
        return paired_test(ps, dimension, hypothesis=hypothesis, corrected=corrected, dof=dof)
    if hypothesis in ("R_given_S_female", "R_given_S_male"):
        label = hypothesis.rsplit("_", 1)[1]
        keep = [u for u in ps.assignments if ds.utterances[u].speaker_gender_majority == label]
        return paired_test(ps.restrict(keep), dimension, hypothesis=hypothesis, corrected=corrected, dof=dof)
    if hypothesis in ("S_given_R_male", "S_given_R_female"):
        if unpaired_scope not in ("full", "sampled"):
            raise ValueError(f"unknown unpaired scope {unpaired_scope!r}")
        rater_gender = hypothesis.rsplit("_", 1)[1]
        pool = ps.records() if unpaired_scope == "sampled" else None
        fem, mal = speaker_groups(ds, rater_gender, pool)
        return unpaired_test(fem, mal, dimension, hypothesis=hypothesis, corrected=corrected, dof=dof)
    raise ValueError(f"unknown hypothesis {hypothesis!r}")


def run_battery(
    ds: Dataset,
    ps: PairedSample,
    *,
    hypotheses: Sequence[str] = HYPOTHESES,
    dimensions: Sequence[str] = DIMENSIONS,
    unpaired_scope: str = "full",
    corrected: bool = True,
    threads: int | None = None,
) -> list[TestResult]:
    """Run every requested cell; failing cells become error entries, ordered (hypothesis, dimension)."""
    cells = [(h, resolve_dimension(d)) for h in hypotheses for d in dimensions]

    def run(cell):
        h, d = cell
        try:
            return run_cell(ds, ps, h, d, unpaired_scope=unpaired_scope, corrected=corrected)
        except PerceptError as err:
            return TestResult(hypothesis=h, dimension=d, corrected=corrected, error=f"{type(err).__name__}: {err}")

    with ThreadPoolExecutor(max_workers=threads or 1) as pool:
        return list(pool.map(run, cells))


def results_to_json(results: Sequence[TestResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True)


def results_to_table(results: Sequence[TestResult]) -> str:
    """Markdown table: one row per hypothesis, one ``tstat(alpha)`` column per dimension."""
    by_cell = {(r.hypothesis, r.dimension): r for r in results}
    hyps = [h for h in HYPOTHESES if any(r.hypothesis == h for r in results)]
    dims = [d for d in DIMENSIONS if any(r.dimension == d for r in results)]
    header = ["Hyp"] + [f"{d[0].upper()} tstat(α)" for d in dims]
    rows = [header]
    for h in hyps:
        rows.append([h] + [by_cell[(h, d)].cell() if (h, d) in by_cell else "" for d in dims])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |" for row in rows]
    lines.insert(1, "|" + "|".join("-" * (w + 2) for w in widths) + "|")
    errors = [r for r in results if r.error]
    for r in errors:
        lines.append(f"! {r.hypothesis}/{r.dimension}: {r.error}")
    return "\n".join(lines)
