"""Annotation quality filtering rules and the fixpoint pipeline that composes them."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Callable

from .store import AnnotationRecord, Dataset


@dataclass
class FilterReport:
    rule_name: str
    annotations_removed: int = 0
    utterances_removed: int = 0
    raters_removed: int = 0
    passes: int = 1

    def absorb(self, other: "FilterReport") -> None:
        self.annotations_removed += other.annotations_removed
        self.utterances_removed += other.utterances_removed
        self.raters_removed += other.raters_removed


def _apply(ds: Dataset, rule: str, keep: Callable[[AnnotationRecord], bool], **params) -> tuple[Dataset, FilterReport]:
    kept = [r for r in ds.annotations if keep(r)]
    if len(kept) == len(ds.annotations):
        return ds, FilterReport(rule)
    out = ds.subset(kept, {"step": "filter", "rule": rule, **params, "removed": len(ds.annotations) - len(kept)})
    report = FilterReport(
        rule_name=rule,
        annotations_removed=len(ds.annotations) - len(out.annotations),
        utterances_removed=len(ds.utterances) - len(out.utterances),
        raters_removed=len(ds.raters) - len(out.raters),
    )
    return out, report


def filter_min_annotations(ds: Dataset, k: int = 5) -> tuple[Dataset, FilterReport]:
    """Drop utterances with fewer than ``k`` annotations."""
    if k < 1:
        raise ValueError("k must be >= 1")
    small = {uid for uid, u in ds.utterances.items() if len(u.annotations) < k}
    return _apply(ds, "min_annotations", lambda r: r.utterance_id not in small, k=k)


def filter_single_gender_utterances(ds: Dataset) -> tuple[Dataset, FilterReport]:
    """Drop utterances lacking a male or a female rater; ``other`` raters count for neither."""
    seen: dict[str, set[str]] = defaultdict(set)
    for r in ds.annotations:
        seen[r.utterance_id].add(r.rater_gender)
    bad = {uid for uid, g in seen.items() if not {"male", "female"} <= g}
    return _apply(ds, "single_gender", lambda r: r.utterance_id not in bad)


def session_key(r: AnnotationRecord) -> tuple[str, str]:
    return (r.rater_id, r.session_id)


def filter_zero_variance_sessions(ds: Dataset) -> tuple[Dataset, FilterReport]:
    """Drop sessions where valence, arousal or dominance is constant.

    Population variance is zero exactly when all values are equal, so the
    check is an exact equality test. One-annotation sessions are constant.
    """
    values: dict[tuple[str, str], list[tuple[float, float, float]]] = defaultdict(list)
    for r in ds.annotations:
        values[session_key(r)].append((r.valence, r.arousal, r.dominance))
    flat = set()
    for key, rows in values.items():
        for dim in range(3):
            first = rows[0][dim]
            if all(row[dim] == first for row in rows):
                flat.add(key)
                break
    return _apply(ds, "zero_variance_sessions", lambda r: session_key(r) not in flat)


def filter_inconsistent_demographics(ds: Dataset) -> tuple[Dataset, FilterReport]:
    """Drop raters whose (gender, age, language, country) differ between any two annotations."""
    demo: dict[str, set[tuple]] = defaultdict(set)
    for r in ds.annotations:
        demo[r.rater_id].add(r.demographics)
    bad = {rid for rid, d in demo.items() if len(d) > 1}
    return _apply(ds, "inconsistent_demographics", lambda r: r.rater_id not in bad)


RULE_ORDER = (
    "zero_variance_sessions",
    "inconsistent_demographics",
    "min_annotations",
    "single_gender",
)


def apply_filter_pipeline(ds: Dataset, min_annotations: int = 5, max_passes: int = 1000) -> tuple[Dataset, list[FilterReport]]:
    """Apply all four rules in order, repeating until a pass removes nothing.

    Removing utterances can leave a session constant or short, and removing a
    session can push an utterance below ``min_annotations``, so every rule is
    re-run on each pass. ``passes`` counts executed passes including the final
    one that removed nothing.
    """
    rules = {
        "zero_variance_sessions": filter_zero_variance_sessions,
        "inconsistent_demographics": filter_inconsistent_demographics,
        "min_annotations": lambda d: filter_min_annotations(d, min_annotations),
        "single_gender": filter_single_gender_utterances,
    }
    totals = {name: FilterReport(name) for name in RULE_ORDER}
    passes = 0
    while True:
        passes += 1
        changed = False
        for name in RULE_ORDER:
            ds, rep = rules[name](ds)
            if rep.annotations_removed:
                changed = True
                totals[name].absorb(rep)
        if not changed or passes >= max_passes:
            break
    for rep in totals.values():
        rep.passes = passes
    ds = Dataset(ds.annotations, ds.provenance + ({"step": "filter_pipeline", "passes": passes, "min_annotations": min_annotations},))
    return ds, [totals[name] for name in RULE_ORDER]


def reports_to_json(reports: list[FilterReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2, sort_keys=True)


def reports_to_text(reports: list[FilterReport]) -> str:
    header = ("rule", "annotations", "utterances", "raters")
    rows = [header] + [
        (r.rule_name, str(r.annotations_removed), str(r.utterances_removed), str(r.raters_removed)) for r in reports
    ]
    rows.append(
        (
            "total",
            str(sum(r.annotations_removed for r in reports)),
            str(sum(r.utterances_removed for r in reports)),
            str(sum(r.raters_removed for r in reports)),
        )
    )
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in rows]
    passes = reports[0].passes if reports else 0
    return "\n".join(lines) + f"\npasses: {passes}"
