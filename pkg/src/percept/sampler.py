"""Resampling to one male and one female annotation per utterance.

Algorithm (normative, reproduced by the reference loop in the tests):

1. Build every (male rater, female rater) pair that co-annotated at least one
   utterance. Pairs are ordered lexicographically by (male id, female id) and
   each pair's utterances lexicographically by utterance id.
2. While unassigned utterances remain: among pairs with at least one
   unassigned co-annotated utterance (in canonical order), draw one uniformly
   with ``rng.integers(n_eligible)``; among that pair's unassigned utterances
   (in canonical order), draw one uniformly with ``rng.integers(n_remaining)``;
   assign the pair's two annotations to that utterance.

The generator is numpy's PCG64 seeded directly with the user seed.
"""

from __future__ import annotations

import bisect
import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PreconditionViolation
from .store import AnnotationRecord, Dataset

GENERATOR = "numpy.random.PCG64"

PAIRED_COLUMNS = (
    "utterance_id",
    "male_rater_id",
    "male_valence",
    "male_arousal",
    "male_dominance",
    "female_rater_id",
    "female_valence",
    "female_arousal",
    "female_dominance",
)


@dataclass(frozen=True)
class RaterPair:
    male_rater_id: str
    female_rater_id: str
    co_annotated: frozenset[str]


@dataclass
class PairedSample:
    assignments: dict[str, tuple[AnnotationRecord, AnnotationRecord]]
    seed: int
    source_provenance: tuple = ()
    generator: str = GENERATOR

    def utterance_ids(self) -> list[str]:
        return sorted(self.assignments)

    def records(self) -> list[AnnotationRecord]:
        return [rec for uid in self.utterance_ids() for rec in self.assignments[uid]]

    def restrict(self, utterance_ids) -> "PairedSample":
        keep = set(utterance_ids)
        return PairedSample(
            {u: pair for u, pair in self.assignments.items() if u in keep},
            self.seed,
            self.source_provenance,
            self.generator,
        )

    def swapped(self) -> "PairedSample":
        """Sample with every utterance's male and female slots exchanged."""
        return PairedSample({u: (f, m) for u, (m, f) in self.assignments.items()}, self.seed, self.source_provenance, self.generator)


@dataclass
class VerificationReport:
    passed: bool
    violations: list[str] = field(default_factory=list)


def _gendered_annotations(ds: Dataset) -> tuple[dict, dict]:
    males: dict[str, dict[str, AnnotationRecord]] = defaultdict(dict)
    females: dict[str, dict[str, AnnotationRecord]] = defaultdict(dict)
    for r in ds.annotations:
        if r.rater_gender == "male":
            males[r.utterance_id][r.rater_id] = r
        elif r.rater_gender == "female":
            females[r.utterance_id][r.rater_id] = r
    return males, females


def build_pair_index(ds: Dataset) -> list[RaterPair]:
    males, females = _gendered_annotations(ds)
    co: dict[tuple[str, str], set[str]] = defaultdict(set)
    for uid, mrs in males.items():
        frs = females.get(uid, {})
        for m in mrs:
            for f in frs:
                co[(m, f)].add(uid)
    return [RaterPair(m, f, frozenset(co[(m, f)])) for m, f in sorted(co)]


def sample_pairs(ds: Dataset, seed: int) -> PairedSample:
    males, females = _gendered_annotations(ds)
    missing = [u for u in ds.utterances if not males.get(u) or not females.get(u)]
    if missing:
        raise PreconditionViolation(f"{len(missing)} utterance(s) lack a male or female annotation, e.g. {missing[0]!r}")

    pairs = build_pair_index(ds)
    keys = [(p.male_rater_id, p.female_rater_id) for p in pairs]
    remaining = {k: sorted(p.co_annotated) for k, p in zip(keys, pairs)}
    pairs_of_utt: dict[str, list[tuple[str, str]]] = defaultdict(list)
    for k, p in zip(keys, pairs):
        for u in p.co_annotated:
            pairs_of_utt[u].append(k)
    eligible = list(keys)

    rng = np.random.Generator(np.random.PCG64(seed))
    assignments: dict[str, tuple[AnnotationRecord, AnnotationRecord]] = {}
    while eligible:
        key = eligible[int(rng.integers(len(eligible)))]
        utts = remaining[key]
        uid = utts[int(rng.integers(len(utts)))]
        m, f = key
        assignments[uid] = (males[uid][m], females[uid][f])
        for k in pairs_of_utt[uid]:
            lst = remaining[k]
            del lst[bisect.bisect_left(lst, uid)]
            if not lst:
                del eligible[bisect.bisect_left(eligible, k)]

    return PairedSample(
        assignments=assignments,
        seed=seed,
        source_provenance=ds.provenance + ({"step": "sample_pairs", "seed": seed, "generator": GENERATOR},),
    )


def verify_sample(ps: PairedSample, ds: Dataset) -> VerificationReport:
    violations = []
    expected = set(ds.utterances)
    got = set(ps.assignments)
    if got != expected:
        violations.append(f"coverage: {len(expected - got)} utterance(s) missing, {len(got - expected)} unexpected")
    seen = set()
    for uid in sorted(ps.assignments):
        pair = ps.assignments[uid]
        if len(pair) != 2:
            violations.append(f"arity: {uid} has {len(pair)} annotations")
            continue
        for slot, rec in zip(("male", "female"), pair):
            if rec.rater_gender != slot:
                violations.append(f"gender-slot mismatch: {uid} {slot} slot holds a {rec.rater_gender} rater")
            if rec.utterance_id != uid:
                violations.append(f"utterance mismatch: {rec.annotation_id} assigned to {uid}")
            if rec.annotation_id in seen:
                violations.append(f"reuse: {rec.annotation_id} assigned twice")
            seen.add(rec.annotation_id)
            try:
                src = ds.annotation(rec.annotation_id)
            except KeyError:
                violations.append(f"provenance: {rec.annotation_id} not in dataset")
                continue
            if src != rec:
                violations.append(f"provenance: {rec.annotation_id} differs from dataset record")
    return VerificationReport(not violations, violations)


def write_paired_sample(ps: PairedSample, path: str | Path, manifest: dict | None = None) -> Path:
    """Write the sample CSV and a ``<path>.provenance.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIRED_COLUMNS)
        for uid in ps.utterance_ids():
            m, f = ps.assignments[uid]
            w.writerow([uid, m.rater_id, repr(m.valence), repr(m.arousal), repr(m.dominance),
                        f.rater_id, repr(f.valence), repr(f.arousal), repr(f.dominance)])
    sidecar = path.with_name(path.name + ".provenance.json")
    meta = {"seed": ps.seed, "generator": ps.generator, "source_provenance": list(ps.source_provenance)}
    if manifest is not None:
        meta["manifest"] = manifest
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def read_paired_sample(path: str | Path, ds: Dataset) -> PairedSample:
    """Rebuild a PairedSample by resolving each row's raters against ``ds``."""
    path = Path(path)
    lookup = {(r.rater_id, r.utterance_id): r for r in ds.annotations}
    assignments = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PAIRED_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(PAIRED_COLUMNS)}")
        for row in reader:
            uid = row["utterance_id"]
            try:
                m = lookup[(row["male_rater_id"], uid)]
                f = lookup[(row["female_rater_id"], uid)]
            except KeyError as e:
                raise ValueError(f"{path}: {uid} references an annotation not in the dataset: {e}") from None
            assignments[uid] = (m, f)
    seed = 0
    sidecar = path.with_name(path.name + ".provenance.json")
    if sidecar.exists():
        seed = int(json.loads(sidecar.read_text(encoding="utf-8")).get("seed", 0))
    return PairedSample(assignments, seed, ds.provenance)
