"""Annotation data model, file ingestion, indexes and summary statistics."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import DuplicateAnnotationId, EmptyInput, SchemaError

RATER_GENDERS = ("male", "female", "other")
SPEAKER_LABELS = ("male", "female", "both", "neither", "na")
DIMENSIONS = ("valence", "arousal", "dominance")

COLUMNS = (
    "annotation_id",
    "session_id",
    "utterance_id",
    "rater_id",
    "rater_gender",
    "rater_age",
    "rater_language",
    "rater_country",
    "valence",
    "arousal",
    "dominance",
    "speaker_sex_label",
    "multi_speaker",
    "noisy",
    "timestamp",
)


@dataclass(frozen=True, slots=True)
class AnnotationRecord:
    annotation_id: str
    session_id: str
    utterance_id: str
    rater_id: str
    rater_gender: str
    rater_age: int | None
    rater_language: str | None
    rater_country: str | None
    valence: float
    arousal: float
    dominance: float
    speaker_sex_label: str
    multi_speaker: bool
    noisy: bool
    timestamp: str

    def value(self, dimension: str) -> float:
        return getattr(self, dimension)

    @property
    def demographics(self) -> tuple:
        return (self.rater_gender, self.rater_age, self.rater_language, self.rater_country)


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    gender: str
    sessions: tuple[str, ...]
    demographics_per_session: Mapping[str, tuple]


@dataclass(frozen=True)
class UtteranceInfo:
    utterance_id: str
    annotations: tuple[str, ...]
    speaker_gender_majority: str


def majority_vote_speaker_gender(labels: Sequence[str]) -> str:
    """Strict-plurality label; any tie for the top count yields ``"na"``."""
    if not labels:
        raise EmptyInput("majority vote over an empty label list")
    counts = Counter(labels).most_common()
    if len(counts) > 1 and counts[0][1] == counts[1][1]:
        return "na"
    return counts[0][0]


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text[:-1] + "+00:00" if text.endswith("Z") else text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


class Dataset:
    """Immutable, indexed collection of annotations.

    Records are held in canonical order (sorted by ``annotation_id``). Rater and
    utterance indexes are rebuilt from the records on construction, so any
    subset produced through :meth:`subset` is consistent by construction.
    """

    def __init__(self, annotations: Iterable[AnnotationRecord], provenance: Sequence[Mapping] = ()):
        records = tuple(sorted(annotations, key=lambda r: r.annotation_id))
        for a, b in zip(records, records[1:]):
            if a.annotation_id == b.annotation_id:
                raise DuplicateAnnotationId(a.annotation_id)
        self._records = records
        self._provenance = tuple(dict(p) for p in provenance)
        self._by_id = {r.annotation_id: r for r in records}
        self._raters = self._build_raters(records)
        self._utterances = self._build_utterances(records)

    @staticmethod
    def _build_raters(records: Sequence[AnnotationRecord]) -> dict[str, RaterProfile]:
        by_rater: dict[str, list[AnnotationRecord]] = defaultdict(list)
        for r in records:
            by_rater[r.rater_id].append(r)
        raters = {}
        for rid in sorted(by_rater):
            recs = sorted(by_rater[rid], key=lambda r: (parse_timestamp(r.timestamp), r.annotation_id))
            demo: dict[str, tuple] = {}
            for r in recs:
                demo.setdefault(r.session_id, r.demographics)
            raters[rid] = RaterProfile(
                rater_id=rid,
                gender=recs[0].rater_gender,
                sessions=tuple(demo),
                demographics_per_session=demo,
            )
        return raters

    @staticmethod
    def _build_utterances(records: Sequence[AnnotationRecord]) -> dict[str, UtteranceInfo]:
        by_utt: dict[str, list[AnnotationRecord]] = defaultdict(list)
        for r in records:
            by_utt[r.utterance_id].append(r)
        return {
            uid: UtteranceInfo(
                utterance_id=uid,
                annotations=tuple(r.annotation_id for r in by_utt[uid]),
                speaker_gender_majority=majority_vote_speaker_gender([r.speaker_sex_label for r in by_utt[uid]]),
            )
            for uid in sorted(by_utt)
        }

    @property
    def annotations(self) -> tuple[AnnotationRecord, ...]:
        return self._records

    @property
    def raters(self) -> Mapping[str, RaterProfile]:
        return self._raters

    @property
    def utterances(self) -> Mapping[str, UtteranceInfo]:
        return self._utterances

    @property
    def provenance(self) -> tuple[dict, ...]:
        return self._provenance

    def annotation(self, annotation_id: str) -> AnnotationRecord:
        return self._by_id[annotation_id]

    def utterance_annotations(self, utterance_id: str) -> list[AnnotationRecord]:
        return [self._by_id[a] for a in self._utterances[utterance_id].annotations]

    def subset(self, keep: Iterable[AnnotationRecord], step: Mapping[str, Any]) -> "Dataset":
        return Dataset(keep, self._provenance + (dict(step),))

    def __len__(self) -> int:
        return len(self._records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._records == other._records

    def __repr__(self) -> str:
        return f"Dataset({len(self._records)} annotations, {len(self._utterances)} utterances, {len(self._raters)} raters)"


# ---------------------------------------------------------------- parsing


def _absent(v: Any) -> bool:
    return v is None or v == ""


def _coerce_row(raw: Mapping[str, Any], row: int) -> AnnotationRecord:
    def required_str(col: str) -> str:
        v = raw.get(col)
        if _absent(v):
            raise SchemaError(row, col, "required value missing")
        return str(v)

    def optional_str(col: str) -> str | None:
        v = raw.get(col)
        return None if _absent(v) else str(v)

    def enum(col: str, allowed: Sequence[str]) -> str:
        v = required_str(col).strip().lower()
        if v not in allowed:
            raise SchemaError(row, col, f"{v!r} not in {list(allowed)}")
        return v

    def rating(col: str) -> float:
        v = raw.get(col)
        if _absent(v) or isinstance(v, bool):
            raise SchemaError(row, col, "rating missing")
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise SchemaError(row, col, f"not a number: {v!r}") from None
        if not math.isfinite(x) or not -1.0 <= x <= 1.0:
            raise SchemaError(row, col, f"{x} outside [-1, 1]")
        return x

    def flag(col: str) -> bool:
        v = raw.get(col)
        if isinstance(v, bool):
            return v
        if v in (0, 1, "0", "1"):
            return bool(int(v))
        raise SchemaError(row, col, f"boolean must be 0 or 1, got {v!r}")

    age_raw = raw.get("rater_age")
    age = None
    if not _absent(age_raw):
        try:
            age = int(age_raw)
        except (TypeError, ValueError):
            raise SchemaError(row, "rater_age", f"not an integer: {age_raw!r}") from None
        if isinstance(age_raw, float) and age != age_raw:
            raise SchemaError(row, "rater_age", f"not an integer: {age_raw!r}")

    ts = required_str("timestamp")
    try:
        parse_timestamp(ts)
    except ValueError:
        raise SchemaError(row, "timestamp", f"not ISO-8601: {ts!r}") from None

    return AnnotationRecord(
        annotation_id=required_str("annotation_id"),
        session_id=required_str("session_id"),
        utterance_id=required_str("utterance_id"),
        rater_id=required_str("rater_id"),
        rater_gender=enum("rater_gender", RATER_GENDERS),
        rater_age=age,
        rater_language=optional_str("rater_language"),
        rater_country=optional_str("rater_country"),
        valence=rating("valence"),
        arousal=rating("arousal"),
        dominance=rating("dominance"),
        speaker_sex_label=enum("speaker_sex_label", SPEAKER_LABELS),
        multi_speaker=flag("multi_speaker"),
        noisy=flag("noisy"),
        timestamp=ts,
    )


def _iter_raw_rows(path: Path, fmt: str):
    if fmt == "csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise SchemaError(1, "<header>", f"expected header {','.join(COLUMNS)}")
            for lineno, values in enumerate(reader, start=2):
                if not values:
                    continue
                if len(values) != len(COLUMNS):
                    yield lineno, SchemaError(lineno, "<row>", f"expected {len(COLUMNS)} fields, got {len(values)}")
                    continue
                yield lineno, dict(zip(COLUMNS, values))
    elif fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    yield lineno, SchemaError(lineno, "<row>", f"invalid JSON: {e}")
                    continue
                if not isinstance(obj, dict):
                    yield lineno, SchemaError(lineno, "<row>", "expected a JSON object")
                    continue
                unknown = set(obj) - set(COLUMNS)
                if unknown:
                    yield lineno, SchemaError(lineno, sorted(unknown)[0], "unknown field")
                    continue
                yield lineno, obj
    else:
        raise ValueError(f"unknown format {fmt!r}")


def infer_format(path: str | Path) -> str:
    return "jsonl" if str(path).endswith((".jsonl", ".json")) else "csv"


def parse_annotations(path: str | Path, fmt: str | None = None, *, strict: bool = True) -> Dataset:
    """Read an annotation file into a :class:`Dataset`.

    In strict mode the first invalid row raises :class:`SchemaError`. In
    lenient mode invalid rows are skipped and listed in the ingest provenance
    entry (``ds.provenance[0]["rejected"]``). Out-of-range ratings are never
    admitted. Duplicate (rater, utterance) annotations keep the earliest
    timestamp; the number dropped is recorded as ``duplicates_dropped``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"annotation file not found: {path}")
    fmt = fmt or infer_format(path)

    rejected: list[dict] = []
    records: dict[str, AnnotationRecord] = {}
    n_rows = 0
    for lineno, raw in _iter_raw_rows(path, fmt):
        n_rows += 1
        try:
            if isinstance(raw, SchemaError):
                raise raw
            rec = _coerce_row(raw, lineno)
            if rec.annotation_id in records:
                raise DuplicateAnnotationId(f"row {lineno}: annotation_id {rec.annotation_id!r} repeated")
        except (SchemaError, DuplicateAnnotationId) as err:
            if strict:
                raise
            rejected.append({"row": lineno, "error": str(err)})
            continue
        records[rec.annotation_id] = rec

    kept, dropped = dedupe_rater_utterance(records.values())
    step = {
        "step": "ingest",
        "source": str(path),
        "format": fmt,
        "rows": n_rows,
        "rejected": rejected,
        "duplicates_dropped": dropped,
    }
    return Dataset(kept, [step])


def dedupe_rater_utterance(records: Iterable[AnnotationRecord]) -> tuple[list[AnnotationRecord], int]:
    best: dict[tuple[str, str], AnnotationRecord] = {}
    n = 0
    for r in records:
        n += 1
        key = (r.rater_id, r.utterance_id)
        cur = best.get(key)
        if cur is None or (parse_timestamp(r.timestamp), r.annotation_id) < (
            parse_timestamp(cur.timestamp),
            cur.annotation_id,
        ):
            best[key] = r
    return list(best.values()), n - len(best)


def _to_row(r: AnnotationRecord) -> dict[str, Any]:
    return asdict(r)


def write_annotations(ds: Dataset, path: str | Path, fmt: str | None = None) -> None:
    """Write annotations in canonical order; output re-parses to an equal Dataset."""
    path = Path(path)
    fmt = fmt or infer_format(path)
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in ds.annotations:
                row = _to_row(r)
                out = []
                for col in COLUMNS:
                    v = row[col]
                    if v is None:
                        out.append("")
                    elif isinstance(v, bool):
                        out.append("1" if v else "0")
                    else:
                        out.append(repr(v) if isinstance(v, float) else str(v))
                w.writerow(out)
    elif fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for r in ds.annotations:
                fh.write(json.dumps(_to_row(r), ensure_ascii=False) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------- summary


@dataclass
class SummaryReport:
    n_annotations: int
    n_utterances: int
    n_raters: int
    n_male_raters: int
    n_female_raters: int
    n_other_raters: int
    n_age_values: int
    n_languages: int
    n_countries: int
    annotations_per_rater: float | None
    annotations_per_utterance: float | None
    speaker_gender_majority: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        def fmt(v: float | None) -> str:
            return "n/a" if v is None else f"{v:.2f}"

        rows = [
            ("# of utterances", str(self.n_utterances)),
            ("# of annotations", str(self.n_annotations)),
            ("# of raters", str(self.n_raters)),
            ("# of male raters", str(self.n_male_raters)),
            ("# of female raters", str(self.n_female_raters)),
            ("# of other raters", str(self.n_other_raters)),
            ("# of age values of raters", str(self.n_age_values)),
            ("# of languages covered by raters", str(self.n_languages)),
            ("# of countries covered by raters", str(self.n_countries)),
            ("# of annotations per rater on average", fmt(self.annotations_per_rater)),
            ("# of annotations per utterance on average", fmt(self.annotations_per_utterance)),
            ("Speaker gender distribution by majority vote:", ""),
        ]
        rows += [(f"  {label.capitalize() if label != 'na' else 'NA'}", str(self.speaker_gender_majority.get(label, 0))) for label in SPEAKER_LABELS]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}".rstrip() for k, v in rows)


def summary_statistics(ds: Dataset) -> SummaryReport:
    genders = Counter(p.gender for p in ds.raters.values())

    def distinct(idx: int) -> int:
        return len({demo[idx] for p in ds.raters.values() for demo in p.demographics_per_session.values()} - {None})

    n_ann, n_utt, n_rat = len(ds.annotations), len(ds.utterances), len(ds.raters)
    majority = Counter(u.speaker_gender_majority for u in ds.utterances.values())
    return SummaryReport(
        n_annotations=n_ann,
        n_utterances=n_utt,
        n_raters=n_rat,
        n_male_raters=genders.get("male", 0),
        n_female_raters=genders.get("female", 0),
        n_other_raters=genders.get("other", 0),
        n_age_values=distinct(1),
        n_languages=distinct(2),
        n_countries=distinct(3),
        annotations_per_rater=n_ann / n_rat if n_rat else None,
        annotations_per_utterance=n_ann / n_utt if n_utt else None,
        speaker_gender_majority={label: majority.get(label, 0) for label in SPEAKER_LABELS},
    )
