from __future__ import annotations

import itertools
import random

import pytest

from percept.store import AnnotationRecord, Dataset

_ids = itertools.count()


def rec(
    utterance_id,
    rater_id,
    gender,
    v=0.0,
    a=0.0,
    d=0.0,
    *,
    session=None,
    age=30,
    language="en",
    country="US",
    label="male",
    ts=None,
    annotation_id=None,
):
    n = next(_ids)
    return AnnotationRecord(
        annotation_id=annotation_id or f"a{n:08d}",
        session_id=session or f"{rater_id}-s0",
        utterance_id=utterance_id,
        rater_id=rater_id,
        rater_gender=gender,
        rater_age=age,
        rater_language=language,
        rater_country=country,
        valence=v,
        arousal=a,
        dominance=d,
        speaker_sex_label=label,
        multi_speaker=False,
        noisy=False,
        timestamp=ts or f"2020-01-01T00:00:{n % 60:02d}+00:00",
    )


def random_clean_dataset(rnd: random.Random, n_utt=30, n_male=6, n_female=6, per_utt=(3, 6)):
    """Every utterance has >=1 male and >=1 female rater; values are distinct reals."""
    males = [f"m{i}" for i in range(n_male)]
    females = [f"f{i}" for i in range(n_female)]
    records = []
    for u in range(n_utt):
        k = rnd.randint(*per_utt)
        raters = [rnd.choice(males), rnd.choice(females)]
        raters += rnd.sample(males + females, k)
        for rid in dict.fromkeys(raters):
            g = "male" if rid.startswith("m") else "female"
            records.append(
                rec(f"u{u:03d}", rid, g, rnd.uniform(-1, 1), rnd.uniform(-1, 1), rnd.uniform(-1, 1),
                    label=rnd.choice(["male", "female"]))
            )
    return Dataset(records)


@pytest.fixture
def rnd():
    return random.Random(12345)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed at session end."""

    def record(number, passed, detail, skipped=False):
        status = "SKIP" if skipped else ("PASS" if passed else "FAIL")
        line = f"[{status}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
