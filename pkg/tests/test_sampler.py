import random
from collections import Counter

import pytest

from conftest import random_clean_dataset, rec
from oracles import reference_sample
from percept.errors import PreconditionViolation
from percept.sampler import (
    PairedSample,
    build_pair_index,
    read_paired_sample,
    sample_pairs,
    verify_sample,
    write_paired_sample,
)
from percept.store import Dataset


def forced_dataset():
    return Dataset([
        rec("u1", "m1", "male", 0.1), rec("u1", "f1", "female", 0.2),
        rec("u2", "m2", "male", 0.3), rec("u2", "f2", "female", 0.4),
    ])


def test_pair_index_single_pair():
    ds = Dataset([rec(u, r, g) for u in ("u1", "u2") for r, g in (("m", "male"), ("f", "female"))])
    pairs = build_pair_index(ds)
    assert len(pairs) == 1
    assert pairs[0].co_annotated == {"u1", "u2"}


def test_pair_index_cartesian():
    ds = Dataset([rec("u1", r, g) for r, g in (("m1", "male"), ("m2", "male"), ("f1", "female"), ("f2", "female"))])
    assert [(p.male_rater_id, p.female_rater_id) for p in build_pair_index(ds)] == [
        ("m1", "f1"), ("m1", "f2"), ("m2", "f1"), ("m2", "f2")
    ]


def test_pair_index_matches_brute_force_intersection():
    ds = random_clean_dataset(random.Random(5), n_utt=50, n_male=10, n_female=10)
    got = {(p.male_rater_id, p.female_rater_id): set(p.co_annotated) for p in build_pair_index(ds)}
    utts_of = {}
    for r in ds.annotations:
        utts_of.setdefault((r.rater_id, r.rater_gender), set()).add(r.utterance_id)
    expected = {}
    for (m, gm), um in utts_of.items():
        for (f, gf), uf in utts_of.items():
            if gm == "male" and gf == "female" and um & uf:
                expected[(m, f)] = um & uf
    assert got == expected


def test_forced_assignment_is_seed_independent():
    ds = forced_dataset()
    a, b = sample_pairs(ds, 1), sample_pairs(ds, 2)
    assert a.assignments == b.assignments
    assert a.assignments["u1"][0].rater_id == "m1" and a.assignments["u2"][1].rater_id == "f2"


def test_missing_gender_is_precondition_violation():
    ds = Dataset([rec("u1", "m1", "male"), rec("u1", "m2", "male")])
    with pytest.raises(PreconditionViolation):
        sample_pairs(ds, 0)


def test_competing_pairs_match_reference_loop():
    ds = Dataset([
        rec("u1", "m1", "male"), rec("u1", "m2", "male"), rec("u1", "f1", "female"),
        rec("u2", "m1", "male"), rec("u2", "f1", "female"), rec("u2", "f2", "female"),
        rec("u3", "m2", "male"), rec("u3", "f2", "female"), rec("u3", "f1", "female"),
    ])
    for seed in range(20):
        got = {u: (m.annotation_id, f.annotation_id) for u, (m, f) in sample_pairs(ds, seed).assignments.items()}
        assert got == reference_sample(ds, seed)


@pytest.mark.parametrize("seed", range(15))
def test_random_fixtures_match_reference_loop(seed):
    ds = random_clean_dataset(random.Random(seed), n_utt=25, n_male=5, n_female=5)
    got = {u: (m.annotation_id, f.annotation_id) for u, (m, f) in sample_pairs(ds, seed).assignments.items()}
    assert got == reference_sample(ds, seed)


def test_verify_passes_and_detects_violations():
    ds = random_clean_dataset(random.Random(1))
    ps = sample_pairs(ds, 3)
    assert verify_sample(ps, ds).passed

    uid = ps.utterance_ids()[0]
    m, f = ps.assignments[uid]
    swapped = PairedSample({**ps.assignments, uid: (f, m)}, ps.seed)
    report = verify_sample(swapped, ds)
    assert not report.passed
    assert any(v.startswith("gender-slot mismatch") for v in report.violations)

    missing = PairedSample({u: p for u, p in ps.assignments.items() if u != uid}, ps.seed)
    report = verify_sample(missing, ds)
    assert not report.passed and any(v.startswith("coverage") for v in report.violations)


def test_determinism():
    ds = random_clean_dataset(random.Random(2))
    assert sample_pairs(ds, 11).assignments == sample_pairs(ds, 11).assignments


def test_single_pair_utterance_always_chosen():
    ds = Dataset([
        rec("u1", "m1", "male"), rec("u1", "f1", "female"),
        rec("u2", "m1", "male"), rec("u2", "m2", "male"), rec("u2", "f1", "female"), rec("u2", "f2", "female"),
    ])
    for seed in range(50):
        m, f = sample_pairs(ds, seed).assignments["u1"]
        assert (m.rater_id, f.rater_id) == ("m1", "f1")


def test_symmetric_fixture_selection_is_uniform():
    ds = Dataset([rec("u1", r, g) for r, g in (("m1", "male"), ("m2", "male"), ("f1", "female"), ("f2", "female"))])
    n = 4000
    counts = Counter()
    for seed in range(n):
        m, f = sample_pairs(ds, seed).assignments["u1"]
        counts[(m.rater_id, f.rater_id)] += 1
    assert len(counts) == 4
    sd = (n * 0.25 * 0.75) ** 0.5
    assert all(abs(c - n / 4) < 4 * sd for c in counts.values())


def test_csv_roundtrip(tmp_path):
    ds = random_clean_dataset(random.Random(9))
    ps = sample_pairs(ds, 42)
    sidecar = write_paired_sample(ps, tmp_path / "s.csv")
    assert sidecar.exists()
    back = read_paired_sample(tmp_path / "s.csv", ds)
    assert back.assignments == ps.assignments and back.seed == 42
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == ("utterance_id,male_rater_id,male_valence,male_arousal,male_dominance,"
                      "female_rater_id,female_valence,female_arousal,female_dominance")
