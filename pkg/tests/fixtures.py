"""Reusable dataset builders shared by the unit and acceptance tests."""

import random

from conftest import rec
from percept.store import Dataset


def cascade_fixture():
    """X's removal empties u1, which flattens Y's session, which pushes u2 below 5 on pass 2."""
    rnd = random.Random(7)

    def r(uid, rater, gender, session, v=None, **kw):
        return rec(uid, rater, gender, rnd.uniform(-1, 1) if v is None else v, rnd.uniform(-1, 1), rnd.uniform(-1, 1),
                   session=session, **kw)

    recs = [
        r("u1", "X", "female", "xs1", age=30), r("u4", "X", "female", "xs1", age=30),
        r("u5", "X", "female", "xs2", age=31), r("u6", "X", "female", "xs2", age=31),
        r("u1", "Y", "male", "ys", v=0.5), r("u2", "Y", "male", "ys", v=0.1), r("u3", "Y", "male", "ys", v=0.1),
    ]
    fillers = {
        ("m1", "male"): ["u1", "u3", "u4", "u5", "u6"],
        ("m2", "male"): ["u2", "u3", "u4"],
        ("m3", "male"): ["u3", "u4", "u5"],
        ("m4", "male"): ["u4", "u5", "u6"],
        ("f1", "female"): ["u1", "u2", "u4", "u5", "u6"],
        ("f2", "female"): ["u1", "u2", "u4", "u5"],
        ("f3", "female"): ["u2", "u3", "u4"],
        ("f4", "female"): ["u3", "u4", "u5", "u6"],
    }
    for (rid, g), utts in fillers.items():
        recs += [r(u, rid, g, f"{rid}-s") for u in utts]
    return Dataset(recs)


def dirty_dataset(seed: int) -> Dataset:
    """Random fixture mixing all four kinds of violation."""
    rnd = random.Random(seed)
    raters = []
    for i in range(rnd.randint(8, 20)):
        g = rnd.choices(["male", "female", "other"], [0.45, 0.45, 0.1])[0]
        raters.append((f"r{i}", g, rnd.random() < 0.15))
    recs = []
    n_utt = rnd.randint(5, 25)
    grid = [round(x * 0.25, 2) for x in range(-4, 5)]
    for rid, g, flaky in raters:
        utts = rnd.sample(range(n_utt), rnd.randint(1, min(n_utt, 10)))
        for j, u in enumerate(utts):
            sess = f"{rid}-s{j // rnd.choice([2, 3, 5])}"
            gender = g
            if flaky and j > 0 and rnd.random() < 0.5:
                gender = rnd.choice(["male", "female"])
            recs.append(rec(f"u{u}", rid, gender, rnd.choice(grid), rnd.choice(grid), rnd.choice(grid), session=sess,
                            age=None if rnd.random() < 0.05 else 30))
    return Dataset(recs)
