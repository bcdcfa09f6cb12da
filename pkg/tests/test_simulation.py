import itertools
import json
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from conftest import rec
from percept.errors import ConfigError
from percept.estimators import PairedCounts, paired_repetition_count, paired_variance_of_mean
from percept.filters import apply_filter_pipeline
from percept.sampler import PairedSample, verify_sample, sample_pairs
from percept.simulation import (
    SimConfig,
    config_from_mapping,
    generate_synthetic_dataset,
    load_config,
    load_weights,
    power_experiment,
    run_replication,
    simulate_world,
    type_i_error_experiment,
    variance_oracle_check,
    weighted_draw_without_replacement,
)

SMALL = SimConfig(n_utterances=80, n_male_raters=6, n_female_raters=6, n_replications=40, seed=7)


def test_generation_is_deterministic():
    a, b = generate_synthetic_dataset(SMALL, 3), generate_synthetic_dataset(SMALL, 3)
    assert a == b
    assert generate_synthetic_dataset(SMALL, 4) != a


def test_zero_between_rater_spread_gives_identical_means():
    w = simulate_world(SMALL.replace(sigma_b=0.0, mu_g=0.1, delta=0.05))
    n_m = SMALL.n_male_raters
    assert np.allclose(w.rater_means[:n_m], 0.1)
    assert np.allclose(w.rater_means[n_m:], 0.15)


def test_each_utterance_gets_both_genders_and_distinct_raters():
    w = simulate_world(SMALL)
    k = SMALL.annotations_per_utterance
    raters = w.rater.reshape(SMALL.n_utterances, k)
    assert all(len(set(row)) == k for row in raters)
    assert np.all((raters < SMALL.n_male_raters).sum(axis=1) == k // 2)


def test_ratings_clamped_and_rate_reported():
    w = simulate_world(SMALL.replace(sigma_w=0.8))
    assert np.all(np.abs(w.ratings) <= 1.0)
    assert 0 < w.clamp_rate < 1
    assert simulate_world(SMALL.replace(sigma_b=0.0, sigma_w=0.01)).clamp_rate == 0.0


def test_generated_data_passes_filter_untouched():
    ds = generate_synthetic_dataset(SimConfig(n_utterances=300, n_male_raters=10, n_female_raters=10))
    out, reports = apply_filter_pipeline(ds)
    assert sum(r.annotations_removed for r in reports) == 0
    assert len(out) == len(ds)
    ps = sample_pairs(out, 1)
    assert verify_sample(ps, out).passed


def exact_subset_probabilities(w, k):
    """Successive sampling without replacement, enumerated over every ordering."""
    probs = Counter()
    total = w.sum()
    for order in itertools.permutations(range(len(w)), k):
        p, rest = 1.0, total
        for i in order:
            p *= w[i] / rest
            rest -= w[i]
        probs[frozenset(order)] += p
    return probs


@pytest.mark.parametrize("load, s", [("zipf", 1.0), ("zipf", 2.0), ("uniform", 1.0)])
def test_weighted_draw_matches_successive_sampling(load, s):
    w = load_weights(5, load, s)
    exact = exact_subset_probabilities(w, 2)
    draws = weighted_draw_without_replacement(np.random.default_rng(11), w, 2, 40_000)
    seen = Counter(frozenset(row) for row in draws.tolist())
    keys = sorted(exact, key=sorted)
    observed = np.array([seen[k] for k in keys])
    expected = np.array([exact[k] for k in keys]) * len(draws)
    assert observed.sum() == len(draws)
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_uniform_spread_distribution():
    cfg = SimConfig(n_utterances=10, n_male_raters=300, n_female_raters=300, sigma_b=0.2, distribution="uniform")
    means = simulate_world(cfg).rater_means.ravel()
    half = np.sqrt(3) * 0.2
    assert stats.kstest(means, stats.uniform(loc=-half, scale=2 * half).cdf).pvalue > 1e-3


# ---------------------------------------------------------------- config


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="n_utterance"):
        config_from_mapping({"n_utterance": 10})


@pytest.mark.parametrize(
    "bad",
    [{"sigma_w": 0}, {"rater_load": "heavy"}, {"annotations_per_utterance": 30}, {"alpha": 1.5}, {"n_replications": "x"}],
)
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        config_from_mapping(bad)


def test_load_config_formats(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"n_utterances": 50, "delta_grid": [0, 0.1]}))
    assert load_config(tmp_path / "c.json").delta_grid == [0.0, 0.1]
    (tmp_path / "c.txt").write_text("# comment\nn_utterances = 60\nsigma_b = 0.1\ndelta_grid = 0, 0.2\n")
    cfg = load_config(tmp_path / "c.txt")
    assert (cfg.n_utterances, cfg.sigma_b, cfg.delta_grid) == (60, 0.1, [0.0, 0.2])


# ---------------------------------------------------------------- experiments


def test_replication_row_contents():
    row = run_replication(SMALL, 0)
    for key in ("paired_corrected_t", "paired_naive_p", "unpaired_female_corrected_t", "M", "clamp_rate"):
        assert key in row
    assert abs(row["paired_corrected_t"]) <= abs(row["paired_naive_t"])


def test_type_i_report_is_reproducible():
    a = type_i_error_experiment(SMALL, workers=1)
    b = type_i_error_experiment(SMALL, workers=1)
    assert a.tstats == b.tstats
    assert a.rejection_rate_corrected <= a.rejection_rate_naive
    assert set(a.tstat_quantiles["paired_corrected"]) == {"0.025", "0.25", "0.5", "0.75", "0.975"}


def test_parallel_matches_serial():
    cfg = SMALL.replace(n_replications=6)
    assert type_i_error_experiment(cfg, workers=2).tstats == type_i_error_experiment(cfg, workers=1).tstats


def test_type_i_requires_null():
    with pytest.raises(ConfigError):
        type_i_error_experiment(SMALL.replace(delta=0.1))


def test_naive_test_overrejects_under_heavy_repetition():
    cfg = SimConfig(n_utterances=300, n_male_raters=10, n_female_raters=10, n_replications=100, seed=3)
    rep = type_i_error_experiment(cfg, workers=1)
    assert rep.rejection_rate_naive > 0.08
    assert rep.rejection_rate_corrected < 0.15


def test_zero_between_rater_variance_removes_correction():
    cfg = SimConfig(n_utterances=200, n_male_raters=10, n_female_raters=10, sigma_b=0.0, seed=5)
    ds, _ = apply_filter_pipeline(generate_synthetic_dataset(cfg))
    ps = sample_pairs(ds, 0)
    pc = paired_repetition_count(ps, "valence")
    assert pc.m > 0
    assert paired_variance_of_mean(pc, 0.0) == paired_variance_of_mean(PairedCounts(pc.n, 0, pc.var_d, pc.mean_d), 0.5)


def test_failed_replications_are_counted_not_fatal():
    # one rating per rater: every session is a singleton, the filter empties the data
    cfg = SimConfig(n_utterances=20, n_male_raters=40, n_female_raters=40, annotations_per_utterance=2, n_replications=3)
    rep = type_i_error_experiment(cfg, workers=1)
    assert rep.details["failed_replications"] == 3


def test_power_grid_rows():
    cfg = SMALL.replace(n_replications=20)
    rep = power_experiment(cfg, deltas=[0.0, 0.8], workers=1)
    grid = rep.details["grid"]
    assert [r["delta"] for r in grid] == [0.0, 0.8]
    assert grid[1]["power_corrected"] >= grid[0]["power_corrected"]
    assert grid[1]["power_corrected"] > 0.9


def test_power_requires_effect():
    with pytest.raises(ConfigError):
        power_experiment(SMALL)


def test_variance_check_without_repetition_is_classical():
    n = 200
    cfg = SimConfig(n_utterances=n, n_male_raters=n, n_female_raters=n, annotations_per_utterance=2,
                    sigma_b=0.3, sigma_w=0.4, n_replications=5000, seed=9)
    ds = generate_synthetic_dataset(cfg)
    ps = PairedSample(
        {f"u{i:06d}": (rec(f"u{i:06d}", f"m{i:04d}", "male"), rec(f"u{i:06d}", f"f{i:04d}", "female")) for i in range(n)},
        0,
    )
    rep = variance_oracle_check(cfg, sample=ps, dataset=ds)
    assert rep.details["M"] == 0
    assert rep.formula_var_of_mean == pytest.approx(2 * (0.09 + 0.16) / n)
    assert rep.relative_error < 0.05


def test_variance_check_report_fields():
    cfg = SimConfig(n_utterances=100, n_replications=500, seed=2)
    rep = variance_oracle_check(cfg)
    assert rep.details["M"] > 0
    assert set(rep.details["unpaired"]) == {"female", "male"}
    assert rep.relative_error < 0.2
    assert json.loads(rep.to_json())["experiment"] == "variance"
