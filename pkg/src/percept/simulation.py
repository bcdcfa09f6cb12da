"""Synthetic crowdsourced worlds and Monte Carlo checks of the corrected tests.

Every rater has a mean ``mu_g + eps_r`` (plus ``delta`` for female raters) with
``eps_r`` of spread ``sigma_b``; each rating adds independent noise of spread
``sigma_w``. Each replication draws from its own generator stream seeded by
``(seed, replication, stream)``, so results do not depend on worker count.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, PerceptError
from .estimators import paired_counts, paired_variance_of_mean, unpaired_counts, unpaired_variance_of_mean
from .filters import apply_filter_pipeline
from .hypotheses import paired_test, resolve_dimension, speaker_groups, unpaired_test
from .sampler import PairedSample, sample_pairs
from .store import AnnotationRecord, Dataset

_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)


@dataclass
class SimConfig:
    n_utterances: int = 500
    n_male_raters: int = 10
    n_female_raters: int = 10
    annotations_per_utterance: int = 6
    rater_load: str = "uniform"
    zipf_s: float = 1.0
    mu_g: float = 0.0
    sigma_b: float = 0.2
    sigma_w: float = 0.2
    delta: float = 0.0
    speaker_female_fraction: float = 0.5
    n_replications: int = 2000
    seed: int = 0
    alpha: float = 0.05
    distribution: str = "normal"
    session_size: int = 5
    dimension: str = "valence"
    delta_grid: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_utterances", "n_male_raters", "n_female_raters", "n_replications", "session_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        k = self.annotations_per_utterance
        if k < 2:
            raise ConfigError("annotations_per_utterance must be >= 2")
        if k // 2 > self.n_male_raters or k - k // 2 > self.n_female_raters:
            raise ConfigError("annotations_per_utterance needs more raters of each gender than are configured")
        if self.rater_load not in ("uniform", "zipf"):
            raise ConfigError(f"rater_load must be 'uniform' or 'zipf', got {self.rater_load!r}")
        if self.distribution not in ("normal", "uniform"):
            raise ConfigError(f"distribution must be 'normal' or 'uniform', got {self.distribution!r}")
        if self.sigma_b < 0:
            raise ConfigError("sigma_b must be >= 0")
        if not self.sigma_w > 0:
            raise ConfigError("sigma_w must be > 0")
        if not 0 <= self.speaker_female_fraction <= 1:
            raise ConfigError("speaker_female_fraction must lie in [0, 1]")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        try:
            resolve_dimension(self.dimension)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def n_raters(self) -> int:
        return self.n_male_raters + self.n_female_raters


def config_from_mapping(values: Mapping[str, Any]) -> SimConfig:
    fields = {f.name: f for f in dataclasses.fields(SimConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        default = fields[key].default
        try:
            if key == "delta_grid":
                if isinstance(raw, str):
                    raw = [x for x in raw.replace(",", " ").split() if x]
                kwargs[key] = [float(x) for x in raw]
            elif isinstance(default, bool):
                kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                if isinstance(raw, float) and not raw.is_integer():
                    raise ValueError(raw)
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for config key {key!r}: {raw!r}") from None
    return SimConfig(**kwargs)


def load_config(path: str | Path) -> SimConfig:
    """Read a SimConfig from a JSON object or ``key = value`` lines (``#`` comments)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        values = json.loads(text)
    except json.JSONDecodeError:
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
    if not isinstance(values, dict):
        raise ConfigError("config must be a JSON object or key = value lines")
    return config_from_mapping(values)


# ---------------------------------------------------------------- worlds


def replication_rng(seed: int, replication: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, replication, stream])


def load_weights(n: int, load: str, s: float) -> np.ndarray:
    if load == "uniform":
        return np.ones(n)
    return 1.0 / np.arange(1, n + 1) ** s


def weighted_draw_without_replacement(rng: np.random.Generator, weights: np.ndarray, k: int, n_draws: int) -> np.ndarray:
    """``n_draws`` independent successive weighted samples of ``k`` distinct indices.

    Gumbel-top-k: the k largest ``log w + Gumbel`` keys have the same law as
    drawing one index at a time with probability proportional to the
    remaining weights.
    """
    keys = np.log(weights)[None, :] + rng.gumbel(size=(n_draws, len(weights)))
    return np.argsort(-keys, axis=1, kind="stable")[:, :k]


def _spread(rng: np.random.Generator, size, sigma: float, distribution: str) -> np.ndarray:
    if distribution == "normal":
        return sigma * rng.standard_normal(size)
    half = math.sqrt(3.0) * sigma
    return rng.uniform(-half, half, size)


@dataclass
class SyntheticWorld:
    """Arrays behind one synthetic dataset.

    Rater indices ``0 .. n_male-1`` are male, the rest female. ``ratings`` has
    one row per annotation and one column per dimension, after clamping.
    """

    config: SimConfig
    replication: int
    rater_means: np.ndarray
    utterance: np.ndarray
    rater: np.ndarray
    ratings: np.ndarray
    speaker_female: np.ndarray
    clamp_rate: float

    def rater_id(self, idx: int) -> str:
        n_m = self.config.n_male_raters
        return f"m{idx:04d}" if idx < n_m else f"f{idx - n_m:04d}"

    def to_dataset(self) -> Dataset:
        cfg = self.config
        n_m = cfg.n_male_raters
        # sessions: each rater's annotations in utterance order, chunked; a trailing singleton joins the previous chunk
        session = np.empty(len(self.rater), dtype=np.int64)
        for r in np.unique(self.rater):
            idx = np.flatnonzero(self.rater == r)
            chunk = np.arange(len(idx)) // cfg.session_size
            if len(idx) > cfg.session_size and len(idx) % cfg.session_size == 1:
                chunk[-1] -= 1
            session[idx] = chunk
        records = []
        for i in range(len(self.rater)):
            r = int(self.rater[i])
            u = int(self.utterance[i])
            v, a, d = self.ratings[i]
            rid = self.rater_id(r)
            records.append(
                AnnotationRecord(
                    annotation_id=f"a{i:07d}",
                    session_id=f"{rid}-s{int(session[i]):04d}",
                    utterance_id=f"u{u:06d}",
                    rater_id=rid,
                    rater_gender="male" if r < n_m else "female",
                    rater_age=18 + r % 50,
                    rater_language="en",
                    rater_country="US",
                    valence=float(v),
                    arousal=float(a),
                    dominance=float(d),
                    speaker_sex_label="female" if self.speaker_female[u] else "male",
                    multi_speaker=False,
                    noisy=False,
                    timestamp=(_EPOCH + timedelta(seconds=i)).isoformat(),
                )
            )
        step = {
            "step": "synthetic",
            "seed": cfg.seed,
            "replication": self.replication,
            "clamp_rate": self.clamp_rate,
            "generator": "numpy.random.PCG64",
        }
        return Dataset(records, [step])


def simulate_world(cfg: SimConfig, replication: int = 0) -> SyntheticWorld:
    rng = replication_rng(cfg.seed, replication)
    n_m, n_f, n_u = cfg.n_male_raters, cfg.n_female_raters, cfg.n_utterances
    k_m = cfg.annotations_per_utterance // 2
    k_f = cfg.annotations_per_utterance - k_m

    means = cfg.mu_g + _spread(rng, (n_m + n_f, 3), cfg.sigma_b, cfg.distribution)
    means[n_m:] += cfg.delta

    male = weighted_draw_without_replacement(rng, load_weights(n_m, cfg.rater_load, cfg.zipf_s), k_m, n_u)
    female = n_m + weighted_draw_without_replacement(rng, load_weights(n_f, cfg.rater_load, cfg.zipf_s), k_f, n_u)
    rater = np.concatenate([male, female], axis=1).ravel()
    utterance = np.repeat(np.arange(n_u), k_m + k_f)

    raw = means[rater] + _spread(rng, (len(rater), 3), cfg.sigma_w, cfg.distribution)
    ratings = np.clip(raw, -1.0, 1.0)
    clamp_rate = float(np.mean(ratings != raw))
    speaker_female = rng.random(n_u) < cfg.speaker_female_fraction
    return SyntheticWorld(cfg, replication, means, utterance, rater, ratings, speaker_female, clamp_rate)


def generate_synthetic_dataset(cfg: SimConfig, replication: int = 0) -> Dataset:
    return simulate_world(cfg, replication).to_dataset()


# ---------------------------------------------------------------- reports


@dataclass
class SimReport:
    experiment: str
    n_replications: int
    alpha: float
    rejection_rate_corrected: float | None = None
    rejection_rate_naive: float | None = None
    empirical_var_of_mean: float | None = None
    formula_var_of_mean: float | None = None
    relative_error: float | None = None
    tstat_quantiles: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    tstats: dict = field(default_factory=dict, repr=False)
    config: dict = field(default_factory=dict)

    def to_dict(self, include_tstats: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_tstats:
            d.pop("tstats")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"experiment: {self.experiment}", f"replications: {self.n_replications}", f"alpha: {self.alpha}"]
        for name in ("rejection_rate_corrected", "rejection_rate_naive", "empirical_var_of_mean", "formula_var_of_mean", "relative_error"):
            v = getattr(self, name)
            if v is not None:
                lines.append(f"{name}: {v:.6g}")
        for key, val in self.details.items():
            if isinstance(val, list):
                lines.append(f"{key}:")
                lines.extend(f"  {row}" for row in val)
            else:
                lines.append(f"{key}: {val}")
        return "\n".join(lines)

    def write_tstats_csv(self, path: str | Path) -> None:
        names = sorted(self.tstats)
        rows = zip(*(self.tstats[n] for n in names))
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(",".join(["replication"] + names) + "\n")
            for i, row in enumerate(rows):
                fh.write(",".join([str(i)] + [repr(float(x)) for x in row]) + "\n")


def _quantiles(x) -> dict:
    x = np.asarray([v for v in x if np.isfinite(v)])
    if len(x) == 0:
        return {}
    qs = (0.025, 0.25, 0.5, 0.75, 0.975)
    return {str(q): float(v) for q, v in zip(qs, np.quantile(x, qs))}


def _rate(pvals, alpha) -> float:
    p = np.asarray(pvals, dtype=float)
    return float(np.mean(p < alpha)) if len(p) else float("nan")


# ---------------------------------------------------------------- replications


def _sample_seed(cfg: SimConfig, replication: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, replication, 1]).generate_state(1)[0])


def run_replication(cfg: SimConfig, replication: int) -> dict:
    """generate -> filter -> sample -> tests, corrected and naive; NaN on a failed test."""
    ds = generate_synthetic_dataset(cfg, replication)
    clamp = ds.provenance[0]["clamp_rate"]
    ds, reports = apply_filter_pipeline(ds)
    removed = sum(r.annotations_removed for r in reports)
    ps = sample_pairs(ds, _sample_seed(cfg, replication))
    dim = resolve_dimension(cfg.dimension)
    out: dict[str, float] = {"clamp_rate": clamp, "filter_removed": removed}
    for corrected, tag in ((True, "corrected"), (False, "naive")):
        try:
            res = paired_test(ps, dim, corrected=corrected)
            out[f"paired_{tag}_t"], out[f"paired_{tag}_p"] = res.tstat, res.p_value
            if corrected:
                out["mean_d"] = res.mean_difference
                out["var_mean_d"] = res.variance_of_mean
                out["M"] = res.counts["M"]
        except PerceptError:
            out[f"paired_{tag}_t"] = out[f"paired_{tag}_p"] = float("nan")
            if corrected:
                out["mean_d"] = out["var_mean_d"] = out["M"] = float("nan")
        for gender in ("female", "male"):
            fem, mal = speaker_groups(ds, gender)
            try:
                res = unpaired_test(fem, mal, dim, corrected=corrected)
                out[f"unpaired_{gender}_{tag}_t"], out[f"unpaired_{gender}_{tag}_p"] = res.tstat, res.p_value
            except PerceptError:
                out[f"unpaired_{gender}_{tag}_t"] = out[f"unpaired_{gender}_{tag}_p"] = float("nan")
    return out


def _run_one(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def default_workers() -> int:
    env = os.environ.get("PERCEPT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_replications(cfg: SimConfig, workers: int | None = None) -> list[dict]:
    workers = workers or default_workers()
    jobs = [(cfg, rep) for rep in range(cfg.n_replications)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _collect(rows: list[dict], key: str) -> np.ndarray:
    return np.array([r[key] for r in rows], dtype=float)


def _summarize(cfg: SimConfig, rows: list[dict], experiment: str) -> SimReport:
    a = cfg.alpha
    t_c, p_c = _collect(rows, "paired_corrected_t"), _collect(rows, "paired_corrected_p")
    t_n, p_n = _collect(rows, "paired_naive_t"), _collect(rows, "paired_naive_p")
    mean_d = _collect(rows, "mean_d")
    ok = np.isfinite(mean_d)
    emp = float(np.var(mean_d[ok], ddof=1)) if ok.sum() > 1 else float("nan")
    formula = float(np.mean(_collect(rows, "var_mean_d")[ok])) if ok.any() else float("nan")
    details = {
        "failed_replications": int(np.sum(~np.isfinite(p_c))),
        "mean_clamp_rate": float(np.mean(_collect(rows, "clamp_rate"))),
        "mean_filter_removed": float(np.mean(_collect(rows, "filter_removed"))),
        "mean_M": float(np.mean(_collect(rows, "M")[ok])) if ok.any() else float("nan"),
    }
    tstats = {"paired_corrected": t_c.tolist(), "paired_naive": t_n.tolist()}
    for gender in ("female", "male"):
        for tag in ("corrected", "naive"):
            p = _collect(rows, f"unpaired_{gender}_{tag}_p")
            details[f"unpaired_{gender}_rejection_rate_{tag}"] = _rate(p[np.isfinite(p)], a)
            tstats[f"unpaired_{gender}_{tag}"] = _collect(rows, f"unpaired_{gender}_{tag}_t").tolist()
    return SimReport(
        experiment=experiment,
        n_replications=len(rows),
        alpha=a,
        rejection_rate_corrected=_rate(p_c[np.isfinite(p_c)], a),
        rejection_rate_naive=_rate(p_n[np.isfinite(p_n)], a),
        empirical_var_of_mean=emp,
        formula_var_of_mean=formula,
        relative_error=abs(emp - formula) / formula if formula > 0 else float("nan"),
        tstat_quantiles={"paired_corrected": _quantiles(t_c), "paired_naive": _quantiles(t_n)},
        details=details,
        tstats=tstats,
        config=cfg.to_dict(),
    )


def type_i_error_experiment(cfg: SimConfig, workers: int | None = None) -> SimReport:
    """Null rejection rates of the corrected and naive (counts zeroed) tests."""
    if cfg.delta != 0:
        raise ConfigError("type-I experiment requires delta = 0")
    return _summarize(cfg, run_replications(cfg, workers), "type1")


def power_experiment(cfg: SimConfig, deltas: Sequence[float] | None = None, workers: int | None = None) -> SimReport:
    """Rejection rate per gender effect in ``deltas`` (default ``cfg.delta_grid``).

    Every grid point reuses the same replication seeds, so differences between
    rows come from the effect size rather than from fresh noise.
    """
    grid = list(deltas if deltas is not None else (cfg.delta_grid or [cfg.delta]))
    if not grid or any(d < 0 for d in grid):
        raise ConfigError("power experiment needs a non-empty grid of non-negative deltas")
    if deltas is None and not cfg.delta_grid and not cfg.delta > 0:
        raise ConfigError("power experiment requires delta > 0 or a delta_grid")
    rows = []
    tstats = {}
    for delta in grid:
        point = cfg.replace(delta=float(delta))
        rep = _summarize(point, run_replications(point, workers), "power")
        rows.append(
            {
                "delta": float(delta),
                "power_corrected": rep.rejection_rate_corrected,
                "power_naive": rep.rejection_rate_naive,
            }
        )
        tstats[f"delta={delta:g}"] = rep.tstats["paired_corrected"]
    last = rows[-1]
    return SimReport(
        experiment="power",
        n_replications=cfg.n_replications,
        alpha=cfg.alpha,
        rejection_rate_corrected=last["power_corrected"],
        rejection_rate_naive=last["power_naive"],
        details={"grid": rows},
        tstats=tstats,
        config=cfg.to_dict(),
    )


# ---------------------------------------------------------------- variance oracle


def _empirical_variances(
    cfg: SimConfig,
    male_idx: np.ndarray,
    female_idx: np.ndarray,
    groups: Mapping[str, tuple[np.ndarray, np.ndarray]],
    rng: np.random.Generator,
    chunk: int = 250,
) -> tuple[float, dict[str, float]]:
    """Redraw rater means and noise with the assignment held fixed.

    Ratings are left unclamped: the formulas describe the rating model, and
    clamping is only a constraint of the stored dataset.
    """
    n_raters = cfg.n_raters
    dbar = []
    diffs: dict[str, list] = {k: [] for k in groups}
    done = 0
    while done < cfg.n_replications:
        c = min(chunk, cfg.n_replications - done)
        eps = cfg.mu_g + _spread(rng, (c, n_raters), cfg.sigma_b, cfg.distribution)
        n = len(male_idx)
        d = (eps[:, female_idx] + _spread(rng, (c, n), cfg.sigma_w, cfg.distribution)) - (
            eps[:, male_idx] + _spread(rng, (c, n), cfg.sigma_w, cfg.distribution)
        )
        dbar.append(d.mean(axis=1))
        for key, (f_idx, m_idx) in groups.items():
            xf = eps[:, f_idx] + _spread(rng, (c, len(f_idx)), cfg.sigma_w, cfg.distribution)
            xm = eps[:, m_idx] + _spread(rng, (c, len(m_idx)), cfg.sigma_w, cfg.distribution)
            diffs[key].append(xf.mean(axis=1) - xm.mean(axis=1))
        done += c
    emp_paired = float(np.var(np.concatenate(dbar), ddof=1))
    emp_unpaired = {k: float(np.var(np.concatenate(v), ddof=1)) for k, v in diffs.items()}
    return emp_paired, emp_unpaired


def _rater_index(cfg: SimConfig, rater_id: str) -> int:
    n = int(rater_id[1:])
    return n if rater_id[0] == "m" else cfg.n_male_raters + n


def variance_oracle_check(cfg: SimConfig, sample: PairedSample | None = None, dataset: Dataset | None = None) -> SimReport:
    """Empirical variance of the mean difference vs the closed-form variance.

    The rater-to-utterance assignment comes from replication 0 (generated,
    filtered and resampled) unless ``sample``/``dataset`` are given; it stays
    fixed while rater means and noise are redrawn ``n_replications`` times.
    The formulas are evaluated with the true sigma_b^2, sigma_d^2 = 2
    (sigma_b^2 + sigma_w^2) and sigma_x^2 = sigma_b^2 + sigma_w^2.
    """
    if cfg.delta != 0:
        raise ConfigError("variance check requires delta = 0")
    if dataset is None:
        dataset, _ = apply_filter_pipeline(generate_synthetic_dataset(cfg, 0))
    if sample is None:
        sample = sample_pairs(dataset, _sample_seed(cfg, 0))

    uids = sample.utterance_ids()
    male_ids = [sample.assignments[u][0].rater_id for u in uids]
    female_ids = [sample.assignments[u][1].rater_id for u in uids]
    male_idx = np.array([_rater_index(cfg, r) for r in male_ids])
    female_idx = np.array([_rater_index(cfg, r) for r in female_ids])

    sb2 = cfg.sigma_b**2
    sw2 = cfg.sigma_w**2
    pc = paired_counts(male_ids, female_ids, np.zeros(len(uids)))
    pc.var_d = 2 * (sb2 + sw2)
    formula_paired = paired_variance_of_mean(pc, sb2)

    groups, formulas, counts = {}, {}, {}
    for gender in ("female", "male"):
        fem, mal = speaker_groups(dataset, gender)
        if len(fem) < 2 or len(mal) < 2:
            continue
        uc = unpaired_counts([r.rater_id for r in fem], np.zeros(len(fem)), [r.rater_id for r in mal], np.zeros(len(mal)))
        uc.var_x = sb2 + sw2
        groups[gender] = (
            np.array([_rater_index(cfg, r.rater_id) for r in fem]),
            np.array([_rater_index(cfg, r.rater_id) for r in mal]),
        )
        formulas[gender] = unpaired_variance_of_mean(uc, sb2)
        counts[gender] = {"N_f": uc.n_f, "N_m": uc.n_m, "N_same_f": uc.same_f, "N_same_m": uc.same_m, "N_cross": uc.cross}

    emp_paired, emp_unpaired = _empirical_variances(cfg, male_idx, female_idx, groups, replication_rng(cfg.seed, 0, 2))
    unpaired = {
        g: {
            "empirical_var_of_mean": emp_unpaired[g],
            "formula_var_of_mean": formulas[g],
            "relative_error": abs(emp_unpaired[g] - formulas[g]) / formulas[g],
            "counts": counts[g],
        }
        for g in groups
    }
    return SimReport(
        experiment="variance",
        n_replications=cfg.n_replications,
        alpha=cfg.alpha,
        empirical_var_of_mean=emp_paired,
        formula_var_of_mean=formula_paired,
        relative_error=abs(emp_paired - formula_paired) / formula_paired,
        details={
            "N": pc.n,
            "M": pc.m,
            "relative_standard_error": math.sqrt(2.0 / (cfg.n_replications - 1)) if cfg.n_replications > 1 else None,
            "unpaired": unpaired,
        },
        config=cfg.to_dict(),
    )


EXPERIMENTS: dict[str, Callable[..., SimReport]] = {
    "type1": type_i_error_experiment,
    "power": power_experiment,
    "variance": variance_oracle_check,
}
