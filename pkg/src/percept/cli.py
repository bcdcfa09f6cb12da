"""Command-line front end: ingest -> filter -> sample -> test, plus simulate.

Exit codes: 0 ok, 1 I/O error, 2 validation or config error, 3 internal
invariant breach (a sample that fails verification).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__
from .errors import ConfigError, DuplicateAnnotationId, InsufficientData, PerceptError, SchemaError
from .filters import apply_filter_pipeline, reports_to_json, reports_to_text
from .hypotheses import HYPOTHESES, results_to_json, results_to_table, run_battery
from .sampler import read_paired_sample, sample_pairs, verify_sample, write_paired_sample
from .simulation import EXPERIMENTS, load_config
from .store import DIMENSIONS, parse_annotations, summary_statistics, write_annotations

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2, 3


def _digest(path: str | Path | None) -> str | None:
    if path is None or not Path(path).exists():
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(command: str, inputs: dict, outputs: dict, seed=None, config=None, started=None) -> dict:
    return {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "input_digests": {k: _digest(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: str(v) for k, v in outputs.items() if v is not None},
        "seed": seed,
        "config_digest": _digest(config),
        "tool_version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }


def _write_manifest(out: Path, manifest: dict) -> Path:
    path = out.with_name(out.name + ".manifest.json")
    _write_json(path, manifest)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("PERCEPT_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def cmd_ingest(args) -> int:
    started = _now()
    ds = parse_annotations(args.annotations, args.format, strict=not args.lenient)
    ingest = ds.provenance[0]
    out = Path(args.out)
    write_annotations(ds, out)
    summary = summary_statistics(ds)
    summary_path = out.with_name(out.name + ".summary.json")
    summary_path.write_text(summary.to_json() + "\n", encoding="utf-8")
    _write_manifest(out, _manifest("ingest", {"annotations": args.annotations}, {"dataset": out, "summary": summary_path}, started=started))
    print(summary.to_text())
    if ingest["rejected"]:
        print(f"warning: {len(ingest['rejected'])} row(s) rejected", file=sys.stderr)
        for rej in ingest["rejected"][:20]:
            print(f"  row {rej['row']}: {rej['error']}", file=sys.stderr)
    if ingest["duplicates_dropped"]:
        print(f"warning: {ingest['duplicates_dropped']} duplicate (rater, utterance) annotation(s) dropped", file=sys.stderr)
    return EXIT_OK


def cmd_filter(args) -> int:
    started = _now()
    ds = parse_annotations(args.input)
    filtered, reports = apply_filter_pipeline(ds, min_annotations=args.min_annotations)
    out = Path(args.out)
    write_annotations(filtered, out)
    report_path = out.with_name(out.name + ".filter.json")
    report_path.write_text(reports_to_json(reports) + "\n", encoding="utf-8")
    _write_manifest(out, _manifest("filter", {"in": args.input}, {"dataset": out, "report": report_path}, started=started))
    print(reports_to_text(reports))
    return EXIT_OK


def cmd_sample(args) -> int:
    started = _now()
    ds = parse_annotations(args.input)
    ps = sample_pairs(ds, args.seed)
    check = verify_sample(ps, ds)
    if not check.passed:
        print("error: sample failed verification (internal invariant breach):", file=sys.stderr)
        for v in check.violations[:20]:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INTERNAL
    out = Path(args.out)
    manifest = _manifest("sample", {"in": args.input}, {"sample": out}, seed=args.seed, started=started)
    write_paired_sample(ps, out, manifest=manifest)
    _write_manifest(out, manifest)
    print(f"sampled {len(ps.assignments)} utterances, {2 * len(ps.assignments)} annotations, "
          f"{len({r.rater_id for r in ps.records()})} raters (seed {args.seed})")
    return EXIT_OK


def cmd_test(args) -> int:
    started = _now()
    ds = parse_annotations(args.data)
    ps = read_paired_sample(args.sample, ds)
    hyps = list(HYPOTHESES) if args.hypothesis == "all" else [args.hypothesis]
    dims = list(DIMENSIONS) if args.dimension == "all" else [args.dimension]
    results = run_battery(ds, ps, hypotheses=hyps, dimensions=dims, unpaired_scope=args.unpaired_scope, threads=_threads(args))
    print(results_to_table(results))
    if args.out:
        out = Path(args.out)
        out.write_text(results_to_json(results) + "\n", encoding="utf-8")
        _write_manifest(out, _manifest("test", {"data": args.data, "sample": args.sample}, {"results": out}, started=started))
    single_cell = args.hypothesis != "all" or args.dimension != "all"
    if single_cell and any(r.error for r in results):
        return EXIT_INVALID
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    workers = _threads(args)
    if args.experiment == "variance":
        report = EXPERIMENTS["variance"](cfg)
    else:
        report = EXPERIMENTS[args.experiment](cfg, workers=workers)
    out = Path(args.out)
    doc = report.to_dict()
    doc["manifest"] = _manifest("simulate", {"config": args.config}, {"report": out}, seed=cfg.seed, config=args.config, started=started)
    _write_json(out, doc)
    out.with_suffix(".txt").write_text(report.to_text() + "\n", encoding="utf-8")
    if args.tstats_csv:
        report.write_tstats_csv(args.tstats_csv)
    print(report.to_text())
    return EXIT_OK


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("percept") / "configs" / f"{name}.json"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="percept", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None, help="worker count (default: $PERCEPT_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and validate an annotation file")
    p.add_argument("--annotations", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true", help="skip invalid rows instead of failing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("filter", help="apply the quality-filter pipeline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-annotations", type=int, default=5)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sample", help="resample one male and one female annotation per utterance")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("test", help="run the hypothesis battery or a single cell")
    p.add_argument("--data", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--hypothesis", choices=("all",) + HYPOTHESES, default="all")
    p.add_argument("--dimension", type=_dimension_arg, default="all")
    p.add_argument("--unpaired-scope", choices=("full", "sampled"), default="full")
    p.add_argument("--out", default=None, help="write full results as JSON")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="run a synthetic Monte Carlo experiment")
    p.add_argument("--config", required=True, help="JSON or key=value file; 'default' uses the bundled config")
    p.add_argument("--experiment", choices=tuple(EXPERIMENTS), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tstats-csv", default=None, help="optional per-replication tstat dump")
    p.set_defaults(func=cmd_simulate)
    return parser


def _dimension_arg(value: str) -> str:
    key = value.strip().lower()
    if key == "all":
        return "all"
    aliases = {"v": "valence", "a": "arousal", "d": "dominance"}
    key = aliases.get(key, key)
    if key not in DIMENSIONS:
        raise argparse.ArgumentTypeError(f"dimension must be V, A, D or all, got {value!r}")
    return key


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "config", None) == "default":
        args.config = str(bundled_config(args.experiment))
    try:
        return args.func(args)
    except (SchemaError, DuplicateAnnotationId, ConfigError, InsufficientData) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (PerceptError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
