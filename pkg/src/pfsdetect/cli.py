"""Command-line front end.

Exit codes: 0 success, 2 invalid input or config, 3 I/O failure,
4 a design left a comparison group without valid respondents.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

from . import __version__
from .experiment import (
    ExperimentConfig,
    ExperimentDesign,
    ExperimentReport,
    density_rows,
    report_header,
    run_multi_agent,
    run_sensitivity,
    run_two_group,
    summarize_sensitivity,
    thread_count,
)
from .pfs import Measure, compute_all, flag_aberrant, item_stats, item_stats_from_reference, records_to_csv
from .rank_stats import Alternative
from .response_data import (
    ValidationError,
    filter_degenerate_items,
    parse_answer_key,
    parse_raw_csv,
    parse_scored_csv,
    read_reference_difficulty,
    score,
)
from .simgen import SimConfig, simulate

log = logging.getLogger("pfsdetect")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_UNTESTABLE = 4


class OutputError(Exception):
    """Output could not be written."""


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _level_tag(level: float | None) -> str:
    return "all" if level is None else f"{level:g}"


def _density_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", "group", "bin_left", "bin_right", "count"])
    for r in rows:
        writer.writerow([r["measure"], r["group"], f"{r['bin_left']:.6g}", f"{r['bin_right']:.6g}", r["count"]])
    return buf.getvalue()


# ------------------------------------------------------------------ subcommands


def cmd_score(args) -> int:
    raw = parse_raw_csv(args.raw)
    key = parse_answer_key(args.key)
    write_atomic(args.out, score(raw, key).to_csv())
    return EXIT_OK


def _log_dropped(matrix, dropped: list[str]) -> None:
    colsum = dict(zip(matrix.item_ids, matrix.cells.sum(axis=0)))
    for item in dropped:
        p = colsum[item] / matrix.n_respondents
        log.warning("dropped degenerate item %s (proportion correct %g)", item, p)


def cmd_pfs(args) -> int:
    matrix = parse_scored_csv(args.matrix)
    filtered, dropped = filter_degenerate_items(matrix)
    _log_dropped(matrix, dropped)
    if args.reference_difficulty:
        stats = item_stats_from_reference(filtered, read_reference_difficulty(args.reference_difficulty))
    else:
        stats = item_stats(filtered)
    write_atomic(args.out, records_to_csv(compute_all(filtered, stats)))
    return EXIT_OK


def cmd_flag(args) -> int:
    matrix = parse_scored_csv(args.matrix)
    filtered, dropped = filter_degenerate_items(matrix)
    _log_dropped(matrix, dropped)
    records = compute_all(filtered)
    measure = Measure.parse(args.measure)
    by_id = {rec.respondent_id: rec for rec in records}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["respondent_id", "source", "measure", "value"])
    for rid in flag_aberrant(records, measure, args.threshold):
        rec = by_id[rid]
        writer.writerow([rid, rec.source, measure.value, f"{rec.value(measure):.6g}"])
    if args.out:
        write_atomic(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = SimConfig.from_json(args.config) if args.config else SimConfig()
    seed = args.seed if args.seed is not None else config.seed
    if seed is None:
        raise ValidationError("simulate needs a seed (--seed or the config's 'seed' field)")
    write_atomic(args.out, simulate(config, seed).to_csv())
    return EXIT_OK


def _load_experiment(args) -> tuple[ExperimentConfig, tuple[Measure, ...], Alternative, list[int]]:
    config = ExperimentConfig.from_json(args.config)
    if args.measures:
        config.measures = [m for m in args.measures.split(",") if m.strip()]
    if args.alternative:
        config.alternative = args.alternative
    if args.seed is not None:
        config.seeds = [args.seed]
    config.validate()
    if not config.seeds:
        raise ValidationError("no seed given (--seed or the config's 'seeds' list)")
    return config, config.measure_list(), Alternative(config.alternative), list(config.seeds)


def _write_pipeline(
    out_dir: Path,
    pipeline: str,
    config: ExperimentConfig,
    level: float | None,
    measures: Sequence[Measure],
    runs: list[tuple[int, ExperimentReport]],
) -> None:
    """One report JSON per level plus one density CSV per measure (first seed)."""
    tag = _level_tag(level)
    tests, descriptives, extra = [], [], []
    for seed, rep in runs:
        for t in rep.tests:
            tests.append({"seed": seed, **t.to_dict(rep.instrument)})
        for d in rep.descriptives():
            descriptives.append({"seed": seed, "comparison": rep.tests[0].comparison if rep.tests else "", **d})
        extra.append({"seed": seed, "design": rep.design, "n_rows": rep.n_rows, "dropped_items": rep.dropped_items})
    doc = {**report_header(pipeline, config, level), "runs": extra, "tests": tests, "descriptives": descriptives}
    write_atomic(out_dir / f"{pipeline}_all_{tag}.json", _dump_json(doc))

    first_seed = runs[0][0] if runs else None
    first = [rep for seed, rep in runs if seed == first_seed]
    for measure in measures:
        rows = []
        for rep in first:
            groups = {g: pm[measure] for g, pm in rep.values.items()}
            if len(first) > 1 and rep.tests:
                groups = {f"{rep.tests[0].comparison}/{g}": v for g, v in groups.items()}
            rows.extend(density_rows(measure, groups))
        write_atomic(out_dir / f"{pipeline}_{measure.slug}_{tag}.csv", _density_csv(rows))


def _design_for(level, n_agent, n_pool, measures, seed, alternative) -> ExperimentDesign:
    if level is None:
        return ExperimentDesign(None, n_agent, n_pool, measures, seed, alternative)
    return ExperimentDesign.at_level(level, n_agent, measures=measures, seed=seed, alternative=alternative)


def cmd_compare(args) -> int:
    config, measures, alternative, seeds = _load_experiment(args)
    reference = config.reference()
    out_dir = Path(args.out)
    untestable = False
    for level in config.levels:
        runs = []
        for seed in seeds:
            humans, agent_groups = config.load_inputs(seed)
            for agents in agent_groups:
                design = _design_for(level, agents.n_respondents, humans.n_respondents, measures, seed, alternative)
                rep = run_two_group(
                    design, humans, agents, instrument=config.instrument,
                    difficulty=config.difficulty, reference=reference,
                )
                untestable |= rep.untestable
                runs.append((seed, rep))
        _write_pipeline(out_dir, "compare", config, level, measures, runs)
    return EXIT_UNTESTABLE if untestable else EXIT_OK


def cmd_multigroup(args) -> int:
    config, measures, _, seeds = _load_experiment(args)
    reference = config.reference()
    out_dir = Path(args.out)
    untestable = False
    for level in config.levels:
        runs = []
        for seed in seeds:
            humans, agent_groups = config.load_inputs(seed)
            if len(agent_groups) < 2:
                raise ValidationError("multigroup needs at least two agent groups (distinct agent labels)")
            rep = run_multi_agent(
                humans, agent_groups, level, seed=seed, measures=measures,
                instrument=config.instrument, difficulty=config.difficulty, reference=reference,
            )
            untestable |= rep.untestable
            runs.append((seed, rep))
        _write_pipeline(out_dir, "multigroup", config, level, measures, runs)
    return EXIT_UNTESTABLE if untestable else EXIT_OK


def cmd_sensitivity(args) -> int:
    config, measures, alternative, seeds = _load_experiment(args)
    if any(level is None for level in config.levels):
        raise ValidationError("sensitivity levels must be numbers")
    if config.reference_difficulty is not None:
        raise ValidationError("sensitivity always re-estimates difficulties; drop 'reference_difficulty'")
    out_dir = Path(args.out)
    untestable = False
    all_reports: list[ExperimentReport] = []
    per_level: dict[float, list[tuple[int, ExperimentReport]]] = {lv: [] for lv in config.levels}
    for seed in seeds:
        humans, agent_groups = config.load_inputs(seed)
        for agents in agent_groups:
            base = ExperimentDesign.at_level(
                config.levels[0], agents.n_respondents, measures=measures, seed=seed, alternative=alternative
            )
            reports = run_sensitivity(
                base, humans, agents, config.levels, [seed],
                instrument=config.instrument, difficulty=config.difficulty,
            )
            for level, rep in zip(config.levels, reports):
                per_level[level].append((seed, rep))
                untestable |= rep.untestable
            all_reports.extend(reports)
    for level, runs in per_level.items():
        _write_pipeline(out_dir, "sensitivity", config, level, measures, runs)
    summary = {
        "tool_version": __version__,
        "pipeline": "sensitivity",
        "config": config.to_dict(),
        "levels": _summaries_by_comparison(all_reports),
    }
    write_atomic(out_dir / "sensitivity_summary.json", _dump_json(summary))
    return EXIT_UNTESTABLE if untestable else EXIT_OK


def _summaries_by_comparison(reports: list[ExperimentReport]) -> list[dict]:
    by_cmp: dict[str, list[ExperimentReport]] = {}
    for rep in reports:
        by_cmp.setdefault(rep.tests[0].comparison if rep.tests else "", []).append(rep)
    out = []
    for comparison, reps in by_cmp.items():
        for entry in summarize_sensitivity(reps):
            out.append({"comparison": comparison, **_finite(entry)})
    return out


def _finite(obj):
    if isinstance(obj, float):
        return obj if obj == obj and abs(obj) != float("inf") else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfsdetect",
        description="Person-fit statistics (G, G*, U3, ZU3) and human-vs-agent detection pipelines.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--quiet", action="store_true", help="only report errors")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = sub.add_parser("score", help="score raw answers against an answer key")
    p.add_argument("raw", help="raw-response CSV")
    p.add_argument("key", help="answer-key CSV (item_id,correct_option)")
    p.add_argument("--out", required=True, help="scored-matrix CSV to write")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pfs", help="compute G, G*, U3, ZU3 per respondent")
    p.add_argument("matrix", help="scored-matrix CSV")
    p.add_argument("--out", required=True, help="PFS CSV to write")
    p.add_argument("--reference-difficulty", help="item_id,p CSV overriding estimated difficulties")
    common(p)
    p.set_defaults(func=cmd_pfs)

    p = sub.add_parser("flag", help="list respondents whose statistic exceeds a threshold")
    p.add_argument("matrix", help="scored-matrix CSV")
    p.add_argument("--measure", default="zu3", help="g, gstar, u3 or zu3 (default zu3)")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", help="CSV to write (default: standard output)")
    common(p)
    p.set_defaults(func=cmd_flag)

    p = sub.add_parser("simulate", help="write a synthetic scored matrix")
    p.add_argument("--config", help="simulation config JSON (defaults: 380 humans + 20 agents, J=20)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="scored-matrix CSV to write")
    common(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (
        ("compare", cmd_compare, "one-sided rank-sum test, humans vs each agent"),
        ("multigroup", cmd_multigroup, "Kruskal-Wallis + Dunn across agent groups"),
        ("sensitivity", cmd_sensitivity, "human-vs-agent tests across pollution levels"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's seeds")
        p.add_argument("--measures", help="comma list of g,gstar,u3,zu3")
        p.add_argument("--alternative", choices=["less", "greater"])
        common(p)
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        thread_count()
        code = args.func(args)
    except (ValidationError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (OutputError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    if code == EXIT_UNTESTABLE:
        log.error("at least one measure was untestable (a group had no valid respondents)")
    return code


if __name__ == "__main__":
    sys.exit(main())
