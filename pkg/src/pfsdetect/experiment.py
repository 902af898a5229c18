"""Detection pipelines: pollution mixing, human-vs-agent comparison,
multi-agent comparison and the pollution sensitivity sweep.

Person-fit statistics are always computed on the mixed matrix, so item
difficulties move with the pollution level. Pass ``difficulty="human"`` to
estimate them from the human rows only.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .pfs import ALL_MEASURES, ItemStats, Measure, compute_all, item_stats, item_stats_from_reference
from .rank_stats import Alternative, TestResult, dunn_posthoc, kruskal_wallis, wilcoxon_rank_sum
from .response_data import (
    HUMAN,
    ResponseMatrix,
    ValidationError,
    concat,
    filter_degenerate_items,
    is_human,
    parse_scored_csv,
    read_reference_difficulty,
)
from .simgen import SimConfig, make_bank, rng_for, sample_population

MIX_STREAM = 7


def human_count(n_agent: int, level: float) -> int:
    """Humans needed so that ``n_agent`` agents make up ``level`` of the mix."""
    if not 0 < level < 1:
        raise ValueError("pollution level must lie strictly inside (0, 1)")
    return int(round(n_agent * (1 - level) / level))


@dataclass(frozen=True)
class ExperimentDesign:
    pollution_level: float | None
    n_agent: int
    n_human: int
    measures: tuple[Measure, ...] = ALL_MEASURES
    seed: int = 0
    alternative: Alternative = Alternative.LESS

    def __post_init__(self) -> None:
        object.__setattr__(self, "measures", tuple(Measure(m) for m in self.measures))
        object.__setattr__(self, "alternative", Alternative(self.alternative))
        if self.alternative is Alternative.TWO_SIDED:
            raise ValueError("designs test a one-sided alternative (less or greater)")
        if self.n_agent < 1 or self.n_human < 1:
            raise ValueError("a design needs at least one agent and one human")
        level = self.pollution_level
        if level is not None:
            if not 0 < level < 1:
                raise ValueError("pollution level must lie strictly inside (0, 1)")
            if abs(self.n_human - self.n_agent * (1 - level) / level) > 1:
                raise ValueError(
                    f"{self.n_agent} agents + {self.n_human} humans is not a {level:g} pollution level"
                )

    @classmethod
    def at_level(cls, level: float, n_agent: int, **kw) -> "ExperimentDesign":
        return cls(pollution_level=level, n_agent=n_agent, n_human=human_count(n_agent, level), **kw)

    def to_dict(self) -> dict:
        return {
            "pollution_level": self.pollution_level,
            "n_agent": self.n_agent,
            "n_human": self.n_human,
            "measures": [m.value for m in self.measures],
            "seed": self.seed,
            "alternative": self.alternative.value,
        }


def mix_pollution(
    humans: ResponseMatrix, agents: ResponseMatrix, level: float | None, seed: int
) -> ResponseMatrix:
    """Keep every agent row and add enough sampled humans to reach ``level``.

    Humans are drawn without replacement and keep their original relative
    order; when the target equals the pool size the pool is used as-is.
    ``level=None`` means "use every human". Humans come first in the result.
    """
    n_human = humans.n_respondents if level is None else human_count(agents.n_respondents, level)
    if n_human > humans.n_respondents:
        raise ValidationError(
            f"pollution level {level:g} needs {n_human} humans but only "
            f"{humans.n_respondents} are available"
        )
    if n_human < humans.n_respondents:
        picked = rng_for(seed, MIX_STREAM).choice(humans.n_respondents, size=n_human, replace=False)
        humans = humans.take_rows(np.sort(picked))
    return concat(humans, agents)


# ------------------------------------------------------------------- reports


@dataclass
class MeasureTest:
    measure: Measure
    result: TestResult | None
    group_labels: list[str]
    group_sizes: list[int]
    comparison: str = ""
    exploratory: bool = False

    @property
    def testable(self) -> bool:
        return self.result is not None

    def to_dict(self, instrument: str) -> dict:
        if self.result is None:
            return {
                "test": None,
                "measure": self.measure.value,
                "instrument": instrument,
                "statistic": None,
                "z": None,
                "p_value": None,
                "alternative": None,
                "group_sizes": self.group_sizes,
                "group_labels": self.group_labels,
                "correction": None,
                "comparison": self.comparison,
                "untestable": True,
            }
        r = self.result
        d = {
            "test": r.test.value,
            "measure": self.measure.value,
            "instrument": instrument,
            "statistic": _num(r.statistic),
            "z": _num(r.z),
            "p_value": _num(r.p_value),
            "alternative": r.alternative.value,
            "group_sizes": r.group_sizes,
            "group_labels": r.group_labels,
            "correction": r.correction.value,
            "comparison": self.comparison,
        }
        if r.raw_p is not None:
            d["raw_p_value"] = _num(r.raw_p)
            d["exploratory"] = self.exploratory
        if r.degenerate:
            d["degenerate"] = True
        return d


@dataclass
class ExperimentReport:
    pipeline: str
    design: dict
    instrument: str
    tests: list[MeasureTest]
    values: dict[str, dict[Measure, np.ndarray]] = field(repr=False)
    dropped_items: list[str] = field(default_factory=list)
    n_rows: int = 0

    @property
    def untestable(self) -> bool:
        return any(not t.testable for t in self.tests)

    def tests_for(self, measure: Measure | str) -> list[MeasureTest]:
        measure = Measure(measure)
        return [t for t in self.tests if t.measure is measure]

    def p_value(self, measure: Measure | str) -> float | None:
        """p of the first (main) test for ``measure``; None when untestable."""
        tests = self.tests_for(measure)
        if not tests or tests[0].result is None:
            return None
        return tests[0].result.p_value

    def descriptives(self) -> list[dict]:
        out = []
        for group, per_measure in self.values.items():
            for measure, v in per_measure.items():
                out.append({"group": group, "measure": measure.value, **describe(v)})
        return out

    def density(self, measure: Measure, bins: str | int = "fd") -> list[dict]:
        groups = {g: pm[measure] for g, pm in self.values.items() if measure in pm}
        return density_rows(measure, groups, bins)

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "design": self.design,
            "instrument": self.instrument,
            "n_rows": self.n_rows,
            "dropped_items": self.dropped_items,
            "tests": [t.to_dict(self.instrument) for t in self.tests],
            "descriptives": self.descriptives(),
        }


def _num(v: float | None) -> float | None:
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def describe(values: np.ndarray) -> dict:
    v = np.asarray(values, dtype=float)
    n = len(v)
    return {
        "n_valid": n,
        "mean": float(v.mean()) if n else None,
        "sd": float(v.std(ddof=1)) if n > 1 else None,
        "median": float(np.median(v)) if n else None,
    }


def density_rows(measure: Measure, groups: dict[str, np.ndarray], bins: str | int = "fd") -> list[dict]:
    """Histogram counts per group on shared bin edges (Freedman-Diaconis by default)."""
    pooled = np.concatenate([np.asarray(v, dtype=float) for v in groups.values()] or [np.empty(0)])
    if len(pooled) == 0:
        return []
    edges = np.histogram_bin_edges(pooled, bins=bins)
    rows = []
    for group, v in groups.items():
        counts, _ = np.histogram(np.asarray(v, dtype=float), bins=edges)
        for left, right, cnt in zip(edges[:-1], edges[1:], counts):
            rows.append(
                {
                    "measure": measure.value,
                    "group": group,
                    "bin_left": float(left),
                    "bin_right": float(right),
                    "count": int(cnt),
                }
            )
    return rows


# ------------------------------------------------------------------ pipelines


def _analyze(
    mixed: ResponseMatrix,
    difficulty: str,
    reference: dict[str, float] | None,
) -> tuple[ResponseMatrix, list, list[str]]:
    """Filter degenerate items, estimate difficulties, compute PFS records."""
    m, dropped = filter_degenerate_items(mixed)
    if reference is not None:
        stats = item_stats_from_reference(m, reference)
    elif difficulty == "human":
        human_rows = m.rows_where(is_human)
        colsum = human_rows.cells.sum(axis=0)
        keep = (colsum > 0) & (colsum < human_rows.n_respondents)
        dropped += [it for it, k in zip(m.item_ids, keep) if not k]
        if not keep.any():
            raise ValidationError("no informative items among the human rows")
        m = m.take_items(np.flatnonzero(keep))
        stats = item_stats(m.rows_where(is_human))
    elif difficulty == "mixed":
        stats = item_stats(m)
    else:
        raise ValueError("difficulty must be 'mixed' or 'human'")
    return m, compute_all(m, stats), dropped


def _measure_values(records, group_of, measures) -> dict[str, dict[Measure, np.ndarray]]:
    out: dict[str, dict[Measure, list]] = {}
    for rec in records:
        group = group_of(rec)
        if group is None:
            continue
        per = out.setdefault(group, {m: [] for m in measures})
        if rec.valid:
            for m in measures:
                per[m].append(rec.value(m))
    return {g: {m: np.asarray(v, dtype=float) for m, v in per.items()} for g, per in out.items()}


def _agent_label(agents: ResponseMatrix) -> str:
    labels = sorted(set(agents.sources))
    return labels[0] if len(labels) == 1 else "agent"


def run_two_group(
    design: ExperimentDesign,
    humans: ResponseMatrix,
    agents: ResponseMatrix,
    *,
    instrument: str = "sim",
    difficulty: str = "mixed",
    reference: dict[str, float] | None = None,
) -> ExperimentReport:
    """Mix, score and run a one-sided rank-sum test (humans vs agents) per measure."""
    if agents.n_respondents != design.n_agent:
        raise ValueError("design.n_agent does not match the agent matrix")
    mixed = mix_pollution(humans, agents, design.pollution_level, design.seed)
    agent_rows = set(agents.respondent_ids)
    label = _agent_label(agents)
    m, records, dropped = _analyze(mixed, difficulty, reference)
    values = _measure_values(
        records, lambda r: label if r.respondent_id in agent_rows else HUMAN, design.measures
    )
    values = {g: values.get(g, {ms: np.empty(0) for ms in design.measures}) for g in (HUMAN, label)}
    tests = []
    for measure in design.measures:
        h, a = values[HUMAN][measure], values[label][measure]
        sizes, labels = [len(h), len(a)], [HUMAN, label]
        if len(h) == 0 or len(a) == 0:
            tests.append(MeasureTest(measure, None, labels, sizes, comparison=label))
            continue
        res = wilcoxon_rank_sum(h, a, design.alternative, labels=labels)
        tests.append(MeasureTest(measure, res, labels, sizes, comparison=label))
    return ExperimentReport(
        pipeline="compare",
        design=design.to_dict(),
        instrument=instrument,
        tests=tests,
        values=values,
        dropped_items=dropped,
        n_rows=m.n_respondents,
    )


def posthoc_mode(kw_p: float) -> str | None:
    """'confirmatory' below 0.05, 'exploratory' in [0.05, 0.10), otherwise None."""
    if kw_p < 0.05:
        return "confirmatory"
    if kw_p < 0.10:
        return "exploratory"
    return None


def run_multi_agent(
    humans: ResponseMatrix,
    agent_groups: Sequence[ResponseMatrix],
    level: float | None,
    *,
    seed: int = 0,
    measures: Sequence[Measure] = ALL_MEASURES,
    instrument: str = "sim",
    difficulty: str = "mixed",
    reference: dict[str, float] | None = None,
) -> ExperimentReport:
    """Kruskal-Wallis across agent groups per measure, with Dunn-Bonferroni follow-up.

    All agent groups plus the sampled humans form one matrix. Each group is
    labelled by its (single) source label.
    """
    if len(agent_groups) < 2:
        raise ValueError("need at least two agent groups")
    measures = tuple(Measure(m) for m in measures)
    labels = [_agent_label(g) for g in agent_groups]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"agent groups need distinct source labels, got {labels}")
    agents = concat(*agent_groups)
    mixed = mix_pollution(humans, agents, level, seed)
    owner = {rid: lab for g, lab in zip(agent_groups, labels) for rid in g.respondent_ids}
    m, records, dropped = _analyze(mixed, difficulty, reference)
    values = _measure_values(records, lambda r: owner.get(r.respondent_id, HUMAN), measures)
    values = {g: values.get(g, {ms: np.empty(0) for ms in measures}) for g in [HUMAN, *labels]}
    tests: list[MeasureTest] = []
    for measure in measures:
        groups = [values[lab][measure] for lab in labels]
        sizes = [len(g) for g in groups]
        if min(sizes) == 0:
            tests.append(MeasureTest(measure, None, labels, sizes, comparison="agents"))
            continue
        kw = kruskal_wallis(groups, labels=labels)
        tests.append(MeasureTest(measure, kw, labels, sizes, comparison="agents"))
        mode = posthoc_mode(kw.p_value)
        if mode is not None:
            for res in dunn_posthoc(groups, labels=labels):
                tests.append(
                    MeasureTest(
                        measure,
                        res,
                        res.group_labels,
                        res.group_sizes,
                        comparison="agents",
                        exploratory=mode == "exploratory",
                    )
                )
    n_agent = agents.n_respondents
    design = {
        "pollution_level": level,
        "n_agent": n_agent,
        "n_human": m.n_respondents - n_agent,
        "measures": [ms.value for ms in measures],
        "seed": seed,
        "agent_groups": labels,
    }
    return ExperimentReport(
        pipeline="multigroup",
        design=design,
        instrument=instrument,
        tests=tests,
        values=values,
        dropped_items=dropped,
        n_rows=m.n_respondents,
    )


def thread_count() -> int:
    """Worker bound from PERFIT_THREADS (0 or unset = automatic)."""
    raw = os.environ.get("PERFIT_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"PERFIT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError("PERFIT_THREADS must be >= 0")
    return n or min(8, os.cpu_count() or 1)


def run_sensitivity(
    base: ExperimentDesign,
    humans: ResponseMatrix,
    agents: ResponseMatrix,
    levels: Sequence[float],
    seeds: Sequence[int],
    *,
    instrument: str = "sim",
    difficulty: str = "mixed",
    threads: int | None = None,
) -> list[ExperimentReport]:
    """``run_two_group`` for every (level, seed), level-major order.

    The agent rows stay fixed; only the human subset is re-sampled.
    """
    if not levels:
        raise ValueError("levels must be non-empty")
    jobs = []
    for level in levels:
        for seed in seeds:
            design = ExperimentDesign.at_level(
                level, agents.n_respondents, measures=base.measures, seed=seed,
                alternative=base.alternative,
            )
            jobs.append(design)

    def run(design: ExperimentDesign) -> ExperimentReport:
        rep = run_two_group(design, humans, agents, instrument=instrument, difficulty=difficulty)
        rep.pipeline = "sensitivity"
        return rep

    threads = threads or thread_count()
    if threads <= 1 or len(jobs) == 1:
        return [run(d) for d in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def summarize_sensitivity(reports: Sequence[ExperimentReport]) -> list[dict]:
    """Per level: median p and median -log10 p per measure, and mean/SD per group.

    Group mean and SD pool the valid values of every seed at that level.
    """
    by_level: dict[Any, list[ExperimentReport]] = {}
    for rep in reports:
        by_level.setdefault(rep.design["pollution_level"], []).append(rep)
    out = []
    for level, reps in by_level.items():
        measures = [Measure(m) for m in reps[0].design["measures"]]
        median_p, median_nlp = {}, {}
        for ms in measures:
            ps = [rep.p_value(ms) for rep in reps]
            ps = [p for p in ps if p is not None]
            median_p[ms.value] = float(np.median(ps)) if ps else None
            median_nlp[ms.value] = (
                float(np.median([_neg_log10(p) for p in ps])) if ps else None
            )
        groups: dict[str, dict] = {}
        for group in reps[0].values:
            groups[group] = {}
            for ms in measures:
                pooled = np.concatenate([rep.values[group][ms] for rep in reps])
                d = describe(pooled)
                groups[group][ms.value] = {"mean": d["mean"], "sd": d["sd"], "n_valid": d["n_valid"]}
        out.append(
            {
                "pollution_level": level,
                "n_human": reps[0].design["n_human"],
                "n_agent": reps[0].design["n_agent"],
                "seeds": [rep.design["seed"] for rep in reps],
                "median_p": median_p,
                "median_neg_log10_p": median_nlp,
                "groups": groups,
            }
        )
    return out


def _neg_log10(p: float) -> float:
    return math.inf if p <= 0 else -math.log10(p)


# ---------------------------------------------------------------- config files


@dataclass
class ExperimentConfig:
    """The experiment-config JSON.

    ``humans`` and each entry of ``agents`` is either a path to a scored-matrix
    CSV or an inline simulation config. A simulation config without ``seed``
    is re-simulated from each run seed. When ``agents`` is omitted and
    ``humans`` is a simulation config, its aberrant rows are the agents.
    """

    humans: str | dict
    agents: list = field(default_factory=list)
    levels: list = field(default_factory=lambda: [0.05])
    measures: list = field(default_factory=lambda: [m.value for m in ALL_MEASURES])
    seeds: list = field(default_factory=list)
    alternative: str = "less"
    instrument: str = "sim"
    difficulty: str = "mixed"
    reference_difficulty: str | None = None
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: experiment config must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown experiment config field(s): {', '.join(sorted(unknown))}")
        if "humans" not in data:
            raise ValidationError("experiment config needs a 'humans' entry")
        cfg = cls(**data, base_dir=Path(base_dir))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.measure_list()
            Alternative(self.alternative)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if Alternative(self.alternative) is Alternative.TWO_SIDED:
            raise ValidationError("alternative must be 'less' or 'greater'")
        if not isinstance(self.levels, list) or not self.levels:
            raise ValidationError("levels must be a non-empty list")
        for lv in self.levels:
            if lv is not None and not (isinstance(lv, (int, float)) and 0 < lv < 1):
                raise ValidationError(f"pollution level {lv!r} must lie strictly inside (0, 1)")
        if not all(isinstance(s, int) for s in self.seeds):
            raise ValidationError("seeds must be integers")
        if self.difficulty not in ("mixed", "human"):
            raise ValidationError("difficulty must be 'mixed' or 'human'")
        for entry in [self.humans, *self.agents]:
            if isinstance(entry, dict):
                SimConfig.from_dict(entry)
            elif not isinstance(entry, str):
                raise ValidationError("humans/agents entries must be paths or simulation configs")

    def measure_list(self) -> tuple[Measure, ...]:
        if not isinstance(self.measures, list):
            raise ValidationError("measures must be a list")
        return tuple(Measure.parse(m) for m in self.measures)

    def to_dict(self) -> dict:
        return {
            "humans": self.humans,
            "agents": self.agents,
            "levels": self.levels,
            "measures": self.measures,
            "seeds": self.seeds,
            "alternative": self.alternative,
            "instrument": self.instrument,
            "difficulty": self.difficulty,
            "reference_difficulty": self.reference_difficulty,
        }

    def reference(self) -> dict[str, float] | None:
        if self.reference_difficulty is None:
            return None
        return read_reference_difficulty(self.base_dir / self.reference_difficulty)

    def load_inputs(self, run_seed: int) -> tuple[ResponseMatrix, list[ResponseMatrix]]:
        """Human pool and agent groups (one matrix per agent source label)."""
        bank = None
        if isinstance(self.humans, dict):
            hcfg = SimConfig.from_dict(self.humans)
            hseed = hcfg.seed if hcfg.seed is not None else run_seed
            bank = make_bank(hcfg, hseed)
            n_inline = 0 if self.agents else hcfg.n_aberrant
            if hcfg.n_human == 0:
                raise ValidationError("the human simulation has n_human = 0")
            pop = sample_population(hcfg.n_human, n_inline, bank, hcfg, hseed)
            humans = pop.rows_where(is_human)
            inline_agents = pop.rows_where(lambda s: not is_human(s)) if n_inline else None
        else:
            pool = parse_scored_csv(self.base_dir / self.humans)
            if not any(is_human(src) for src in pool.sources):
                raise ValidationError("the human input contains no human rows")
            humans = pool.rows_where(is_human)
            inline_agents = None

        agent_mats = []
        for gi, entry in enumerate(self.agents):
            if isinstance(entry, dict):
                acfg = SimConfig.from_dict(entry)
                if acfg.J != humans.n_items:
                    raise ValidationError("agent simulation J differs from the human instrument")
                aseed = acfg.seed if acfg.seed is not None else run_seed
                abank = bank if bank is not None else make_bank(acfg, aseed)
                agent_mats.append(sample_population(0, acfg.n_aberrant, abank, acfg, aseed, group=gi))
            else:
                mat = parse_scored_csv(self.base_dir / entry)
                if all(is_human(src) for src in mat.sources):
                    raise ValidationError(f"{entry}: no agent rows")
                agent_mats.append(_align_items(mat.rows_where(lambda s: not is_human(s)), humans))
        if not self.agents:
            if inline_agents is None:
                raise ValidationError("no agent rows: give 'agents' or a simulation with n_aberrant > 0")
            agent_mats.append(inline_agents)

        groups: dict[str, list[ResponseMatrix]] = {}
        for mat in agent_mats:
            for label in sorted(set(mat.sources)):
                groups.setdefault(label, []).append(mat.rows_where(lambda s, lab=label: s == label))
        return humans, [concat(*parts) for _, parts in sorted(groups.items())]


def _align_items(mat: ResponseMatrix, like: ResponseMatrix) -> ResponseMatrix:
    if mat.item_ids == like.item_ids:
        return mat
    if set(mat.item_ids) != set(like.item_ids):
        raise ValidationError("agent and human matrices cover different items")
    pos = {it: j for j, it in enumerate(mat.item_ids)}
    return mat.take_items([pos[it] for it in like.item_ids])


def report_header(pipeline: str, config: ExperimentConfig, level: float | None) -> dict:
    return {
        "tool_version": __version__,
        "pipeline": pipeline,
        "pollution_level": level,
        "config": config.to_dict(),
    }
