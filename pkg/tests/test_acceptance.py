"""Acceptance gate.

Each test checks one criterion at its stated tolerance and records a
PASS/FAIL line; the lines are printed as they happen and again in the
terminal summary (see ``conftest.pytest_terminal_summary``).
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy import stats as sps

from pfsdetect.cli import main
from pfsdetect.experiment import ExperimentDesign, human_count, mix_pollution, run_two_group
from pfsdetect.pfs import ALL_MEASURES, ItemStats, pfs_arrays
from pfsdetect.rank_stats import (
    exact_kruskal_distribution,
    exact_kruskal_pvalue,
    exact_rank_sum_distribution,
    exact_rank_sum_pvalue,
    kruskal_wallis,
    wilcoxon_rank_sum,
)
from pfsdetect.simgen import SimConfig, conditional_null_matrix, make_bank, sample_population

from conftest import brute_guttman, brute_u3, patterns_with_total

RESULTS: list[str] = []
N_SEEDS = 20


def record(tag: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    RESULTS.append(line)
    print(line)


def all_patterns(n_items: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n_items)), dtype=np.int8)


def random_p(rng, n_items):
    return rng.uniform(0.05, 0.95, n_items)


# ---------------------------------------------------------------- 1


def test_c1_exhaustive_pfs_oracle():
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    g_bad = u_err = gs_err = 0.0
    checked = 0
    for n_items in range(3, 11):
        x_all = all_patterns(n_items)
        for _ in range(5):
            st = ItemStats.from_p(random_p(rng, n_items))
            arr = pfs_arrays(x_all, st)
            c_sorted = list(st.c_sorted)
            for row, x in enumerate(x_all):
                xs = [int(v) for v in x[st.order]]
                r = sum(xs)
                g = brute_guttman(xs)
                g_bad += arr["g"][row] != g
                if 0 < r < n_items:
                    gs_err = max(gs_err, abs(arr["g_star"][row] - g / (r * (n_items - r))))
                    u_err = max(u_err, abs(arr["u3"][row] - brute_u3(xs, c_sorted)))
                else:
                    assert math.isnan(arr["g_star"][row]) and math.isnan(arr["u3"][row])
                checked += 1
    elapsed = time.perf_counter() - start
    ok = g_bad == 0 and u_err <= 1e-12 and gs_err <= 1e-12 and elapsed < 30
    record(
        "C1 exhaustive PFS oracle",
        ok,
        f"{checked} patterns, G mismatches={int(g_bad)}, max|dU3|={u_err:.2e}, "
        f"max|dG*|={gs_err:.2e}, {elapsed:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------- 2


def test_c2_pattern_extremes():
    rng = np.random.default_rng(7)
    failures = []
    cases = 0
    for n_items in range(2, 21):
        st = ItemStats.from_p(random_p(rng, n_items))
        for r in range(1, n_items):
            guttman = np.zeros(n_items, dtype=np.int8)
            guttman[st.order[:r]] = 1
            reverse = np.zeros(n_items, dtype=np.int8)
            reverse[st.order[n_items - r:]] = 1
            arr = pfs_arrays(np.vstack([guttman, reverse]), st)
            got = [(arr["g"][i], arr["g_star"][i], arr["u3"][i]) for i in range(2)]
            want = [(0, 0.0, 0.0), (r * (n_items - r), 1.0, 1.0)]
            if got != want:
                failures.append((n_items, r, got))
            cases += 1
    ok = not failures
    record("C2 Guttman extremes", ok, f"{cases} (J, r) cases, exact mismatches={len(failures)}")
    assert ok, failures[:5]


# ---------------------------------------------------------------- 3


def test_c3_zu3_calibration():
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    worst_mean = worst_var = 0.0
    for n_items in range(2, 13):
        for _ in range(3):
            st = ItemStats.from_p(random_p(rng, n_items))
            for r in range(1, n_items):
                z = pfs_arrays(patterns_with_total(n_items, r), st)["zu3"]
                worst_mean = max(worst_mean, abs(z.mean()))
                worst_var = max(worst_var, abs(z.var() - 1))
    exact_ok = worst_mean <= 1e-10 and worst_var <= 1e-10

    st20 = ItemStats.from_p(random_p(rng, 20))
    mc = []
    for r in range(1, 20):
        z = pfs_arrays(conditional_null_matrix(20, r, 10_000, seed=1000 + r), st20)["zu3"]
        mc.append((r, z.mean(), z.std(ddof=1)))
    mc_ok = all(abs(m) <= 0.05 and 0.95 <= s <= 1.05 for _, m, s in mc)
    elapsed = time.perf_counter() - start
    ok = exact_ok and mc_ok and elapsed < 60
    worst_mc_mean = max(abs(m) for _, m, _ in mc)
    sds = [s for _, _, s in mc]
    record(
        "C3 ZU3 calibration",
        ok,
        f"exact J<=12: max|mean|={worst_mean:.1e}, max|var-1|={worst_var:.1e}; "
        f"J=20 MC (r=1..19, 10k each): max|mean|={worst_mc_mean:.3f}, "
        f"sd in [{min(sds):.3f}, {max(sds):.3f}]; {elapsed:.1f}s",
    )
    assert ok, mc


# ---------------------------------------------------------------- 4


def ranks_with_sum(n, big_n, target):
    """n distinct ranks from 1..big_n summing to ``target`` (greedy from the top)."""
    ranks = list(range(1, n + 1))
    extra = target - sum(ranks)
    for i in range(n - 1, -1, -1):
        room = big_n - (n - 1 - i) - ranks[i]
        step = min(room, extra)
        ranks[i] += step
        extra -= step
    assert extra == 0
    return ranks


def test_c4_hand_cases():
    w = wilcoxon_rank_sum([1, 2], [3, 4], "less")
    exact = exact_rank_sum_pvalue([1, 2], [3, 4], "less")
    kw = kruskal_wallis([[1, 2], [3, 4], [5, 6]])
    ok = (
        abs(exact - 1 / 6) < 1e-12
        and abs(w.p_value - sps.norm.cdf(-1.5 / math.sqrt(20 / 12))) < 1e-12
        and abs(kw.statistic - 32 / 7) < 1e-12
        and abs(exact_kruskal_pvalue([[1, 2], [3, 4], [5, 6]]) - 6 / 90) < 1e-12
    )
    record(
        "C4a rank-test hand cases",
        ok,
        f"exact one-sided p={exact:.6f} (1/6), approx p={w.p_value:.4f}, H={kw.statistic:.4f}",
    )
    assert ok


def test_c4_wilcoxon_sweep():
    start = time.perf_counter()
    worst = {}
    for n, m in itertools.product(range(1, 9), repeat=2):
        u_values, cdf = exact_rank_sum_distribution(n, m)
        err = 0.0
        for u, exact in zip(u_values, cdf):
            a = ranks_with_sum(n, n + m, int(u) + n * (n + 1) // 2)
            b = sorted(set(range(1, n + m + 1)) - set(a))
            approx = wilcoxon_rank_sum(a, b, "less").p_value
            err = max(err, abs(approx - exact))
        worst[(n, m)] = err
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > 0.03}
    top = max(worst, key=worst.get)
    ok = not bad and elapsed < 60
    record(
        "C4b Wilcoxon approx vs exact (n,m<=8)",
        ok,
        f"{len(bad)}/64 size pairs exceed 0.03; worst {top} |dp|={worst[top]:.4f}; {elapsed:.1f}s",
    )
    assert ok, sorted(bad.items(), key=lambda kv: -kv[1])[:10]


def test_c4_kruskal_sweep():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {}
    for sizes in itertools.combinations_with_replacement(range(1, 9), 3):
        values, tail = exact_kruskal_distribution(sizes)
        # the implementation's p for a random assignment must be the chi-square tail of its H
        perm = rng.permutation(sum(sizes)) + 1.0
        groups = np.split(perm, np.cumsum(sizes)[:-1])
        res = kruskal_wallis(groups)
        assert abs(res.p_value - sps.chi2.sf(res.statistic, 2)) < 1e-12
        worst[sizes] = float(np.max(np.abs(sps.chi2.sf(values, 2) - tail)))
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > 0.03}
    top = max(worst, key=worst.get)
    ok = not bad and elapsed < 60
    record(
        "C4c Kruskal-Wallis approx vs exact (3 groups, sizes<=8)",
        ok,
        f"{len(bad)}/{len(worst)} size sets exceed 0.03; worst {top} |dp|={worst[top]:.4f}; "
        f"(8,8,8) |dp|={worst[(8, 8, 8)]:.4f}; {elapsed:.1f}s",
    )
    assert ok, sorted(bad.items(), key=lambda kv: -kv[1])[:10]


# ---------------------------------------------------------------- 5, 6


def default_pool(seed):
    cfg = SimConfig()
    pop = sample_population(cfg.n_human, cfg.n_aberrant, make_bank(cfg, seed), cfg, seed)
    return pop.rows_where(lambda s: s == "human"), pop.rows_where(lambda s: s != "human")


@pytest.fixture(scope="module")
def pollution_runs():
    levels = (0.05, 0.10, 0.25)
    out = {lv: [] for lv in levels}
    for seed in range(N_SEEDS):
        humans, agents = default_pool(seed)
        for lv in levels:
            design = ExperimentDesign.at_level(lv, agents.n_respondents, seed=seed)
            out[lv].append(run_two_group(design, humans, agents))
    return out


def test_c5_rq1_default_simulation(pollution_runs):
    start = time.perf_counter()
    reps = pollution_runs[0.05]
    medians = {ms.value: float(np.median([r.p_value(ms) for r in reps])) for ms in ALL_MEASURES}
    rows = {r.n_rows for r in reps}
    ok = all(p < 0.001 for p in medians.values()) and rows == {400}
    detail = ", ".join(f"{k}={v:.2e}" for k, v in medians.items())
    record("C5 RQ1 analog", ok, f"median p over {N_SEEDS} seeds: {detail} ({time.perf_counter() - start:.1f}s)")
    assert ok


def test_c6_rq3_pollution_trend(pollution_runs):
    levels = sorted(pollution_runs)
    counts = [pollution_runs[lv][0].design["n_human"] for lv in levels]
    trend = {}
    for ms in ALL_MEASURES:
        trend[ms.value] = [
            float(np.median([-math.log10(r.p_value(ms)) for r in pollution_runs[lv]])) for lv in levels
        ]
    ok = counts == [380, 180, 60] and all(
        all(a >= b for a, b in zip(v, v[1:])) for v in trend.values()
    )
    detail = "; ".join(f"{k}: " + " >= ".join(f"{x:.2f}" for x in v) for k, v in trend.items())
    record("C6 RQ3 analog", ok, f"humans {counts}; median -log10 p at 5/10/25%: {detail}")
    assert ok


# ---------------------------------------------------------------- 7


def test_c7_pollution_arithmetic():
    h_counts = [human_count(20, lv) for lv in (0.05, 0.10, 0.25)]
    sim = SimConfig(J=10)
    bank = make_bank(sim, 0)
    sizes = []
    for n_h, n_a in ((931, 45), (980, 60)):
        pop = sample_population(n_h, n_a, bank, sim, seed=1)
        humans = pop.rows_where(lambda s: s == "human")
        agents = pop.rows_where(lambda s: s != "human")
        sizes.append(mix_pollution(humans, agents, n_a / (n_h + n_a), seed=0).n_respondents)
    ok = h_counts == [380, 180, 60] and sizes == [976, 1040]
    record("C7 pollution arithmetic", ok, f"20 agents -> {h_counts} humans; mixed sizes {sizes}")
    assert ok


# ---------------------------------------------------------------- 8


def test_c8_null_self_consistency():
    n_seeds = 200
    cfg = SimConfig()
    ps = {ms.value: [] for ms in ALL_MEASURES}
    for seed in range(n_seeds):
        bank = make_bank(cfg, seed)
        humans = sample_population(380, 0, bank, cfg, seed)
        # a second, independent human sample from the same bank stands in for the agents
        twins = sample_population(20, 0, bank, cfg, seed + 1_000_000).relabel("agent:twin", "t")
        rep = run_two_group(ExperimentDesign.at_level(0.05, 20, seed=seed), humans, twins)
        for ms in ALL_MEASURES:
            ps[ms.value].append(rep.p_value(ms))
    ks = {k: float(sps.kstest(v, "uniform").statistic) for k, v in ps.items()}
    ok = all(d < 0.1 for d in ks.values())
    record(
        "C8 null self-consistency",
        ok,
        f"KS distance over {n_seeds} seeds: " + ", ".join(f"{k}={v:.3f}" for k, v in ks.items()),
    )
    assert ok


# ---------------------------------------------------------------- 9


def test_c9_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    sim = {"n_human": 380, "n_aberrant": 20}
    configs = {
        "compare": {"humans": sim, "levels": [0.05, 0.25], "seeds": [1, 2]},
        "sensitivity": {"humans": sim, "levels": [0.05, 0.1, 0.25], "seeds": [1, 2, 3]},
        "multigroup": {
            "humans": {"n_human": 200, "n_aberrant": 0},
            "agents": [
                {"n_human": 0, "n_aberrant": 20, "label": "blind"},
                {"n_human": 0, "n_aberrant": 20, "label": "rev",
                 "aberrance": {"kind": "reversed_difficulty", "params": {}}},
            ],
            "levels": [None],
            "seeds": [5],
        },
    }
    compared = 0
    mismatched = []
    for pipeline, cfg in configs.items():
        path = tmp_path / f"{pipeline}.json"
        path.write_text(json.dumps(cfg))
        for run in ("a", "b"):
            assert main([pipeline, "--config", str(path), "--out", f"{pipeline}_{run}", "--quiet"]) == 0
        first = sorted(p.name for p in (tmp_path / f"{pipeline}_a").iterdir())
        second = sorted(p.name for p in (tmp_path / f"{pipeline}_b").iterdir())
        assert first == second
        for name in first:
            compared += 1
            if (tmp_path / f"{pipeline}_a" / name).read_bytes() != (tmp_path / f"{pipeline}_b" / name).read_bytes():
                mismatched.append(name)
    for run in ("a", "b"):
        assert main(["simulate", "--seed", "11", "--out", f"sim_{run}.csv"]) == 0
    compared += 1
    if (tmp_path / "sim_a.csv").read_bytes() != (tmp_path / "sim_b.csv").read_bytes():
        mismatched.append("simulate")
    ok = not mismatched
    record("C9 determinism", ok, f"{compared} output files compared across reruns, mismatches={mismatched}")
    assert ok
