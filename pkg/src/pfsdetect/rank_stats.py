"""Rank-based tests: Wilcoxon rank-sum, Kruskal-Wallis and Dunn's post-hoc.

The default p-values are large-sample approximations (normal with continuity
correction, chi-square). ``exact_rank_sum_pvalue`` and ``exact_kruskal_pvalue``
count the full permutation distribution and are meant for small samples and
for checking the approximations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats as sps


class Alternative(str, Enum):
    LESS = "less"
    GREATER = "greater"
    TWO_SIDED = "two-sided"


class TestKind(str, Enum):
    WILCOXON = "WilcoxonRankSum"
    KRUSKAL = "KruskalWallis"
    DUNN = "Dunn"


class Correction(str, Enum):
    NONE = "none"
    BONFERRONI = "bonferroni"


@dataclass
class TestResult:
    test: TestKind
    statistic: float
    z: float | None
    p_value: float
    alternative: Alternative
    group_sizes: list[int]
    group_labels: list[str] = field(default_factory=list)
    correction: Correction = Correction.NONE
    raw_p: float | None = None
    degenerate: bool = False

    __test__ = False  # not a pytest class

    def to_dict(self, **extra) -> dict:
        d = asdict(self)
        d["test"] = self.test.value
        d["alternative"] = self.alternative.value
        d["correction"] = self.correction.value
        d.update(extra)
        return d


def _pooled_ranks(groups: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Mid-ranks of the pooled sample and the tie term sum(t^3 - t)."""
    pooled = np.concatenate(groups)
    ranks = sps.rankdata(pooled, method="average")
    _, counts = np.unique(pooled, return_counts=True)
    ties = float((counts.astype(float) ** 3 - counts).sum())
    return ranks, ties


def _as_groups(groups) -> list[np.ndarray]:
    out = [np.asarray(g, dtype=float).ravel() for g in groups]
    for g in out:
        if len(g) == 0:
            raise ValueError("every group needs at least one observation")
        if not np.isfinite(g).all():
            raise ValueError("observations must be finite (drop undefined values first)")
    return out


def wilcoxon_rank_sum(
    a: Sequence[float],
    b: Sequence[float],
    alternative: Alternative | str = Alternative.LESS,
    labels: Sequence[str] = ("a", "b"),
) -> TestResult:
    """Two-sample rank-sum (Mann-Whitney) test of ``a`` against ``b``.

    ``statistic`` is U for group ``a``. ``z`` is the continuity-corrected
    normal deviate; it is negative when ``a`` tends to be smaller than ``b``.
    ``alternative="less"`` tests whether ``a`` is stochastically smaller.
    """
    alternative = Alternative(alternative)
    a, b = _as_groups([a, b])
    n, m = len(a), len(b)
    big_n = n + m
    ranks, ties = _pooled_ranks([a, b])
    u = float(ranks[:n].sum() - n * (n + 1) / 2)
    mu = n * m / 2
    var = n * m / 12 * ((big_n + 1) - ties / (big_n * (big_n - 1))) if big_n > 1 else 0.0
    common = dict(
        test=TestKind.WILCOXON,
        statistic=u,
        alternative=alternative,
        group_sizes=[n, m],
        group_labels=list(labels),
    )
    if var <= 0:
        return TestResult(z=0.0, p_value=1.0, degenerate=True, **common)
    sd = math.sqrt(var)
    if alternative is Alternative.LESS:
        z = (u - mu + 0.5) / sd
        p = sps.norm.cdf(z)
    elif alternative is Alternative.GREATER:
        z = (u - mu - 0.5) / sd
        p = sps.norm.sf(z)
    else:
        dev = max(abs(u - mu) - 0.5, 0.0)
        z = math.copysign(dev / sd, u - mu) if dev > 0 else 0.0
        p = min(1.0, 2 * sps.norm.sf(dev / sd))
    return TestResult(z=float(z), p_value=float(p), **common)


def kruskal_wallis(groups: Sequence[Sequence[float]], labels: Sequence[str] | None = None) -> TestResult:
    """Kruskal-Wallis H with tie correction; p from chi-square on k-1 df."""
    groups = _as_groups(groups)
    k = len(groups)
    if k < 2:
        raise ValueError("Kruskal-Wallis needs at least two groups")
    sizes = [len(g) for g in groups]
    labels = list(labels) if labels is not None else [str(i) for i in range(k)]
    big_n = sum(sizes)
    ranks, ties = _pooled_ranks(groups)
    common = dict(
        test=TestKind.KRUSKAL,
        z=None,
        alternative=Alternative.TWO_SIDED,
        group_sizes=sizes,
        group_labels=labels,
    )
    tie_factor = 1 - ties / (big_n**3 - big_n) if big_n > 1 else 0.0
    if tie_factor <= 0:
        return TestResult(statistic=0.0, p_value=1.0, degenerate=True, **common)
    bounds = np.cumsum([0, *sizes])
    sq = sum(ranks[lo:hi].sum() ** 2 / (hi - lo) for lo, hi in zip(bounds[:-1], bounds[1:]))
    h = (12 / (big_n * (big_n + 1)) * sq - 3 * (big_n + 1)) / tie_factor
    h = max(float(h), 0.0)
    return TestResult(statistic=h, p_value=float(sps.chi2.sf(h, k - 1)), **common)


def bonferroni(p: float, n_comparisons: int) -> float:
    return min(1.0, p * n_comparisons)


def dunn_posthoc(
    groups: Sequence[Sequence[float]],
    labels: Sequence[str] | None = None,
    correction: Correction | str = Correction.BONFERRONI,
) -> list[TestResult]:
    """Pairwise Dunn z tests on pooled mid-ranks, two-sided, one result per pair.

    Pairs come in (0,1), (0,2), ..., (1,2), ... order. ``z`` is positive when
    the first group of the pair has the larger mean rank.
    """
    correction = Correction(correction)
    groups = _as_groups(groups)
    k = len(groups)
    if k < 2:
        raise ValueError("Dunn's test needs at least two groups")
    labels = list(labels) if labels is not None else [str(i) for i in range(k)]
    sizes = [len(g) for g in groups]
    big_n = sum(sizes)
    ranks, ties = _pooled_ranks(groups)
    bounds = np.cumsum([0, *sizes])
    mean_rank = [ranks[lo:hi].mean() for lo, hi in zip(bounds[:-1], bounds[1:])]
    scale = big_n * (big_n + 1) / 12 - (ties / (12 * (big_n - 1)) if big_n > 1 else 0.0)
    n_pairs = k * (k - 1) // 2
    out = []
    for i, j in combinations(range(k), 2):
        var = scale * (1 / sizes[i] + 1 / sizes[j])
        if var <= 0:
            z, raw, degenerate = 0.0, 1.0, True
        else:
            z = (mean_rank[i] - mean_rank[j]) / math.sqrt(var)
            raw, degenerate = float(min(1.0, 2 * sps.norm.sf(abs(z)))), False
        adj = bonferroni(raw, n_pairs) if correction is Correction.BONFERRONI else raw
        out.append(
            TestResult(
                test=TestKind.DUNN,
                statistic=float(z),
                z=float(z),
                p_value=adj,
                alternative=Alternative.TWO_SIDED,
                group_sizes=[sizes[i], sizes[j]],
                group_labels=[labels[i], labels[j]],
                correction=correction,
                raw_p=raw,
                degenerate=degenerate,
            )
        )
    return out


# ------------------------------------------------------------------ exact permutation


def _doubled_ranks(groups: Sequence[np.ndarray]) -> np.ndarray:
    # mid-ranks are multiples of 1/2, so 2*rank is an exact integer
    pooled = np.concatenate(groups)
    return np.rint(2 * sps.rankdata(pooled, method="average")).astype(np.int64)


def _subset_sum_counts(weights: np.ndarray, size: int) -> np.ndarray:
    """counts[s] = number of ``size``-subsets of ``weights`` summing to s."""
    total = int(weights.sum())
    table = np.zeros((size + 1, total + 1))
    table[0, 0] = 1.0
    for w in weights:
        w = int(w)
        # iterate subset size downward so each weight is used at most once
        for k in range(min(size, len(weights)), 0, -1):
            table[k, w:] += table[k - 1, : total + 1 - w]
    return table[size]


def exact_rank_sum_pvalue(
    a: Sequence[float], b: Sequence[float], alternative: Alternative | str = Alternative.LESS
) -> float:
    """Permutation p-value of the rank-sum of ``a`` (mid-ranks under ties)."""
    alternative = Alternative(alternative)
    a, b = _as_groups([a, b])
    n = len(a)
    ranks2 = _doubled_ranks([a, b])
    observed = int(ranks2[:n].sum())
    counts = _subset_sum_counts(ranks2, n)
    total = counts.sum()
    sums = np.arange(len(counts))
    if alternative is Alternative.LESS:
        return float(counts[sums <= observed].sum() / total)
    if alternative is Alternative.GREATER:
        return float(counts[sums >= observed].sum() / total)
    centre = n * int(ranks2.sum()) / len(ranks2)
    dev = abs(observed - centre)
    return float(counts[np.abs(sums - centre) >= dev - 1e-9].sum() / total)


def _kruskal_h_counts(weights: np.ndarray, sizes: Sequence[int], scale: int, tie_factor: float):
    """H value and permutation count for every reachable rank-sum vector.

    ``weights`` are the pooled ranks times ``scale`` (integers). Counts are
    built with a dynamic programme over ranks, so cost grows with group sizes
    and rank-sum ranges instead of the multinomial coefficient.
    """
    k = len(sizes)
    big_n = int(sum(sizes))
    # axes: count assigned to groups 0..k-2, then rank-sum of groups 0..k-2
    free = k - 1
    desc = np.sort(weights)[::-1]
    max_sum = [int(desc[: sizes[g]].sum()) for g in range(free)]
    shape = [sizes[g] + 1 for g in range(free)] + [s + 1 for s in max_sum]
    table = np.zeros(shape)
    table[(0,) * (2 * free)] = 1.0
    count_grid = np.indices([sizes[g] + 1 for g in range(free)]).sum(axis=0)
    for step, w in enumerate(weights):
        w = int(w)
        # rank goes to the last group if it still has room
        room = (step - count_grid >= 0) & (step - count_grid < sizes[-1])
        new = table * room.reshape(room.shape + (1,) * free)
        for g in range(free):
            dst = [slice(None)] * (2 * free)
            src = [slice(None)] * (2 * free)
            dst[g], src[g] = slice(1, None), slice(None, -1)
            if w:
                dst[free + g], src[free + g] = slice(w, None), slice(None, -w)
            new[tuple(dst)] += table[tuple(src)]
        table = new

    counts = table[tuple(sizes[:free])]
    total_w = int(weights.sum())
    grids = np.indices(counts.shape)
    sq = sum(grids[g].astype(float) ** 2 / sizes[g] for g in range(free))
    sq = sq + (total_w - grids.sum(axis=0)).astype(float) ** 2 / sizes[-1]
    sq /= scale**2
    h = (12 / (big_n * (big_n + 1)) * sq - 3 * (big_n + 1)) / tie_factor
    mask = counts > 0
    return h[mask], counts[mask]


def exact_kruskal_pvalue(groups: Sequence[Sequence[float]]) -> float:
    """Permutation p-value P(H >= H_obs) over all assignments of the pooled ranks.

    Practical for a few groups of up to about ten observations each.
    """
    groups = _as_groups(groups)
    sizes = [len(g) for g in groups]
    if len(sizes) < 2:
        raise ValueError("Kruskal-Wallis needs at least two groups")
    big_n = sum(sizes)
    observed = kruskal_wallis(groups)
    if observed.degenerate:
        return 1.0
    ranks2 = _doubled_ranks(groups)
    scale = 2 if (ranks2 % 2).any() else 1
    _, tie_counts = np.unique(np.concatenate(groups), return_counts=True)
    tie_factor = 1 - float((tie_counts.astype(float) ** 3 - tie_counts).sum()) / (big_n**3 - big_n)
    h, counts = _kruskal_h_counts(ranks2 // (2 // scale), sizes, scale, tie_factor)
    return float(counts[h >= observed.statistic - 1e-9].sum() / counts.sum())


def exact_kruskal_distribution(sizes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Null distribution of H for untied data: distinct H values and P(H >= h)."""
    sizes = [int(s) for s in sizes]
    big_n = sum(sizes)
    h, counts = _kruskal_h_counts(np.arange(1, big_n + 1), sizes, 1, 1.0)
    h = np.round(h, 9)
    values, inverse = np.unique(h, return_inverse=True)
    mass = np.bincount(inverse, weights=counts) / counts.sum()
    tail = np.cumsum(mass[::-1])[::-1]
    return values, np.minimum(tail, 1.0)


def exact_rank_sum_distribution(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Null distribution of U for untied data: U values 0..nm and P(U <= u)."""
    counts = _subset_sum_counts(np.arange(1, n + m + 1), n)
    offset = n * (n + 1) // 2
    counts = counts[offset : offset + n * m + 1]
    return np.arange(n * m + 1), np.cumsum(counts) / counts.sum()
