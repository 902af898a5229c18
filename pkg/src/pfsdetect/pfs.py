"""Nonparametric person-fit statistics: G, normed G*, U3 and standardized ZU3.

Items are ordered easiest-first by proportion-correct. A respondent with
number-correct ``r`` who answers exactly the ``r`` easiest items fits
perfectly (all statistics at their minimum); answering exactly the ``r``
hardest items is the worst possible fit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .response_data import ResponseMatrix, ValidationError


class Measure(str, Enum):
    G = "G"
    GSTAR = "Gstar"
    U3 = "U3"
    ZU3 = "ZU3"

    @classmethod
    def parse(cls, text: str) -> "Measure":
        key = text.strip().lower().replace("*", "star").replace("_", "")
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown measure {text!r}; choose from g, gstar, u3, zu3")

    @property
    def slug(self) -> str:
        return self.value.lower()


ALL_MEASURES = (Measure.G, Measure.GSTAR, Measure.U3, Measure.ZU3)


@dataclass(frozen=True)
class ItemStats:
    p: np.ndarray
    c: np.ndarray
    order: np.ndarray

    @property
    def n_items(self) -> int:
        return len(self.p)

    @classmethod
    def from_p(cls, p: Sequence[float]) -> "ItemStats":
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("p must be a non-empty vector")
        if not ((p > 0) & (p < 1)).all():
            raise ValueError("proportions correct must lie strictly inside (0, 1)")
        # stable sort on -p keeps the original column order among ties
        order = np.argsort(-p, kind="stable")
        return cls(p=p, c=np.log(p / (1 - p)), order=order)

    @property
    def c_sorted(self) -> np.ndarray:
        """Logits in easiest-first order."""
        return self.c[self.order]


def item_stats(m: ResponseMatrix) -> ItemStats:
    """Proportion-correct, logits and easiest-first order from the analyzed matrix."""
    return ItemStats.from_p(m.cells.sum(axis=0) / m.n_respondents)


def item_stats_from_reference(m: ResponseMatrix, reference: Mapping[str, float]) -> ItemStats:
    missing = [item for item in m.item_ids if item not in reference]
    if missing:
        raise ValidationError(f"reference difficulties missing for item(s): {', '.join(missing)}")
    return ItemStats.from_p([reference[item] for item in m.item_ids])


# ------------------------------------------------------------------ single-pattern ops
# These take ``x`` already reindexed easiest-first (``x = row[stats.order]``).


def guttman_errors(x: Sequence[int], stats: ItemStats | None = None) -> int:
    """Number of pairs (easier item wrong, harder item right)."""
    x = np.asarray(x, dtype=np.int64)
    zeros_before = np.cumsum(1 - x) - (1 - x)
    return int((x * zeros_before).sum())


def g_star(g: int, r: int, n_items: int) -> float | None:
    if not 0 <= r <= n_items:
        raise ValueError("r must lie in [0, J]")
    if r == 0 or r == n_items:
        return None
    return g / (r * (n_items - r))


def _masked_sums(c_sorted: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return np.where(masks, c_sorted, 0.0).sum(axis=-1)


def _u3_parts(x: np.ndarray, c_sorted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Numerator W_max - W and span W_max - W_min for easiest-first rows ``x``.

    Items shared by both sides of a difference are cancelled before summing,
    and every sum runs over a full-length masked vector, so the Guttman
    pattern gives exactly 0 and the reversed pattern exactly span.
    """
    x = np.atleast_2d(x).astype(bool)
    n_items = x.shape[1]
    r = x.sum(axis=1)[:, None]
    k = np.arange(n_items)
    top = k < r
    missed = _masked_sums(c_sorted, top & ~x)
    extra = _masked_sums(c_sorted, ~top & x)
    m = np.minimum(r, n_items - r)
    span = _masked_sums(c_sorted, k < m) - _masked_sums(c_sorted, k >= n_items - m)
    return missed - extra, span


def u3(x: Sequence[int], stats: ItemStats) -> float | None:
    x = np.asarray(x, dtype=np.int64)
    r = int(x.sum())
    if r == 0 or r == len(x):
        return None
    num, span = _u3_parts(x, stats.c_sorted)
    if not span[0] > 0:
        return None
    return float(num[0] / span[0])


@dataclass(frozen=True)
class NullMoments:
    """Mean and variance of U3 over all patterns sharing the total score ``r``."""

    r: int
    mean: float
    variance: float


def null_moments(stats: ItemStats, r: int) -> NullMoments:
    """Exact conditional moments of U3 given number-correct ``r``.

    Under the uniform null over the C(J, r) patterns, the weight sum W is a
    sample of size r drawn without replacement from the J logits, so
    E(W) = r * mean(c) and Var(W) = r (J - r) / (J - 1) * var(c) with the
    population variance of c.
    """
    n_items = stats.n_items
    if not 0 < r < n_items:
        raise ValueError(f"total score r={r} must satisfy 0 < r < J={n_items}")
    c = stats.c_sorted
    w_max = c[:r].sum()
    span = w_max - c[n_items - r :].sum()
    e_w = r * c.mean()
    var_w = r * (n_items - r) / (n_items - 1) * c.var()
    if span <= 0:
        return NullMoments(r, math.nan, 0.0)
    return NullMoments(r, float((w_max - e_w) / span), float(var_w / span**2))


def zu3(u3_value: float | None, moments: NullMoments) -> float | None:
    if u3_value is None or not moments.variance > 0:
        return None
    return (u3_value - moments.mean) / math.sqrt(moments.variance)


# --------------------------------------------------------------------------- batch


@dataclass(frozen=True)
class PfsRecord:
    respondent_id: str
    source: str
    r: int
    g: int
    g_star: float | None
    u3: float | None
    zu3: float | None
    valid: bool

    def value(self, measure: Measure) -> float | None:
        return {
            Measure.G: self.g,
            Measure.GSTAR: self.g_star,
            Measure.U3: self.u3,
            Measure.ZU3: self.zu3,
        }[Measure(measure)]


def pfs_arrays(cells: np.ndarray, stats: ItemStats) -> dict[str, np.ndarray]:
    """Vectorised statistics for every row of a 0/1 matrix (NaN = undefined)."""
    x = np.asarray(cells, dtype=np.int64)[:, stats.order]
    n_items = x.shape[1]
    r = x.sum(axis=1)
    wrong = 1 - x
    zeros_before = np.cumsum(wrong, axis=1) - wrong
    g = (x * zeros_before).sum(axis=1)

    interior = (r > 0) & (r < n_items)
    denom = r * (n_items - r)
    gstar = np.full(len(r), np.nan)
    gstar[interior] = g[interior] / denom[interior]

    num, span = _u3_parts(x, stats.c_sorted)
    ok = interior & (span > 0)
    u = np.full(len(r), np.nan)
    u[ok] = num[ok] / span[ok]

    mean = np.full(n_items + 1, np.nan)
    sd = np.full(n_items + 1, np.nan)
    for k in range(1, n_items):
        mom = null_moments(stats, k)
        if mom.variance > 0:
            mean[k] = mom.mean
            sd[k] = math.sqrt(mom.variance)
    z = (u - mean[r]) / sd[r]
    return {"r": r, "g": g, "g_star": gstar, "u3": u, "zu3": z}


def _opt(v: float) -> float | None:
    return None if math.isnan(v) else float(v)


def compute_all(m: ResponseMatrix, stats: ItemStats | None = None) -> list[PfsRecord]:
    """One record per respondent, in row order.

    ``stats`` defaults to difficulties estimated from ``m`` itself; pass an
    explicit :class:`ItemStats` to score against reference difficulties.
    """
    if stats is None:
        stats = item_stats(m)
    if stats.n_items != m.n_items:
        raise ValueError("item statistics do not match the matrix width")
    arr = pfs_arrays(m.cells, stats)
    records = []
    for i, (rid, src) in enumerate(zip(m.respondent_ids, m.sources)):
        gs, uu, zz = _opt(arr["g_star"][i]), _opt(arr["u3"][i]), _opt(arr["zu3"][i])
        records.append(
            PfsRecord(
                respondent_id=rid,
                source=src,
                r=int(arr["r"][i]),
                g=int(arr["g"][i]),
                g_star=gs,
                u3=uu,
                zu3=zz,
                valid=gs is not None and uu is not None and zz is not None,
            )
        )
    return records


def flag_aberrant(records: Sequence[PfsRecord], measure: Measure | str, threshold: float) -> list[str]:
    """Ids of valid records whose ``measure`` strictly exceeds ``threshold``, highest first."""
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    measure = Measure(measure) if not isinstance(measure, Measure) else measure
    hits = [
        (rec.value(measure), pos, rec.respondent_id)
        for pos, rec in enumerate(records)
        if rec.valid and rec.value(measure) > threshold
    ]
    # ties keep input order
    hits.sort(key=lambda h: (-h[0], h[1]))
    return [rid for _, _, rid in hits]


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.6g}"


def records_to_csv(records: Sequence[PfsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["respondent_id", "source", "r", "G", "G_star", "U3", "ZU3", "valid"])
    for rec in records:
        writer.writerow(
            [
                rec.respondent_id,
                rec.source,
                rec.r,
                rec.g,
                _fmt(rec.g_star),
                _fmt(rec.u3),
                _fmt(rec.zu3),
                "true" if rec.valid else "false",
            ]
        )
    return buf.getvalue()
