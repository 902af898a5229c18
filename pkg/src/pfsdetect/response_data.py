"""Ingestion of scored and raw multiple-choice response files.

Everything downstream works on a :class:`ResponseMatrix`: an N x J array of
0/1 scores plus respondent ids, source labels (``human`` or ``agent:<name>``)
and item ids.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

HUMAN = "human"
AGENT_PREFIX = "agent:"


class ValidationError(ValueError):
    """Raised when input data violates a format or content rule."""


def parse_source(label: str) -> str:
    """Normalise a source label; raises ValidationError on anything else."""
    label = label.strip()
    if label == HUMAN:
        return HUMAN
    if label.startswith(AGENT_PREFIX) and label[len(AGENT_PREFIX):].strip():
        return AGENT_PREFIX + label[len(AGENT_PREFIX):].strip()
    raise ValidationError(f"invalid source label {label!r} (expected 'human' or 'agent:<name>')")


def is_human(source: str) -> bool:
    return source == HUMAN


def agent_name(source: str) -> str | None:
    if source.startswith(AGENT_PREFIX):
        return source[len(AGENT_PREFIX):]
    return None


@dataclass(frozen=True)
class ResponseMatrix:
    """Dichotomously scored responses of N respondents to J items."""

    respondent_ids: tuple[str, ...]
    sources: tuple[str, ...]
    item_ids: tuple[str, ...]
    cells: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.int8, copy=True)
        if cells.ndim != 2:
            raise ValidationError("cells must be a 2-D array")
        n, j = cells.shape
        if n < 1 or j < 1:
            raise ValidationError("a response matrix needs at least one respondent and one item")
        if len(self.respondent_ids) != n or len(self.sources) != n:
            raise ValidationError("respondent ids/sources do not match the number of rows")
        if len(self.item_ids) != j:
            raise ValidationError("item ids do not match the number of columns")
        if not np.isin(cells, (0, 1)).all():
            raise ValidationError("cells must be 0 or 1")
        _check_unique(self.respondent_ids, "respondent")
        _check_unique(self.item_ids, "item")
        cells.setflags(write=False)
        object.__setattr__(self, "respondent_ids", tuple(self.respondent_ids))
        object.__setattr__(self, "sources", tuple(parse_source(s) for s in self.sources))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "cells", cells)

    @property
    def n_respondents(self) -> int:
        return self.cells.shape[0]

    @property
    def n_items(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def take_rows(self, rows: Sequence[int]) -> "ResponseMatrix":
        rows = list(rows)
        return ResponseMatrix(
            tuple(self.respondent_ids[i] for i in rows),
            tuple(self.sources[i] for i in rows),
            self.item_ids,
            self.cells[rows, :],
        )

    def take_items(self, cols: Sequence[int]) -> "ResponseMatrix":
        cols = list(cols)
        return ResponseMatrix(
            self.respondent_ids,
            self.sources,
            tuple(self.item_ids[j] for j in cols),
            self.cells[:, cols],
        )

    def rows_where(self, predicate) -> "ResponseMatrix":
        """Sub-matrix of the rows whose source label satisfies ``predicate``."""
        return self.take_rows([i for i, s in enumerate(self.sources) if predicate(s)])

    def relabel(self, source: str, id_prefix: str | None = None) -> "ResponseMatrix":
        """Copy with every row given ``source`` (and optionally re-prefixed ids)."""
        ids = self.respondent_ids
        if id_prefix is not None:
            ids = tuple(f"{id_prefix}{rid}" for rid in ids)
        return ResponseMatrix(ids, (source,) * self.n_respondents, self.item_ids, self.cells)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["respondent_id", "source", *self.item_ids])
        for rid, src, row in zip(self.respondent_ids, self.sources, self.cells):
            writer.writerow([rid, src, *(str(int(v)) for v in row)])
        return buf.getvalue()


def _check_unique(ids: Iterable[str], what: str) -> None:
    seen: set[str] = set()
    for pos, key in enumerate(ids):
        if key in seen:
            raise ValidationError(f"duplicate {what} id {key!r} (position {pos + 1})")
        seen.add(key)


def concat(*matrices: ResponseMatrix) -> ResponseMatrix:
    """Stack matrices row-wise; all must share the same item ids in the same order."""
    if not matrices:
        raise ValueError("nothing to concatenate")
    items = matrices[0].item_ids
    for m in matrices[1:]:
        if m.item_ids != items:
            raise ValidationError("cannot concatenate matrices with different item sets")
    return ResponseMatrix(
        tuple(rid for m in matrices for rid in m.respondent_ids),
        tuple(s for m in matrices for s in m.sources),
        items,
        np.vstack([m.cells for m in matrices]),
    )


# --------------------------------------------------------------------------- CSV input


def _read_table(path: str | Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        return [row for row in csv.reader(fh) if row]


def _split_header(rows: list[list[str]], path) -> list[str]:
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "respondent_id" or header[1] != "source":
        raise ValidationError(
            f"{path}: malformed header; expected 'respondent_id,source,<item_1>,...'"
        )
    items = header[2:]
    if any(not it for it in items):
        raise ValidationError(f"{path}: empty item id in header")
    _check_unique(items, "item")
    return items


def parse_scored_csv(path: str | Path) -> ResponseMatrix:
    """Read a scored-matrix CSV (``respondent_id,source,<items...>`` with 0/1 cells)."""
    rows = _read_table(path)
    items = _split_header(rows, path)
    ids, sources, cells = [], [], []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(items) + 2:
            raise ValidationError(
                f"{path}: row {lineno} has {len(row)} fields, expected {len(items) + 2}"
            )
        rid = row[0].strip()
        if not rid:
            raise ValidationError(f"{path}: row {lineno} has an empty respondent id")
        if rid in seen:
            raise ValidationError(f"{path}: duplicate respondent {rid!r} at row {lineno}")
        seen.add(rid)
        try:
            src = parse_source(row[1])
        except ValidationError as exc:
            raise ValidationError(f"{path}: row {lineno}: {exc}") from None
        scored = []
        for item, raw in zip(items, row[2:]):
            val = raw.strip()
            if val not in ("0", "1"):
                raise ValidationError(
                    f"{path}: row {lineno}, column {item!r}: cell value {val!r} is not 0 or 1"
                )
            scored.append(int(val))
        ids.append(rid)
        sources.append(src)
        cells.append(scored)
    if not ids:
        raise ValidationError(f"{path}: no respondent rows")
    return ResponseMatrix(tuple(ids), tuple(sources), tuple(items), np.array(cells))


@dataclass(frozen=True)
class RawResponses:
    """Unscored responses; ``answers[n][j]`` is the chosen option label or ``""``."""

    respondent_ids: tuple[str, ...]
    sources: tuple[str, ...]
    item_ids: tuple[str, ...]
    answers: tuple[tuple[str, ...], ...]


def parse_raw_csv(path: str | Path) -> RawResponses:
    rows = _read_table(path)
    items = _split_header(rows, path)
    ids, sources, answers = [], [], []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        # trailing blank answers may be dropped by some writers
        if len(row) > len(items) + 2:
            raise ValidationError(f"{path}: row {lineno} has too many fields")
        row = row + [""] * (len(items) + 2 - len(row))
        rid = row[0].strip()
        if not rid:
            raise ValidationError(f"{path}: row {lineno} has an empty respondent id")
        if rid in seen:
            raise ValidationError(f"{path}: duplicate respondent {rid!r} at row {lineno}")
        seen.add(rid)
        try:
            src = parse_source(row[1])
        except ValidationError as exc:
            raise ValidationError(f"{path}: row {lineno}: {exc}") from None
        ids.append(rid)
        sources.append(src)
        answers.append(tuple(a.strip() for a in row[2:]))
    return RawResponses(tuple(ids), tuple(sources), tuple(items), tuple(answers))


def parse_answer_key(path: str | Path) -> dict[str, str]:
    """Read an ``item_id,correct_option`` CSV into a dict."""
    rows = _read_table(path)
    if not rows or [h.strip() for h in rows[0]] != ["item_id", "correct_option"]:
        raise ValidationError(f"{path}: malformed header; expected 'item_id,correct_option'")
    key: dict[str, str] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValidationError(f"{path}: row {lineno} must have exactly 2 fields")
        item, option = row[0].strip(), row[1].strip()
        if item in key:
            raise ValidationError(f"{path}: duplicate item {item!r} at row {lineno}")
        if not option:
            raise ValidationError(f"{path}: row {lineno}: empty correct option for {item!r}")
        key[item] = option
    return key


def score(raw: RawResponses, key: Mapping[str, str]) -> ResponseMatrix:
    """Score raw answers against ``key``.

    A cell is 1 only when the chosen option equals the keyed option; blanks
    and any other label (including labels outside the item's choice set)
    score 0.
    """
    missing = [item for item in raw.item_ids if item not in key]
    if missing:
        raise ValidationError(f"answer key has no entry for item(s): {', '.join(missing)}")
    correct = [key[item] for item in raw.item_ids]
    cells = np.array(
        [[1 if ans and ans == k else 0 for ans, k in zip(row, correct)] for row in raw.answers],
        dtype=np.int8,
    ).reshape(len(raw.answers), len(correct))
    return ResponseMatrix(raw.respondent_ids, raw.sources, raw.item_ids, cells)


def filter_degenerate_items(m: ResponseMatrix) -> tuple[ResponseMatrix, list[str]]:
    """Drop items answered correctly by nobody or by everybody.

    Returns the reduced matrix and the dropped item ids, in column order.
    """
    colsum = m.cells.sum(axis=0)
    keep = (colsum > 0) & (colsum < m.n_respondents)
    dropped = [item for item, k in zip(m.item_ids, keep) if not k]
    if not keep.any():
        raise ValidationError("no informative items: every item has proportion-correct 0 or 1")
    if not dropped:
        return m, []
    return m.take_items(np.flatnonzero(keep)), dropped


def read_reference_difficulty(path: str | Path) -> dict[str, float]:
    """Read an ``item_id,p`` CSV of externally estimated proportions correct."""
    rows = _read_table(path)
    if not rows or [h.strip() for h in rows[0]] != ["item_id", "p"]:
        raise ValidationError(f"{path}: malformed header; expected 'item_id,p'")
    out: dict[str, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValidationError(f"{path}: row {lineno} must have exactly 2 fields")
        try:
            p = float(row[1])
        except ValueError:
            raise ValidationError(f"{path}: row {lineno}: {row[1]!r} is not a number") from None
        if not 0.0 < p < 1.0:
            raise ValidationError(f"{path}: row {lineno}: p must lie strictly inside (0, 1)")
        out[row[0].strip()] = p
    return out
