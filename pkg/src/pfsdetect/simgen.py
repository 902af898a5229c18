"""Seeded synthetic respondents.

Humans answer under a three-parameter logistic (3PL) model. Aberrant
respondents ignore item difficulty (``difficulty_blind``) or invert it
(``reversed_difficulty``). The conditional-null sampler draws a uniformly
random pattern with a fixed number-correct.

Random streams: every draw comes from numpy's PCG64 seeded by
``SeedSequence(seed, spawn_key=key)``. The item bank uses key ``(0,)``, the
i-th human ``(1, i)`` and the i-th respondent of aberrant group ``g``
``(2, g, i)``, so rows can be generated in any order (or in parallel) with
identical results.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .pfs import ItemStats
from .response_data import AGENT_PREFIX, HUMAN, ResponseMatrix, ValidationError

RNG_NAME = "numpy.PCG64"
RNG_VERSION = 1

BANK_STREAM = 0
HUMAN_STREAM = 1
ABERRANT_STREAM = 2


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass(frozen=True)
class IrtItemBank:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        a, b, c = (np.asarray(v, dtype=float) for v in (self.a, self.b, self.c))
        if not (a.shape == b.shape == c.shape) or a.ndim != 1:
            raise ValueError("a, b, c must be vectors of equal length")
        if not (a > 0).all():
            raise ValueError("discriminations must be positive")
        if not ((c >= 0) & (c < 1)).all():
            raise ValueError("guessing parameters must lie in [0, 1)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_items(self) -> int:
        return len(self.a)

    def prob_correct(self, theta: float | np.ndarray) -> np.ndarray:
        """3PL success probabilities; shape (J,) for a scalar theta, (N, J) for a vector."""
        theta = np.asarray(theta, dtype=float)
        logits = self.a * (theta[..., None] - self.b)
        return self.c + (1 - self.c) / (1 + np.exp(-logits))


# ---------------------------------------------------------------------- config


def _dist_draw(dist: Mapping[str, Any], rng: np.random.Generator, size=None):
    name = dist.get("name", "normal")
    if name == "normal":
        return rng.normal(dist.get("mean", 0.0), dist.get("sd", 1.0), size)
    if name == "lognormal":
        return rng.lognormal(dist.get("mean", 0.0), dist.get("sigma", 0.25), size)
    if name == "constant":
        return np.full(size, float(dist["value"])) if size is not None else float(dist["value"])
    raise ValidationError(f"unsupported distribution {name!r}")


@dataclass
class SimConfig:
    """Parameters of a synthetic population (the simulation-config JSON)."""

    seed: int | None = None
    J: int = 20
    n_human: int = 380
    n_aberrant: int = 20
    theta_dist: dict = field(default_factory=lambda: {"name": "normal", "mean": 0.0, "sd": 1.0})
    a_dist: dict = field(default_factory=lambda: {"name": "lognormal", "mean": 0.0, "sigma": 0.25})
    b_dist: dict = field(default_factory=lambda: {"name": "normal", "mean": 0.0, "sd": 1.0})
    c: float = 0.2
    aberrance: dict = field(
        default_factory=lambda: {"kind": "difficulty_blind", "params": {"accuracy": "matched"}}
    )
    label: str = "sim"
    rng: dict = field(default_factory=lambda: {"name": RNG_NAME, "version": RNG_VERSION})

    def __post_init__(self) -> None:
        if self.J < 1:
            raise ValidationError("J must be at least 1")
        if self.n_human < 0 or self.n_aberrant < 0:
            raise ValidationError("respondent counts must be non-negative")
        if not 0 <= self.c < 1:
            raise ValidationError("c must lie in [0, 1)")
        kind = self.aberrance.get("kind")
        if kind not in ("difficulty_blind", "reversed_difficulty"):
            raise ValidationError(f"unknown aberrance kind {kind!r}")
        if self.rng.get("name") != RNG_NAME or int(self.rng.get("version", -1)) != RNG_VERSION:
            raise ValidationError(
                f"unsupported rng {self.rng!r}; this build provides {RNG_NAME} v{RNG_VERSION}"
            )
        for dist in (self.theta_dist, self.a_dist, self.b_dist):
            if dist.get("name", "normal") not in ("normal", "lognormal", "constant"):
                raise ValidationError(f"unsupported distribution {dist.get('name')!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown simulation config field(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: simulation config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


def make_bank(config: SimConfig, seed: int) -> IrtItemBank:
    rng = rng_for(seed, BANK_STREAM)
    a = np.atleast_1d(_dist_draw(config.a_dist, rng, config.J))
    b = np.atleast_1d(_dist_draw(config.b_dist, rng, config.J))
    return IrtItemBank(a=a, b=b, c=np.full(config.J, config.c))


def expected_proportion_correct(bank: IrtItemBank, theta_dist: Mapping[str, Any] | None = None) -> float:
    """Population mean proportion-correct for normally distributed ability.

    Gauss-Hermite quadrature over theta ~ Normal(mean, sd).
    """
    theta_dist = theta_dist or {"name": "normal", "mean": 0.0, "sd": 1.0}
    if theta_dist.get("name", "normal") == "constant":
        return float(bank.prob_correct(float(theta_dist["value"])).mean())
    if theta_dist.get("name", "normal") != "normal":
        raise ValidationError("matched accuracy needs a normal or constant ability distribution")
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    theta = theta_dist.get("mean", 0.0) + theta_dist.get("sd", 1.0) * nodes
    probs = bank.prob_correct(theta).mean(axis=1)
    return float(weights @ probs / weights.sum())


# ------------------------------------------------------------------ generators


def _draw_human(bank: IrtItemBank, theta: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(bank.n_items) < bank.prob_correct(theta)).astype(np.int8)


def sample_human(bank: IrtItemBank, theta: float, seed: int) -> np.ndarray:
    """One 3PL response vector for ability ``theta``."""
    return _draw_human(bank, theta, rng_for(seed))


def _draw_blind(n_items: int, accuracy: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(n_items) < accuracy).astype(np.int8)


def sample_difficulty_blind(J: int, accuracy: float, seed: int) -> np.ndarray:
    """Each item correct with the same probability, whatever its difficulty."""
    if not 0 < accuracy < 1:
        raise ValueError("accuracy must lie strictly inside (0, 1)")
    return _draw_blind(J, accuracy, rng_for(seed))


def reversed_bank(bank: IrtItemBank) -> IrtItemBank:
    """Bank whose difficulties are mirrored, so hard items become easy."""
    return IrtItemBank(a=bank.a, b=-bank.b, c=bank.c)


def sample_reversed_difficulty(bank: IrtItemBank, theta: float, seed: int) -> np.ndarray:
    return _draw_human(reversed_bank(bank), theta, rng_for(seed))


def sample_conditional_null(stats: ItemStats | int, r: int, seed: int) -> np.ndarray:
    """Uniformly random 0/1 pattern with exactly ``r`` ones among J items.

    ``stats`` may be an :class:`ItemStats` (only its length is used) or J itself.
    """
    n_items = stats if isinstance(stats, int) else stats.n_items
    if not 0 < r < n_items:
        raise ValueError(f"r={r} must satisfy 0 < r < J={n_items}")
    x = np.zeros(n_items, dtype=np.int8)
    x[rng_for(seed).choice(n_items, size=r, replace=False)] = 1
    return x


def conditional_null_matrix(n_items: int, r: int, n_draws: int, seed: int) -> np.ndarray:
    """``n_draws`` independent conditional-null patterns as rows."""
    if not 0 < r < n_items:
        raise ValueError(f"r={r} must satisfy 0 < r < J={n_items}")
    rng = rng_for(seed)
    keys = rng.random((n_draws, n_items))
    # the r smallest keys of each row mark a uniform random r-subset
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return (ranks < r).astype(np.int8)


def _resolve_accuracy(config: SimConfig, bank: IrtItemBank) -> float:
    acc = config.aberrance.get("params", {}).get("accuracy", "matched")
    if acc == "matched":
        return expected_proportion_correct(bank, config.theta_dist)
    acc = float(acc)
    if not 0 < acc < 1:
        raise ValidationError("aberrance accuracy must lie strictly inside (0, 1)")
    return acc


def sample_population(
    n_human: int,
    n_aberrant: int,
    bank: IrtItemBank,
    config: SimConfig | None = None,
    seed: int = 0,
    group: int = 0,
) -> ResponseMatrix:
    """Humans (ids ``h0001``...) followed by aberrant rows labelled ``agent:<label>``.

    ``group`` selects the aberrant stream, so several aberrant groups sharing a
    seed still get independent rows.
    """
    if n_human + n_aberrant < 1:
        raise ValueError("need at least one respondent")
    config = config or SimConfig(J=bank.n_items)
    rows, ids, sources = [], [], []
    for i in range(n_human):
        rng = rng_for(seed, HUMAN_STREAM, i)
        theta = float(_dist_draw(config.theta_dist, rng))
        rows.append(_draw_human(bank, theta, rng))
        ids.append(f"h{i + 1:04d}")
        sources.append(HUMAN)
    if n_aberrant:
        kind = config.aberrance.get("kind", "difficulty_blind")
        params = config.aberrance.get("params", {})
        accuracy = _resolve_accuracy(config, bank) if kind == "difficulty_blind" else None
        flipped = reversed_bank(bank) if kind == "reversed_difficulty" else None
        for i in range(n_aberrant):
            rng = rng_for(seed, ABERRANT_STREAM, group, i)
            if flipped is not None:
                rows.append(_draw_human(flipped, float(params.get("theta", 0.0)), rng))
            else:
                rows.append(_draw_blind(bank.n_items, accuracy, rng))
            ids.append(f"{config.label}{i + 1:04d}")
            sources.append(AGENT_PREFIX + config.label)
    items = tuple(f"i{j + 1:02d}" for j in range(bank.n_items))
    return ResponseMatrix(tuple(ids), tuple(sources), items, np.array(rows))


def simulate(config: SimConfig, seed: int | None = None) -> ResponseMatrix:
    """Bank plus population from a config; ``seed`` overrides ``config.seed``."""
    seed = config.seed if seed is None else seed
    if seed is None:
        raise ValidationError("a seed is required (config field 'seed' or --seed)")
    bank = make_bank(config, seed)
    return sample_population(config.n_human, config.n_aberrant, bank, config, seed)
