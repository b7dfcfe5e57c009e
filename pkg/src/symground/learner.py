"""Symbol meaning learning and concept-group classification.

For every symbol a 1-D Normal is fitted per feature, values outside two
standard deviations are trimmed and the Normal refitted, and the features
whose refitted spread stays below ``sigma_thresh`` become the symbol's
invariant set. The symbol model is a diagonal Gaussian over that set.
Symbols with the same invariant set form a concept group; within a group the
labels are mutually exclusive and classification picks at most one of them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AllFiltered, NoLearnableSymbols, TooFewSamples, Unlearnable
from .features import FEATURES

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
UNKNOWN = "Unknown"


@dataclass(frozen=True)
class FeatureStat:
    mu: float
    sigma: float
    n: int


@dataclass(frozen=True)
class LearnerConfig:
    sigma_thresh: float = 0.05
    d_max: float = 4.0
    n_min: int = 10
    clean_passes: int | None = 5  # trim/refit cycles; None repeats until nothing is removed
    sigma_floor: float = SIGMA_FLOOR


def _stat(values: np.ndarray, floor: float) -> FeatureStat:
    n = len(values)
    mu = float(values.mean())
    sigma = float(values.std(ddof=1)) if n > 1 else 0.0
    return FeatureStat(mu, max(sigma, floor), n)


def fit_normals(data: np.ndarray, n_min: int = 10, floor: float = SIGMA_FLOOR) -> list[FeatureStat]:
    """Per-feature sample mean and (n-1) standard deviation."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or len(data) < n_min:
        raise TooFewSamples(f"{len(data)} samples, need at least {n_min}")
    return [_stat(data[:, f], floor) for f in range(data.shape[1])]


def clean_noise(data: np.ndarray, stats: Sequence[FeatureStat], passes: int | None = 1,
                floor: float = SIGMA_FLOOR) -> tuple[list[np.ndarray], list[FeatureStat]]:
    """Trim each feature to ``mu +- 2 sigma`` and refit on the survivors.

    Features are trimmed independently, so the surviving value lists can
    differ in length. ``passes`` repeats the trim/refit cycle on the
    survivors; ``None`` repeats until a pass removes nothing.
    """
    data = np.asarray(data, dtype=float)
    kept, new_stats = [], []
    limit = passes if passes is not None else 1000
    for f, st in enumerate(stats):
        values = data[:, f]
        for _ in range(limit):
            inside = values[np.abs(values - st.mu) <= 2 * st.sigma]
            if len(inside) == 0:
                raise AllFiltered(f"feature {FEATURES[f] if f < len(FEATURES) else f} "
                                  "has no values within two standard deviations")
            removed = len(inside) < len(values)
            values = inside
            st = _stat(values, floor)
            if not removed:
                break
        kept.append(values)
        new_stats.append(st)
    return kept, new_stats


def find_invariant_features(stats: Sequence[FeatureStat], sigma_thresh: float,
                            names: Sequence[str] = FEATURES) -> tuple[str, ...]:
    return tuple(name for name, st in zip(names, stats) if st.sigma < sigma_thresh)


@dataclass(frozen=True, eq=False)
class SymbolModel:
    symbol: str
    features: tuple[str, ...]
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if not (len(self.features) == len(mu) == len(var) >= 1):
            raise ValueError("model dimensions disagree or are empty")
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "_index", np.array([FEATURES.index(f) for f in self.features]))

    def __eq__(self, other):
        if not isinstance(other, SymbolModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.symbol, self.features))

    def restrict(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[self._index]

    def to_dict(self) -> dict:
        return {"name": self.symbol, "invariant": list(self.features),
                "mu": [float(v) for v in self.mu], "var": [float(v) for v in self.var]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SymbolModel":
        return cls(d["name"], tuple(d["invariant"]), np.asarray(d["mu"]), np.asarray(d["var"]))


def build_model(symbol: str, stats: Sequence[FeatureStat], invariant: Sequence[str],
                names: Sequence[str] = FEATURES, floor: float = SIGMA_FLOOR) -> SymbolModel:
    if not invariant:
        raise Unlearnable(f"symbol '{symbol}' has no invariant features")
    by_name = dict(zip(names, stats))
    feats = tuple(f for f in names if f in set(invariant))
    mu = [by_name[f].mu for f in feats]
    var = [max(by_name[f].sigma, floor) ** 2 for f in feats]
    return SymbolModel(symbol, feats, np.array(mu), np.array(var))


@dataclass(frozen=True)
class KnowledgeBase:
    models: tuple[SymbolModel, ...]
    groups: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # (features, symbols)
    sigma_thresh: float
    d_max: float
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def model(self, symbol: str) -> SymbolModel:
        for m in self.models:
            if m.symbol == symbol:
                return m
        raise KeyError(symbol)

    @property
    def symbols(self) -> list[str]:
        return [m.symbol for m in self.models]

    def group_of(self, symbol: str) -> tuple[str, ...]:
        for feats, members in self.groups:
            if symbol in members:
                return feats
        raise KeyError(symbol)

    def to_dict(self) -> dict:
        return {
            "sigma_thresh": self.sigma_thresh,
            "d_max": self.d_max,
            "symbols": [m.to_dict() for m in self.models],
            "groups": [{"features": list(f), "symbols": list(s)} for f, s in self.groups],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnowledgeBase":
        models = tuple(SymbolModel.from_dict(m) for m in d["symbols"])
        groups = tuple((tuple(g["features"]), tuple(g["symbols"])) for g in d["groups"])
        return cls(models, groups, float(d["sigma_thresh"]), float(d["d_max"]))


def concept_groups(models: Iterable[SymbolModel]) -> tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]:
    groups: dict[tuple[str, ...], list[str]] = {}
    for m in models:
        groups.setdefault(m.features, []).append(m.symbol)
    order = sorted(groups, key=lambda fs: [FEATURES.index(f) for f in fs])
    return tuple((fs, tuple(sorted(groups[fs]))) for fs in order)


def learn(dataset: Mapping[str, np.ndarray], config: LearnerConfig = LearnerConfig()) -> KnowledgeBase:
    """Fit, clean, select invariant features and build a model per symbol.

    Symbols that fail any step are left out with a warning; only a dataset
    with no learnable symbol at all is an error.
    """
    if not dataset:
        raise NoLearnableSymbols("dataset is empty")
    models, warnings = [], []
    for symbol in sorted(dataset):
        try:
            stats = fit_normals(dataset[symbol], config.n_min, config.sigma_floor)
            _, stats = clean_noise(dataset[symbol], stats, config.clean_passes, config.sigma_floor)
            invariant = find_invariant_features(stats, config.sigma_thresh)
            models.append(build_model(symbol, stats, invariant, floor=config.sigma_floor))
        except (TooFewSamples, AllFiltered, Unlearnable) as err:
            msg = f"{symbol}: {err}"
            log.warning("symbol not learned: %s", msg)
            warnings.append(msg)
    if not models:
        raise NoLearnableSymbols("no symbol could be learned; " + "; ".join(warnings))
    return KnowledgeBase(tuple(models), concept_groups(models), config.sigma_thresh,
                         config.d_max, tuple(warnings))


# -- inference ----------------------------------------------------------------

def log_pdf(model: SymbolModel, x) -> float:
    z = model.restrict(x) - model.mu
    return float(-0.5 * np.sum(np.log(2 * np.pi * model.var) + z * z / model.var))


def pdf(model: SymbolModel, x) -> float:
    """Diagonal Normal density of ``x`` over the model's invariant features."""
    return math.exp(log_pdf(model, x))


def mahalanobis(model: SymbolModel, x) -> float:
    z = model.restrict(x) - model.mu
    return float(np.sqrt(np.sum(z * z / model.var)))


def classify(x, kb: KnowledgeBase, d_max: float | None = None) -> dict[tuple[str, ...], str]:
    """Best symbol per concept group, or ``UNKNOWN`` when none is close enough.

    A symbol qualifies when ``x`` lies within Mahalanobis distance ``d_max``
    of its mean; among qualifiers the highest density wins, ties going to
    the alphabetically first symbol.
    """
    d_max = kb.d_max if d_max is None else d_max
    out = {}
    for feats, members in kb.groups:
        best, best_lp = UNKNOWN, -math.inf
        for symbol in members:  # members are sorted, so '>' keeps the first on ties
            m = kb.model(symbol)
            if mahalanobis(m, x) > d_max:
                continue
            lp = log_pdf(m, x)
            if lp > best_lp:
                best, best_lp = symbol, lp
        out[feats] = best
    return out


def group_key(features: Sequence[str]) -> str:
    return ",".join(features)
