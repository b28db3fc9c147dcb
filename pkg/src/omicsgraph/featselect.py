"""Feature scoring and selection: variance, ANOVA F, correlation, random forest."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .forest import ForestConfig, RandomForest
from .ingest import DataError, OmicsMatrix, PhenotypeVector


@dataclass(frozen=True)
class FeatureScore:
    feature_name: str
    score: float
    rank: int
    flag: str = ""


def rank_scores(names: Sequence[str], scores: np.ndarray, flags: Sequence[str] | None = None) -> list[FeatureScore]:
    """Order by score descending (+inf first), ties by feature name ascending."""
    flags = list(flags) if flags is not None else [""] * len(names)
    order = sorted(range(len(names)), key=lambda i: (-scores[i], names[i]))
    return [FeatureScore(names[i], float(scores[i]), r, flags[i]) for r, i in enumerate(order, start=1)]


def variance_scores(X: OmicsMatrix) -> list[FeatureScore]:
    if X.shape[0] < 2:
        raise DataError("variance needs at least two subjects")
    return rank_scores(X.feature_names, np.var(X.values, axis=0, ddof=1))


def _anova_f(values: np.ndarray, groups: np.ndarray):
    labels = np.unique(groups)
    n, k = len(groups), len(labels)
    if k < 2:
        raise DataError("ANOVA needs at least two non-empty groups")
    if n <= k:
        raise DataError(f"ANOVA needs more subjects ({n}) than groups ({k})")
    grand = values.mean(axis=0)
    ssb = np.zeros(values.shape[1])
    ssw = np.zeros(values.shape[1])
    for g in labels:
        block = values[groups == g]
        mu = block.mean(axis=0)
        ssb += len(block) * (mu - grand) ** 2
        ssw += ((block - mu) ** 2).sum(axis=0)
    msb = ssb / (k - 1)
    msw = ssw / (n - k)
    # relative tolerance so round-off in a constant column does not read as signal
    scale = (values**2).sum(axis=0)
    tiny = 1e-24 * np.maximum(scale, 1e-300)
    f = np.zeros(values.shape[1])
    flags = [""] * values.shape[1]
    for j in range(values.shape[1]):
        if ssw[j] <= tiny[j]:
            if ssb[j] <= tiny[j]:
                f[j], flags[j] = 0.0, "constant"
            else:
                f[j], flags[j] = np.inf, "zero_within_variance"
        else:
            f[j] = msb[j] / msw[j]
    return f, flags


def quartile_bins(y: np.ndarray) -> np.ndarray:
    """Discretise a continuous outcome into quartile bins 0..3."""
    edges = np.quantile(y, [0.25, 0.5, 0.75])
    return np.searchsorted(edges, y, side="left")


def anova_f_scores(X: OmicsMatrix, y: PhenotypeVector) -> list[FeatureScore]:
    """One-way ANOVA F per feature; continuous outcomes are binned into quartiles."""
    _check_aligned(X, y)
    if y.kind == "categorical":
        present = set(np.unique(y.values).tolist())
        empty = [c for i, c in enumerate(y.class_names) if i not in present]
        if empty:
            raise DataError(f"ANOVA: classes with no subjects: {empty}")
        groups = y.values
    else:
        groups = quartile_bins(y.values)
    f, flags = _anova_f(X.values, groups)
    return rank_scores(X.feature_names, f, flags)


def _check_aligned(X: OmicsMatrix, y: PhenotypeVector):
    if X.subject_ids != y.subject_ids:
        raise DataError("matrix and phenotype subject order differ")


def abs_pearson(values: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|r| of every column against ``target`` plus a zero-variance mask."""
    xc = values - values.mean(axis=0)
    tc = target - target.mean()
    sx = np.sqrt((xc**2).sum(axis=0))
    st = np.sqrt((tc**2).sum())
    degenerate = sx <= 1e-12 * np.maximum(np.abs(values).max(axis=0), 1e-300) * np.sqrt(len(target))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs(xc.T @ tc) / (sx * st)
    r = np.where(degenerate, 0.0, np.minimum(r, 1.0))
    return r, degenerate


def correlation_ratio(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """sqrt(SS_between / SS_total) per column; 0 for constant columns."""
    grand = values.mean(axis=0)
    sst = ((values - grand) ** 2).sum(axis=0)
    ssb = np.zeros(values.shape[1])
    for g in np.unique(labels):
        block = values[labels == g]
        ssb += len(block) * (block.mean(axis=0) - grand) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.sqrt(np.clip(ssb / sst, 0.0, 1.0))
    return np.where(sst > 0, eta, 0.0)


def phenotype_association(values: np.ndarray, y: PhenotypeVector) -> np.ndarray:
    """Strength of association between each column and the phenotype, in [0, 1].

    Continuous outcomes use |Pearson r|.  Categorical outcomes use the
    correlation ratio, which equals |r| against the 0/1 indicator when there
    are two classes.
    """
    if y.kind == "continuous":
        if np.var(y.values) == 0:
            raise DataError("phenotype has zero variance")
        return abs_pearson(values, y.values)[0]
    return correlation_ratio(values, y.values)


def correlation_ranking(X: OmicsMatrix, y: PhenotypeVector) -> list[FeatureScore]:
    _check_aligned(X, y)
    if y.kind != "continuous":
        raise DataError("correlation ranking needs a continuous phenotype")
    if np.var(y.values) == 0:
        raise DataError("phenotype has zero variance")
    r, degenerate = abs_pearson(X.values, y.values)
    return rank_scores(X.feature_names, r, ["zero_variance" if d else "" for d in degenerate])


def one_hot_encode(names: Sequence[str], columns: Sequence[Sequence[str]]) -> tuple[list[str], np.ndarray]:
    """One-hot encode categorical clinical columns as ``name=level`` indicators."""
    out_names, blocks = [], []
    for name, col in zip(names, columns):
        levels = sorted(set(col))
        out_names += [f"{name}={lv}" for lv in levels]
        blocks.append(np.array([[1.0 if v == lv else 0.0 for lv in levels] for v in col]))
    return out_names, np.hstack(blocks) if blocks else np.zeros((0, 0))


def rf_importance(X: OmicsMatrix, y: PhenotypeVector, forest: ForestConfig = ForestConfig()) -> list[FeatureScore]:
    """Mean decrease in impurity from a seeded CART forest, normalised to sum to 1."""
    _check_aligned(X, y)
    if X.shape[0] < max(10, forest.min_samples_leaf):
        raise DataError(f"random forest importance needs at least {max(10, forest.min_samples_leaf)} subjects")
    rf = RandomForest(forest, classification=y.kind == "categorical")
    rf.fit(X.values, y.values, feature_names=X.feature_names)
    imp = rf.feature_importances_
    total = math.fsum(imp)  # exact, so column order cannot change the last bit
    flags = [""] * len(imp)
    if total > 0:
        imp = imp / total
    else:
        imp = np.full(len(imp), 1.0 / len(imp))
        flags = ["no_splits"] * len(imp)
    return rank_scores(X.feature_names, imp, flags)


SELECTORS = {
    "variance": lambda X, y, seed: variance_scores(X),
    "anova": lambda X, y, seed: anova_f_scores(X, y),
    "correlation": lambda X, y, seed: correlation_ranking(X, y),
    "random_forest": lambda X, y, seed: rf_importance(X, y, ForestConfig(seed=seed)),
}


def top_k(scores: Sequence[FeatureScore], k: int) -> list[str]:
    if k <= 0:
        raise DataError("k must be positive")
    if k > len(scores):
        raise DataError(f"k={k} exceeds the {len(scores)} scored features")
    ordered = sorted(scores, key=lambda s: (-s.score, s.feature_name))
    return [s.feature_name for s in ordered[:k]]


def selection_overlap(**selections: Sequence[str]) -> dict[tuple[str, ...], int]:
    """Intersection size for every combination of two or more named selections."""
    sets = {k: set(v) for k, v in selections.items()}
    keys = list(sets)
    out = {}
    for size in range(2, len(keys) + 1):
        for combo in combinations(keys, size):
            out[combo] = len(set.intersection(*(sets[c] for c in combo)))
    return out


def write_scores_csv(scores: Sequence[FeatureScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "score", "rank", "flag"])
        for s in scores:
            w.writerow([s.feature_name, repr(s.score), s.rank, s.flag])
