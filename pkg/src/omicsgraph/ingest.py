"""Loading, validating and aligning omics matrices and phenotype annotations.

Matrices are held in subjects-as-rows orientation.  Missing cells are kept as
NaN after loading and only resolved by :func:`align_cohort`, which drops any
subject that is still incomplete.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class OmicsMatrix:
    subject_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    modality: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "feature_names", tuple(str(f) for f in self.feature_names))
        if values.shape != (len(self.subject_ids), len(self.feature_names)):
            raise DataError(
                f"{self.modality}: values shape {values.shape} does not match "
                f"{len(self.subject_ids)} subjects x {len(self.feature_names)} features"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError(f"{self.modality}: duplicate feature names")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def columns(self, names: Sequence[str]) -> "OmicsMatrix":
        """Return a matrix restricted to ``names`` (in that order)."""
        index = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise DataError(f"{self.modality}: unknown features {missing[:5]}")
        cols = [index[n] for n in names]
        return OmicsMatrix(self.subject_ids, tuple(names), self.modality, self.values[:, cols])

    def rows(self, subject_ids: Sequence[str]) -> "OmicsMatrix":
        index = {s: i for i, s in enumerate(self.subject_ids)}
        missing = [s for s in subject_ids if s not in index]
        if missing:
            raise DataError(f"{self.modality}: unknown subjects {missing[:5]}")
        rows = [index[s] for s in subject_ids]
        return OmicsMatrix(tuple(subject_ids), self.feature_names, self.modality, self.values[rows])


@dataclass(frozen=True)
class PhenotypeVector:
    subject_ids: tuple[str, ...]
    kind: str  # "categorical" | "continuous"
    values: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous"):
            raise DataError(f"unknown phenotype kind {self.kind!r}")
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
        if self.kind == "categorical":
            values = np.asarray(self.values, dtype=np.int64)
            if values.size and (values.min() < 0 or values.max() >= len(self.class_names)):
                raise DataError("class index out of range of class_names")
        else:
            values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.subject_ids),):
            raise DataError("phenotype values must be one per subject")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @classmethod
    def from_labels(cls, subject_ids: Sequence[str], labels: Sequence[str]) -> "PhenotypeVector":
        """Build a categorical phenotype; class names are sorted label strings."""
        labels = [str(v) for v in labels]
        class_names = tuple(sorted(set(labels)))
        lookup = {c: i for i, c in enumerate(class_names)}
        return cls(tuple(subject_ids), "categorical", np.array([lookup[v] for v in labels]), class_names)

    def rows(self, subject_ids: Sequence[str]) -> "PhenotypeVector":
        index = {s: i for i, s in enumerate(self.subject_ids)}
        missing = [s for s in subject_ids if s not in index]
        if missing:
            raise DataError(f"phenotype: unknown subjects {missing[:5]}")
        return PhenotypeVector(
            tuple(subject_ids), self.kind, self.values[[index[s] for s in subject_ids]], self.class_names
        )


@dataclass(frozen=True)
class Provenance:
    dropped_not_shared: tuple[str, ...] = ()
    dropped_incomplete: tuple[str, ...] = ()
    aggregated: tuple[tuple[str, str, int], ...] = ()  # (modality, subject, n_aliquots)

    def report(self) -> str:
        lines = [f"dropped (not present in every input): {len(self.dropped_not_shared)}"]
        lines += [f"  {s}" for s in self.dropped_not_shared]
        lines.append(f"dropped (incomplete after aggregation): {len(self.dropped_incomplete)}")
        lines += [f"  {s}" for s in self.dropped_incomplete]
        lines.append(f"aggregated aliquots: {len(self.aggregated)}")
        lines += [f"  {m}\t{s}\t{n} rows averaged" for m, s, n in self.aggregated]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AlignedDataset:
    modalities: tuple[OmicsMatrix, ...]
    phenotype: PhenotypeVector
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        ids = self.phenotype.subject_ids
        for m in self.modalities:
            if m.subject_ids != ids:
                raise DataError(f"{m.modality}: subject order differs from phenotype")
        if len(set(ids)) != len(ids):
            raise DataError("aligned subjects are not unique")

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return self.phenotype.subject_ids

    def modality(self, tag: str) -> OmicsMatrix:
        for m in self.modalities:
            if m.modality == tag:
                return m
        raise DataError(f"no modality {tag!r}; have {[m.modality for m in self.modalities]}")


def _parse_cell(text: str, row: int, col: int, path) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}: non-numeric cell {text!r} at row {row}, column {col}") from None


def normalize_ids(ids: Sequence[str], delimiter: str = "-", keep: int = 3) -> list[str]:
    """Keep the first ``keep`` delimiter-separated fields of each ID.

    >>> normalize_ids(["TCGA-A1-A0SB-01A-11R"])
    ['TCGA-A1-A0SB']
    """
    return [delimiter.join(s.split(delimiter)[:keep]) for s in ids]


def load_omics_csv(
    path,
    modality: str,
    orientation: str = "subjects_as_rows",
    allow_duplicates: bool = False,
    id_delimiter: str | None = None,
    id_keep: int = 3,
) -> OmicsMatrix:
    """Read a named numeric table into an :class:`OmicsMatrix`.

    ``orientation="features_as_rows"`` reads feature-major files and transposes
    them.  Blank cells become NaN.  Duplicate subject IDs are rejected unless
    ``allow_duplicates`` is set, in which case :func:`align_cohort` averages them.
    If ``id_delimiter`` is given, subject IDs are shortened with :func:`normalize_ids`.
    """
    if orientation not in ("subjects_as_rows", "features_as_rows"):
        raise DataError(f"unknown orientation {orientation!r}")
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    width = len(header)
    col_names = [h.strip() for h in header[1:]]
    row_names, body = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} fields, header has {width}")
        row_names.append(row[0].strip())
        body.append([_parse_cell(cell, r, c, path) for c, cell in enumerate(row[1:], start=2)])
    values = np.array(body, dtype=np.float64).reshape(len(row_names), len(col_names))

    if orientation == "features_as_rows":
        subjects, features, values = col_names, row_names, values.T
    else:
        subjects, features = row_names, col_names
    if id_delimiter is not None:
        subjects = normalize_ids(subjects, id_delimiter, id_keep)
    if len(set(subjects)) != len(subjects) and not allow_duplicates:
        seen, dups = set(), []
        for s in subjects:
            if s in seen:
                dups.append(s)
            seen.add(s)
        raise DataError(f"{path}: duplicate subject IDs {sorted(set(dups))[:5]} (aliquot aggregation not enabled)")
    if len(set(features)) != len(features):
        raise DataError(f"{path}: duplicate feature names")
    return OmicsMatrix(tuple(subjects), tuple(features), modality, values)


def write_omics_csv(matrix: OmicsMatrix, path) -> None:
    """Write subjects-as-rows CSV; ``repr`` floats round-trip exactly, NaN is blank."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", *matrix.feature_names])
        for sid, row in zip(matrix.subject_ids, matrix.values):
            w.writerow([sid, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def load_phenotype_csv(path, column: str | None = None, kind: str = "categorical") -> PhenotypeVector:
    """Read a subject-indexed phenotype table (first column = subject ID)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataError(f"{path}: no phenotype rows")
    header = [h.strip() for h in rows[0]]
    col = 1 if column is None else header.index(column) if column in header else None
    if col is None:
        raise DataError(f"{path}: no column {column!r}")
    ids, raw = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        if row[col].strip() == "":
            continue
        ids.append(row[0].strip())
        raw.append(row[col].strip())
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate subject IDs in phenotype")
    if kind == "categorical":
        return PhenotypeVector.from_labels(ids, raw)
    return PhenotypeVector(tuple(ids), "continuous", np.array([_parse_cell(v, 0, col, path) for v in raw]))


def write_phenotype_csv(phenotype: PhenotypeVector, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "phenotype"])
        for sid, v in zip(phenotype.subject_ids, phenotype.values):
            w.writerow([sid, phenotype.class_names[v] if phenotype.kind == "categorical" else repr(float(v))])


def _collapse_aliquots(m: OmicsMatrix, policy: str) -> tuple[dict[str, np.ndarray], list]:
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(m.subject_ids):
        groups.setdefault(s, []).append(i)
    merged, aggregated = {}, []
    for s, idx in groups.items():
        if len(idx) == 1:
            merged[s] = m.values[idx[0]]
            continue
        if policy == "error":
            raise DataError(f"{m.modality}: subject {s!r} has {len(idx)} aliquot rows")
        block = m.values[sorted(idx)]
        with np.errstate(invalid="ignore"):
            # all-missing columns stay NaN and get the subject dropped later
            sums = np.nansum(block, axis=0)
            counts = np.sum(~np.isnan(block), axis=0)
            row = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        merged[s] = row
        aggregated.append((m.modality, s, len(idx)))
    return merged, aggregated


def align_cohort(
    matrices: Sequence[OmicsMatrix], phenotype: PhenotypeVector, aliquot_policy: str = "average"
) -> AlignedDataset:
    """Intersect subjects across all inputs, average aliquots and drop incomplete cases.

    Output subjects are sorted lexicographically.
    """
    if not matrices:
        raise DataError("align_cohort needs at least one matrix")
    if not phenotype.subject_ids:
        raise DataError("empty phenotype")
    if aliquot_policy not in ("average", "error"):
        raise DataError(f"unknown aliquot policy {aliquot_policy!r}")
    tags = [m.modality for m in matrices]
    if len(set(tags)) != len(tags):
        raise DataError(f"duplicate modality tags {tags}")

    collapsed, aggregated = [], []
    for m in matrices:
        rows, agg = _collapse_aliquots(m, aliquot_policy)
        collapsed.append(rows)
        aggregated.extend(agg)
    if len(set(phenotype.subject_ids)) != len(phenotype.subject_ids):
        raise DataError("duplicate subject IDs in phenotype")

    all_ids = set(phenotype.subject_ids).union(*(set(c) for c in collapsed))
    shared = set(phenotype.subject_ids).intersection(*(set(c) for c in collapsed))
    if not shared:
        raise DataError("no subjects shared by all inputs")
    if phenotype.kind == "continuous":
        pheno_ok = {s for s, v in zip(phenotype.subject_ids, phenotype.values) if np.isfinite(v)}
    else:
        pheno_ok = set(phenotype.subject_ids)

    keep, incomplete = [], []
    for s in sorted(shared):
        if s in pheno_ok and all(np.all(np.isfinite(c[s])) for c in collapsed):
            keep.append(s)
        else:
            incomplete.append(s)
    if not keep:
        raise DataError("every shared subject has missing values")

    out = tuple(
        OmicsMatrix(tuple(keep), m.feature_names, m.modality, np.array([c[s] for s in keep]).reshape(len(keep), -1))
        for m, c in zip(matrices, collapsed)
    )
    prov = Provenance(
        dropped_not_shared=tuple(sorted(all_ids - shared)),
        dropped_incomplete=tuple(incomplete),
        aggregated=tuple(sorted(aggregated)),
    )
    return AlignedDataset(out, phenotype.rows(keep), prov)


def concat_modalities(dataset: AlignedDataset, include: Sequence[str] | None = None) -> OmicsMatrix:
    """Column-bind modalities, prefixing each feature with ``"<modality>:"``."""
    tags = [m.modality for m in dataset.modalities] if include is None else list(include)
    if not tags:
        raise DataError("no modalities requested")
    parts = [dataset.modality(t) for t in tags]
    names = [f"{m.modality}:{f}" for m in parts for f in m.feature_names]
    if len(set(names)) != len(names):
        raise DataError("feature name collision after modality prefixing")
    values = np.hstack([m.values for m in parts])
    return OmicsMatrix(dataset.subject_ids, tuple(names), "+".join(tags), values)
