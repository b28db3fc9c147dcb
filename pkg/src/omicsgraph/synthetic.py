"""Seeded synthetic multi-omics cohorts with a planted class signal.

Features load on a few shared latent modules (so feature networks have
structure) and a chosen subset carries class-specific mean shifts.  The raw
files also include messy rows on purpose: replicate aliquots, a subject that
only one modality has, and a subject with a blank cell.  Alignment removes or
merges all of them and leaves exactly ``n_subjects`` subjects.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import OmicsMatrix, PhenotypeVector, write_omics_csv, write_phenotype_csv

MODALITIES = (("mrna", "G"), ("methylation", "cg"), ("mirna", "miR"))


@dataclass(frozen=True)
class SyntheticCohort:
    matrices: tuple[OmicsMatrix, ...]
    phenotype: PhenotypeVector
    informative: tuple[str, ...]  # prefixed "modality:feature" names
    n_subjects: int


def _transform(modality: str, z: np.ndarray) -> np.ndarray:
    if modality == "mrna":
        return 8.0 + 2.0 * z
    if modality == "methylation":
        return 1.0 / (1.0 + np.exp(-z))
    return 3.0 + z


def make_synthetic_cohort(
    seed: int = 0,
    n_subjects: int = 200,
    features_per_modality: int = 20,
    n_informative: int = 10,
    n_classes: int = 3,
    n_modules: int = 6,
    effect: float = 1.2,
    messy: bool = True,
) -> SyntheticCohort:
    rng = np.random.default_rng(seed)
    n_mod = len(MODALITIES)
    n_feat = n_mod * features_per_modality
    labels = rng.permutation(np.arange(n_subjects) % n_classes)

    latent = rng.normal(size=(n_subjects, n_modules))
    module = rng.integers(0, n_modules, size=n_feat)
    loading = rng.uniform(0.5, 0.9, size=n_feat)
    noise_sd = np.sqrt(1.0 - loading**2)
    Z = latent[:, module] * loading + rng.normal(size=(n_subjects, n_feat)) * noise_sd

    # informative features spread round-robin over the modalities
    informative = [(i % n_mod) * features_per_modality + i // n_mod for i in range(n_informative)]
    centroids = rng.normal(scale=effect, size=(n_classes, n_informative))
    Z[:, informative] += centroids[labels]

    subject_ids = [f"S{i + 1:03d}" for i in range(n_subjects)]
    class_names = tuple(f"subtype_{chr(ord('A') + c)}" for c in range(n_classes))
    matrices, inf_names = [], []
    for m, (tag, prefix) in enumerate(MODALITIES):
        cols = slice(m * features_per_modality, (m + 1) * features_per_modality)
        names = [f"{prefix}{j + 1:02d}" for j in range(features_per_modality)]
        values = _transform(tag, Z[:, cols])
        inf_names += [f"{tag}:{names[j - m * features_per_modality]}" for j in informative
                      if m * features_per_modality <= j < (m + 1) * features_per_modality]
        ids = list(subject_ids)
        if messy:
            extra_rng = np.random.default_rng([seed, m])
            extra = extra_rng.normal(size=(2, features_per_modality))
            values = np.vstack([values, _transform(tag, extra)])
            ids += [f"S{n_subjects + 1:03d}", f"S{n_subjects + 2:03d}"]
            if tag == "methylation":
                values[-1, 3] = np.nan
            if tag == "mrna":
                # replicate aliquots whose average is the clean row
                dup_rows, dup_ids = [], []
                for s in (0, 1, 2):
                    jitter = extra_rng.normal(scale=0.05, size=features_per_modality)
                    values[s] = values[s] + jitter
                    dup_rows.append(values[s] - 2 * jitter)
                    dup_ids.append(ids[s])
                values = np.vstack([values, dup_rows])
                ids += dup_ids
                ids.append(f"S{n_subjects + 3:03d}")
                values = np.vstack([values, _transform(tag, extra_rng.normal(size=(1, features_per_modality)))])
        matrices.append(OmicsMatrix(tuple(ids), tuple(names), tag, values))

    pheno_ids = list(subject_ids)
    pheno_labels = [class_names[c] for c in labels]
    if messy:
        # S<n+1> has omics but no phenotype; S<n+2> has a blank methylation cell
        pheno_ids.append(f"S{n_subjects + 2:03d}")
        pheno_labels.append(class_names[1])
    phenotype = PhenotypeVector.from_labels(pheno_ids, pheno_labels)
    return SyntheticCohort(tuple(matrices), phenotype, tuple(inf_names), n_subjects)


def write_synthetic_cohort(cohort: SyntheticCohort, outdir) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for m in cohort.matrices:
        paths[m.modality] = outdir / f"{m.modality}.csv"
        write_omics_csv(m, paths[m.modality])
    paths["phenotype"] = outdir / "phenotype.csv"
    write_phenotype_csv(cohort.phenotype, paths["phenotype"])
    (outdir / "informative.txt").write_text("".join(f"{n}\n" for n in cohort.informative), encoding="utf-8")
    return paths


def planted_partition_graph(sizes, p_in: float, p_out: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted stochastic block model adjacency and its block labels."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    probs = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    A = (upper | upper.T).astype(np.float64)
    return A, labels


def bundled_path(name: str = "") -> Path:
    """Path inside the packaged data directory."""
    return Path(__file__).resolve().parent / "data" / name


def load_bundled_cohort():
    """Aligned dataset read from the bundled synthetic cohort files."""
    from .ingest import align_cohort, load_omics_csv, load_phenotype_csv

    root = bundled_path("synthetic")
    mats = [load_omics_csv(root / f"{tag}.csv", tag, allow_duplicates=True) for tag, _ in MODALITIES]
    return align_cohort(mats, load_phenotype_csv(root / "phenotype.csv"))
