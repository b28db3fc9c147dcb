"""Planted-signal experiment: joint GNN classifier on the bundled cohort.

Reports mean accuracy over seeds against the majority-class baseline, then
repeats with shuffled labels as a negative control.
"""
import argparse
import dataclasses
import time

import numpy as np

from omicsgraph.ingest import AlignedDataset, PhenotypeVector, concat_modalities
from omicsgraph.netbuild import knn_graph
from omicsgraph.pipeline import PredictorConfig, predict_phenotype
from omicsgraph.synthetic import load_bundled_cohort


def shuffled(ds: AlignedDataset, seed: int) -> AlignedDataset:
    ph = ds.phenotype
    perm = np.random.default_rng(seed).permutation(len(ph.values))
    return dataclasses.replace(ds, phenotype=PhenotypeVector(ph.subject_ids, ph.kind, ph.values[perm], ph.class_names))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--gnn", default="gcn", choices=["gcn", "gat", "sage", "gin"])
    ap.add_argument("--reduction", default="mean", choices=["mean", "max", "autoencoder"])
    ap.add_argument("--integration", default="feature_weight", choices=["feature_weight", "concatenate"])
    ap.add_argument("--k", type=int, default=15, help="kNN graph degree")
    args = ap.parse_args()

    ds = load_bundled_cohort()
    graph = knn_graph(concat_modalities(ds), args.k)
    cfg = PredictorConfig(gnn=args.gnn, reduction=args.reduction, integration=args.integration,
                      seeds=tuple(range(args.seeds)))
    print(f"cohort: {len(ds.subject_ids)} subjects, graph: {graph.n_nodes} nodes / {graph.n_edges} edges")
    for name, data in (("planted", ds), ("shuffled", shuffled(ds, 12345))):
        t0 = time.perf_counter()
        rep = predict_phenotype(data, graph, cfg)
        acc, sd = rep.accuracy
        print(f"{name:9s} accuracy {acc:.4f} +/- {sd:.4f}  baseline {rep.majority_baseline:.4f}  "
              f"f1_macro {rep.f1_macro[0]:.4f}  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
