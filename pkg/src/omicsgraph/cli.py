"""Command-line interface.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 numerical failure (non-convergence, non-finite loss).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .community import (
    ConvergenceError,
    hybrid_ppr_louvain,
    louvain,
    personalized_pagerank,
    write_partition_csv,
    write_ppr_csv,
)
from .config import ConfigError, load_config
from .featselect import SELECTORS, phenotype_association, rf_importance, top_k, write_scores_csv
from .forest import ForestConfig
from .gnn.train import (
    EmbedConfig,
    NumericError,
    node_feature_matrix,
    raw_node_attributes,
    read_embeddings_csv,
    train_embedder,
    write_embeddings_csv,
    write_loss_csv,
)
from .ingest import (
    DataError,
    align_cohort,
    load_omics_csv,
    load_phenotype_csv,
    write_omics_csv,
    write_phenotype_csv,
)
from .netbuild import export_edgelist, export_graphml, import_network, read_node_order, write_node_order
from .pipeline import (
    PredictorConfig,
    pca_coords,
    predict_phenotype,
    subject_representation,
    tune_hyperparameters,
    write_leaderboard,
    write_subject_representation,
)
from .workflow import Workflow, build_network, write_coords_csv

log = logging.getLogger("omicsgraph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _modality_arg(text: str) -> tuple[str, str]:
    if ":" not in text:
        raise argparse.ArgumentTypeError("expected PATH:MODALITY")
    path, tag = text.rsplit(":", 1)
    return path, tag


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_dataset(args):
    mats = [
        load_omics_csv(p, tag, args.orientation, allow_duplicates=True, id_delimiter=args.id_delimiter,
                       id_keep=args.id_keep)
        for p, tag in args.modality
    ]
    ph = load_phenotype_csv(args.phenotype, args.phenotype_column, args.phenotype_kind)
    return align_cohort(mats, ph, args.aliquot_policy)


def _add_dataset_args(p, required=True):
    p.add_argument("--modality", action="append", type=_modality_arg, required=required, default=None,
                   metavar="PATH:TAG", help="omics CSV and its modality tag (repeatable)")
    p.add_argument("--orientation", choices=["subjects_as_rows", "features_as_rows"], default="subjects_as_rows")
    p.add_argument("--phenotype", required=required, help="phenotype CSV (first column subject ID)")
    p.add_argument("--phenotype-column", default=None, help="phenotype column name (default: second column)")
    p.add_argument("--phenotype-kind", choices=["categorical", "continuous"], default="categorical")
    p.add_argument("--aliquot-policy", choices=["average", "error"], default="average")
    p.add_argument("--id-delimiter", default=None, help="shorten subject IDs at this delimiter")
    p.add_argument("--id-keep", type=int, default=3, help="fields kept by --id-delimiter")


def _add_graph_args(p):
    p.add_argument("--edges", required=True, help="edge-list CSV (source,target,weight)")
    p.add_argument("--nodes", default=None, help="node-order file (one name per line)")


def _graph(args):
    return import_network(args.edges, read_node_order(args.nodes) if args.nodes else None)


# ------------------------------------------------------------------ commands


def cmd_run(args):
    cfg = load_config(args.config)
    out = Workflow(cfg, base_dir=Path(args.config).resolve().parent).run()
    print(f"wrote {out}")


def cmd_ingest(args):
    ds = _load_dataset(args)
    out = _outdir(args.out)
    for m in ds.modalities:
        write_omics_csv(m, out / f"{m.modality}.csv")
    write_phenotype_csv(ds.phenotype, out / "phenotype.csv")
    (out / "provenance.txt").write_text(ds.provenance.report(), encoding="utf-8")
    print(f"{len(ds.subject_ids)} subjects aligned across {len(ds.modalities)} modalities")


def cmd_select(args):
    X = load_omics_csv(args.matrix, args.modality_tag)
    y = load_phenotype_csv(args.phenotype, args.phenotype_column, args.phenotype_kind)
    ds = align_cohort([X], y)
    X, y = ds.modalities[0], ds.phenotype
    if args.method == "random_forest":
        scores = rf_importance(X, y, ForestConfig(n_trees=args.trees, seed=args.seed))
    else:
        scores = SELECTORS[args.method](X, y, args.seed)
    out = _outdir(args.out)
    write_scores_csv(scores, out / "scores.csv")
    names = top_k(scores, args.k) if args.k else [s.feature_name for s in scores]
    (out / "selected.txt").write_text("".join(f"{n}\n" for n in names), encoding="utf-8")
    keep = set(names)
    write_omics_csv(X.columns([n for n in X.feature_names if n in keep]), out / "selected.csv")


def cmd_build_net(args):
    out = _outdir(args.out)
    report = None
    if args.method == "import":
        if not args.edges:
            raise ConfigError("--edges is required for --method import")
        graph = import_network(args.edges, read_node_order(args.nodes) if args.nodes else None)
    else:
        if not args.matrix:
            raise ConfigError("--matrix is required")
        X = load_omics_csv(args.matrix, "matrix")
        graph, report = build_network(X, args)
    export_edgelist(graph, out / "edges.csv")
    write_node_order(graph, out / "nodes.txt")
    if args.graphml:
        export_graphml(graph, out / "graph.graphml")
    if report is not None:
        with open(out / "scale_free_fit.csv", "w", encoding="utf-8") as fh:
            fh.write("beta,r2,slope,mean_connectivity\n")
            for f in report:
                fh.write(f"{f.beta!r},{f.r2!r},{f.slope!r},{f.mean_connectivity!r}\n")
    print(f"{graph.n_nodes} nodes, {graph.n_edges} edges")


def cmd_cluster(args):
    graph = _graph(args)
    out = _outdir(args.out)
    if args.method == "louvain":
        part = louvain(graph, args.seed, args.resolution)
        write_partition_csv(part, out / "partition.csv")
        print(f"{part.n_communities} communities, modularity {part.modularity:.6f}")
        return
    X = y = None
    if args.matrix and args.phenotype:
        ds = align_cohort([load_omics_csv(args.matrix, "matrix")],
                          load_phenotype_csv(args.phenotype, args.phenotype_column, args.phenotype_kind))
        X, y = ds.modalities[0].columns(graph.node_names), ds.phenotype
    if args.method == "ppr":
        if args.seed_nodes:
            seeds = {n: 1.0 / len(args.seed_nodes) for n in args.seed_nodes}
        elif X is not None:
            assoc = phenotype_association(X.values, y)
            seeds = assoc / assoc.sum()
        else:
            raise ConfigError("ppr needs --seed-nodes or --matrix with --phenotype")
        ppr = personalized_pagerank(graph, seeds, args.damping, args.tol, args.max_iter)
        write_ppr_csv(ppr, out / "ppr.csv")
        print(f"converged in {ppr.iterations} iterations")
        return
    if X is None:
        raise ConfigError("hybrid needs --matrix and --phenotype")
    res = hybrid_ppr_louvain(graph, X, y, args.mass_fraction, args.seed, args.damping, args.resolution)
    write_ppr_csv(res.ppr, out / "ppr.csv")
    write_partition_csv(res.partition, out / "partition.csv")
    (out / "retained.txt").write_text("".join(f"{n}\n" for n in res.retained), encoding="utf-8")
    print(f"retained {len(res.retained)} nodes, {res.partition.n_communities} communities")


def cmd_embed(args):
    graph = _graph(args)
    X = load_omics_csv(args.matrix, "matrix")
    y = None
    if args.phenotype:
        ds = align_cohort([X], load_phenotype_csv(args.phenotype, args.phenotype_column, args.phenotype_kind))
        X, y = ds.modalities[0], ds.phenotype
    X = X.columns(graph.node_names)
    cfg = EmbedConfig(kind=args.kind, num_layers=args.layers, hidden=args.hidden, dim=args.dim, num_heads=args.heads,
                      objective=args.objective, lr=args.lr, epochs=args.epochs, optimizer=args.optimizer,
                      momentum=args.momentum, seed=args.seed)
    if cfg.objective == "phenotype_regression" and y is None:
        raise ConfigError("phenotype_regression needs --phenotype")
    targets = raw_node_attributes(graph, X, y)[:, 2] if y is not None else None
    E = train_embedder(graph, node_feature_matrix(graph, X, y), cfg, targets)
    out = _outdir(args.out)
    write_embeddings_csv(E, out / "embeddings.csv")
    write_loss_csv(E, out / "loss.csv")
    (out / "run_manifest.json").write_text(json.dumps({"config": E.config, "seed": E.seed}, indent=2) + "\n")


def cmd_predict(args):
    ds = _load_dataset(args)
    graph = _graph(args)
    cfg = PredictorConfig(
        gnn=args.gnn, gnn_layers=args.gnn_layers, gnn_hidden=args.gnn_hidden, embedding_dim=args.dim,
        num_heads=args.heads, reduction=args.reduction, integration=args.integration,
        classifier_hidden=tuple(args.classifier_hidden), lr=args.lr, epochs=args.epochs,
        seeds=tuple(args.seed + i for i in range(args.repeats)), include_clinical=not args.exclude_clinical,
    )
    out = _outdir(args.out)
    if args.tune_grid:
        grid = json.loads(Path(args.tune_grid).read_text()) if Path(args.tune_grid).exists() else json.loads(
            args.tune_grid)
        cfg, board = tune_hyperparameters(ds, graph, grid, cfg, args.seed)
        write_leaderboard(board, out / "leaderboard.csv")
    report = predict_phenotype(ds, graph, cfg)
    report.write(out / "report.csv", out / "summary.txt")
    sys.stdout.write(report.summary())


def cmd_represent(args):
    E = read_embeddings_csv(args.embeddings)
    X = load_omics_csv(args.matrix, "matrix").columns(E.node_names)
    S = subject_representation(X, E, args.normalize)
    out = _outdir(args.out)
    write_subject_representation(X.subject_ids, S, out / "subject_representation.csv")


def cmd_export_coords(args):
    E = read_embeddings_csv(args.embeddings)
    write_coords_csv(E.node_names, pca_coords(E.values), args.out)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omicsgraph", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=1, help="worker cap (results do not depend on it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a YAML run configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ingest", help="load, align and export omics matrices")
    _add_dataset_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("select", help="score features and keep the top k")
    p.add_argument("--matrix", required=True, help="subjects-as-rows CSV")
    p.add_argument("--modality-tag", default="omics")
    p.add_argument("--phenotype", required=True)
    p.add_argument("--phenotype-column", default=None)
    p.add_argument("--phenotype-kind", choices=["categorical", "continuous"], default="categorical")
    p.add_argument("--method", choices=sorted(SELECTORS), default="anova")
    p.add_argument("--k", type=int, default=None, help="features to keep (default: all, ranked)")
    p.add_argument("--trees", type=int, default=100, help="forest size for random_forest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("build-net", help="construct or import a feature network")
    p.add_argument("--matrix", help="subjects-as-rows CSV")
    p.add_argument("--method", choices=["knn", "snn", "similarity", "correlation", "soft_threshold", "import"],
                   default="knn")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.add_argument("--correlation", choices=["pearson", "spearman"], default="pearson")
    p.add_argument("--mutual", action="store_true", help="mutual kNN instead of union")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--top-fraction", type=float, default=None)
    p.add_argument("--beta-grid", type=float, nargs="+", default=[float(b) for b in range(1, 21)])
    p.add_argument("--target-r2", type=float, default=0.8)
    p.add_argument("--edges", help="edge list to import")
    p.add_argument("--nodes", help="node-order file for --edges")
    p.add_argument("--graphml", action="store_true", help="also write GraphML")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_net)

    p = sub.add_parser("cluster", help="Louvain, personalized PageRank or the PPR/Louvain hybrid")
    _add_graph_args(p)
    p.add_argument("--method", choices=["louvain", "ppr", "hybrid"], default="louvain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=float, default=1.0)
    p.add_argument("--damping", type=float, default=0.85)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--mass-fraction", type=float, default=0.5)
    p.add_argument("--seed-nodes", nargs="+", default=None, help="uniform PPR seed set")
    p.add_argument("--matrix", help="subjects-as-rows CSV for phenotype seeding")
    p.add_argument("--phenotype")
    p.add_argument("--phenotype-column", default=None)
    p.add_argument("--phenotype-kind", choices=["categorical", "continuous"], default="categorical")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("embed", help="train GNN node embeddings")
    _add_graph_args(p)
    p.add_argument("--matrix", required=True, help="subjects-as-rows CSV whose columns include the graph nodes")
    p.add_argument("--phenotype")
    p.add_argument("--phenotype-column", default=None)
    p.add_argument("--phenotype-kind", choices=["categorical", "continuous"], default="categorical")
    p.add_argument("--kind", choices=["gcn", "gat", "sage", "gin"], default="gcn")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--objective", choices=["adjacency_reconstruction", "phenotype_regression"],
                   default="adjacency_reconstruction")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("predict", help="joint GNN + classifier phenotype prediction")
    _add_dataset_args(p)
    _add_graph_args(p)
    p.add_argument("--gnn", choices=["gcn", "gat", "sage", "gin"], default="gcn")
    p.add_argument("--gnn-layers", type=int, default=2)
    p.add_argument("--gnn-hidden", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--reduction", choices=["mean", "max", "autoencoder"], default="mean")
    p.add_argument("--integration", choices=["feature_weight", "concatenate"], default="feature_weight")
    p.add_argument("--classifier-hidden", type=int, nargs="+", default=[128])
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--repeats", type=int, default=10, help="number of split/init seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--exclude-clinical", action="store_true", help="leave clinical covariates out of the classifier")
    p.add_argument("--tune-grid", default=None, help="JSON object (or file) of value lists to search")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("represent", help="subject representations X @ E")
    p.add_argument("--matrix", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--normalize", choices=["row_unit", "none"], default="row_unit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("export-coords", help="2-D PCA coordinates of an embedding (node,x,y)")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_export_coords)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ConvergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
