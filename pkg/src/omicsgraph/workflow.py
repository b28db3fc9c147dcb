"""Stage-by-stage execution of a :class:`RunConfig`.

Each stage writes into ``<output_dir>/<stage>/`` together with a
``stage_manifest.json`` holding sha256 digests of its inputs and outputs, so
downstream input digests can be matched against upstream output digests.
Everything is first written to a staging directory inside ``output_dir`` and
only moved into place once every stage has succeeded.
"""
from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__
from .community import (
    hybrid_ppr_louvain,
    louvain,
    personalized_pagerank,
    write_partition_csv,
    write_ppr_csv,
)
from .config import ConfigError, RunConfig, dump_config, resolved_dict, stage_seed
from .featselect import SELECTORS, phenotype_association, top_k, write_scores_csv
from .gnn.train import EmbedConfig, node_feature_matrix, raw_node_attributes, read_embeddings_csv, train_embedder, \
    write_embeddings_csv, write_loss_csv
from .ingest import (
    AlignedDataset,
    DataError,
    align_cohort,
    concat_modalities,
    load_omics_csv,
    load_phenotype_csv,
    write_omics_csv,
    write_phenotype_csv,
)
from .netbuild import (
    correlation_network,
    export_edgelist,
    export_graphml,
    import_network,
    knn_graph,
    read_node_order,
    similarity_network,
    snn_graph,
    soft_threshold_network,
    write_node_order,
)
from .pipeline import (
    PredictorConfig,
    pca_coords,
    predict_phenotype,
    subject_representation,
    tune_hyperparameters,
    write_leaderboard,
    write_subject_representation,
)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_coords_csv(names, coords: np.ndarray, path, label: str = "node") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{label},x,y\n")
        for n, (x, y) in zip(names, coords):
            fh.write(f"{n},{float(x)!r},{float(y)!r}\n")


def build_network(X, spec) -> tuple:
    """Dispatch a network-stage spec; returns (graph, extra report rows or None)."""
    m = spec.method
    if m == "knn":
        return knn_graph(X, spec.k, spec.metric, spec.mutual), None
    if m == "snn":
        return snn_graph(X, spec.k), None
    if m == "similarity":
        return similarity_network(X, spec.metric, spec.threshold, spec.top_fraction), None
    if m == "correlation":
        return correlation_network(X, spec.correlation, spec.threshold, spec.top_fraction), None
    if m == "soft_threshold":
        graph, _, report = soft_threshold_network(X, spec.beta_grid, spec.target_r2)
        return graph, report
    raise ConfigError(f"unknown network method {m!r}")


def predictor_config(stage, seed: int) -> PredictorConfig:
    base = stage_seed(seed, "predict")
    return PredictorConfig(
        gnn=stage.gnn, gnn_layers=stage.gnn_layers, gnn_hidden=stage.gnn_hidden, embedding_dim=stage.embedding_dim,
        num_heads=stage.num_heads, reduction=stage.reduction, integration=stage.integration,
        weight_range=tuple(stage.weight_range), classifier_hidden=tuple(stage.classifier_hidden),
        optimizer=stage.optimizer, lr=stage.lr, epochs=stage.epochs, split=tuple(stage.split),
        seeds=tuple(base + i for i in range(stage.repeats)), include_clinical=stage.include_clinical,
        clinical_modality=stage.clinical_modality,
    )


class Workflow:
    def __init__(self, cfg: RunConfig, base_dir="."):
        self.cfg = cfg
        self.base = Path(base_dir)
        self.dataset: AlignedDataset | None = None
        self.matrix = None
        self.graph = None
        self.embedding = None
        self.digests: dict[str, str] = {}  # "stage/file" -> sha256
        self.sources: dict[str, str] = {}  # logical artifact -> "stage/file" or external path

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    # -------------------------------------------------------------- validation

    def validate(self) -> None:
        """Static checks so a bad config fails before anything is written."""
        cfg = self.cfg
        have = set(cfg.stages())

        def need(stage, ok, what):
            if not ok:
                raise ConfigError(f"stage '{stage}' needs {what}")

        def exists(p, where):
            if p is not None and not self.path(p).exists():
                raise ConfigError(f"{where}: file not found: {p}")

        if cfg.ingest:
            for i, m in enumerate(cfg.ingest.modalities):
                exists(m.path, f"ingest.modalities[{i}]")
            exists(cfg.ingest.phenotype.path, "ingest.phenotype")
        if cfg.select:
            need("select", "ingest" in have, "the 'ingest' stage")
            if cfg.select.method not in SELECTORS:
                raise ConfigError(f"select.method must be one of {sorted(SELECTORS)}")
        if cfg.network:
            n = cfg.network
            if n.method not in ("knn", "snn", "similarity", "correlation", "soft_threshold", "import"):
                raise ConfigError(f"unknown network method {n.method!r}")
            if n.method == "import":
                need("network", n.edges is not None, "network.edges for method 'import'")
                exists(n.edges, "network.edges")
                exists(n.nodes, "network.nodes")
            else:
                need("network", "ingest" in have or n.matrix is not None, "the 'ingest' stage or network.matrix")
                exists(n.matrix, "network.matrix")
        if cfg.cluster:
            c = cfg.cluster
            need("cluster", "network" in have or c.edges is not None, "the 'network' stage or cluster.edges")
            exists(c.edges, "cluster.edges")
            exists(c.nodes, "cluster.nodes")
            if c.method == "hybrid" or (c.method == "ppr" and not c.seed_nodes):
                need("cluster", "ingest" in have, f"the 'ingest' stage for phenotype-seeded method '{c.method}'")
            if c.method not in ("louvain", "ppr", "hybrid"):
                raise ConfigError("cluster.method must be louvain, ppr or hybrid")
        if cfg.embed:
            need("embed", "network" in have, "the 'network' stage")
            need("embed", "ingest" in have or (cfg.network and cfg.network.matrix), "a subject matrix ('ingest' stage)")
            try:
                EmbedConfig(kind=cfg.embed.kind, objective=cfg.embed.objective, epochs=cfg.embed.epochs)
            except ValueError as exc:
                raise ConfigError(f"embed: {exc}") from None
            if cfg.embed.objective == "phenotype_regression":
                need("embed", "ingest" in have, "the 'ingest' stage for phenotype_regression")
        if cfg.predict:
            need("predict", "ingest" in have, "the 'ingest' stage")
            need("predict", "network" in have, "the 'network' stage")
            try:
                predictor_config(cfg.predict, cfg.seed)
            except ValueError as exc:
                raise ConfigError(f"predict: {exc}") from None
        if cfg.represent:
            r = cfg.represent
            need("represent", "embed" in have or r.embeddings is not None, "the 'embed' stage or represent.embeddings")
            need("represent", "network" in have or r.matrix is not None, "a subject matrix (network stage or represent.matrix)")
            exists(r.embeddings, "represent.embeddings")
            exists(r.matrix, "represent.matrix")

    # -------------------------------------------------------------- helpers

    def _record(self, stage_dir: Path, stage: str, inputs: dict, params: dict, seed: int | None = None):
        outputs = {}
        for f in sorted(stage_dir.iterdir()):
            if f.name != "stage_manifest.json":
                outputs[f.name] = sha256_file(f)
                self.digests[f"{stage}/{f.name}"] = outputs[f.name]
        manifest = {
            "stage": stage,
            "format_version": FORMAT_VERSION,
            "seed": seed,
            "params": params,
            "inputs": inputs,
            "outputs": outputs,
        }
        (stage_dir / "stage_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def _input(self, key: str) -> dict:
        ref = self.sources[key]
        if ref in self.digests:
            return {key: {"ref": ref, "sha256": self.digests[ref]}}
        return {key: {"ref": ref, "sha256": sha256_file(self.path(ref))}}

    # -------------------------------------------------------------- stages

    def stage_ingest(self, out: Path):
        spec = self.cfg.ingest
        mats = [
            load_omics_csv(self.path(m.path), m.modality, m.orientation, m.allow_duplicates, spec.id_delimiter,
                           spec.id_keep)
            for m in spec.modalities
        ]
        ph = load_phenotype_csv(self.path(spec.phenotype.path), spec.phenotype.column, spec.phenotype.kind)
        self.dataset = align_cohort(mats, ph, spec.aliquot_policy)
        for m in self.dataset.modalities:
            write_omics_csv(m, out / f"{m.modality}.csv")
        write_phenotype_csv(self.dataset.phenotype, out / "phenotype.csv")
        (out / "provenance.txt").write_text(self.dataset.provenance.report(), encoding="utf-8")
        inputs = {}
        for m in spec.modalities:
            inputs[f"modality:{m.modality}"] = {"ref": m.path, "sha256": sha256_file(self.path(m.path))}
        inputs["phenotype"] = {"ref": spec.phenotype.path, "sha256": sha256_file(self.path(spec.phenotype.path))}
        self._record(out, "ingest", inputs, dataclasses.asdict(spec))
        for m in self.dataset.modalities:
            self.sources[f"modality:{m.modality}"] = f"ingest/{m.modality}.csv"
        self.sources["phenotype"] = "ingest/phenotype.csv"

    def stage_select(self, out: Path):
        spec = self.cfg.select
        seed = stage_seed(self.cfg.seed, "select")
        ds = self.dataset
        inputs = {}
        kept = []
        for m in ds.modalities:
            inputs.update(self._input(f"modality:{m.modality}"))
            scores = SELECTORS[spec.method](m, ds.phenotype, seed)
            write_scores_csv(scores, out / f"scores_{m.modality}.csv")
            if m.modality in spec.keep_all:
                names = list(m.feature_names)
            else:
                # a k larger than the modality keeps every feature
                k = min(spec.k_per_modality.get(m.modality, spec.k), len(scores))
                names = top_k(scores, k)
                names = [n for n in m.feature_names if n in set(names)]  # keep original column order
            (out / f"selected_{m.modality}.txt").write_text("".join(f"{n}\n" for n in names), encoding="utf-8")
            sub = m.columns(names)
            write_omics_csv(sub, out / f"{m.modality}.csv")
            kept.append(sub)
        inputs.update(self._input("phenotype"))
        self.dataset = AlignedDataset(tuple(kept), ds.phenotype, ds.provenance)
        self._record(out, "select", inputs, dataclasses.asdict(spec), seed)
        for m in kept:
            self.sources[f"modality:{m.modality}"] = f"select/{m.modality}.csv"

    def _network_matrix(self, spec):
        """Subject matrix for graph building and the logical inputs it came from."""
        if spec.matrix is not None:
            self.sources["matrix"] = spec.matrix
            return load_omics_csv(self.path(spec.matrix), "matrix"), ["matrix"]
        clinical = self.cfg.predict.clinical_modality if self.cfg.predict else "clinical"
        include = spec.include or [m.modality for m in self.dataset.modalities if m.modality != clinical]
        return concat_modalities(self.dataset, include), [f"modality:{t}" for t in include]

    def stage_network(self, out: Path):
        spec = self.cfg.network
        inputs = {}
        report = None
        if spec.method == "import":
            nodes = read_node_order(self.path(spec.nodes)) if spec.nodes else None
            self.graph = import_network(self.path(spec.edges), nodes)
            inputs["edges"] = {"ref": spec.edges, "sha256": sha256_file(self.path(spec.edges))}
            if self.dataset is not None:
                self.matrix = concat_modalities(self.dataset).columns(self.graph.node_names)
        else:
            X, keys = self._network_matrix(spec)
            for key in keys:
                inputs.update(self._input(key))
            self.graph, report = build_network(X, spec)
            self.matrix = X
            if spec.matrix is None:
                write_omics_csv(X, out / "matrix.csv")
        export_edgelist(self.graph, out / "edges.csv")
        write_node_order(self.graph, out / "nodes.txt")
        if spec.graphml:
            export_graphml(self.graph, out / "graph.graphml")
        if report is not None:
            with open(out / "scale_free_fit.csv", "w", encoding="utf-8") as fh:
                fh.write("beta,r2,slope,mean_connectivity\n")
                for f in report:
                    fh.write(f"{f.beta!r},{f.r2!r},{f.slope!r},{f.mean_connectivity!r}\n")
        params = dataclasses.asdict(spec)
        params["graph_meta"] = {k: v for k, v in self.graph.meta.items() if k != "path"}
        params["flagged_nodes"] = list(self.graph.flags)
        self._record(out, "network", inputs, params)
        self.sources["graph"] = "network/edges.csv"
        if self.matrix is not None and spec.method != "import" and spec.matrix is None:
            self.sources["matrix"] = "network/matrix.csv"

    def _graph_for(self, edges, nodes):
        if edges is not None:
            self.sources["graph"] = edges
            return import_network(self.path(edges), read_node_order(self.path(nodes)) if nodes else None)
        return self.graph

    def stage_cluster(self, out: Path):
        spec = self.cfg.cluster
        seed = stage_seed(self.cfg.seed, "cluster")
        graph = self._graph_for(spec.edges, spec.nodes)
        inputs = self._input("graph")
        if spec.method == "louvain":
            part = louvain(graph, seed, spec.resolution)
            write_partition_csv(part, out / "partition.csv")
            (out / "modularity.txt").write_text(f"{part.modularity!r}\n", encoding="utf-8")
        elif spec.method == "ppr":
            if spec.seed_nodes:
                seeds = {n: 1.0 / len(spec.seed_nodes) for n in spec.seed_nodes}
            else:
                X = concat_modalities(self.dataset).columns(graph.node_names)
                assoc = phenotype_association(X.values, self.dataset.phenotype)
                if assoc.sum() <= 0:
                    raise DataError("no phenotype association to seed PPR with")
                seeds = assoc / assoc.sum()
                inputs.update(self._input("phenotype"))
            ppr = personalized_pagerank(graph, seeds, spec.damping, spec.tol, spec.max_iter)
            write_ppr_csv(ppr, out / "ppr.csv")
        else:
            X = concat_modalities(self.dataset).columns(graph.node_names)
            res = hybrid_ppr_louvain(graph, X, self.dataset.phenotype, spec.mass_fraction, seed, spec.damping,
                                     spec.resolution)
            write_ppr_csv(res.ppr, out / "ppr.csv")
            write_partition_csv(res.partition, out / "partition.csv")
            (out / "retained.txt").write_text("".join(f"{n}\n" for n in res.retained), encoding="utf-8")
            (out / "modularity.txt").write_text(f"{res.partition.modularity!r}\n", encoding="utf-8")
            inputs.update(self._input("phenotype"))
        self._record(out, "cluster", inputs, dataclasses.asdict(spec), seed)

    def stage_embed(self, out: Path):
        spec = self.cfg.embed
        seed = stage_seed(self.cfg.seed, "embed")
        graph = self.graph
        X = self.matrix.columns(graph.node_names)
        y = None
        if self.dataset is not None and self.dataset.subject_ids == X.subject_ids:
            y = self.dataset.phenotype
        attrs = node_feature_matrix(graph, X, y)
        targets = raw_node_attributes(graph, X, y)[:, 2] if spec.objective == "phenotype_regression" else None
        ecfg = EmbedConfig(**dataclasses.asdict(spec), seed=seed)
        self.embedding = train_embedder(graph, attrs, ecfg, targets)
        write_embeddings_csv(self.embedding, out / "embeddings.csv")
        write_loss_csv(self.embedding, out / "loss.csv")
        inputs = {**self._input("graph"), **self._input("matrix")}
        if y is not None:
            inputs.update(self._input("phenotype"))
        self._record(out, "embed", inputs, dataclasses.asdict(spec), seed)
        self.sources["embeddings"] = "embed/embeddings.csv"

    def stage_predict(self, out: Path):
        spec = self.cfg.predict
        cfg = predictor_config(spec, self.cfg.seed)
        inputs = {**self._input("graph"), **self._input("phenotype")}
        for m in self.dataset.modalities:
            inputs.update(self._input(f"modality:{m.modality}"))
        if spec.tune_grid:
            grid = dict(spec.tune_grid)
            cfg, board = tune_hyperparameters(self.dataset, self.graph, grid, cfg,
                                              stage_seed(self.cfg.seed, "tune"), spec.tune_random)
            write_leaderboard(board, out / "leaderboard.csv")
        report = predict_phenotype(self.dataset, self.graph, cfg)
        report.write(out / "report.csv", out / "summary.txt")
        with open(out / "node_weights.csv", "w", encoding="utf-8") as fh:
            if report.runs[0].node_weights is not None:
                fh.write("node," + ",".join(f"seed_{r.seed}" for r in report.runs) + "\n")
                for i, n in enumerate(report.node_names):
                    fh.write(n + "," + ",".join(repr(float(r.node_weights[i])) for r in report.runs) + "\n")
        self._record(out, "predict", inputs, dataclasses.asdict(spec), cfg.seeds[0])

    def stage_represent(self, out: Path):
        spec = self.cfg.represent
        if spec.embeddings is not None:
            E = read_embeddings_csv(self.path(spec.embeddings))
            self.sources["embeddings"] = spec.embeddings
        else:
            E = self.embedding
        if spec.matrix is not None:
            X = load_omics_csv(self.path(spec.matrix), "matrix")
            self.sources["matrix"] = spec.matrix
        else:
            X = self.matrix
        X = X.columns(E.node_names)
        S = subject_representation(X, E, spec.normalize)
        write_subject_representation(X.subject_ids, S, out / "subject_representation.csv")
        if spec.export_coords:
            write_coords_csv(E.node_names, pca_coords(E.values), out / "embedding_coords.csv")
            write_coords_csv(X.subject_ids, pca_coords(S), out / "subject_coords.csv", label="subject")
        inputs = {**self._input("embeddings"), **self._input("matrix")}
        self._record(out, "represent", inputs, dataclasses.asdict(spec))

    # -------------------------------------------------------------- driver

    def run(self) -> Path:
        self.validate()
        outdir = self.path(self.cfg.output_dir).resolve()
        outdir.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=outdir))
        try:
            for stage in self.cfg.stages():
                d = staging / stage
                d.mkdir()
                getattr(self, f"stage_{stage}")(d)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        (staging / "resolved_config.yaml").write_text(dump_config(self.cfg), encoding="utf-8")
        manifest = {
            "format_version": FORMAT_VERSION,
            "package_version": __version__,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "stages": self.cfg.stages(),
            "config": resolved_dict(self.cfg),
            "artifacts": dict(sorted(self.digests.items())),
        }
        (staging / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        for item in sorted(staging.iterdir()):
            target = outdir / item.name
            if target.is_dir():
                shutil.rmtree(target)
            item.replace(target)
        staging.rmdir()
        return outdir
