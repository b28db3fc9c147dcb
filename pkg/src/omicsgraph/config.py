"""Declarative run configuration (YAML) with strict key checking.

Every stage block is optional; a run executes only the stages present, in
pipeline order.  Unknown keys anywhere are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from . import FORMAT_VERSION

STAGE_ORDER = ("ingest", "select", "network", "cluster", "embed", "predict", "represent")


class ConfigError(ValueError):
    pass


@dataclass
class ModalitySpec:
    path: str
    modality: str
    orientation: str = "subjects_as_rows"
    allow_duplicates: bool = True


@dataclass
class PhenotypeSpec:
    path: str
    column: Optional[str] = None
    kind: str = "categorical"


@dataclass
class IngestStage:
    modalities: list[ModalitySpec]
    phenotype: PhenotypeSpec
    aliquot_policy: str = "average"
    id_delimiter: Optional[str] = None
    id_keep: int = 3


@dataclass
class SelectStage:
    method: str = "anova"
    k: int = 6000
    k_per_modality: dict[str, int] = field(default_factory=dict)
    keep_all: list[str] = field(default_factory=list)


@dataclass
class NetworkStage:
    method: str = "knn"
    k: int = 15
    metric: str = "cosine"
    correlation: str = "pearson"
    mutual: bool = False
    threshold: Optional[float] = None
    top_fraction: Optional[float] = None
    beta_grid: list[float] = field(default_factory=lambda: [float(b) for b in range(1, 21)])
    target_r2: float = 0.8
    include: Optional[list[str]] = None
    matrix: Optional[str] = None
    edges: Optional[str] = None
    nodes: Optional[str] = None
    graphml: bool = False


@dataclass
class ClusterStage:
    method: str = "louvain"
    resolution: float = 1.0
    damping: float = 0.85
    tol: float = 1e-10
    max_iter: int = 1000
    mass_fraction: float = 0.5
    seed_nodes: Optional[list[str]] = None
    edges: Optional[str] = None
    nodes: Optional[str] = None


@dataclass
class EmbedStage:
    kind: str = "gcn"
    num_layers: int = 2
    hidden: int = 64
    dim: int = 32
    num_heads: int = 1
    objective: str = "adjacency_reconstruction"
    lr: float = 0.01
    epochs: int = 200
    optimizer: str = "sgd"
    momentum: float = 0.0


@dataclass
class PredictStage:
    gnn: str = "gcn"
    gnn_layers: int = 2
    gnn_hidden: int = 64
    embedding_dim: int = 32
    num_heads: int = 1
    reduction: str = "mean"
    integration: str = "feature_weight"
    weight_range: list[float] = field(default_factory=lambda: [0.5, 1.5])
    classifier_hidden: list[int] = field(default_factory=lambda: [128])
    optimizer: str = "adam"
    lr: float = 0.01
    epochs: int = 150
    split: list[float] = field(default_factory=lambda: [0.7, 0.15, 0.15])
    repeats: int = 10
    include_clinical: bool = True
    clinical_modality: str = "clinical"
    tune_grid: Optional[dict[str, list]] = None
    tune_random: Optional[int] = None


@dataclass
class RepresentStage:
    normalize: str = "row_unit"
    export_coords: bool = True
    matrix: Optional[str] = None
    embeddings: Optional[str] = None


@dataclass
class RunConfig:
    output_dir: str
    seed: int = 0
    format_version: str = FORMAT_VERSION
    ingest: Optional[IngestStage] = None
    select: Optional[SelectStage] = None
    network: Optional[NetworkStage] = None
    cluster: Optional[ClusterStage] = None
    embed: Optional[EmbedStage] = None
    predict: Optional[PredictStage] = None
    represent: Optional[RepresentStage] = None

    def stages(self) -> list[str]:
        return [s for s in STAGE_ORDER if getattr(self, s) is not None]


def _strip_optional(tp):
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0] if len(args) == 1 else tp
    return tp


def _build(tp, value, where: str):
    tp = _strip_optional(tp)
    if value is None:
        return None
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {unknown}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in value.items()}
        try:
            return tp(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    origin = typing.get_origin(tp)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        (inner,) = typing.get_args(tp) or (Any,)
        return [_build(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return dict(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return str(value)
    return value


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    # an empty stage block (`network:` with no keys) means "run with defaults"
    data = {k: ({} if k in STAGE_ORDER and v is None else v) for k, v in data.items()}
    cfg = _build(RunConfig, data, "config")
    if cfg.format_version != FORMAT_VERSION:
        raise ConfigError(f"format_version {cfg.format_version!r} is not supported (expected {FORMAT_VERSION!r})")
    if not cfg.stages():
        raise ConfigError("config has no stage blocks")
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)


def resolved_dict(cfg: RunConfig) -> dict:
    """Fully resolved config with absent stages omitted."""
    out = dataclasses.asdict(cfg)
    return {k: v for k, v in out.items() if not (k in STAGE_ORDER and v is None)}


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(resolved_dict(cfg), sort_keys=False)


def stage_seed(global_seed: int, stage: str) -> int:
    """Per-stage seed: first 32 bits of sha256("<stage>:<seed>")."""
    return int(hashlib.sha256(f"{stage}:{global_seed}".encode()).hexdigest()[:8], 16)
