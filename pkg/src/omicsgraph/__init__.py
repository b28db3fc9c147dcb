"""Network-based multi-omics analysis: ingestion, feature selection, feature
networks, community detection, GNN embeddings and phenotype prediction."""

__version__ = "0.1.0"
FORMAT_VERSION = "1"
