"""Dense autodiff core, GNN layers and the embedding trainer."""
from .autograd import Tensor
from .layers import (
    GATLayer,
    GCNLayer,
    GINLayer,
    GNNEncoder,
    GnnLayerConfig,
    GraphOperators,
    SAGELayer,
    gat_forward,
    gcn_forward,
    gin_forward,
    layer_stack,
    sage_forward,
)
from .train import (
    EmbedConfig,
    EmbeddingMatrix,
    NumericError,
    node_feature_matrix,
    read_embeddings_csv,
    train_embedder,
    write_embeddings_csv,
    write_loss_csv,
)
