from .dbscan import DBSCAN, NOISE, auto_eps, dbscan, pairwise_distances
from .metrics import (
    dominant_labels,
    group_cosine,
    mean_in_cluster_cosine,
    mean_in_object_cosine,
    purity,
    silhouette,
    silhouette_samples,
    unique_label_ratio,
)
from .sweep import (
    REPORT_COLUMNS,
    ClusterReport,
    EmbeddingSet,
    cluster_layer,
    dataset_mean,
    layer_sweep,
    write_report_csv,
    write_report_json,
    write_tsne_csv,
)
from .tsne import ExactTSNE, joint_probabilities, kl_divergence, student_q, tsne
