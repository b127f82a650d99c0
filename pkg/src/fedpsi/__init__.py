"""Seedable federated-learning simulator with PSI-based client clustering."""

from .clustering import ClusterAssignment, FeatureMatrix, build_features, kmeans_pp, select_tau, silhouette_score, standardize
from .datasets import Dataset, SyntheticSpec, generate_synthetic, label_histogram, load_csv, write_csv
from .divergence import (
    Metric,
    PsiFeatures,
    client_psi_features,
    emd_label,
    federation_metric,
    global_pmf,
    hellinger,
    jensen_shannon,
    psi_client,
    smooth,
    wpsi,
)
from .evaluation import AccuracyReport, ecdf_export, evaluate_clients, fairness, global_accuracy, local_accuracy
from .partition import ClientPartition, partition_dirichlet, partition_similarity, split_train_test

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "ClientPartition",
    "ClusterAssignment",
    "Dataset",
    "FeatureMatrix",
    "Metric",
    "PsiFeatures",
    "SyntheticSpec",
    "build_features",
    "client_psi_features",
    "ecdf_export",
    "emd_label",
    "evaluate_clients",
    "fairness",
    "federation_metric",
    "generate_synthetic",
    "global_accuracy",
    "global_pmf",
    "hellinger",
    "jensen_shannon",
    "kmeans_pp",
    "label_histogram",
    "load_csv",
    "local_accuracy",
    "partition_dirichlet",
    "partition_similarity",
    "psi_client",
    "select_tau",
    "silhouette_score",
    "smooth",
    "split_train_test",
    "standardize",
    "wpsi",
    "write_csv",
]
