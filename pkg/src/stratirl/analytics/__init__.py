"""Strategy identification from per-match RKHS vectors."""

from .evaluation import ClusterReport, ConfusionMatrix, cluster_report, loo_evaluate, loo_predictions
from .hac import Dendrogram, Merge, cut_tree, hac_complete
from .labeled import (LabeledItem, LabeledSet, check_distance_matrix, distance_matrix,
                      distances_from_gram, matrix_csv)
from .svm import (BinarySvm, OvoSvm, SvmParams, check_gram, gaussian_of_distance, kkt_residual,
                  median_bandwidth, smo, svm_train_ovo)
from .tsne import TsneParams, TsneResult, embedding_csv, tsne

__all__ = [
    "BinarySvm", "ClusterReport", "ConfusionMatrix", "Dendrogram", "LabeledItem", "LabeledSet",
    "Merge", "OvoSvm", "SvmParams", "TsneParams", "TsneResult", "check_distance_matrix",
    "check_gram", "cluster_report", "cut_tree", "distance_matrix", "distances_from_gram",
    "embedding_csv", "gaussian_of_distance", "hac_complete", "kkt_residual", "loo_evaluate",
    "loo_predictions", "matrix_csv", "median_bandwidth", "smo", "svm_train_ovo", "tsne",
]
