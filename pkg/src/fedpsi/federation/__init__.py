"""Federated training: models, local updates, server aggregation."""

from .models import (
    ModelParameters,
    ModelShape,
    init_params,
    load_params,
    loss_and_grad,
    predict,
    save_params,
    scores,
)
from .training import (
    Method,
    RoundLog,
    TrainConfig,
    centralized_baseline,
    fedavg_aggregate,
    fedavgm_server_update,
    local_train,
    run_clust_psi_pfl,
    run_federation,
    sample_size,
)

__all__ = [
    "Method",
    "ModelParameters",
    "ModelShape",
    "RoundLog",
    "TrainConfig",
    "centralized_baseline",
    "fedavg_aggregate",
    "fedavgm_server_update",
    "init_params",
    "load_params",
    "local_train",
    "loss_and_grad",
    "predict",
    "run_clust_psi_pfl",
    "run_federation",
    "sample_size",
    "save_params",
    "scores",
]
