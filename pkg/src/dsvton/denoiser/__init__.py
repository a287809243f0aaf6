from .gradcheck import gradient_check, gradient_check_report
from .network import ReferenceFeatures, TrainBatch, loss_and_grad, predict_noise, reference_encode
from .optim import AdamState, adamw_step
from .params import DenoiserParams, NetworkConfig, init_params

__all__ = [
    "AdamState",
    "DenoiserParams",
    "NetworkConfig",
    "ReferenceFeatures",
    "TrainBatch",
    "adamw_step",
    "gradient_check",
    "gradient_check_report",
    "init_params",
    "loss_and_grad",
    "predict_noise",
    "reference_encode",
]
