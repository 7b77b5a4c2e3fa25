"""Desk-scale simulation laboratory for CQI-assisted CSI feedback.

Pieces: a clustered-multipath CSI generator, wideband/subband CQI
computation, a CQI-conditioned transformer autoencoder with probabilistic
joint coding-modulation over an AWGN feedback link, Adam training on the
MSE objective, NMSE/SGCS reconstruction metrics, and k-NN entropy /
mutual-information estimators.
"""

from .autodiff import Tape, Tensor, backward
from .channel import Dataset, ScenarioConfig, generate_dataset, read_dataset, write_dataset
from .cqi import CqiReport, CqiTable, LinkBudget, subband_cqi, subcarrier_snr, wideband_cqi
from .metrics import knn_entropy, knn_mutual_information, nmse, sgcs
from .model import ModelConfig, init_params, feedback_forward
from .train import TrainConfig, evaluate, init_state

__all__ = [
    "Tape", "Tensor", "backward",
    "Dataset", "ScenarioConfig", "generate_dataset", "read_dataset", "write_dataset",
    "CqiReport", "CqiTable", "LinkBudget", "subband_cqi", "subcarrier_snr", "wideband_cqi",
    "knn_entropy", "knn_mutual_information", "nmse", "sgcs",
    "ModelConfig", "init_params", "feedback_forward",
    "TrainConfig", "evaluate", "init_state",
]

__version__ = "0.1.0"
