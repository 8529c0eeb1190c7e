"""MIMO detection with sphere, K-best and FS-Net aided tree search."""

from .baselines import (decode_osic_sd, detect_ml_bruteforce, detect_mmse, detect_osic,
                        detect_zf)
from .fsnet import FsNetParams, TrainConfig, load_params, save_params, train
from .kbest import KbestConfig, decode_fdl_ksd, decode_ksd, survivor_profile
from .linalg import OpCounter, RankDeficientError, qr_decompose
from .model import (QAM16, QAM64, QPSK, Constellation, RealSystem, bit_errors, quantize,
                    sample_instance)
from .sphere import DetectionResult, decode_fdl, decode_fp, decode_se, ml_metric

__all__ = [
    "Constellation", "DetectionResult", "FsNetParams", "KbestConfig", "OpCounter", "QAM16",
    "QAM64", "QPSK", "RankDeficientError", "RealSystem", "TrainConfig", "bit_errors",
    "decode_fdl", "decode_fdl_ksd", "decode_fp", "decode_ksd", "decode_osic_sd", "decode_se",
    "detect_ml_bruteforce", "detect_mmse", "detect_osic", "detect_zf", "load_params",
    "ml_metric", "qr_decompose", "quantize", "sample_instance", "save_params",
    "survivor_profile", "train",
]
