"""Membership inference amplified by training-time poisoning, on plain numpy."""
from ._accel import HAS_NUMBA, backend
from .audit import (
    MiReport,
    MiScoreSet,
    lira_fit,
    lira_score,
    roc_and_tpr,
    run_mi_game,
    run_standard_mi,
    run_stealthy_mi,
    score_outputs,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, preset
from .data import Dataset, gen_blobs, load_csv, save_csv
from .defenses import DefenseConfig, DpsgdConfig, MmdConfig, obfuscate_output
from .encoder import EncodingSample, Sample, encode_batch, gen_encoding_sample, perturb_target
from .errors import PoisonMIError
from .model import Model, build_mlp, gradient_check
from .nn import SgdConfig
from .norm import DualNormLayer, EncodingSpec, NormLayer, route_mask
from .poison import AttackConfig, TrainReport, mgda_coefficients, train

__version__ = "0.1.0"
