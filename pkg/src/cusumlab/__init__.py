"""cusumlab: Monte-Carlo laboratory for centralized and decentralized CUSUM
change detection (Q-CUSUM, D-CUSUM, Mei's rule, min-CUSUM) with full
calibration of sensor thresholds, quantizer levels, message log-likelihood
ratios, and fusion thresholds."""

from .backends import BACKEND, COMPILED
from .calibration import (
    CalibrationError,
    CalibrationRecord,
    FalseAlarmTarget,
    ThresholdCache,
    calibrate_many,
    calibrate_threshold,
    nu_tilde_bound,
    sprt_cusum_oracle,
)
from .detectors import (
    CENTRALIZED,
    DCUSUM,
    MEI,
    MINCUSUM,
    QCUSUM,
    LocalCusumBank,
    QcusumConfig,
)
from .model import (
    BROWNIAN,
    GAUSSIAN,
    NEVER,
    KLNumbers,
    PathBundle,
    SensorModel,
    ct_closed_forms,
    generate_paths,
    kl_numbers,
    s_function,
)
from .quantizer import QuantizerConfig, design_for_model
from .simharness import (
    ExperimentSpec,
    OCPoint,
    SweepResult,
    communication_account,
    estimate_delay,
    estimate_false_alarm,
    oc_sweep,
    verify_theorem1,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "COMPILED",
    "BROWNIAN",
    "GAUSSIAN",
    "NEVER",
    "CENTRALIZED",
    "DCUSUM",
    "MEI",
    "MINCUSUM",
    "QCUSUM",
    "CalibrationError",
    "CalibrationRecord",
    "ExperimentSpec",
    "FalseAlarmTarget",
    "KLNumbers",
    "LocalCusumBank",
    "OCPoint",
    "PathBundle",
    "QcusumConfig",
    "QuantizerConfig",
    "SensorModel",
    "SweepResult",
    "ThresholdCache",
    "calibrate_many",
    "calibrate_threshold",
    "communication_account",
    "ct_closed_forms",
    "design_for_model",
    "estimate_delay",
    "estimate_false_alarm",
    "generate_paths",
    "kl_numbers",
    "nu_tilde_bound",
    "oc_sweep",
    "s_function",
    "sprt_cusum_oracle",
    "verify_theorem1",
]
