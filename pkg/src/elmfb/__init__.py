"""Learned (ELM) and despreading receivers for superimposed CSI feedback."""

from .baseline import baseline_receive
from .elm import (
    BnStats,
    CascadeReceiver,
    ElmSubnet,
    SharedWeightPool,
    TrainingSet,
    bn_apply,
    bn_fit,
    cancel_csi,
    cancel_ulus,
    hidden_output,
    infer,
    slice_weights,
    train_cascade,
    train_output_weights,
)
from .harness import ExperimentConfig, ResultRow, emit_results, generate_training_set, run_sweep
from .metrics import MetricsRecord, OverheadReport, accumulate_ber, nmse, overhead_report, snr_to_sigma2
from .numerics import RngStream, gaussian_complex, gaussian_real_matrix, matmul, pinv
from .phy import (
    ChannelRealization,
    PowerProfile,
    SpreadingMatrix,
    build_walsh,
    coarse_estimate,
    despread,
    qpsk_demodulate,
    qpsk_modulate,
    superimpose,
    uplink_transmit,
)

__version__ = "0.1.0"
