"""Spiking neural network backends: neurons, architectures, training, storage."""

from .neurons import LIFParams, LIFState, lif_step, spike_fn, spike_ramp, \
    surrogate_grad
from .networks import ConvSpikingNet, RecurrentSpikingNet, SpikeTraces, \
    calibrate_count_norm, calibrate_input_scale, csnn_forward, \
    pattern_to_sequence, rsnn_forward, sweep_clock_init
from .training import TrainLogRow, best_eval_mae, bptt_update, evaluate_net, \
    make_optimizer, mse_loss, score_rates, train_model, write_training_log
from .checkpoint import load_checkpoint, load_net, save_checkpoint, save_net

__all__ = [
    "LIFParams", "LIFState", "lif_step", "spike_fn", "spike_ramp",
    "surrogate_grad", "ConvSpikingNet", "RecurrentSpikingNet", "SpikeTraces",
    "calibrate_count_norm", "calibrate_input_scale", "csnn_forward",
    "pattern_to_sequence", "rsnn_forward", "sweep_clock_init",
    "TrainLogRow", "best_eval_mae",
    "bptt_update", "evaluate_net", "make_optimizer", "mse_loss", "score_rates",
    "train_model", "write_training_log", "load_checkpoint", "load_net",
    "save_checkpoint", "save_net",
]
