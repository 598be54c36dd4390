"""Adaptive PID neural network control of CSTR benchmarks."""
from .controller import AdaptationConfig, AdaptationMode, ControllerState, PidGains, controller_step
from .config import ExperimentConfig, default_config, load_config
from .harness import compare_modes, run_experiment
from .margin import FrequencyGrid, MarginEstimate, TransferFunction, pid_tf, stability_margin
from .neural_model import NarxSpec, NeuralModel, identify, nn_forward, output_input_sensitivity

__version__ = "0.1.0"
