"""Randomized resize-and-pad defense against gradient-based adversarial attacks.

A small reverse-mode autodiff engine drives a size-agnostic CNN, three
attacks (FGSM, DeepFool, Carlini-Wagner L2), the randomization defense and
an evaluation harness with deterministic, worker-count-independent results.
"""

from .attacks import AttackConfig, AttackResult, attack_batch, cw_l2, deepfool, fgsm, run_attack
from .classifier import (
    ModelArch,
    ModelWeights,
    accuracy,
    adversarial_train,
    forward_logits,
    init_model,
    predict,
    select_correct_subset,
    train,
)
from .config import ExperimentConfig, load_config, parse_config
from .data import LabeledDataset, make_synthetic
from .defense import (
    ColorJitter,
    PatternSpec,
    RandomizationParams,
    apply_pattern,
    apply_patterns,
    count_patterns,
    enumerate_patterns,
    randomized_predict,
    sample_pattern,
)
from .errors import AdvRandError, ConfigError, ContractError, DimensionError, FormatError, NumericError
from .fileio import load_raster, load_weights, save_raster, save_weights
from .harness import (
    ScenarioReport,
    ScenarioSpec,
    default_ensemble,
    ensemble_target_accuracy,
    make_ensemble_pattern_target,
    make_single_pattern_target,
    make_vanilla_target,
    normalized_score,
    run_diagnostic_one_pixel_pad,
    run_diagnostic_one_pixel_resize,
    run_scenario,
)
from .report import emit_table
from .tensor import Tensor, backward, grad, vjp

__version__ = "0.1.0"
