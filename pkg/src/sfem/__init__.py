"""Sparse Fisher-EM clustering of movement cycles and trials."""

from .dataset import CycleDataset, SyntheticConfig, generate_synthetic, group_by_trial, load_cycles, write_cycles
from .errors import SfemError
from .fisher_em import (
    FitConfig,
    FitReport,
    e_step,
    f_step,
    fisher_criterion,
    fit,
    log_likelihood,
    m_step,
    plateau_choice,
    scatter_stats,
    sweep_k,
)
from .model import DlmParams, Variant, free_parameter_count, load_model, log_density, sample, save_model
from .pipeline import PipelineConfig, run_two_level, transition_features
from .sparse import relevance_profile, select_key_points, sparsify_projection

__version__ = "0.1.0"
