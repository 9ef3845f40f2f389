"""Second-order pruning guided by a source task, with zero-shot transfer probes."""
from .errors import (DimensionError, IllConditionedError, NumericalError, SingularCurvatureError, SizeLimitError,
                     SopaiError, TrainingDivergedError)
from .hessian import BlockInverse, CurvatureEstimate, exact_hessian, fisher_diag, hvp, kfac_factors
from .landscape import QuadraticTask, pca_project, toy_prune_demo
from .masking import SPARSITY_GRID, PruneMask, apply_mask, topk_mask
from .net import Batch, LayerSpec, Network, init_network
from .probe import EvalRecord, ProbeClassifier, fit_probe, run_protocol
from .runner import RunConfig, run, summarize
from .saliency import ScoreVector, compute_scores, obs_update, score_exact_obs
from .tasks import generate
from .trainer import SgdSchedule, pretrain, retrain

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "IllConditionedError", "NumericalError", "SingularCurvatureError", "SizeLimitError",
    "SopaiError", "TrainingDivergedError", "BlockInverse", "CurvatureEstimate", "exact_hessian", "fisher_diag",
    "hvp", "kfac_factors", "QuadraticTask", "pca_project", "toy_prune_demo", "SPARSITY_GRID", "PruneMask",
    "apply_mask", "topk_mask", "Batch", "LayerSpec", "Network", "init_network", "EvalRecord", "ProbeClassifier",
    "fit_probe", "run_protocol", "RunConfig", "run", "summarize", "ScoreVector", "compute_scores", "obs_update",
    "score_exact_obs", "generate", "SgdSchedule", "pretrain", "retrain",
]
