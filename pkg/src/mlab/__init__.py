"""Desk-scale lab for representation alignment (linear CKA) under forgetting,
compression and teacher mismatch, with self-distillation recovery."""

from .backend import DEFAULT as BACKEND
from .cka import (
    ActivationMatrix,
    AlignmentScore,
    KernelMatrix,
    center_kernel,
    cka,
    cka_profile,
    hsic,
    last_hidden_cka,
    linear_kernel,
    standardize,
)
from .config import RunConfig, load_config, loads, save_config
from .degrade import DegradationReport, DegradationSpec, degradation_report, prune, quantize
from .errors import *  # noqa: F401,F403
from .formats import load_actmat, load_checkpoint, save_actmat, save_checkpoint
from .nn import (
    ArchitectureDescriptor,
    Batch,
    Checkpoint,
    DistillConfig,
    cross_entropy_loss,
    distill_loss,
    evaluate,
    forward,
    init,
    predict,
    train,
)
from .pipelines import RunRecord, misalignment_correlation, run_pipeline
from .report import export_metrics, load_record, read_metrics, save_record
from .tasks import TaskSpec, generate

__version__ = "0.1.0"
