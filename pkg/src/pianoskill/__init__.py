"""Piano skill assessment from video and audio of a performance."""

from .datamodel import DatasetManifest, HandBBox, PerformanceRecord, Split, dataset_summary, load_manifest, save_manifest
from .dataset import SampleRef, make_samples
from .estimator import SkillAssessor
from .evalharness import evaluate, modality_scheme_grid
from .model import BranchId, ModelConfig, Modality, PianoSkillNet
from .objective import LossWeights, total_loss
from .sampling import ClipSpec, SampleSpec, SamplingScheme, count_samples, enumerate_samples
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BranchId",
    "ClipSpec",
    "DatasetManifest",
    "HandBBox",
    "LossWeights",
    "Modality",
    "ModelConfig",
    "PerformanceRecord",
    "PianoSkillNet",
    "SampleRef",
    "SampleSpec",
    "SamplingScheme",
    "SkillAssessor",
    "Split",
    "SyntheticSpec",
    "TrainConfig",
    "count_samples",
    "dataset_summary",
    "enumerate_samples",
    "evaluate",
    "generate_synthetic",
    "load_manifest",
    "make_samples",
    "save_manifest",
    "modality_scheme_grid",
    "total_loss",
    "train",
]
