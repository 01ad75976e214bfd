"""Two-tier computer-aided detection on volumetric images.

Tier 1 is a high-sensitivity blob detector over thresholded connected
components; tier 2 re-classifies each candidate by averaging a small
convolutional network's predictions over N randomly transformed
2D/2.5D/3D views. Includes a synthetic phantom cohort generator and
FROC/ROC evaluation with patient-level cross-validation.
"""

from .aggregate import CandidateScore, aggregate, score_cohort
from .candidates import (
    Candidate,
    balance_training_views,
    generate_candidates,
    inject_targets,
    label_candidates,
)
from .config import ExperimentConfig, default_config, load_config, smoke_config
from .convnet import (
    ConvLayerSpec,
    LocalLayerSpec,
    NetworkParams,
    NetworkSpec,
    TrainSchedule,
    forward,
    init_params,
    loss_and_gradients,
    predict,
    train,
)
from .errors import (
    CadetError,
    GenerationError,
    InvalidArgumentError,
    InvalidCandidateError,
    InvalidConfigError,
    InvalidDatasetError,
    TrainingDivergedError,
)
from .evaluation import (
    FoldAssignment,
    FrocCurve,
    fisher_exact,
    froc,
    kfold_split,
    roc_auc,
    sensitivity_at_fp,
)
from .phantom import PhantomCase, PhantomSpec, Target, generate_cohort, generate_phantom
from .pipeline import run_mode_matrix, run_n_sweep, run_pipeline
from .sampler import (
    Observation,
    SamplerConfig,
    ViewParams,
    apply_mean,
    compute_pixel_mean,
    extract_observation,
    extract_views,
    make_view_params,
)
from .volume import Volume, WindowedVolume, resample_isotropic, sample_trilinear, window_hu

__version__ = "0.1.0"
