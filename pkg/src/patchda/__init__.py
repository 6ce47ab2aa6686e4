"""Two-stream video domain adaptation with learned informative-patch selection.

The pipeline glances at every frame with a cheap network, lets a policy pick a
patch centre, crops it with a differentiable bilinear sampler, encodes the
patch with a focuser, fuses local and global features and finally aligns
source and target domains with multi-level adversarial classifiers over a
temporal relation module.
"""

from patchda.errors import (
    CheckpointError,
    DataError,
    IngestionError,
    InvalidConfigError,
    InvalidInputError,
    LabelAccessError,
    TrainingAbort,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DataError",
    "IngestionError",
    "InvalidConfigError",
    "InvalidInputError",
    "LabelAccessError",
    "TrainingAbort",
]
