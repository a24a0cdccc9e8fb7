"""Active learning with a jointly trained teacher/student pair.

The student imitates the teacher's intermediate attention maps; the
disagreement between the two on unlabeled samples is the acquisition score.
"""

from .datasets import Dataset, make_blobs
from .distill import DistillConfig, train_cycle
from .experiment import ExperimentConfig, run_experiment, selected_data_study
from .nets import ArchConfig, BlockModel, build_pair
from .selection import STRATEGIES, BudgetSchedule
from .uncertainty import kl_divergence, score

__all__ = [
    "ArchConfig",
    "BlockModel",
    "BudgetSchedule",
    "Dataset",
    "DistillConfig",
    "ExperimentConfig",
    "STRATEGIES",
    "build_pair",
    "kl_divergence",
    "make_blobs",
    "run_experiment",
    "score",
    "selected_data_study",
    "train_cycle",
]
__version__ = "0.1.0"
