"""Co-supervised weak-to-strong learning with hierarchies of specialized linear teachers."""

from .assignment import (AssignmentPosterior, AssignmentPrior, assign, assignment_accuracy, oracle_assign,
                         posterior, teacher_likelihood)
from .cosupervise import (CslConfig, PgrReport, SweepResult, Task, capability_gap_sweep, ensemble_baselines,
                          pgr, prepare_task, run_csl, run_vanilla, supervisor_count_sweep, train_ceiling)
from .denoise import (DenoiseConfig, FilterVerdicts, filter_annotated_set, local_global_check,
                      small_loss_filter, teacher_student_check, train_local_students, two_phase_denoise)
from .hierarchy import (AnnotatedSet, Scope, Supervisor, SupervisorHierarchy, annotate,
                        build_class_partition_levels, build_domain_group_levels, collective_predict,
                        train_hierarchy)
from .probe import (LinearHead, Predictions, TrainConfig, distance, evaluate_topk, forward, init_head,
                    loss_and_grad, train_probe)
from .store import DatasetSplit, DatasetView, EmbeddingDataset, load_dataset, restrict, save_dataset, split_dataset
from .synthgen import SynthSpec, default_benchmark, generate

__version__ = "0.1.0"
