from .distill import (
    DistillResult,
    DistillState,
    LayerStats,
    activation_stats,
    balanced_targets,
    capture_target_stats,
    check_label_coverage,
    distill_student,
    forward_with_stats,
    init_noise,
    init_pseudo,
    input_prior,
    scheduled_lr,
    statistic_taps,
    stats_loss,
    synthesize_pseudo,
    write_history_csv,
)
from .losses import KDLosses, kd_losses
from .student import StudentModel, build_student
from .teacher import NUM_CLASSES, ConvBlock, TeacherModel, build_teacher, count_params
