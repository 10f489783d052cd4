from .dataset import balance, load_and_balance, split
from .metrics import evaluate, metrics_from_counts, predict
from .pipeline import (
    ABLATION_VARIANTS,
    PreparedData,
    RunAllResult,
    SeedRun,
    prepare_data,
    run_ablation,
    run_all,
    run_seed,
    run_transfer,
)
from .reference import AVERAGE_F1, F1_TOLERANCE, TRANSFER, reference_for
from .repeats import run_repeats, summarize
from .report import (
    distillation_comparison,
    emit_report,
    invert_min_max,
    min_max_scale,
    reference_table,
    update_manifest,
)
from .synthetic import TRIGGER_TOKENS, make_synthetic_corpus, write_synthetic_corpus
from .training import LrSearchResult, batch_indices, fit, grid_search_lr, train_student_baseline, train_teacher
from .transfer import TransferResult, transfer_finetune
