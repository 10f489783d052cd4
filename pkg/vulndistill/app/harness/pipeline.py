import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from ..config import PipelineConfig
from ..embed import AssembledDataset, EmbeddingMatrix, assemble_corpus, train_cbow
from ..errors import ConfigError
from ..netdistill import StudentModel, TeacherModel, build_student, distill_student, write_history_csv
from ..numcore import resolve_dtype, save_checkpoint, seed_everything
from ..preprocess import (
    Vocabulary,
    build_vocab,
    load_patterns,
    preprocess_contract,
    preprocess_directory,
    write_corpus,
)
from ..schemas import DatasetManifest, RawContract, RunReport, SampleRecord, TokenizedContract
from .dataset import balance, split
from .metrics import evaluate
from .report import emit_report, update_manifest
from .repeats import run_repeats, summarize
from .synthetic import make_synthetic_corpus, write_synthetic_corpus
from .training import train_student_baseline, train_teacher
from .transfer import TransferResult, transfer_finetune

logger = logging.getLogger(__name__)

ABLATION_VARIANTS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "no-query-enhancement": {"use_query_enhancement": False},
    "no-external-memory": {"use_external_memory": False},
    "no-multistage": {"use_multistage": False},
}


@dataclass
class PreparedData:
    corpus: List[TokenizedContract]
    vocab: Vocabulary
    embedding: EmbeddingMatrix
    manifest: DatasetManifest
    dataset: AssembledDataset
    train: AssembledDataset
    test: AssembledDataset

    def save(self, out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        return [
            write_corpus(self.corpus, out_dir / "corpus.jsonl"),
            self.vocab.save(out_dir / "vocab.tsv"),
            self.embedding.save(out_dir / "embedding"),
            self.dataset.save(out_dir / "dataset"),
        ]


def prepare_data(config: PipelineConfig, raws: Optional[Sequence[RawContract]] = None,
                 contracts_dir: Optional[Union[str, Path]] = None, labels_path: Optional[Union[str, Path]] = None,
                 vocab: Optional[Vocabulary] = None, embedding: Optional[EmbeddingMatrix] = None) -> PreparedData:
    """Preprocess, embed, balance and split one vulnerability class.

    Pass ``vocab`` and ``embedding`` to reuse an existing embedding space
    (transfer to a new class); otherwise both are trained on this corpus.
    """
    pre = config.preprocess
    patterns = load_patterns(pre.patterns_file, config.vulnerability)
    if raws is not None:
        corpus = [preprocess_contract(raw, patterns, pre.span_only) for raw in raws]
    elif contracts_dir is None or labels_path is None:
        raise ConfigError("preprocessing a contract directory needs both contracts_dir and labels_path")
    else:
        corpus = preprocess_directory(contracts_dir, labels_path, patterns, config.vulnerability,
                                      pre.span_only, pre.n_jobs)

    emb = config.embed
    if vocab is None or embedding is None:
        vocab = build_vocab(corpus, pre.min_count)
        embedding = train_cbow(corpus, vocab, emb.dim, emb.window, emb.negatives, emb.epochs,
                               emb.learning_rate, config.seed, emb.batch_size)

    manifest = balance([SampleRecord(source_id=c.path, flag=c.label.flag) for c in corpus],
                       config.vulnerability, config.seed)
    kept = set(manifest.source_ids())
    dataset = assemble_corpus([c for c in corpus if c.path in kept], embedding, vocab, emb.seq_len, emb.repeat,
                              config.vulnerability, emb.repeat_mode, emb.pe_after_repeat, pre.n_jobs)
    train_manifest, test_manifest = split(manifest, config.train.split_ratio, config.seed)
    return PreparedData(
        corpus=corpus, vocab=vocab, embedding=embedding, manifest=manifest, dataset=dataset,
        train=dataset.subset(train_manifest.source_ids()), test=dataset.subset(test_manifest.source_ids()),
    )


# ---------------------------
# One seed: teacher, baseline, distilled student
# ---------------------------
@dataclass
class SeedRun:
    teacher: TeacherModel
    baseline: StudentModel
    student: StudentModel
    reports: Dict[str, RunReport] = field(default_factory=dict)


def run_seed(data: PreparedData, config: PipelineConfig, seed: int, variant: Optional[str] = None) -> SeedRun:
    seed_everything(seed)
    suffix = f":{variant}" if variant else ""
    shape = (data.train.inputs.shape[1], data.train.inputs.shape[2])

    teacher, teacher_report = train_teacher(data.train, data.test, config, seed)
    baseline, baseline_report = train_student_baseline(data.train, data.test, config, seed)

    student = build_student(shape, config.student, seed).to(resolve_dtype(config.precision))
    result = distill_student(teacher, student, config.distill, shape, seed)
    student_report = RunReport(
        name=f"student-distilled{suffix}", config=config.model_dump(mode="json"),
        distill_history=result.state.history, metrics=evaluate(student, data.test), seed=seed,
    )
    logger.info("✅ Seed %d: teacher F1 %.4f, baseline F1 %.4f, distilled F1 %.4f", seed,
                teacher_report.metrics.f1, baseline_report.metrics.f1, student_report.metrics.f1)
    reports = {
        f"teacher{suffix}": teacher_report.model_copy(update={"name": f"teacher{suffix}"}),
        "student-baseline": baseline_report,
        f"student-distilled{suffix}": student_report,
    }
    return SeedRun(teacher, baseline, result.student, reports)


@dataclass
class RunAllResult:
    data: PreparedData
    last: SeedRun
    reports: List[RunReport]
    summaries: Dict[str, Dict[str, Dict[str, float]]]
    files: List[Path]


def run_all(config: PipelineConfig, out_dir: Union[str, Path], contracts_dir: Optional[Union[str, Path]] = None,
            labels_path: Optional[Union[str, Path]] = None, synthetic_n: int = 400) -> RunAllResult:
    """Whole pipeline over ``config.repeats.n`` seeds; a synthetic corpus is generated when no data is given."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)
    raws = None
    files: List[Path] = []
    if contracts_dir is None:
        raws = make_synthetic_corpus(synthetic_n, config.vulnerability, config.seed)
        _, labels_written = write_synthetic_corpus(raws, out_dir / "synthetic")
        files.append(labels_written)
    data = prepare_data(config, raws, contracts_dir, labels_path)
    files += data.save(out_dir)

    runs: List[SeedRun] = []

    def workflow(seed: int) -> RunReport:
        run = run_seed(data, config, seed)
        runs.append(run)
        return run.reports["student-distilled"]

    run_repeats(workflow, config.repeats.n, config.seed)

    reports: List[RunReport] = []
    for index, run in enumerate(runs):
        for report in run.reports.values():
            reports.append(report.model_copy(update={"repeat_index": index}))

    last = runs[-1]
    files.append(save_checkpoint(last.teacher, out_dir / "teacher", "teacher", {"seed": reports[-1].seed}))
    files.append(save_checkpoint(last.student, out_dir / "student", "student", {"seed": reports[-1].seed}))
    files.append(write_history_csv(last.reports["student-distilled"].distill_history, out_dir / "distill_history_last.csv"))

    summaries = {}
    for name in ("teacher", "student-baseline", "student-distilled"):
        summary = summarize([r for r in reports if r.name == name])
        summaries[name] = {"mean": summary.mean, "std": summary.std}
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as f:
        json.dump(summaries, f, indent=2, sort_keys=True)
    files.append(summary_path)

    update_manifest(out_dir, files, "run-all")
    files += emit_report(reports, out_dir, config.vulnerability, command="run-all")
    return RunAllResult(data, last, reports, summaries, files)


def run_ablation(config: PipelineConfig, out_dir: Union[str, Path], data: Optional[PreparedData] = None,
                 seed: Optional[int] = None, synthetic_n: int = 400) -> pd.DataFrame:
    """Teacher + distilled student with each fusion mechanism removed in turn."""
    out_dir = Path(out_dir)
    seed = config.seed if seed is None else seed
    if data is None:
        data = prepare_data(config, make_synthetic_corpus(synthetic_n, config.vulnerability, seed))

    reports: List[RunReport] = []
    rows = []
    for variant, flags in ABLATION_VARIANTS.items():
        logger.info("🔍 Ablation variant '%s'", variant)
        variant_config = config.model_copy(update={"fusion": config.fusion.model_copy(update=flags)})
        run = run_seed(data, variant_config, seed, variant)
        reports += [r for name, r in run.reports.items() if name != "student-baseline"]
        for name in (f"teacher:{variant}", f"student-distilled:{variant}"):
            rows.append({"variant": variant, "model": name.split(":")[0], **run.reports[name].metrics.as_row()})

    table = pd.DataFrame(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "ablation.csv"
    table.to_csv(table_path, index=False, float_format="%.6f")
    update_manifest(out_dir, [table_path], "ablate")
    emit_report(reports, out_dir, config.vulnerability, command="ablate")
    return table


def run_transfer(config: PipelineConfig, out_dir: Union[str, Path], student_ckpt: Union[str, Path],
                 vocab: Vocabulary, embedding: EmbeddingMatrix, raws: Optional[Sequence[RawContract]] = None,
                 contracts_dir: Optional[Union[str, Path]] = None, labels_path: Optional[Union[str, Path]] = None,
                 synthetic_n: int = 400) -> TransferResult:
    """Fine-tune a distilled student on ``config.transfer.target_class`` in the same embedding space."""
    target = config.model_copy(update={"vulnerability": config.transfer.target_class})
    if raws is None and contracts_dir is None:
        raws = make_synthetic_corpus(synthetic_n, target.vulnerability, config.seed)
    data = prepare_data(target, raws, contracts_dir, labels_path, vocab=vocab, embedding=embedding)
    result = transfer_finetune(student_ckpt, data.train, data.test, target, config.seed)

    out_dir = Path(out_dir)
    frozen = RunReport(name=f"frozen-{target.vulnerability}", config=target.model_dump(mode="json"),
                       metrics=result.frozen, seed=config.seed)
    emit_report([frozen, result.report], out_dir, target.vulnerability, command="transfer")
    update_manifest(out_dir, [save_checkpoint(result.student, out_dir / "student_transfer", "student")], "transfer")
    return result
