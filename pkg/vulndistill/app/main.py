# main.py
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import click
import typer
from rich.console import Console
from rich.table import Table

from .config import LOG_LEVEL, OUT_DIR, PipelineConfig, configure_logging, load_config
from .embed import AssembledDataset, EmbeddingMatrix, assemble_corpus, train_cbow
from .errors import DatasetError, VulnDistillError
from .harness import (
    balance,
    emit_report,
    evaluate,
    grid_search_lr,
    make_synthetic_corpus,
    run_ablation,
    run_all,
    run_transfer,
    split,
    train_teacher,
    update_manifest,
    write_synthetic_corpus,
)
from .model_service import ModelService
from .netdistill import build_student, build_teacher, distill_student, write_history_csv
from .numcore import load_checkpoint, resolve_dtype, save_checkpoint, seed_everything
from .preprocess import (
    Vocabulary,
    build_vocab,
    load_patterns,
    preprocess_directory,
    read_corpus,
    write_corpus,
)
from .schemas import RunReport, SampleRecord

logger = logging.getLogger(__name__)
console = Console()

app = typer.Typer(help="Smart-contract vulnerability detection with data-free distillation.", no_args_is_help=True)


@dataclass
class State:
    config: PipelineConfig
    out: Path


@app.callback()
def setup(
    ctx: typer.Context,
    seed: Optional[int] = typer.Option(None, "--seed", help="Global seed."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config file."),
    out: Path = typer.Option(Path(OUT_DIR), "--out", help="Output directory."),
    log_level: str = typer.Option(LOG_LEVEL, "--log-level"),
):
    configure_logging(log_level)
    ctx.obj = State(load_config(str(config) if config else None, seed=seed), out)
    out.mkdir(parents=True, exist_ok=True)
    seed_everything(ctx.obj.config.seed)


# ---------------------------
# Helpers
# ---------------------------
def _load_split(out: Path) -> Tuple[AssembledDataset, AssembledDataset]:
    split_path = out / "split.json"
    if not split_path.is_file():
        raise DatasetError(f"no split under {out}; run 'embed' first")
    dataset = AssembledDataset.load(out / "dataset")
    with open(split_path, "r") as f:
        ids = json.load(f)
    return dataset.subset(ids["train"]), dataset.subset(ids["test"])


def _print_metrics(title: str, reports: List[RunReport]) -> None:
    table = Table(title=title)
    for column in ("name", "accuracy", "precision", "recall", "f1"):
        table.add_column(column)
    for r in reports:
        if r.metrics is None:
            continue
        m = r.metrics
        table.add_row(r.name, *(f"{v:.4f}" for v in (m.accuracy, m.precision, m.recall, m.f1)))
    console.print(table)


# ---------------------------
# Commands
# ---------------------------
@app.command("synth-corpus")
def synth_corpus(ctx: typer.Context, n: int = typer.Option(400, "--n"),
                 vulnerability: Optional[str] = typer.Option(None, "--vulnerability")):
    """Write a planted-pattern corpus (contracts/ + labels.csv)."""
    state: State = ctx.obj
    raws = make_synthetic_corpus(n, vulnerability or state.config.vulnerability, state.config.seed)
    contracts_dir, labels_path = write_synthetic_corpus(raws, state.out / "synthetic")
    update_manifest(state.out, [labels_path], "synth-corpus")
    logger.info("✅ Synthetic corpus in %s", contracts_dir.parent)


@app.command()
def preprocess(ctx: typer.Context, contracts: Path = typer.Option(..., "--contracts"),
               labels: Path = typer.Option(..., "--labels")):
    """Strip, annotate and tokenize contracts; build the vocabulary."""
    state: State = ctx.obj
    pre = state.config.preprocess
    patterns = load_patterns(pre.patterns_file, state.config.vulnerability)
    corpus = preprocess_directory(contracts, labels, patterns, state.config.vulnerability, pre.span_only, pre.n_jobs)
    vocab = build_vocab(corpus, pre.min_count)
    files = [write_corpus(corpus, state.out / "corpus.jsonl"), vocab.save(state.out / "vocab.tsv")]
    update_manifest(state.out, files, "preprocess")
    logger.info("✅ %d contracts, vocabulary of %d", len(corpus), len(vocab))


@app.command()
def embed(ctx: typer.Context):
    """Train CBOW, assemble the balanced dataset and fix the train/test split."""
    state: State = ctx.obj
    config = state.config
    corpus = read_corpus(state.out / "corpus.jsonl")
    vocab = Vocabulary.load(state.out / "vocab.tsv")
    e = config.embed
    embedding = train_cbow(corpus, vocab, e.dim, e.window, e.negatives, e.epochs, e.learning_rate,
                           config.seed, e.batch_size)
    manifest = balance([SampleRecord(source_id=c.path, flag=c.label.flag) for c in corpus],
                       config.vulnerability, config.seed)
    kept = set(manifest.source_ids())
    dataset = assemble_corpus([c for c in corpus if c.path in kept], embedding, vocab, e.seq_len, e.repeat,
                              config.vulnerability, e.repeat_mode, e.pe_after_repeat, config.preprocess.n_jobs)
    train, test = split(manifest, config.train.split_ratio, config.seed)
    split_path = state.out / "split.json"
    with open(split_path, "w") as f:
        json.dump({"train": train.source_ids(), "test": test.source_ids()}, f, indent=2)
    files = [embedding.save(state.out / "embedding"), dataset.save(state.out / "dataset"), split_path]
    update_manifest(state.out, files, "embed")


@app.command("train-teacher")
def train_teacher_command(ctx: typer.Context, epochs: Optional[int] = typer.Option(None, "--epochs")):
    state: State = ctx.obj
    train, test = _load_split(state.out)
    teacher, report = train_teacher(train, test, state.config, state.config.seed, epochs=epochs)
    path = save_checkpoint(teacher, state.out / "teacher", "teacher", {"seed": state.config.seed})
    update_manifest(state.out, [path], "train-teacher")
    emit_report([report], state.out / "teacher_report", state.config.vulnerability, command="train-teacher")
    _print_metrics("Teacher", [report])


@app.command()
def distill(ctx: typer.Context):
    """Distill a student from the saved teacher; no training data is read."""
    state: State = ctx.obj
    config = state.config
    shape = config.input_shape
    dtype = resolve_dtype(config.precision)
    teacher = build_teacher(shape, config.fusion, config.teacher, config.seed).to(dtype)
    load_checkpoint(teacher, state.out / "teacher", "teacher")
    student = build_student(shape, config.student, config.seed).to(dtype)
    result = distill_student(teacher, student, config.distill, shape, config.seed)

    files = [
        save_checkpoint(result.student, state.out / "student", "student", {"seed": config.seed}),
        write_history_csv(result.state.history, state.out / "distill_history_last.csv"),
    ]
    update_manifest(state.out, files, "distill")
    report = RunReport(name="student-distilled", config=config.model_dump(mode="json"),
                       distill_history=result.state.history, seed=config.seed)
    split_path = state.out / "split.json"
    if split_path.is_file():
        _, test = _load_split(state.out)
        report = report.model_copy(update={"metrics": evaluate(result.student, test)})
        _print_metrics("Distilled student", [report])
    emit_report([report], state.out / "distill_report", config.vulnerability, command="distill")


@app.command("eval")
def eval_command(ctx: typer.Context, model: str = typer.Option("student", "--model", help="teacher or student")):
    state: State = ctx.obj
    config = state.config
    if model not in ("teacher", "student"):
        raise typer.BadParameter("--model must be 'teacher' or 'student'")
    _, test = _load_split(state.out)
    shape = (test.inputs.shape[1], test.inputs.shape[2])
    if model == "teacher":
        network = build_teacher(shape, config.fusion, config.teacher, config.seed)
    else:
        network = build_student(shape, config.student, config.seed)
    network = network.to(resolve_dtype(config.precision))
    load_checkpoint(network, state.out / model, model)
    metrics = evaluate(network, test)
    path = state.out / f"eval_{model}.json"
    with open(path, "w") as f:
        json.dump(metrics.model_dump(mode="json"), f, indent=2)
    update_manifest(state.out, [path], "eval")
    _print_metrics("Evaluation", [RunReport(name=model, config={}, metrics=metrics, seed=config.seed)])


@app.command()
def transfer(ctx: typer.Context, target: Optional[str] = typer.Option(None, "--target"),
             contracts: Optional[Path] = typer.Option(None, "--contracts"),
             labels: Optional[Path] = typer.Option(None, "--labels")):
    """Fine-tune the saved student on another vulnerability class."""
    state: State = ctx.obj
    config = state.config
    if target:
        config = config.model_copy(update={"transfer": config.transfer.model_copy(update={"target_class": target})})
    vocab = Vocabulary.load(state.out / "vocab.tsv")
    embedding = EmbeddingMatrix.load(state.out / "embedding")
    result = run_transfer(config, state.out / "transfer", state.out / "student", vocab, embedding,
                          contracts_dir=contracts, labels_path=labels)
    _print_metrics("Transfer", [result.report])


@app.command()
def report(ctx: typer.Context, runs: List[Path] = typer.Argument(..., help="Run directories holding reports.json")):
    """Merge the reports of earlier runs into one set of tables."""
    state: State = ctx.obj
    reports: List[RunReport] = []
    for run in runs:
        path = run / "reports.json"
        if not path.is_file():
            logger.warning("⚠️ %s has no reports.json. Skipping.", run)
            continue
        with open(path, "r") as f:
            reports += [RunReport.model_validate(r) for r in json.load(f)]
    emit_report(reports, state.out, state.config.vulnerability, command="report")
    _print_metrics("Reports", reports)


@app.command("run-all")
def run_all_command(ctx: typer.Context, contracts: Optional[Path] = typer.Option(None, "--contracts"),
                    labels: Optional[Path] = typer.Option(None, "--labels"),
                    n_synthetic: int = typer.Option(400, "--n-synthetic")):
    """Preprocess, embed, train, distill and evaluate over every repeat seed."""
    state: State = ctx.obj
    result = run_all(state.config, state.out, contracts, labels, n_synthetic)
    _print_metrics("Last repeat", list(result.last.reports.values()))
    for name, summary in result.summaries.items():
        logger.info("✅ %s mean F1 %.4f ± %.4f", name, summary["mean"]["f1"], summary["std"]["f1"])


@app.command()
def ablate(ctx: typer.Context, n_synthetic: int = typer.Option(400, "--n-synthetic")):
    """Distill once per fusion variant with one mechanism switched off."""
    state: State = ctx.obj
    table = run_ablation(state.config, state.out / "ablation", synthetic_n=n_synthetic)
    console.print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


@app.command("lr-search")
def lr_search(ctx: typer.Context):
    state: State = ctx.obj
    train, test = _load_split(state.out)
    result = grid_search_lr(train, test, state.config, state.config.seed)
    path = state.out / "lr_search.csv"
    result.table.to_csv(path, index=False, float_format="%.6f")
    update_manifest(state.out, [path], "lr-search")
    console.print(result.table.to_string(index=False))


@app.command()
def detect(ctx: typer.Context, files: List[Path] = typer.Argument(...),
           model: str = typer.Option("student", "--model"),
           run_dir: Optional[Path] = typer.Option(None, "--run-dir", help="Defaults to --out.")):
    """Vulnerability probability for each .sol file."""
    state: State = ctx.obj
    service = ModelService(run_dir or state.out, state.config, model)
    results = service.detect(files)
    path = state.out / "detections.json"
    with open(path, "w") as f:
        json.dump({"load": service.status, "results": results}, f, indent=2)
    update_manifest(state.out, [path], "detect")
    console.print_json(json.dumps(results))
    if not service.models_loaded:
        raise typer.Exit(code=1)


def main() -> int:
    try:
        code = app(standalone_mode=False)
    except VulnDistillError as e:
        logger.error("❌ %s", e)
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    # typer.Exit comes back as the return value outside standalone mode
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
