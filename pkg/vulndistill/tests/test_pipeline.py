import json

import pandas as pd
import pytest

from app.errors import ConfigError
from app.harness import ABLATION_VARIANTS, run_ablation, run_all, run_transfer
from app.model_service import ModelService


@pytest.fixture
def micro64(micro_config):
    return micro_config.model_copy(update={"precision": "float64"})


# ---------------------------
# Wiring at micro sizes
# ---------------------------
def test_run_all_writes_every_artifact(tmp_path, micro_config):
    result = run_all(micro_config, tmp_path, synthetic_n=40)

    for name in ("corpus.jsonl", "vocab.tsv", "embedding.json", "dataset.json", "teacher.json", "student.json",
                 "summary.json", "metrics.csv", "curves.csv", "distill_history.csv", "distill_comparison.csv",
                 "reports.json", "manifest.json"):
        assert (tmp_path / name).is_file(), name
    assert set(result.summaries) == {"teacher", "student-baseline", "student-distilled"}
    assert [r.name for r in result.reports] == ["teacher", "student-baseline", "student-distilled"]
    assert len(result.last.reports["student-distilled"].distill_history) == micro_config.distill.steps

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"]["teacher.json"]["command"] == "run-all"


def test_runs_are_reproducible_at_double_precision(tmp_path, micro64):
    run_all(micro64, tmp_path / "a", synthetic_n=40)
    run_all(micro64, tmp_path / "b", synthetic_n=40)
    for name in ("metrics.csv", "distill_history.csv", "curves.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_ablation_table_covers_every_variant(tmp_path, micro_config):
    table = run_ablation(micro_config, tmp_path, synthetic_n=40)
    assert len(table) == 2 * len(ABLATION_VARIANTS)
    assert set(table["variant"]) == set(ABLATION_VARIANTS)
    assert set(table["model"]) == {"teacher", "student-distilled"}
    assert pd.read_csv(tmp_path / "ablation.csv").shape[0] == len(table)
    names = {r["name"] for r in json.loads((tmp_path / "reports.json").read_text())}
    assert "student-distilled:no-external-memory" in names


def test_model_service_reads_a_finished_run(tmp_path, micro_config):
    run_all(micro_config, tmp_path, synthetic_n=40)
    for kind in ("student", "teacher"):
        service = ModelService(tmp_path, micro_config, kind)
        assert service.status["status"] == "ok"
        contracts = sorted((tmp_path / "synthetic" / "contracts").glob("*.sol"))[:3]
        results = service.detect(contracts)
        assert [r["status"] for r in results] == ["ok"] * 3
        assert all(isinstance(r["vulnerable"], bool) for r in results)

    missing = service.predict_file(tmp_path / "nope.sol")
    assert missing["status"] == "error"
    empty = tmp_path / "empty.sol"
    empty.write_text("\n")
    assert service.predict_file(empty)["status"] == "error"


def test_contract_directory_needs_labels(tmp_path, micro_config):
    with pytest.raises(ConfigError, match="labels_path"):
        run_all(micro_config, tmp_path, contracts_dir=tmp_path)


# ---------------------------
# Desk-scale behaviour
# ---------------------------
@pytest.mark.slow
def test_desk_run_learns_and_transfers(tmp_path, desk_config):
    result = run_all(desk_config, tmp_path, synthetic_n=400)

    teacher = result.last.reports["teacher"].metrics
    distilled = result.last.reports["student-distilled"].metrics
    assert teacher.f1 >= 0.95
    assert distilled.f1 >= 0.85 and teacher.f1 - distilled.f1 <= 0.10
    assert result.last.reports["student-baseline"].metrics is not None

    history = pd.DataFrame([h.model_dump() for h in result.last.reports["student-distilled"].distill_history])
    assert history["l_concat"].tail(20).mean() < history["l_concat"].head(20).mean()

    transfer = run_transfer(desk_config, tmp_path / "transfer", tmp_path / "student",
                            result.data.vocab, result.data.embedding, synthetic_n=200)
    assert transfer.report.name == "transfer-cdav"
    assert (tmp_path / "transfer" / "student_transfer.json").is_file()
    if transfer.frozen.f1 >= 0.95:
        pytest.skip(f"frozen checkpoint already scores F1 {transfer.frozen.f1:.3f} on cdav; no room for a 5-point gain")
    assert transfer.report.metrics.f1 >= transfer.frozen.f1 + 0.05
