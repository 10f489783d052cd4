import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import torch
from torch import nn

from .config import PipelineConfig
from .embed import EmbeddingMatrix, assemble
from .errors import VulnDistillError
from .netdistill import build_student, build_teacher
from .numcore import load_checkpoint, resolve_dtype
from .preprocess import Vocabulary, load_patterns, preprocess_contract, read_contract

logger = logging.getLogger(__name__)

ModelKind = Literal["teacher", "student"]


class ModelService:
    """Checkpoint-backed vulnerability detection over ``.sol`` files.

    Expects a run directory as written by ``run-all``: ``vocab.tsv``,
    ``embedding.json/.bin`` and ``<kind>.json/.bin``.
    """

    def __init__(self, run_dir: Union[str, Path], config: PipelineConfig, kind: ModelKind = "student"):
        self.run_dir = Path(run_dir)
        self.config = config
        self.kind = kind
        self.model: Optional[nn.Module] = None
        self.vocab: Optional[Vocabulary] = None
        self.embedding: Optional[EmbeddingMatrix] = None
        self.status = self.load_models()

    @property
    def models_loaded(self) -> bool:
        return self.model is not None

    def load_models(self) -> Dict[str, Any]:
        """Load vocabulary, embedding and weights; failures come back as an error result."""
        required = {
            "vocabulary": self.run_dir / "vocab.tsv",
            "embedding": self.run_dir / "embedding.json",
            f"{self.kind} checkpoint": self.run_dir / f"{self.kind}.json",
        }
        missing = [f"{name} ({path})" for name, path in required.items() if not path.is_file()]
        if missing:
            message = "missing " + ", ".join(missing)
            logger.warning("⚠️ %s", message)
            return {"status": "error", "message": message}

        try:
            self.vocab = Vocabulary.load(required["vocabulary"])
            self.embedding = EmbeddingMatrix.load(self.run_dir / "embedding")
            shape = (self.config.embed.seq_len * self.config.embed.repeat, self.embedding.dim)
            if self.kind == "teacher":
                model = build_teacher(shape, self.config.fusion, self.config.teacher, self.config.seed)
            else:
                model = build_student(shape, self.config.student, self.config.seed)
            model = model.to(resolve_dtype(self.config.precision))
            load_checkpoint(model, self.run_dir / self.kind, self.kind)
        except (VulnDistillError, OSError) as e:
            logger.error("❌ Error loading %s from %s: %s", self.kind, self.run_dir, e)
            return {"status": "error", "message": str(e)}

        model.eval()
        self.model = model
        logger.info("✅ %s model loaded from %s", self.kind.capitalize(), self.run_dir)
        return {"status": "ok", "message": f"{self.kind} loaded"}

    @torch.no_grad()
    def predict_file(self, path: Union[str, Path], vulnerability: Optional[str] = None) -> Dict[str, Any]:
        if not self.models_loaded:
            return {"status": "error", "file": str(path), "message": self.status["message"]}
        vulnerability = vulnerability or self.config.vulnerability
        try:
            raw = read_contract(path, vulnerability, 0)
            patterns = load_patterns(self.config.preprocess.patterns_file, vulnerability)
            tokenized = preprocess_contract(raw, patterns, self.config.preprocess.span_only)
            embed = self.config.embed
            sample = assemble(tokenized, self.embedding, self.vocab, embed.seq_len, embed.repeat,
                              embed.repeat_mode, embed.pe_after_repeat)
        except (VulnDistillError, OSError) as e:
            logger.error("❌ Cannot prepare %s: %s", path, e)
            return {"status": "error", "file": str(path), "message": str(e)}

        dtype = next(self.model.parameters()).dtype
        probability = float(self.model(sample.matrix.unsqueeze(0).to(dtype))[0, 1])
        return {
            "status": "ok",
            "file": str(path),
            "vulnerability": vulnerability,
            "probability": probability,
            "vulnerable": probability >= 0.5,
            "annotated_spans": len(tokenized.annotations),
            "model": self.kind,
        }

    def detect(self, paths: Sequence[Union[str, Path]], vulnerability: Optional[str] = None) -> List[Dict[str, Any]]:
        results = [self.predict_file(p, vulnerability) for p in paths]
        flagged = sum(1 for r in results if r.get("vulnerable"))
        logger.info("🔍 %d of %d contract(s) flagged", flagged, len(results))
        return results
