import logging
from typing import NamedTuple

import torch
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12


class KDLosses(NamedTuple):
    l_kl: torch.Tensor
    l_clf: torch.Tensor
    l_concat: torch.Tensor


def kd_losses(teacher_probs: torch.Tensor, student_logits: torch.Tensor,
              temperature: float, alpha: float) -> KDLosses:
    """KL(P_teacher || softmax(s / T)), cross-entropy on the teacher's argmax, and their mix.

    L_concat = alpha * L_KL + (1 - alpha) * L_CLF.
    """
    if teacher_probs.shape != student_logits.shape or teacher_probs.dim() != 2:
        raise ShapeError(f"teacher probs {tuple(teacher_probs.shape)} and student logits "
                         f"{tuple(student_logits.shape)} must both be [B, classes]")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")

    teacher_probs = teacher_probs.detach()
    if bool((teacher_probs <= 0).any()):
        logger.warning("⚠️ Teacher probabilities contain zeros; clamping at %g", PROBABILITY_FLOOR)
        teacher_probs = teacher_probs.clamp_min(PROBABILITY_FLOOR)

    log_student = F.log_softmax(student_logits / temperature, dim=-1)
    l_kl = (teacher_probs * (teacher_probs.log() - log_student)).sum(dim=-1).mean()

    pseudo_labels = teacher_probs.argmax(dim=-1)
    l_clf = F.cross_entropy(student_logits, pseudo_labels)

    l_concat = alpha * l_kl + (1.0 - alpha) * l_clf
    return KDLosses(l_kl, l_clf, l_concat)
