import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..config import DistillConfig
from ..errors import ConfigError, DistillationError, NumericError, ShapeError
from ..numcore import ParameterStore, backward, make_generator, optimizer_step, softmax
from ..schemas import DistillRecord
from .losses import kd_losses

logger = logging.getLogger(__name__)

INPUT_TAP = "input"


class LayerStats(NamedTuple):
    name: str
    mean: torch.Tensor  # [C_l], or [N*K, C] for the input tap
    var: torch.Tensor


@dataclass
class DistillState:
    z: torch.Tensor  # [batch, N*K, C]
    target_stats: List[LayerStats]
    history: List[DistillRecord] = field(default_factory=list)
    synthesis_losses: List[float] = field(default_factory=list)  # L_MSE of the latest synthesis, per step
    synthesis_objective: List[float] = field(default_factory=list)
    label_counts: List[int] = field(default_factory=list)  # teacher argmax per class on the latest pseudo-batch


# ---------------------------
# Target statistics
# ---------------------------
def statistic_taps(teacher: nn.Module) -> List[Tuple[str, nn.Module]]:
    """The teacher's recorded-statistics layers, falling back to its batchnorms."""
    taps = getattr(teacher, "statistic_taps", None)
    return taps() if taps is not None else teacher.batchnorm_taps()


def capture_target_stats(teacher: nn.Module) -> List[LayerStats]:
    """Running mean/variance of every statistics tap up to and including the activation tap.

    Reads buffers only; the teacher is not run.
    """
    stats = []
    for name, layer in statistic_taps(teacher):
        if int(layer.num_batches_tracked) == 0:
            raise DistillationError(
                f"statistics tap '{name}' has never seen a training batch; train the teacher before distilling"
            )
        stats.append(LayerStats(name, layer.running_mean.detach().clone(), layer.running_var.detach().clone()))
    return stats


def forward_with_stats(teacher: nn.Module, z: torch.Tensor) -> Tuple[List[LayerStats], torch.Tensor]:
    """Teacher logits on ``z`` plus the batch moments each tap sees on the way.

    Moments use the unbiased variance, as the running buffers do. The teacher
    must be in eval mode so running statistics are left alone.
    """
    observed: List[LayerStats] = []
    hooks = []
    for name, layer in statistic_taps(teacher):
        def capture(module, inputs, name=name):
            observed.append(LayerStats(name, *module.batch_moments(inputs[0])))
        hooks.append(layer.register_forward_pre_hook(capture))
    try:
        logits = teacher.logits(z)
    finally:
        for hook in hooks:
            hook.remove()
    return observed, logits


def activation_stats(teacher: nn.Module, z: torch.Tensor) -> List[LayerStats]:
    return forward_with_stats(teacher, z)[0]


def stats_loss(observed: Sequence[LayerStats], targets: Sequence[LayerStats]) -> torch.Tensor:
    """Sum over taps of the element-averaged squared mean and variance gaps."""
    if [s.name for s in observed] != [t.name for t in targets]:
        raise DistillationError(f"observed layers {[s.name for s in observed]} do not match "
                                f"targets {[t.name for t in targets]}")
    total = 0.0
    for seen, target in zip(observed, targets):
        gap = (seen.mean - target.mean.to(seen.mean.dtype)) ** 2 + (seen.var - target.var.to(seen.var.dtype)) ** 2
        total = total + gap.mean()
    return total


# ---------------------------
# Pseudo-sample synthesis
# ---------------------------
def init_noise(shape: Tuple[int, ...], mu: float, sigma: float, generator: torch.Generator,
               dtype: torch.dtype = torch.float32) -> torch.Tensor:
    noise = torch.randn(shape, generator=generator, dtype=dtype)
    return mu + sigma * noise


def input_prior(targets: Sequence[LayerStats]) -> Optional[LayerStats]:
    return next((t for t in targets if t.name == INPUT_TAP), None)


def init_pseudo(shape: Tuple[int, ...], config: DistillConfig, generator: torch.Generator,
                dtype: torch.dtype = torch.float32, prior: Optional[LayerStats] = None) -> torch.Tensor:
    """A fresh pseudo-batch.

    With the ``input-moments`` prior, ``mu`` and ``sigma`` are measured in
    units of the teacher's recorded input spread: z = m + s * (mu + sigma * e).
    """
    noise = init_noise(shape, config.mu, config.sigma, generator, dtype)
    if config.noise_prior == "gaussian":
        return noise
    if prior is None:
        logger.warning("⚠️ Teacher records no input moments; pseudo-samples start from N(%g, %g^2)",
                       config.mu, config.sigma)
        return noise
    if tuple(prior.mean.shape) != tuple(shape[1:]):
        raise ShapeError(f"input moments cover {tuple(prior.mean.shape)}, pseudo-batch is {tuple(shape)}")
    return prior.mean.to(dtype) + prior.var.clamp_min(0.0).sqrt().to(dtype) * noise


def balanced_targets(batch: int, classes: int) -> torch.Tensor:
    """Class assignment 0, 1, ..., 0, 1, ... for the class term of synthesis."""
    return torch.arange(batch) % classes


def _objective(teacher: nn.Module, z: torch.Tensor, state: DistillState, config: DistillConfig,
               scale: float) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(objective, L_MSE, logits). With a class term, L_MSE enters relative to ``scale``."""
    observed, logits = forward_with_stats(teacher, z)
    l_mse = stats_loss(observed, state.target_stats)
    if config.class_weight == 0:
        return l_mse, l_mse, logits
    targets = balanced_targets(z.shape[0], logits.shape[-1])
    return l_mse / scale + config.class_weight * F.cross_entropy(logits, targets), l_mse, logits


def _descent_direction(grad: torch.Tensor, config: DistillConfig) -> torch.Tensor:
    if config.synth_step == "gradient":
        return grad
    rms = grad.pow(2).mean().sqrt()
    return grad / rms if rms > 0 else grad


def synthesize_pseudo(teacher: nn.Module, state: DistillState, config: DistillConfig) -> torch.Tensor:
    """Gradient descent on z against the target statistics.

    The objective is L_MSE, plus ``class_weight`` times the teacher's
    cross-entropy against balanced class assignments when that weight is
    positive (L_MSE is then divided by its starting value). Steps follow the
    gradient, rescaled to unit RMS with ``synth_step == "normalized"``.

    Each step tries z - eta * direction; if that raises the objective, eta is
    halved and the step retried, up to ``max_backtracks`` times. When no
    shrunk step helps, synthesis stops early. The teacher is only read.
    """
    was_training = teacher.training
    teacher.eval()
    z = state.z.detach().clone()
    losses: List[float] = []
    objective: List[float] = []
    scale = 1.0
    try:
        if config.class_weight > 0:
            with torch.no_grad():
                scale = max(stats_loss(activation_stats(teacher, z), state.target_stats).item(), 1e-12)
        for step in range(config.synth_steps):
            z.requires_grad_(True)
            value, l_mse, _ = _objective(teacher, z, state, config, scale)
            if not math.isfinite(value.item()):
                raise DistillationError(
                    f"L_MSE became {l_mse.item()} at synthesis step {step} with eta={config.eta}; "
                    f"lower distill.eta or distill.sigma"
                )
            losses.append(l_mse.item())
            objective.append(value.item())
            (grad,) = torch.autograd.grad(value, z)
            z = z.detach()
            direction = _descent_direction(grad, config)

            eta = config.eta
            for _ in range(config.max_backtracks + 1):
                candidate = z - eta * direction
                try:
                    with torch.no_grad():
                        trial = _objective(teacher, candidate, state, config, scale)[0].item()
                except NumericError:
                    trial = math.inf
                if math.isfinite(trial) and trial <= objective[-1]:
                    z = candidate
                    break
                eta /= 2.0
            else:
                logger.debug("🔍 Synthesis stalled at step %d (objective %.6f)", step, objective[-1])
                break
        with torch.no_grad():
            value, l_mse, logits = _objective(teacher, z, state, config, scale)
        losses.append(l_mse.item())
        objective.append(value.item())
    except NumericError as e:
        raise DistillationError(f"pseudo-sample synthesis diverged with eta={config.eta}: {e}") from e
    finally:
        teacher.train(was_training)

    steps_taken = len(losses) - 1
    if config.class_weight == 0 and steps_taken and losses[-1] > 0.5 * losses[0]:
        logger.warning("⚠️ Synthesis only took L_MSE from %.4g to %.4g in %d step(s); "
                       "raise distill.synth_steps or distill.eta", losses[0], losses[-1], steps_taken)
    elif config.class_weight > 0 and losses[-1] > losses[0]:
        logger.warning("⚠️ Synthesis traded statistics for class coverage: L_MSE %.4g -> %.4g",
                       losses[0], losses[-1])

    state.z = z.detach()
    state.synthesis_losses = losses
    state.synthesis_objective = objective
    state.label_counts = torch.bincount(logits.argmax(dim=-1), minlength=logits.shape[-1]).tolist()
    return state.z


# ---------------------------
# Learning-rate schedule
# ---------------------------
def scheduled_lr(base: float, step: int, total: int, schedule: str = "constant", warmup_steps: int = 0) -> float:
    if warmup_steps and step < warmup_steps:
        return base * (step + 1) / warmup_steps
    if schedule == "constant" or total <= 0:
        return base
    progress = (step - warmup_steps) / max(1, total - warmup_steps)
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * progress))
    if schedule == "step":
        return base * (0.1 ** sum(progress >= edge for edge in (0.5, 0.75)))
    raise ConfigError(f"unknown learning-rate schedule '{schedule}'")


# ---------------------------
# Distillation loop
# ---------------------------
def check_label_coverage(counts: Sequence[int], min_share: float, step: int = 0) -> bool:
    """Warn when the teacher labels too little of a pseudo-batch as any one class."""
    total = sum(counts)
    if not total or min(counts) >= min_share * total:
        return True
    logger.warning("⚠️ Pseudo-batch at step %d is one-sided: teacher labels per class %s", step, list(counts))
    return False


@dataclass
class DistillResult:
    student: nn.Module
    state: DistillState


def distill_student(teacher: nn.Module, student: nn.Module, config: DistillConfig,
                    input_shape: Tuple[int, int], seed: int = 0) -> DistillResult:
    """Data-free distillation: the only inputs the student ever sees are synthesized from the teacher."""
    targets = capture_target_stats(teacher)
    dtype = next(teacher.parameters()).dtype
    student_dtype = next(student.parameters()).dtype
    generator = make_generator(seed)
    shape = (config.batch,) + tuple(input_shape)
    prior = input_prior(targets)
    state = DistillState(z=init_pseudo(shape, config, generator, dtype, prior), target_stats=targets)
    store = ParameterStore(student, "student", seed)
    store.optimizer(config.optimizer)

    was_training = teacher.training
    teacher.eval()
    student.train()
    l_mse = float("nan")
    try:
        for step in tqdm(range(config.steps), desc="distill", disable=None):
            if step % config.refresh_every == 0:
                state.z = init_pseudo(shape, config, generator, dtype, prior)
                synthesize_pseudo(teacher, state, config)
                l_mse = state.synthesis_losses[-1] if state.synthesis_losses else float("nan")
                check_label_coverage(state.label_counts, config.min_class_share, step)

            with torch.no_grad():
                teacher_probs = softmax(teacher.logits(state.z) / config.temperature, axis=-1)
            losses = kd_losses(teacher_probs, student.logits(state.z.to(student_dtype)), config.temperature, config.alpha)

            store.zero_grad()
            backward(losses.l_concat, store)
            store.set_learning_rate(scheduled_lr(config.optimizer.learning_rate, step, config.steps,
                                                 config.lr_schedule, config.warmup_steps))
            optimizer_step(store, config.optimizer)
            state.history.append(DistillRecord(
                step=step, l_mse=l_mse, l_kl=losses.l_kl.item(),
                l_clf=losses.l_clf.item(), l_concat=losses.l_concat.item(),
            ))
            if (step + 1) % max(1, config.steps // 10) == 0:
                logger.info("🔍 Distill step %d/%d L_concat %.4f (KL %.4f, CLF %.4f, MSE %.4f)",
                            step + 1, config.steps, losses.l_concat.item(), losses.l_kl.item(),
                            losses.l_clf.item(), l_mse)
    finally:
        teacher.train(was_training)
    return DistillResult(student, state)


def write_history_csv(history: Iterable[DistillRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.model_dump() for r in history], columns=["step", "l_mse", "l_kl", "l_clf", "l_concat"])
    frame.to_csv(path, index=False)
    return path
