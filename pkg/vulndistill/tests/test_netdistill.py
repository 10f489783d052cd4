import math

import pandas as pd
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from app.config import DistillConfig, FusionConfig, StudentConfig, TeacherConfig
from app.errors import ConfigError, DistillationError, ShapeError
from app.fusion import expected_param_count
from app.netdistill import (
    DistillState,
    LayerStats,
    activation_stats,
    build_student,
    build_teacher,
    capture_target_stats,
    check_label_coverage,
    count_params,
    distill_student,
    init_noise,
    init_pseudo,
    input_prior,
    kd_losses,
    scheduled_lr,
    stats_loss,
    statistic_taps,
    synthesize_pseudo,
    write_history_csv,
)
from app.numcore import BatchNorm, Conv1d, Dense, make_generator, relu, tensor_checksum


def _state_checksum(model: nn.Module) -> str:
    return tensor_checksum(model.state_dict().values())


def _warm_up(model: nn.Module, shape, batches: int = 2) -> None:
    """Push a few random batches through in train mode so batchnorm has running statistics."""
    model.train()
    with torch.no_grad():
        for _ in range(batches):
            model.logits(torch.randn(4, *shape, dtype=next(model.parameters()).dtype))
    model.eval()


class ToyTeacher(nn.Module):
    """One conv + batchnorm over a single input channel."""

    def __init__(self):
        super().__init__()
        self.conv = Conv1d(1, 2, kernel_size=3)
        self.bn = BatchNorm(2, momentum=0.2)
        self.head = Dense(2, 2)
        with torch.no_grad():
            self.conv.weight.copy_(torch.tensor([[[0.5, 1.0]], [[0.5, -1.0]], [[0.5, 0.5]]]))

    def logits(self, x):
        return self.head(relu(self.bn(self.conv(x))).mean(dim=1))

    def forward(self, x):
        return torch.softmax(self.logits(x), dim=-1)

    def batchnorm_taps(self):
        return [("bn", self.bn)]


@pytest.fixture
def toy_teacher():
    torch.manual_seed(0)
    teacher = ToyTeacher().double()
    teacher.train()
    with torch.no_grad():
        for _ in range(40):
            teacher.logits(2.0 + 0.5 * torch.randn(32, 8, 1, dtype=torch.float64))
    teacher.eval()
    return teacher


# ---------------------------
# Networks
# ---------------------------
def test_teacher_shape_table_and_probabilities(micro_config):
    shape = micro_config.input_shape
    teacher = build_teacher(shape, micro_config.fusion, micro_config.teacher, seed=1)
    assert teacher.shape_table(3) == [
        ("input", (3, 32, 8)),
        ("fusion", (3, 8, 24)),
        ("blocks/0", (3, 4, 4)),
        ("blocks/1", (3, 2, 4)),
        ("blocks/2", (3, 1, 4)),
        ("head", (3, 2)),
    ]
    teacher.eval()
    probs = teacher(torch.randn(3, *shape))
    torch.testing.assert_close(probs.sum(-1), torch.ones(3))
    assert teacher.features(torch.randn(3, *shape)).shape == (3, 1, 4)
    assert [name for name, _ in teacher.batchnorm_taps()] == ["blocks/0/bn", "blocks/1/bn", "blocks/2/bn"]


def test_builders_are_seeded(micro_config):
    shape = micro_config.input_shape
    a = build_student(shape, micro_config.student, seed=4)
    b = build_student(shape, micro_config.student, seed=4)
    assert _state_checksum(a) == _state_checksum(b)


def test_teacher_feasibility_check():
    with pytest.raises(ShapeError, match="at least 8"):
        build_teacher((20, 8), FusionConfig(numhead=2, groups=2), TeacherConfig())
    with pytest.raises(ShapeError, match="divisible"):
        build_teacher((34, 8), FusionConfig(numhead=2, groups=2), TeacherConfig())


def test_student_shape_table_and_feasibility(micro_config):
    student = build_student(micro_config.input_shape, micro_config.student)
    assert student.shape_table(2)[-3:] == [("block2", (2, 8, 4)), ("fc1", (2, 4)), ("fc2", (2, 2))]
    student.eval()
    assert student.logits(torch.randn(2, *micro_config.input_shape)).shape == (2, 2)
    with pytest.raises(ShapeError, match="divisible by 4"):
        build_student((30, 8), micro_config.student)


def test_student_is_under_half_the_teacher():
    """Default sizes: N*K = 512, C = 300."""
    shape, c = (512, 300), 300
    fusion, teacher_cfg, student_cfg = FusionConfig(), TeacherConfig(), StudentConfig()

    def conv_block(cin, cout, k=3):
        return k * cin * cout + cout + 2 * cout

    widths = (3 * c,) + teacher_cfg.filters
    teacher_closed = expected_param_count(c, fusion) + sum(
        conv_block(widths[i], widths[i + 1]) for i in range(3)) + widths[-1] * 2 + 2

    first, second = student_cfg.filters
    w = first // student_cfg.psa_groups
    bottleneck = max(1, w // 4)
    psa = sum(k * w * w + w for k in (3, 5, 7, 9)) + (w * bottleneck + bottleneck) + (bottleneck * w + w)
    student_closed = (conv_block(c, first) + psa + conv_block(first, second)
                      + second * student_cfg.hidden + student_cfg.hidden + 2 * student_cfg.hidden
                      + student_cfg.hidden * 2 + 2)

    assert count_params(build_teacher(shape, fusion, teacher_cfg)) == teacher_closed
    assert count_params(build_student(shape, student_cfg)) == student_closed
    assert student_closed < 0.5 * teacher_closed


# ---------------------------
# Distillation losses
# ---------------------------
def test_kl_hand_case():
    teacher = torch.tensor([[0.9, 0.1]], dtype=torch.float64)
    student_logits = torch.zeros(1, 2, dtype=torch.float64)  # uniform at any temperature
    losses = kd_losses(teacher, student_logits, temperature=4.0, alpha=0.2)
    assert losses.l_kl.item() == pytest.approx(0.3681, abs=1e-4)
    assert losses.l_clf.item() == pytest.approx(math.log(2.0))


def _random_pair(seed: int, batch: int):
    gen = torch.Generator().manual_seed(seed)
    teacher = torch.softmax(3 * torch.randn(batch, 2, generator=gen, dtype=torch.float64), dim=-1)
    student = 3 * torch.randn(batch, 2, generator=gen, dtype=torch.float64)
    return teacher, student


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), batch=st.integers(1, 6), alpha=st.floats(0.0, 1.0),
       temperature=st.floats(0.5, 10.0))
def test_mixed_loss_is_a_convex_combination(seed, batch, alpha, temperature):
    teacher, student = _random_pair(seed, batch)
    losses = kd_losses(teacher, student, temperature, alpha)
    assert losses.l_kl.item() >= -1e-12
    lo = min(losses.l_kl.item(), losses.l_clf.item())
    hi = max(losses.l_kl.item(), losses.l_clf.item())
    assert lo - 1e-12 <= losses.l_concat.item() <= hi + 1e-12


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), batch=st.integers(1, 6))
def test_alpha_endpoints_select_one_loss_exactly(seed, batch):
    teacher, student = _random_pair(seed, batch)
    only_kl = kd_losses(teacher, student, 4.0, 1.0)
    only_clf = kd_losses(teacher, student, 4.0, 0.0)
    assert torch.equal(only_kl.l_concat, only_kl.l_kl)
    assert torch.equal(only_clf.l_concat, only_clf.l_clf)


def test_zero_teacher_probability_is_clamped(caplog):
    losses = kd_losses(torch.tensor([[1.0, 0.0]]), torch.zeros(1, 2), 1.0, 0.5)
    assert math.isfinite(losses.l_kl.item())
    assert "clamping" in caplog.text


def test_kd_losses_validation():
    probs = torch.full((2, 2), 0.5)
    with pytest.raises(ShapeError):
        kd_losses(probs, torch.zeros(2, 3), 1.0, 0.5)
    with pytest.raises(ConfigError):
        kd_losses(probs, torch.zeros(2, 2), 0.0, 0.5)
    with pytest.raises(ConfigError):
        kd_losses(probs, torch.zeros(2, 2), 1.0, 1.5)


# ---------------------------
# Pseudo-sample synthesis
# ---------------------------
def test_untrained_teacher_is_refused(micro_config):
    teacher = build_teacher(micro_config.input_shape, micro_config.fusion, micro_config.teacher)
    with pytest.raises(DistillationError, match="never seen"):
        capture_target_stats(teacher)


def test_activation_stats_leave_running_stats_alone(toy_teacher):
    before = _state_checksum(toy_teacher)
    observed = activation_stats(toy_teacher, torch.randn(4, 8, 1, dtype=torch.float64))
    assert [s.name for s in observed] == ["bn"]
    assert observed[0].mean.shape == (2,)
    assert _state_checksum(toy_teacher) == before


def test_stats_loss_is_zero_on_targets(toy_teacher):
    targets = capture_target_stats(toy_teacher)
    assert stats_loss(targets, targets).item() == 0.0


def test_synthesis_halves_the_statistics_loss(toy_teacher):
    config = DistillConfig(eta=0.05, synth_steps=200, max_backtracks=20, class_weight=0.0)
    z = init_noise((16, 8, 1), 0.0, 1.0, make_generator(0), torch.float64)
    state = DistillState(z=z, target_stats=capture_target_stats(toy_teacher))
    before = _state_checksum(toy_teacher)

    synthesize_pseudo(toy_teacher, state, config)

    losses = state.synthesis_losses
    assert losses[-1] <= 0.5 * losses[0]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert _state_checksum(toy_teacher) == before
    assert not state.z.requires_grad


def test_synthesis_reports_divergence(toy_teacher):
    z = torch.full((4, 8, 1), float("inf"), dtype=torch.float64)
    state = DistillState(z=z, target_stats=capture_target_stats(toy_teacher))
    with pytest.raises(DistillationError, match="eta"):
        synthesize_pseudo(toy_teacher, state, DistillConfig(synth_steps=3))


def test_plain_gradient_step_lowers_the_statistics_loss(toy_teacher):
    config = DistillConfig(synth_step="gradient", synth_steps=1, class_weight=0.0)
    z = init_noise((16, 8, 1), 0.0, 1.0, make_generator(1), torch.float64)
    state = DistillState(z=z, target_stats=capture_target_stats(toy_teacher))
    synthesize_pseudo(toy_teacher, state, config)
    assert len(state.synthesis_losses) == 2
    assert state.synthesis_losses[1] < state.synthesis_losses[0]


def test_batch_moments_match_running_stats_of_the_same_batch():
    teacher = ToyTeacher().double()
    teacher.bn.momentum = 1.0
    x = 2.0 + 0.5 * torch.randn(16, 8, 1, dtype=torch.float64)
    teacher.train()
    with torch.no_grad():
        teacher.logits(x)
    teacher.eval()
    # running_var holds the unbiased variance, so the gap vanishes
    gap = stats_loss(activation_stats(teacher, x), capture_target_stats(teacher))
    assert gap.item() == pytest.approx(0.0, abs=1e-20)


def test_teacher_records_input_moments(micro_config):
    shape = micro_config.input_shape
    teacher = build_teacher(shape, micro_config.fusion, micro_config.teacher, seed=0)
    assert [name for name, _ in statistic_taps(teacher)] == ["input", "blocks/0/bn", "blocks/1/bn", "blocks/2/bn"]
    _warm_up(teacher, shape)
    targets = capture_target_stats(teacher)
    prior = input_prior(targets)
    assert prior is targets[0] and prior.mean.shape == shape and prior.var.shape == shape


def test_init_pseudo_priors(caplog):
    shape = (4, 6, 2)
    prior = LayerStats("input", torch.full((6, 2), 3.0), torch.full((6, 2), 4.0))

    flat = init_pseudo(shape, DistillConfig(noise_prior="gaussian", mu=0.5, sigma=0.0), make_generator(0))
    torch.testing.assert_close(flat, torch.full(shape, 0.5))

    centred = init_pseudo(shape, DistillConfig(sigma=0.0), make_generator(0), prior=prior)
    torch.testing.assert_close(centred, torch.full(shape, 3.0))
    spread = init_pseudo(shape, DistillConfig(), make_generator(0), prior=prior)
    torch.testing.assert_close(spread, 3.0 + 2.0 * init_noise(shape, 0.0, 1.0, make_generator(0)))

    with pytest.raises(ShapeError, match="input moments"):
        init_pseudo((4, 5, 2), DistillConfig(), make_generator(0), prior=prior)

    fallback = init_pseudo(shape, DistillConfig(), make_generator(0))
    torch.testing.assert_close(fallback, init_noise(shape, 0.0, 1.0, make_generator(0)))
    assert "no input moments" in caplog.text


def test_class_term_spreads_teacher_labels(toy_teacher):
    with torch.no_grad():
        toy_teacher.head.weight.copy_(torch.tensor([[-1.0, 1.0], [1.0, -1.0]], dtype=torch.float64))
        toy_teacher.head.bias.zero_()
    config = DistillConfig(synth_steps=200, class_weight=50.0)
    z = init_noise((16, 8, 1), 2.0, 0.5, make_generator(2), torch.float64)
    state = DistillState(z=z, target_stats=capture_target_stats(toy_teacher))

    synthesize_pseudo(toy_teacher, state, config)

    assert sum(state.label_counts) == 16
    assert min(state.label_counts) >= 6
    objective = state.synthesis_objective
    assert objective[-1] < objective[0]
    assert all(b <= a + 1e-12 for a, b in zip(objective, objective[1:]))


def test_label_coverage_warning(caplog):
    assert not check_label_coverage([59, 5], 0.1, step=20)
    assert "one-sided" in caplog.text and "[59, 5]" in caplog.text
    caplog.clear()
    assert check_label_coverage([32, 32], 0.1)
    assert check_label_coverage([0, 0], 0.1)
    assert caplog.text == ""


# ---------------------------
# Distillation loop
# ---------------------------
def test_distill_student_trains_only_the_student(micro_config):
    shape = micro_config.input_shape
    teacher = build_teacher(shape, micro_config.fusion, micro_config.teacher, seed=0)
    _warm_up(teacher, shape)
    student = build_student(shape, micro_config.student, seed=0)
    teacher_before, student_before = _state_checksum(teacher), _state_checksum(student)

    result = distill_student(teacher, student, micro_config.distill, shape, seed=0)

    assert _state_checksum(teacher) == teacher_before
    assert _state_checksum(result.student) != student_before
    assert not teacher.training
    history = result.state.history
    assert [h.step for h in history] == list(range(micro_config.distill.steps))
    for h in history:
        alpha = micro_config.distill.alpha
        assert h.l_concat == pytest.approx(alpha * h.l_kl + (1 - alpha) * h.l_clf, rel=1e-5)
    assert result.state.z.shape == (micro_config.distill.batch,) + shape
    assert sum(result.state.label_counts) == micro_config.distill.batch


def test_history_csv(tmp_path, micro_config):
    shape = micro_config.input_shape
    teacher = build_teacher(shape, micro_config.fusion, micro_config.teacher)
    _warm_up(teacher, shape)
    result = distill_student(teacher, build_student(shape, micro_config.student), micro_config.distill, shape)
    frame = pd.read_csv(write_history_csv(result.state.history, tmp_path / "h.csv"))
    assert list(frame.columns) == ["step", "l_mse", "l_kl", "l_clf", "l_concat"]
    assert len(frame) == micro_config.distill.steps


def test_learning_rate_schedules():
    assert scheduled_lr(0.1, 50, 100) == 0.1
    assert scheduled_lr(0.1, 0, 100, "cosine") == pytest.approx(0.1)
    assert scheduled_lr(0.1, 100, 100, "cosine") == pytest.approx(0.0, abs=1e-12)
    assert scheduled_lr(0.1, 49, 100, "step") == pytest.approx(0.1)
    assert scheduled_lr(0.1, 50, 100, "step") == pytest.approx(0.01)
    assert scheduled_lr(0.1, 80, 100, "step") == pytest.approx(0.001)
    assert scheduled_lr(0.1, 1, 100, "cosine", warmup_steps=4) == pytest.approx(0.05)
    with pytest.raises(ConfigError):
        scheduled_lr(0.1, 1, 10, "linear")


def test_kd_loss_gradcheck():
    teacher = torch.softmax(torch.randn(3, 2, dtype=torch.float64), dim=-1)
    logits = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda s: kd_losses(teacher, s, 4.0, 0.2).l_concat, (logits,),
                                    eps=1e-6, atol=1e-5)


def test_teacher_gradcheck_end_to_end(micro_config):
    shape = micro_config.input_shape
    teacher = build_teacher(shape, micro_config.fusion, micro_config.teacher, seed=0).double()
    _warm_up(teacher, shape)
    names = [name for name, _ in teacher.named_parameters()]
    values = tuple(p.detach().clone().requires_grad_(True) for _, p in teacher.named_parameters())
    x = torch.randn(2, *shape, dtype=torch.float64, requires_grad=True)

    def fn(x, *values):
        return torch.func.functional_call(teacher, dict(zip(names, values)), (x,))

    assert torch.autograd.gradcheck(fn, (x,) + values, eps=1e-6, atol=1e-5)
