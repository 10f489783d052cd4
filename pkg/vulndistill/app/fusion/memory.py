import math
from typing import NamedTuple

import torch
from torch import nn

from ..errors import ShapeError
from ..numcore import Dense, softmax


class MemoryReadout(NamedTuple):
    y_prime: torch.Tensor  # [B, L, C]
    m_new: torch.Tensor  # [B, L, C_m]
    weights: torch.Tensor  # [B, L, S]


class ExternalMemory(nn.Module):
    """Learnable slot bank read by every position.

    Each position is projected into memory space, scored against the slots
    by inner product, and the softmax-weighted slot mix (M_new) is projected
    back and added to the input.

    With ``persist`` the bank also carries an exponential moving average,
    over training batches, of how far the slot-weighted M_new drifts from
    the learnable slots; it is added to the slots on every read.
    """

    def __init__(self, channels: int, slots: int = 64, memory_dim: int = 64,
                 persist: bool = False, momentum: float = 0.9):
        super().__init__()
        self.channels = channels
        self.persist = persist
        self.momentum = momentum
        self.project_in = Dense(channels, memory_dim)
        self.project_out = Dense(memory_dim, channels)
        self.memory = nn.Parameter(torch.randn(slots, memory_dim) / math.sqrt(memory_dim))
        self.register_buffer("persistent", torch.zeros(slots, memory_dim))

    @property
    def slots(self) -> int:
        return self.memory.shape[0]

    def bank(self) -> torch.Tensor:
        return self.memory + self.persistent if self.persist else self.memory

    def read(self, y: torch.Tensor) -> MemoryReadout:
        if y.dim() != 3 or y.shape[-1] != self.channels:
            raise ShapeError(f"external memory expects [B, L, {self.channels}], got {tuple(y.shape)}")
        bank = self.bank()
        weights = softmax(self.project_in(y) @ bank.t(), axis=-1)  # [B, L, S]
        m_new = weights @ bank
        if self.persist and self.training:
            self._update_persistent(weights.detach(), m_new.detach())
        return MemoryReadout(y + self.project_out(m_new), m_new, weights)

    @torch.no_grad()
    def _update_persistent(self, weights: torch.Tensor, m_new: torch.Tensor) -> None:
        flat_w = weights.reshape(-1, weights.shape[-1])  # [B*L, S]
        flat_m = m_new.reshape(-1, m_new.shape[-1])  # [B*L, C_m]
        mass = flat_w.sum(dim=0).clamp_min(1e-12).unsqueeze(1)
        slot_mix = flat_w.t() @ flat_m / mass - self.memory
        self.persistent.mul_(self.momentum).add_((1.0 - self.momentum) * slot_mix)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.read(y).y_prime
