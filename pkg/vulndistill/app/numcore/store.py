import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import torch
from torch import nn

from ..config import OptimizerConfig
from ..errors import GradientError, NumericError
from .tensor import tensor_checksum

logger = logging.getLogger(__name__)


def qualified_name(namespace: str, name: str) -> str:
    path = name.replace(".", "/")
    return f"{namespace}/{path}" if namespace else path


class ParameterStore:
    """Named parameters of one module with their gradients and optimizer state.

    Names are ``<namespace>/<module path>`` with ``/`` separators, in the
    module's registration order, so iteration is deterministic for a given
    construction sequence. Gradients live in each parameter's ``.grad``.
    """

    def __init__(self, module: nn.Module, namespace: str = "", seed: int = 0):
        self.module = module
        self.namespace = namespace
        self.seed = seed
        self._entries: "OrderedDict[str, nn.Parameter]" = OrderedDict(
            (qualified_name(namespace, name), p) for name, p in module.named_parameters() if p.requires_grad
        )
        self._optimizer: Optional[torch.optim.Optimizer] = None
        self._optimizer_key: Optional[Tuple] = None
        self._base_lr: Optional[float] = None

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Tuple[str, nn.Parameter]]:
        return iter(self._entries.items())

    def names(self) -> List[str]:
        return list(self._entries)

    def parameter(self, name: str) -> nn.Parameter:
        return self._entries[name]

    def gradient(self, name: str) -> Optional[torch.Tensor]:
        return self._entries[name].grad

    def count(self) -> int:
        return sum(p.numel() for p in self._entries.values())

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.grad = None

    def checksum(self) -> str:
        return tensor_checksum(self._entries.values())

    def state_tensors(self) -> "OrderedDict[str, torch.Tensor]":
        """Parameters and buffers, namespaced; this is what checkpoints hold."""
        return OrderedDict(
            (qualified_name(self.namespace, name), t) for name, t in self.module.state_dict().items()
        )

    def missing_gradients(self) -> List[str]:
        return [name for name, p in self._entries.items() if p.grad is None]

    # ---------------------------
    # Optimizer
    # ---------------------------
    def optimizer(self, config: OptimizerConfig) -> torch.optim.Optimizer:
        """Bind (or reuse) the optimizer for ``config``.

        A config that only changes ``learning_rate`` keeps the optimizer and its
        state and resets every group to the new rate. Rates set through
        ``set_learning_rate`` survive as long as the configured rate is unchanged.
        """
        key = (config.kind, config.momentum, config.beta1, config.beta2, config.epsilon)
        if self._optimizer is None or key != self._optimizer_key:
            params = list(self._entries.values())
            if config.kind == "adam-amsgrad":
                self._optimizer = torch.optim.Adam(
                    params, lr=config.learning_rate, betas=(config.beta1, config.beta2),
                    eps=config.epsilon, amsgrad=True,
                )
            else:
                self._optimizer = torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum)
            self._optimizer_key = key
            self._base_lr = config.learning_rate
            logger.debug("🔍 Bound %s optimizer to %d tensors in '%s'", config.kind, len(params), self.namespace)
        elif config.learning_rate != self._base_lr:
            self.set_learning_rate(config.learning_rate)
            self._base_lr = config.learning_rate
        return self._optimizer

    def set_learning_rate(self, lr: float) -> None:
        if self._optimizer is None:
            raise GradientError("no optimizer bound to this store yet")
        for group in self._optimizer.param_groups:
            group["lr"] = lr

    @property
    def optimizer_state(self) -> Dict:
        return {} if self._optimizer is None else self._optimizer.state


def _graph_leaves(loss: torch.Tensor) -> List[torch.Tensor]:
    """Leaf tensors that ``loss.backward()`` accumulates into."""
    leaves, seen, pending = [], set(), [loss.grad_fn]
    while pending:
        node = pending.pop()
        if node is None or node in seen:
            continue
        seen.add(node)
        variable = getattr(node, "variable", None)
        if variable is not None:
            leaves.append(variable)
        pending.extend(child for child, _ in node.next_functions)
    return leaves


def backward(loss: torch.Tensor, store: Optional[ParameterStore] = None) -> None:
    """Reverse-mode pass from a scalar loss; gradients accumulate into ``.grad``.

    Every gradient the pass touches must be finite. With a ``store`` they are
    reported by parameter name.
    """
    if loss.numel() != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any trainable tensor")
    if not bool(torch.isfinite(loss)):
        raise NumericError(f"loss is not finite: {loss.item()}")
    leaves = _graph_leaves(loss) if loss.grad_fn is not None else [loss]
    loss.reshape(()).backward()
    if store is not None:
        for name, p in store:
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                raise NumericError(f"non-finite gradient for '{name}'")
    for i, leaf in enumerate(leaves):
        if leaf.grad is not None and not bool(torch.isfinite(leaf.grad).all()):
            raise NumericError(f"non-finite gradient for leaf {i} of shape {tuple(leaf.shape)}")


def optimizer_step(store: ParameterStore, config: OptimizerConfig) -> ParameterStore:
    missing = store.missing_gradients()
    if missing:
        preview = ", ".join(missing[:5])
        raise GradientError(f"{len(missing)} parameter(s) have no gradient (e.g. {preview}); call backward first")
    optimizer = store.optimizer(config)
    optimizer.step()
    return store
