"""Named-parameter network substrate on torch: MLP and LSTM layers, gradients, Adam, checkpoints.

Every parameter lives in a `ParameterStore` under a dotted name (`"lstm.w_ih"`,
`"head.1.weight"`). Layers are plain functions that look their weights up by
prefix, so target networks and checkpoints are just stores with the same names.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import ContractViolation

DTYPE = torch.float64
CHECKPOINT_FORMAT = "rsac-checkpoint/1"
FORGET_GATE_BIAS = 1.0

Activation = Literal["relu", "tanh", "identity"]

_ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "identity": lambda tensor: tensor,
}


class ParameterStore:
    """Name -> float64 leaf tensor, with gradients accumulated by autograd."""

    def __init__(self) -> None:
        self._params: dict[str, torch.Tensor] = {}
        self._optimizer: torch.optim.Adam | None = None

    def add(self, name: str, value: torch.Tensor | np.ndarray | Sequence[float]) -> torch.Tensor:
        if name in self._params:
            raise ContractViolation(f"Parameter '{name}' already exists.")
        tensor = torch.as_tensor(value, dtype=DTYPE).detach().clone().requires_grad_(True)
        if not torch.isfinite(tensor).all():
            raise ContractViolation(f"Parameter '{name}' has non-finite values.")
        self._params[name] = tensor
        self._optimizer = None
        return tensor

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._params[name]
        except KeyError as exc:
            raise ContractViolation(f"Unknown parameter '{name}'.") from exc

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def parameters(self) -> list[torch.Tensor]:
        return list(self._params.values())

    def grad(self, name: str) -> torch.Tensor:
        tensor = self[name]
        if tensor.grad is None:
            return torch.zeros_like(tensor)
        return tensor.grad.detach().clone()

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def set(self, name: str, value: torch.Tensor | np.ndarray | Sequence[float] | float) -> None:
        tensor = self[name]
        new_value = torch.as_tensor(value, dtype=DTYPE)
        if new_value.shape != tensor.shape and new_value.numel() != 1:
            raise ContractViolation(
                f"Parameter '{name}' has shape {tuple(tensor.shape)}, got {tuple(new_value.shape)}."
            )
        with torch.no_grad():
            tensor.copy_(new_value.expand_as(tensor))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.detach().cpu().numpy().copy() for name, tensor in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, Any]) -> None:
        if set(arrays) != set(self._params):
            missing = sorted(set(self._params) - set(arrays))
            extra = sorted(set(arrays) - set(self._params))
            raise ContractViolation(f"Parameter names differ: missing {missing}, unexpected {extra}.")
        for name, value in arrays.items():
            self.set(name, value)

    def clone(self) -> ParameterStore:
        copy = ParameterStore()
        for name, tensor in self._params.items():
            copy.add(name, tensor.detach())
        return copy

    def optimizer(self, lr: float, betas: tuple[float, float], eps: float) -> torch.optim.Adam:
        """Adam state bound to this store; hyperparameters follow the latest call."""
        if self._optimizer is None:
            self._optimizer = torch.optim.Adam(self.parameters(), lr=lr, betas=betas, eps=eps)
        for group in self._optimizer.param_groups:
            group.update(lr=lr, betas=betas, eps=eps)
        return self._optimizer


def _uniform(generator: torch.Generator, shape: tuple[int, ...], bound: float) -> torch.Tensor:
    return (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound


def init_linear(
    store: ParameterStore,
    prefix: str,
    in_size: int,
    out_size: int,
    generator: torch.Generator,
) -> None:
    """Uniform fan-in initialisation, +-1/sqrt(in_size)."""
    bound = 1.0 / math.sqrt(in_size)
    store.add(f"{prefix}.weight", _uniform(generator, (out_size, in_size), bound))
    store.add(f"{prefix}.bias", _uniform(generator, (out_size,), bound))


def init_mlp(store: ParameterStore, prefix: str, sizes: Sequence[int], generator: torch.Generator) -> None:
    for index, (in_size, out_size) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{prefix}.{index}", in_size, out_size, generator)


def init_lstm(
    store: ParameterStore,
    prefix: str,
    input_size: int,
    hidden_size: int,
    generator: torch.Generator,
) -> None:
    """Gate rows are ordered input, forget, candidate, output; forget bias starts at 1."""
    bound = 1.0 / math.sqrt(hidden_size)
    store.add(f"{prefix}.w_ih", _uniform(generator, (4 * hidden_size, input_size), bound))
    store.add(f"{prefix}.w_hh", _uniform(generator, (4 * hidden_size, hidden_size), bound))
    bias = _uniform(generator, (4 * hidden_size,), bound)
    bias[hidden_size : 2 * hidden_size] = FORGET_GATE_BIAS
    store.add(f"{prefix}.bias", bias)


def _check_shape(store: ParameterStore, name: str, expected: tuple[int, ...]) -> torch.Tensor:
    tensor = store[name]
    if tuple(tensor.shape) != expected:
        raise ContractViolation(f"Parameter '{name}' has shape {tuple(tensor.shape)}, expected {expected}.")
    return tensor


def _check_input(x: torch.Tensor, size: int, where: str) -> None:
    if x.shape[-1] != size:
        raise ContractViolation(f"Input to '{where}' has trailing size {x.shape[-1]}, expected {size}.")


def mlp_forward(
    store: ParameterStore,
    prefix: str,
    sizes: Sequence[int],
    activation: Activation,
    x: torch.Tensor,
    *,
    activate_output: bool = False,
) -> torch.Tensor:
    """Affine layers `sizes[0] -> ... -> sizes[-1]` with `activation` between them."""
    act = _ACTIVATIONS[activation]
    _check_input(x, sizes[0], prefix)
    hidden = x
    n_layers = len(sizes) - 1
    for index in range(n_layers):
        weight = _check_shape(store, f"{prefix}.{index}.weight", (sizes[index + 1], sizes[index]))
        bias = _check_shape(store, f"{prefix}.{index}.bias", (sizes[index + 1],))
        hidden = F.linear(hidden, weight, bias)
        if index < n_layers - 1 or activate_output:
            hidden = act(hidden)
    return hidden


@dataclass(frozen=True)
class LstmState:
    hidden: torch.Tensor
    cell: torch.Tensor

    def __post_init__(self) -> None:
        if self.hidden.shape != self.cell.shape:
            raise ContractViolation(
                f"LSTM hidden {tuple(self.hidden.shape)} and cell {tuple(self.cell.shape)} differ in shape."
            )

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> LstmState:
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(hidden=torch.zeros(shape, dtype=DTYPE), cell=torch.zeros(shape, dtype=DTYPE))

    def detach(self) -> LstmState:
        return LstmState(hidden=self.hidden.detach(), cell=self.cell.detach())


def lstm_step(store: ParameterStore, prefix: str, x: torch.Tensor, state: LstmState) -> LstmState:
    hidden_size = state.hidden.shape[-1]
    w_hh = _check_shape(store, f"{prefix}.w_hh", (4 * hidden_size, hidden_size))
    w_ih = store[f"{prefix}.w_ih"]
    if w_ih.ndim != 2 or w_ih.shape[0] != 4 * hidden_size:
        raise ContractViolation(f"Parameter '{prefix}.w_ih' has shape {tuple(w_ih.shape)}.")
    bias = _check_shape(store, f"{prefix}.bias", (4 * hidden_size,))
    _check_input(x, w_ih.shape[1], prefix)

    gates = F.linear(x, w_ih, bias) + F.linear(state.hidden, w_hh)
    input_gate, forget_gate, candidate, output_gate = gates.chunk(4, dim=-1)
    cell = torch.sigmoid(forget_gate) * state.cell + torch.sigmoid(input_gate) * torch.tanh(candidate)
    hidden = torch.sigmoid(output_gate) * torch.tanh(cell)
    return LstmState(hidden=hidden, cell=cell)


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every store the forward pass touched."""
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractViolation("backward expects a scalar loss tensor.")
    if loss.grad_fn is None:
        raise ContractViolation("backward called without a recorded forward pass.")
    if getattr(loss, "_consumed", False):
        raise ContractViolation("backward already ran for this forward pass; run the forward pass again.")
    loss.backward()
    loss._consumed = True


def adam_step(
    store: ParameterStore,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    store.optimizer(lr, betas, eps).step()
    store.zero_grad()


def soft_update(online: ParameterStore, target: ParameterStore, tau_soft: float) -> None:
    """target <- (1 - tau) * target + tau * online, by name."""
    if set(online) != set(target):
        raise ContractViolation("Online and target stores have different parameter names.")
    with torch.no_grad():
        for name in online:
            source, destination = online[name], target[name]
            if source.shape != destination.shape:
                raise ContractViolation(f"Parameter '{name}' differs in shape between online and target.")
            if tau_soft == 1.0:
                destination.copy_(source)
            elif tau_soft != 0.0:
                destination.mul_(1.0 - tau_soft).add_(source, alpha=tau_soft)


def gradient_check(
    store: ParameterStore,
    loss_fn: Callable[[], torch.Tensor],
    *,
    step: float = 1e-5,
    max_entries: int | None = None,
    generator: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Worst relative error per parameter between autograd and central differences."""
    store.zero_grad()
    backward(loss_fn())
    errors: dict[str, float] = {}
    for name in store:
        tensor = store[name]
        analytic = store.grad(name).reshape(-1)
        flat_indices = np.arange(tensor.numel())
        if max_entries is not None and len(flat_indices) > max_entries:
            chooser = generator or np.random.default_rng(0)
            flat_indices = chooser.choice(flat_indices, size=max_entries, replace=False)
        worst = 0.0
        flat = tensor.data.view(-1)
        for index in (int(item) for item in flat_indices):
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + step
                upper = loss_fn().item()
                flat[index] = original - step
                lower = loss_fn().item()
                flat[index] = original
            numeric = (upper - lower) / (2.0 * step)
            exact = analytic[index].item()
            error = abs(exact - numeric) / max(floor, abs(exact) + abs(numeric))
            worst = max(worst, error)
        errors[name] = worst
    store.zero_grad()
    return errors


def save_checkpoint(
    path: str | Path,
    stores: Mapping[str, ParameterStore],
    metadata: Mapping[str, Any],
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "stores": {
            store_name: {name: tensor.detach().clone() for name, tensor in ((n, store[n]) for n in store)}
            for store_name, store in stores.items()
        },
        "metadata": dict(metadata),
    }
    torch.save(payload, target)
    return target


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParameterStore], dict[str, Any]]:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Missing checkpoint: {source}")
    payload = torch.load(source, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ContractViolation(f"Unrecognised checkpoint format in {source}: {payload.get('format')!r}.")
    stores: dict[str, ParameterStore] = {}
    for store_name, tensors in payload["stores"].items():
        store = ParameterStore()
        for name, tensor in tensors.items():
            store.add(name, tensor)
        stores[store_name] = store
    return stores, dict(payload["metadata"])
