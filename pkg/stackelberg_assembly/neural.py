"""Feedforward joint-action Q-approximator with analytic gradients, Adam and soft target updates."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    CHECKPOINT_FORMAT_VERSION,
    DEFAULT_HIDDEN_SIZES,
    DEFAULT_LEARNING_RATE,
)
from .errors import ShapeMismatchError
from .task_model import AssemblyTask, ChessboardState


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class QApproximator:
    """ReLU MLP whose output is a joint-action Q-matrix, leader-major.

    Weights are stored (fan_in, fan_out) so a batch of row vectors multiplies from the left.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(cls, layer_sizes: tuple[int, ...], rng: np.random.Generator) -> "QApproximator":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_sizes), weights, biases)

    @classmethod
    def zeros(cls, layer_sizes: tuple[int, ...]) -> "QApproximator":
        weights = [np.zeros((fan_in, fan_out)) for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(fan_out) for fan_out in layer_sizes[1:]]
        return cls(tuple(layer_sizes), weights, biases)

    @property
    def n_actions(self) -> int:
        """Actions per agent (columns + no-op)."""
        return int(round(np.sqrt(self.layer_sizes[-1])))

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        params: list[np.ndarray] = []
        for weight, bias in zip(self.weights, self.biases):
            params.extend((weight, bias))
        return params

    def copy(self) -> "QApproximator":
        return QApproximator(
            self.layer_sizes,
            [weight.copy() for weight in self.weights],
            [bias.copy() for bias in self.biases],
        )


def network_sizes(task: AssemblyTask, hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN_SIZES) -> tuple[int, ...]:
    """Layer sizes for a task: one-hot board input, one output per joint action."""
    n_actions = task.n_columns + 1
    return (encoding_size(task), *hidden_sizes, n_actions * n_actions)


def encoding_size(task: AssemblyTask) -> int:
    """Length of a board encoding: one one-hot block per column."""
    return task.n_columns * (task.n_subtasks + 1)


def encode_state(state: ChessboardState, task: AssemblyTask) -> np.ndarray:
    """One-hot block per column over {empty, 1..K}."""
    block = task.n_subtasks + 1
    encoding = np.zeros(task.n_columns * block)
    offsets = np.arange(task.n_columns) * block + np.asarray(state.frontier, dtype=int)
    encoding[offsets] = 1.0
    return encoding


def _check_input(net: QApproximator, states: np.ndarray) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(states, dtype=float))
    if batch.shape[-1] != net.layer_sizes[0]:
        raise ShapeMismatchError(
            f"State encoding has length {batch.shape[-1]}, network expects {net.layer_sizes[0]}."
        )
    return batch


def _forward_pass(net: QApproximator, batch: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Return pre-activations and activations (inputs first) for backprop."""
    activations = [batch]
    pre_activations: list[np.ndarray] = []
    last = len(net.weights) - 1
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        z = activations[-1] @ weight + bias
        pre_activations.append(z)
        activations.append(z if index == last else relu(z))
    return pre_activations, activations


def forward(net: QApproximator, states: np.ndarray) -> np.ndarray:
    """Q-matrix for one encoding, or a stack of Q-matrices for a batch of encodings."""
    single = np.ndim(states) == 1
    batch = _check_input(net, states)
    _, activations = _forward_pass(net, batch)
    size = net.n_actions
    q_values = activations[-1].reshape(-1, size, size)
    return q_values[0] if single else q_values


def joint_index(net: QApproximator, a_L: np.ndarray, a_F: np.ndarray) -> np.ndarray:
    """Flat output index of each (leader, follower) action pair."""
    return np.asarray(a_L, dtype=int) * net.n_actions + np.asarray(a_F, dtype=int)


def td_gradient(
    net: QApproximator,
    states: np.ndarray,
    a_L: np.ndarray,
    a_F: np.ndarray,
    targets: np.ndarray,
) -> tuple[list[np.ndarray], float]:
    """Gradients of mean((Q(s, a_L, a_F) - target)^2) through the selected outputs only.

    Returns gradients in parameters() order and the loss value.
    """
    batch = _check_input(net, states)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    pre_activations, activations = _forward_pass(net, batch)
    rows = np.arange(batch.shape[0])
    selected = joint_index(net, a_L, a_F).reshape(-1)
    residual = activations[-1][rows, selected] - targets
    loss = float(np.mean(residual**2))

    delta = np.zeros_like(activations[-1])
    delta[rows, selected] = 2.0 * residual / batch.shape[0]

    grads: list[np.ndarray] = []
    for index in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(activations[index].T @ delta)
        if index > 0:
            delta = (delta @ net.weights[index].T) * (pre_activations[index - 1] > 0)
    grads.reverse()
    return grads, loss


@dataclass
class AdamState:
    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step: int = 0
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def for_network(cls, net: QApproximator, learning_rate: float = DEFAULT_LEARNING_RATE) -> "AdamState":
        params = net.parameters()
        return cls(
            first_moments=[np.zeros_like(param) for param in params],
            second_moments=[np.zeros_like(param) for param in params],
            learning_rate=learning_rate,
        )


def optimizer_step(
    net: QApproximator,
    grads: list[np.ndarray],
    opt: AdamState,
) -> tuple[QApproximator, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeMismatchError("Gradient shapes do not match network parameters.")

    opt.step += 1
    correction1 = 1.0 - opt.beta1**opt.step
    correction2 = 1.0 - opt.beta2**opt.step
    for param, grad, m, v in zip(params, grads, opt.first_moments, opt.second_moments):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad**2
        param -= opt.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + opt.epsilon)
    return net, opt


def soft_update(target_net: QApproximator, online_net: QApproximator, tau: float) -> QApproximator:
    """target <- tau * target + (1 - tau) * online, in place."""
    if target_net.layer_sizes != online_net.layer_sizes:
        raise ShapeMismatchError(
            f"Cannot blend networks of sizes {target_net.layer_sizes} and {online_net.layer_sizes}."
        )
    for target_param, online_param in zip(target_net.parameters(), online_net.parameters()):
        target_param *= tau
        target_param += (1.0 - tau) * online_param
    return target_net


@dataclass
class Checkpoint:
    online: QApproximator
    target: QApproximator
    optimizer: AdamState
    rng_state: dict[str, Any] | None = None
    train_step: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    """Write one agent's networks, optimizer and rng state to a .npz archive."""
    arrays: dict[str, np.ndarray] = {
        "version": np.array(CHECKPOINT_FORMAT_VERSION),
        "layer_sizes": np.array(checkpoint.online.layer_sizes),
        "adam_step": np.array(checkpoint.optimizer.step),
        "adam_hparams": np.array(
            [
                checkpoint.optimizer.learning_rate,
                checkpoint.optimizer.beta1,
                checkpoint.optimizer.beta2,
                checkpoint.optimizer.epsilon,
            ]
        ),
        "rng_state": np.array(json.dumps(checkpoint.rng_state)),
        "train_step": np.array(checkpoint.train_step),
        "metadata": np.array(json.dumps(checkpoint.metadata, sort_keys=True)),
    }
    for index, param in enumerate(checkpoint.online.parameters()):
        arrays[f"online_{index}"] = param
    for index, param in enumerate(checkpoint.target.parameters()):
        arrays[f"target_{index}"] = param
    for index, (m, v) in enumerate(zip(checkpoint.optimizer.first_moments, checkpoint.optimizer.second_moments)):
        arrays[f"adam_m_{index}"] = m
        arrays[f"adam_v_{index}"] = v

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as file:
        np.savez(file, **arrays)


def _network_from(arrays: Any, prefix: str, layer_sizes: tuple[int, ...]) -> QApproximator:
    count = 2 * (len(layer_sizes) - 1)
    params = [arrays[f"{prefix}_{index}"].copy() for index in range(count)]
    return QApproximator(layer_sizes, params[0::2], params[1::2])


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint."""
    with np.load(path, allow_pickle=False) as arrays:
        version = int(arrays["version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"Unsupported checkpoint version {version} in {path}.")
        layer_sizes = tuple(int(size) for size in arrays["layer_sizes"])
        online = _network_from(arrays, "online", layer_sizes)
        target = _network_from(arrays, "target", layer_sizes)
        count = 2 * (len(layer_sizes) - 1)
        learning_rate, beta1, beta2, epsilon = (float(value) for value in arrays["adam_hparams"])
        optimizer = AdamState(
            first_moments=[arrays[f"adam_m_{index}"].copy() for index in range(count)],
            second_moments=[arrays[f"adam_v_{index}"].copy() for index in range(count)],
            step=int(arrays["adam_step"]),
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )
        return Checkpoint(
            online=online,
            target=target,
            optimizer=optimizer,
            rng_state=json.loads(str(arrays["rng_state"])),
            train_step=int(arrays["train_step"]),
            metadata=json.loads(str(arrays["metadata"])),
        )
