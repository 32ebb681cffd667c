"""Feed-forward policy network trained on its own quantized actions.

ReLU hidden layers, logistic outputs, cross-entropy loss against binary
labels, analytic backprop and ADAM.  Also the replay memory and the
exploration noise schedule used by the training loops.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
OUTPUT_CLAMP = 1e-6
CHECKPOINT_FORMAT = "policy-net/1"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class PolicyNet:
    weights: list[np.ndarray]          # W_l, shape (fan_out, fan_in)
    biases: list[np.ndarray]
    learning_rate: float = 0.01
    m: list[np.ndarray] = field(default_factory=list)   # ADAM first moments, weights then biases
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def init_xavier(sizes: Sequence[int], rng: np.random.Generator, learning_rate: float = 0.01) -> PolicyNet:
    """Uniform Xavier weights, zero biases; ``sizes`` = [in, hidden..., out]."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return PolicyNet(weights, biases, learning_rate)


def _forward_cache(net: PolicyNet, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = _sigmoid(z) if l == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, h


def forward(net: PolicyNet, state: np.ndarray) -> np.ndarray:
    """Action probabilities in (0, 1); accepts one state or a (B, in) batch."""
    x = np.asarray(state, dtype=float)
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(f"state has dim {x.shape[-1]}, net expects {net.sizes[0]}")
    out = _forward_cache(net, np.atleast_2d(x))[1]
    return np.clip(out[0] if x.ndim == 1 else out, OUTPUT_CLAMP, 1 - OUTPUT_CLAMP)


def loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of the summed binary cross-entropy."""
    p = np.clip(np.atleast_2d(probs), OUTPUT_CLAMP, 1 - OUTPUT_CLAMP)
    a = np.atleast_2d(labels).astype(float)
    if p.shape[0] == 0:
        raise ValueError("empty batch")
    return float(-np.mean(np.sum(a * np.log(p) + (1 - a) * np.log(1 - p), axis=1)))


def gradients(net: PolicyNet, states: np.ndarray, labels: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss and its gradient w.r.t. every parameter (weights first, then biases).

    The clamp in :func:`forward` is left out here so the gradient is that of
    the smooth loss; it only matters for saturated outputs.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float))
    a = np.atleast_2d(labels).astype(float)
    acts, out = _forward_cache(net, x)
    batch = x.shape[0]
    p = np.clip(out, OUTPUT_CLAMP, 1 - OUTPUT_CLAMP)
    value = float(-np.mean(np.sum(a * np.log(p) + (1 - a) * np.log(1 - p), axis=1)))
    delta = (out - a) / batch              # d loss / d z at the logistic layer
    gw: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    for l in range(len(net.weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (acts[l] > 0)
    return value, [*gw, *gb]


def adam_update(net: PolicyNet, grads: list[np.ndarray]) -> None:
    """One bias-corrected ADAM step, in place."""
    b1, b2 = ADAM_BETAS
    net.step += 1
    c1 = 1 - b1 ** net.step
    c2 = 1 - b2 ** net.step
    for p, g, m, v in zip(net.params, grads, net.m, net.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= net.learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def backward_and_adam(net: PolicyNet, states: np.ndarray, labels: np.ndarray) -> float:
    value, grads = gradients(net, states, labels)
    adam_update(net, grads)
    return value


# ---------------------------------------------------------------------------
# exploration and replay


@dataclass
class ExplorationSchedule:
    epsilon0: float = 0.99
    decay: float = 0.999
    floor: float = 0.01
    noise_var: float = 0.36
    t: int = 0

    @property
    def epsilon(self) -> float:
        return max(self.floor, self.epsilon0 * self.decay ** self.t)

    def advance(self) -> None:
        self.t += 1


def explore(probs: np.ndarray, epsilon: float, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    """probs + epsilon * N(0, noise_var), clamped into (0, 1)."""
    p = np.asarray(probs, dtype=float)
    if epsilon == 0:
        return p.copy()
    noisy = p + epsilon * rng.normal(0.0, math.sqrt(noise_var), p.shape)
    return np.clip(noisy, OUTPUT_CLAMP, 1 - OUTPUT_CLAMP)


@dataclass
class ReplayMemory:
    """FIFO memory; once full, each push overwrites the oldest transition."""

    capacity: int
    items: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    cursor: int = 0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, state: np.ndarray, action: np.ndarray, next_state: np.ndarray) -> None:
        item = (np.asarray(state, dtype=float), np.asarray(action, dtype=float), np.asarray(next_state, dtype=float))
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.cursor] = item
        self.cursor = (self.cursor + 1) % self.capacity

    def ordered(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Transitions oldest first."""
        if len(self.items) < self.capacity:
            return list(self.items)
        return self.items[self.cursor:] + self.items[:self.cursor]

    def sample(self, batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | None:
        """(states, actions) drawn without replacement, or None if too few stored."""
        if len(self.items) < batch_size:
            return None
        idx = rng.choice(len(self.items), size=batch_size, replace=False)
        return (np.array([self.items[i][0] for i in idx]), np.array([self.items[i][1] for i in idx]))


# ---------------------------------------------------------------------------
# checkpoints


def net_to_dict(net: PolicyNet, schedule: ExplorationSchedule | None = None) -> dict:
    out = {
        "format": CHECKPOINT_FORMAT,
        "sizes": net.sizes,
        "learning_rate": net.learning_rate,
        "step": net.step,
        "params": [p.ravel().tolist() for p in net.params],
        "adam_m": [p.ravel().tolist() for p in net.m],
        "adam_v": [p.ravel().tolist() for p in net.v],
    }
    if schedule is not None:
        out["exploration"] = {"epsilon0": schedule.epsilon0, "decay": schedule.decay, "floor": schedule.floor,
                              "noise_var": schedule.noise_var, "t": schedule.t}
    return out


def net_from_dict(d: dict) -> tuple[PolicyNet, ExplorationSchedule | None]:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    sizes = d["sizes"]
    shapes = [(o, i) for i, o in zip(sizes[:-1], sizes[1:])] + [(o,) for o in sizes[1:]]

    def unpack(flat: list[list[float]]) -> list[np.ndarray]:
        return [np.array(v, dtype=float).reshape(s) for v, s in zip(flat, shapes)]

    params, m, v = unpack(d["params"]), unpack(d["adam_m"]), unpack(d["adam_v"])
    n = len(sizes) - 1
    net = PolicyNet(params[:n], params[n:], d["learning_rate"], m, v, d["step"])
    sched = None
    if "exploration" in d:
        sched = ExplorationSchedule(**d["exploration"])
    return net, sched


def save_checkpoint(path: str | Path, net: PolicyNet, schedule: ExplorationSchedule | None = None) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net, schedule)))


def load_checkpoint(path: str | Path) -> tuple[PolicyNet, ExplorationSchedule | None]:
    return net_from_dict(json.loads(Path(path).read_text()))
