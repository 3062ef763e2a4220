"""Linear-softmax next-tool policy over one-hot (last tool, previous tool, task bucket)
features, with analytic gradients for the supervised, clipped policy-gradient and
entropy terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

FEATURE_MAP_VERSION = 1


@dataclass(frozen=True)
class State:
    bucket: int
    last_tool: int
    prev_tool: int


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


class LinearSoftmaxPolicy:

    def __init__(self, n_tools: int, n_buckets: int = 32, weights: np.ndarray = None):
        if n_tools < 1 or n_buckets < 1:
            raise ValueError("n_tools and n_buckets must be positive")
        self.n_tools = n_tools
        self.n_buckets = n_buckets
        shape = (2 * n_tools + n_buckets, n_tools)
        if weights is None:
            weights = np.zeros(shape)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != shape:
            raise ValueError(f"weights must have shape {shape}, got {weights.shape}")
        self.weights = weights
        self.version = 0

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def rows(self, state: State) -> Tuple[int, int, int]:
        n = self.n_tools
        if not (0 <= state.last_tool < n and 0 <= state.prev_tool < n
                and 0 <= state.bucket < self.n_buckets):
            raise ValueError(f"invalid state {state}")
        return state.last_tool, n + state.prev_tool, 2 * n + state.bucket

    def features(self, state: State) -> np.ndarray:
        x = np.zeros(self.n_features)
        x[list(self.rows(state))] = 1.0
        return x

    def logits(self, state: State) -> np.ndarray:
        a, b, c = self.rows(state)
        w = self.weights
        return w[a] + w[b] + w[c]

    def log_probs(self, state: State) -> np.ndarray:
        return log_softmax(self.logits(state))

    def probs(self, state: State) -> np.ndarray:
        return np.exp(self.log_probs(state))

    def expand(self, state: State, logit_grad: np.ndarray) -> np.ndarray:
        """Full weight gradient from a gradient w.r.t. the logits."""
        g = np.zeros_like(self.weights)
        for r in self.rows(state):
            g[r] += logit_grad
        return g

    def copy(self) -> "LinearSoftmaxPolicy":
        out = LinearSoftmaxPolicy(self.n_tools, self.n_buckets, self.weights.copy())
        out.version = self.version
        return out

    def to_dict(self) -> dict:
        return {
            "n_tools": self.n_tools,
            "n_buckets": self.n_buckets,
            "feature_map_version": FEATURE_MAP_VERSION,
            "weights": self.weights.ravel().tolist(),
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearSoftmaxPolicy":
        if data.get("feature_map_version") != FEATURE_MAP_VERSION:
            raise ValueError(f"unsupported feature map version {data.get('feature_map_version')}")
        n, b = int(data["n_tools"]), int(data["n_buckets"])
        w = np.asarray(data["weights"], dtype=float).reshape(2 * n + b, n)
        out = cls(n, b, w)
        out.version = int(data.get("version", 0))
        return out


# Gradients with respect to the logit vector; `expand` lifts them to weights.

def sl_logit_grad(logp: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    g = np.exp(logp)
    g[target] -= 1.0
    return -float(logp[target]), g


def pg_logit_grad(logp: np.ndarray, old_logprob: float, action: int, advantage: float,
                  clip_eps: float) -> Tuple[float, np.ndarray]:
    if clip_eps <= 0:
        raise ValueError("clip_eps must be positive")
    ratio = float(np.exp(logp[action] - old_logprob))
    clipped = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
    unclipped_obj = ratio * advantage
    clipped_obj = clipped * advantage
    if unclipped_obj <= clipped_obj:
        # min picks the unclipped branch: d(-r A) = -A r d log pi(a)
        g = np.exp(logp) * (ratio * advantage)
        g[action] -= ratio * advantage
        return -unclipped_obj, g
    return -clipped_obj, np.zeros_like(logp)


def entropy_logit_grad(logp: np.ndarray) -> Tuple[float, np.ndarray]:
    p = np.exp(logp)
    h = -float(np.dot(p, logp))
    return h, -p * (logp + h)


def sl_loss_and_grad(policy: LinearSoftmaxPolicy, state: State, target: int):
    loss, g = sl_logit_grad(policy.log_probs(state), target)
    return loss, policy.expand(state, g)


def pg_loss_and_grad(policy: LinearSoftmaxPolicy, old_logprob: float, action: int, state: State,
                     advantage: float, clip_eps: float):
    loss, g = pg_logit_grad(policy.log_probs(state), old_logprob, action, advantage, clip_eps)
    return loss, policy.expand(state, g)


def entropy_and_grad(policy: LinearSoftmaxPolicy, state: State):
    h, g = entropy_logit_grad(policy.log_probs(state))
    return h, policy.expand(state, g)


def apply_update(policy: LinearSoftmaxPolicy, gradient: np.ndarray, learning_rate: float):
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    policy.weights -= learning_rate * gradient
    policy.version += 1
    return policy
