"""Self-contained differentiable function approximators.

A small MLP core (tanh hidden layers, linear output) with exact analytic
gradients, a diagonal-Gaussian policy head with tanh action squashing, a
scalar value head, and the RMSProp update rule. Everything is float64 and
pure numpy; no autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class NnError(ValueError):
    """Shape mismatch or non-finite parameters."""


@dataclass
class ParamSet:
    """Ordered parameter blocks with layer-shape metadata.

    Blocks are ``[W0, b0, W1, b1, ...]`` with ``W`` of shape (in, out); the
    actor carries one extra trailing block, the state-independent per-action
    log standard deviation.
    """

    blocks: list[np.ndarray]
    layer_sizes: tuple[int, ...]
    role: str                       # "actor" | "critic"
    version: int = 0

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def log_sigma(self) -> np.ndarray:
        if self.role != "actor":
            raise NnError("log_sigma only exists on actor parameters")
        return self.blocks[-1]

    def clone(self) -> "ParamSet":
        return ParamSet(
            blocks=[b.copy() for b in self.blocks],
            layer_sizes=self.layer_sizes,
            role=self.role,
            version=self.version,
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks])

    def from_vector(self, vec: np.ndarray) -> "ParamSet":
        """New ParamSet with the same structure and values taken from ``vec``."""
        blocks = []
        i = 0
        for b in self.blocks:
            blocks.append(np.asarray(vec[i:i + b.size], dtype=float).reshape(b.shape).copy())
            i += b.size
        if i != len(vec):
            raise NnError(f"vector length {len(vec)} does not match parameter count {i}")
        return ParamSet(blocks=blocks, layer_sizes=self.layer_sizes, role=self.role,
                        version=self.version)

    def num_params(self) -> int:
        return sum(b.size for b in self.blocks)


@dataclass
class GradientSet:
    """Gradients with the same block structure as their ParamSet."""

    blocks: list[np.ndarray]
    accumulated: bool = False

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "GradientSet":
        return cls(blocks=[np.zeros_like(b) for b in params.blocks])

    def check_congruent(self, params: ParamSet) -> None:
        if len(self.blocks) != len(params.blocks) or any(
            g.shape != p.shape for g, p in zip(self.blocks, params.blocks)
        ):
            raise NnError("gradient blocks not congruent with parameter blocks")

    def add_(self, other: "GradientSet") -> "GradientSet":
        for mine, theirs in zip(self.blocks, other.blocks):
            mine += theirs
        self.accumulated = True
        return self

    def scale_(self, c: float) -> "GradientSet":
        for b in self.blocks:
            b *= c
        return self

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(b * b)) for b in self.blocks))

    def clip_global_norm_(self, max_norm: float) -> "GradientSet":
        norm = self.global_norm()
        if norm > max_norm > 0:
            self.scale_(max_norm / norm)
        return self

    def to_vector(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks])


@dataclass
class PolicyOutput:
    """One policy evaluation: distribution, sample, density, entropy."""

    mean: np.ndarray
    log_sigma: np.ndarray
    pre_squash: np.ndarray     # Gaussian sample before tanh scaling
    action: np.ndarray         # bounded action handed to the environment
    log_prob: float            # density of `action`, squash-corrected
    entropy: float             # of the underlying diagonal Gaussian


@dataclass(frozen=True)
class ActionBounds:
    """Componentwise tanh scaling ``a = loc + scale * tanh(u)``."""

    loc: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "ActionBounds":
        return cls(loc=np.zeros(dim), scale=np.ones(dim))

    def squash(self, u: np.ndarray) -> np.ndarray:
        return self.loc + self.scale * np.tanh(u)

    def log_jacobian(self, u: np.ndarray) -> float:
        # log(1 - tanh(x)^2) evaluated without catastrophic cancellation
        ax = np.abs(u)
        log1mt2 = 2.0 * (math.log(2.0) - ax - np.log1p(np.exp(-2.0 * ax)))
        return float(np.sum(np.log(self.scale) + log1mt2))


def _init_blocks(layer_sizes: tuple[int, ...], rng: np.random.Generator) -> list[np.ndarray]:
    blocks = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        blocks.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        blocks.append(rng.uniform(-bound, bound, size=fan_out))
    return blocks


def init_actor(input_dim: int, hidden: tuple[int, ...], action_dim: int, seed) -> ParamSet:
    """Actor MLP plus a learnable log-sigma vector initialized to zero."""
    rng = np.random.default_rng(seed)
    sizes = (input_dim, *hidden, action_dim)
    blocks = _init_blocks(sizes, rng)
    blocks.append(np.zeros(action_dim))
    return ParamSet(blocks=blocks, layer_sizes=sizes, role="actor")


def init_critic(input_dim: int, hidden: tuple[int, ...], seed) -> ParamSet:
    rng = np.random.default_rng(seed)
    sizes = (input_dim, *hidden, 1)
    return ParamSet(blocks=_init_blocks(sizes, rng), layer_sizes=sizes, role="critic")


def mlp_forward(params: ParamSet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batch forward pass; returns (output, cache of layer activations).

    ``x`` is (T, input_dim) or a single (input_dim,) vector. The cache feeds
    :func:`mlp_backward`.
    """
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.shape[1] != params.input_dim:
        raise NnError(f"feature length {a.shape[1]} != input dim {params.input_dim}")
    acts = [a]
    n = params.num_layers
    for layer in range(n):
        w = params.blocks[2 * layer]
        b = params.blocks[2 * layer + 1]
        z = a @ w + b
        a = np.tanh(z) if layer < n - 1 else z
        acts.append(a)
    return a, acts


def mlp_backward(params: ParamSet, cache: list[np.ndarray], d_out: np.ndarray) -> GradientSet:
    """Exact gradients of a scalar loss given its gradient at the MLP output.

    ``d_out`` is (T, output_dim): dLoss/dOutput for each sample in the batch
    that produced ``cache``. Gradients are summed over the batch. The actor's
    log-sigma block (not part of the MLP path) comes back zero.
    """
    d_out = np.atleast_2d(np.asarray(d_out, dtype=float))
    if d_out.shape != cache[-1].shape:
        raise NnError(
            f"upstream gradient shape {d_out.shape} != forward output {cache[-1].shape}"
        )
    grads = GradientSet.zeros_like(params)
    n = params.num_layers
    da = d_out
    for layer in reversed(range(n)):
        a_in = cache[layer]
        a_out = cache[layer + 1]
        dz = da if layer == n - 1 else da * (1.0 - a_out * a_out)
        grads.blocks[2 * layer][...] = a_in.T @ dz
        grads.blocks[2 * layer + 1][...] = dz.sum(axis=0)
        if layer > 0:
            da = dz @ params.blocks[2 * layer].T
    return grads


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, log_sigma: np.ndarray) -> float:
    """Diagonal-Gaussian log density of ``u``."""
    z = (u - mean) / np.exp(log_sigma)
    return float(-0.5 * (np.sum(z * z) + len(u) * LOG_2PI) - np.sum(log_sigma))


def gaussian_entropy(log_sigma: np.ndarray) -> float:
    return float(np.sum(0.5 * (LOG_2PI + 1.0) + log_sigma))


def forward_actor(params: ParamSet, features: np.ndarray, bounds: ActionBounds,
                  rng: np.random.Generator | None = None) -> PolicyOutput:
    """Evaluate the policy at one state; sample when ``rng`` is given.

    Without an rng the "sample" is the squashed mean (greedy action). The
    reported log-probability is of the bounded action, i.e. it includes the
    tanh-scaling Jacobian correction; the entropy is the Gaussian's.
    """
    feats = np.asarray(features, dtype=float)
    if feats.ndim != 1:
        raise NnError("forward_actor expects a single feature vector")
    if not all(np.isfinite(b).all() for b in params.blocks):
        raise NnError("non-finite actor parameters")
    mean_rows, _ = mlp_forward(params, feats)
    mean = mean_rows[0]
    log_sigma = params.log_sigma
    if rng is None:
        u = mean.copy()
    else:
        u = mean + np.exp(log_sigma) * rng.standard_normal(len(mean))
    log_prob = gaussian_log_prob(u, mean, log_sigma) - bounds.log_jacobian(u)
    return PolicyOutput(
        mean=mean,
        log_sigma=log_sigma.copy(),
        pre_squash=u,
        action=bounds.squash(u),
        log_prob=log_prob,
        entropy=gaussian_entropy(log_sigma),
    )


def forward_critic(params: ParamSet, features: np.ndarray) -> float:
    """Scalar state value."""
    feats = np.asarray(features, dtype=float)
    if feats.ndim != 1:
        raise NnError("forward_critic expects a single feature vector")
    out, _ = mlp_forward(params, feats)
    return float(out[0, 0])


def critic_values(params: ParamSet, features: np.ndarray) -> np.ndarray:
    """(T,) state values for a feature batch."""
    out, _ = mlp_forward(params, features)
    return out[:, 0]


@dataclass
class RmsPropState:
    """Running average of squared gradients plus the update hyperparameters."""

    mu: list[np.ndarray]
    lr: float
    decay: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise NnError("rmsprop decay must be in [0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise NnError("rmsprop lr and eps must be > 0")

    @classmethod
    def for_params(cls, params: ParamSet, lr: float, decay: float = 0.99,
                   eps: float = 1e-8) -> "RmsPropState":
        return cls(mu=[np.zeros_like(b) for b in params.blocks], lr=lr, decay=decay, eps=eps)

    def clone(self) -> "RmsPropState":
        return RmsPropState(mu=[m.copy() for m in self.mu], lr=self.lr,
                            decay=self.decay, eps=self.eps)


def rmsprop_step(state: RmsPropState, params: ParamSet,
                 grads: GradientSet) -> tuple[ParamSet, RmsPropState]:
    """One update: mu <- d*mu + (1-d)*g^2; p <- p - lr*g/sqrt(mu + eps).

    Returns fresh parameter and state objects so published snapshots stay
    immutable for concurrent readers.
    """
    grads.check_congruent(params)
    new_mu = []
    new_blocks = []
    for p, g, m in zip(params.blocks, grads.blocks, state.mu):
        mu = state.decay * m + (1.0 - state.decay) * g * g
        new_mu.append(mu)
        new_blocks.append(p - state.lr * g / np.sqrt(mu + state.eps))
    new_params = ParamSet(blocks=new_blocks, layer_sizes=params.layer_sizes,
                          role=params.role, version=params.version)
    return new_params, RmsPropState(mu=new_mu, lr=state.lr, decay=state.decay, eps=state.eps)


def sgd_step(params: ParamSet, grads: GradientSet, lr: float) -> ParamSet:
    """Plain gradient step ``p - lr * g`` (used by the inner adaptation loop)."""
    grads.check_congruent(params)
    blocks = [p - lr * g for p, g in zip(params.blocks, grads.blocks)]
    return ParamSet(blocks=blocks, layer_sizes=params.layer_sizes, role=params.role,
                    version=params.version)
