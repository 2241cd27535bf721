"""
Small fully connected networks with hand-derived gradients.

Both the softmax policy and the scalar baseline are ReLU MLPs with a linear output
layer. Forward passes accept one state (D,) or a stack of states (N, D); backward
passes take the cache of the matching forward call. Everything is float64.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DomainError, TrainingError
from app.core.utils.validation import check_finite

logger = logging.getLogger(__name__)

DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.99
DEFAULT_ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    """Weights (fan_in, fan_out) and biases (fan_out,) per layer."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("an MLP needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DomainError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DomainError(f"layer {i}: fan_in {w.shape[0]} != previous fan_out")

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in layer order, weight before bias."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def copy(self) -> "MlpParams":
        return MlpParams(weights=[w.copy() for w in self.weights], biases=[b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def with_flat(self, values: np.ndarray) -> "MlpParams":
        """Same shapes, entries taken from a flat vector."""
        if values.shape != (self.size,):
            raise DomainError(f"expected {self.size} values, got shape {values.shape}")
        arrays, offset = [], 0
        for a in self.arrays:
            arrays.append(values[offset: offset + a.size].reshape(a.shape).astype(np.float64))
            offset += a.size
        return MlpParams(weights=arrays[0::2], biases=arrays[1::2])

    def add(self, other: "MlpParams") -> "MlpParams":
        return MlpParams(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )

    def same_as(self, other: "MlpParams") -> bool:
        return self.dims == other.dims and all(np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays))

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(a))) for a in self.arrays)


def policy_dims(K: int, M: int, hidden: Optional[int] = None, layers: int = 2) -> Tuple[int, ...]:
    """Input 2K + M, `layers` hidden layers of width 32 + 2K by default, K logits."""
    width = hidden if hidden is not None else 32 + 2 * K
    return (2 * K + M,) + (width,) * layers + (K,)


def baseline_dims(K: int, M: int, hidden: int = 32, layers: int = 2) -> Tuple[int, ...]:
    return (2 * K + M,) + (hidden,) * layers + (1,)


def init_params(dims: Sequence[int], seed: int | np.random.Generator) -> MlpParams:
    """
    Initialize an MLP with fan-balanced uniform weights and zero biases.

    Weights of a layer are drawn from U(-r, r) with r = sqrt(6 / (fan_in + fan_out)).

    Args:
        dims: Layer sizes, input first
        seed: Integer seed or a generator to draw from

    Returns:
        MlpParams: Fresh parameters, deterministic per seed
    """
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise DomainError(f"invalid network dims {list(dims)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return MlpParams(weights=weights, biases=biases)


@dataclass
class MlpCache:
    """Inputs and pre-activations of every layer, kept for the backward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    batched: bool = True


def _as_batch(states: np.ndarray, dim: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(states, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DomainError(f"state must have dimension {dim}, got shape {np.shape(states)}")
    check_finite(x, "state")
    return x, batched


def mlp_forward(params: MlpParams, states: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    """Forward pass returning (N, out) outputs and the cache."""
    x, batched = _as_batch(states, params.dims[0])
    cache = MlpCache(batched=batched)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(x)
        z = x @ w + b
        cache.pre_activations.append(z)
        x = z if i == last else np.maximum(z, 0.0)
    return x, cache


def mlp_backward(params: MlpParams, cache: MlpCache, grad_out: np.ndarray) -> MlpParams:
    """Backpropagate d(loss)/d(output) of shape (N, out) to parameter gradients."""
    if len(cache.inputs) != len(params.weights):
        raise DomainError("forward cache does not belong to these parameters")
    delta = np.asarray(grad_out, dtype=np.float64)
    if delta.shape != cache.pre_activations[-1].shape:
        raise DomainError(
            f"output gradient shape {delta.shape} != forward output shape {cache.pre_activations[-1].shape}"
        )
    grad_w: List[np.ndarray] = [np.empty(0)] * len(params.weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        grad_w[i] = cache.inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (cache.pre_activations[i - 1] > 0.0)
    return MlpParams(weights=grad_w, biases=grad_b)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return shifted / np.sum(shifted, axis=-1, keepdims=True)


@dataclass
class PolicyCache:
    mlp: MlpCache
    probs: np.ndarray
    log_probs: np.ndarray
    eta: float


def policy_forward(params: MlpParams, states: np.ndarray, eta: float) -> Tuple[np.ndarray, PolicyCache]:
    """
    Action probabilities pi(. | s) = softmax(q(s) / eta).

    Args:
        params: Policy network parameters
        states: One state (D,) or a stack (N, D)
        eta: Softmax temperature, > 0

    Returns:
        Probabilities shaped (K,) or (N, K) like the input, and the cache

    Raises:
        DomainError: If eta <= 0 or the state has non-finite entries or a wrong dimension
    """
    if not eta > 0.0:
        raise DomainError(f"temperature eta must be positive, got {eta}")
    logits, mlp_cache = mlp_forward(params, states)
    log_probs = log_softmax(logits / eta)
    probs = softmax(logits / eta)
    cache = PolicyCache(mlp=mlp_cache, probs=probs, log_probs=log_probs, eta=eta)
    return (probs if mlp_cache.batched else probs[0]), cache


def policy_backward(
    params: MlpParams, cache: PolicyCache, actions: np.ndarray, coeffs: np.ndarray
) -> MlpParams:
    """
    Gradients of sum_t coeffs[t] * log pi(actions[t] | s_t) with respect to the policy.

    With u = q / eta, d log pi(a) / d u_i = 1{i = a} - pi_i, and the chain rule adds
    the 1 / eta factor on the raw logits q.

    Raises:
        DomainError: If actions or coefficients do not align with the cached batch
    """
    probs = cache.probs
    n, K = probs.shape
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if actions.shape[0] != n or coeffs.shape[0] != n:
        raise DomainError(f"expected {n} actions and coefficients, got {actions.shape[0]} and {coeffs.shape[0]}")
    if actions.size and (actions.min() < 0 or actions.max() >= K):
        raise DomainError(f"actions must lie in [0, {K})")
    grad_u = -probs * coeffs[:, None]
    grad_u[np.arange(n), actions] += coeffs
    return mlp_backward(params, cache.mlp, grad_u / cache.eta)


def policy_log_probs(params: MlpParams, states: np.ndarray, actions: np.ndarray, eta: float) -> np.ndarray:
    """log pi(actions[t] | states[t]) for a stack of states."""
    logits, _ = mlp_forward(params, states)
    log_probs = log_softmax(logits / eta)
    return log_probs[np.arange(log_probs.shape[0]), np.asarray(actions, dtype=np.int64)]


def baseline_forward(params: MlpParams, states: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    """Baseline values b(s): a scalar for one state, (N,) for a stack."""
    values, cache = mlp_forward(params, states)
    values = values[:, 0]
    return (values if cache.batched else values[0]), cache


def baseline_backward(
    params: MlpParams, cache: MlpCache, targets: np.ndarray
) -> Tuple[float, MlpParams]:
    """
    Squared-error loss sum_t (b(s_t) - G_t)^2 and its parameter gradients.

    Raises:
        DomainError: If targets do not align with the cached batch
    """
    values = cache.pre_activations[-1][:, 0]
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.shape != values.shape:
        raise DomainError(f"expected {values.shape[0]} targets, got {targets.shape[0]}")
    residual = values - targets
    loss = float(np.sum(residual ** 2))
    grads = mlp_backward(params, cache, (2.0 * residual)[:, None])
    return loss, grads


def sample_action(probs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """
    Epsilon-greedy draw: with probability 1 - epsilon sample from `probs`,
    otherwise pick a label uniformly at random.
    """
    K = probs.shape[0]
    if rng.random() >= epsilon:
        return int(rng.choice(K, p=probs))
    return int(rng.integers(K))


def greedy_action(probs: np.ndarray) -> int:
    """Argmax; ties go to the lowest label index."""
    return int(np.argmax(probs))


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: MlpParams
    v: MlpParams
    step: int = 0
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_ADAM_EPS

    @classmethod
    def zeros(
        cls,
        params: MlpParams,
        beta1: float = DEFAULT_BETA1,
        beta2: float = DEFAULT_BETA2,
        eps: float = DEFAULT_ADAM_EPS,
    ) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), step=0, beta1=beta1, beta2=beta2, eps=eps)

    def copy(self) -> "AdamState":
        return AdamState(
            m=self.m.copy(), v=self.v.copy(), step=self.step, beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float) -> MlpParams:
    """
    Apply one bias-corrected Adam update; `state` is advanced in place.

    Args:
        params: Current parameters (left untouched)
        grads: Gradients of the loss being minimized
        state: Moment estimates matching the parameter shapes
        lr: Learning rate of this step

    Returns:
        MlpParams: The updated parameters

    Raises:
        TrainingError: If any gradient entry is non-finite
        DomainError: If shapes do not match
    """
    if grads.dims != params.dims or state.m.dims != params.dims:
        raise DomainError(f"gradient dims {grads.dims} do not match parameter dims {params.dims}")
    if not grads.is_finite():
        raise TrainingError("non-finite gradient")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_arrays, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays, grads.arrays, state.m.arrays, state.v.arrays):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        new_arrays.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)

    state.m = MlpParams(weights=new_m[0::2], biases=new_m[1::2])
    state.v = MlpParams(weights=new_v[0::2], biases=new_v[1::2])
    state.step = step
    return MlpParams(weights=new_arrays[0::2], biases=new_arrays[1::2])


@dataclass(frozen=True)
class ExponentialLR:
    """Per-epoch exponential learning-rate schedule: lr(epoch) = initial * gamma ** epoch."""

    initial: float
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if not self.initial > 0.0:
            raise DomainError(f"initial learning rate must be positive, got {self.initial}")
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError(f"decay factor must lie in (0, 1], got {self.gamma}")

    def rate(self, epoch: int) -> float:
        return self.initial * self.gamma ** epoch
