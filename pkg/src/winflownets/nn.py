"""Dense MLP substrate: forward pass, parameter gradients and Adam.

Parameters live in one flat float64 vector, layer by layer: the weight matrix
(fan_in x fan_out, row-major) followed by the bias vector.
"""

from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import NumericError

ACTIVATIONS = {"relu": 0, "tanh": 1}


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if not self.hidden_dims:
            raise ValueError("MlpSpec needs at least one hidden layer")
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation != "identity":
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def sizes(self):
        return np.array([self.input_dim, *self.hidden_dims, self.output_dim], dtype=np.int64)

    @property
    def n_params(self):
        s = self.sizes
        return int(np.sum((s[:-1] + 1) * s[1:]))


@dataclass
class MlpParams:
    spec: MlpSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got shape {self.values.shape}")

    def copy(self):
        return MlpParams(self.spec, self.values.copy())


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8

    @classmethod
    def zeros(cls, n, **hyper):
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps_opt)


@dataclass
class Network:
    """Parameters plus the optimizer state that trains them."""

    params: MlpParams
    opt: AdamState = field(default=None)

    def __post_init__(self):
        if self.opt is None:
            self.opt = AdamState.zeros(self.params.spec.n_params)

    @property
    def spec(self):
        return self.params.spec

    def copy(self):
        return Network(self.params.copy(), self.opt.copy())


def init_params(spec, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    chunks = []
    s = spec.sizes
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return MlpParams(spec, np.concatenate(chunks))


@njit
def _forward(theta, sizes, act, X):
    B = X.shape[0]
    n_layers = sizes.shape[0] - 1
    H = np.empty(B * np.sum(sizes[1:-1]))
    h = X
    out = np.empty((B, sizes[-1]))
    po = 0
    ho = 0
    for layer in range(n_layers):
        fan_in = sizes[layer]
        fan_out = sizes[layer + 1]
        W = theta[po:po + fan_in * fan_out].reshape((fan_in, fan_out))
        po += fan_in * fan_out
        b = theta[po:po + fan_out]
        po += fan_out
        z = h @ W + b
        if layer < n_layers - 1:
            if act == 0:
                z = np.maximum(z, 0.0)
            else:
                z = np.tanh(z)
            H[ho:ho + B * fan_out] = z.ravel()
            h = H[ho:ho + B * fan_out].reshape((B, fan_out))
            ho += B * fan_out
        else:
            out = z
    return out, H


@njit
def _backward(theta, sizes, act, X, H, G):
    B = X.shape[0]
    n_layers = sizes.shape[0] - 1
    grad = np.zeros_like(theta)
    p_off = np.zeros(n_layers + 1, dtype=np.int64)
    h_off = np.zeros(n_layers, dtype=np.int64)
    for layer in range(n_layers):
        p_off[layer + 1] = p_off[layer] + (sizes[layer] + 1) * sizes[layer + 1]
        if layer + 1 < n_layers:
            h_off[layer + 1] = h_off[layer] + B * sizes[layer + 1]
    delta = G
    for layer in range(n_layers - 1, -1, -1):
        fan_in = sizes[layer]
        fan_out = sizes[layer + 1]
        po = p_off[layer]
        if layer == 0:
            inp = X
        else:
            inp = H[h_off[layer - 1]:h_off[layer - 1] + B * fan_in].reshape((B, fan_in))
        gW = inp.T @ delta
        grad[po:po + fan_in * fan_out] = gW.ravel()
        grad[po + fan_in * fan_out:po + fan_in * fan_out + fan_out] = delta.sum(axis=0)
        if layer > 0:
            W = theta[po:po + fan_in * fan_out].reshape((fan_in, fan_out))
            dh = delta @ W.T
            if act == 0:
                delta = np.where(inp > 0.0, dh, 0.0)
            else:
                delta = dh * (1.0 - inp * inp)
    return grad


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.ascontiguousarray(x.reshape(1, -1) if single else x)
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ValueError(f"input width {X.shape[-1]} != input_dim {params.spec.input_dim}")
    return X, single


def forward_cached(params, x):
    """Batched forward pass that also returns the hidden activations for backward."""
    X, _ = _as_batch(params, x)
    out, H = _forward(params.values, params.spec.sizes, ACTIVATIONS[params.spec.activation], X)
    return out, (X, H)


def mlp_forward(params, x):
    """Evaluate the network on one input vector or a (batch, input_dim) array."""
    X, single = _as_batch(params, x)
    out, _ = _forward(params.values, params.spec.sizes, ACTIVATIONS[params.spec.activation], X)
    return out[0] if single else out


def backward_cached(params, cache, upstream):
    X, H = cache
    G = np.ascontiguousarray(np.asarray(upstream, dtype=np.float64).reshape(X.shape[0], -1))
    if G.shape[1] != params.spec.output_dim:
        raise ValueError(f"upstream width {G.shape[1]} != output_dim {params.spec.output_dim}")
    return _backward(params.values, params.spec.sizes, ACTIVATIONS[params.spec.activation], X, H, G)


def mlp_backward(params, x, upstream_grad):
    """Gradient of <upstream_grad, mlp_forward(params, x)> w.r.t. the flat parameters.

    For batched input the per-row gradients are summed.
    """
    _, cache = forward_cached(params, x)
    return backward_cached(params, cache, upstream_grad)


def adam_step(params, state, grad, lr):
    """One bias-corrected Adam update. Returns new (params, state); inputs are not mutated."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {params.values.shape}")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NumericError("non-finite gradient", {"indices": bad[:10].tolist(), "count": int(bad.size)})
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new_values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps_opt)
    return (MlpParams(params.spec, new_values),
            AdamState(m, v, t, b1, b2, state.eps_opt))


def apply_update(net, grad, lr):
    net.params, net.opt = adam_step(net.params, net.opt, grad, lr)
