"""Flow network: log-flow evaluation, softmax action selection and the
continuous flow-matching loss with its parameter gradient."""

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .envs import ACTION_DIM, ACTION_MEASURE
from .errors import ConfigError, NumericError
from .nn import backward_cached, forward_cached, mlp_forward

CLAMP_FLOOR = 1e-8


@dataclass(frozen=True)
class FlowLossConfig:
    K: int = 20
    lam: float = ACTION_MEASURE
    eps: float = 1.0
    tau_soft: float = 1.0
    measure: float = ACTION_MEASURE
    reward_shift: float = 0.0
    M: int = 100

    def __post_init__(self):
        if self.K < 1 or self.M < 1:
            raise ConfigError("K and M must be >= 1")
        if not self.lam > 0 or not self.eps > 0 or not self.tau_soft > 0:
            raise ConfigError("lam, eps and tau_soft must be positive")


@dataclass
class ActionProbabilityBuffer:
    actions: np.ndarray
    probs: np.ndarray
    log_flows: np.ndarray = None


def uniform_actions(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=(*shape, ACTION_DIM))


def state_action_inputs(states, actions):
    """Stack (state, action) rows; ``states`` is (B, d) or (d,), ``actions`` is (B, K, 2) or (K, 2)."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if states.ndim == 1:
        states = states[None]
        actions = actions[None]
    B, K = actions.shape[:2]
    X = np.empty((B * K, states.shape[1] + ACTION_DIM))
    X[:, :states.shape[1]] = np.repeat(states, K, axis=0)
    X[:, states.shape[1]:] = actions.reshape(B * K, ACTION_DIM)
    return X


def softmax(logits, tau=1.0):
    z = np.asarray(logits, dtype=np.float64) / tau
    z = np.exp(z - z.max())
    return z / z.sum()


def probs_from_log_flows(log_flows, actions, tau=1.0):
    return ActionProbabilityBuffer(np.asarray(actions), softmax(log_flows, tau), np.asarray(log_flows))


def action_probability_buffer(flow_params, s, M, rng, tau=1.0):
    """Score M uniform candidate actions by log-flow and softmax them."""
    if M < 1:
        raise ValueError("M must be >= 1")
    actions = uniform_actions(rng, M)
    log_flows = mlp_forward(flow_params, state_action_inputs(s, actions))[:, 0]
    return probs_from_log_flows(log_flows, actions, tau)


def sample_action(buffer, rng):
    cdf = np.cumsum(buffer.probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return buffer.actions[min(i, len(cdf) - 1)]


@njit
def _flow_terms(f_in, f_out, c, outflow_mask, log_eps, floor):
    """Log-domain inflow/outflow per state and d(term)/d(log-flow) weights.

    inflow  = log(eps + sum_k exp f_in[b, k])
    outflow = log(c[b] + mask[b] * sum_k exp f_out[b, k]),  c = eps + lam * r
    """
    B, K = f_in.shape
    inflow = np.empty(B)
    outflow = np.empty(B)
    w_in = np.empty((B, K))
    w_out = np.zeros((B, K))
    clamped = np.zeros(B, dtype=np.bool_)
    for b in range(B):
        m = log_eps
        for k in range(K):
            if f_in[b, k] > m:
                m = f_in[b, k]
        acc = np.exp(log_eps - m)
        for k in range(K):
            w_in[b, k] = np.exp(f_in[b, k] - m)
            acc += w_in[b, k]
        inflow[b] = m + np.log(acc)
        for k in range(K):
            w_in[b, k] /= acc

        cb = c[b]
        if outflow_mask[b]:
            m = f_out[b, 0]
            for k in range(1, K):
                if f_out[b, k] > m:
                    m = f_out[b, k]
            if cb > 0.0 and np.log(cb) > m:
                m = np.log(cb)
            s = 0.0
            for k in range(K):
                w_out[b, k] = np.exp(f_out[b, k] - m)
                s += w_out[b, k]
            if cb != 0.0:
                s += cb * np.exp(-m)
            if s * np.exp(m) < floor or not s > 0.0:
                clamped[b] = True
                outflow[b] = np.log(floor)
                for k in range(K):
                    w_out[b, k] = 0.0
            else:
                outflow[b] = m + np.log(s)
                for k in range(K):
                    w_out[b, k] /= s
        else:
            if cb < floor:
                clamped[b] = True
                outflow[b] = np.log(floor)
            else:
                outflow[b] = np.log(cb)
    return inflow, outflow, w_in, w_out, clamped


def _terms(f_in, f_out, rewards, outflow_mask, cfg):
    f_in = np.ascontiguousarray(np.atleast_2d(f_in), dtype=np.float64)
    f_out = np.ascontiguousarray(np.atleast_2d(f_out), dtype=np.float64)
    rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
    c = cfg.eps + cfg.lam * (rewards + cfg.reward_shift)
    mask = np.atleast_1d(np.asarray(outflow_mask, dtype=np.bool_))
    if mask.size == 1 and f_in.shape[0] > 1:
        mask = np.repeat(mask, f_in.shape[0])
    return _flow_terms(f_in, f_out, c, mask, np.log(cfg.eps), CLAMP_FLOOR)


def inflow_estimate(flow_params, retrieval_params, s, actions, cfg):
    """log(eps + sum_k exp F(G(s, a_k), a_k)) for one state; parents are treated as constants."""
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, ACTION_DIM)
    parents = mlp_forward(retrieval_params, state_action_inputs(s, actions))
    f_in = mlp_forward(flow_params, np.hstack([parents, actions]))[:, 0]
    return float(_terms(f_in, f_in, [0.0], [True], cfg)[0][0])


def outflow_estimate(flow_params, s, r, actions, cfg, terminal=False, diagnostics=None):
    """log(eps + lam * r + sum_k exp F(s, a_k)); the sum is dropped for terminal states."""
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, ACTION_DIM)
    f_out = mlp_forward(flow_params, state_action_inputs(s, actions))[:, 0]
    _, out, _, _, clamped = _terms(f_out, f_out, [r], [not terminal], cfg)
    if diagnostics is not None:
        diagnostics["clamped_outflow"] = diagnostics.get("clamped_outflow", 0) + int(clamped.sum())
    return float(out[0])


def flow_matching_loss_at(flow_params, retrieval_params, states, rewards, terminal, actions, cfg,
                          diagnostics=None):
    """Loss and gradient for fixed flow-approximation actions (B, K, 2)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64).reshape(states.shape[0], -1, ACTION_DIM)
    B, K = actions.shape[:2]
    X_out = state_action_inputs(states, actions)
    parents = mlp_forward(retrieval_params, X_out)
    X_in = np.hstack([parents, X_out[:, states.shape[1]:]])
    f_in, cache_in = forward_cached(flow_params, X_in)
    f_out, cache_out = forward_cached(flow_params, X_out)
    mask = ~np.atleast_1d(np.asarray(terminal, dtype=bool))
    inflow, outflow, w_in, w_out, clamped = _terms(
        f_in.reshape(B, K), f_out.reshape(B, K), rewards, mask, cfg)
    diff = inflow - outflow
    loss = float(diff @ diff)
    if diagnostics is not None:
        diagnostics["clamped_outflow"] = diagnostics.get("clamped_outflow", 0) + int(clamped.sum())
    if not np.isfinite(loss):
        raise NumericError("non-finite flow-matching loss",
                           {"states": states.tolist(), "inflow": inflow.tolist(),
                            "outflow": outflow.tolist()})
    g_in = (2.0 * diff)[:, None] * w_in
    g_out = -(2.0 * diff)[:, None] * w_out
    grad = (backward_cached(flow_params, cache_in, g_in.reshape(-1, 1))
            + backward_cached(flow_params, cache_out, g_out.reshape(-1, 1)))
    return loss, grad


def flow_matching_loss(flow_params, retrieval_params, states, rewards, terminal, cfg, rng,
                       diagnostics=None):
    """Sum over the batch of (inflow - outflow)^2 with K fresh uniform actions per state."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    actions = uniform_actions(rng, states.shape[0], cfg.K)
    return flow_matching_loss_at(flow_params, retrieval_params, states, rewards, terminal, actions,
                                 cfg, diagnostics)
