"""Warm-up and dual-training loops, ablation variants and fault transfer."""

import json
import logging
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .config import Config, config_to_text, parse_config_text
from .envs import clamp_action, make_fault, reset, step
from .errors import ConfigError, NumericError
from .flow import action_probability_buffer, flow_matching_loss, sample_action, uniform_actions
from .metrics import EvalReport, emit_metrics, summarize
from .nn import MlpSpec, Network, apply_update, init_params
from .replay import DUAL, WARMUP, Batch, ReplayBuffer
from .retrieval import pretrain_retrieval, retrieval_loss

log = logging.getLogger("winflownets.run")

WARMUP_VARIANTS = ("winflownets", "v2_separate_buffers")
_EVAL_TAG = 0xE7A1
_TRANSFER_TAG = 0x7F5


class Streams:
    """Independent generators for each source of randomness in a run."""

    NAMES = ("init", "env", "act", "replay", "flow", "pretrain")

    def __init__(self, *entropy):
        children = np.random.SeedSequence(list(entropy)).spawn(len(self.NAMES))
        for name, child in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(child))


@dataclass
class RunState:
    config: Config
    flow: Network
    retrieval: Network
    buffer: ReplayBuffer
    flow_buffer: ReplayBuffer = None  # only for v2_separate_buffers
    step: int = 0
    episode: int = 0
    phase: str = "warmup"
    eta: float = 0.0
    warmup_steps_done: int = 0
    dual_steps_done: int = 0
    flow_updates: int = 0
    retrieval_updates: int = 0
    first_flow_update_step: int = -1
    clamped_outflow: int = 0
    warmup_in_flow_batches: int = 0
    warmup_in_first_dual_batches: int = 0
    reports: list = field(default_factory=list)
    flow_losses: list = field(default_factory=list)
    retrieval_losses: list = field(default_factory=list)
    eta_history: list = field(default_factory=list)
    streams: Streams = None
    run_dir: str = None

    @property
    def flow_source(self):
        return self.buffer if self.flow_buffer is None else self.flow_buffer

    @property
    def fault(self):
        return make_fault(self.config.env.fault)


def network_specs(config):
    sd, ad = config.env.state_dim, config.env.action_dim
    t = config.train
    return (MlpSpec(sd + ad, t.hidden, 1, t.activation),
            MlpSpec(sd + ad, t.hidden, sd, t.activation))


def init_run_state(config, streams=None):
    streams = streams or Streams(config.train.seed)
    flow_spec, ret_spec = network_specs(config)
    flow = Network(init_params(flow_spec, streams.init))
    retrieval = Network(init_params(ret_spec, streams.init))
    cap, sd = config.train.buffer_capacity, config.env.state_dim
    state = RunState(config, flow, retrieval, ReplayBuffer(cap, sd), streams=streams,
                     eta=config.train.eta0)
    if config.train.variant == "v2_separate_buffers":
        state.flow_buffer = ReplayBuffer(cap, sd)
    if config.train.variant not in WARMUP_VARIANTS:
        state.phase = "dual"
    return state


# -- policies ---------------------------------------------------------------

def uniform_candidate_policy(M, rng):
    def policy(s):
        candidates = uniform_actions(rng, M)
        return candidates[rng.integers(M)]
    return policy


def flow_policy(flow_params, M, tau, rng):
    def policy(s):
        return sample_action(action_probability_buffer(flow_params, s, M, rng, tau), rng)
    return policy


def rollout(env_cfg, fault, policy, rng):
    """One episode; returns (states, actions, rewards) with states including s_0."""
    s = reset(env_cfg, rng)
    states, actions, rewards = [s.values], [], []
    while True:
        a = clamp_action(policy(s.values))
        res = step(s, a, env_cfg, fault)
        actions.append(a)
        rewards.append(res.reward)
        states.append(res.next_state.values)
        s = res.next_state
        if res.terminal:
            return np.array(states), np.array(actions), np.array(rewards)


def evaluate(flow_params, config, fault=None, n=None, seed=None, timestep=0, policy="flow"):
    """Average undiscounted return of ``n`` independent episodes.

    Episode ``i`` uses its own generator seeded by (seed, timestep, i), so the
    result does not depend on rollout order.
    """
    fault = make_fault(config.env.fault) if fault is None else fault
    n = config.train.eval_episodes if n is None else n
    seed = config.train.seed if seed is None else seed
    if n < 2:
        raise ValueError("evaluation needs n >= 2 episodes")
    returns = []
    for i in range(n):
        rng = np.random.default_rng([_EVAL_TAG, seed, timestep, i])
        if policy == "random":
            pol = lambda s, rng=rng: uniform_actions(rng, 1)[0]  # noqa: E731
        else:
            pol = flow_policy(flow_params, config.flow.M, config.flow.tau_soft, rng)
        returns.append(rollout(config.env, fault, pol, rng)[2].sum())
    return EvalReport.from_returns(timestep, returns)


# -- core loop --------------------------------------------------------------

def _next_eval(state, offset):
    t = state.config.train
    k = max(1, (state.step - offset) // t.eval_interval + 1)
    return offset + k * t.eval_interval


class _Evaluator:
    def __init__(self, state, offset, end):
        self.state = state
        self.end = end
        self.next = _next_eval(state, offset)

    def __call__(self):
        st = self.state
        if st.step != self.next or st.step > self.end:
            return
        t = st.config.train
        report = evaluate(st.flow.params, st.config, st.fault, t.eval_episodes, t.seed, st.step)
        st.reports.append(report)
        log.info("eval step=%d mean=%.5f std=%.5f clamped_outflow=%d",
                 st.step, report.mean_reward, report.std_reward, st.clamped_outflow)
        if st.run_dir:
            os.makedirs(os.path.join(st.run_dir, "checkpoints"), exist_ok=True)
            save_run_state(os.path.join(st.run_dir, "checkpoints", f"step_{st.step:09d}.ckpt"),
                           st, include_buffers=False)
            emit_metrics(st.run_dir, st.reports, summarize(st.reports, t.stability_window,
                                                           t.stability_rel_threshold))
        self.next += t.eval_interval


def _run_episode(state, policy, phase, end, buffers, on_step):
    env_cfg, fault, rng = state.config.env, state.fault, state.streams.env
    s = reset(env_cfg, rng)
    while True:
        a = clamp_action(policy(s.values))
        res = step(s, a, env_cfg, fault)
        for buf in buffers:
            buf.add(s.values, a, res.reward, res.next_state.values, state.episode, phase,
                    res.terminal)
        state.step += 1
        if phase == WARMUP:
            state.warmup_steps_done += 1
        else:
            state.dual_steps_done += 1
        on_step()
        s = res.next_state
        if res.terminal or state.step >= end:
            break
    state.episode += 1


def _update_retrieval(state, source, lr):
    batch = source.sample_minibatch(state.config.train.retrieval_batch_size, state.streams.replay)
    return _retrieval_step(state, batch, lr)


def _retrieval_step(state, batch, lr):
    loss, grad = retrieval_loss(state.retrieval.params, batch)
    if not np.isfinite(loss):
        raise NumericError("non-finite retrieval loss", {"step": state.step})
    apply_update(state.retrieval, grad, lr)
    state.retrieval_updates += 1
    state.retrieval_losses.append(loss)
    return loss


def warmup_increment(config):
    t = config.train
    if t.eta_increment > 0:
        return t.eta_increment
    if t.warmup_steps == 0:
        return 0.0
    return (t.eta_max - t.eta0) * config.env.horizon / t.warmup_steps


def run_warmup(config, state, env=None):
    """Uniform-candidate exploration for ``warmup_steps`` env steps; only the
    retrieval network trains, with a learning rate ramped from eta0 to eta_max."""
    t = config.train
    if t.variant not in WARMUP_VARIANTS:
        raise ConfigError(f"variant {t.variant} has no warm-up phase")
    if state.step != 0:
        raise ValueError("warm-up must start at step 0")
    state.phase = "warmup"
    state.eta = t.eta0
    inc = warmup_increment(config)
    updates = t.warmup_updates_per_episode or t.updates_per_episode
    policy = uniform_candidate_policy(config.flow.M, state.streams.act)
    evaluator = _Evaluator(state, t.first_eval_offset, t.total_steps)
    while state.step < t.warmup_steps:
        _run_episode(state, policy, WARMUP, t.warmup_steps, [state.buffer], evaluator)
        for _ in range(updates):
            _update_retrieval(state, state.buffer, state.eta)
        state.eta_history.append(state.eta)
        state.eta = min(state.eta + inc, t.eta_max)
    state.phase = "dual"
    return state


def _dual_update(state, first_episode):
    cfg = state.config
    t = cfg.train
    batch = state.flow_source.sample_minibatch(t.batch_size, state.streams.replay)
    hits = int(np.sum(batch.phase == WARMUP))
    state.warmup_in_flow_batches += hits
    if first_episode:
        state.warmup_in_first_dual_batches += hits
    diag = {}
    loss, grad = flow_matching_loss(state.flow.params, state.retrieval.params, batch.s, batch.r,
                                    batch.terminal, cfg.flow, state.streams.flow, diag)
    apply_update(state.flow, grad, t.lr_flow)
    state.flow_updates += 1
    if state.first_flow_update_step < 0:
        state.first_flow_update_step = state.step
    state.flow_losses.append(loss)
    n_clamped = diag.get("clamped_outflow", 0)
    if n_clamped:
        state.clamped_outflow += n_clamped
    if t.variant == "cflownets_pretrained":
        return
    if state.flow_buffer is None:
        _retrieval_step(state, batch, t.lr_retrieval)
    else:
        _update_retrieval(state, state.buffer, t.lr_retrieval)


def run_dual(config, state, env=None, end=None, eval_offset=None):
    """Flow-guided collection with joint updates after every episode until ``end`` steps."""
    t = config.train
    end = t.total_steps if end is None else end
    offset = t.first_eval_offset if eval_offset is None else eval_offset
    state.phase = "dual"
    evaluator = _Evaluator(state, offset, end)
    policy = flow_policy_live(state)
    buffers = [state.buffer] if state.flow_buffer is None else [state.flow_buffer, state.buffer]
    first = True
    while state.step < end:
        _run_episode(state, policy, DUAL, end, buffers, evaluator)
        try:
            for _ in range(t.updates_per_episode):
                _dual_update(state, first)
        except NumericError as exc:
            exc.diagnostics.setdefault("step", state.step)
            log.error("numeric abort at step %d: %s", state.step, exc)
            if state.run_dir:
                save_run_state(os.path.join(state.run_dir, "abort.ckpt"), state)
                with open(os.path.join(state.run_dir, "abort_diagnostics.json"), "w") as fh:
                    json.dump(exc.diagnostics, fh, indent=1, default=str)
            raise
        first = False
    return state


def flow_policy_live(state):
    """Flow policy that always reads the current flow parameters."""
    M, tau, rng = state.config.flow.M, state.config.flow.tau_soft, state.streams.act

    def policy(s):
        return sample_action(action_probability_buffer(state.flow.params, s, M, rng, tau), rng)
    return policy


def collect_random_transitions(config, n, rng):
    """``n`` transitions from a uniform-random policy, used to pre-train the CFlowNets retrieval net."""
    buf = ReplayBuffer(n, config.env.state_dim)
    fault = make_fault(config.env.fault)
    while len(buf) < n:
        s = reset(config.env, rng)
        while len(buf) < n:
            a = uniform_actions(rng, 1)[0]
            res = step(s, a, config.env, fault)
            buf.add(s.values, a, res.reward, res.next_state.values, 0, WARMUP, res.terminal)
            s = res.next_state
            if res.terminal:
                break
    return buf.gather(np.arange(n))


def _subset(batch, idx):
    return Batch(*(getattr(batch, f)[idx] for f in batch.__dataclass_fields__))


def pretrain_baseline(config, state):
    """Vanilla CFlowNets path: fit the retrieval net on a fixed random-policy dataset."""
    t = config.train
    rng = state.streams.pretrain
    data = collect_random_transitions(config, t.pretrain_transitions, rng)
    order = rng.permutation(len(data))
    n_train = int(round(0.9 * len(data)))
    train, held = _subset(data, order[:n_train]), _subset(data, order[n_train:])
    curve = pretrain_retrieval(state.retrieval, train, t.pretrain_epochs, t.pretrain_lr, rng,
                               t.retrieval_batch_size)
    held_mse = retrieval_loss(state.retrieval.params, held)[0] if len(held) else float("nan")
    log.info("pretrained retrieval: epochs=%d final_train_mse=%.6g held_out_mse=%.6g",
             t.pretrain_epochs, curve[-1] if curve else float("nan"), held_mse)
    state.retrieval.opt = type(state.retrieval.opt).zeros(state.retrieval.params.spec.n_params)
    return curve, held_mse


# -- variants and transfer -----------------------------------------------------

def resolve_variant_config(config):
    t = config.train
    if t.variant in WARMUP_VARIANTS or t.warmup_steps == 0:
        return config
    if t.variant == "v1_no_warmup":
        warnings.warn("v1_no_warmup ignores warmup_steps > 0; forcing 0", stacklevel=3)
    return config.override(train={"warmup_steps": 0, "eval_start": t.first_eval_offset})


class _RunLog:
    def __init__(self, run_dir):
        self.handler = None
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
            self.handler = logging.FileHandler(os.path.join(run_dir, "events.log"), mode="w",
                                               encoding="utf-8")
            self.handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))

    def __enter__(self):
        if self.handler:
            log.addHandler(self.handler)
            if log.level == logging.NOTSET or log.level > logging.INFO:
                log.setLevel(logging.INFO)
        return self

    def __exit__(self, *exc):
        if self.handler:
            log.removeHandler(self.handler)
            self.handler.close()


def _finish(state):
    t = state.config.train
    if state.run_dir:
        save_run_state(os.path.join(state.run_dir, "final.ckpt"), state)
        emit_metrics(state.run_dir, state.reports,
                     summarize(state.reports, t.stability_window, t.stability_rel_threshold))
    log.info("done steps=%d warmup=%d dual=%d flow_updates=%d retrieval_updates=%d "
             "clamped_outflow=%d", state.step, state.warmup_steps_done, state.dual_steps_done,
             state.flow_updates, state.retrieval_updates, state.clamped_outflow)


def run_variant(config, run_dir=None):
    """Train one variant end to end; writes config, checkpoints and metrics under ``run_dir``."""
    config = resolve_variant_config(config)
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(config_to_text(config))
    with _RunLog(run_dir):
        state = init_run_state(config)
        state.run_dir = run_dir
        log.info("variant=%s env=%s fault=%s seed=%d", config.train.variant, config.env.kind,
                 config.env.fault, config.train.seed)
        if config.train.variant in WARMUP_VARIANTS and config.train.warmup_steps > 0:
            run_warmup(config, state)
        if config.train.variant == "cflownets_pretrained":
            pretrain_baseline(config, state)
        run_dual(config, state)
        _finish(state)
    return state


def transfer_to_fault(checkpoint_path, fault, config=None, run_dir=None, steps=None,
                      reset_buffer=False):
    """Resume dual training from a checkpoint with the environment's fault swapped.

    ``fault`` is a fault name ("none", "ad", "rom"). ``steps`` defaults to the
    config's total_steps. The replay buffer travels with the parameters unless
    ``reset_buffer`` is set.
    """
    make_fault(fault)
    state = load_run_state(checkpoint_path, config)
    cfg = state.config.override(env={"fault": fault})
    state.config = cfg
    state.streams = Streams(cfg.train.seed, _TRANSFER_TAG, state.step)
    state.run_dir = run_dir
    state.reports = []
    if reset_buffer:
        state.buffer.clear()
        if state.flow_buffer is not None:
            state.flow_buffer.clear()
    steps = cfg.train.total_steps if steps is None else steps
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(config_to_text(cfg))
    with _RunLog(run_dir):
        log.info("transfer fault=%s from=%s start_step=%d steps=%d buffer=%d",
                 fault, checkpoint_path, state.step, steps, len(state.buffer))
        if steps > 0:
            run_dual(cfg, state, end=state.step + steps, eval_offset=state.step)
        _finish(state)
    return state


# -- persistence ---------------------------------------------------------------

_COUNTERS = ("step", "episode", "warmup_steps_done", "dual_steps_done", "flow_updates",
             "retrieval_updates", "first_flow_update_step", "clamped_outflow")


def run_state_entries(state, include_buffers=True):
    e = {"config": config_to_text(state.config).encode("utf-8"),
         "phase": state.phase.encode("utf-8"),
         "counters": np.array([getattr(state, c) for c in _COUNTERS], dtype=np.int64),
         "eta": np.array([state.eta])}
    e.update(ckpt.network_entries("flow", state.flow))
    e.update(ckpt.network_entries("retrieval", state.retrieval))
    if include_buffers:
        for prefix, buf in (("buffer", state.buffer), ("flow_buffer", state.flow_buffer)):
            if buf is not None:
                e.update({f"{prefix}.{k}": v for k, v in buf.to_arrays().items()})
    e["reports"] = np.array([[r.timestep, r.mean_reward, r.std_reward, r.ci_width, r.n]
                             for r in state.reports], dtype=np.float64).reshape(-1, 5)
    return e


def save_run_state(path, state, include_buffers=True):
    ckpt.save(path, run_state_entries(state, include_buffers))


def _buffer_from(entries, prefix):
    keys = [k for k in entries if k.startswith(prefix + ".")]
    if not keys:
        return None
    return ReplayBuffer.from_arrays({k[len(prefix) + 1:]: entries[k] for k in keys})


def run_state_from_entries(entries, config=None):
    stored = parse_config_text(entries["config"].decode("utf-8"))
    config = stored if config is None else config
    flow = ckpt.network_from_entries("flow", entries)
    retrieval = ckpt.network_from_entries("retrieval", entries)
    sd = config.env.state_dim
    if flow.spec.input_dim != sd + config.env.action_dim or retrieval.spec.output_dim != sd:
        raise ConfigError(
            f"checkpoint networks expect state_dim {retrieval.spec.output_dim}, "
            f"env {config.env.kind!r} has state_dim {sd}")
    buffer = _buffer_from(entries, "buffer") or ReplayBuffer(config.train.buffer_capacity, sd)
    if buffer.state_dim != sd:
        raise ConfigError("checkpoint buffer layout does not match the environment")
    state = RunState(config, flow, retrieval, buffer, _buffer_from(entries, "flow_buffer"),
                     phase=entries["phase"].decode("utf-8"), eta=float(entries["eta"][0]),
                     streams=Streams(config.train.seed))
    for name, value in zip(_COUNTERS, entries["counters"]):
        setattr(state, name, int(value))
    state.reports = [EvalReport(int(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4]))
                     for r in entries["reports"]]
    return state


def load_run_state(path, config=None):
    return run_state_from_entries(ckpt.load(path), config)


def checkpoint_summary(path):
    """Human-readable stats for ``inspect``."""
    e = ckpt.load(path)
    state = run_state_from_entries(e)
    lines = [f"checkpoint: {path}",
             f"variant: {state.config.train.variant}  env: {state.config.env.kind}  "
             f"fault: {state.config.env.fault}  phase: {state.phase}"]
    lines += [f"{c}: {getattr(state, c)}" for c in _COUNTERS]
    for name, net in (("flow", state.flow), ("retrieval", state.retrieval)):
        p = net.params.values
        lines.append(f"{name}: sizes={net.spec.sizes.tolist()} params={p.size} "
                     f"adam_t={net.opt.t} |theta|={np.linalg.norm(p):.6g}")
    for name, buf in (("buffer", state.buffer), ("flow_buffer", state.flow_buffer)):
        if buf is None:
            continue
        n_w = int(np.sum(buf.gather(np.arange(len(buf))).phase == WARMUP))
        lines.append(f"{name}: size={len(buf)}/{buf.capacity} insertions={buf.insertions} "
                     f"warmup={n_w} dual={len(buf) - n_w}")
    lines.append(f"evaluations: {len(state.reports)}")
    if state.reports:
        r = state.reports[-1]
        lines.append(f"last eval: step={r.timestep} mean={r.mean_reward:.5f} std={r.std_reward:.5f}")
    return "\n".join(lines)


def with_seed(config, seed):
    return config.override(train={"seed": seed})


def with_variant(config, variant):
    return replace(config, train=replace(config.train, variant=variant))
