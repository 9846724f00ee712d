"""Acceptance gate. Each test carries a criterion number; conftest prints one
PASS/FAIL line per criterion in the terminal summary."""

import math
import os
import time
import warnings

import numpy as np
import pytest

from winflownets.checkpoint import dumps, load, loads
from winflownets.cli import main
from winflownets.config import desk_scale
from winflownets.envs import (ACTUATOR_DAMAGE, NO_FAULT, REDUCED_ROM, EnvConfig, EnvState,
                              reset, step)
from winflownets.experiments import directional
from winflownets.flow import FlowLossConfig, flow_matching_loss, flow_matching_loss_at
from winflownets.metrics import EvalReport, ci_width, final_performance
from winflownets.nn import MlpParams, MlpSpec, init_params, mlp_forward
from winflownets.replay import Batch
from winflownets.retrieval import retrieval_loss
from winflownets.training import (collect_random_transitions, init_run_state, load_run_state,
                                  run_variant, run_warmup, save_run_state, transfer_to_fault)

from conftest import fd_grad, tiny_config


def criterion(num):
    def mark(fn):
        fn.criterion = num
        return fn
    return mark


def note(record_property, ok, detail):
    record_property("detail", detail)
    assert ok, detail


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-6)))


@criterion(1)
def test_gradients_match_finite_differences(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    sd = 4
    flow_spec = MlpSpec(sd + 2, (8, 8), 1, "tanh")
    ret_spec = MlpSpec(sd + 2, (8, 8), sd, "tanh")
    assert flow_spec.n_params <= 500 and ret_spec.n_params <= 500
    cfg = FlowLossConfig(K=4, lam=4.0, eps=1.0)
    worst_flow = worst_ret = 0.0
    n_points = 20
    for _ in range(n_points):
        f = init_params(flow_spec, rng)
        g = init_params(ret_spec, rng)
        states = rng.normal(size=(4, sd))
        r = rng.uniform(0.0, 1.0, 4)
        term = rng.random(4) < 0.3
        acts = rng.uniform(-1, 1, (4, cfg.K, 2))
        _, grad = flow_matching_loss_at(f, g, states, r, term, acts, cfg)
        num = fd_grad(lambda th: flow_matching_loss_at(MlpParams(flow_spec, th), g, states, r,
                                                       term, acts, cfg)[0], f.values.copy())
        np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-8)
        worst_flow = max(worst_flow, rel_err(grad, num))

        n = 6
        b = Batch(rng.normal(size=(n, sd)), rng.uniform(-1, 1, (n, 2)), np.zeros(n),
                  rng.normal(size=(n, sd)), np.zeros(n, int), np.zeros(n, int), np.zeros(n, bool))
        _, grad = retrieval_loss(g, b)
        num = fd_grad(lambda th: retrieval_loss(MlpParams(ret_spec, th), b)[0], g.values.copy())
        np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-8)
        worst_ret = max(worst_ret, rel_err(grad, num))
    elapsed = time.perf_counter() - t0
    note(record_property, elapsed < 30,
         f"{n_points} points, params {flow_spec.n_params}/{ret_spec.n_params}, "
         f"max rel err flow {worst_flow:.1e} retrieval {worst_ret:.1e}, {elapsed:.1f}s")


def identity_retrieval(sd):
    spec = MlpSpec(sd + 2, (2 * sd,), sd)
    W1 = np.zeros((sd + 2, 2 * sd))
    W1[:sd, :sd] = np.eye(sd)
    W1[:sd, sd:] = -np.eye(sd)
    W2 = np.vstack([np.eye(sd), -np.eye(sd)])
    return MlpParams(spec, np.concatenate([W1.ravel(), np.zeros(2 * sd), W2.ravel(), np.zeros(sd)]))


@criterion(2)
def test_flow_fixed_point(record_property):
    # The retrieval net maps every child back to itself, so the inflow and
    # outflow sums see identical flow inputs; with zero reward they coincide.
    rng = np.random.default_rng(7)
    sd = 4
    f = init_params(MlpSpec(sd + 2, (16, 16), 1), rng)
    states = rng.normal(size=(32, sd))
    loss, grad = flow_matching_loss(f, identity_retrieval(sd), states, np.zeros(32),
                                    np.zeros(32, bool), FlowLossConfig(K=8), rng)
    gmax = float(np.max(np.abs(grad)))
    note(record_property, loss <= 1e-12 and gmax <= 1e-12, f"loss {loss:.1e}, max |grad| {gmax:.1e}")


@pytest.fixture(scope="module")
def desk_warmup():
    cfg = desk_scale().override(env={"kind": "point_sparse"})
    state = init_run_state(cfg)
    flow_before = state.flow.params.values.copy()
    t0 = time.perf_counter()
    run_warmup(cfg, state)
    return cfg, state, flow_before, time.perf_counter() - t0


@criterion(3)
def test_retrieval_learns_parents_during_warmup(desk_warmup, record_property):
    cfg, state, _, elapsed = desk_warmup
    held = collect_random_transitions(cfg, 2000, np.random.default_rng(99))
    mse = retrieval_loss(state.retrieval.params, held)[0]
    x = np.hstack([held.s, held.a_prev])
    err = np.abs(mlp_forward(state.retrieval.params, x) - held.s_prev)
    frac = float(np.mean(np.max(err, axis=1) < 0.05))
    note(record_property, mse < 1e-3 and frac >= 0.95 and elapsed < 120,
         f"held-out MSE {mse:.2e}, {frac:.1%} within 0.05, warm-up {elapsed:.1f}s")


@criterion(4)
def test_fault_injection(record_property):
    rng = np.random.default_rng(4)
    reacher = EnvConfig(kind="reacher2")
    worst = 0.0
    for _ in range(1000):
        s = reset(reacher, rng)
        q = rng.uniform(-3.0, 3.0, 2)
        v = s.values.copy()
        v[:4] = [np.cos(q[0]), np.cos(q[1]), np.sin(q[0]), np.sin(q[1])]
        v[6:8] = rng.uniform(-8, 8, 2)
        s = EnvState(v, s.layout, 0, q)
        a = rng.uniform(-1, 1, 2)
        nominal = step(s, a, reacher, NO_FAULT).torque
        damaged = step(s, a, reacher, ACTUATOR_DAMAGE).torque
        worst = max(worst, float(np.max(np.abs(damaged - 0.25 * nominal))))
    s = reset(reacher, rng)
    lo, hi = np.inf, -np.inf
    for _ in range(10_000):
        a = rng.choice([-1.0, 1.0], size=2) if rng.random() < 0.5 else rng.uniform(-1, 1, 2)
        s = step(s, a, reacher, REDUCED_ROM).next_state
        lo, hi = min(lo, s.angles[1]), max(hi, s.angles[1])
        s = EnvState(s.values, s.layout, 0, s.angles)
    note(record_property, worst <= 1e-12 and -1.5 <= lo and hi <= 1.5,
         f"AD max torque dev {worst:.1e} over 1000 pairs, ROM joint1 range [{lo:.3f}, {hi:.3f}]")


@criterion(5)
def test_warmup_semantics(desk_warmup, record_property):
    cfg, state, flow_before, _ = desk_warmup
    identical = state.flow.params.values.tobytes() == flow_before.tobytes()
    eta = np.array(state.eta_history)
    monotone = bool(np.all(np.diff(eta) >= 0))
    capped = bool(eta.max() <= cfg.train.eta_max) and state.eta <= cfg.train.eta_max
    note(record_property, identical and monotone and capped and state.flow_updates == 0,
         f"flow params bit-identical={identical}, eta {eta[0]:.1e} -> {eta.max():.1e} "
         f"(cap {cfg.train.eta_max:.0e}) non-decreasing={monotone}")


@criterion(6)
def test_shared_buffer_contract(record_property):
    shared = run_variant(tiny_config(variant="winflownets"))
    separate = run_variant(tiny_config(variant="v2_separate_buffers"))
    ok = shared.warmup_in_flow_batches > 0 and separate.warmup_in_flow_batches == 0
    note(record_property, ok,
         f"warm-up rows in flow batches: winflownets {shared.warmup_in_flow_batches}, "
         f"v2 {separate.warmup_in_flow_batches}")


@criterion(7)
def test_metrics_arithmetic(record_property):
    w = ci_width(1.0, 10)
    reports = [EvalReport.from_returns(t, [float(t)] * 2) for t in range(1, 31)]
    mean, _ = final_performance(reports)
    # Only the last 20 (11..30) count; any other window shifts the mean.
    ok = abs(w - 2 / math.sqrt(10)) <= 1e-9 and mean == np.mean(np.arange(11, 31))
    note(record_property, ok, f"ci_width(1, 10) = {w:.12f}, final mean of 11..30 = {mean}")


@criterion(8)
@pytest.mark.slow
def test_desk_directional(record_property):
    t0 = time.perf_counter()
    res = directional(seeds=(0, 1, 2, 3, 4), variants=("winflownets", "v1_no_warmup"))
    elapsed = time.perf_counter() - t0
    w = np.array(res["finals"]["winflownets"])
    v1 = np.array(res["finals"]["v1_no_warmup"])
    gap, se = res["gap"], res["pooled_se"]
    wins = int(np.sum(w >= v1))
    ok = gap > 0 and gap >= 3 * se and wins >= 4 and elapsed < 20 * 60
    note(record_property, ok,
         f"winflownets {w.mean():.4f} vs random {np.mean(res['random']):.4f} "
         f"(gap {gap / se if se > 0 else float('inf'):.1f} SE); "
         f"winflownets >= v1 on {wins}/5 seeds; {elapsed / 60:.1f} min")


@criterion(9)
def test_determinism_and_round_trip(tmp_path, record_property):
    cfg = tiny_config()
    run_variant(cfg, tmp_path / "a")
    run_variant(cfg, tmp_path / "b")
    same_metrics = (tmp_path / "a" / "metrics.csv").read_bytes() == \
        (tmp_path / "b" / "metrics.csv").read_bytes()

    ckpt = tmp_path / "a" / "final.ckpt"
    state = load_run_state(ckpt)
    save_run_state(tmp_path / "again.ckpt", state)
    same_ckpt = ckpt.read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    entries = load(ckpt)
    same_entries = dumps(loads(dumps(entries))) == dumps(entries)

    out = transfer_to_fault(ckpt, "ad", steps=0)
    preserved = all(a.params.values.tobytes() == b.params.values.tobytes()
                    and a.opt.m.tobytes() == b.opt.m.tobytes()
                    and a.opt.v.tobytes() == b.opt.v.tobytes()
                    for a, b in ((state.flow, out.flow), (state.retrieval, out.retrieval)))
    note(record_property, same_metrics and same_ckpt and same_entries and preserved,
         f"metrics.csv identical={same_metrics}, checkpoint re-save identical={same_ckpt}, "
         f"transfer(0 steps) params preserved={preserved}")


@criterion(10)
@pytest.mark.slow
def test_ablate_desk_scale(tmp_path, record_property):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rc = main(["ablate", "--desk-scale", "--out", str(tmp_path), "-q"])
    runs = sorted(os.listdir(tmp_path))
    headers, steps = set(), set()
    for run in runs:
        for name in ("metrics.csv", "summary.csv"):
            headers.add((name, (tmp_path / run / name).read_text().splitlines()[0]))
        lines = (tmp_path / run / "metrics.csv").read_text().splitlines()[1:]
        steps.add(tuple(ln.split(",")[0] for ln in lines))
    expected = ["cflownets_pretrained", "v1_no_warmup", "v2_separate_buffers", "winflownets"]
    ok = rc == 0 and runs == expected and len(headers) == 2 and len(steps) == 1
    note(record_property, ok,
         f"exit {rc}, runs {runs}, shared headers={len(headers) == 2}, "
         f"shared eval timesteps={len(steps) == 1}")
