"""Compare the numba-compiled kernels against the pure-numpy fallback.

Each backend runs in its own subprocess because the JIT switch is read at
import time. Prints per-call microseconds and the speedup.

    python3 benchmarks/bench_kernels.py --repeat 200
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeat):
    fn()  # warm-up / compile
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat * 1e6


def run_cases(repeat):
    from winflownets._jit import JIT_ENABLED
    from winflownets.envs import REACHER, EnvConfig, reset, step
    from winflownets.flow import FlowLossConfig, flow_matching_loss
    from winflownets.nn import MlpSpec, init_params, mlp_backward, mlp_forward

    rng = np.random.default_rng(0)
    flow = init_params(MlpSpec(6, (64, 64), 1), rng)
    ret = init_params(MlpSpec(6, (64, 64), 4), rng)
    x = rng.normal(size=(128 * 16, 6))
    g = rng.normal(size=(128 * 16, 1))
    states = rng.normal(size=(128, 4))
    r = rng.uniform(0, 1, 128)
    term = rng.random(128) < 0.1
    cfg = FlowLossConfig(K=16)
    reacher = EnvConfig(kind=REACHER)
    s0 = reset(reacher, rng)

    def env_steps():
        s = s0
        for _ in range(50):
            s = step(s, [0.3, -0.7], reacher).next_state

    cases = {
        "mlp_forward[2048x6 -> 64x64 -> 1]": lambda: mlp_forward(flow, x),
        "mlp_backward[2048]": lambda: mlp_backward(flow, x, g),
        "flow_matching_loss[B=128,K=16]": lambda: flow_matching_loss(flow, ret, states, r, term,
                                                                     cfg, rng),
        "reacher 50 steps": env_steps,
    }
    return {"jit": JIT_ENABLED, "us": {k: _time(fn, repeat) for k, fn in cases.items()}}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=100)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        print(json.dumps(run_cases(args.repeat)))
        return

    results = {}
    for flag in ("0", "1"):
        env = {**os.environ, "WINFLOWNETS_JIT": flag}
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, check=True, capture_output=True, text=True).stdout
        results[flag] = json.loads(out.strip().splitlines()[-1])["us"]

    print(f"{'case':38s} {'numpy us':>12s} {'numba us':>12s} {'speedup':>8s}")
    for case, slow in results["0"].items():
        fast = results["1"][case]
        print(f"{case:38s} {slow:12.1f} {fast:12.1f} {slow / fast:8.2f}x")


if __name__ == "__main__":
    main()
