"""Desk-scale directional comparison on Point-Robot-Sparse."""

import math
import warnings

import numpy as np

from .config import desk_scale
from .metrics import FINAL_WINDOW, final_performance
from .training import evaluate, run_variant


def random_policy_final(config, reports_timesteps):
    """Final performance of a uniform-random policy under the same evaluation protocol."""
    reports = [evaluate(None, config, timestep=t, policy="random") for t in reports_timesteps]
    return final_performance(reports)[0], reports


def directional(seeds=(0, 1, 2, 3, 4), variants=("winflownets", "v1_no_warmup"), config=None,
                progress=None):
    """Final mean return per (variant, seed), plus the random-policy reference.

    Returns a dict with ``finals[variant] -> list`` (one value per seed),
    ``random`` (list per seed) and a ``pooled_se`` helper value for the
    winflownets-vs-random gap.
    """
    base = config or desk_scale()
    finals = {v: [] for v in variants}
    randoms = []
    for seed in seeds:
        for v in variants:
            cfg = base.override(train={"variant": v, "seed": seed})
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                state = run_variant(cfg)
            finals[v].append(final_performance(state.reports)[0])
            if progress:
                progress(f"seed={seed} variant={v} final={finals[v][-1]:.5f}")
        steps = [r.timestep for r in state.reports[-FINAL_WINDOW:]]
        randoms.append(random_policy_final(base.override(train={"seed": seed}), steps)[0])
    w = np.array(finals[variants[0]])
    r = np.array(randoms)
    n = len(seeds)
    pooled_se = math.sqrt(np.var(w, ddof=1) / n + np.var(r, ddof=1) / n) if n > 1 else float("nan")
    return {"finals": finals, "random": randoms, "pooled_se": pooled_se,
            "gap": float(w.mean() - r.mean())}
