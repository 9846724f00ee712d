"""Planar two-link reacher and Point-Robot-Sparse, plus the fault injectors.

Environments are value types: ``reset`` and ``step`` are pure functions of the
state, the action, the config and an explicit ``numpy.random.Generator``.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ._jit import njit
from .errors import ConfigError

REACHER = "reacher2"
POINT = "point_sparse"
ENV_KINDS = (REACHER, POINT)
STATE_DIMS = {REACHER: 11, POINT: 4}
ACTION_DIM = 2
ACTION_MEASURE = 4.0  # Lebesgue measure of [-1, 1]^2

NOMINAL_JOINT1_LIMITS = (-3.0, 3.0)


@dataclass(frozen=True)
class FaultSpec:
    kind: str = "none"
    torque_scale: float = 1.0
    joint1_limits: tuple = NOMINAL_JOINT1_LIMITS

    def __post_init__(self):
        if self.kind not in ("none", "actuator_damage", "reduced_rom"):
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if not 0.0 < self.torque_scale <= 1.0:
            raise ConfigError(f"torque_scale must be in (0, 1], got {self.torque_scale}")
        lo, hi = self.joint1_limits
        if not lo < hi:
            raise ConfigError(f"joint1_limits must satisfy low < high, got {self.joint1_limits}")


NO_FAULT = FaultSpec()
ACTUATOR_DAMAGE = FaultSpec("actuator_damage", torque_scale=0.25)
REDUCED_ROM = FaultSpec("reduced_rom", joint1_limits=(-1.5, 1.5))
FAULTS = {"none": NO_FAULT, "ad": ACTUATOR_DAMAGE, "rom": REDUCED_ROM}


def make_fault(name):
    try:
        return FAULTS[name]
    except KeyError:
        raise ConfigError(f"unknown fault {name!r}; expected one of {sorted(FAULTS)}") from None


@dataclass(frozen=True)
class EnvConfig:
    kind: str = POINT
    horizon: int = 0  # 0 -> per-env default (reacher 50, point 12)
    dt: float = 0.02
    link0: float = 0.1
    link1: float = 0.1
    torque_gain: float = 10.0
    damping: float = 1.0
    omega_max: float = 8.0
    alpha: float = 0.1
    point_dt: float = 1.0
    goal_radius: float = 10.0
    goal_tolerance: float = 10.0  # final-step reward is paid within this distance of the goal
    fault: str = "none"

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown env {self.kind!r}; expected one of {ENV_KINDS}")
        if self.horizon == 0:
            object.__setattr__(self, "horizon", 50 if self.kind == REACHER else 12)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.dt > 0 or not self.point_dt > 0:
            raise ConfigError("dt must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        make_fault(self.fault)

    @property
    def state_dim(self):
        return STATE_DIMS[self.kind]

    @property
    def action_dim(self):
        return ACTION_DIM


@dataclass(frozen=True)
class EnvState:
    values: np.ndarray
    layout: str
    t: int = 0
    angles: np.ndarray = field(default=None)  # reacher joint angles (theta0, theta1)


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    terminal: bool
    t: int
    torque: np.ndarray = field(default=None)


def forward_kinematics(theta0, theta1, link0, link1):
    return np.array([link0 * np.cos(theta0) + link1 * np.cos(theta0 + theta1),
                     link0 * np.sin(theta0) + link1 * np.sin(theta0 + theta1)])


def reward(fingertip, target, action, alpha):
    """Negative fingertip-target distance minus alpha times the squared action norm."""
    a = np.asarray(action, dtype=np.float64)
    d = np.asarray(fingertip, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(-np.sqrt(d @ d) - alpha * (a @ a))


def _reacher_values(q, w, target, link0, link1):
    tip = forward_kinematics(q[0], q[1], link0, link1)
    return np.array([np.cos(q[0]), np.cos(q[1]), np.sin(q[0]), np.sin(q[1]),
                     target[0], target[1], w[0], w[1],
                     tip[0] - target[0], tip[1] - target[1], 0.0])


def reset(config, rng):
    if config.kind == REACHER:
        q = rng.uniform(-0.1, 0.1, size=2)
        reach = config.link0 + config.link1
        while True:
            target = rng.uniform(-reach, reach, size=2)
            r = np.hypot(target[0], target[1])
            if 0.05 <= r <= reach:
                break
        return EnvState(_reacher_values(q, np.zeros(2), target, config.link0, config.link1),
                        REACHER, 0, q)
    phi = rng.uniform(0.0, np.pi)
    goal = config.goal_radius * np.array([np.cos(phi), np.sin(phi)])
    return EnvState(np.array([0.0, 0.0, goal[0], goal[1]]), POINT, 0)


def clamp_action(action):
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape ({ACTION_DIM},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite action {a}")
    return np.clip(a, -1.0, 1.0)


def effective_torque(action, config, fault=NO_FAULT):
    return clamp_action(action) * config.torque_gain * fault.torque_scale


@njit
def _reacher_dynamics(q, w, torque, dt, damping, omega_max, lo, hi):
    q_new = np.empty(2)
    w_new = np.empty(2)
    for j in range(2):
        wj = w[j] + (torque[j] - damping * w[j]) * dt
        if wj > omega_max:
            wj = omega_max
        elif wj < -omega_max:
            wj = -omega_max
        w_new[j] = wj
        q_new[j] = q[j] + wj * dt
    if q_new[1] > hi:
        q_new[1] = hi
        w_new[1] = 0.0
    elif q_new[1] < lo:
        q_new[1] = lo
        w_new[1] = 0.0
    return q_new, w_new


def step(state, action, config, fault=None):
    fault = NO_FAULT if fault is None else fault
    if state.layout != config.kind:
        raise ValueError(f"state layout {state.layout!r} does not match env {config.kind!r}")
    a = clamp_action(action)
    t = state.t + 1
    terminal = t >= config.horizon
    if config.kind == REACHER:
        torque = a * config.torque_gain * fault.torque_scale
        target = state.values[4:6]
        w = state.values[6:8]
        lo, hi = fault.joint1_limits
        q, w = _reacher_dynamics(state.angles, np.ascontiguousarray(w), torque, config.dt,
                                 config.damping, config.omega_max, lo, hi)
        values = _reacher_values(q, w, target, config.link0, config.link1)
        tip = forward_kinematics(q[0], q[1], config.link0, config.link1)
        r = reward(tip, target, a, config.alpha)
        return StepResult(EnvState(values, REACHER, t, q), r, terminal, t, torque)
    pos = state.values[:2] + a * config.point_dt
    goal = state.values[2:4]
    values = np.array([pos[0], pos[1], goal[0], goal[1]])
    r = 0.0
    if terminal:
        d = float(np.hypot(pos[0] - goal[0], pos[1] - goal[1]))
        if d <= config.goal_tolerance:
            r = 1.0 - d / config.goal_radius
    return StepResult(EnvState(values, POINT, t), r, terminal, t, a.copy())


def with_fault(config, fault_name):
    return replace(config, fault=fault_name)


def dump_trajectory(path, states, actions, rewards):
    """Write a trajectory as CSV with columns t, s0.., a0.., r."""
    states = np.asarray(states)
    actions = np.asarray(actions)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *(f"s{i}" for i in range(states.shape[1])),
                    *(f"a{i}" for i in range(actions.shape[1])), "r"])
        for t, (s, a, r) in enumerate(zip(states, actions, rewards)):
            w.writerow([t, *(repr(float(x)) for x in s), *(repr(float(x)) for x in a), repr(float(r))])
