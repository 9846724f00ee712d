"""FIFO ring buffer of (s_prev, a_prev, r, s) transitions shared by both networks."""

import hashlib
from dataclasses import dataclass

import numpy as np

WARMUP = 0
DUAL = 1
PHASES = {"warmup": WARMUP, "dual": DUAL}


@dataclass(frozen=True)
class Transition:
    s_prev: np.ndarray
    a_prev: np.ndarray
    r: float
    s: np.ndarray
    episode_id: int = 0
    phase: int = WARMUP
    terminal: bool = False


@dataclass
class Batch:
    s_prev: np.ndarray
    a_prev: np.ndarray
    r: np.ndarray
    s: np.ndarray
    episode_id: np.ndarray
    phase: np.ndarray
    terminal: np.ndarray

    def __len__(self):
        return len(self.r)

    def transitions(self):
        return [Transition(self.s_prev[i], self.a_prev[i], float(self.r[i]), self.s[i],
                           int(self.episode_id[i]), int(self.phase[i]), bool(self.terminal[i]))
                for i in range(len(self))]


class ReplayBuffer:
    FIELDS = ("s_prev", "a_prev", "r", "s", "episode_id", "phase", "terminal")

    def __init__(self, capacity, state_dim, action_dim=2):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.s_prev = np.zeros((self.capacity, self.state_dim))
        self.a_prev = np.zeros((self.capacity, self.action_dim))
        self.r = np.zeros(self.capacity)
        self.s = np.zeros((self.capacity, self.state_dim))
        self.episode_id = np.zeros(self.capacity, dtype=np.int64)
        self.phase = np.zeros(self.capacity, dtype=np.int64)
        self.terminal = np.zeros(self.capacity, dtype=np.int64)
        self.size = 0
        self.insertions = 0

    def __len__(self):
        return self.size

    def push(self, tr):
        self.add(tr.s_prev, tr.a_prev, tr.r, tr.s, tr.episode_id, tr.phase, tr.terminal)

    def add(self, s_prev, a_prev, r, s, episode_id=0, phase=WARMUP, terminal=False):
        if not np.isfinite(r):
            raise ValueError(f"non-finite reward {r}")
        i = self.insertions % self.capacity
        self.s_prev[i] = s_prev
        self.a_prev[i] = a_prev
        self.r[i] = r
        self.s[i] = s
        self.episode_id[i] = episode_id
        self.phase[i] = phase
        self.terminal[i] = bool(terminal)
        self.insertions += 1
        self.size = min(self.size + 1, self.capacity)

    def _slots(self, logical):
        start = (self.insertions - self.size) % self.capacity
        return (start + np.asarray(logical)) % self.capacity

    def gather(self, logical):
        j = self._slots(logical)
        return Batch(self.s_prev[j], self.a_prev[j], self.r[j], self.s[j],
                     self.episode_id[j], self.phase[j], self.terminal[j].astype(bool))

    def sample_minibatch(self, n, rng):
        """Draw ``n`` transitions uniformly with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if n < 1:
            raise ValueError("minibatch size must be positive")
        return self.gather(rng.integers(0, self.size, size=n))

    def __getitem__(self, i):
        if not -self.size <= i < self.size:
            raise IndexError(i)
        return self.gather(np.array([i % self.size])).transitions()[0]

    def __iter__(self):
        return iter(self.gather(np.arange(self.size)).transitions())

    def clear(self):
        self.size = 0

    def content_hash(self):
        b = self.gather(np.arange(self.size))
        h = hashlib.sha256()
        for name in self.FIELDS:
            h.update(np.ascontiguousarray(getattr(b, name)).tobytes())
        return h.hexdigest()

    def to_arrays(self):
        b = self.gather(np.arange(self.size))
        out = {name: np.ascontiguousarray(getattr(b, name)) for name in self.FIELDS}
        out["terminal"] = out["terminal"].astype(np.int64)
        out["meta"] = np.array([self.capacity, self.state_dim, self.action_dim, self.insertions],
                               dtype=np.int64)
        return out

    @classmethod
    def from_arrays(cls, arrays):
        capacity, state_dim, action_dim, insertions = (int(x) for x in arrays["meta"])
        buf = cls(capacity, state_dim, action_dim)
        n = len(arrays["r"])
        # Restore so logical order and the insertion counter match the original ring.
        start = (insertions - n) % capacity
        j = (start + np.arange(n)) % capacity
        for name in cls.FIELDS:
            getattr(buf, name)[j] = arrays[name]
        buf.size = n
        buf.insertions = insertions
        return buf
