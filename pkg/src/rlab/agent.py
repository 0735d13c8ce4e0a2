"""Dueling-DQN decision maker.

The two-stage action (pick a filter, then how many patches to add/remove) is
flattened into one discrete composite action; the codec recovers the stages.
The Q-network is a small numpy MLP with a shared ReLU trunk, a scalar value
head and a per-action advantage head combined as Q = V + A - mean(A).
Backpropagation is hand-rolled in float64 so gradients can be checked
against finite differences.
"""

import copy
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import container
from .exceptions import ShapeError
from .seeding import rng_from


# ---------------------------------------------------------------------------
# action codec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackAction:
    """(filter, patches to add, patches to remove), with n_rem < n_add."""

    filter_index: int
    n_add: int
    n_rem: int

    def __post_init__(self):
        if self.n_add < 1:
            raise ValueError(f"n_add must be >= 1, got {self.n_add}")
        if not 0 <= self.n_rem < self.n_add:
            raise ValueError(f"need 0 <= n_rem < n_add, got n_rem={self.n_rem}, n_add={self.n_add}")


def _triangle(n: int) -> int:
    return n * (n + 1) // 2


def action_space_size(num_filters: int, n_max: int) -> int:
    """num_filters x sum_{a=1..n_max} a composite actions."""
    if num_filters < 1 or n_max < 1:
        raise ValueError("need num_filters >= 1 and n_max >= 1")
    return num_filters * _triangle(n_max)


@dataclass(frozen=True)
class ActionCodec:
    """Bijection between flat indices and AttackAction triples."""

    num_filters: int
    n_max: int

    @property
    def size(self) -> int:
        return action_space_size(self.num_filters, self.n_max)

    def encode(self, action: AttackAction) -> int:
        if not 0 <= action.filter_index < self.num_filters:
            raise ValueError(f"filter index {action.filter_index} out of range")
        if action.n_add > self.n_max:
            raise ValueError(f"n_add {action.n_add} exceeds n_max {self.n_max}")
        block = _triangle(self.n_max)
        offset = _triangle(action.n_add - 1) + action.n_rem
        return action.filter_index * block + offset

    def decode(self, flat: int) -> AttackAction:
        if not 0 <= flat < self.size:
            raise ValueError(f"flat action {flat} out of range [0, {self.size})")
        block = _triangle(self.n_max)
        filter_index, offset = divmod(flat, block)
        n_add = 1
        while _triangle(n_add) <= offset:
            n_add += 1
        n_rem = offset - _triangle(n_add - 1)
        return AttackAction(filter_index=filter_index, n_add=n_add, n_rem=n_rem)


# ---------------------------------------------------------------------------
# dueling Q-network
# ---------------------------------------------------------------------------

def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DuelingQNet:
    """Shared ReLU trunk, scalar value head, per-action advantage head."""

    def __init__(self, state_dim, num_actions, hidden=(64, 64), seed=0):
        self.state_dim = int(state_dim)
        self.num_actions = int(num_actions)
        self.hidden = tuple(int(h) for h in hidden)
        rng = rng_from("qnet-init", seed)
        self.params = {}
        fan_in = self.state_dim
        for i, width in enumerate(self.hidden):
            self.params[f"w{i}"] = _glorot(rng, width, fan_in)
            self.params[f"b{i}"] = np.zeros(width)
            fan_in = width
        self.params["wv"] = _glorot(rng, 1, fan_in)
        self.params["bv"] = np.zeros(1)
        self.params["wa"] = _glorot(rng, self.num_actions, fan_in)
        self.params["ba"] = np.zeros(self.num_actions)

    def forward(self, states: np.ndarray):
        """Q rows for a (B, state_dim) batch, plus the cache backward needs."""
        x = np.asarray(states, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.state_dim:
            raise ShapeError(f"states {x.shape} incompatible with input dim {self.state_dim}")
        pres, acts = [], [x]
        h = x
        for i in range(len(self.hidden)):
            pre = h @ self.params[f"w{i}"].T + self.params[f"b{i}"]
            h = np.maximum(pre, 0.0)
            pres.append(pre)
            acts.append(h)
        value = h @ self.params["wv"].T + self.params["bv"]          # (B, 1)
        advantage = h @ self.params["wa"].T + self.params["ba"]      # (B, A)
        q = value + advantage - advantage.mean(axis=1, keepdims=True)
        cache = (pres, acts)
        return q, cache

    def backward(self, cache, dq: np.ndarray) -> dict:
        """Parameter gradients given dLoss/dQ for the cached forward pass."""
        pres, acts = cache
        h = acts[-1]
        dvalue = dq.sum(axis=1, keepdims=True)
        dadv = dq - dq.mean(axis=1, keepdims=True)
        grads = {
            "wv": dvalue.T @ h,
            "bv": dvalue.sum(axis=0),
            "wa": dadv.T @ h,
            "ba": dadv.sum(axis=0),
        }
        dh = dvalue @ self.params["wv"] + dadv @ self.params["wa"]
        for i in reversed(range(len(self.hidden))):
            dpre = dh * (pres[i] > 0.0)
            grads[f"w{i}"] = dpre.T @ acts[i]
            grads[f"b{i}"] = dpre.sum(axis=0)
            dh = dpre @ self.params[f"w{i}"]
        return grads

    def copy(self) -> "DuelingQNet":
        clone = DuelingQNet.__new__(DuelingQNet)
        clone.state_dim = self.state_dim
        clone.num_actions = self.num_actions
        clone.hidden = self.hidden
        clone.params = copy.deepcopy(self.params)
        return clone


def q_values(net: DuelingQNet, state: np.ndarray) -> np.ndarray:
    """Q(s, .) for one state vector."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (net.state_dim,):
        raise ShapeError(f"state {state.shape} incompatible with input dim {net.state_dim}")
    q, _ = net.forward(state[None, :])
    return q[0]


def select_action(net: DuelingQNet, state, epsilon: float, rng, codec: ActionCodec) -> AttackAction:
    """Epsilon-greedy over the composite action space; greedy ties break to
    the lowest flat index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return codec.decode(int(rng.integers(codec.size)))
    return codec.decode(int(np.argmax(q_values(net, state))))


def sync_target(net: DuelingQNet, target_net: DuelingQNet) -> None:
    """Hard copy of online parameters into the target network."""
    for key, value in net.params.items():
        if target_net.params[key].shape != value.shape:
            raise ShapeError(f"parameter {key} shape mismatch")
        target_net.params[key] = value.copy()


# ---------------------------------------------------------------------------
# replay and learning
# ---------------------------------------------------------------------------

@dataclass
class AgentConfig:
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 2000
    learning_rate: float = 1e-3
    batch_size: int = 32
    target_sync_every: int = 500  # updates between hard syncs; 0 disables the target net
    replay_capacity: int = 50_000
    hidden: tuple = (64, 64)
    grad_clip_norm: float | None = 10.0  # global gradient norm cap; None disables

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"epsilon must be in [0, 1], got {eps}")
        self.hidden = tuple(self.hidden)

    def epsilon_at(self, transitions_seen: int) -> float:
        """Linear decay from start to end over epsilon_decay_steps."""
        if self.epsilon_decay_steps <= 0:
            return self.epsilon_end
        frac = min(1.0, transitions_seen / self.epsilon_decay_steps)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class ReplayBuffer:
    """Bounded ring of (state, action, reward, next_state, terminal)."""

    def __init__(self, capacity: int = 50_000):
        self.capacity = int(capacity)
        self._data = []
        self._cursor = 0

    def push(self, state, action: int, reward: float, next_state, terminal: bool) -> None:
        item = (
            np.asarray(state, dtype=np.float64),
            int(action),
            float(reward),
            np.asarray(next_state, dtype=np.float64),
            bool(terminal),
        )
        if len(self._data) < self.capacity:
            self._data.append(item)
        else:
            self._data[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng) -> list:
        replace = len(self._data) < batch_size
        idx = rng.choice(len(self._data), size=batch_size, replace=replace)
        return [self._data[i] for i in idx]

    def __len__(self):
        return len(self._data)


def td_update(net: DuelingQNet, target_net, batch: list, config: AgentConfig) -> float:
    """One SGD step on mean squared TD error; returns the pre-update loss.

    ``target_net`` may be None, in which case bootstrap targets come from the
    online network. The target network's parameters are never touched.
    """
    if not batch:
        raise ValueError("td_update needs a nonempty batch")
    states = np.stack([t[0] for t in batch])
    actions = np.asarray([t[1] for t in batch])
    rewards = np.asarray([t[2] for t in batch], dtype=np.float64)
    next_states = np.stack([t[3] for t in batch])
    terminal = np.asarray([t[4] for t in batch], dtype=bool)

    bootstrap_net = target_net if target_net is not None else net
    next_q, _ = bootstrap_net.forward(next_states)
    targets = rewards + config.gamma * next_q.max(axis=1) * (~terminal)

    q, cache = net.forward(states)
    rows = np.arange(len(batch))
    err = q[rows, actions] - targets
    loss = float(np.mean(err**2))

    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / len(batch)
    grads = net.backward(cache, dq)
    if config.grad_clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > config.grad_clip_norm:
            scale = config.grad_clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    for key, grad in grads.items():
        net.params[key] -= config.learning_rate * grad
    return loss


# ---------------------------------------------------------------------------
# the agent: network + replay + schedule + checkpointing
# ---------------------------------------------------------------------------

class DQNAgent:
    """Owns the online/target networks, replay buffer, and schedules."""

    def __init__(self, state_dim, codec: ActionCodec, config: AgentConfig = None, seed: int = 0):
        self.codec = codec
        self.config = config or AgentConfig()
        self.seed = int(seed)
        self.net = DuelingQNet(state_dim, codec.size, hidden=self.config.hidden, seed=seed)
        self.target_net = self.net.copy() if self.config.target_sync_every > 0 else None
        self.buffer = ReplayBuffer(self.config.replay_capacity)
        self.transitions_seen = 0
        self.updates_done = 0
        self._learn_rng = rng_from("agent-learn", seed)

    @property
    def epsilon(self) -> float:
        return self.config.epsilon_at(self.transitions_seen)

    def act(self, state, epsilon: float, rng) -> AttackAction:
        return select_action(self.net, state, epsilon, rng, self.codec)

    def observe(self, state, action: AttackAction, reward, next_state, terminal) -> float | None:
        """Record one transition and, when the buffer allows, learn from it."""
        self.buffer.push(state, self.codec.encode(action), reward, next_state, terminal)
        self.transitions_seen += 1
        if len(self.buffer) < self.config.batch_size:
            return None
        batch = self.buffer.sample(self.config.batch_size, self._learn_rng)
        loss = td_update(self.net, self.target_net, batch, self.config)
        self.updates_done += 1
        if self.target_net is not None and self.updates_done % self.config.target_sync_every == 0:
            sync_target(self.net, self.target_net)
        return loss

    def save(self, path) -> None:
        """Weights in the named-array container plus a JSON config sidecar."""
        container.save_arrays(path, self.net.params)
        sidecar = {
            "state_dim": self.net.state_dim,
            "num_actions": self.net.num_actions,
            "num_filters": self.codec.num_filters,
            "n_max": self.codec.n_max,
            "seed": self.seed,
            "config": {**asdict(self.config), "hidden": list(self.config.hidden)},
        }
        with open(str(path) + ".json", "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "DQNAgent":
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
        config = AgentConfig(**sidecar["config"])
        codec = ActionCodec(num_filters=sidecar["num_filters"], n_max=sidecar["n_max"])
        agent = cls(sidecar["state_dim"], codec, config, seed=sidecar["seed"])
        weights = container.load_arrays(path)
        for key in agent.net.params:
            agent.net.params[key] = weights[key].astype(np.float64)
        if agent.target_net is not None:
            sync_target(agent.net, agent.target_net)
        return agent
