"""Small feed-forward networks with reverse-mode gradients, a replay
buffer, and TD3-style training (twin critics, target networks, delayed
actor updates, target-policy smoothing) maintained per objective.

Networks live as flat float64 vectors so a policy genotype and its network
parameters are the same object; ``unflatten`` exposes per-layer weight and
bias views into that vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from moqd.pareto import DimensionError

__all__ = [
    "InsufficientDataError",
    "MlpSpec",
    "Transition",
    "TransitionBatch",
    "ReplayBuffer",
    "Td3Config",
    "ObjectiveTrainState",
    "Adam",
    "init_params",
    "flatten",
    "unflatten",
    "mlp_forward",
    "critic_loss_and_grad",
    "policy_value_and_grad",
    "critic_update",
    "actor_update",
    "soft_update",
    "pg_mutate",
    "train_networks",
    "fresh_train_state",
]


class InsufficientDataError(RuntimeError):
    """A sample was requested from a buffer with too few transitions."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (input, hidden..., output) and the output activation.

    Hidden activations are always tanh; policies end in tanh so actions lie
    in [-1, 1], critics end in identity.
    """

    sizes: tuple[int, ...]
    output_activation: Literal["tanh", "identity"] = "tanh"

    def __post_init__(self):
        if len(self.sizes) < 3:
            raise ValueError("MlpSpec needs at least one hidden layer")
        if any(s < 1 for s in self.sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.output_activation not in ("tanh", "identity"):
            raise ValueError(f"unknown output activation: {self.output_activation!r}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def n_params(self) -> int:
        return sum(
            i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:])
        )

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


def init_params(spec: MlpSpec, rng) -> np.ndarray:
    """Fresh flat parameter vector, each layer uniform in +-1/sqrt(fan_in)."""
    chunks = []
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-scale, scale, size=fan_out * fan_in + fan_out))
    return np.concatenate(chunks)


def unflatten(spec: MlpSpec, genotype: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (weights, bias) views into a flat vector.

    Layout is layer by layer, weight matrix row-major then bias. The views
    alias the input, so in-place updates to the flat vector propagate.
    """
    genotype = np.asarray(genotype, dtype=float)
    if genotype.shape != (spec.n_params,):
        raise DimensionError(
            f"genotype has {genotype.shape} entries, spec wants ({spec.n_params},)"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        w = genotype[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = genotype[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def flatten(layers) -> np.ndarray:
    """Inverse of :func:`unflatten`: concatenate row-major weights and biases."""
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def _forward_cache(spec: MlpSpec, layers, x: np.ndarray):
    """Forward pass keeping post-activation values for backprop."""
    activations = [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        if i < last or spec.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        activations.append(h)
    return h, activations


def _backward(spec: MlpSpec, layers, activations, grad_out: np.ndarray):
    """Reverse pass. Returns (flat parameter gradient, input gradient)."""
    grads = [None] * len(layers)
    last = len(layers) - 1
    g = grad_out
    for i in range(last, -1, -1):
        w, _ = layers[i]
        a = activations[i + 1]
        if i < last or spec.output_activation == "tanh":
            g = g * (1.0 - a * a)
        h_in = activations[i]
        gw = g.T @ h_in
        gb = g.sum(axis=0)
        grads[i] = (gw, gb)
        g = g @ w
    return flatten(grads), g


def mlp_forward(spec: MlpSpec, params, x) -> np.ndarray:
    """Evaluate the network on a single input vector or a batch of rows.

    ``params`` may be the flat vector or the unflattened layer list.
    """
    layers = unflatten(spec, params) if isinstance(params, np.ndarray) else params
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.shape[1] != spec.sizes[0]:
        raise DimensionError(f"input width {x.shape[1]}, spec wants {spec.sizes[0]}")
    out, _ = _forward_cache(spec, layers, x)
    return out[0] if single else out


# --------------------------------------------------------------------- replay


class Transition(NamedTuple):
    """One environment step with a vector-valued reward."""

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: bool


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def row(self, i: int) -> Transition:
        return Transition(
            self.states[i], self.actions[i], self.rewards[i], self.next_states[i],
            bool(self.dones[i]),
        )


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with strict FIFO eviction."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, reward_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros((capacity, reward_dim))
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, batch: TransitionBatch) -> None:
        n = len(batch)
        if n == 0:
            return
        if n >= self.capacity:
            # only the newest `capacity` rows survive
            sl = slice(n - self.capacity, n)
            self._states[:] = batch.states[sl]
            self._actions[:] = batch.actions[sl]
            self._rewards[:] = batch.rewards[sl]
            self._next_states[:] = batch.next_states[sl]
            self._dones[:] = batch.dones[sl]
            self._cursor = 0
            self._size = self.capacity
            return
        idx = (self._cursor + np.arange(n)) % self.capacity
        self._states[idx] = batch.states
        self._actions[idx] = batch.actions
        self._rewards[idx] = batch.rewards
        self._next_states[idx] = batch.next_states
        self._dones[idx] = batch.dones
        self._cursor = (self._cursor + n) % self.capacity
        self._size = min(self._size + n, self.capacity)

    def sample(self, batch_size: int, rng) -> TransitionBatch:
        """Uniform sample with replacement; seeded by the caller's rng."""
        if self._size < batch_size:
            raise InsufficientDataError(
                f"buffer holds {self._size} transitions, requested {batch_size}"
            )
        idx = rng.integers(self._size, size=batch_size)
        return TransitionBatch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
        )


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class Td3Config:
    """TD3 hyperparameters.

    Defaults are the desk-scale settings: smaller buffer and training
    volumes, plus a faster target blend and gentler mutation rate so values
    propagate through short horizons within a few thousand updates.
    ``full_scale`` restores the published configuration.
    """

    critic_hidden: tuple[int, ...] = (64, 64)
    critic_batch: int = 64
    critic_lr: float = 1e-3
    actor_lr: float = 3e-4
    pg_lr: float = 2e-4
    critic_steps: int = 30
    pg_steps: int = 10
    policy_noise: float = 0.2
    noise_clip: float = 0.2
    discount: float = 0.99
    soft_update_tau: float = 0.05
    policy_delay: int = 2
    buffer_capacity: int = 100_000

    @staticmethod
    def full_scale() -> "Td3Config":
        return Td3Config(
            critic_hidden=(256, 256),
            critic_batch=256,
            critic_lr=3e-4,
            actor_lr=3e-4,
            pg_lr=1e-3,
            critic_steps=300,
            pg_steps=100,
            soft_update_tau=0.005,
            buffer_capacity=1_000_000,
        )


class Adam(object):
    """Adaptive moment estimation over a flat parameter vector."""

    def __init__(self, lr: float, n_params: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, maximize: bool = False) -> None:
        g = -grad if maximize else grad
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class ObjectiveTrainState:
    """Actor, twin critics and their target copies for one objective.

    ``objective`` selects the reward component the critics regress on; None
    means the sum of all components (used by the mono-objective baseline).
    """

    objective: int | None
    policy_spec: MlpSpec
    critic_spec: MlpSpec
    actor: np.ndarray
    critic1: np.ndarray
    critic2: np.ndarray
    target_actor: np.ndarray
    target_critic1: np.ndarray
    target_critic2: np.ndarray
    actor_opt: Adam
    critic1_opt: Adam
    critic2_opt: Adam
    rng: np.random.Generator
    step_count: int = 0


def fresh_train_state(
    policy_spec: MlpSpec,
    state_dim: int,
    action_dim: int,
    objective: int | None,
    cfg: Td3Config,
    rng,
) -> ObjectiveTrainState:
    critic_spec = MlpSpec((state_dim + action_dim, *cfg.critic_hidden, 1), "identity")
    actor = init_params(policy_spec, rng)
    critic1 = init_params(critic_spec, rng)
    critic2 = init_params(critic_spec, rng)
    return ObjectiveTrainState(
        objective=objective,
        policy_spec=policy_spec,
        critic_spec=critic_spec,
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        target_actor=actor.copy(),
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        actor_opt=Adam(cfg.actor_lr, policy_spec.n_params),
        critic1_opt=Adam(cfg.critic_lr, critic_spec.n_params),
        critic2_opt=Adam(cfg.critic_lr, critic_spec.n_params),
        rng=rng,
    )


def soft_update(target: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    """In-place Polyak blend: target <- tau * online + (1 - tau) * target."""
    if target.shape != online.shape:
        raise DimensionError(f"shape mismatch: {target.shape} vs {online.shape}")
    target *= 1.0 - tau
    target += tau * online
    return target


def critic_loss_and_grad(
    critic_spec: MlpSpec, critic_params: np.ndarray, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error toward fixed targets, with its parameter gradient."""
    layers = unflatten(critic_spec, critic_params)
    pred, cache = _forward_cache(critic_spec, layers, inputs)
    err = pred.ravel() - targets
    loss = float(np.mean(err * err))
    grad_out = (2.0 / len(targets)) * err[:, None]
    grad, _ = _backward(critic_spec, layers, cache, grad_out)
    return loss, grad


def policy_value_and_grad(
    policy_spec: MlpSpec,
    policy_params: np.ndarray,
    critic_spec: MlpSpec,
    critic_params: np.ndarray,
    states: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean critic value of on-policy actions and its gradient w.r.t. the
    policy parameters; the critic is held fixed."""
    pol_layers = unflatten(policy_spec, policy_params)
    actions, pol_cache = _forward_cache(policy_spec, pol_layers, states)
    critic_layers = unflatten(critic_spec, critic_params)
    q, q_cache = _forward_cache(critic_spec, critic_layers, np.hstack([states, actions]))
    value = float(q.mean())
    grad_q_out = np.full((len(states), 1), 1.0 / len(states))
    _, grad_inputs = _backward(critic_spec, critic_layers, q_cache, grad_q_out)
    grad_actions = grad_inputs[:, states.shape[1] :]
    grad_policy, _ = _backward(policy_spec, pol_layers, pol_cache, grad_actions)
    return value, grad_policy


def critic_update(state: ObjectiveTrainState, batch: TransitionBatch, cfg: Td3Config) -> float:
    """One TD3 critic step: smoothed target actions, clipped double-Q
    target, one gradient step on each critic. Returns the summed loss."""
    noise = np.clip(
        state.rng.normal(0.0, cfg.policy_noise, size=batch.actions.shape),
        -cfg.noise_clip,
        cfg.noise_clip,
    )
    next_actions = np.clip(
        mlp_forward(state.policy_spec, state.target_actor, batch.next_states) + noise,
        -1.0,
        1.0,
    )
    next_inputs = np.hstack([batch.next_states, next_actions])
    q1 = mlp_forward(state.critic_spec, state.target_critic1, next_inputs).ravel()
    q2 = mlp_forward(state.critic_spec, state.target_critic2, next_inputs).ravel()
    if state.objective is None:
        reward = batch.rewards.sum(axis=1)
    else:
        reward = batch.rewards[:, state.objective]
    targets = reward + cfg.discount * (1.0 - batch.dones.astype(float)) * np.minimum(q1, q2)

    inputs = np.hstack([batch.states, batch.actions])
    total = 0.0
    for params, opt in ((state.critic1, state.critic1_opt), (state.critic2, state.critic2_opt)):
        loss, grad = critic_loss_and_grad(state.critic_spec, params, inputs, targets)
        opt.step(params, grad)
        total += loss
    return total


def actor_update(state: ObjectiveTrainState, batch: TransitionBatch, cfg: Td3Config) -> float:
    """Delayed TD3 actor step: ascend the first critic's value of on-policy
    actions, then soft-update all three targets. Returns the value."""
    value, grad = policy_value_and_grad(
        state.policy_spec, state.actor, state.critic_spec, state.critic1, batch.states
    )
    state.actor_opt.step(state.actor, grad, maximize=True)
    tau = cfg.soft_update_tau
    soft_update(state.target_actor, state.actor, tau)
    soft_update(state.target_critic1, state.critic1, tau)
    soft_update(state.target_critic2, state.critic2, tau)
    return value


def pg_mutate(
    genotype,
    state: ObjectiveTrainState,
    buffer: ReplayBuffer,
    cfg: Td3Config,
    rng,
    steps: int | None = None,
    lr: float | None = None,
) -> np.ndarray:
    """Policy-gradient variation: gradient-ascend the objective's critic
    value over fresh minibatches, starting from the given genotype.

    The critic is read-only; optimizer moments start fresh on every call.
    Raises InsufficientDataError when the buffer cannot fill a minibatch, in
    which case callers fall back to genetic variation for that slot.
    """
    steps = cfg.pg_steps if steps is None else steps
    lr = cfg.pg_lr if lr is None else lr
    if len(buffer) < cfg.critic_batch:
        raise InsufficientDataError(
            f"policy-gradient mutation needs {cfg.critic_batch} transitions, "
            f"buffer holds {len(buffer)}"
        )
    params = np.array(genotype, dtype=float, copy=True)
    if params.shape != (state.policy_spec.n_params,):
        raise DimensionError(
            f"genotype length {params.shape} does not match policy spec "
            f"({state.policy_spec.n_params},)"
        )
    opt = Adam(lr, state.policy_spec.n_params)
    for _ in range(steps):
        batch = buffer.sample(cfg.critic_batch, rng)
        _, grad = policy_value_and_grad(
            state.policy_spec, params, state.critic_spec, state.critic1, batch.states
        )
        opt.step(params, grad, maximize=True)
    return params


def train_networks(
    states: list[ObjectiveTrainState], buffer: ReplayBuffer, cfg: Td3Config
) -> dict[int | None, float]:
    """Per-objective TD3 training round: ``critic_steps`` critic updates
    with an actor update every ``policy_delay`` steps. Returns final losses
    keyed by objective index."""
    report: dict[int | None, float] = {}
    for state in states:
        if len(buffer) < cfg.critic_batch:
            raise InsufficientDataError(
                f"training needs {cfg.critic_batch} transitions, buffer holds {len(buffer)}"
            )
        loss = float("nan")
        for _ in range(cfg.critic_steps):
            batch = buffer.sample(cfg.critic_batch, state.rng)
            loss = critic_update(state, batch, cfg)
            state.step_count += 1
            if state.step_count % cfg.policy_delay == 0:
                actor_update(state, batch, cfg)
        report[state.objective] = loss
    return report
