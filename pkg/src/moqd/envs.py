"""Evaluation tasks.

PointWalker is a deterministic bi-objective control task: a point mass on a
line driven by two actuators, rewarded for moving forward and penalized for
actuation effort, with a descriptor giving the fraction of time each
actuator pushes. BiSphere is a closed-form function task with a known
optimal Pareto set, used for oracle tests and cheap coverage benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from moqd.neuro import MlpSpec, TransitionBatch, init_params, mlp_forward, unflatten

__all__ = [
    "EpisodeResult",
    "PointWalker",
    "BiSphere",
    "pointwalker_step",
    "pointwalker_descriptor",
    "bisphere_evaluate",
]

VELOCITY_RETENTION = 0.9
THRUST_GAIN = 0.1


@dataclass
class EpisodeResult:
    """Scores, descriptor and (for MDP tasks) the collected transitions."""

    scores: np.ndarray
    descriptor: np.ndarray
    transitions: Optional[TransitionBatch] = None


def pointwalker_step(state, action, energy_weight: float = 1.0, dt: float = 0.1):
    """One deterministic dynamics step.

    ``state`` is (x, v, phase); the velocity relaxes toward the mean thrust,
    position integrates velocity, and the reward vector is (energy,
    velocity): r1 = -w1 * ||a||_2 and r2 = (x' - x) / dt.
    """
    x, v, phase = state
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    v_next = VELOCITY_RETENTION * v + THRUST_GAIN * (a[0] + a[1]) / 2.0
    x_next = x + v_next * dt
    reward = np.array([-energy_weight * float(np.linalg.norm(a)), (x_next - x) / dt])
    return (x_next, v_next, phase + 1), reward


def pointwalker_descriptor(actions) -> np.ndarray:
    """Fraction of steps on which each actuator pushes (is positive)."""
    actions = np.asarray(actions, dtype=float)
    return (actions > 0.0).mean(axis=0)


@dataclass(frozen=True)
class PointWalker:
    """Deterministic two-actuator locomotion MDP.

    Policies observe (v, sin(2*pi*phase/period), cos(2*pi*phase/period))
    and emit two torques in [-1, 1]. Episodes always start at rest and run
    exactly ``episode_length`` steps; scores are plain reward sums.
    """

    episode_length: int = 20
    energy_weight: float = 1.0
    dt: float = 0.1
    phase_period: int = 20
    policy_hidden: tuple[int, ...] = (64, 64)

    state_dim = 3
    action_dim = 2
    descriptor_dim = 2
    num_objectives = 2
    is_mdp = True
    objective_names = ("energy", "velocity")

    @property
    def descriptor_bounds(self) -> np.ndarray:
        return np.array([[0.0, 1.0], [0.0, 1.0]])

    @property
    def policy_spec(self) -> MlpSpec:
        return MlpSpec((self.state_dim, *self.policy_hidden, self.action_dim), "tanh")

    @property
    def genotype_length(self) -> int:
        return self.policy_spec.n_params

    def random_genotype(self, rng) -> np.ndarray:
        return init_params(self.policy_spec, rng)

    def observe(self, state) -> np.ndarray:
        _, v, phase = state
        angle = 2.0 * np.pi * phase / self.phase_period
        return np.array([v, np.sin(angle), np.cos(angle)])

    def rollout(self, genotype) -> EpisodeResult:
        """Run the policy for a full episode from the fixed initial state.

        Fully deterministic: the same genotype always yields a bit-identical
        result. The final transition is marked done so critics learn the
        finite-horizon return-to-go; the phase encoding in the observation
        keeps that value well-defined.
        """
        spec = self.policy_spec
        layers = unflatten(spec, np.asarray(genotype, dtype=float))
        T = self.episode_length
        states = np.empty((T, self.state_dim))
        actions = np.empty((T, self.action_dim))
        rewards = np.empty((T, self.num_objectives))
        next_states = np.empty((T, self.state_dim))
        dones = np.zeros(T, dtype=bool)
        dones[T - 1] = True
        state = (0.0, 0.0, 0)
        for t in range(T):
            obs = self.observe(state)
            action = mlp_forward(spec, layers, obs)
            state_next, reward = pointwalker_step(
                state, action, self.energy_weight, self.dt
            )
            states[t] = obs
            actions[t] = action
            rewards[t] = reward
            next_states[t] = self.observe(state_next)
            state = state_next
        return EpisodeResult(
            scores=rewards.sum(axis=0),
            descriptor=pointwalker_descriptor(actions),
            transitions=TransitionBatch(
                states=states,
                actions=actions,
                rewards=rewards,
                next_states=next_states,
                dones=dones,
            ),
        )

    evaluate = rollout


def bisphere_evaluate(genotype) -> tuple[np.ndarray, np.ndarray]:
    """Squash the genotype into [0, 1] and score distance to two sphere
    optima at 0.25 and 0.75; the descriptor is the first two coordinates."""
    g = np.asarray(genotype, dtype=float)
    z = (np.tanh(g) + 1.0) / 2.0
    f1 = -float(np.sum((z - 0.25) ** 2))
    f2 = -float(np.sum((z - 0.75) ** 2))
    return np.array([f1, f2]), z[:2].copy()


@dataclass(frozen=True)
class BiSphere:
    """Closed-form bi-objective task; the optimal Pareto set is the diagonal
    segment z_i = t for t in [0.25, 0.75]."""

    genotype_length: int = 8

    descriptor_dim = 2
    num_objectives = 2
    is_mdp = False
    objective_names = ("sphere_low", "sphere_high")

    def __post_init__(self):
        if self.genotype_length < 2:
            raise ValueError("BiSphere needs at least two genotype entries")

    @property
    def descriptor_bounds(self) -> np.ndarray:
        return np.array([[0.0, 1.0], [0.0, 1.0]])

    def random_genotype(self, rng) -> np.ndarray:
        return rng.uniform(-2.0, 2.0, self.genotype_length)

    def evaluate(self, genotype) -> EpisodeResult:
        scores, descriptor = bisphere_evaluate(genotype)
        return EpisodeResult(scores=scores, descriptor=descriptor)

    def diagonal_front(self, n: int) -> np.ndarray:
        """Score vectors of n evenly spaced optimal trade-offs, for oracles."""
        t = np.linspace(0.25, 0.75, n)
        f1 = -self.genotype_length * (t - 0.25) ** 2
        f2 = -self.genotype_length * (t - 0.75) ** 2
        return np.column_stack([f1, f2])
