import numpy as np
import pytest

from moqd.neuro import (
    Adam,
    InsufficientDataError,
    MlpSpec,
    ReplayBuffer,
    Td3Config,
    TransitionBatch,
    actor_update,
    critic_loss_and_grad,
    critic_update,
    flatten,
    fresh_train_state,
    init_params,
    mlp_forward,
    pg_mutate,
    policy_value_and_grad,
    soft_update,
    train_networks,
    unflatten,
)
from moqd.pareto import DimensionError


def numerical_grad(f, x, h=1e-5):
    """Central finite differences, the independent gradient oracle."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def naive_forward(spec, params, x):
    """Straightforward per-neuron reimplementation used as an oracle."""
    layers = unflatten(spec, params)
    h = list(x)
    for li, (w, b) in enumerate(layers):
        out = []
        for o in range(w.shape[0]):
            acc = b[o]
            for i in range(w.shape[1]):
                acc += w[o, i] * h[i]
            out.append(acc)
        if li < len(layers) - 1 or spec.output_activation == "tanh":
            out = [np.tanh(v) for v in out]
        h = out
    return np.array(h)


def make_batch(rng, n, state_dim=3, action_dim=2, reward_dim=2, done=False):
    return TransitionBatch(
        states=rng.standard_normal((n, state_dim)),
        actions=rng.uniform(-1, 1, (n, action_dim)),
        rewards=rng.standard_normal((n, reward_dim)),
        next_states=rng.standard_normal((n, state_dim)),
        dones=np.full(n, done),
    )


class TestMlp:
    def test_parameter_count(self):
        assert MlpSpec((8, 64, 64, 2)).n_params == 4866

    def test_flatten_unflatten_round_trip(self):
        spec = MlpSpec((3, 5, 4, 2))
        params = init_params(spec, np.random.default_rng(0))
        assert np.array_equal(flatten(unflatten(spec, params)), params)

    def test_zero_params_zero_output(self):
        spec = MlpSpec((4, 8, 2))
        out = mlp_forward(spec, np.zeros(spec.n_params), np.random.default_rng(1).random(4))
        assert np.array_equal(out, np.zeros(2))

    def test_hand_computed_forward(self):
        # unit weights, zero biases, identity output: 0.5 -> tanh(0.5)
        spec = MlpSpec((1, 1, 1), output_activation="identity")
        params = np.array([1.0, 0.0, 1.0, 0.0])
        out = mlp_forward(spec, params, np.array([0.5]))
        assert out[0] == pytest.approx(np.tanh(0.5), abs=1e-15)

    def test_matches_naive_reimplementation(self):
        rng = np.random.default_rng(2)
        for spec in [MlpSpec((3, 6, 2)), MlpSpec((5, 4, 4, 3), "identity")]:
            params = init_params(spec, rng)
            x = rng.standard_normal(spec.sizes[0])
            assert np.allclose(mlp_forward(spec, params, x), naive_forward(spec, params, x), atol=1e-12)

    def test_batched_matches_single(self):
        spec = MlpSpec((3, 6, 2))
        rng = np.random.default_rng(3)
        params = init_params(spec, rng)
        xs = rng.standard_normal((7, 3))
        batch = mlp_forward(spec, params, xs)
        for i in range(7):
            assert np.allclose(batch[i], mlp_forward(spec, params, xs[i]), atol=1e-14)

    def test_policy_actions_bounded(self):
        spec = MlpSpec((3, 8, 2))
        rng = np.random.default_rng(4)
        params = 10.0 * init_params(spec, rng)
        out = mlp_forward(spec, params, rng.standard_normal((50, 3)))
        assert np.all(np.abs(out) <= 1.0)

    def test_wrong_genotype_length(self):
        with pytest.raises(DimensionError):
            unflatten(MlpSpec((3, 4, 2)), np.zeros(10))

    def test_wrong_input_width(self):
        spec = MlpSpec((3, 4, 2))
        with pytest.raises(DimensionError):
            mlp_forward(spec, np.zeros(spec.n_params), np.zeros(5))

    def test_init_respects_fan_in_scale(self):
        spec = MlpSpec((100, 50, 1))
        params = init_params(spec, np.random.default_rng(5))
        (w1, _), _ = unflatten(spec, params)[0], None
        assert np.abs(w1).max() <= 1.0 / np.sqrt(100)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(3, 1, 1, 1)
        for i in range(1, 5):
            buf.push(
                TransitionBatch(
                    states=np.array([[float(i)]]),
                    actions=np.zeros((1, 1)),
                    rewards=np.zeros((1, 1)),
                    next_states=np.zeros((1, 1)),
                    dones=np.zeros(1, dtype=bool),
                )
            )
        kept = sorted(buf._states.ravel().tolist())
        assert kept == [2.0, 3.0, 4.0]

    def test_oversized_push_keeps_newest(self):
        buf = ReplayBuffer(3, 1, 1, 1)
        batch = TransitionBatch(
            states=np.arange(5.0).reshape(5, 1),
            actions=np.zeros((5, 1)),
            rewards=np.zeros((5, 1)),
            next_states=np.zeros((5, 1)),
            dones=np.zeros(5, dtype=bool),
        )
        buf.push(batch)
        assert sorted(buf._states.ravel().tolist()) == [2.0, 3.0, 4.0]

    def test_sample_deterministic(self):
        buf = ReplayBuffer(100, 2, 1, 1)
        rng = np.random.default_rng(0)
        buf.push(make_batch(rng, 50, state_dim=2, action_dim=1, reward_dim=1))
        a = buf.sample(10, np.random.default_rng(9))
        b = buf.sample(10, np.random.default_rng(9))
        assert np.array_equal(a.states, b.states)

    def test_sample_uniformity(self):
        n = 10_000
        buf = ReplayBuffer(n, 1, 1, 1)
        buf.push(
            TransitionBatch(
                states=np.arange(float(n)).reshape(n, 1),
                actions=np.zeros((n, 1)),
                rewards=np.zeros((n, 1)),
                next_states=np.zeros((n, 1)),
                dones=np.zeros(n, dtype=bool),
            )
        )
        draws = buf.sample(n, np.random.default_rng(11)).states.ravel()
        counts = np.bincount(draws.astype(int), minlength=n)
        chi2 = ((counts - 1.0) ** 2).sum()
        # chi-square with 9999 dof: mean ~1e4, sd ~141; 5 sigma bound
        assert abs(chi2 - n) < 5 * np.sqrt(2.0 * n)
        # coarse-grained occupancy should also be flat
        decile_counts = counts.reshape(10, -1).sum(axis=1)
        assert np.all(np.abs(decile_counts - 1000) < 5 * np.sqrt(1000))

    def test_insufficient_data(self):
        buf = ReplayBuffer(10, 1, 1, 1)
        with pytest.raises(InsufficientDataError):
            buf.sample(1, np.random.default_rng(0))


class TestSoftUpdate:
    def test_tau_zero_is_identity(self):
        target = np.ones(4)
        soft_update(target, np.full(4, 9.0), 0.0)
        assert np.array_equal(target, np.ones(4))

    def test_tau_one_is_copy(self):
        target = np.ones(4)
        soft_update(target, np.full(4, 9.0), 1.0)
        assert np.array_equal(target, np.full(4, 9.0))

    def test_half_blend(self):
        target = np.zeros(3)
        soft_update(target, np.full(3, 2.0), 0.5)
        assert np.allclose(target, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            soft_update(np.zeros(3), np.zeros(4), 0.5)


class TestGradients:
    def test_critic_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for _ in range(8):
            spec = MlpSpec((4, 5, 3, 1), "identity")
            params = init_params(spec, rng)
            inputs = rng.standard_normal((6, 4))
            targets = rng.standard_normal(6)
            _, grad = critic_loss_and_grad(spec, params, inputs, targets)
            fd = numerical_grad(lambda p: critic_loss_and_grad(spec, p, inputs, targets)[0], params)
            assert relative_error(grad, fd) < 1e-4

    def test_policy_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(22)
        for _ in range(8):
            policy = MlpSpec((3, 4, 2))
            critic = MlpSpec((5, 6, 1), "identity")
            p_pol = init_params(policy, rng)
            p_cri = init_params(critic, rng)
            states = rng.standard_normal((5, 3))
            _, grad = policy_value_and_grad(policy, p_pol, critic, p_cri, states)
            fd = numerical_grad(
                lambda p: policy_value_and_grad(policy, p, critic, p_cri, states)[0], p_pol
            )
            assert relative_error(grad, fd) < 1e-4


def quadratic_penalty_critic(rng, state_dim=3, action_dim=2, steps=3000):
    """Critic regressed onto Q(s, a) = -||a||^2, the analytic test target."""
    spec = MlpSpec((state_dim + action_dim, 32, 32, 1), "identity")
    params = init_params(spec, rng)
    opt = Adam(1e-3, spec.n_params)
    for _ in range(steps):
        s = rng.standard_normal((64, state_dim))
        a = rng.uniform(-1, 1, (64, action_dim))
        target = -np.sum(a * a, axis=1)
        _, grad = critic_loss_and_grad(spec, params, np.hstack([s, a]), target)
        opt.step(params, grad)
    return spec, params


class TestTd3:
    def test_discount_zero_fixed_point(self):
        rng = np.random.default_rng(30)
        cfg = Td3Config(critic_hidden=(16, 16), critic_batch=4, discount=0.0)
        policy = MlpSpec((3, 8, 2))
        state = fresh_train_state(policy, 3, 2, 0, cfg, rng)
        one = make_batch(rng, 1)
        batch = TransitionBatch(
            states=np.repeat(one.states, 4, axis=0),
            actions=np.repeat(one.actions, 4, axis=0),
            rewards=np.repeat(one.rewards, 4, axis=0),
            next_states=np.repeat(one.next_states, 4, axis=0),
            dones=one.dones.repeat(4),
        )
        for _ in range(4000):
            critic_update(state, batch, cfg)
        q = mlp_forward(
            state.critic_spec, state.critic1, np.hstack([one.states, one.actions])
        )
        assert abs(q[0, 0] - one.rewards[0, 0]) < 1e-3

    def test_done_masks_bootstrap(self):
        rng = np.random.default_rng(31)
        cfg = Td3Config(critic_hidden=(16, 16), critic_batch=8, discount=0.99)
        policy = MlpSpec((3, 8, 2))
        state = fresh_train_state(policy, 3, 2, 0, cfg, rng)
        batch = make_batch(rng, 8, done=True)
        # with done=True everywhere the target is exactly the reward, so a
        # long training run pins Q to r irrespective of the discount
        for _ in range(5000):
            critic_update(state, batch, cfg)
        q = mlp_forward(state.critic_spec, state.critic1, np.hstack([batch.states, batch.actions]))
        assert np.allclose(q.ravel(), batch.rewards[:, 0], atol=0.02)

    def test_actor_converges_to_zero_action_under_quadratic_critic(self):
        rng = np.random.default_rng(32)
        cfg = Td3Config(critic_hidden=(32, 32), critic_batch=32, actor_lr=3e-3)
        policy = MlpSpec((3, 8, 2))
        state = fresh_train_state(policy, 3, 2, 0, cfg, rng)
        state.critic_spec, state.critic1 = quadratic_penalty_critic(rng)
        states = rng.standard_normal((64, 3))
        batch = TransitionBatch(
            states=states,
            actions=np.zeros((64, 2)),
            rewards=np.zeros((64, 2)),
            next_states=states,
            dones=np.zeros(64, dtype=bool),
        )
        before = np.abs(mlp_forward(state.policy_spec, state.actor, states)).mean()
        for _ in range(300):
            actor_update(state, batch, cfg)
        after = np.abs(mlp_forward(state.policy_spec, state.actor, states)).mean()
        assert after < before
        assert after < 0.05

    def test_soft_update_tau_one_syncs_targets(self):
        rng = np.random.default_rng(33)
        cfg = Td3Config(critic_hidden=(8,), critic_batch=4, soft_update_tau=1.0)
        policy = MlpSpec((3, 4, 2))
        state = fresh_train_state(policy, 3, 2, 0, cfg, rng)
        batch = make_batch(rng, 4)
        critic_update(state, batch, cfg)
        actor_update(state, batch, cfg)
        assert np.array_equal(state.target_actor, state.actor)
        assert np.array_equal(state.target_critic1, state.critic1)


class TestPgMutate:
    def setup_method(self):
        self.rng = np.random.default_rng(40)
        self.cfg = Td3Config(critic_hidden=(16, 16), critic_batch=16)
        self.policy = MlpSpec((3, 8, 2))
        self.state = fresh_train_state(self.policy, 3, 2, 0, self.cfg, self.rng)
        self.buffer = ReplayBuffer(1000, 3, 2, 2)
        self.buffer.push(make_batch(self.rng, 200))

    def test_zero_steps_identity(self):
        g = init_params(self.policy, self.rng)
        out = pg_mutate(g, self.state, self.buffer, self.cfg, self.rng, steps=0)
        assert np.array_equal(out, g)

    def test_zero_lr_identity(self):
        g = init_params(self.policy, self.rng)
        out = pg_mutate(g, self.state, self.buffer, self.cfg, self.rng, steps=5, lr=0.0)
        assert np.array_equal(out, g)

    def test_descends_toward_low_action_norm(self):
        spec, params = quadratic_penalty_critic(np.random.default_rng(41))
        self.state.critic_spec = spec
        self.state.critic1 = params
        g = init_params(self.policy, np.random.default_rng(42))
        mutated = pg_mutate(
            g, self.state, self.buffer, self.cfg, np.random.default_rng(43), steps=60, lr=5e-3
        )
        states = self.buffer.sample(64, np.random.default_rng(44)).states
        before = np.abs(mlp_forward(self.policy, g, states)).mean()
        after = np.abs(mlp_forward(self.policy, mutated, states)).mean()
        assert after < before

    def test_insufficient_buffer(self):
        starved = ReplayBuffer(100, 3, 2, 2)
        with pytest.raises(InsufficientDataError):
            pg_mutate(np.zeros(self.policy.n_params), self.state, starved, self.cfg, self.rng)


class TestTrainNetworks:
    def make_bandit_buffer(self, rng, n=4096):
        """One-step bandit with known Q*: r0 = 2 + a0, r1 = 1 - a0 * a1."""
        states = np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0) * np.ones((n, 2))
        actions = rng.uniform(-1, 1, (n, 2))
        r0 = 2.0 + actions[:, 0]
        r1 = 1.0 - actions[:, 0] * actions[:, 1]
        buf = ReplayBuffer(n, 2, 2, 2)
        buf.push(
            TransitionBatch(
                states=states,
                actions=actions,
                rewards=np.column_stack([r0, r1]),
                next_states=states,
                dones=np.ones(n, dtype=bool),
            )
        )
        return buf

    def test_objectives_advance_in_lockstep(self):
        rng = np.random.default_rng(50)
        cfg = Td3Config(critic_hidden=(8,), critic_batch=16, critic_steps=6)
        policy = MlpSpec((2, 4, 2))
        states = [
            fresh_train_state(policy, 2, 2, j, cfg, np.random.default_rng(j)) for j in (0, 1)
        ]
        buf = self.make_bandit_buffer(rng, 128)
        train_networks(states, buf, cfg)
        assert states[0].step_count == states[1].step_count == 6

    def test_deterministic_under_fixed_seeds(self):
        def run():
            cfg = Td3Config(critic_hidden=(8,), critic_batch=16, critic_steps=10)
            policy = MlpSpec((2, 4, 2))
            states = [
                fresh_train_state(policy, 2, 2, j, cfg, np.random.default_rng(100 + j))
                for j in (0, 1)
            ]
            buf = self.make_bandit_buffer(np.random.default_rng(51), 256)
            report = train_networks(states, buf, cfg)
            return report, states[0].critic1.copy()

        (r1, c1), (r2, c2) = run(), run()
        assert r1 == r2
        assert np.array_equal(c1, c2)

    def test_learns_known_bandit_values(self):
        rng = np.random.default_rng(52)
        cfg = Td3Config(critic_hidden=(32, 32), critic_batch=128, critic_steps=600, critic_lr=1e-3)
        policy = MlpSpec((2, 8, 2))
        states = [
            fresh_train_state(policy, 2, 2, j, cfg, np.random.default_rng(200 + j))
            for j in (0, 1)
        ]
        buf = self.make_bandit_buffer(rng)
        for _ in range(3):
            train_networks(states, buf, cfg)
        probe = buf.sample(256, np.random.default_rng(53))
        q0 = mlp_forward(
            states[0].critic_spec, states[0].critic1, np.hstack([probe.states, probe.actions])
        ).ravel()
        q1 = mlp_forward(
            states[1].critic_spec, states[1].critic1, np.hstack([probe.states, probe.actions])
        ).ravel()
        target0 = 2.0 + probe.actions[:, 0]
        target1 = 1.0 - probe.actions[:, 0] * probe.actions[:, 1]
        # within 5% of the value scale
        assert np.abs(q0 - target0).mean() < 0.05 * np.abs(target0).mean()
        assert np.abs(q1 - target1).mean() < 0.05 * np.abs(target1).mean()

    def test_propagates_insufficient_data(self):
        cfg = Td3Config(critic_hidden=(8,), critic_batch=64, critic_steps=1)
        policy = MlpSpec((2, 4, 2))
        state = fresh_train_state(policy, 2, 2, 0, cfg, np.random.default_rng(0))
        buf = ReplayBuffer(10, 2, 2, 2)
        with pytest.raises(InsufficientDataError):
            train_networks([state], buf, cfg)
