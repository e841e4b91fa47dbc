import numpy as np
import pytest

from midl_rl.agent import (Actor, AgentConfig, CriticBatch, CriticPair, EntropyCoef, Trainer, actor_loss,
                           alpha_update, batch_split, bellman_target, conservative_penalty, critic_loss,
                           proposal_actions)
from midl_rl.errors import DomainError
from midl_rl.nn import Adam

F64 = np.float64


def set_constant(net, c):
    net.params[-2][:] = 0.0
    net.params[-1][:] = c


def constant_critics(c1, c2=None, targets=True):
    critics = CriticPair(1, 1, hidden=8, rng=0, dtype=F64)
    set_constant(critics.nets[0], c1)
    set_constant(critics.nets[1], c1 if c2 is None else c2)
    if targets:
        critics.targets = [n.copy() for n in critics.nets]
    return critics


def make_batch(rng, critics, actor, n_off=8, n_mod=6, n_prop=10, omega=None):
    s_off, a_off = rng.uniform(0, 1, (n_off, 1)), rng.uniform(-1, 1, (n_off, 1))
    s_mod, a_mod = rng.uniform(0, 1, (n_mod, 1)), rng.uniform(-1, 1, (n_mod, 1))
    prop, log_q = proposal_actions(actor, s_mod, rng, n_prop)
    if omega is None:
        omega = rng.dirichlet(np.ones(n_mod))
    return CriticBatch(s_off, a_off, rng.normal(size=n_off), s_mod, a_mod, rng.normal(size=n_mod),
                       omega, prop, log_q)


def test_bellman_target_examples(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    s2 = np.zeros((1, 1))
    np.testing.assert_allclose(bellman_target(constant_critics(3.0, 5.0), actor, 0.0, [1.0], s2, [0.0], 0.99, rng),
                               3.97)
    np.testing.assert_allclose(bellman_target(constant_critics(2.0), actor, 0.0, [0.5], s2, [0.0], 0.99, rng),
                               0.5 + 0.99 * 2.0)
    np.testing.assert_allclose(bellman_target(constant_critics(3.0), actor, 0.7, [1.5], s2, [1.0], 0.99, rng), 1.5)


def test_constant_q_gives_zero_penalty(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    critics = constant_critics(2.5)
    # uniform proposals only: the estimate is exact
    batch = make_batch(rng, critics, actor, n_prop=10)
    batch.prop_actions = batch.prop_actions[:, :10]
    batch.prop_log_q = batch.prop_log_q[:, :10]
    np.testing.assert_allclose(conservative_penalty(critics, batch), 0.0, atol=1e-12)
    # mixed proposals: unbiased for exp(c), so the weighted average is close to 0
    batch = make_batch(rng, critics, actor, n_mod=2000, omega=np.full(2000, 1 / 2000))
    np.testing.assert_allclose(conservative_penalty(critics, batch), 0.0, atol=0.02)


def test_two_zero_actions_give_zero_lse(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    critics = constant_critics(0.0)
    batch = CriticBatch(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)),
                        np.zeros(1), np.ones(1), np.zeros((1, 2, 1)), np.log(np.ones((1, 2))))
    np.testing.assert_allclose(conservative_penalty(critics, batch), 0.0, atol=1e-12)


def test_penalty_scales_linearly_in_lambda(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    critics = CriticPair(1, 1, hidden=16, rng=1, dtype=F64)
    batch = make_batch(rng, critics, actor)
    l0, g0, _ = critic_loss(critics, batch, 0.0, 0.5)
    l1, g1, _ = critic_loss(critics, batch, 1.0, 0.5)
    l2, g2, _ = critic_loss(critics, batch, 2.0, 0.5)
    np.testing.assert_allclose(l2 - l0, 2 * (l1 - l0), rtol=1e-12)
    for c in range(2):
        for a, b, z in zip(g1[c], g2[c], g0[c]):
            np.testing.assert_allclose(b - z, 2 * (a - z), rtol=1e-9, atol=1e-14)


def test_critic_loss_reductions(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    critics = CriticPair(1, 1, hidden=16, rng=1, dtype=F64)
    batch = make_batch(rng, critics, actor)
    q_off = critics.q(batch.s_off, batch.a_off)
    q_mod = critics.q(batch.s_mod, batch.a_mod)
    for f in (0.0, 0.5, 1.0):
        losses, _, _ = critic_loss(critics, batch, 0.0, f)
        expect = 0.5 * (f * ((q_mod - batch.y_mod[:, None]) ** 2).mean(0)
                        + (1 - f) * ((q_off - batch.y_off[:, None]) ** 2).mean(0))
        np.testing.assert_allclose(losses, expect, rtol=1e-12)
    # f = 0: model targets are irrelevant
    batch.y_mod = batch.y_mod + 100.0
    np.testing.assert_allclose(critic_loss(critics, batch, 0.0, 0.0)[0],
                               0.5 * ((q_off - batch.y_off[:, None]) ** 2).mean(0), rtol=1e-12)
    # perfect critic, no penalty
    batch.y_off, batch.y_mod = q_off[:, 0].copy(), q_mod[:, 0].copy()
    critics.nets[1] = critics.nets[0].copy()
    np.testing.assert_allclose(critic_loss(critics, batch, 0.0, 0.5)[0], 0.0, atol=1e-24)


def test_penalty_matches_uniform_lse_reference(rng):
    """With uniform omega and model states taken from the offline batch the
    penalty gradient points the same way as a dense uniform-action log-sum-exp penalty."""
    actor = Actor(1, 1, hidden=16, rng=0, dtype=F64)
    critics = CriticPair(1, 1, hidden=32, rng=1, dtype=F64)
    s = rng.uniform(0, 1, (64, 1))
    a = rng.uniform(-1, 1, (64, 1))
    prop, log_q = proposal_actions(actor, s, rng, 10)
    batch = CriticBatch(s, a, np.zeros(64), s, a, np.zeros(64), np.full(64, 1 / 64), prop, log_q)
    _, g0, _ = critic_loss(critics, batch, 0.0, 0.5)
    _, g1, _ = critic_loss(critics, batch, 1.0, 0.5)
    dense = np.repeat(np.linspace(-1, 1, 201)[None, :, None], 64, axis=0)
    ref_batch = CriticBatch(s, a, np.zeros(64), s, a, np.zeros(64), np.full(64, 1 / 64), dense,
                            np.zeros((64, 201)))
    _, r0, _ = critic_loss(critics, ref_batch, 0.0, 0.5)
    _, r1, _ = critic_loss(critics, ref_batch, 1.0, 0.5)
    ours = np.concatenate([(x - y).ravel() for x, y in zip(g1[0], g0[0])])
    ref = np.concatenate([(x - y).ravel() for x, y in zip(r1[0], r0[0])])
    cos = ours @ ref / (np.linalg.norm(ours) * np.linalg.norm(ref))
    assert cos > 0.9


def test_proposals_shape_and_density(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    s = rng.uniform(0, 1, (5, 1))
    prop, log_q = proposal_actions(actor, s, rng, 10)
    assert prop.shape == (5, 20, 1) and log_q.shape == (5, 20)
    np.testing.assert_allclose(log_q[:, :10], 0.0)
    np.testing.assert_allclose(log_q[:, 10:] - np.log(2.0), actor.log_prob(np.repeat(s, 10, axis=0),
                                                             prop[:, 10:].reshape(-1, 1)).reshape(5, 10),
                               atol=1e-5)
    assert np.all(np.abs(prop) <= 1.0)
    with pytest.raises(DomainError):
        proposal_actions(actor, s, rng, 0)


def test_actor_actions_in_box_and_log_prob_consistent(rng):
    actor = Actor(1, 1, hidden=16, low=-2.0, high=3.0, rng=0, dtype=F64)
    s = rng.uniform(0, 1, (500, 1))
    a, logp = actor.sample(s, rng)
    assert np.all((a >= -2.0) & (a <= 3.0)) and np.all(np.isfinite(logp))
    np.testing.assert_allclose(actor.log_prob(s, a), logp, atol=1e-4)


def test_actor_density_integrates_to_one():
    actor = Actor(1, 1, hidden=16, rng=3, dtype=F64)
    grid = np.linspace(-1, 1, 200001)[1:-1, None]
    dens = np.exp(actor.log_prob(np.full_like(grid, 0.3), grid))
    assert np.trapezoid(dens, grid[:, 0]) == pytest.approx(1.0, abs=1e-3)


def test_actor_gradient_matches_finite_difference(rng):
    actor = Actor(2, 1, hidden=8, rng=0, dtype=F64)
    critics = CriticPair(2, 1, hidden=8, rng=1, dtype=F64)
    s = rng.normal(size=(6, 2))
    eps = rng.standard_normal((6, 1))
    _, grads, _ = actor_loss(critics, actor, 0.3, s, eps)
    h = 1e-6
    for p, g in zip(actor.net.params, grads):
        for idx in list(np.ndindex(p.shape))[:10]:
            old = p[idx]
            p[idx] = old + h
            up = actor_loss(critics, actor, 0.3, s, eps, grads=False)[0]
            p[idx] = old - h
            dn = actor_loss(critics, actor, 0.3, s, eps, grads=False)[0]
            p[idx] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-4 * max(1.0, abs(fd))


def test_constant_critics_push_std_up(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    critics = constant_critics(1.0)
    s = rng.uniform(0, 1, (256, 1))
    opt = Adam(actor.net.params, 1e-3)
    first = -actor_loss(critics, actor, 1.0, s, rng.standard_normal((256, 1)), grads=False)[2].mean()
    for _ in range(200):
        _, g, _ = actor_loss(critics, actor, 1.0, s, rng.standard_normal((256, 1)))
        opt.step(g)
    ent = -actor_loss(critics, actor, 1.0, s, rng.standard_normal((256, 1)), grads=False)[2].mean()
    assert ent > first


def test_quadratic_bowl_pulls_mean_to_zero(rng):
    actor = Actor(1, 1, hidden=16, rng=0, dtype=F64)
    actor.net.params[-1][0] = 1.0  # start with the mean pushed right
    critics = CriticPair(1, 1, hidden=4, rng=0, dtype=F64)

    def bowl(x):
        return -x[:, 1:] ** 2

    class Bowl:
        def __init__(self):
            self.cache = None

        def forward(self, x):
            return bowl(x), x

        def backward(self, cache, g):
            gx = np.zeros_like(cache)
            gx[:, 1:] = g * -2.0 * cache[:, 1:]
            return None, gx

    critics.nets = [Bowl(), Bowl()]
    s = rng.uniform(0, 1, (128, 1))
    opt = Adam(actor.net.params, 1e-3)
    start = np.abs(actor.deterministic(s)).mean()
    for _ in range(300):
        _, g, _ = actor_loss(critics, actor, 0.0, s, rng.standard_normal((128, 1)))
        opt.step(g)
    assert np.abs(actor.deterministic(s)).mean() < 0.25 * start


def test_alpha_update_direction():
    coef = EntropyCoef(1, init_alpha=0.1)
    alpha_update(coef, np.full(8, 1.0))  # entropy -1 equals the target
    assert coef.alpha == pytest.approx(0.1, rel=1e-12)
    alpha_update(coef, np.full(8, -0.5))  # entropy 0.5 above target
    assert coef.alpha < 0.1
    coef2 = EntropyCoef(1, init_alpha=0.1)
    alpha_update(coef2, np.full(8, 3.0))  # entropy -3 below target
    assert coef2.alpha > 0.1
    assert coef.target == -1.0
    with pytest.raises(DomainError):
        EntropyCoef(1, init_alpha=0.0)


def test_soft_update_examples():
    critics = CriticPair(1, 1, hidden=4, rng=0, dtype=F64)
    for n, t in zip(critics.nets, critics.targets):
        for p in n.params:
            p[:] = 1.0
        for p in t.params:
            p[:] = 0.0
    critics.soft_update()
    assert all(np.all(p == np.float64(0.005)) for t in critics.targets for p in t.params)
    before = [p.copy() for t in critics.targets for p in t.params]
    critics.soft_update(0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, [p for t in critics.targets for p in t.params]))
    critics.soft_update(1.0)
    assert all(np.all(p == 1.0) for t in critics.targets for p in t.params)
    with pytest.raises(DomainError):
        CriticPair(1, 1, tau=1.0)


def test_critic_symmetry(rng):
    actor = Actor(1, 1, hidden=8, rng=0, dtype=F64)
    a = CriticPair(1, 1, hidden=16, rng=1, dtype=F64)
    b = CriticPair(1, 1, hidden=16, rng=1, dtype=F64)
    b.nets = b.nets[::-1]
    batch = make_batch(rng, a, actor)
    opts_a = [Adam(n.params, 1e-2) for n in a.nets]
    opts_b = [Adam(n.params, 1e-2) for n in b.nets]
    for _ in range(20):
        la, ga, _ = critic_loss(a, batch, 5.0, 0.5)
        lb, gb, _ = critic_loss(b, batch, 5.0, 0.5)
        np.testing.assert_array_equal(la, lb[::-1])
        for o, g in zip(opts_a, ga):
            o.step(g)
        for o, g in zip(opts_b, gb):
            o.step(g)


def test_batch_split_and_defaults():
    assert batch_split(256, 0.5) == (128, 128)
    assert batch_split(256, 0.0) == (0, 256)
    c = AgentConfig()
    assert (c.actor_lr, c.critic_lr, c.batch_size, c.gamma, c.tau, c.f) == (1e-4, 3e-4, 256, 0.99, 5e-3, 0.5)
    assert (c.lam, c.horizon, c.m, c.n_proposals) == (5.0, 5, 10, 10)
    with pytest.raises(DomainError):
        AgentConfig(gamma=1.0).validate()


SMALL_AGENT = AgentConfig(hidden=32, batch_size=32, rollout_every=10, rollout_count=20, disc_hidden=16,
                          disc_warmup=20, disc_steps=5, buffer_capacity=1000)


def run_trainer(ensemble, data, seed, n=25, config=SMALL_AGENT):
    t = Trainer(ensemble, data, config, seed=seed)
    return t, [t.train_iteration() for _ in range(n)]


def test_trainer_deterministic(small_ensemble, toy_data):
    _, a = run_trainer(small_ensemble, toy_data, 3)
    _, b = run_trainer(small_ensemble, toy_data, 3)
    _, c = run_trainer(small_ensemble, toy_data, 4)
    assert a == b and a != c
    assert set(a[0]) == {"iter", "critic_loss", "actor_loss", "alpha", "mean_q_offline", "mean_q_model",
                         "penalty", "omega_entropy"}
    assert [r["iter"] for r in a] == list(range(25))


def test_trainer_without_model_rows(small_ensemble, toy_data):
    from dataclasses import replace
    t, recs = run_trainer(small_ensemble, toy_data, 0, 5, replace(SMALL_AGENT, f=0.0, lam=0.0))
    assert all(r["mean_q_model"] == 0.0 and r["omega_entropy"] == 0.0 for r in recs)


def test_trainer_g_within_clip(small_ensemble, toy_data):
    t, _ = run_trainer(small_ensemble, toy_data, 0, 11)
    g = t.buffer.g[:len(t.buffer)]
    assert len(g) == 2 * 20 * SMALL_AGENT.horizon
    assert np.all((g >= 1e-45) & (g <= 10.0))
    grid, q = t.q_curve()
    assert len(grid) == 401 and grid[0] == -1 and grid[-1] == 1 and np.all(np.isfinite(q))
