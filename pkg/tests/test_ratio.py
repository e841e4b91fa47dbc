import numpy as np
import pytest
from scipy.stats import norm

from midl_rl.errors import DomainError
from midl_rl.ratio import (G_CLIP, RATIO_CLIP, DiscriminatorPair, discriminator_loss, dynamics_ratio,
                           g_from_ratios, g_from_samples, log_model_ratio, normalize_weights,
                           omega_entropy, ratio_from_probs, sampling_weights, train_discriminators)
from midl_rl.toy import OfflineDataset
from midl_rl.world_model import rollout


def cloud(rng, n, s2_low, s2_high):
    s = rng.uniform(0, 1, (n, 1))
    a = rng.uniform(-1, 1, (n, 1))
    return OfflineDataset(s, a, np.zeros(n), rng.uniform(s2_low, s2_high, (n, 1)))


def constant_pair(p_model_sas, p_model_sa):
    """Pair whose networks output fixed probabilities regardless of input."""
    pair = DiscriminatorPair(1, 1, hidden=4, rng=0)
    for net, p in ((pair.sas, p_model_sas), (pair.sa, p_model_sa)):
        net.params[-2][:] = 0.0
        half = 0.5 * np.log(p / (1 - p))
        net.params[-1][:] = np.arctanh(np.array([-half, half]) / 2.0)
    return pair


def test_output_is_a_distribution(rng):
    pair = DiscriminatorPair(1, 1, hidden=16, rng=0)
    x = rng.normal(0, 5, (100, 1))
    p = pair.probs(x, x, x)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    logits = pair.sas(pair._x(x, x, x))
    assert np.all(np.abs(logits) <= 2.0)


def test_uninformative_discriminators_give_unit_ratio(rng):
    pair = constant_pair(0.5, 0.5)
    s = rng.uniform(0, 1, (10, 1))
    np.testing.assert_allclose(dynamics_ratio(pair, s, s, s), 1.0)
    assert ratio_from_probs(0.5, 0.5, 0.5, 0.5) == 1.0


def test_ratio_arithmetic_true_over_model():
    # true/model orientation: model-favoured transitions get ratio 0.2*0.5/(0.8*0.5)
    np.testing.assert_allclose(ratio_from_probs(0.8, 0.2, 0.5, 0.5), 0.25)
    np.testing.assert_allclose(ratio_from_probs(0.2, 0.8, 0.5, 0.5), 1.0)  # raw 4, clipped
    pair = constant_pair(0.8, 0.5)
    np.testing.assert_allclose(dynamics_ratio(pair, np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1))),
                               0.25, rtol=1e-9)
    np.testing.assert_allclose(log_model_ratio(pair, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))),
                               np.log(4.0), rtol=1e-9)


def test_ratio_clip_bounds_exact():
    assert RATIO_CLIP == (1e-45, 1.0) and G_CLIP == (1e-45, 10.0)
    r = ratio_from_probs(np.array([1e-300, 0.5]), np.array([1.0, 0.5]), 1.0, 1e-300)
    assert r.max() <= 1.0 and r.min() >= 1e-45
    assert ratio_from_probs(1.0, 1e-300, 1.0, 1e-300) == 1e-45


def test_g_examples():
    assert g_from_ratios(np.ones((1, 5)))[0] == 1e-45
    np.testing.assert_allclose(g_from_ratios(np.full((1, 5), np.exp(-2.0))), 2.0)
    assert g_from_ratios(np.full((1, 5), np.exp(-20.0)))[0] == 10.0
    assert g_from_ratios(np.full((1, 5), 1e-45), "literal")[0] == 1e-45
    np.testing.assert_allclose(g_from_ratios(np.array([[0.2, 0.4]]), "literal"), 0.3)
    with pytest.raises(DomainError):
        g_from_ratios(np.ones((1, 0)))
    with pytest.raises(DomainError):
        g_from_ratios(np.ones((1, 2)), "bogus")


def test_g_from_samples_uses_every_sample():
    pair = constant_pair(0.5, 0.5)
    with pytest.raises(DomainError):
        g_from_samples(pair, np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 0, 1)))
    g = g_from_samples(pair, np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 3, 1)))
    np.testing.assert_array_equal(g, 1e-45)


def test_weights_examples():
    np.testing.assert_allclose(normalize_weights([1, 1, 1, 1]).omega, 0.25)
    w = normalize_weights([3.0, 1.0])
    np.testing.assert_allclose(w.omega, [0.75, 0.25])
    assert w.z == 4.0
    floor = normalize_weights(np.full(5, 1e-45))
    np.testing.assert_allclose(floor.omega, 0.2)
    with pytest.raises(DomainError):
        normalize_weights([])


def test_weights_normalized_and_monotone(rng):
    for _ in range(50):
        g = np.clip(rng.exponential(1.0, rng.integers(1, 300)), *G_CLIP)
        w = normalize_weights(g)
        assert abs(w.omega.sum() - 1.0) <= 1e-6
        order = np.argsort(g)
        assert np.all(np.diff(w.omega[order]) >= 0)
    assert omega_entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))


def test_identical_distributions_converge_to_chance(rng):
    pair = DiscriminatorPair(1, 1, hidden=32, rng=0)
    off, mod = cloud(rng, 2000, 0, 1), cloud(rng, 2000, 0, 1)
    train_discriminators(pair, off, mod, 300, np.random.default_rng(1))
    x_off = pair._x(off.states, off.actions, off.next_states)
    x_mod = pair._x(mod.states, mod.actions, mod.next_states)
    assert discriminator_loss(pair.sas, x_off, x_mod) == pytest.approx(2 * np.log(2), abs=0.02)
    np.testing.assert_allclose(pair.probs(off.states, off.actions, off.next_states), 0.5, atol=0.1)


def test_disjoint_supports_separated(rng):
    off, mod = cloud(rng, 2000, 0, 1), cloud(rng, 2000, 2, 3)
    pair = DiscriminatorPair(1, 1, hidden=32, rng=0, offline=off)
    train_discriminators(pair, off, mod, 300, np.random.default_rng(1))
    acc = 0.5 * ((pair.probs(off.states, off.actions, off.next_states)[:, 0] > 0.5).mean()
                 + (pair.probs(mod.states, mod.actions, mod.next_states)[:, 1] > 0.5).mean())
    assert acc >= 0.95


def test_zero_learning_rate_leaves_parameters(rng):
    off, mod = cloud(rng, 100, 0, 1), cloud(rng, 100, 2, 3)
    pair = DiscriminatorPair(1, 1, hidden=8, lr=0.0, rng=0)
    before = [p.copy() for p in pair.sas.params + pair.sa.params]
    train_discriminators(pair, off, mod, 1, np.random.default_rng(0))
    for b, p in zip(before, pair.sas.params + pair.sa.params):
        np.testing.assert_array_equal(b, p)


def test_empty_batches_rejected(rng):
    pair = DiscriminatorPair(1, 1, hidden=8, rng=0)
    empty = OfflineDataset(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)))
    with pytest.raises(DomainError):
        train_discriminators(pair, empty, cloud(rng, 10, 0, 1), 1, rng)


def test_gaussian_ratio_recovery(rng):
    """Model next states ~ N(0.5, 1), true ~ N(0, 1): T_true/T_model = exp(0.125 - x/2)."""
    n = 20000
    s, a = np.zeros((n, 1)), np.zeros((n, 1))
    off = OfflineDataset(s, a, np.zeros(n), rng.normal(0.0, 1.0, (n, 1)))
    mod = OfflineDataset(s, a, np.zeros(n), rng.normal(0.5, 1.0, (n, 1)))
    pair = DiscriminatorPair(1, 1, rng=0, offline=off)
    train_discriminators(pair, off, mod, 2000, np.random.default_rng(1))
    x = np.linspace(norm.ppf(0.05, 0.25), norm.ppf(0.95, 0.25), 101)[:, None]
    est = np.exp(-log_model_ratio(pair, np.zeros_like(x), np.zeros_like(x), x))
    truth = np.exp(0.125 - 0.5 * x[:, 0])
    q = est / truth
    assert q.min() >= 0.5 and q.max() <= 2.0


def test_g_tracks_model_error_on_toy(small_ensemble, toy_data):
    def uniform(s, r):
        return r.uniform(-1, 1, (len(s), 1))
    rng = np.random.default_rng(0)
    buf = rollout(small_ensemble, uniform, toy_data, 1, 2000, rng)
    pair = DiscriminatorPair(1, 1, hidden=64, rng=0, offline=toy_data)
    train_discriminators(pair, toy_data, buf, 500, rng)
    w = sampling_weights(pair, small_ensemble, buf.states[:200], buf.actions[:200], 10, rng)
    assert abs(w.omega.sum() - 1.0) <= 1e-6
    assert np.all((w.g >= 1e-45) & (w.g <= 10.0))
