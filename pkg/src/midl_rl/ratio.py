"""Source discriminators, the true/model dynamics ratio and the adaptive
sampling weights built on it.

Two classifiers tell offline data from model data, one on ``(s, a, s')``
and one on ``(s, a)``. By Bayes' rule the ratio of their odds is the ratio
of model to true transition densities. The per-sample model error ``g``
averages ``-log`` of the clipped true-over-model ratio across next states
drawn from the model, which is the positive part of ``log T_model / T_true``
and upper-bounds the reverse KL divergence. The weights ``omega`` are ``g``
normalized over a batch.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonFiniteError
from .nn import Adam, Mlp
from .world_model import Normalizer, predict

RATIO_CLIP = (1e-45, 1.0)
G_CLIP = (1e-45, 10.0)
OFFLINE, MODEL = 0, 1


@dataclass
class SamplingWeights:
    g: np.ndarray
    omega: np.ndarray
    z: float


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))


class DiscriminatorPair:
    """``sas`` scores ``(s, a, s')``, ``sa`` scores ``(s, a)``.

    Each network has one hidden layer and two ``2*tanh`` logits (offline,
    model) followed by a softmax.
    """

    def __init__(self, state_dim, action_dim, hidden=256, lr=3e-4, rng=None,
                 offline=None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.sas = Mlp([2 * state_dim + action_dim, hidden, 2], "relu", "tanh", 2.0, rng=rng, dtype=dtype)
        self.sa = Mlp([state_dim + action_dim, hidden, 2], "relu", "tanh", 2.0, rng=rng, dtype=dtype)
        self.opt_sas = Adam(self.sas.params, lr)
        self.opt_sa = Adam(self.sa.params, lr)
        self.norm_sas = Normalizer(np.zeros(2 * state_dim + action_dim), np.ones(2 * state_dim + action_dim))
        if offline is not None:
            self.norm_sas = Normalizer.fit(np.concatenate(
                [offline.states, offline.actions, offline.next_states], axis=1))
        self.history = []

    @property
    def norm_sa(self):
        k = self.state_dim + self.action_dim
        return Normalizer(self.norm_sas.mean[:k], self.norm_sas.std[:k])

    def _x(self, s, a, s2=None):
        if s2 is None:
            return self.norm_sa.normalize(np.concatenate([s, a], axis=-1))
        return self.norm_sas.normalize(np.concatenate([s, a, s2], axis=-1))

    def log_probs(self, s, a, s2=None):
        """Log class probabilities ``[:, (offline, model)]``."""
        net = self.sa if s2 is None else self.sas
        return _log_softmax(np.asarray(net(self._x(s, a, s2)), dtype=np.float64))

    def probs(self, s, a, s2=None):
        return np.exp(self.log_probs(s, a, s2))


def discriminator_grad(net, x_off, x_mod, grads=True):
    """Balanced cross-entropy ``-E_off[log p_off] - E_mod[log p_mod]`` and its gradients."""
    x = np.concatenate([x_off, x_mod])
    labels = np.r_[np.full(len(x_off), OFFLINE), np.full(len(x_mod), MODEL)]
    w = np.r_[np.full(len(x_off), 1.0 / len(x_off)), np.full(len(x_mod), 1.0 / len(x_mod))]
    out, cache = net.forward(x)
    logp = _log_softmax(np.asarray(out, dtype=np.float64))
    rows = np.arange(len(x))
    loss = float(-(w * logp[rows, labels]).sum())
    if not grads:
        return loss, None
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    g, _ = net.backward(cache, d * w[:, None], input_grad=False)
    return loss, g


def _ce_step(net, opt, x_off, x_mod):
    """One Adam step on the discriminator loss; returns the loss."""
    loss, grads = discriminator_grad(net, x_off, x_mod)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite discriminator loss")
    opt.step(grads)
    return loss


def discriminator_loss(net, x_off, x_mod):
    logp_off = _log_softmax(np.asarray(net(x_off), dtype=np.float64))
    logp_mod = _log_softmax(np.asarray(net(x_mod), dtype=np.float64))
    return float(-logp_off[:, OFFLINE].mean() - logp_mod[:, MODEL].mean())


def train_discriminators(pair, offline, model, steps, rng, batch_size=256):
    """Train both classifiers with balanced minibatches.

    ``offline`` and ``model`` are anything with ``states``, ``actions`` and
    ``next_states`` arrays (an ``OfflineDataset`` or a ``ModelBuffer``).
    Returns the losses of the last step.
    """
    n_off, n_mod = len(offline), len(model)
    if n_off == 0 or n_mod == 0:
        raise DomainError("discriminator training needs both offline and model data")
    losses = (np.nan, np.nan)
    for _ in range(steps):
        i = rng.integers(0, n_off, batch_size)
        j = rng.integers(0, n_mod, batch_size)
        so, ao, s2o = offline.states[i], offline.actions[i], offline.next_states[i]
        sm, am, s2m = model.states[j], model.actions[j], model.next_states[j]
        l_sas = _ce_step(pair.sas, pair.opt_sas, pair._x(so, ao, s2o), pair._x(sm, am, s2m))
        l_sa = _ce_step(pair.sa, pair.opt_sa, pair._x(so, ao), pair._x(sm, am))
        losses = (l_sas, l_sa)
    pair.history.append(losses)
    return losses


def log_model_ratio(pair, s, a, s2):
    """Unclipped ``log T_model(s'|s,a) - log T_true(s'|s,a)`` from the two odds."""
    lp_sas = pair.log_probs(s, a, s2)
    lp_sa = pair.log_probs(s, a)
    return (lp_sas[:, MODEL] - lp_sas[:, OFFLINE]) - (lp_sa[:, MODEL] - lp_sa[:, OFFLINE])


def ratio_from_probs(p_model_sas, p_offline_sas, p_offline_sa, p_model_sa):
    """Clipped ``T_true / T_model`` from the four class probabilities."""
    raw = (p_offline_sas * p_model_sa) / (p_model_sas * p_offline_sa)
    return np.clip(raw, *RATIO_CLIP)


def dynamics_ratio(pair, s, a, s2):
    """``T_true / T_model`` clipped to ``[1e-45, 1]``."""
    return np.clip(np.exp(-log_model_ratio(pair, s, a, s2)), *RATIO_CLIP)


def g_from_ratios(ratios, mode="kl"):
    """Reduce clipped ratios of shape ``(..., m)`` over the last axis.

    ``kl`` averages ``-log ratio``; ``literal`` averages the ratio itself.
    Both are clipped to ``[1e-45, 10]``.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape[-1] < 1:
        raise DomainError("need at least one sampled next state")
    if mode == "kl":
        val = (-np.log(ratios)).mean(axis=-1)
    elif mode == "literal":
        val = ratios.mean(axis=-1)
    else:
        raise DomainError(f"unknown g mode {mode!r}")
    return np.clip(val, *G_CLIP)


def g_from_samples(pair, s, a, s2_samples, mode="kl"):
    """Model error for rows ``(s, a)`` given next states of shape ``(n, m, ds)``."""
    s2_samples = np.asarray(s2_samples)
    n, m = s2_samples.shape[:2]
    if m < 1:
        raise DomainError("m must be at least 1")
    s_rep = np.repeat(np.atleast_2d(s), m, axis=0)
    a_rep = np.repeat(np.atleast_2d(a), m, axis=0)
    r = dynamics_ratio(pair, s_rep, a_rep, s2_samples.reshape(n * m, -1)).reshape(n, m)
    return g_from_ratios(r, mode)


def g_estimate(pair, ensemble, s, a, m, rng, mode="kl"):
    """Per-row model error from ``m`` next states sampled from the ensemble."""
    if m < 1:
        raise DomainError("m must be at least 1")
    s = np.atleast_2d(s)
    a = np.atleast_2d(a)
    s2, _, _ = predict(ensemble, np.repeat(s, m, axis=0), np.repeat(a, m, axis=0), rng)
    return g_from_samples(pair, s, a, s2.reshape(len(s), m, -1), mode)


def normalize_weights(g):
    """``omega = g / sum(g)``; falls back to uniform when every g is at the floor."""
    g = np.asarray(g, dtype=np.float64)
    if len(g) == 0:
        raise DomainError("empty batch")
    z = float(g.sum())
    if z <= 0.0 or not np.isfinite(z) or np.all(g <= G_CLIP[0]):
        return SamplingWeights(g, np.full(len(g), 1.0 / len(g)), max(z, G_CLIP[0]))
    return SamplingWeights(g, g / z, z)


def sampling_weights(pair, ensemble, s, a, m, rng, mode="kl"):
    return normalize_weights(g_estimate(pair, ensemble, s, a, m, rng, mode))


def omega_entropy(omega):
    w = omega[omega > 0]
    return float(-(w * np.log(w)).sum())
