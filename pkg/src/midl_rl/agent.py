"""Soft actor-critic with an adaptively weighted conservative critic penalty.

The critic regresses a mixture of offline and model transitions onto the
usual soft Bellman target and adds ``lam`` times a penalty that pushes Q
down on model states (weighted by ``omega``) and up on offline pairs. The
log-sum-exp over actions at each model state is estimated by importance
sampling with 10 uniform and 10 policy actions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonFiniteError
from .nn import Adam, Mlp, gaussian_head, gaussian_head_backward, soft_update

_LOG_2PI = np.log(2.0 * np.pi)
_LOG_2 = np.log(2.0)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))


class Actor:
    """Tanh-squashed Gaussian policy over a box ``[low, high]^d``."""

    def __init__(self, state_dim, action_dim, hidden=256, layers=2, low=-1.0, high=1.0,
                 rng=None, dtype=np.float32):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.net = Mlp([state_dim] + [hidden] * layers + [2 * action_dim], "relu", "linear",
                       rng=rng, dtype=dtype)
        self.low = float(low)
        self.high = float(high)

    @property
    def center(self):
        return 0.5 * (self.high + self.low)

    @property
    def half(self):
        return 0.5 * (self.high - self.low)

    def squash(self, u):
        return self.center + self.half * np.tanh(u)

    def _log_prob_u(self, u, mean, log_std):
        z = (u - mean) * np.exp(-log_std)
        log_det = np.log(self.half) + 2.0 * (_LOG_2 - u - _softplus(-2.0 * u))
        return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI - log_det, axis=-1)

    def rsample(self, s, eps):
        """Reparameterized sample for noise ``eps``; returns a context for :meth:`backward`."""
        out, cache = self.net.forward(s)
        out = np.asarray(out, dtype=np.float64)
        mean, log_std, mask = gaussian_head(out)
        std = np.exp(log_std)
        u = mean + std * eps
        t = np.tanh(u)
        a = self.center + self.half * t
        logp = self._log_prob_u(u, mean, log_std)
        if not np.all(np.isfinite(logp)):
            raise NonFiniteError("non-finite policy log-probability")
        ctx = {"cache": cache, "mask": mask, "std": std, "eps": eps, "t": t}
        return a, logp, ctx

    def sample(self, s, rng):
        s = np.atleast_2d(s)
        eps = rng.standard_normal((len(s), self.action_dim))
        a, logp, _ = self.rsample(s, eps)
        return a, logp

    def log_prob(self, s, a):
        """Density of given in-box actions (used for importance weights)."""
        out = np.asarray(self.net(np.atleast_2d(s)), dtype=np.float64)
        mean, log_std, _ = gaussian_head(out)
        t = np.clip((np.asarray(a) - self.center) / self.half, -1.0 + 1e-6, 1.0 - 1e-6)
        return self._log_prob_u(np.arctanh(t), mean, log_std)

    def deterministic(self, s):
        out = np.asarray(self.net(np.atleast_2d(s)), dtype=np.float64)
        mean, _, _ = gaussian_head(out)
        return self.squash(mean)

    def backward(self, ctx, d_action, d_logp):
        """Parameter gradients of ``L`` given ``dL/da`` (n, d) and ``dL/dlogp`` (n,)."""
        t, std, eps = ctx["t"], ctx["std"], ctx["eps"]
        d_logp = np.asarray(d_logp)[:, None]
        g_u = d_action * self.half * (1.0 - t * t) + d_logp * 2.0 * t
        d_mean = g_u
        d_log_std = g_u * std * eps - d_logp
        grads, _ = self.net.backward(ctx["cache"], gaussian_head_backward(d_mean, d_log_std, ctx["mask"]),
                                       input_grad=False)
        return grads

    def entropy(self, s, rng, samples=1):
        """Monte-Carlo estimate of the mean policy entropy over states ``s``."""
        vals = [-self.sample(s, rng)[1] for _ in range(samples)]
        return float(np.mean(vals))


class CriticPair:
    """Two Q networks and their Polyak-averaged targets."""

    def __init__(self, state_dim, action_dim, hidden=256, layers=2, tau=5e-3, rng=None, dtype=np.float32):
        if not 0.0 < tau < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {tau}")
        rng = np.random.default_rng(rng)
        sizes = [state_dim + action_dim] + [hidden] * layers + [1]
        self.nets = [Mlp(sizes, "relu", "linear", rng=rng, dtype=dtype) for _ in range(2)]
        self.targets = [n.copy() for n in self.nets]
        self.tau = tau

    def _x(self, s, a):
        return np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=-1)

    def q(self, s, a):
        x = self._x(s, a)
        return np.stack([np.asarray(n(x), dtype=np.float64)[:, 0] for n in self.nets], axis=1)

    def q_target(self, s, a):
        x = self._x(s, a)
        return np.stack([np.asarray(n(x), dtype=np.float64)[:, 0] for n in self.targets], axis=1)

    def soft_update(self, tau=None):
        tau = self.tau if tau is None else tau
        for t, n in zip(self.targets, self.nets):
            soft_update(t, n, tau)


class EntropyCoef:
    def __init__(self, action_dim, init_alpha=0.03, lr=3e-4, target=None):
        if init_alpha <= 0:
            raise DomainError("initial alpha must be positive")
        self.log_alpha = np.array([np.log(init_alpha)])
        self.target = -float(action_dim) if target is None else float(target)
        self.opt = Adam([self.log_alpha], lr)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))


# -- losses --------------------------------------------------------------------

def bellman_target(critics, actor, alpha, r, s2, done, gamma, rng):
    """``r + gamma (1 - done) [min target Q(s', a') - alpha log pi(a'|s')]``."""
    a2, logp2 = actor.sample(s2, rng)
    q2 = critics.q_target(s2, a2).min(axis=1)
    y = np.asarray(r, dtype=np.float64) + gamma * (1.0 - np.asarray(done, dtype=np.float64)) * (q2 - alpha * logp2)
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("non-finite Bellman target")
    return y


def proposal_actions(actor, states, rng, n=10):
    """``n`` uniform plus ``n`` policy actions per state with their log densities.

    Densities are taken relative to the uniform distribution on the action
    box, so the uniform proposals have log density 0 and the log-sum-exp of
    a constant Q is that constant.

    Returns ``actions`` of shape ``(k, 2n, d)`` and ``log_q`` of shape ``(k, 2n)``.
    """
    if n < 1:
        raise DomainError("need at least one proposal action per source")
    k, d = len(states), actor.action_dim
    log_volume = d * np.log(actor.high - actor.low)
    uni = rng.uniform(actor.low, actor.high, (k, n, d))
    rep = np.repeat(states, n, axis=0)
    pa, plogp = actor.sample(rep, rng)
    actions = np.concatenate([uni, pa.reshape(k, n, d)], axis=1)
    log_q = np.concatenate([np.zeros((k, n)), plogp.reshape(k, n) + log_volume], axis=1)
    return actions, log_q


def _lse_weights(q, log_q):
    """Importance-sampled ``log E exp Q`` per row and its softmax weights."""
    z = q - log_q - np.log(q.shape[1])
    lse = _logsumexp(z, axis=1)
    return lse, np.exp(z - lse[:, None])


@dataclass
class CriticBatch:
    """Everything a critic step needs, fixed before the gradient is taken."""
    s_off: np.ndarray
    a_off: np.ndarray
    y_off: np.ndarray
    s_mod: np.ndarray
    a_mod: np.ndarray
    y_mod: np.ndarray
    omega: np.ndarray
    prop_actions: np.ndarray
    prop_log_q: np.ndarray


def conservative_penalty(critics, batch):
    """Per-critic ``sum_i omega_i LSE_i - mean_offline Q``, shape ``(2,)``."""
    return critic_loss(critics, batch, lam=1.0, f=0.5, grads=False)[2]["penalty"]


def critic_loss(critics, batch, lam, f, grads=True):
    """Mixed Bellman error plus ``lam`` times the weighted penalty, per critic.

    Returns ``(losses (2,), grads per critic or None, stats)``.
    """
    k, m, d = batch.prop_actions.shape
    n_off, n_mod = len(batch.s_off), len(batch.s_mod)
    s_prop = np.repeat(batch.s_mod, m, axis=0)
    a_prop = batch.prop_actions.reshape(k * m, d)
    x_off = critics._x(batch.s_off, batch.a_off)
    x_mod = critics._x(batch.s_mod, batch.a_mod) if n_mod else np.zeros((0, x_off.shape[1]))
    x_prop = critics._x(s_prop, a_prop) if k else np.zeros((0, x_off.shape[1]))
    x = np.concatenate([x_off, x_mod, x_prop])
    losses, all_grads = np.zeros(2), []
    stats = {"penalty": np.zeros(2), "q_off": np.zeros(2), "q_mod": np.zeros(2), "bellman": np.zeros(2)}
    for i, net in enumerate(critics.nets):
        out, cache = net.forward(x)
        q = np.asarray(out, dtype=np.float64)[:, 0]
        q_off, q_mod, q_prop = q[:n_off], q[n_off:n_off + n_mod], q[n_off + n_mod:]
        e_off = q_off - batch.y_off
        e_mod = q_mod - batch.y_mod
        mse_off = float(np.mean(e_off ** 2))
        mse_mod = float(np.mean(e_mod ** 2)) if n_mod else 0.0
        bell = 0.5 * (f * mse_mod + (1.0 - f) * mse_off)
        if k:
            lse, w = _lse_weights(q_prop.reshape(k, m), batch.prop_log_q)
            pen = float(batch.omega @ lse) - float(np.mean(q_off))
        else:
            lse, w, pen = np.zeros(0), np.zeros((0, m)), -float(np.mean(q_off))
        loss = bell + lam * pen
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite critic loss (critic {i})", critic=i)
        losses[i] = loss
        stats["penalty"][i] = pen
        stats["bellman"][i] = bell
        stats["q_off"][i] = float(np.mean(q_off))
        stats["q_mod"][i] = float(np.mean(q_mod)) if n_mod else 0.0
        if grads:
            g = np.zeros(len(q))
            g[:n_off] = (1.0 - f) * e_off / n_off - lam / n_off
            if n_mod:
                g[n_off:n_off + n_mod] = f * e_mod / n_mod
            if k:
                g[n_off + n_mod:] = (lam * batch.omega[:, None] * w).reshape(-1)
            pg, _ = net.backward(cache, g[:, None], input_grad=False)
            all_grads.append(pg)
    return losses, (all_grads if grads else None), stats


def actor_loss(critics, actor, alpha, states, eps, grads=True):
    """``mean[alpha log pi(a|s) - min_i Q_i(s, a)]`` with ``a`` reparameterized by ``eps``."""
    a, logp, ctx = actor.rsample(states, eps)
    x = critics._x(states, a)
    outs = [n.forward(x) for n in critics.nets]
    q = np.stack([np.asarray(o[0], dtype=np.float64)[:, 0] for o in outs], axis=1)
    pick = np.argmin(q, axis=1)
    q_min = q[np.arange(len(q)), pick]
    n = len(states)
    loss = float(np.mean(alpha * logp - q_min))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite actor loss")
    if not grads:
        return loss, None, logp
    d_action = np.zeros_like(a)
    for i, (net, (_, cache)) in enumerate(zip(critics.nets, outs)):
        sel = (pick == i).astype(np.float64)[:, None]
        _, gx = net.backward(cache, sel * (-1.0 / n))
        d_action += np.asarray(gx, dtype=np.float64)[:, -actor.action_dim:]
    g = actor.backward(ctx, d_action, np.full(n, alpha / n))
    return loss, g, logp


def alpha_update(coef, logp):
    """One step on ``-log_alpha * (log pi + target)``; returns the measured entropy."""
    entropy = -float(np.mean(logp))
    grad = -(-entropy + coef.target)
    coef.opt.step([np.array([grad])])
    return entropy


# -- training loop ---------------------------------------------------------------

@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 5e-3
    actor_lr: float = 1e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    init_alpha: float = 0.03
    hidden: int = 256
    layers: int = 2
    batch_size: int = 256
    f: float = 0.5
    lam: float = 5.0
    horizon: int = 5
    rollout_every: int = 250
    rollout_count: int = 1000
    buffer_capacity: int = 50_000
    disc_hidden: int = 256
    disc_lr: float = 3e-4
    disc_warmup: int = 2000
    disc_steps: int = 50
    m: int = 10
    g_mode: str = "kl"
    n_proposals: int = 10

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 <= self.f <= 1.0:
            raise DomainError(f"f must lie in [0, 1], got {self.f}")
        if self.lam < 0:
            raise DomainError("lambda must be non-negative")
        for name in ("horizon", "rollout_every", "rollout_count", "batch_size", "m", "n_proposals"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be at least 1")
        return self


def batch_split(batch_size, f):
    """Rows drawn from the model buffer and from the offline data."""
    n_mod = int(round(f * batch_size))
    return n_mod, batch_size - n_mod


class Trainer:
    """Owns every mutable component of one agent run.

    ``train_iteration`` performs, in order: model rollouts (every
    ``rollout_every`` iterations), a discriminator refresh and model-error
    recomputation, one actor step, one critic step, one entropy step and a
    soft target update.
    """

    def __init__(self, ensemble, dataset, config=None, seed=0, dtype=np.float32):
        from .ratio import DiscriminatorPair
        from .world_model import ModelBuffer

        self.config = (config or AgentConfig()).validate()
        c = self.config
        self.ensemble = ensemble
        self.dataset = dataset
        self.rng = np.random.default_rng(seed)
        ds, da = dataset.state_dim, dataset.action_dim
        seeds = self.rng.integers(2 ** 63, size=3)
        self.actor = Actor(ds, da, c.hidden, c.layers, rng=np.random.default_rng(seeds[0]), dtype=dtype)
        self.critics = CriticPair(ds, da, c.hidden, c.layers, c.tau, rng=seeds[1], dtype=dtype)
        self.alpha = EntropyCoef(da, c.init_alpha, c.alpha_lr)
        self.actor_opt = Adam(self.actor.net.params, c.actor_lr)
        self.critic_opts = [Adam(n.params, c.critic_lr) for n in self.critics.nets]
        self.discriminators = DiscriminatorPair(ds, da, c.disc_hidden, c.disc_lr, rng=seeds[2], offline=dataset)
        self.buffer = ModelBuffer(ds, da, c.buffer_capacity, horizon=c.horizon, m_samples=c.m)
        self.iteration = 0
        self.last_entropy = float("nan")

    def _policy(self, s, rng):
        return self.actor.sample(s, rng)[0]

    def collect(self):
        from .ratio import g_from_samples, train_discriminators
        from .world_model import rollout

        c = self.config
        first = len(self.buffer) == 0
        rollout(self.ensemble, self._policy, self.dataset, c.horizon, c.rollout_count, self.rng, self.buffer)
        steps = c.disc_warmup + c.disc_steps if first else c.disc_steps
        train_discriminators(self.discriminators, self.dataset, self.buffer, steps, self.rng)
        k = len(self.buffer)
        self.buffer.g[:k] = g_from_samples(self.discriminators, self.buffer.states[:k], self.buffer.actions[:k],
                                           self.buffer.next_state_samples[:k], c.g_mode)

    def sample_batch(self):
        from .ratio import normalize_weights

        c = self.config
        n_mod, n_off = batch_split(c.batch_size, c.f)
        i = self.rng.integers(0, len(self.dataset), n_off)
        j = self.buffer.sample(n_mod, self.rng) if n_mod else np.zeros(0, dtype=np.int64)
        weights = normalize_weights(self.buffer.g[j]) if n_mod else None
        return i, j, weights

    def train_iteration(self):
        from .ratio import omega_entropy

        c = self.config
        if self.iteration % c.rollout_every == 0:
            self.collect()
        i, j, weights = self.sample_batch()
        d, b = self.dataset, self.buffer
        s_off, s_mod = d.states[i], b.states[j]
        states = np.concatenate([s_off, s_mod])
        alpha = self.alpha.alpha

        eps = self.rng.standard_normal((len(states), self.actor.action_dim))
        a_loss, a_grads, logp = actor_loss(self.critics, self.actor, alpha, states, eps)
        self.actor_opt.step(a_grads)

        y_off = bellman_target(self.critics, self.actor, alpha, d.rewards[i], d.next_states[i],
                               d.terminals[i], c.gamma, self.rng)
        if len(j):
            y_mod = bellman_target(self.critics, self.actor, alpha, b.rewards[j], b.next_states[j],
                                   b.terminals[j], c.gamma, self.rng)
            prop, log_q = proposal_actions(self.actor, s_mod, self.rng, c.n_proposals)
            omega = weights.omega
        else:
            y_mod = np.zeros(0)
            prop = np.zeros((0, 2 * c.n_proposals, self.actor.action_dim))
            log_q = np.zeros((0, 2 * c.n_proposals))
            omega = np.zeros(0)
        batch = CriticBatch(s_off, d.actions[i], y_off, s_mod, b.actions[j], y_mod, omega, prop, log_q)
        c_losses, c_grads, stats = critic_loss(self.critics, batch, c.lam, c.f)
        for opt, g in zip(self.critic_opts, c_grads):
            opt.step(g)

        self.last_entropy = alpha_update(self.alpha, logp)
        self.critics.soft_update()

        record = {
            "iter": self.iteration,
            "critic_loss": float(c_losses.mean()),
            "actor_loss": a_loss,
            "alpha": self.alpha.alpha,
            "mean_q_offline": float(stats["q_off"].mean()),
            "mean_q_model": float(stats["q_mod"].mean()),
            "penalty": float(stats["penalty"].mean()),
            "omega_entropy": omega_entropy(omega) if len(omega) else 0.0,
        }
        bad = [k for k, v in record.items() if not np.isfinite(v)]
        if bad:
            raise NonFiniteError(f"non-finite metrics at iteration {self.iteration}: {', '.join(bad)}",
                                 iteration=self.iteration)
        self.iteration += 1
        return record

    def q_curve(self, state=0.0, n=401):
        """Mean of both critics at ``state`` over an ``n``-point action grid."""
        grid = np.linspace(self.actor.low, self.actor.high, n)
        s = np.full((n, self.actor.state_dim), state)
        q = self.critics.q(s, np.repeat(grid[:, None], self.actor.action_dim, axis=1)).mean(axis=1)
        return grid, q

    def state_dict(self):
        nets = {"actor": self.actor.net, "critic0": self.critics.nets[0], "critic1": self.critics.nets[1],
                "target0": self.critics.targets[0], "target1": self.critics.targets[1],
                "disc_sas": self.discriminators.sas, "disc_sa": self.discriminators.sa}
        meta = {"iteration": self.iteration, "log_alpha": float(self.alpha.log_alpha[0]),
                "state_dim": self.actor.state_dim, "action_dim": self.actor.action_dim,
                "low": self.actor.low, "high": self.actor.high}
        return nets, meta
