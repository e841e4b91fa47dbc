"""Probabilistic ensemble dynamics model, elite selection and short rollouts."""

from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, DomainError, NonFiniteError
from .nn import (Adam, Mlp, gaussian_head, gaussian_head_backward, gaussian_kl,
                 gaussian_nll, gaussian_nll_grad, load_checkpoint, save_checkpoint)
from .toy import OfflineDataset, toy_mean_sigma


@dataclass
class ModelConfig:
    n_models: int = 7
    n_elites: int = 5
    hidden: int = 200
    layers: int = 4
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 400
    val_frac: float = 0.1


class Normalizer:
    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), 1e-6)

    @classmethod
    def fit(cls, x):
        return cls(x.mean(axis=0), x.std(axis=0))

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


class EnsembleMember:
    """One Gaussian network over ``(s' - s, r)`` given normalized ``(s, a)``."""

    def __init__(self, net):
        self.net = net
        self.train_nll = []
        self.val_nll = []

    def dist(self, x):
        mean, log_std, _ = gaussian_head(self.net(x))
        return mean, log_std


class GaussianEnsemble:
    def __init__(self, members, normalizer, state_dim, action_dim, elites=None):
        self.members = members
        self.normalizer = normalizer
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.elites = None if elites is None else [int(i) for i in elites]

    def _inputs(self, s, a):
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=-1)
        if x.shape[-1] != self.state_dim + self.action_dim:
            raise DomainError("state/action dimension mismatch with ensemble")
        return self.normalizer.normalize(x)

    def member_dists(self, s, a, members=None):
        """Means and stds over ``(s', r)`` for each member, shape ``(k, n, ds+1)``.

        The state part is returned as an absolute next state.
        """
        x = self._inputs(s, a)
        idx = range(len(self.members)) if members is None else members
        means, stds = [], []
        s = np.atleast_2d(s)
        for i in idx:
            m, ls = self.members[i].dist(x)
            m = np.array(m, dtype=np.float64)
            m[:, :self.state_dim] += s
            means.append(m)
            stds.append(np.exp(np.asarray(ls, dtype=np.float64)))
        return np.stack(means), np.stack(stds)

    def elite_dists(self, s, a):
        self._require_elites()
        return self.member_dists(s, a, self.elites)

    def _require_elites(self):
        if not self.elites:
            raise DomainError("ensemble elites have not been selected")

    def next_state_moments(self, s, a):
        """Moment-matched Gaussian of the elite mixture over the next state."""
        means, stds = self.elite_dists(s, a)
        ms = means[..., :self.state_dim]
        ss = stds[..., :self.state_dim]
        mean = ms.mean(axis=0)
        var = (ss ** 2).mean(axis=0) + ms.var(axis=0)
        return mean, np.sqrt(var)


def dataset_arrays(dataset):
    x = np.concatenate([dataset.states, dataset.actions], axis=1)
    y = np.concatenate([dataset.next_states - dataset.states, dataset.rewards[:, None]], axis=1)
    return x, y


def _member_nll(member, x, y):
    mean, log_std = member.dist(x)
    return gaussian_nll(mean, log_std, y)


def model_loss(net, x, y, grads=True):
    """Mean Gaussian NLL of targets ``y`` and, optionally, its parameter gradients."""
    out, cache = net.forward(x)
    mean, log_std, mask = gaussian_head(out)
    loss = float(gaussian_nll(mean, log_std, y).mean())
    if not grads:
        return loss, None
    dm, dl = gaussian_nll_grad(mean, log_std, y)
    g, _ = net.backward(cache, gaussian_head_backward(dm, dl, mask) / len(x), input_grad=False)
    return loss, g


def train_ensemble(dataset, config=None, rng=None, dtype=np.float64):
    """Fit ``n_models`` Gaussian networks by minibatch maximum likelihood.

    A fraction ``val_frac`` of the data is held out for validation; every
    member trains on its own bootstrap resample of the rest. Elites are the
    ``n_elites`` members with the lowest final validation NLL.
    """
    config = config or ModelConfig()
    if len(dataset) == 0:
        raise DomainError("cannot train a model on an empty dataset")
    if config.n_elites > config.n_models:
        raise DomainError("more elites than models")
    rng = np.random.default_rng(rng)
    x_all, y_all = dataset_arrays(dataset)
    n = len(x_all)
    perm = rng.permutation(n)
    n_val = int(round(config.val_frac * n)) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(val_idx) == 0:
        val_idx = train_idx
    normalizer = Normalizer.fit(x_all[train_idx])
    xn = normalizer.normalize(x_all)
    x_tr, y_tr = xn[train_idx], y_all[train_idx]
    x_val, y_val = xn[val_idx], y_all[val_idx]
    ds, da = dataset.state_dim, dataset.action_dim
    sizes = [ds + da] + [config.hidden] * config.layers + [2 * (ds + 1)]
    members = []
    for k in range(config.n_models):
        mrng = np.random.default_rng(rng.integers(2 ** 63))
        member = EnsembleMember(Mlp(sizes, "relu", "linear", rng=mrng, dtype=dtype))
        boot = mrng.integers(0, len(x_tr), len(x_tr))
        xb, yb = x_tr[boot], y_tr[boot]
        opt = Adam(member.net.params, config.lr)
        for epoch in range(config.epochs):
            order = mrng.permutation(len(xb))
            for start in range(0, len(xb), config.batch_size):
                j = order[start:start + config.batch_size]
                loss, grads = model_loss(member.net, xb[j], yb[j])
                if not np.isfinite(loss):
                    raise NonFiniteError(f"model {k} epoch {epoch}: non-finite NLL", member=k, epoch=epoch)
                opt.step(grads)
            member.train_nll.append(float(_member_nll(member, xb, yb).mean()))
            member.val_nll.append(float(_member_nll(member, x_val, y_val).mean()))
        members.append(member)
    ens = GaussianEnsemble(members, normalizer, ds, da)
    ens.elites = rank_elites([m.val_nll[-1] for m in members], config.n_elites)
    ens.validation = OfflineDataset(dataset.states[val_idx], dataset.actions[val_idx],
                                    dataset.rewards[val_idx], dataset.next_states[val_idx],
                                    dataset.terminals[val_idx])
    return ens


def rank_elites(nlls, m):
    """Indices of the ``m`` smallest NLLs; ties go to the lower index."""
    nlls = np.asarray(nlls, dtype=np.float64)
    if m > len(nlls):
        raise DomainError(f"cannot choose {m} elites from {len(nlls)} members")
    return sorted(int(i) for i in np.argsort(nlls, kind="stable")[:m])


def validation_nll(ensemble, dataset):
    x, y = dataset_arrays(dataset)
    xn = ensemble.normalizer.normalize(x)
    return [float(_member_nll(m, xn, y).mean()) for m in ensemble.members]


def select_elites(ensemble, dataset, m):
    ensemble.elites = rank_elites(validation_nll(ensemble, dataset), m)
    return ensemble.elites


def predict(ensemble, s, a, rng):
    """Sample ``(s', r)`` from a uniformly chosen elite per row.

    Returns ``(next_state, reward, info)`` where ``info`` holds the per-elite
    means and stds for diagnostics.
    """
    means, stds = ensemble.elite_dists(s, a)
    n = means.shape[1]
    pick = rng.integers(0, len(ensemble.elites), n)
    rows = np.arange(n)
    mu, sd = means[pick, rows], stds[pick, rows]
    sample = mu + sd * rng.standard_normal(mu.shape)
    ds = ensemble.state_dim
    return sample[:, :ds], sample[:, ds], {"means": means, "stds": stds, "elite": pick}


class ModelBuffer:
    """Fixed-capacity FIFO store of model transitions with rollout-step tags.

    ``g`` holds the latest model-error estimate of each stored transition.
    When ``m_samples > 0`` every transition also keeps that many extra next
    states drawn from the model at the same ``(s, a)``, so error estimates can
    be refreshed without querying the ensemble again.
    """

    def __init__(self, state_dim, action_dim, capacity=50_000, horizon=None, m_samples=0):
        if capacity < 1:
            raise DomainError("buffer capacity must be positive")
        self.capacity = capacity
        self.horizon = horizon
        self.m_samples = m_samples
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.steps = np.zeros(capacity, dtype=np.int64)
        self.g = np.ones(capacity)
        self.next_state_samples = np.zeros((capacity, m_samples, state_dim))
        self.size = 0
        self.ptr = 0
        self.truncations = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, step, terminal=None, samples=None):
        n = len(r)
        if self.horizon is not None and np.any(np.asarray(step) > self.horizon):
            raise DomainError("rollout step tag exceeds the horizon")
        idx = (self.ptr + np.arange(n)) % self.capacity
        self.states[idx] = s
        self.actions[idx] = a
        self.rewards[idx] = r
        self.next_states[idx] = s2
        self.terminals[idx] = False if terminal is None else terminal
        self.steps[idx] = step
        self.g[idx] = 1.0
        if self.m_samples:
            if samples is None:
                raise DomainError("buffer expects next-state samples for every transition")
            self.next_state_samples[idx] = samples
        self.ptr = (self.ptr + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def sample(self, n, rng):
        if self.size == 0:
            raise DomainError("model buffer is empty")
        return rng.integers(0, self.size, n)

    def as_dataset(self):
        k = self.size
        return OfflineDataset(self.states[:k], self.actions[:k], self.rewards[:k],
                              self.next_states[:k], self.terminals[:k])


def rollout(ensemble, policy, dataset, horizon, count, rng, buffer=None):
    """Simulate ``count`` trajectories of ``horizon`` steps in the model.

    Start states are drawn uniformly from ``dataset.states``; ``policy`` maps
    ``(states, rng)`` to actions. Trajectories whose prediction becomes
    non-finite are dropped from that step on and counted as truncated.
    """
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    if buffer is None:
        buffer = ModelBuffer(ensemble.state_dim, ensemble.action_dim,
                             capacity=max(count * horizon, 1), horizon=horizon)
    m = buffer.m_samples
    s = dataset.states[rng.integers(0, len(dataset), count)]
    for step in range(1, horizon + 1):
        if len(s) == 0:
            break
        a = policy(s, rng)
        s2, r, _ = predict(ensemble, s, a, rng)
        extra = None
        if m:
            extra, _, _ = predict(ensemble, np.repeat(s, m, axis=0), np.repeat(a, m, axis=0), rng)
            extra = extra.reshape(len(s), m, -1)
        ok = np.all(np.isfinite(s2), axis=1) & np.isfinite(r)
        if extra is not None:
            ok &= np.all(np.isfinite(extra), axis=(1, 2))
            extra = extra[ok]
        buffer.truncations += int((~ok).sum())
        s, a, s2, r = s[ok], a[ok], s2[ok], r[ok]
        buffer.add(s, a, r, s2, step, samples=extra)
        s = s2
    return buffer


# -- toy-task diagnostics -------------------------------------------------------

def _toy_elite_gaussians(ensemble, s, a):
    a = np.ravel(a)
    t_mean, t_std = toy_mean_sigma(np.clip(a, -1.0, 1.0))
    means, stds = ensemble.elite_dists(np.atleast_2d(s), a[:, None])
    return means[..., 0], stds[..., 0], t_mean, t_std


def toy_kl_model_to_truth(ensemble, s, a):
    """Elite-averaged analytic KL(elite || truth) of the next-state Gaussian."""
    mu, sd, t_mean, t_std = _toy_elite_gaussians(ensemble, s, a)
    return gaussian_kl(mu, sd, t_mean, t_std).mean(axis=0)


def toy_kl_truth_to_model(ensemble, s, a):
    """Elite-averaged analytic KL(truth || elite); the expected excess NLL."""
    mu, sd, t_mean, t_std = _toy_elite_gaussians(ensemble, s, a)
    return gaussian_kl(t_mean, t_std, mu, sd).mean(axis=0)


def toy_excess_nll(ensemble, s, a, rng, samples=16):
    """Mean elite NLL of true next states minus the true conditional entropy.

    The excess is an estimate of KL(truth || member) averaged over elites and
    is nonnegative in expectation, unlike the raw NLL.
    """
    a = np.ravel(a)
    t_mean, t_std = toy_mean_sigma(a)
    means, stds = ensemble.elite_dists(s, a[:, None])
    mu, sd = means[..., 0], stds[..., 0]
    total = np.zeros(len(a))
    for _ in range(samples):
        y = t_mean + t_std * rng.standard_normal(len(a))
        total += gaussian_nll(mu[..., None], np.log(sd)[..., None], y[None, :, None]).mean(axis=0)
    entropy = 0.5 * np.log(2.0 * np.pi * np.e * t_std ** 2)
    return total / samples - entropy


# -- persistence ----------------------------------------------------------------

def save_ensemble(ensemble, path):
    nets = {f"member{k}": m.net for k, m in enumerate(ensemble.members)}
    meta = {"kind": "ensemble", "state_dim": ensemble.state_dim, "action_dim": ensemble.action_dim,
            "elites": ensemble.elites,
            "val_nll": [m.val_nll for m in ensemble.members],
            "train_nll": [m.train_nll for m in ensemble.members]}
    arrays = {"norm_mean": ensemble.normalizer.mean, "norm_std": ensemble.normalizer.std}
    save_checkpoint(path, nets, meta, arrays)


def load_ensemble(path):
    nets, meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "ensemble":
        raise CheckpointError(f"{path} does not hold a dynamics ensemble")
    members = []
    for k in range(len(nets)):
        member = EnsembleMember(nets[f"member{k}"])
        member.val_nll = list(meta["val_nll"][k])
        member.train_nll = list(meta["train_nll"][k])
        members.append(member)
    norm = Normalizer(arrays["norm_mean"], arrays["norm_std"])
    return GaussianEnsemble(members, norm, meta["state_dim"], meta["action_dim"], meta["elites"])
