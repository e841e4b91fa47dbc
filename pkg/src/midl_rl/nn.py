"""Small feedforward networks with hand-written backprop, Adam, and
diagonal-Gaussian output heads.

Everything is plain numpy. Parameters live in a flat list
``[W0, b0, W1, b1, ...]`` with ``W`` shaped ``(fan_in, fan_out)`` so that a
batch ``x`` of shape ``(n, fan_in)`` maps to ``x @ W + b``.
"""

import json

import numpy as np

from .errors import CheckpointError, DomainError, NonFiniteError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
CHECKPOINT_VERSION = 1

_LOG_2PI = np.log(2.0 * np.pi)


class Mlp:
    """Fully connected network.

    ``hidden`` is the activation for every hidden layer (``"relu"`` or
    ``"tanh"``); ``output`` is ``"linear"`` or ``"tanh"``. A tanh output is
    multiplied by ``output_scale`` (the discriminators use 2).
    """

    def __init__(self, sizes, hidden="relu", output="linear", output_scale=1.0,
                 rng=None, dtype=np.float64):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise DomainError(f"bad layer sizes {sizes}")
        if hidden not in ("relu", "tanh") or output not in ("linear", "tanh"):
            raise DomainError(f"unknown activation {hidden!r}/{output!r}")
        self.sizes = sizes
        self.hidden = hidden
        self.output = output
        self.output_scale = float(output_scale)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def set_params(self, params):
        if len(params) != len(self.params):
            raise DomainError("parameter count mismatch")
        for dst, src in zip(self.params, params):
            if dst.shape != np.shape(src):
                raise DomainError(f"parameter shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def forward(self, x):
        """Return ``(output, cache)``. ``cache`` feeds :meth:`backward`."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.in_dim:
            raise DomainError(f"input dimension {x.shape[-1]} != {self.in_dim}")
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        # acts[i] is the input of layer i; hidden activations are applied in place
        acts = [h]
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W
            z += b
            if i < self.n_layers - 1:
                h = np.maximum(z, 0.0, out=z) if self.hidden == "relu" else np.tanh(z, out=z)
                acts.append(h)
            elif self.output == "tanh":
                h = np.tanh(z, out=z)
                h *= self.output_scale
            else:
                h = z
        out = h[0] if squeeze else h
        return out, {"acts": acts, "out": h, "squeeze": squeeze}

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, input_grad=True):
        """Backpropagate ``grad_out`` (dL/d output).

        Returns ``(param_grads, grad_input)``; ``grad_input`` is ``None`` when
        ``input_grad`` is false.
        """
        if cache is None or "acts" not in cache:
            raise DomainError("backward called without a forward cache")
        g = np.asarray(grad_out, dtype=self.dtype)
        if cache["squeeze"]:
            g = g[None, :]
        acts = cache["acts"]
        grads = [None] * len(self.params)
        if self.output == "tanh":
            t = cache["out"] / self.output_scale
            g = g * (self.output_scale * (1.0 - t * t))
        for i in reversed(range(self.n_layers)):
            h = acts[i]
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i == 0 and not input_grad:
                return grads, None
            W = self.params[2 * i]
            # a single-column weight makes this an outer product, cheaper by broadcasting
            g = g * W[:, 0] if W.shape[1] == 1 else g @ W.T
            if i > 0:
                if self.hidden == "relu":
                    g *= h > 0
                else:
                    g *= 1.0 - h * h
        return grads, (g[0] if cache["squeeze"] else g)

    def describe(self):
        return {"sizes": list(self.sizes), "hidden": self.hidden, "output": self.output,
                "output_scale": self.output_scale, "dtype": self.dtype.name}


def soft_update(target, source, tau):
    """Polyak averaging ``target <- tau * source + (1 - tau) * target``."""
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau must lie in [0, 1], got {tau}")
    for t, s in zip(target.params, source.params):
        t *= 1.0 - tau
        t += tau * s


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise DomainError("gradient count does not match parameters")
        for p, g in zip(self.params, grads):
            if np.shape(g) != p.shape:
                raise DomainError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient passed to Adam")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype, copy=False)


# -- Gaussian heads -----------------------------------------------------------

def gaussian_head(out, clamp=(LOG_STD_MIN, LOG_STD_MAX)):
    """Split a raw output of width ``2d`` into ``(mean, log_std, mask)``.

    ``log_std`` is hard-clipped to ``clamp``; ``mask`` is 1 where the clip is
    inactive and is needed to backpropagate through the head.
    """
    d = out.shape[-1] // 2
    mean = out[..., :d]
    raw = out[..., d:]
    log_std = np.clip(raw, clamp[0], clamp[1])
    mask = (raw >= clamp[0]) & (raw <= clamp[1])
    return mean, log_std, mask


def gaussian_head_backward(d_mean, d_log_std, mask):
    return np.concatenate([d_mean, d_log_std * mask], axis=-1)


def gaussian_nll(mean, log_std, target):
    """Negative log density of ``target`` under N(mean, exp(log_std)^2),
    summed over the last axis. Returns one value per row."""
    mean, log_std, target = np.broadcast_arrays(mean, log_std, target)
    if not np.all(np.isfinite(log_std)):
        raise NonFiniteError("non-finite log standard deviation")
    z = (target - mean) * np.exp(-log_std)
    return np.sum(0.5 * z * z + log_std + 0.5 * _LOG_2PI, axis=-1)


def gaussian_nll_grad(mean, log_std, target):
    """Gradients of :func:`gaussian_nll` (per row) w.r.t. mean and log_std."""
    inv_var = np.exp(-2.0 * log_std)
    diff = target - mean
    d_mean = -diff * inv_var
    d_log_std = 1.0 - diff * diff * inv_var
    return d_mean, d_log_std


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, nets, meta=None, arrays=None):
    """Write networks plus JSON metadata and extra arrays to one ``.npz`` file."""
    payload = {}
    header = {"version": CHECKPOINT_VERSION, "nets": {}, "meta": meta or {}}
    for name, net in nets.items():
        header["nets"][name] = net.describe()
        for i, p in enumerate(net.params):
            payload[f"net:{name}:{i}"] = p
    for name, arr in (arrays or {}).items():
        payload[f"arr:{name}"] = np.asarray(arr)
    payload["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(nets, meta, arrays)``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["__header__"]))
            files = {k: data[k] for k in data.files}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    nets = {}
    for name, desc in header["nets"].items():
        net = Mlp(desc["sizes"], desc["hidden"], desc["output"], desc["output_scale"],
                  rng=0, dtype=np.dtype(desc["dtype"]))
        net.set_params([files[f"net:{name}:{i}"] for i in range(len(net.params))])
        nets[name] = net
    arrays = {k[4:]: v for k, v in files.items() if k.startswith("arr:")}
    return nets, header["meta"], arrays


def gaussian_kl(mean_p, std_p, mean_q, std_q):
    """KL(N(mean_p, std_p^2) || N(mean_q, std_q^2)), elementwise."""
    return (np.log(std_q / std_p)
            + (std_p ** 2 + (mean_p - mean_q) ** 2) / (2.0 * std_q ** 2) - 0.5)
