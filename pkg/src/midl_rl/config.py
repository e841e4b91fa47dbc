"""Run configuration: a sectioned key-value text file with validated fields.

Every field has a type, a default and an admissible range. ``dumps`` writes
sections and keys in schema order with canonical number formatting, so
``dumps(loads(dumps(c))) == dumps(c)`` byte for byte.
"""

import configparser
import hashlib
import math

from .errors import ConfigError
from .ratio import G_CLIP, RATIO_CLIP


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit_open(x):
    return 0.0 < x < 1.0


def _unit_closed(x):
    return 0.0 <= x <= 1.0


def _gamma(x):
    return 0.0 <= x < 1.0


def _one_of(*choices):
    def check(x):
        return x in choices
    check.choices = choices
    return check


def _equals(v):
    def check(x):
        return x == v
    check.value = v
    return check


# section -> [(key, type, default, check, meaning)]
SCHEMA = {
    "data": [
        ("dataset_size", int, 1000, _pos, "offline transitions"),
        ("behavior_mean", float, 0.0, math.isfinite, "behavior policy mean action"),
        ("behavior_std", float, 0.35, _pos, "behavior policy action std"),
    ],
    "model": [
        ("n_models", int, 7, _pos, "ensemble size N"),
        ("n_elites", int, 5, _pos, "elites M"),
        ("hidden", int, 200, _pos, "hidden units per layer"),
        ("layers", int, 4, _pos, "hidden layers"),
        ("lr", float, 1e-4, _pos, "model learning rate"),
        ("batch_size", int, 256, _pos, "model minibatch"),
        ("epochs", int, 400, _pos, "passes over the training split"),
        ("val_frac", float, 0.1, lambda x: 0.0 <= x < 1.0, "held-out fraction"),
    ],
    "agent": [
        ("iterations", int, 3000, _pos, "outer iterations"),
        ("hidden", int, 256, _pos, "actor and critic hidden units"),
        ("layers", int, 2, _pos, "actor and critic hidden layers"),
        ("batch_size", int, 256, _pos, "agent minibatch"),
        ("actor_lr", float, 1e-4, _pos, "policy learning rate"),
        ("critic_lr", float, 3e-4, _pos, "critic learning rate"),
        ("alpha_lr", float, 3e-4, _pos, "entropy coefficient learning rate"),
        ("init_alpha", float, 0.03, _pos, "initial entropy coefficient"),
        ("gamma", float, 0.99, _gamma, "discount"),
        ("tau", float, 5e-3, _unit_open, "soft update rate"),
        ("f", float, 0.5, _unit_closed, "model data ratio"),
        ("lam", float, 5.0, _nonneg, "penalty coefficient lambda"),
        ("horizon", int, 5, _pos, "rollout horizon H"),
        ("rollout_every", int, 250, _pos, "iterations between rollouts"),
        ("rollout_count", int, 1000, _pos, "trajectories per rollout"),
        ("buffer_capacity", int, 50_000, _pos, "model buffer size"),
        ("n_proposals", int, 10, _pos, "actions per proposal source"),
    ],
    "discriminator": [
        ("hidden", int, 256, _pos, "hidden units"),
        ("layers", int, 1, _equals(1), "hidden layers"),
        ("lr", float, 3e-4, _pos, "learning rate"),
        ("warmup", int, 2000, _nonneg, "extra steps after the first rollout"),
        ("steps", int, 50, _nonneg, "steps per refresh"),
        ("m", int, 10, _pos, "next states per error estimate"),
        ("g_mode", str, "kl", _one_of("kl", "literal"), "error reduction"),
        ("kl_clip_low", float, G_CLIP[0], _equals(G_CLIP[0]), "lower clip of g"),
        ("kl_clip_high", float, G_CLIP[1], _equals(G_CLIP[1]), "upper clip of g"),
        ("ratio_clip_low", float, RATIO_CLIP[0], _equals(RATIO_CLIP[0]), "lower ratio clip"),
        ("ratio_clip_high", float, RATIO_CLIP[1], _equals(RATIO_CLIP[1]), "upper ratio clip"),
    ],
    "run": [
        ("seed", int, 0, _nonneg, "master seed"),
        ("checkpoint_every", int, 500, _pos, "iterations between checkpoints"),
        ("eval_episodes", int, 100, _pos, "evaluation episodes"),
        ("eval_horizon", int, 1, _pos, "steps per evaluation episode"),
    ],
}


def _fmt(value):
    if isinstance(value, bool):
        raise ConfigError("boolean fields are not supported")
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Section:
    def __init__(self, name, values):
        object.__setattr__(self, "_name", name)
        object.__setattr__(self, "_values", values)

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(f"[{self._name}] has no field {key!r}") from None

    def __setattr__(self, key, value):
        raise AttributeError("use RunConfig.replace to change fields")

    def as_dict(self):
        return dict(self._values)


class RunConfig:
    """Validated run configuration; sections are attributes (``cfg.agent.lam``)."""

    def __init__(self, values=None):
        values = values or {}
        unknown = set(values) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        self._values = {}
        for section, fields in SCHEMA.items():
            given = dict(values.get(section, {}))
            known = {f[0] for f in fields}
            extra = set(given) - known
            if extra:
                raise ConfigError(f"unknown field(s) in [{section}]: {', '.join(sorted(extra))}")
            out = {}
            for key, typ, default, check, _ in fields:
                out[key] = _coerce(section, key, typ, given.get(key, default))
                if not check(out[key]):
                    raise ConfigError(f"[{section}] {key} = {out[key]!r} is out of range",
                                      section=section, field=key)
            self._values[section] = out
        if self.model.n_elites > self.model.n_models:
            raise ConfigError("[model] n_elites exceeds n_models", section="model", field="n_elites")

    def __getattr__(self, name):
        if name.startswith("_") or name not in SCHEMA:
            raise AttributeError(name)
        return Section(name, self._values[name])

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def replace(self, section, **fields):
        values = {k: dict(v) for k, v in self._values.items()}
        if section not in values:
            raise ConfigError(f"unknown section {section!r}")
        values[section].update(fields)
        return RunConfig(values)

    def with_seed(self, seed):
        return self.replace("run", seed=seed)

    def dumps(self):
        lines = []
        for section, fields in SCHEMA.items():
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
            for key, *_ in fields:
                lines.append(f"{key} = {_fmt(self._values[section][key])}")
        return "\n".join(lines) + "\n"

    def digest(self, include_seed=False):
        """Short hash of the configuration text, optionally ignoring the seed."""
        cfg = self if include_seed else self.with_seed(0)
        return hashlib.sha256(cfg.dumps().encode()).hexdigest()[:12]

    # -- component configs --

    def toy_spec(self):
        from .toy import ToyMdpSpec
        d = self.data
        return ToyMdpSpec(behavior_mean=d.behavior_mean, behavior_std=d.behavior_std,
                          dataset_size=d.dataset_size)

    def model_config(self):
        from .world_model import ModelConfig
        return ModelConfig(**self.model.as_dict())

    def agent_config(self):
        from .agent import AgentConfig
        a, d = self.agent.as_dict(), self.discriminator
        a.pop("iterations")
        return AgentConfig(**a, disc_hidden=d.hidden, disc_lr=d.lr, disc_warmup=d.warmup,
                           disc_steps=d.steps, m=d.m, g_mode=d.g_mode)


def _coerce(section, key, typ, raw):
    try:
        if typ is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            if isinstance(raw, str):
                raw = raw.replace("_", "")
            return int(raw)
        if typ is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ.__name__}",
                          section=section, field=key) from None


def loads(text):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}") from None
    return RunConfig({s: dict(parser.items(s)) for s in parser.sections()})


def load(path):
    try:
        with open(path) as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", path=str(path)) from None


def dump(config, path):
    with open(path, "w") as fh:
        fh.write(config.dumps())


def describe_schema():
    """``(section, key, default, meaning)`` rows for documentation."""
    return [(s, k, _fmt(d), m) for s, fields in SCHEMA.items() for k, _, d, _, m in fields]
