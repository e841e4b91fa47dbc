"""End-to-end orchestration: data, model, agent, evaluation and diagnostics.

Every artifact of a run lives in one directory named by the configuration
hash and the seed, under ``$MIDL_RL_RUN_DIR`` (or ``--out``, or ``./runs``).
"""

import csv
import json
import os
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .agent import Actor, CriticPair, Trainer
from .errors import CheckpointError, DomainError, MidlError, NonFiniteError, StageError
from .nn import load_checkpoint, save_checkpoint
from .svg import Chart
from .toy import generate_toy_dataset, load_dataset, save_dataset, toy_mean_sigma
from .world_model import load_ensemble, save_ensemble, toy_kl_model_to_truth, train_ensemble

RUN_DIR_ENV = "MIDL_RL_RUN_DIR"
DEFAULT_ROOT = "runs"
STAGES = ("gen-data", "train-model", "train-agent", "evaluate", "plot")
GRID_POINTS = 401
DIAGNOSTIC_BATCH = 1000

# file name -> column names; the contract for the diagnostic CSVs
CSV_SCHEMAS = {
    "dataset.csv": ("s", "a", "r", "s_next"),
    "model_prediction.csv": ("a", "model_mean", "model_std", "elite_spread", "true_mean", "true_std"),
    "ratio.csv": ("s", "a", "g", "omega", "true_kl"),
    "q_values.csv": ("a", "q1", "q2", "q_mean"),
}


class RunPaths:
    def __init__(self, root):
        self.root = Path(root)
        self.config = self.root / "config.ini"
        self.dataset = self.root / "dataset.txt"
        self.model = self.root / "model.npz"
        self.model_report = self.root / "model.json"
        self.metrics = self.root / "metrics.jsonl"
        self.checkpoints = self.root / "checkpoints"
        self.agent = self.root / "agent.npz"
        self.evaluation = self.root / "evaluation.json"
        self.diagnostics = self.root / "diagnostics"

    def checkpoint(self, tag):
        return self.checkpoints / f"agent-{tag}.npz"


def run_root(out=None):
    return Path(out or os.environ.get(RUN_DIR_ENV) or DEFAULT_ROOT)


def run_paths(config, out=None):
    return RunPaths(run_root(out) / f"{config.digest()}-seed{config.run.seed}")


def prepare(config, out=None):
    """Create the run directory and record the configuration in it."""
    paths = run_paths(config, out)
    paths.root.mkdir(parents=True, exist_ok=True)
    text = config.dumps()
    if paths.config.exists() and paths.config.read_text() != text:
        raise StageError("setup", f"{paths.config} holds a different configuration")
    paths.config.write_text(text)
    return paths


def stage_seeds(seed):
    """Independent integer seeds for data, model, agent and evaluation."""
    children = np.random.SeedSequence(seed).spawn(4)
    return {name: int(c.generate_state(1)[0])
            for name, c in zip(("data", "model", "agent", "eval"), children)}


def _require(path, what):
    if not Path(path).exists():
        raise CheckpointError(f"missing {what}: {path}")


# -- stages -------------------------------------------------------------------

def gen_data(config, paths):
    dataset = generate_toy_dataset(config.toy_spec(), seed=stage_seeds(config.run.seed)["data"])
    save_dataset(dataset, paths.dataset)
    return dataset


def train_model(config, paths):
    _require(paths.dataset, "dataset")
    dataset = load_dataset(paths.dataset)
    ens = train_ensemble(dataset, config.model_config(), rng=stage_seeds(config.run.seed)["model"],
                         dtype=np.float32)
    save_ensemble(ens, paths.model)
    report = {"elites": ens.elites, "val_nll": [m.val_nll[-1] for m in ens.members],
              "train_nll": [m.train_nll[-1] for m in ens.members]}
    paths.model_report.write_text(json.dumps(report, indent=1) + "\n")
    return ens


def save_agent(trainer, path, diagnostic_rows=None):
    nets, meta = trainer.state_dict()
    arrays = {}
    if diagnostic_rows is not None:
        b = trainer.buffer
        arrays = {"diag_states": b.states[diagnostic_rows], "diag_actions": b.actions[diagnostic_rows],
                  "diag_g": b.g[diagnostic_rows]}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, nets, meta, arrays)


def load_agent(path):
    """``(actor, critics, meta, arrays)`` from an agent checkpoint."""
    nets, meta, arrays = load_checkpoint(path)
    if "actor" not in nets or "critic0" not in nets:
        raise CheckpointError(f"{path} is not an agent checkpoint")
    actor = Actor.__new__(Actor)
    actor.state_dim, actor.action_dim = meta["state_dim"], meta["action_dim"]
    actor.low, actor.high = meta["low"], meta["high"]
    actor.net = nets["actor"]
    critics = CriticPair.__new__(CriticPair)
    critics.nets = [nets["critic0"], nets["critic1"]]
    critics.targets = [nets["target0"], nets["target1"]]
    critics.tau = 5e-3
    return actor, critics, meta, arrays


def _metrics_line(record):
    return json.dumps(record) + "\n"


def train_agent(config, paths, progress=None):
    """Run the configured number of iterations, streaming metrics to disk.

    A non-finite value stops the run after writing ``agent-abort.npz``.
    """
    _require(paths.dataset, "dataset")
    _require(paths.model, "model")
    dataset = load_dataset(paths.dataset)
    ens = load_ensemble(paths.model)
    trainer = Trainer(ens, dataset, config.agent_config(), seed=stage_seeds(config.run.seed)["agent"])
    every = config.run.checkpoint_every
    with open(paths.metrics, "w") as fh:
        for it in range(config.agent.iterations):
            try:
                record = trainer.train_iteration()
            except NonFiniteError:
                save_agent(trainer, paths.checkpoint("abort"))
                raise
            fh.write(_metrics_line(record))
            if (it + 1) % every == 0:
                fh.flush()
                save_agent(trainer, paths.checkpoint(it + 1))
            if progress:
                progress(record)
    rng = np.random.default_rng(stage_seeds(config.run.seed)["agent"] + 1)
    rows = rng.choice(len(trainer.buffer), min(DIAGNOSTIC_BATCH, len(trainer.buffer)), replace=False)
    save_agent(trainer, paths.agent, diagnostic_rows=rows)
    return trainer


def evaluate(checkpoint, episodes, seed, spec=None, horizon=1):
    """Mean and std of undiscounted returns with the mean action of the policy.

    Episodes start from the toy task's initial-state range and last
    ``horizon`` steps.
    """
    from .toy import ToyMdpSpec

    if episodes < 1:
        raise DomainError(f"episodes must be at least 1, got {episodes}")
    if horizon < 1:
        raise DomainError(f"horizon must be at least 1, got {horizon}")
    spec = spec or ToyMdpSpec()
    actor, _, meta, _ = load_agent(checkpoint)
    if meta["state_dim"] != 1 or meta["action_dim"] != 1:
        raise DomainError(f"checkpoint dimensions {meta['state_dim']}x{meta['action_dim']} "
                          f"do not match the 1x1 toy task")
    rng = np.random.default_rng(seed)
    s = rng.uniform(*spec.initial_state_range, episodes)
    returns = np.zeros(episodes)
    for _ in range(horizon):
        returns += s
        a = np.clip(actor.deterministic(s[:, None])[:, 0], *spec.action_box)
        mean, sd = toy_mean_sigma(a)
        s = mean + sd * rng.standard_normal(episodes)
    return float(returns.mean()), float(returns.std())


def evaluate_stage(config, paths):
    _require(paths.agent, "agent checkpoint")
    mean, std = evaluate(paths.agent, config.run.eval_episodes, stage_seeds(config.run.seed)["eval"],
                         config.toy_spec(), config.run.eval_horizon)
    result = {"episodes": config.run.eval_episodes, "horizon": config.run.eval_horizon,
              "mean_return": mean, "std_return": std}
    paths.evaluation.write_text(json.dumps(result, indent=1) + "\n")
    return result


# -- diagnostics ---------------------------------------------------------------

def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def q_curve(critics, state=0.0, n=GRID_POINTS, low=-1.0, high=1.0):
    grid = np.linspace(low, high, n)
    q = critics.q(np.full((n, 1), state), grid[:, None])
    return grid, q


def model_prediction(ensemble, state=0.0, n=GRID_POINTS):
    """Elite-mixture mean/std and spread of elite means at ``state`` over an action grid."""
    grid = np.linspace(-1.0, 1.0, n)
    means, stds = ensemble.elite_dists(np.full((n, 1), state), grid[:, None])
    mu, sd = means[..., 0], stds[..., 0]
    mix_mean = mu.mean(axis=0)
    mix_std = np.sqrt((sd ** 2).mean(axis=0) + mu.var(axis=0))
    spread = mu.std(axis=0)
    t_mean, t_std = toy_mean_sigma(grid)
    return grid, mix_mean, mix_std, spread, t_mean, t_std


def emit_diagnostics(paths):
    """Write the four diagnostic CSVs, their SVG panels and a summary JSON."""
    for p, what in ((paths.dataset, "dataset"), (paths.model, "model"), (paths.agent, "agent checkpoint")):
        _require(p, what)
    out = paths.diagnostics
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(paths.dataset)
    ens = load_ensemble(paths.model)
    _, critics, _, arrays = load_agent(paths.agent)

    _write_csv(out / "dataset.csv", CSV_SCHEMAS["dataset.csv"],
               zip(dataset.states[:, 0], dataset.actions[:, 0], dataset.rewards, dataset.next_states[:, 0]))
    Chart("offline data", "a", "s'").scatter(dataset.actions[:, 0], dataset.next_states[:, 0]).save(out / "dataset.svg")

    grid, mm, ms, spread, tm, ts = model_prediction(ens)
    _write_csv(out / "model_prediction.csv", CSV_SCHEMAS["model_prediction.csv"], zip(grid, mm, ms, spread, tm, ts))
    (Chart("model prediction at s=0", "a", "s'")
     .band(grid, mm - ms, mm + ms, label="model mean +/- std")
     .line(grid, mm, label="model mean").line(grid, tm, color="#000000", label="true mean")
     .save(out / "model_prediction.svg"))

    if "diag_g" not in arrays:
        raise CheckpointError(f"{paths.agent} holds no diagnostic batch")
    s, a, g = arrays["diag_states"], arrays["diag_actions"], arrays["diag_g"]
    omega = g / g.sum()
    true_kl = toy_kl_model_to_truth(ens, s, np.clip(a, -1.0, 1.0))
    _write_csv(out / "ratio.csv", CSV_SCHEMAS["ratio.csv"], zip(s[:, 0], a[:, 0], g, omega, true_kl))
    Chart("model error vs weight", "true KL", "omega").scatter(true_kl, omega).save(out / "ratio.svg")

    grid, q = q_curve(critics)
    q_mean = q.mean(axis=1)
    a_star = float(grid[np.argmax(q_mean)])
    _write_csv(out / "q_values.csv", CSV_SCHEMAS["q_values.csv"], zip(grid, q[:, 0], q[:, 1], q_mean))
    (Chart("Q(s=0, a)", "a", "Q").line(grid, q_mean, label="mean of critics")
     .vline(a_star, label=f"argmax {a_star:.3f}").save(out / "q_values.svg"))

    near = np.abs(grid) < 1e-9
    far = np.isclose(np.abs(grid), 0.9)
    summary = {
        "argmax_action": a_star,
        "spread_ratio_edge_to_center": float(spread[far].mean() / max(spread[near].mean(), 1e-12)),
        "spearman_omega_true_kl": float(spearmanr(omega, true_kl).correlation),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


# -- whole pipeline -------------------------------------------------------------

def run_stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except MidlError as exc:
        raise StageError(name, exc.line(), cause=exc.code) from exc
    except OSError as exc:
        raise StageError(name, f"{exc.strerror}: {exc.filename}") from exc


def run_pipeline(config, out=None, progress=None):
    """gen-data, train-model, train-agent, evaluate and plot in order.

    A failing stage raises ``StageError`` naming it; artifacts written by
    earlier stages stay in place.
    """
    paths = prepare(config, out)
    run_stage("gen-data", gen_data, config, paths)
    run_stage("train-model", train_model, config, paths)
    run_stage("train-agent", train_agent, config, paths, progress)
    result = run_stage("evaluate", evaluate_stage, config, paths)
    summary = run_stage("plot", emit_diagnostics, paths)
    return paths, result, summary
