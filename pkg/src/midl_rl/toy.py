"""The one-dimensional designed MDP, offline datasets and their text format.

The toy task has scalar state and action. The next state depends only on
the action, through a piecewise Gaussian whose mean peaks inside the data
region (a = 0) and rises again at the edges of the action box. The reward
is the current state, R(s, a) = s.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, DomainError

# interval edges and per-interval sigma of the designed dynamics
BREAKPOINTS = (-1.0, -0.6, -0.2, 0.2, 0.6, 1.0)
SIGMAS = (0.06, 0.04, 0.02, 0.04, 0.06)


def _piece_means(a):
    return (
        -a + 0.2,
        5.0 * (a + 0.4) ** 2 + 0.6,
        -5.0 * a ** 2 + 1.0,
        10.0 * (a - 0.4) ** 2 + 0.4,
        a + 0.2,
    )


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass(frozen=True)
class ToyMdpSpec:
    breakpoints: tuple = BREAKPOINTS
    sigmas: tuple = SIGMAS
    action_box: tuple = (-1.0, 1.0)
    initial_state_range: tuple = (0.0, 1.0)
    behavior_mean: float = 0.0
    behavior_std: float = 0.35
    dataset_size: int = 1000

    def __post_init__(self):
        if len(self.breakpoints) != 6 or len(self.sigmas) != 5:
            raise DomainError("toy MDP needs five intervals")
        if min(self.sigmas) <= 0 or self.behavior_std <= 0 or self.dataset_size < 1:
            raise DomainError("toy MDP parameters must be positive")


class OfflineDataset:
    """Column-stored ``(s, a, r, s', terminal)`` tuples.

    Arrays are made read-only on construction so a dataset can be shared
    freely.
    """

    def __init__(self, states, actions, rewards, next_states, terminals=None,
                 visit_counts=None, metadata=None):
        states = np.array(states, dtype=np.float64, ndmin=2)
        actions = np.array(actions, dtype=np.float64, ndmin=2)
        next_states = np.array(next_states, dtype=np.float64, ndmin=2)
        rewards = np.array(rewards, dtype=np.float64).reshape(-1)
        n = len(rewards)
        if terminals is None:
            terminals = np.zeros(n, dtype=bool)
        terminals = np.asarray(terminals, dtype=bool).reshape(-1)
        if not (len(states) == len(actions) == len(next_states) == len(terminals) == n):
            raise DatasetError("column lengths differ")
        if states.shape[1] != next_states.shape[1]:
            raise DatasetError("state and next_state dimensions differ")
        if not np.all(np.isfinite(rewards)):
            raise DatasetError("non-finite reward")
        if visit_counts is not None:
            visit_counts = np.asarray(visit_counts)
            if np.any(visit_counts < 0) or visit_counts.sum() != n:
                raise DatasetError("visit counts must be nonnegative and sum to the dataset size")
        for arr in (states, actions, rewards, next_states, terminals):
            arr.flags.writeable = False
        self.states = states
        self.actions = actions
        self.rewards = rewards
        self.next_states = next_states
        self.terminals = terminals
        self.visit_counts = visit_counts
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.rewards)

    def __getitem__(self, i):
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], bool(self.terminals[i]))

    @property
    def transitions(self):
        return [self[i] for i in range(len(self))]

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def action_dim(self):
        return self.actions.shape[1]

    @classmethod
    def from_transitions(cls, transitions, **kwargs):
        if not transitions:
            raise DatasetError("no transitions")
        return cls([t.state for t in transitions], [t.action for t in transitions],
                   [t.reward for t in transitions], [t.next_state for t in transitions],
                   [t.terminal for t in transitions], **kwargs)

    def subset(self, idx):
        return OfflineDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                              self.next_states[idx], self.terminals[idx], metadata=self.metadata)

    def same_as(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("states", "actions", "rewards", "next_states", "terminals"))


def toy_mean_sigma(action):
    """Piecewise mean and sigma of the next state for an action in [-1, 1].

    Intervals are half-open ``[lo, hi)`` except the last, ``[0.6, 1]``.
    Accepts scalars or arrays.
    """
    a = np.asarray(action, dtype=np.float64)
    if np.any(~np.isfinite(a)) or np.any(a < -1.0) or np.any(a > 1.0):
        raise DomainError(f"action outside [-1, 1]: {action}")
    idx = np.clip(np.searchsorted(BREAKPOINTS, a, side="right") - 1, 0, 4)
    means = np.choose(idx, _piece_means(a))
    sigmas = np.asarray(SIGMAS)[idx]
    if a.ndim == 0:
        return float(means), float(sigmas)
    return means, sigmas


def toy_step(state, action, rng, sigma=None):
    """One transition of the toy MDP. ``sigma`` overrides the noise level."""
    mean, sd = toy_mean_sigma(float(np.ravel(action)[0]))
    if sigma is not None:
        sd = sigma
    s = float(np.ravel(state)[0])
    nxt = mean + sd * rng.standard_normal() if sd > 0 else mean
    return Transition(np.array([s]), np.array([float(np.ravel(action)[0])]), s,
                      np.array([nxt]), False)


def behavior_actions(spec, rng, n):
    a = rng.normal(spec.behavior_mean, spec.behavior_std, n)
    return np.clip(a, *spec.action_box)


def generate_toy_dataset(spec=None, seed=0):
    """Roll the behavior policy for ``spec.dataset_size`` single-step episodes.

    Initial states are uniform on ``spec.initial_state_range``; behavior
    actions are clipped (not rejected) to the action box.
    """
    spec = spec or ToyMdpSpec()
    rng = np.random.default_rng(seed)
    n = spec.dataset_size
    s = rng.uniform(*spec.initial_state_range, n)
    a = behavior_actions(spec, rng, n)
    mean, sd = toy_mean_sigma(a)
    s_next = mean + sd * rng.standard_normal(n)
    meta = {"generator": f"clipped N({spec.behavior_mean}, {spec.behavior_std})",
            "seed": seed, "size": n}
    return OfflineDataset(s[:, None], a[:, None], s, s_next[:, None], metadata=meta)


def visit_counts(dataset, bins=(20, 20), state_range=(0.0, 1.0), action_range=(-1.0, 1.0)):
    """Histogram |D(s, a)| of a 1-D dataset on a uniform grid.

    Values outside the ranges are assigned to the edge cells so the counts
    always sum to the dataset size.
    """
    def cell(x, lo, hi, k):
        return np.clip(((x - lo) / (hi - lo) * k).astype(int), 0, k - 1)

    si = cell(dataset.states[:, 0], *state_range, bins[0])
    ai = cell(dataset.actions[:, 0], *action_range, bins[1])
    counts = np.zeros(bins, dtype=np.int64)
    np.add.at(counts, (si, ai), 1)
    return counts


# -- text format --------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def save_dataset(dataset, path):
    """Header ``s_dim a_dim`` then ``s... a... r s'... terminal`` per line."""
    lines = [f"{dataset.state_dim} {dataset.action_dim}"]
    for i in range(len(dataset)):
        fields = [*map(_fmt, dataset.states[i]), *map(_fmt, dataset.actions[i]),
                  _fmt(dataset.rewards[i]), *map(_fmt, dataset.next_states[i]),
                  "1" if dataset.terminals[i] else "0"]
        lines.append(" ".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    try:
        with open(path) as fh:
            raw = fh.read().splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    raw = [ln for ln in raw if ln.strip()]
    if not raw:
        raise DatasetError(f"{path}: empty dataset file")
    try:
        s_dim, a_dim = (int(x) for x in raw[0].split())
    except ValueError:
        raise DatasetError(f"{path}: line 1: header must be 's_dim a_dim'", line=1) from None
    if s_dim < 1 or a_dim < 1:
        raise DatasetError(f"{path}: line 1: dimensions must be positive", line=1)
    if len(raw) == 1:
        raise DatasetError(f"{path}: empty dataset (header only)")
    width = 2 * s_dim + a_dim + 2
    rows = np.empty((len(raw) - 1, width))
    for k, ln in enumerate(raw[1:]):
        parts = ln.split()
        if len(parts) != width:
            raise DatasetError(f"{path}: row {k} (line {k + 2}): expected {width} fields, got {len(parts)}",
                               row=k, line=k + 2)
        try:
            rows[k] = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(f"{path}: row {k} (line {k + 2}): non-numeric field", row=k, line=k + 2) from None
        if rows[k, -1] not in (0.0, 1.0):
            raise DatasetError(f"{path}: row {k} (line {k + 2}): terminal flag must be 0 or 1",
                               row=k, line=k + 2)
        if not np.all(np.isfinite(rows[k])):
            raise DatasetError(f"{path}: row {k} (line {k + 2}): non-finite value", row=k, line=k + 2)
    s = rows[:, :s_dim]
    a = rows[:, s_dim:s_dim + a_dim]
    r = rows[:, s_dim + a_dim]
    s2 = rows[:, s_dim + a_dim + 1:s_dim + a_dim + 1 + s_dim]
    return OfflineDataset(s, a, r, s2, rows[:, -1] == 1.0, metadata={"source": str(path)})
