"""Exact dynamic programming on small enumerable MDPs.

Everything here works on dense tables: transitions ``T[s, a, s']``,
rewards ``r[s, a]`` and stochastic policies ``pi[s, a]``. State-action
tables are flattened row-major, index ``s * A + a``, whenever a linear
system is solved.

The penalized backup mixes an empirical MDP ``M_bar`` and a learned MDP
``M_hat`` with weight ``f`` on the model and subtracts ``lam * eta`` where
``eta = (omega - d) / d_beta``. The checks below evaluate the closed-form
conditions under which that backup is claimed to under-estimate the true
value, to be less conservative than a fixed-ratio penalty, and to improve
safely on the behavior policy.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditionUnsatisfiable, DomainError, PenaltyUndefinedError

FIXED_POINT_TOL = 1e-10


@dataclass
class TabularMdp:
    T: np.ndarray
    r: np.ndarray
    gamma: float
    rho0: np.ndarray
    unvisited: np.ndarray = None

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)
        if self.T.ndim != 3 or self.T.shape[0] != self.T.shape[2]:
            raise DomainError(f"transition tensor must be (S, A, S), got {self.T.shape}")
        if self.r.shape != self.T.shape[:2]:
            raise DomainError(f"reward table must be {self.T.shape[:2]}, got {self.r.shape}")
        if np.any(self.T < 0) or np.max(np.abs(self.T.sum(axis=2) - 1.0)) > 1e-12:
            raise DomainError("transition rows must be nonnegative and sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.rho0.shape != (self.S,) or np.any(self.rho0 < 0) or abs(self.rho0.sum() - 1.0) > 1e-12:
            raise DomainError("initial distribution must be a probability vector over states")
        if self.unvisited is None:
            self.unvisited = np.zeros(self.T.shape[:2], dtype=bool)

    @property
    def S(self):
        return self.T.shape[0]

    @property
    def A(self):
        return self.T.shape[1]

    @property
    def r_max(self):
        return float(np.max(np.abs(self.r)))


def _check_policy(mdp, pi):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.S, mdp.A):
        raise DomainError(f"policy must be ({mdp.S}, {mdp.A}), got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-10:
        raise DomainError("policy rows must be nonnegative and sum to 1")
    return pi


def sa_transition(mdp, pi):
    """``P[(s, a), (s', a')] = T[s, a, s'] * pi[s', a']``."""
    pi = _check_policy(mdp, pi)
    S, A = mdp.S, mdp.A
    return (mdp.T[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)


def state_transition(mdp, pi):
    pi = _check_policy(mdp, pi)
    return np.einsum("sa,sat->st", pi, mdp.T)


def exact_policy_eval(mdp, pi, reward=None):
    """Q^pi by a direct solve of ``(I - gamma P^pi) Q = r``."""
    r = mdp.r if reward is None else np.asarray(reward, dtype=np.float64)
    P = sa_transition(mdp, pi)
    n = len(P)
    Q = np.linalg.solve(np.eye(n) - mdp.gamma * P, r.reshape(-1))
    return Q.reshape(mdp.S, mdp.A)


def state_values(Q, pi):
    return np.sum(np.asarray(pi) * Q, axis=1)


def value_iteration_eval(mdp, pi, tol=1e-12, max_iter=100_000):
    """Iterative policy evaluation; an independent path to :func:`exact_policy_eval`."""
    pi = _check_policy(mdp, pi)
    Q = np.zeros_like(mdp.r)
    for _ in range(max_iter):
        V = state_values(Q, pi)
        Q_new = mdp.r + mdp.gamma * mdp.T @ V
        if np.max(np.abs(Q_new - Q)) <= tol:
            return Q_new
        Q = Q_new
    raise DomainError("policy evaluation did not converge")


def state_occupancy(mdp, pi, rho0=None):
    """Normalized discounted state visitation ``(1 - gamma) rho0^T (I - gamma P_pi)^-1``."""
    rho0 = mdp.rho0 if rho0 is None else np.asarray(rho0, dtype=np.float64)
    P = state_transition(mdp, pi)
    d = (1.0 - mdp.gamma) * np.linalg.solve((np.eye(mdp.S) - mdp.gamma * P).T, rho0)
    return np.maximum(d, 0.0)


def occupancy(mdp, pi, rho0=None):
    """State-action occupancy ``d(s) pi(a|s)``; sums to one."""
    return state_occupancy(mdp, pi, rho0)[:, None] * _check_policy(mdp, pi)


def expected_return(mdp, pi, reward=None):
    """``J(M, pi) = rho0 . V^pi``, equal to ``E_d[r] / (1 - gamma)``."""
    Q = exact_policy_eval(mdp, pi, reward)
    return float(mdp.rho0 @ state_values(Q, pi))


# -- penalized backups -----------------------------------------------------------

def _ratio_penalty(num, den, label):
    """``num / den`` with ``0/0 = 0``; a nonzero numerator over zero raises."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    bad = (den <= 0.0) & (np.abs(num) > 0.0)
    if np.any(bad):
        s, a = (int(i) for i in np.argwhere(bad)[0])
        raise PenaltyUndefinedError(f"{label} undefined at (s={s}, a={a}): zero denominator "
                                    f"with nonzero numerator {num[s, a]:.3g}", s=s, a=a)
    out = np.zeros_like(num)
    ok = den > 0.0
    out[ok] = num[ok] / den[ok]
    return out


def domain_eta(omega, d, d_beta):
    """Per-pair reward adjustment ``(omega - d) / d_beta``."""
    return _ratio_penalty(np.asarray(omega) - np.asarray(d), d_beta, "penalty")


def combo_eta(rho, d, f):
    rho = np.asarray(rho, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return _ratio_penalty(rho - d, (1.0 - f) * d + f * rho, "fixed-ratio penalty")


def _check_pair(m_bar, m_hat):
    if m_bar.T.shape != m_hat.T.shape or m_bar.gamma != m_hat.gamma:
        raise DomainError("empirical and learned MDPs must share shape and discount")


@dataclass
class FixedPoint:
    Q: np.ndarray
    iterations: int
    deltas: list = field(repr=False, default_factory=list)


def penalized_fixed_point(m_bar, m_hat, pi, f, adjustment, tol=FIXED_POINT_TOL, max_iter=100_000):
    """Iterate ``Q <- (1-f) T_bar Q + f T_hat Q - adjustment`` to a fixed point.

    Stops when the sup-norm change is at most ``tol``. ``deltas`` keeps the
    change per sweep so the contraction factor can be inspected.
    """
    _check_pair(m_bar, m_hat)
    pi = _check_policy(m_bar, pi)
    if not 0.0 <= f <= 1.0:
        raise DomainError(f"f must lie in [0, 1], got {f}")
    r_mix = (1.0 - f) * m_bar.r + f * m_hat.r - adjustment
    T_mix = (1.0 - f) * m_bar.T + f * m_hat.T
    Q = np.zeros_like(r_mix)
    deltas = []
    for k in range(1, max_iter + 1):
        Q_new = r_mix + m_bar.gamma * T_mix @ state_values(Q, pi)
        delta = float(np.max(np.abs(Q_new - Q)))
        deltas.append(delta)
        Q = Q_new
        if delta <= tol:
            return FixedPoint(Q, k, deltas)
    raise DomainError("penalized backup did not converge")


def penalized_direct_solve(m_bar, m_hat, pi, f, adjustment):
    """Same fixed point as :func:`penalized_fixed_point` via one linear solve."""
    _check_pair(m_bar, m_hat)
    mixed = TabularMdp((1.0 - f) * m_bar.T + f * m_hat.T,
                       (1.0 - f) * m_bar.r + f * m_hat.r - adjustment,
                       m_bar.gamma, m_bar.rho0)
    return exact_policy_eval(mixed, pi)


def domain_backup_fixed_point(m_bar, m_hat, pi, omega, d, f, lam, d_behavior=None, tol=FIXED_POINT_TOL):
    """Fixed point of the adaptive penalized backup.

    ``d_beta = (1-f) d_behavior + f d^pi_hat`` where ``d^pi_hat`` is the
    occupancy of ``pi`` in ``m_hat``; ``d_behavior`` defaults to ``d``.
    """
    d = np.asarray(d, dtype=np.float64)
    d_behavior = d if d_behavior is None else np.asarray(d_behavior, dtype=np.float64)
    d_beta = (1.0 - f) * d_behavior + f * occupancy(m_hat, pi)
    eta = domain_eta(omega, d, d_beta)
    return penalized_fixed_point(m_bar, m_hat, pi, f, lam * eta, tol).Q


def combo_backup_fixed_point(m_bar, m_hat, pi, rho, d, f, lam, tol=FIXED_POINT_TOL):
    """Fixed point with the fixed-ratio penalty ``(rho - d) / ((1-f) d + f rho)``."""
    return penalized_fixed_point(m_bar, m_hat, pi, f, lam * combo_eta(rho, d, f), tol).Q


# -- occupancy bundle and error constants -----------------------------------------

@dataclass
class OccupancyTables:
    d_behavior: np.ndarray
    d_model: np.ndarray
    d_beta: np.ndarray
    d: np.ndarray
    omega: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for name in ("d_behavior", "d_model", "d_beta", "d", "omega", "rho"):
            t = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-10:
                raise DomainError(f"{name} must be a nonnegative table summing to 1")
            setattr(self, name, t)

    @property
    def eta(self):
        return domain_eta(self.omega, self.d, self.d_beta)


def occupancy_tables(m, m_hat, pi, pi_b, f, omega, d=None, rho=None):
    """Occupancies used by the checks.

    The behavior occupancy is taken in the true MDP ``m``; ``d`` defaults to
    it and ``rho`` defaults to the learned-model occupancy under ``pi``.
    """
    d_behavior = occupancy(m, pi_b)
    d_model = occupancy(m_hat, pi)
    return OccupancyTables(d_behavior, d_model, (1.0 - f) * d_behavior + f * d_model,
                           d_behavior if d is None else d, omega,
                           d_model if rho is None else rho)


@dataclass
class ErrorConstants:
    """Sampling and model error terms between a true, empirical and learned MDP.

    ``C_r`` and ``C_T`` bound reward and L1 transition errors of the
    empirical MDP scaled by ``sqrt(|D(s, a)|)``; ``C_rT`` combines them as
    ``((1-gamma) C_r + 2 gamma R_max C_T) / R_max``. ``eps_r``, ``D_tv`` and
    ``D_l1`` compare the true and learned MDPs per pair.
    """
    C_r: float
    C_T: float
    C_rT: float
    R_max: float
    eps_r: np.ndarray
    D_tv: np.ndarray
    D_l1: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if min(self.C_r, self.C_T, self.C_rT, self.R_max) < 0:
            raise DomainError("error constants must be nonnegative")


def combine_sampling_constants(C_r, C_T, R_max, gamma):
    if R_max <= 0:
        return 0.0
    return ((1.0 - gamma) * C_r + 2.0 * gamma * R_max * C_T) / R_max


def error_constants(m, m_bar, m_hat, counts, C_r=None, C_T=None, unvisited_count=0.5):
    """Exact per-pair model errors plus sampling constants.

    When ``C_r``/``C_T`` are not supplied they are the smallest values for
    which the concentration bounds hold on every pair, using
    ``unvisited_count`` as the effective count of pairs never seen.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != m.r.shape or np.any(counts < 0):
        raise DomainError("visit counts must be a nonnegative (S, A) table")
    eff = np.where(counts > 0, counts, unvisited_count)
    root = np.sqrt(eff)
    if C_r is None:
        C_r = float(np.max(np.abs(m.r - m_bar.r) * root))
    if C_T is None:
        C_T = float(np.max(np.abs(m.T - m_bar.T).sum(axis=2) * root))
    l1 = np.abs(m.T - m_hat.T).sum(axis=2)
    return ErrorConstants(C_r, C_T, combine_sampling_constants(C_r, C_T, m.r_max, m.gamma),
                          m.r_max, np.abs(m.r - m_hat.r), 0.5 * l1, l1, eff)


# -- condition formulas -------------------------------------------------------------

def _policy_ratio(pi, pi_b):
    pi = np.asarray(pi, dtype=np.float64)
    pi_b = np.asarray(pi_b, dtype=np.float64)
    if np.any((pi <= 0) & (pi_b > 0)):
        s = int(np.argwhere((pi <= 0) & (pi_b > 0))[0, 0])
        raise DomainError(f"policy has zero mass where the behavior policy does not (state {s})")
    return np.where(pi_b > 0, pi_b / np.where(pi > 0, pi, 1.0), 0.0)


def _mixture_bracket(occ, ratio, f, reduce):
    return (1.0 - f) * occ.d_behavior.sum(axis=1) * reduce(ratio, axis=1) + f * occ.d_model.sum(axis=1)


def xi(occ, pi, pi_b, f):
    """State coefficient: mixture with the max policy ratio over the one with the min.

    States that neither occupancy reaches get ``xi = 1``.
    """
    ratio = _policy_ratio(pi, pi_b)
    upper = _mixture_bracket(occ, ratio, f, np.max)
    lower = _mixture_bracket(occ, ratio, f, np.min)
    out = np.ones(len(upper))
    reach = upper > 0
    with np.errstate(divide="ignore"):
        out[reach] = np.where(lower[reach] > 0, upper[reach] / np.where(lower[reach] > 0, lower[reach], 1.0),
                              np.inf)
    return np.maximum(out, 1.0)


def _delta_denominator(occ, pi, pi_b, f, xi_s):
    ratio = _policy_ratio(pi, pi_b)
    bracket = _mixture_bracket(occ, ratio, f, np.max)
    mass = occ.d.sum(axis=1)
    active = mass > 0
    if not np.any(active):
        raise ConditionUnsatisfiable("offline distribution has no mass")
    terms = (xi_s[active] - 1.0) * mass[active] / bracket[active]
    den = float(np.min(terms))
    if not den > 0.0:
        raise ConditionUnsatisfiable(f"lambda lower bound undefined: denominator {den:.3g} is not positive")
    return den


def delta_numerator(consts, f, gamma):
    sampling = consts.C_rT * consts.R_max / ((1.0 - gamma) * np.sqrt(np.min(consts.counts)))
    model = float(np.max(consts.eps_r)) + 2.0 * gamma * consts.R_max / (1.0 - gamma) * float(np.max(consts.D_tv))
    return (1.0 - f) * sampling + f * model


def delta_l(consts, occ, pi, pi_b, xi_s, f, gamma):
    """Smallest penalty weight the lower-bound result asks for."""
    return delta_numerator(consts, f, gamma) / _delta_denominator(occ, pi, pi_b, f, xi_s)


def delta_l_assembled(consts, occ, pi, pi_b, xi_s, f, gamma):
    """:func:`delta_l` recomputed term by term from per-pair error tables."""
    delta1 = consts.C_rT * consts.R_max / ((1.0 - gamma) * np.sqrt(consts.counts))
    delta2 = consts.eps_r + consts.D_tv * 2.0 * gamma * consts.R_max / (1.0 - gamma)
    worst = (1.0 - f) * np.max(delta1) + f * (np.max(consts.eps_r) + np.max(delta2 - consts.eps_r))
    ratio = _policy_ratio(pi, pi_b)
    dens = []
    for s in range(len(xi_s)):
        mass = occ.d[s].sum()
        if mass <= 0:
            continue
        bracket = (1.0 - f) * occ.d_behavior[s].sum() * ratio[s].max() + f * occ.d_model[s].sum()
        dens.append((xi_s[s] - 1.0) * mass / bracket)
    den = min(dens)
    if den <= 0:
        raise ConditionUnsatisfiable("lambda lower bound undefined")
    return worst / den


@dataclass
class TheoremReport:
    xi: np.ndarray = None
    delta_l: float = None
    premise: np.ndarray = None
    lower_bound: np.ndarray = None
    kappa1: float = None
    kappa2: float = None
    flag: bool = None
    varpi: dict = field(default_factory=dict)
    zeta: float = None
    mu1: float = None
    mu2: float = None
    mu3: float = None
    improvement: float = None

    def __post_init__(self):
        if self.xi is not None and np.any(np.asarray(self.xi) < 1.0):
            raise DomainError("state coefficient must be at least 1")


def premise_holds(occ, xi_s):
    """Per-state check of ``sum_a omega(s, a) > xi(s) sum_a d(s, a)``."""
    return occ.omega.sum(axis=1) > xi_s * occ.d.sum(axis=1)


def check_theorem1(m, m_bar, m_hat, pi, pi_b, omega, f, lam, consts, d=None, tol=1e-8):
    """Evaluate the lower-bound result on one instance.

    Returns a report plus the verdict of the implication: whenever the
    premise holds at every state and ``lam >= delta_l``, the penalized value
    must not exceed the true value anywhere (within ``tol``).
    """
    occ = occupancy_tables(m, m_hat, pi, pi_b, f, omega, d)
    xi_s = xi(occ, pi, pi_b, f)
    try:
        dl = delta_l(consts, occ, pi, pi_b, xi_s, f, m.gamma)
    except ConditionUnsatisfiable:
        dl = np.inf
    Q_hat = domain_backup_fixed_point(m_bar, m_hat, pi, occ.omega, occ.d, f, lam, occ.d_behavior)
    V_hat = state_values(Q_hat, pi)
    V = state_values(exact_policy_eval(m, pi), pi)
    prem = premise_holds(occ, xi_s)
    below = V_hat <= V + tol
    report = TheoremReport(xi=xi_s, delta_l=dl, premise=prem, lower_bound=below)
    holds = bool(np.all(prem)) and lam >= dl
    return report, (not holds) or bool(np.all(below))


def proof_condition(occ, pi, consts, f, lam, gamma):
    """The intermediate sufficient condition the lower-bound argument relies on.

    ``lam * min_s E_pi[eta] >= max_s E_pi[(1-f) Delta_1 + f Delta_2]`` with
    ``E_pi[eta] > 0`` at every state.
    """
    e_eta = np.sum(pi * occ.eta, axis=1)
    delta1 = consts.C_rT * consts.R_max / ((1.0 - gamma) * np.sqrt(consts.counts))
    delta2 = consts.eps_r + consts.D_tv * 2.0 * gamma * consts.R_max / (1.0 - gamma)
    rhs = float(np.max(np.sum(pi * ((1.0 - f) * delta1 + f * delta2), axis=1)))
    return bool(np.all(e_eta > 0)) and lam * float(np.min(e_eta)) >= rhs


def check_theorem2(m_bar, m_hat, pi, omega, rho, d, f, lam, d_state=None, d_behavior=None):
    """Compare average values of the adaptive and fixed-ratio penalties.

    ``d_state`` is the evaluation distribution over states (defaults to the
    state marginal of ``d``). Returns ``(kappa1, kappa2, flag)``; the claim
    under test is ``flag -> kappa1 > kappa2``.
    """
    d = np.asarray(d, dtype=np.float64)
    d_state = d.sum(axis=1) if d_state is None else np.asarray(d_state, dtype=np.float64)
    Q1 = domain_backup_fixed_point(m_bar, m_hat, pi, omega, d, f, lam, d_behavior)
    Q2 = combo_backup_fixed_point(m_bar, m_hat, pi, rho, d, f, lam)
    kappa1 = float(d_state @ state_values(Q1, pi))
    kappa2 = float(d_state @ state_values(Q2, pi))
    d_model_state = state_occupancy(m_hat, pi)
    flag = bool(d_state @ d_model_state >= d_state @ np.sum(pi * omega, axis=1))
    return kappa1, kappa2, flag


def mixture_occupancy(m_bar, m_hat, pi, f):
    return (1.0 - f) * occupancy(m_bar, pi) + f * occupancy(m_hat, pi)


def varpi(m_bar, m_hat, pi, eta, f):
    """Expected reward adjustment under the ``f``-mixture of occupancies."""
    return float(np.sum(mixture_occupancy(m_bar, m_hat, pi, f) * eta))


def safety_diagnostic(m, m_bar, m_hat, pi_star, pi_b, omega, f, lam, consts, d=None):
    """Safe-improvement margin ``zeta = mu1 - mu2 - mu3`` and the actual gain.

    The adjustment ``eta`` uses ``d_beta`` of ``pi_star``. Both error
    expectations are taken under the occupancy of ``pi_star`` in the true MDP.
    """
    occ = occupancy_tables(m, m_hat, pi_star, pi_b, f, omega, d)
    eta = occ.eta
    g = m.gamma
    w_star = varpi(m_bar, m_hat, pi_star, eta, f)
    w_b = varpi(m_bar, m_hat, pi_b, eta, f)
    mu1 = lam / (1.0 - g) * (w_star - w_b)
    d_star = occupancy(m, pi_star)
    mu2 = 2.0 * (1.0 - f) / (1.0 - g) * float(np.sum(d_star * (consts.C_r + consts.R_max * consts.C_T)
                                                     / np.sqrt(consts.counts)))
    mu3 = 2.0 * f / (1.0 - g) * float(np.sum(d_star * (consts.eps_r + consts.R_max * consts.D_l1)))
    gain = expected_return(m, pi_star) - expected_return(m, pi_b)
    return TheoremReport(varpi={"pi": w_star, "pi_b": w_b}, zeta=mu1 - mu2 - mu3,
                         mu1=mu1, mu2=mu2, mu3=mu3, improvement=gain)


def penalized_policy_iteration(m, m_bar, m_hat, pi_b, omega, f, lam, d=None, step=0.5,
                               iters=200, tol=1e-10):
    """Damped policy iteration on the adaptive penalized fixed point.

    Each round recomputes ``eta`` for the current policy, evaluates the
    penalized fixed point and moves a fraction ``step`` of the probability
    mass toward the greedy action. Starting from ``pi_b`` keeps full support.
    """
    pi = np.array(pi_b, dtype=np.float64)
    for _ in range(iters):
        occ = occupancy_tables(m, m_hat, pi, pi_b, f, omega, d)
        Q = domain_backup_fixed_point(m_bar, m_hat, pi, occ.omega, occ.d, f, lam, occ.d_behavior)
        greedy = np.zeros_like(pi)
        greedy[np.arange(len(pi)), np.argmax(Q, axis=1)] = 1.0
        new = (1.0 - step) * pi + step * greedy
        if np.max(np.abs(new - pi)) <= tol:
            return new
        pi = new
    return pi


# -- instance construction ------------------------------------------------------------

def random_mdp(rng, S=5, A=3, gamma=0.9):
    """Dirichlet(1) transition rows, Uniform[-1, 1] rewards, Dirichlet(1) start."""
    T = rng.dirichlet(np.ones(S), size=(S, A))
    r = rng.uniform(-1.0, 1.0, (S, A))
    rho0 = rng.dirichlet(np.ones(S))
    return TabularMdp(T, r, gamma, rho0)


def random_policy(rng, S, A, concentration=1.0):
    return rng.dirichlet(np.full(A, concentration), size=S)


def perturbed_mdp(mdp, rng, noise=0.1, reward_noise=0.1):
    """Learned-model stand-in: rows mixed toward a random row, rewards jittered."""
    mix = rng.dirichlet(np.ones(mdp.S), size=(mdp.S, mdp.A))
    T = (1.0 - noise) * mdp.T + noise * mix
    T /= T.sum(axis=2, keepdims=True)
    r = mdp.r + rng.uniform(-reward_noise, reward_noise, mdp.r.shape)
    return TabularMdp(T, r, mdp.gamma, mdp.rho0)


def sample_counts(mdp, pi_b, n, rng):
    """Draw ``n`` transitions with ``(s, a)`` from the behavior occupancy.

    Returns per-pair visit counts and next-state counts ``(S, A, S)``.
    """
    d = occupancy(mdp, pi_b).reshape(-1)
    visits = rng.multinomial(n, d / d.sum()).reshape(mdp.S, mdp.A)
    nxt = np.zeros(mdp.T.shape)
    for s in range(mdp.S):
        for a in range(mdp.A):
            if visits[s, a]:
                nxt[s, a] = rng.multinomial(visits[s, a], mdp.T[s, a])
    return visits, nxt


def empirical_mdp(next_counts, reward_sums, gamma, rho0):
    """Maximum-likelihood MDP from counts.

    Pairs never visited become self-loops with zero reward and are flagged
    in ``unvisited``.
    """
    next_counts = np.asarray(next_counts, dtype=np.float64)
    visits = next_counts.sum(axis=2)
    S, A = visits.shape
    unvisited = visits == 0
    T = np.zeros_like(next_counts)
    r = np.zeros((S, A))
    seen = ~unvisited
    T[seen] = next_counts[seen] / visits[seen][:, None]
    r[seen] = np.asarray(reward_sums)[seen] / visits[seen]
    for s, a in np.argwhere(unvisited):
        T[s, a, s] = 1.0
    return TabularMdp(T, r, gamma, rho0, unvisited)


@dataclass
class TabularInstance:
    m: TabularMdp
    m_bar: TabularMdp
    m_hat: TabularMdp
    pi: np.ndarray
    pi_b: np.ndarray
    counts: np.ndarray
    seed: int


def random_instance(seed, S=5, A=3, gamma=0.9, model_noise=0.1, reward_noise=0.1, n_samples=None):
    """True MDP, empirical MDP, learned MDP and two full-support policies.

    With ``n_samples=None`` the empirical MDP equals the true one (no
    sampling error) and counts are reported as one per pair.
    """
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, S, A, gamma)
    pi_b = random_policy(rng, S, A)
    pi = random_policy(rng, S, A)
    m_hat = perturbed_mdp(m, rng, model_noise, reward_noise)
    if n_samples is None:
        m_bar, counts = m, np.ones((S, A))
    else:
        counts, nxt = sample_counts(m, pi_b, n_samples, rng)
        m_bar = empirical_mdp(nxt, m.r * counts, gamma, m.rho0)
    return TabularInstance(m, m_bar, m_hat, pi, pi_b, counts, seed)
