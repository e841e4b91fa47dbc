"""Randomized instance checks of the three tabular guarantees.

Each ``*_record`` function builds one instance from a seed, evaluates the
relevant claim exactly and returns a JSON-ready dict.
"""

import numpy as np

from .errors import ConditionUnsatisfiable, DomainError
from .tabular import (check_theorem1, check_theorem2, delta_l, domain_backup_fixed_point,
                      error_constants, exact_policy_eval, occupancy, occupancy_tables,
                      penalized_policy_iteration, premise_holds, proof_condition,
                      random_instance, safety_diagnostic, state_values, xi)

F_DEFAULT = 0.5
LAMBDA_DEFAULT = 1.0
THEOREM3_SAMPLES = 2000


def premise_omega(occ, xi_s):
    """Best attempt at a sampling distribution meeting the per-state premise.

    The premise asks for ``sum_a omega(s, a) > xi(s) sum_a d(s, a)`` at every
    state. Summing over states, that needs ``1 > sum_s xi(s) d(s)``, which
    fails whenever ``xi >= 1`` and ``d`` is a distribution. Raises
    ``ConditionUnsatisfiable`` in that case.
    """
    need = xi_s * occ.d.sum(axis=1)
    total = float(need.sum())
    if total >= 1.0:
        raise ConditionUnsatisfiable(
            f"per-state premise needs total sampling mass above {total:.6f}, but omega sums to 1",
            required_mass=total)
    # spread the spare mass evenly over states, then over each state's actions
    state_mass = need + (1.0 - total) / len(need)
    return state_mass[:, None] * np.full(occ.d.shape, 1.0 / occ.d.shape[1])


def proof_omega(occ, pi):
    """Sampling distribution with ``E_pi[eta](s) > 0`` at every state, if one exists.

    At each state all mass goes on the action maximizing ``pi / d_beta``,
    with per-state amounts equalizing ``E_pi[eta]`` across states. Raises
    ``ConditionUnsatisfiable`` when no distribution achieves positivity.
    """
    ratio = pi / occ.d_beta
    k = ratio.max(axis=1)
    best = ratio.argmax(axis=1)
    c = np.sum(pi * occ.d / occ.d_beta, axis=1)
    slack = 1.0 - float(np.sum(c / k))
    if slack <= 0.0:
        raise ConditionUnsatisfiable("no sampling distribution makes the expected penalty positive everywhere")
    t = slack / float(np.sum(1.0 / k))
    omega = np.zeros_like(pi)
    omega[np.arange(len(pi)), best] = (t + c) / k
    return omega


def _proof_lambda(occ, pi, consts, f, gamma):
    e_eta = np.sum(pi * occ.eta, axis=1)
    delta1 = consts.C_rT * consts.R_max / ((1.0 - gamma) * np.sqrt(consts.counts))
    delta2 = consts.eps_r + consts.D_tv * 2.0 * gamma * consts.R_max / (1.0 - gamma)
    rhs = float(np.max(np.sum(pi * ((1.0 - f) * delta1 + f * delta2), axis=1)))
    return rhs / float(np.min(e_eta))


def theorem1_record(seed, f=F_DEFAULT, tol=1e-8):
    """Premise construction attempt plus the proof-level condition on one instance.

    ``constructible`` says whether the per-state premise could be met.
    When it cannot, the instance is still checked under the intermediate
    condition the lower-bound argument uses, with ``lambda`` set to the
    smallest value satisfying it.
    """
    inst = random_instance(seed)
    m, pi, pi_b = inst.m, inst.pi, inst.pi_b
    consts = error_constants(m, inst.m_bar, inst.m_hat, inst.counts, C_r=0.0, C_T=0.0)
    d = occupancy(m, pi_b)
    base = occupancy_tables(m, inst.m_hat, pi, pi_b, f, d, d)
    xi_s = xi(base, pi, pi_b, f)
    rec = {"theorem": 1, "seed": int(seed), "f": f, "xi": xi_s.tolist()}
    try:
        omega = premise_omega(base, xi_s)
        rec["constructible"] = True
    except ConditionUnsatisfiable as exc:
        rec["constructible"] = False
        rec["required_mass"] = exc.context["required_mass"]
        omega = proof_omega(base, pi)
    occ = occupancy_tables(m, inst.m_hat, pi, pi_b, f, omega, d)
    try:
        dl = float(delta_l(consts, occ, pi, pi_b, xi_s, f, m.gamma))
    except ConditionUnsatisfiable:
        dl = float("inf")
    lam = max(_proof_lambda(occ, pi, consts, f, m.gamma), dl if np.isfinite(dl) else 0.0) * (1.0 + 1e-6)
    report, implication_ok = check_theorem1(m, inst.m_bar, inst.m_hat, pi, pi_b, omega, f, lam, consts, d, tol)
    V = state_values(exact_policy_eval(m, pi), pi)
    V_hat = state_values(domain_backup_fixed_point(inst.m_bar, inst.m_hat, pi, omega, occ.d, f, lam,
                                                   occ.d_behavior), pi)
    rec.update({
        "premise": premise_holds(occ, xi_s).tolist(),
        "premise_all": bool(np.all(report.premise)),
        "delta_l": dl,
        "lambda": lam,
        "proof_condition": proof_condition(occ, pi, consts, f, lam, m.gamma),
        "lower_bound": report.lower_bound.tolist(),
        "margin": float(np.min(V - V_hat)),
        "implication_ok": bool(implication_ok),
    })
    return rec


def theorem2_record(seed, f=F_DEFAULT, lam=LAMBDA_DEFAULT):
    """Adaptive vs fixed-ratio penalty on one instance with a Dirichlet ``omega``.

    ``rho`` is the learned-model occupancy of ``pi`` and ``d`` the behavior
    occupancy. Also reports the ``omega = rho`` identity gap.
    """
    inst = random_instance(seed)
    rng = np.random.default_rng([seed, 2])
    d = occupancy(inst.m, inst.pi_b)
    rho = occupancy(inst.m_hat, inst.pi)
    omega = rng.dirichlet(np.ones(d.size)).reshape(d.shape)
    k1, k2, flag = check_theorem2(inst.m_bar, inst.m_hat, inst.pi, omega, rho, d, f, lam)
    e1, e2, _ = check_theorem2(inst.m_bar, inst.m_hat, inst.pi, rho, rho, d, f, lam)
    return {"theorem": 2, "seed": int(seed), "f": f, "lambda": lam, "flag": flag,
            "kappa1": k1, "kappa2": k2, "margin": k1 - k2,
            "holds": (not flag) or k1 > k2, "identity_gap": abs(e1 - e2)}


def theorem3_record(seed, f=F_DEFAULT, lam=LAMBDA_DEFAULT, n_samples=THEOREM3_SAMPLES):
    """Safe-improvement margin for a penalized-greedy policy on one instance."""
    inst = random_instance(seed, n_samples=n_samples)
    rng = np.random.default_rng([seed, 3])
    omega = rng.dirichlet(np.ones(inst.pi.size)).reshape(inst.pi.shape)
    pi_star = penalized_policy_iteration(inst.m, inst.m_bar, inst.m_hat, inst.pi_b, omega, f, lam)
    consts = error_constants(inst.m, inst.m_bar, inst.m_hat, inst.counts)
    rep = safety_diagnostic(inst.m, inst.m_bar, inst.m_hat, pi_star, inst.pi_b, omega, f, lam, consts)
    return {"theorem": 3, "seed": int(seed), "f": f, "lambda": lam, "n_samples": n_samples,
            "zeta": rep.zeta, "mu1": rep.mu1, "mu2": rep.mu2, "mu3": rep.mu3,
            "improvement": rep.improvement, "margin": rep.improvement - rep.zeta,
            "holds": rep.improvement >= rep.zeta - 1e-8}


RECORDS = {1: theorem1_record, 2: theorem2_record, 3: theorem3_record}


def verify(theorem, instances, seed):
    """Yield one record per instance; instance ``i`` uses seed ``seed + i``."""
    if theorem not in RECORDS:
        raise DomainError(f"unknown theorem {theorem}")
    for i in range(instances):
        rec = RECORDS[theorem](seed + i)
        rec["instance"] = i
        yield rec
