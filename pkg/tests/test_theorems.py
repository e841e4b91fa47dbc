import numpy as np
import pytest

from midl_rl.errors import ConditionUnsatisfiable, DomainError
from midl_rl.tabular import occupancy, occupancy_tables, random_instance, xi
from midl_rl.theorems import premise_omega, proof_omega, theorem1_record, theorem2_record, theorem3_record, verify


def test_premise_needs_more_than_unit_mass():
    inst = random_instance(0)
    occ = occupancy_tables(inst.m, inst.m_hat, inst.pi, inst.pi_b, 0.5, occupancy(inst.m, inst.pi_b))
    xi_s = xi(occ, inst.pi, inst.pi_b, 0.5)
    with pytest.raises(ConditionUnsatisfiable) as err:
        premise_omega(occ, xi_s)
    assert err.value.context["required_mass"] >= 1.0


def test_premise_constructible_when_offline_mass_is_small():
    inst = random_instance(0)
    occ = occupancy_tables(inst.m, inst.m_hat, inst.pi, inst.pi_b, 0.5, occupancy(inst.m, inst.pi_b))
    omega = premise_omega(occ, np.full(5, 0.5))
    assert abs(omega.sum() - 1.0) < 1e-12
    assert np.all(omega.sum(1) > 0.5 * occ.d.sum(1))


def test_proof_omega_makes_expected_penalty_positive():
    for seed in range(20):
        inst = random_instance(seed)
        occ = occupancy_tables(inst.m, inst.m_hat, inst.pi, inst.pi_b, 0.5, occupancy(inst.m, inst.pi_b))
        omega = proof_omega(occ, inst.pi)
        assert abs(omega.sum() - 1.0) < 1e-12 and np.all(omega >= 0)
        occ2 = occupancy_tables(inst.m, inst.m_hat, inst.pi, inst.pi_b, 0.5, omega)
        assert np.all(np.sum(inst.pi * occ2.eta, axis=1) > 0)


def test_theorem1_records_lower_bound_under_proof_condition():
    for seed in range(10):
        rec = theorem1_record(seed)
        assert not rec["constructible"]
        assert rec["proof_condition"] and all(rec["lower_bound"]) and rec["margin"] >= -1e-8


def test_theorem2_identity_gap():
    for seed in range(10):
        rec = theorem2_record(seed)
        assert rec["identity_gap"] <= 1e-10
        assert rec["margin"] == rec["kappa1"] - rec["kappa2"]


def test_theorem3_improvement_margin():
    for seed in range(5):
        rec = theorem3_record(seed)
        assert rec["holds"]
        assert rec["zeta"] == pytest.approx(rec["mu1"] - rec["mu2"] - rec["mu3"])


def test_verify_stream():
    recs = list(verify(2, 3, 10))
    assert [r["instance"] for r in recs] == [0, 1, 2]
    assert [r["seed"] for r in recs] == [10, 11, 12]
    with pytest.raises(DomainError):
        list(verify(4, 1, 0))
