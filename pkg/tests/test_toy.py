import numpy as np
import pytest

from midl_rl.errors import DatasetError, DomainError
from midl_rl.toy import (BREAKPOINTS, OfflineDataset, ToyMdpSpec, generate_toy_dataset, load_dataset,
                         save_dataset, toy_mean_sigma, toy_step, visit_counts)


@pytest.mark.parametrize("a,mean,sigma", [(0.0, 1.0, 0.02), (-1.0, 1.2, 0.06), (-0.6, 0.8, 0.04),
                                          (1.0, 1.2, 0.06), (0.6, 0.8, 0.06), (0.2, 0.8, 0.04),
                                          (-0.2, 0.8, 0.02)])
def test_piecewise_values(a, mean, sigma):
    m, s = toy_mean_sigma(a)
    assert m == pytest.approx(mean, abs=1e-12)
    assert s == sigma


@pytest.mark.parametrize("b", BREAKPOINTS[1:-1])
def test_mean_continuous_at_breakpoints(b):
    left, _ = toy_mean_sigma(np.nextafter(b, -2.0))
    right, _ = toy_mean_sigma(b)
    assert abs(left - right) < 1e-12
    assert right == pytest.approx(0.8, abs=1e-12)


@pytest.mark.parametrize("a", [-1.0001, 1.5, np.nan])
def test_action_outside_box(a):
    with pytest.raises(DomainError):
        toy_mean_sigma(a)


def test_vectorized_matches_scalar():
    a = np.linspace(-1, 1, 41)
    m, s = toy_mean_sigma(a)
    for x, mi, si in zip(a, m, s):
        assert (mi, si) == toy_mean_sigma(x)


def test_step_reward_and_noise_free_mean(rng):
    t = toy_step(0.5, 0.0, rng, sigma=0.0)
    assert t.reward == 0.5 and t.next_state[0] == pytest.approx(1.0) and not t.terminal
    for a in np.linspace(-1, 1, 9):
        assert toy_step(0.0, a, rng).reward == 0.0


def test_step_moments(rng):
    s2 = np.array([toy_step(0.0, 0.0, rng).next_state[0] for _ in range(10_000)])
    assert abs(s2.mean() - 1.0) < 1e-3
    assert abs(s2.std() - 0.02) < 2e-3


def test_dataset_shape_and_behavior(toy_data):
    assert len(toy_data) == 1000
    a = toy_data.actions[:, 0]
    assert abs(a.mean()) < 0.04
    assert np.all(np.abs(a) <= 1.0)
    assert np.mean(np.abs(a) > 0.7) < 0.05
    np.testing.assert_array_equal(toy_data.rewards, toy_data.states[:, 0])
    assert np.all((toy_data.states >= 0) & (toy_data.states <= 1))


def test_dataset_deterministic(tmp_path):
    a, b = generate_toy_dataset(seed=3), generate_toy_dataset(seed=3)
    assert a.same_as(b)
    save_dataset(a, tmp_path / "a.txt")
    save_dataset(b, tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert not a.same_as(generate_toy_dataset(seed=4))


def test_dataset_read_only(toy_data):
    with pytest.raises(ValueError):
        toy_data.states[0, 0] = 5.0


def test_round_trip(tmp_path, toy_data):
    save_dataset(toy_data, tmp_path / "d.txt")
    assert load_dataset(tmp_path / "d.txt").same_as(toy_data)


def test_load_errors(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("")
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(p)
    p.write_text("1 1\n0.1 0.2 0.1 0.9\n")
    with pytest.raises(DatasetError, match="row 0") as info:
        load_dataset(p)
    assert info.value.context["line"] == 2
    p.write_text("1 1\n0.1 0.2 0.1 0.9 0\n0.1 abc 0.1 0.9 0\n")
    with pytest.raises(DatasetError, match="row 1"):
        load_dataset(p)
    p.write_text("x y\n")
    with pytest.raises(DatasetError, match="header"):
        load_dataset(p)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing.txt")


def test_visit_counts_sum(toy_data):
    c = visit_counts(toy_data)
    assert c.shape == (20, 20) and c.sum() == len(toy_data) and c.min() >= 0


def test_from_transitions(rng):
    ts = [toy_step(0.2, 0.1, rng) for _ in range(3)]
    d = OfflineDataset.from_transitions(ts)
    assert len(d) == 3 and d[1].reward == ts[1].reward


def test_spec_validation():
    with pytest.raises(DomainError):
        ToyMdpSpec(behavior_std=0.0)
