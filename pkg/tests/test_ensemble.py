import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from collapse_sde.ensemble import (
    EnsembleAborted,
    EnsembleStats,
    born_gate,
    born_probabilities,
    chi_square,
    energy_conservation_report,
    martingale_report,
    run_ensemble,
    stats_to_json,
    variance_decay_report,
)
from collapse_sde.operator_algebra import eigendecompose, expectation
from collapse_sde.sde_engine import SdeConfig

from strategies import complex_vectors, hermitian_matrices

FAST = SdeConfig(dt=1e-3, t_final=30.0, record_every=100)


@pytest.mark.parametrize("z0, H, expected", [
    ([1, 1], np.diag([0.0, 1.0]), [0.5, 0.5]),
    ([0, 1], np.diag([0.0, 1.0]), [0.0, 1.0]),
    ([1, 1, np.sqrt(2)], np.diag([0.0, 0.5, 1.0]), [0.25, 0.25, 0.5]),
    ([1, 1, 1], np.diag([0.0, 0.0, 1.0]), [2 / 3, 1 / 3]),
])
def test_born_probabilities_oracle(z0, H, expected):
    assert np.allclose(born_probabilities(z0, eigendecompose(H)), expected, atol=1e-15)


@given(hermitian_matrices(3), complex_vectors(3))
def test_born_equals_projector_expectations(H, z):
    eig = eigendecompose(H)
    p = born_probabilities(z, eig)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.allclose(p, [expectation(P, z) for P in eig.group_projectors()], atol=1e-12)


@pytest.mark.parametrize("counts, probs, expected", [
    ([50, 50], [0.5, 0.5], (0.0, 1, 1.0)),
    ([60, 40], [0.5, 0.5], (4.0, 1, None)),
    ([0, 10, 0], [0.0, 1.0, 0.0], (0.0, 0, 1.0)),
    ([1, 9], [0.0, 1.0], (math.inf, 0, 0.0)),
    ([0, 0], [0.5, 0.5], (0.0, 0, 1.0)),
])
def test_chi_square_cases(counts, probs, expected):
    chi2, dof, p = chi_square(counts, probs)
    assert chi2 == pytest.approx(expected[0])
    assert dof == expected[1]
    if expected[2] is not None:
        assert p == pytest.approx(expected[2])
    else:
        assert p == pytest.approx(0.0455, abs=1e-3)


def test_eigenvector_start_is_exact():
    H = np.diag([0.0, 0.5, 1.0])
    stats = run_ensemble([0, 1, 0], H, FAST, 50)
    assert np.array_equal(stats.outcome_freqs, [0.0, 1.0, 0.0])
    assert np.all(stats.EV_mean == 0.0) and np.all(stats.EV_se == 0.0)
    assert martingale_report(stats).max_normalized == 0.0
    assert energy_conservation_report(stats).max_normalized == 0.0
    rep = variance_decay_report(stats)
    assert rep.passes and np.all(rep.margins == 0.0)


def test_counts_partition_trajectories(two_level):
    H, z0 = two_level
    stats = run_ensemble(z0, H, SdeConfig(dt=1e-3, t_final=5.0, record_every=50), 300)
    assert stats.outcome_counts.sum() + stats.unresolved_count == stats.n_traj
    assert stats.unresolved_count > 0  # horizon deliberately short
    assert stats.outcome_freqs.sum() + stats.unresolved_fraction == pytest.approx(1.0, abs=0)
    assert np.allclose(stats.EPi_mean.sum(axis=1), 1.0, atol=1e-12)


def test_unitary_limit_no_collapse(two_level):
    H, z0 = two_level
    stats = run_ensemble(z0, H, SdeConfig(sigma=0.0, dt=1e-3, t_final=2.0, record_every=100), 20)
    assert stats.unresolved_count == 20
    assert np.allclose(stats.EV_mean, 0.25, atol=1e-2)
    rep = variance_decay_report(stats)
    assert rep.passes


def test_threads_do_not_change_numbers(three_level):
    H, z0 = three_level
    a = run_ensemble(z0, H, FAST, 300, batch_size=64)
    b = run_ensemble(z0, H, FAST, 300, batch_size=64, threads=3)
    assert stats_to_json(a) == stats_to_json(b)
    assert np.array_equal(a.outcomes, b.outcomes)


def test_reproducible_json(two_level):
    H, z0 = two_level
    a = stats_to_json(run_ensemble(z0, H, FAST, 100))
    b = stats_to_json(run_ensemble(z0, H, FAST, 100))
    assert a == b
    c = stats_to_json(run_ensemble(z0, H, FAST.replace(seed=1), 100))
    assert a != c


def test_key_channel_selects_independent_streams(two_level):
    H, z0 = two_level
    a = run_ensemble(z0, H, FAST, 64)
    b = run_ensemble(z0, H, FAST, 64, key_channel=1)
    assert not np.array_equal(a.end_steps, b.end_steps)


def test_json_roundtrip(two_level):
    H, z0 = two_level
    stats = run_ensemble(z0, H, FAST, 40)
    d = json.loads(stats_to_json(stats))
    back = EnsembleStats.from_json_dict(d)
    assert stats_to_json(back) == stats_to_json(stats)
    assert set(d) >= {"born_probs", "outcome_freqs", "unresolved_count", "chi2", "chi2_dof", "series"}


def test_series_csv(two_level):
    H, z0 = two_level
    stats = run_ensemble(z0, H, FAST, 10)
    assert stats.series_csv_header() == ["t", "EV", "EV_se", "EH", "EH_se",
                                         "EPi_0", "EPi_0_se", "EPi_1", "EPi_1_se"]
    rows = stats.series_csv_rows()
    assert len(rows) == stats.times.size and rows[0][0] == 0.0


def test_collapsed_states_are_absorbing(two_level):
    """After every trajectory stops, series stay at the final-state averages."""
    H, z0 = two_level
    stats = run_ensemble(z0, H, SdeConfig(dt=1e-3, t_final=120.0, record_every=500), 200)
    assert stats.unresolved_count == 0
    last = int(np.searchsorted(stats.times, stats.end_steps.max() * stats.dt, side="right"))
    tail = stats.EPi_mean[last:]
    assert tail.size and np.allclose(tail, tail[0], atol=0)
    assert np.allclose(tail[0], stats.terminal_probs.mean(axis=0), atol=1e-15)


def test_blowups_abort_ensemble():
    cfg = SdeConfig(dt=1e-3, t_final=1.0)
    with pytest.raises(EnsembleAborted) as info:
        run_ensemble([1, 1], np.diag([0.0, 1e200]), cfg, 10)
    assert info.value.trajectory == 0


def test_small_ensemble_reports(three_level):
    H, z0 = three_level
    stats = run_ensemble(z0, H, SdeConfig(dt=2e-3, t_final=500.0, record_every=250), 400)
    assert stats.unresolved_fraction < 0.01
    assert np.all(born_gate(stats) <= 4.0)
    assert martingale_report(stats).passes(4.0)
    assert energy_conservation_report(stats).passes(4.0)
    assert variance_decay_report(stats).passes
