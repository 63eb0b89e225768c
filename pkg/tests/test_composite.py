import numpy as np
import pytest
from hypothesis import given

from collapse_sde.composite import (
    CompositeSystem,
    additivity_check,
    coupled_evolution,
    metric_block_structure_check,
    refinement_study,
    separation_defect,
    subsystem_born_check,
)
from collapse_sde.errors import DimensionError
from collapse_sde.identity_oracle import random_hermitian
from collapse_sde.operator_algebra import embed_subsystem_operator, variance
from collapse_sde.projective_geometry import line_element
from collapse_sde.sde_engine import SdeConfig

from strategies import seeds

TWO = np.diag([0.0, 1.0])
HORIZON = SdeConfig(dt=1e-3, t_final=1.0, record_every=1)


def _random_system(r, dims):
    hams = [random_hermitian(r, d) for d in dims]
    parts = [r.standard_normal(d) + 1j * r.standard_normal(d) for d in dims]
    return CompositeSystem.build(hams, parts)


def test_total_hamiltonian_is_sum_of_embeddings(rng):
    sys_ = _random_system(rng, (2, 3))
    expected = sum(embed_subsystem_operator(h, i, sys_.dims).entries
                   for i, h in enumerate(sys_.subsystem_hams))
    assert np.array_equal(sys_.total_ham.entries, expected)
    assert sys_.dims == (2, 3) and sys_.total_ham.dim == 6


def test_part_dimension_mismatch():
    with pytest.raises(DimensionError):
        CompositeSystem.build([TWO, TWO], [[1, 0], [1, 0, 0]])
    sys_ = CompositeSystem.build([TWO, TWO])
    with pytest.raises(DimensionError):
        additivity_check(sys_, [[1, 0]])


@pytest.mark.parametrize("dims", [(2, 2), (2, 3)])
def test_additivity_on_random_product_states(dims):
    r = np.random.default_rng(sum(dims))
    for _ in range(50):
        dH, dV = additivity_check(_random_system(r, dims))
        assert dH < 1e-10 and dV < 1e-10


def test_additivity_eigenvector_parts():
    sys_ = CompositeSystem.build([TWO, np.diag([0.0, 0.5, 1.0])], [[0, 1], [0, 0, 1]])
    assert additivity_check(sys_) == (0.0, 0.0)
    assert variance(sys_.total_ham, sys_.joint_initial) == 0.0


@given(seeds)
def test_line_element_additive(seed):
    r = np.random.default_rng(seed)
    sys_ = _random_system(r, (2, 2) if seed % 2 else (2, 3))
    assert metric_block_structure_check(sys_, rng=r) < 1e-8


def test_single_factor_perturbation_gives_that_factor(rng):
    sys_ = _random_system(rng, (2, 3))
    dz = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    z1 = sys_.initial_parts[1].amplitudes
    eps = 1e-5
    own = (line_element(z1, eps * dz) + line_element(z1, -eps * dz)) / (2 * eps**2)
    assert own > 0.1
    assert metric_block_structure_check(sys_, perturbations=[0, dz]) < 1e-8 * own


def test_zero_perturbation():
    sys_ = CompositeSystem.build([TWO, TWO])
    assert metric_block_structure_check(sys_, perturbations=[0, 0]) == 0.0


def test_single_subsystem_tracks_exactly():
    run = coupled_evolution(CompositeSystem.build([np.diag([0.0, 0.5, 1.0])]), HORIZON, 2)
    assert run.max_divergence < 1e-28


def test_eigenvector_parts_do_not_diverge():
    sys_ = CompositeSystem.build([TWO, TWO], [[1, 0], [0, 1]])
    run = coupled_evolution(sys_, HORIZON, 0)
    assert np.all(run.divergence == 0.0)


def test_separation_defect_values():
    assert separation_defect(CompositeSystem.build([TWO, TWO])) == pytest.approx(0.125)
    assert separation_defect(CompositeSystem.build([TWO, TWO], [[1, 0], [1, 1]])) == 0.0
    assert separation_defect(CompositeSystem.build([TWO])) == 0.0


def test_short_time_divergence_follows_ito_defect():
    """Mean joint-vs-product infidelity grows like (defect * t)^2."""
    sys_ = CompositeSystem.build([TWO, TWO])
    cfg = SdeConfig(dt=1e-4, t_final=0.05, record_every=100)
    runs = [coupled_evolution(sys_, cfg, i) for i in range(100)]
    d = separation_defect(sys_)
    for k in range(1, 6):
        t = runs[0].times[k]
        mean = np.mean([r.divergence[k] for r in runs])
        assert mean == pytest.approx((d * t) ** 2, rel=0.1)


def test_shared_noise_beats_independent_noise():
    sys_ = CompositeSystem.build([TWO, TWO])
    shared = [coupled_evolution(sys_, HORIZON, i).max_divergence for i in range(5)]
    indep = [coupled_evolution(sys_, HORIZON, i, shared=False).max_divergence for i in range(5)]
    assert np.mean(indep) > 10 * np.mean(shared)


def test_refinement_study_record():
    sys_ = CompositeSystem.build([TWO, TWO])
    study = refinement_study(sys_, HORIZON.replace(t_final=0.2), 3)
    d = study.to_json_dict()
    assert d["n_runs"] == 3 and len(d["max_divergence_fine"]) == 3
    assert study.ratio == pytest.approx(study.coarse.mean() / study.fine.mean())


def test_divergence_csv_layout():
    run = coupled_evolution(CompositeSystem.build([TWO, TWO]), HORIZON.replace(t_final=0.01), 0)
    assert run.csv_header() == ["t", "divergence", "V_0", "V_1"]
    assert run.csv_rows()[0] == [0.0, 0.0, 0.25, 0.25]


def test_marginal_born_eigenvector_and_superposition():
    sys_ = CompositeSystem.build([TWO, TWO], [[0, 1], [1, 1]])
    recs = subsystem_born_check(sys_, SdeConfig(dt=1e-3, t_final=80.0, record_every=500), 2000)
    first, second = recs[0].stats, recs[1].stats
    assert np.array_equal(first.outcome_freqs, [0.0, 1.0])
    assert second.unresolved_fraction < 0.01
    se = np.sqrt(0.25 / 2000)
    assert np.all(np.abs(second.outcome_freqs - 0.5) <= 3 * se)


def test_marginal_born_unitary_limit():
    sys_ = CompositeSystem.build([TWO, TWO])
    recs = subsystem_born_check(sys_, SdeConfig(sigma=0.0, dt=1e-3, t_final=1.0), 20)
    assert all(r.stats.unresolved_count == 20 for r in recs)
