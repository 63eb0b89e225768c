import dataclasses

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from collapse_sde.config import (
    ExperimentConfig,
    build_hamiltonian,
    build_state,
    load_config,
    parse_config,
)
from collapse_sde.errors import ConfigError
from collapse_sde.sde_engine import SdeConfig

MINIMAL = "kind: ensemble\nsystem: two_level(1.0)\ninitial_state: uniform\n"


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.sde == SdeConfig()
    assert cfg.sde.dt == 1e-4 and cfg.sde.sigma == 1.0
    assert cfg.n_traj == 1000 and cfg.emit == ("json", "csv") and cfg.threads == 0


@pytest.mark.parametrize("path", ["identities", "trajectory_two_level", "ensemble_two_level",
                                  "ensemble_three_level", "composite_2x2", "control_2x2"])
def test_shipped_configs_roundtrip(path):
    cfg = load_config(f"configs/{path}.yaml")
    assert parse_config(cfg.to_yaml()) == cfg


@given(st.floats(1e-5, 1e-2), st.floats(0.0, 3.0), st.integers(0, 2**63), st.integers(1, 50))
def test_roundtrip_property(dt, sigma, seed, every):
    cfg = parse_config(MINIMAL).replace(
        sde=SdeConfig(dt=dt, sigma=sigma, seed=seed, record_every=every, t_final=1.0))
    assert parse_config(cfg.to_yaml()) == cfg


def test_subcommand_kind_fills_and_checks():
    assert parse_config("", "identities").kind == "identities"
    with pytest.raises(ConfigError, match="does not match"):
        parse_config(MINIMAL, "identities")


@pytest.mark.parametrize("text, match", [
    (MINIMAL + "bogus: 1\nother: 2\n", r"unknown keys: \['bogus', 'other'\]"),
    (MINIMAL + "sde: {step: 0.1}\n", "unknown sde keys"),
    ("kind: ensemble\nsystem: two_level(1.0)\ninitial_state: [1, 0, 0]\n", "initial_state.*system"),
    ("kind: ensemble\nsystem: cubic(3)\n", "valid presets"),
    ("kind: ensemble\ninitial_state: spin_up\n", "valid presets"),
    ("kind: ensemble\ninitial_state: basis(5)\n", "out of range"),
    ("kind: ensemble\nsystem: {matrix: [[0, 1], [2, 0]]}\n", "not Hermitian"),
    ("kind: ensemble\nsde: {dt: -1}\n", "positive"),
    ("kind: ensemble\nsde: {stop_on_collapse: 3}\n", "true/false"),
    ("kind: wobble\n", "kind must be one of"),
    ("kind: composite\nsystem: two_level(1)\n", "subsystems"),
    ("kind: composite\nsubsystems: []\n", "non-empty"),
    ("kind: ensemble\nemit: [json, pdf]\n", "emit"),
    ("kind: [unclosed\n", "malformed"),
    (MINIMAL + "n_traj: many\n", "numeric"),
])
def test_validation_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


@pytest.mark.parametrize("entry, diag", [
    ("two_level(2.5)", [0.0, 2.5]),
    ("diag([0, 0.5, 1])", [0.0, 0.5, 1.0]),
    ("diag(0, 1, 3)", [0.0, 1.0, 3.0]),
])
def test_hamiltonian_presets(entry, diag):
    assert np.allclose(build_hamiltonian(entry).entries, np.diag(diag))


def test_random_preset_is_seeded():
    a = build_hamiltonian("random(4, 7)").entries
    assert np.array_equal(a, build_hamiltonian("random(4, 7)").entries)
    assert not np.array_equal(a, build_hamiltonian("random(4, 8)").entries)
    assert np.linalg.norm(a, 2) == pytest.approx(1.0)


def test_explicit_complex_matrix():
    H = build_hamiltonian({"matrix": [[1, "0.5-1j"], [[0.5, 1.0], -1]]})
    assert H.entries[0, 1] == 0.5 - 1j and H.entries[1, 0] == 0.5 + 1j


@pytest.mark.parametrize("entry, expected", [
    ("uniform", np.ones(3) / np.sqrt(3)),
    ("basis(2)", [0, 0, 1]),
    ("amplitudes([1, 1j, 0])", [1, 1j, 0]),
    ([0, "1+1j", 2], [0, 1 + 1j, 2]),
])
def test_state_presets(entry, expected):
    assert np.allclose(build_state(entry, 3).amplitudes, expected)


def test_resolved_document_is_plain_yaml():
    cfg = load_config("configs/composite_2x2.yaml")
    d = yaml.safe_load(cfg.to_yaml())
    assert d["subsystems"][0] == {"system": "two_level(1.0)", "initial_state": "uniform"}
    assert set(d["sde"]) == {f.name for f in dataclasses.fields(SdeConfig)}


def test_config_is_frozen():
    cfg = parse_config(MINIMAL)
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.n_traj = 5
    assert isinstance(cfg, ExperimentConfig)
