"""Experiment configuration: YAML documents resolved into validated dataclasses.

A document looks like::

    kind: ensemble
    system: two_level(1.0)
    initial_state: uniform
    sde: {sigma: 1.0, dt: 0.001, t_final: 80.0, seed: 0}
    n_traj: 10000
    output_dir: results/two_level
    emit: [json, csv]

Composite kinds replace ``system``/``initial_state`` with a ``subsystems``
list of ``{system, initial_state}`` entries. Hamiltonians are named presets
(``two_level(gap)``, ``diag([...])``, ``random(dim, seed)``) or
``{matrix: [[...], ...]}`` with entries given as numbers, ``"a+bj"`` strings
or ``[re, im]`` pairs. States are ``uniform``, ``basis(k)``,
``amplitudes([...])`` or a plain list of amplitudes.
"""

from __future__ import annotations

import ast
import dataclasses
import re
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .identity_oracle import random_hermitian
from .operator_algebra import HermitianOperator, StateVector
from .sde_engine import SdeConfig

KINDS = ("identities", "single_trajectory", "ensemble", "composite", "negative_control")
EMITS = ("json", "csv")
HAM_PRESETS = ("two_level(gap)", "diag(list)", "random(dim, seed)", "{matrix: [[...]]}")
STATE_PRESETS = ("uniform", "basis(k)", "amplitudes(list)", "[a0, a1, ...]")

_TOP_KEYS = {"kind", "system", "initial_state", "subsystems", "sde", "n_traj", "n_runs",
             "n_draws", "dims", "output_dir", "emit", "threads", "trajectory_index",
             "born_t_final"}
_SUB_KEYS = {"system", "initial_state"}
_SDE_FIELDS = {f.name: f for f in dataclasses.fields(SdeConfig)}

_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*\((.*)\)\s*$")


def _call(entry: str):
    m = _CALL.match(entry)
    if not m:
        return entry.strip(), None
    try:
        args = ast.literal_eval(f"({m.group(2)},)") if m.group(2).strip() else ()
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"cannot parse arguments of {entry!r}") from exc
    return m.group(1), args


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    return complex(v)


def build_hamiltonian(entry) -> HermitianOperator:
    if isinstance(entry, dict):
        if set(entry) != {"matrix"}:
            raise ConfigError(f"explicit Hamiltonian needs exactly the key 'matrix'; valid presets: {HAM_PRESETS}")
        try:
            m = np.array([[_complex(v) for v in row] for row in entry["matrix"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad matrix entry: {exc}") from exc
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"matrix must be square, got shape {m.shape}")
        if not np.allclose(m, m.conj().T, atol=1e-12):
            raise ConfigError("matrix is not Hermitian")
        return HermitianOperator(m)
    if not isinstance(entry, str):
        raise ConfigError(f"invalid Hamiltonian {entry!r}; valid presets: {HAM_PRESETS}")
    name, args = _call(entry)
    try:
        if name == "two_level" and args is not None and len(args) == 1:
            return HermitianOperator(np.diag([0.0, float(args[0])]))
        if name == "diag" and args is not None and len(args) >= 1:
            vals = args[0] if len(args) == 1 and isinstance(args[0], (list, tuple)) else args
            return HermitianOperator(np.diag(np.asarray(vals, dtype=float)))
        if name == "random" and args is not None and len(args) == 2:
            dim, seed = int(args[0]), int(args[1])
            if dim < 2:
                raise ConfigError("random(dim, seed) needs dim >= 2")
            return random_hermitian(np.random.default_rng(seed), dim)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad arguments in {entry!r}: {exc}") from exc
    raise ConfigError(f"invalid Hamiltonian preset {entry!r}; valid presets: {HAM_PRESETS}")


def build_state(entry, dim: int) -> StateVector:
    if isinstance(entry, (list, tuple)):
        amps = entry
    elif isinstance(entry, str):
        name, args = _call(entry)
        if name == "uniform" and args is None:
            return StateVector(np.ones(dim) / np.sqrt(dim))
        if name == "basis" and args is not None and len(args) == 1:
            k = int(args[0])
            if not 0 <= k < dim:
                raise ConfigError(f"basis({k}) out of range for dimension {dim}")
            e = np.zeros(dim, dtype=complex)
            e[k] = 1.0
            return StateVector(e)
        if name == "amplitudes" and args is not None:
            amps = args[0] if len(args) == 1 and isinstance(args[0], (list, tuple)) else args
        else:
            raise ConfigError(f"invalid initial_state preset {entry!r}; valid presets: {STATE_PRESETS}")
    else:
        raise ConfigError(f"invalid initial_state {entry!r}; valid presets: {STATE_PRESETS}")
    try:
        z = np.array([_complex(a) for a in amps])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad amplitude: {exc}") from exc
    if z.size != dim:
        raise ConfigError(f"initial_state has {z.size} amplitudes but system has dimension {dim}")
    if not np.any(z):
        raise ConfigError("initial_state is the zero vector")
    return StateVector(z)


@dataclass(frozen=True)
class Subsystem:
    system: object
    initial_state: object = "uniform"


@dataclass(frozen=True, eq=True)
class ExperimentConfig:
    """Validated experiment. ``system`` and ``initial_state`` keep the
    document's own spelling (preset string, list or mapping) so the resolved
    config reads like the input."""

    kind: str
    system: object = "two_level(1.0)"
    initial_state: object = "uniform"
    subsystems: tuple = ()
    sde: SdeConfig = field(default_factory=SdeConfig)
    n_traj: int = 1000
    n_runs: int = 20
    n_draws: int = 200
    dims: tuple = (1, 2, 3)
    trajectory_index: int = 0
    born_t_final: float = 80.0
    output_dir: str = "results"
    emit: tuple = EMITS
    threads: int = 0

    def hamiltonian(self) -> HermitianOperator:
        return build_hamiltonian(self.system)

    def state(self) -> StateVector:
        return build_state(self.initial_state, self.hamiltonian().dim)

    def parts(self) -> list[tuple[HermitianOperator, StateVector]]:
        out = []
        for s in self.subsystems:
            h = build_hamiltonian(s.system)
            out.append((h, build_state(s.initial_state, h.dim)))
        return out

    def to_dict(self) -> dict:
        """Resolved document; ``parse_config(yaml.safe_dump(cfg.to_dict())) == cfg``."""
        d = {
            "kind": self.kind,
            "sde": dataclasses.asdict(self.sde),
            "output_dir": self.output_dir,
            "emit": list(self.emit),
            "threads": self.threads,
        }
        if self.kind in ("composite", "negative_control"):
            d["subsystems"] = [{"system": _plain(s.system), "initial_state": _plain(s.initial_state)}
                               for s in self.subsystems]
            d["n_runs"] = self.n_runs
            d["n_traj"] = self.n_traj
            d["born_t_final"] = self.born_t_final
        elif self.kind == "identities":
            d["n_draws"] = self.n_draws
            d["dims"] = list(self.dims)
        else:
            d["system"] = _plain(self.system)
            d["initial_state"] = _plain(self.initial_state)
            if self.kind == "ensemble":
                d["n_traj"] = self.n_traj
            else:
                d["trajectory_index"] = self.trajectory_index
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _plain(v):
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _sde(d) -> SdeConfig:
    if d is None:
        return SdeConfig()
    if not isinstance(d, dict):
        raise ConfigError("sde must be a mapping of SdeConfig fields")
    unknown = sorted(set(d) - set(_SDE_FIELDS))
    if unknown:
        raise ConfigError(f"unknown sde keys: {unknown}; valid: {sorted(_SDE_FIELDS)}")
    kw = {}
    for k, v in d.items():
        default = _SDE_FIELDS[k].default
        try:
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ValueError(f"expected true/false, got {v!r}")
                kw[k] = v
            elif isinstance(default, int):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sde.{k}: {exc}") from exc
    try:
        return SdeConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"sde: {exc}") from exc


def config_from_dict(d: dict, kind: str | None = None) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("configuration document must be a mapping")
    unknown = sorted(set(d) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {unknown}; valid: {sorted(_TOP_KEYS)}")
    doc_kind = d.get("kind", kind)
    if kind is not None and doc_kind != kind:
        raise ConfigError(f"config kind {doc_kind!r} does not match requested kind {kind!r}")
    if doc_kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {doc_kind!r}")
    emit = tuple(d.get("emit", EMITS))
    bad = sorted(set(emit) - set(EMITS))
    if bad:
        raise ConfigError(f"unknown emit formats {bad}; valid: {list(EMITS)}")
    kw = dict(kind=doc_kind, sde=_sde(d.get("sde")), emit=emit,
              output_dir=str(d.get("output_dir", "results")))
    try:
        for k in ("n_traj", "n_runs", "n_draws", "trajectory_index", "threads"):
            if k in d:
                kw[k] = int(d[k])
        if "dims" in d:
            kw["dims"] = tuple(int(n) for n in d["dims"])
        if "born_t_final" in d:
            kw["born_t_final"] = float(d["born_t_final"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric value: {exc}") from exc
    composite = doc_kind in ("composite", "negative_control")
    if composite:
        # the marginal Born check is opt-in: it needs a long horizon
        kw.setdefault("n_traj", 0)
        if "system" in d or "initial_state" in d:
            raise ConfigError(f"kind {doc_kind!r} takes 'subsystems', not 'system'/'initial_state'")
        subs = d.get("subsystems")
        if not subs:
            raise ConfigError(f"kind {doc_kind!r} needs a non-empty 'subsystems' list")
        out = []
        for i, s in enumerate(subs):
            if not isinstance(s, dict):
                raise ConfigError(f"subsystems[{i}] must be a mapping")
            extra = sorted(set(s) - _SUB_KEYS)
            if extra or "system" not in s:
                raise ConfigError(f"subsystems[{i}] needs 'system' (and optionally 'initial_state'); got {sorted(s)}")
            out.append(Subsystem(s["system"], s.get("initial_state", "uniform")))
        kw["subsystems"] = tuple(out)
    else:
        if "subsystems" in d:
            raise ConfigError(f"'subsystems' is only valid for composite kinds, not {doc_kind!r}")
        for k in ("system", "initial_state"):
            if k in d:
                kw[k] = d[k]
    cfg = ExperimentConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if cfg.n_traj < 0 or cfg.n_runs < 1 or cfg.n_draws < 1 or cfg.threads < 0:
        raise ConfigError("n_traj must be >= 0; n_runs, n_draws >= 1; threads >= 0")
    if not cfg.born_t_final > cfg.sde.dt:
        raise ConfigError("born_t_final must exceed sde.dt")
    if cfg.kind == "ensemble" and cfg.n_traj < 1:
        raise ConfigError("ensemble needs n_traj >= 1")
    if cfg.kind == "identities":
        if not cfg.dims or min(cfg.dims) < 1:
            raise ConfigError("dims must be a non-empty list of positive integers")
    elif cfg.kind in ("composite", "negative_control"):
        cfg.parts()
    else:
        h = build_hamiltonian(cfg.system)
        try:
            build_state(cfg.initial_state, h.dim)
        except ConfigError as exc:
            raise ConfigError(f"initial_state vs system: {exc}") from exc


def parse_config(text: str, kind: str | None = None) -> ExperimentConfig:
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration document: {exc}") from exc
    return config_from_dict(d if d is not None else {}, kind)


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), kind)
