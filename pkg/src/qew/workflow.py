"""End-to-end pipeline: active space, ADAPT-VQE, shots, RDMs, PT2, reaction tables.

Each species writes into its own directory. Every file except ``manifest.json``
is a pure function of the resolved configuration, so two runs with the same
config and seed produce byte-identical artifacts. BLAS is pinned to a single
thread while a run is active; concurrency comes from running species in
parallel.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .active_space import (
    DEFAULT_THRESHOLD,
    ActiveSpaceError,
    ActiveSpaceSpec,
    active_space_integrals,
    cas_partition,
    reduce_with_avas,
    regional_embedding_projectors,
    two_step_reduction,
)
from .adapt import AdaptConfig, AnsatzState, adapt_vqe_loop, build_upccgsd_pool
from .correlation import Pt2Result, pt2_correction, rdm_from_shots, rdm_from_statevector, rdm_observable
from .integrals import MolecularIntegrals, hf_energy, qubit_hamiltonian, read_bundle, read_fcidump, write_fcidump
from .measurement import (
    HARTREE_TO_EV,
    SymmetrySpec,
    allocate_shots,
    bootstrap_statistics,
    estimate_expectation,
    group_pauli_terms,
    measure_groups,
    pmsv_filter,
    tables_to_csv,
)
from .statevector import NoiseSpec, derive_rng, exact_ground_state

log = logging.getLogger(__name__)

SPECIES_ORDER = ("R", "TS", "P")
PT2_MAX_QUBITS = 14
ENV_PREFIX = "QEW_"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed for one species (CLI exit code 3)."""

    def __init__(self, species: str, stage: str, message: str):
        super().__init__(f"{species}/{stage}: {message}")
        self.species = species
        self.stage = stage
        self.message = message

    def to_json(self) -> dict:
        return {"species": self.species, "stage": self.stage, "error": self.message}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SpeciesInput:
    fcidump: Path
    bundle: Path | None = None


@dataclass(frozen=True)
class ActiveSpaceConfig:
    n_electrons: int
    n_orbitals: int
    method: str = "cas"  # cas | avas | re
    threshold: float = DEFAULT_THRESHOLD
    fragment: tuple[int, ...] | None = None
    intermediate: tuple[int, int] | None = None  # (electrons, orbitals) of a first AVAS step
    intermediate_threshold: float = DEFAULT_THRESHOLD


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "statevector"  # statevector | shots
    shots: int = 10000  # per measurement group
    batches: int = 10
    seed: int = 0
    pmsv: bool = True
    depolarizing_prob: float = 0.0
    flip_prob: float = 0.0
    allocation: str = "uniform"
    trajectories: int = 10
    rdm_shots: bool = True


@dataclass(frozen=True)
class RunConfig:
    species: dict[str, SpeciesInput]
    active_space: ActiveSpaceConfig
    backend: BackendConfig = BackendConfig()
    adapt: AdaptConfig = AdaptConfig()
    pt2: bool = True
    rdm_order: int = 2
    output_dir: Path = Path("qew-out")
    workers: int = 1
    source: dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        # execution knobs do not change results, so they stay out of the hash
        science = {k: v for k, v in self.source.items() if k not in ("workers", "output_dir")}
        return hashlib.sha256(json.dumps(science, sort_keys=True).encode()).hexdigest()

    def species_tags(self) -> list[str]:
        known = [t for t in SPECIES_ORDER if t in self.species]
        return known + sorted(t for t in self.species if t not in SPECIES_ORDER)


def data_path(name: str) -> Path:
    """Path of a bundled fixture file."""
    p = resources.files("qew").joinpath("data", name)
    if not p.is_file():
        raise ConfigError(f"no bundled data file {name!r}")
    return Path(str(p))


def _resolve(value: str, base: Path) -> Path:
    if value.startswith("pkg:"):
        return data_path(value[4:])
    p = Path(value)
    return p if p.is_absolute() else base / p


_ENV_KEYS = {
    "SEED": ("backend", "seed", int),
    "SHOTS": ("backend", "shots", int),
    "BATCHES": ("backend", "batches", int),
    "BACKEND": ("backend", "kind", str),
    "PMSV": ("backend", "pmsv", "bool"),
    "FLIP_PROB": ("backend", "flip_prob", float),
    "DEPOLARIZING_PROB": ("backend", "depolarizing_prob", float),
    "THRESHOLD": ("active_space", "threshold", float),
    "PT2": (None, "pt2", "bool"),
    "OUTPUT_DIR": (None, "output_dir", str),
    "WORKERS": (None, "workers", int),
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def apply_env_overrides(raw: dict, env: Mapping[str, str]) -> dict:
    """Overlay ``QEW_*`` variables onto a raw config mapping."""
    out = json.loads(json.dumps(raw))
    for key, (section, name, kind) in _ENV_KEYS.items():
        text = env.get(ENV_PREFIX + key)
        if text is None:
            continue
        try:
            value = _parse_bool(text) if kind == "bool" else kind(text)
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX}{key}: {exc}") from None
        target = out if section is None else out.setdefault(section, {})
        target[name] = value
    return out


def config_from_dict(raw: dict, base: Path = Path(".")) -> RunConfig:
    try:
        return _config_from_dict(raw, base)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, ActiveSpaceError) as exc:
        raise ConfigError(f"invalid config: {exc!r}") from None


def _config_from_dict(raw: dict, base: Path) -> RunConfig:
    known = {"species", "active_space", "backend", "adapt", "pt2", "rdm_order", "output_dir", "workers"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if not raw.get("species"):
        raise ConfigError("config needs at least one species")
    species = {}
    for tag, spec in raw["species"].items():
        if isinstance(spec, str):
            spec = {"fcidump": spec}
        fcidump = _resolve(spec["fcidump"], base)
        bundle = _resolve(spec["bundle"], base) if spec.get("bundle") else None
        for p in (fcidump, bundle):
            if p is not None and not p.is_file():
                raise ConfigError(f"species {tag}: file not found: {p}")
        species[str(tag)] = SpeciesInput(fcidump, bundle)

    a = dict(raw["active_space"])
    if "fragment" in a and a["fragment"] is not None:
        a["fragment"] = tuple(int(i) for i in a["fragment"])
    if "intermediate" in a and a["intermediate"] is not None:
        a["intermediate"] = tuple(int(i) for i in a["intermediate"])
    act = ActiveSpaceConfig(**a)
    ActiveSpaceSpec(act.n_electrons, act.n_orbitals)
    if act.method not in ("cas", "avas", "re"):
        raise ConfigError(f"unknown active-space method {act.method!r}")
    if not 0.0 <= act.threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    if act.method == "re" and not act.fragment:
        raise ConfigError("regional embedding needs a fragment AO list")
    if act.method != "cas" and any(s.bundle is None for s in species.values()):
        raise ConfigError(f"method {act.method!r} needs an orbital bundle for every species")

    backend = BackendConfig(**raw.get("backend", {}))
    if backend.kind not in ("statevector", "shots"):
        raise ConfigError(f"unknown backend {backend.kind!r}")
    if backend.kind == "shots" and (backend.shots <= 0 or backend.batches < 2):
        raise ConfigError("shots backend needs shots > 0 and at least 2 batches")
    NoiseSpec(backend.depolarizing_prob, backend.flip_prob, backend.seed)

    adapt = AdaptConfig(**raw.get("adapt", {}))
    rdm_order = int(raw.get("rdm_order", 2))
    if not 1 <= rdm_order <= 4:
        raise ConfigError("rdm_order must be between 1 and 4")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be positive")
    out = _resolve(str(raw.get("output_dir", "qew-out")), base)
    return RunConfig(species, act, backend, adapt, bool(raw.get("pt2", True)), rdm_order, out, workers, raw)


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw = apply_env_overrides(raw, os.environ if env is None else env)
    return config_from_dict(raw, path.parent)


# ---------------------------------------------------------------------------
# persistence helpers


def _dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _write(directory: Path, name: str, text: str, written: list[str]) -> None:
    (directory / name).write_text(text)
    written.append(name)


def write_manifest(directory: Path, config: RunConfig, files: list[str], extra: dict | None = None) -> None:
    """Provenance record; the only artifact allowed to differ between identical runs."""
    digests = {f: hashlib.sha256((directory / f).read_bytes()).hexdigest() for f in sorted(files)}
    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config_hash": config.config_hash,
        "seed": config.backend.seed,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "files": digests,
    }
    manifest.update(extra or {})
    (directory / "manifest.json").write_text(_dump_json(manifest))


# ---------------------------------------------------------------------------
# species pipeline

STAGES = ("active-space", "vqe", "measure", "pt2")


@dataclass
class ActiveSpaceOutcome:
    integrals: MolecularIntegrals  # effective active-space integrals
    parent: MolecularIntegrals  # orbital basis in which PT2 partitions are defined
    core: list[int]
    active: list[int]
    virtual: list[int]
    report: dict


@dataclass
class SpeciesResult:
    tag: str
    backend: str
    e_hf: float
    e_vqe: float
    e_vqe_pt2: float
    e_vqe_std: float = 0.0
    e_vqe_pt2_std: float = 0.0
    e_statevector: float = 0.0
    e_fci_active: float = 0.0
    pt2_delta: float = 0.0
    n_qubits: int = 0
    n_operators: int = 0
    ansatz_labels: list[str] = field(default_factory=list)
    n_groups: int = 0
    shots_total: int = 0
    shots_kept: int = 0
    vqe_converged: bool = True

    @property
    def delta_sv(self) -> float:
        return self.e_vqe - self.e_statevector

    def to_json(self) -> dict:
        d = asdict(self)
        d["delta_vs_statevector"] = self.delta_sv
        return d

    @classmethod
    def from_json(cls, data: dict) -> SpeciesResult:
        data = {k: v for k, v in data.items() if k != "delta_vs_statevector"}
        return cls(**data)


def _species_seed(config: RunConfig, tag: str, stream: int) -> int:
    idx = config.species_tags().index(tag)
    return int(derive_rng(config.backend.seed, idx, stream).integers(2**31 - 1))


def build_active_space(config: RunConfig, tag: str) -> ActiveSpaceOutcome:
    inp = config.species[tag]
    ints = read_fcidump(inp.fcidump)
    act = config.active_space
    spec = ActiveSpaceSpec(act.n_electrons, act.n_orbitals)
    if act.method == "cas":
        core, active, virt = cas_partition(ints.n_orb, ints.n_elec, spec, ints.ms2)
        eff = active_space_integrals(ints, None, core, active)
        report = {"method": "cas", "core": core, "active": active, "virtual": virt}
        return ActiveSpaceOutcome(eff, ints, core, active, virt, report)

    bundle = read_bundle(inp.bundle)
    vproj = regional_embedding_projectors(bundle, act.fragment) if act.method == "re" else None
    if act.method == "re" and bundle.projector_coeff.shape[1] == 0:
        bundle = bundle.with_projectors(vproj)
    if act.intermediate is not None:
        large = ActiveSpaceSpec(*act.intermediate)
        _, steps = two_step_reduction(
            ints, bundle, large, spec, (act.intermediate_threshold, act.threshold), (vproj, vproj)
        )
        parent_ints = steps[0].integrals if len(steps) == 2 else ints
    else:
        steps = [reduce_with_avas(ints, bundle, spec, act.threshold, vproj)]
        parent_ints = ints
    last = steps[-1]
    res = last.avas
    parent = parent_ints.rotated(res.rotation)
    active = list(res.active)
    report = {
        "method": act.method,
        "steps": [
            {
                "spec": [s.spec.n_active_electrons, s.spec.n_active_orbitals],
                "sigma_occ": [float(v) for v in s.avas.sigma_occ],
                "sigma_virt": [float(v) for v in s.avas.sigma_virt],
                "active": list(s.avas.active),
                "core": list(s.avas.core),
                "frozen_virtual": list(s.avas.frozen_virt),
                "threshold": s.avas.threshold,
            }
            for s in steps
        ],
    }
    return ActiveSpaceOutcome(last.integrals, parent, list(res.core), active, list(res.frozen_virt), report)


def _measure(config: RunConfig, tag: str, h, ansatz: AnsatzState, eff: MolecularIntegrals):
    b = config.backend
    groups = group_pauli_terms(h)
    shots = allocate_shots(groups, b.shots * len(groups), b.allocation)
    noise = NoiseSpec(b.depolarizing_prob, b.flip_prob, b.seed)
    seed = _species_seed(config, tag, 1)
    if b.depolarizing_prob > 0:
        prep = lambda rng: ansatz.noisy_state(b.depolarizing_prob, rng)
        raw = measure_groups(groups, shots, seed, prepare=prep, noise=noise, n_trajectories=b.trajectories)
    else:
        raw = measure_groups(groups, shots, seed, state=ansatz.state(), noise=noise)
    if b.pmsv:
        sym = SymmetrySpec.particle_parities(eff.n_qubits, eff.n_alpha, eff.n_beta)
        kept = [pmsv_filter(t, g, sym) for t, g in zip(raw, groups)]
    else:
        kept = raw
    return groups, raw, kept


def _stage(tag: str, stage: str):
    """Decorator-free context: wrap exceptions from one stage into StageError."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if ev is None or isinstance(ev, StageError):
                return False
            raise StageError(tag, stage, f"{type(ev).__name__}: {ev}") from ev

    return _Ctx()


def run_species(config: RunConfig, tag: str, stop_after: str = "pt2", resume: bool = False) -> SpeciesResult | None:
    """Run one species through ``stop_after`` and persist every intermediate.

    Returns the ``SpeciesResult`` when the PT2 stage (the last one) was reached,
    otherwise None. Failures raise ``StageError`` after writing ``error.json``.
    """
    if stop_after not in STAGES:
        raise ConfigError(f"unknown stage {stop_after!r}")
    if tag not in config.species:
        raise ConfigError(f"species {tag!r} not configured")
    out = config.output_dir / tag
    out.mkdir(parents=True, exist_ok=True)
    err_file = out / "error.json"
    if err_file.exists():
        err_file.unlink()
    written: list[str] = []
    try:
        with threadpool_limits(1):
            result = _run_species(config, tag, stop_after, resume, out, written)
    except StageError as exc:
        err_file.write_text(_dump_json(exc.to_json()))
        write_manifest(out, config, written + ["error.json"], {"species": tag, "status": "failed"})
        raise
    write_manifest(out, config, written, {"species": tag, "status": "ok", "stop_after": stop_after})
    return result


def _run_species(config, tag, stop_after, resume, out: Path, written: list[str]):
    with _stage(tag, "active-space"):
        acs = build_active_space(config, tag)
        eff = acs.integrals
        _write(out, "effective.fcidump", write_fcidump(eff), written)
        report = dict(acs.report, n_active_electrons=eff.n_elec, n_active_orbitals=eff.n_orb)
        _write(out, "active_space.json", _dump_json(report), written)
    if stop_after == "active-space":
        return None

    with _stage(tag, "vqe"):
        h = qubit_hamiltonian(eff)
        ref = eff.hf_occupation()
        e_hf = hf_energy(eff, ref)
        e_fci, _ = exact_ground_state(h, eff.n_elec, eff.ms2)
        ansatz = None
        ansatz_file = out / "ansatz.json"
        if resume and ansatz_file.exists() and (out / "adapt_trace.csv").exists():
            ansatz = AnsatzState.from_json(json.loads(ansatz_file.read_text()))
            if ansatz.reference != ref:
                ansatz = None
        if ansatz is None:
            pool = build_upccgsd_pool(eff.n_orb)
            adapt = adapt_vqe_loop(h, ref, pool, config.adapt)
            ansatz = adapt.ansatz
            _write(out, "adapt_trace.csv", adapt.trace_csv(), written)
            converged = adapt.vqe_converged
        else:
            written.append("adapt_trace.csv")
            converged = True
        _write(out, "ansatz.json", ansatz.dumps() + "\n", written)
        state = ansatz.state()
        e_sv = float(state.amplitudes.real @ (h.to_sparse() @ state.amplitudes).real)
        if e_sv > e_hf + 1e-9:
            raise StageError(tag, "vqe", f"E_VQE {e_sv:.12f} above E_HF {e_hf:.12f}")
    if stop_after == "vqe":
        return None

    e_vqe, e_std = e_sv, 0.0
    n_groups = shots_total = shots_kept = 0
    if config.backend.kind == "shots":
        with _stage(tag, "measure"):
            groups, raw, kept = _measure(config, tag, h, ansatz, eff)
            _write(out, "shots_raw.csv", tables_to_csv(raw), written)
            _write(out, "shots.csv", tables_to_csv(kept), written)
            e_vqe, e_std = bootstrap_statistics(
                {tag: kept},
                config.backend.batches,
                lambda rep: estimate_expectation(groups, rep[tag]).value,
                _species_seed(config, tag, 2),
            )
            n_groups = len(groups)
            shots_total = sum(t.shots_total for t in kept)
            shots_kept = sum(t.shots_kept for t in kept)
            if config.backend.rdm_shots:
                order = min(config.rdm_order, 2)
                rgroups = group_pauli_terms(rdm_observable(eff.n_qubits, order))
                rtables = measure_groups(
                    rgroups, config.backend.shots, _species_seed(config, tag, 3), state=state,
                    noise=NoiseSpec(0.0, config.backend.flip_prob, config.backend.seed),
                )
                rdms = rdm_from_shots(eff.n_qubits, order, rgroups, rtables)
                _write(out, "rdm_shots.txt", rdms.to_text(), written)
    elif stop_after == "measure":
        raise ConfigError("the measure stage needs the shots backend")
    if stop_after == "measure":
        return None

    with _stage(tag, "pt2"):
        rdms = rdm_from_statevector(state, config.rdm_order)
        _write(out, "rdm.txt", rdms.to_text(), written)
        pt2_delta = 0.0
        if config.pt2:
            parent = acs.parent
            if parent.n_qubits > PT2_MAX_QUBITS:
                raise StageError(
                    tag, "pt2", f"PT2 space has {parent.n_qubits} qubits (limit {PT2_MAX_QUBITS}); disable pt2"
                )
            pt2: Pt2Result = pt2_correction(parent, acs.core, acs.active, acs.virtual, active_state=state)
            _write(out, "pt2.json", _dump_json(pt2.to_json()), written)
            pt2_delta = pt2.delta_e

    result = SpeciesResult(
        tag=tag,
        backend=config.backend.kind,
        e_hf=e_hf,
        e_vqe=e_vqe,
        e_vqe_pt2=e_vqe + pt2_delta,
        e_vqe_std=e_std,
        e_vqe_pt2_std=e_std,
        e_statevector=e_sv,
        e_fci_active=float(e_fci),
        pt2_delta=pt2_delta,
        n_qubits=eff.n_qubits,
        n_operators=len(ansatz.operators),
        ansatz_labels=ansatz.labels,
        n_groups=n_groups,
        shots_total=shots_total,
        shots_kept=shots_kept,
        vqe_converged=converged,
    )
    _write(out, "result.json", _dump_json(result.to_json()), written)
    return result


# ---------------------------------------------------------------------------
# reaction level


def compare_to_statevector(shots: Mapping[str, SpeciesResult], statevector: Mapping[str, SpeciesResult]) -> dict:
    """Per-species ``E_method - E_SV`` for matching ansätze."""
    out = {}
    for tag, res in shots.items():
        if tag not in statevector:
            raise ConfigError(f"no statevector result for {tag}")
        sv = statevector[tag]
        if res.ansatz_labels != sv.ansatz_labels:
            raise ConfigError(f"{tag}: ansatz differs between the two runs")
        out[tag] = {"E": res.e_vqe, "E_SV": sv.e_vqe, "delta": res.e_vqe - sv.e_vqe, "stderr": res.e_vqe_std}
    return out


def _differences(energies: Mapping[str, float]) -> tuple[float, float]:
    return energies["TS"] - energies["R"], energies["P"] - energies["R"]


def _load_tables(path: Path):
    from .measurement import tables_from_csv

    return tables_from_csv(path.read_text())


def reaction_report(config: RunConfig, results: Mapping[str, SpeciesResult]) -> dict:
    """Activation/dissociation tables plus per-species statistics."""
    missing = [t for t in SPECIES_ORDER if t not in results]
    if missing:
        raise ConfigError(f"reaction needs species R, TS and P (missing {missing})")
    shots = config.backend.kind == "shots"
    methods = {
        "HF": {t: results[t].e_hf for t in SPECIES_ORDER},
        "VQE": {t: results[t].e_vqe for t in SPECIES_ORDER},
        "VQE+PT2": {t: results[t].e_vqe_pt2 for t in SPECIES_ORDER},
    }
    eps = {"HF": (0.0, 0.0), "VQE": (0.0, 0.0), "VQE+PT2": (0.0, 0.0)}
    if shots:
        # joint bootstrap: every batch resamples all three species at once
        tables, groups = {}, {}
        for t in SPECIES_ORDER:
            d = config.output_dir / t
            tables[t] = _load_tables(d / "shots.csv")
            groups[t] = group_pauli_terms(qubit_hamiltonian(read_fcidump(d / "effective.fcidump")))

        def energies(rep):
            return {t: estimate_expectation(groups[t], rep[t]).value for t in SPECIES_ORDER}

        seed = int(derive_rng(config.backend.seed, 99).integers(2**31 - 1))
        _, ea_std = bootstrap_statistics(tables, config.backend.batches, lambda r: _differences(energies(r))[0], seed)
        _, ed_std = bootstrap_statistics(tables, config.backend.batches, lambda r: _differences(energies(r))[1], seed)
        eps["VQE"] = eps["VQE+PT2"] = (ea_std, ed_std)

    table_s1 = []
    for name, e in methods.items():
        e_a, e_d = _differences(e)
        table_s1.append(
            {
                "method": name,
                "E_a_Ha": e_a,
                "E_d_Ha": e_d,
                "E_a_eV": e_a * HARTREE_TO_EV,
                "E_d_eV": e_d * HARTREE_TO_EV,
                "eps_E_a_Ha": eps[name][0],
                "eps_E_d_Ha": eps[name][1],
                "eps_E_a_eV": eps[name][0] * HARTREE_TO_EV,
                "eps_E_d_eV": eps[name][1] * HARTREE_TO_EV,
            }
        )
    table_s2 = []
    for t in SPECIES_ORDER:
        r = results[t]
        table_s2.append(
            {
                "species": t,
                "E_Ha": r.e_vqe,
                "eps_E_Ha": r.e_vqe_std,
                "E_SV_Ha": r.e_statevector,
                "delta_E_minus_E_SV_Ha": r.delta_sv,
                "delta_E_minus_E_SV_eV": r.delta_sv * HARTREE_TO_EV,
                "E_PT2_Ha": r.e_vqe_pt2,
                "shots_kept": r.shots_kept,
                "shots_total": r.shots_total,
            }
        )
    return {
        "backend": config.backend.kind,
        "bootstrap_batches": config.backend.batches if shots else 0,
        "units": {"energy": "Hartree, with eV copies", "hartree_to_ev": HARTREE_TO_EV},
        "definitions": {"E_a": "E(TS) - E(R)", "E_d": "E(P) - E(R)"},
        "table_s1": table_s1,
        "table_s2": table_s2,
    }


def profile_csv(results: Mapping[str, SpeciesResult]) -> str:
    lines = ["species,HF,VQE,VQE+PT2"]
    base = results["R"]
    for t in SPECIES_ORDER:
        r = results[t]
        lines.append(f"{t},{r.e_hf - base.e_hf!r},{r.e_vqe - base.e_vqe!r},{r.e_vqe_pt2 - base.e_vqe_pt2!r}")
    return "\n".join(lines) + "\n"


@dataclass
class ReactionOutcome:
    results: dict[str, SpeciesResult]
    failures: dict[str, StageError]
    report: dict | None


def run_all_species(config: RunConfig, stop_after: str = "pt2", resume: bool = False, tags=None):
    """Fail-fast per species, continue with the others."""
    tags = list(tags) if tags else config.species_tags()
    results, failures = {}, {}

    def job(tag):
        try:
            return tag, run_species(config, tag, stop_after, resume), None
        except StageError as exc:
            log.error("%s", exc)
            return tag, None, exc

    if config.workers > 1 and len(tags) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(job, tags))
    else:
        outcomes = [job(t) for t in tags]
    for tag, res, err in outcomes:
        if err is not None:
            failures[tag] = err
        elif res is not None:
            results[tag] = res
    return results, failures


def run_reaction(config: RunConfig, resume: bool = False) -> ReactionOutcome:
    results, failures = run_all_species(config, "pt2", resume)
    report = None
    if not failures:
        report = reaction_report(config, results)
        out = config.output_dir
        files: list[str] = []
        _write(out, "reaction.json", _dump_json(report), files)
        _write(out, "profile.csv", profile_csv(results), files)
        write_manifest(out, config, files, {"species": config.species_tags()})
    return ReactionOutcome(results, failures, report)


def format_report(report: dict) -> str:
    """Plain-text rendering of a reaction report."""
    lines = [f"backend: {report['backend']}  (bootstrap batches: {report['bootstrap_batches']})", ""]
    lines.append(f"{'method':<9} {'E_a / eV':>12} {'eps':>10} {'E_d / eV':>12} {'eps':>10}")
    for row in report["table_s1"]:
        lines.append(
            f"{row['method']:<9} {row['E_a_eV']:>12.6f} {row['eps_E_a_eV']:>10.6f} "
            f"{row['E_d_eV']:>12.6f} {row['eps_E_d_eV']:>10.6f}"
        )
    lines.append("")
    lines.append(f"{'species':<8} {'E / Ha':>16} {'eps / Ha':>12} {'E - E_SV / Ha':>15}")
    for row in report["table_s2"]:
        lines.append(
            f"{row['species']:<8} {row['E_Ha']:>16.10f} {row['eps_E_Ha']:>12.3e} {row['delta_E_minus_E_SV_Ha']:>15.3e}"
        )
    return "\n".join(lines) + "\n"
