"""Qubit-wise commuting grouping, shot estimation, PMSV post-selection, bootstrap."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .operators import PauliString, QubitOperator, qubit_wise_commutes
from .statevector import (
    NoiseSpec,
    ShotTable,
    StateVector,
    derive_rng,
    rotate_to_basis,
    sample_bitstrings,
)

log = logging.getLogger(__name__)

HARTREE_TO_EV = 27.211386245988

__all__ = [
    "HARTREE_TO_EV",
    "MeasurementGroup",
    "ShotTable",
    "SymmetrySpec",
    "allocate_shots",
    "bootstrap_statistics",
    "energy_differences",
    "estimate_expectation",
    "exact_distributions",
    "group_pauli_terms",
    "measure_groups",
    "pmsv_filter",
]


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementGroup:
    """Terms sharing one product-basis measurement setting."""

    index: int
    terms: tuple[tuple[PauliString, float], ...]
    letters: str

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @property
    def measurement_basis(self) -> str:
        """Letters actually measured; idle qubits are read out in Z."""
        return self.letters.replace("I", "Z")

    def coefficient_weight(self) -> float:
        return float(sum(abs(c) for _, c in self.terms))

    def check(self) -> None:
        for i, (p, _) in enumerate(self.terms):
            for q, _ in self.terms[i + 1 :]:
                if not qubit_wise_commutes(p, q):
                    raise MeasurementError(f"group {self.index}: {p} and {q} do not commute qubit-wise")
            for k, ch in enumerate(p.letters):
                if ch != "I" and ch != self.letters[k]:
                    raise MeasurementError(f"group {self.index}: {p} disagrees with basis {self.letters}")


def _merge_letters(a: str, b: str) -> str:
    return "".join(y if x == "I" else x for x, y in zip(a, b))


def group_pauli_terms(op: QubitOperator) -> list[MeasurementGroup]:
    """Greedy first-fit colouring of the qubit-wise anticompatibility graph.

    Terms are visited by descending |coefficient|, ties broken by the letter
    string, so the grouping is deterministic.
    """
    if len(op) == 0:
        raise MeasurementError("cannot group an empty operator")
    order = sorted(op.items(), key=lambda t: (-abs(t[1]), t[0].letters))
    groups: list[list[tuple[PauliString, complex]]] = []
    letters: list[str] = []
    for p, c in order:
        pl = p.letters
        for g, gl in enumerate(letters):
            if all(a == "I" or b == "I" or a == b for a, b in zip(pl, gl)):
                groups[g].append((p, c))
                letters[g] = _merge_letters(gl, pl)
                break
        else:
            groups.append([(p, c)])
            letters.append(pl)
    out = []
    for g, (members, gl) in enumerate(zip(groups, letters)):
        coeffs = []
        for p, c in members:
            if abs(c.imag) > 1e-12:
                raise MeasurementError(f"term {p} has a complex coefficient")
            coeffs.append((p, float(c.real)))
        out.append(MeasurementGroup(g, tuple(coeffs), gl))
    return out


@dataclass(frozen=True)
class SymmetrySpec:
    """Z-string symmetries with their required eigenvalues (+1 / -1)."""

    symmetries: tuple[tuple[PauliString, int], ...]

    @classmethod
    def particle_parities(cls, n_qubits: int, n_alpha: int, n_beta: int) -> SymmetrySpec:
        """Alpha parity, beta parity and total parity for interleaved ordering."""
        alpha = PauliString.from_sparse(n_qubits, [(q, "Z") for q in range(0, n_qubits, 2)])
        beta = PauliString.from_sparse(n_qubits, [(q, "Z") for q in range(1, n_qubits, 2)])
        total = PauliString.from_sparse(n_qubits, [(q, "Z") for q in range(n_qubits)])
        return cls(
            (
                (alpha, (-1) ** n_alpha),
                (beta, (-1) ** n_beta),
                (total, (-1) ** (n_alpha + n_beta)),
            )
        )

    def verify(self, h: QubitOperator) -> None:
        for s, _ in self.symmetries:
            for p in h:
                if not s.commutes(p):
                    raise MeasurementError(f"symmetry {s} does not commute with term {p}")

    def applicable(self, group: MeasurementGroup) -> tuple[list[tuple[PauliString, int]], list[PauliString]]:
        """Split into symmetries diagonal in the group's basis and skipped ones."""
        basis = PauliString.from_letters(group.measurement_basis)
        ok, skipped = [], []
        for s, v in self.symmetries:
            (ok.append((s, v)) if qubit_wise_commutes(s, basis) else skipped.append(s))
        return ok, skipped


def _parity(bits: np.ndarray, mask: int) -> np.ndarray:
    return 1 - 2 * (np.bitwise_count(bits & mask) & 1).astype(np.int64)


def pmsv_filter(table: ShotTable, group: MeasurementGroup, sym: SymmetrySpec) -> ShotTable:
    """Drop shots whose measured symmetry eigenvalues disagree with the targets."""
    checks, skipped = sym.applicable(group)
    if skipped:
        log.debug("group %d: %d symmetries not diagonal in basis %s", group.index, len(skipped), group.letters)
    if not table.counts:
        return table
    keys = list(table.counts)
    bits = np.array([int(b, 2) for b in keys], dtype=np.int64)
    keep = np.ones(len(keys), dtype=bool)
    for s, v in checks:
        # s is a Z-string; on the measured bits its eigenvalue is a parity
        keep &= _parity(bits, s.z) == v
    kept = {k: table.counts[k] for k, ok in zip(keys, keep) if ok}
    return ShotTable(table.group, kept, table.shots_total, sum(kept.values()))


@dataclass
class EnergyEstimate:
    value: float
    group_values: list[float]
    group_variances: list[float]
    invalid_groups: list[int] = field(default_factory=list)

    @property
    def variance(self) -> float:
        return float(sum(self.group_variances))

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def valid(self) -> bool:
        return not self.invalid_groups


def _group_values(group: MeasurementGroup, bitstrings: list[str]) -> np.ndarray:
    bits = np.array([int(b, 2) for b in bitstrings], dtype=np.int64)
    vals = np.zeros(len(bitstrings))
    for p, c in group.terms:
        vals += c * _parity(bits, p.support)
    return vals


def estimate_from_distributions(
    groups: list[MeasurementGroup], dists: list[Mapping[str, float]]
) -> EnergyEstimate:
    """Estimator over weighted bitstring distributions (counts or probabilities)."""
    if len(groups) != len(dists):
        raise MeasurementError("need exactly one distribution per group")
    values, variances, invalid = [], [], []
    for g, d in zip(groups, dists):
        keys = list(d)
        w = np.array([d[k] for k in keys], dtype=float)
        total = w.sum()
        if total <= 0:
            invalid.append(g.index)
            values.append(0.0)
            variances.append(0.0)
            continue
        v = _group_values(g, keys)
        mean = float(w @ v / total)
        var = float(w @ (v - mean) ** 2 / total)
        values.append(mean)
        variances.append(var / total)
    if invalid:
        log.warning("groups %s have no surviving shots; their terms are excluded", invalid)
    return EnergyEstimate(float(np.sum(values)), values, variances, invalid)


def estimate_expectation(groups: list[MeasurementGroup], tables: list[ShotTable]) -> EnergyEstimate:
    """Sum over terms of coefficient times empirical eigenvalue mean."""
    by_group = {t.group: t for t in tables}
    try:
        dists = [by_group[g.index].counts for g in groups]
    except KeyError as exc:
        raise MeasurementError(f"no shot table for group {exc}") from None
    return estimate_from_distributions(groups, dists)


def exact_distributions(state: StateVector, groups: list[MeasurementGroup]) -> list[dict[str, float]]:
    """Born probabilities per group basis (the infinite-shot limit)."""
    out = []
    n = state.n_qubits
    for g in groups:
        probs = np.abs(rotate_to_basis(state, g.measurement_basis)) ** 2
        nz = np.flatnonzero(probs > 0)
        out.append({format(int(i), f"0{n}b"): float(probs[i]) for i in nz})
    return out


def allocate_shots(groups: list[MeasurementGroup], total: int, weighting: str = "uniform") -> list[int]:
    """Split a shot budget over groups; every group gets at least one shot."""
    if total < len(groups):
        raise MeasurementError(f"budget {total} smaller than group count {len(groups)}")
    if weighting == "uniform":
        w = np.ones(len(groups))
    elif weighting == "coefficients":
        w = np.array([max(g.coefficient_weight(), 1e-12) for g in groups])
    else:
        raise MeasurementError(f"unknown weighting {weighting!r}")
    raw = w / w.sum() * total
    shots = np.maximum(np.floor(raw).astype(int), 1)
    # hand leftovers to the largest remainders, lowest index first on ties
    rem = total - shots.sum()
    order = sorted(range(len(groups)), key=lambda i: (-(raw[i] - np.floor(raw[i])), i))
    for i in order[: max(rem, 0)]:
        shots[i] += 1
    return shots.tolist()


def measure_groups(
    groups: list[MeasurementGroup],
    shots: list[int] | int,
    seed: int,
    state: StateVector | None = None,
    prepare: Callable[[np.random.Generator], StateVector] | None = None,
    noise: NoiseSpec | None = None,
    n_trajectories: int = 10,
) -> list[ShotTable]:
    """Sample every group with its own derived random stream.

    Pass ``state`` for noiseless preparation or ``prepare`` (a callable taking an
    rng and returning one noisy trajectory) when gate noise is on. Shots of a
    group are spread over ``n_trajectories`` independent trajectories.
    """
    if (state is None) == (prepare is None):
        raise MeasurementError("give exactly one of state or prepare")
    if isinstance(shots, int):
        shots = [shots] * len(groups)
    tables = []
    for g, n_shots in zip(groups, shots):
        rng = derive_rng(seed, g.index)
        if state is not None:
            tables.append(sample_bitstrings(state, g.measurement_basis, n_shots, noise, rng, g.index))
            continue
        counts: dict[str, int] = {}
        n_traj = max(1, min(n_trajectories, n_shots))
        split = [n_shots // n_traj + (1 if t < n_shots % n_traj else 0) for t in range(n_traj)]
        for t, s in enumerate(split):
            traj_state = prepare(derive_rng(seed, g.index, 1, t))
            part = sample_bitstrings(traj_state, g.measurement_basis, s, noise, derive_rng(seed, g.index, 2, t), g.index)
            for b, c in part.counts.items():
                counts[b] = counts.get(b, 0) + c
        tables.append(ShotTable.from_counts(g.index, counts, n_shots))
    return tables


def resample_table(table: ShotTable, rng: np.random.Generator) -> ShotTable:
    """Bootstrap replicate: ``shots_kept`` draws with replacement."""
    keys = list(table.counts)
    n = table.shots_kept
    if n == 0:
        return table
    counts = rng.multinomial(n, np.array([table.counts[k] for k in keys], dtype=float) / n)
    return ShotTable(table.group, {k: int(c) for k, c in zip(keys, counts) if c}, table.shots_total, n)


def bootstrap_statistics(
    raw: Mapping,
    batches: int,
    evaluator: Callable[[dict], float],
    seed: int,
    min_shots: int = 2,
) -> tuple[float, float]:
    """Mean and population standard deviation of ``evaluator`` over replicates.

    ``raw`` maps keys to ``ShotTable`` objects or to lists of them (e.g. one
    list per species). Each batch resamples every table with replacement to its
    own size; the evaluator receives a structure shaped like ``raw``.
    """
    if batches < 2:
        raise MeasurementError("need at least two bootstrap batches")
    for tables in raw.values():
        for t in tables if isinstance(tables, (list, tuple)) else [tables]:
            if t.shots_kept < min_shots:
                raise MeasurementError(f"group {t.group} has only {t.shots_kept} shots")
    values = []
    for b in range(batches):
        rng = derive_rng(seed, b)
        replicate = {}
        for key in sorted(raw, key=str):
            tables = raw[key]
            if isinstance(tables, (list, tuple)):
                replicate[key] = [resample_table(t, rng) for t in tables]
            else:
                replicate[key] = resample_table(tables, rng)
        values.append(float(evaluator(replicate)))
    arr = np.array(values)
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass(frozen=True)
class EnergyDifferences:
    e_a: float
    e_d: float

    @property
    def e_a_ev(self) -> float:
        return self.e_a * HARTREE_TO_EV

    @property
    def e_d_ev(self) -> float:
        return self.e_d * HARTREE_TO_EV

    def to_json(self) -> dict:
        return {"E_a_Ha": self.e_a, "E_d_Ha": self.e_d, "E_a_eV": self.e_a_ev, "E_d_eV": self.e_d_ev}


def energy_differences(e_reactant: float, e_ts: float, e_product: float) -> EnergyDifferences:
    """Activation ``E_TS - E_R`` and driving force ``E_P - E_R``."""
    vals = (e_reactant, e_ts, e_product)
    if not all(np.isfinite(v) for v in vals):
        raise MeasurementError("energies must be finite")
    return EnergyDifferences(e_ts - e_reactant, e_product - e_reactant)


def tables_to_csv(tables: list[ShotTable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "bitstring", "count"])
    for t in sorted(tables, key=lambda t: t.group):
        for b in sorted(t.counts):
            w.writerow([t.group, b, t.counts[b]])
    return buf.getvalue()


def tables_from_csv(text: str) -> list[ShotTable]:
    rows = list(csv.DictReader(io.StringIO(text)))
    by_group: dict[int, dict[str, int]] = {}
    for r in rows:
        by_group.setdefault(int(r["group"]), {})[r["bitstring"]] = int(r["count"])
    return [ShotTable.from_counts(g, c) for g, c in sorted(by_group.items())]
