"""Exact state vectors, Pauli exponentials, diagonalization and shot sampling.

Randomness policy: every stochastic routine takes either a ``numpy.random.Generator``
or an integer seed.  Child streams are derived with :func:`derive_rng`, which keys a
``SeedSequence`` on ``(master_seed, *keys)``; a given key always yields the same
stream no matter how many threads run or in which order groups are processed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import PauliString, QubitOperator, apply_operator, apply_pauli

log = logging.getLogger(__name__)

MAX_QUBITS = 14
NORM_TOL = 1e-10


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass(frozen=True, eq=False)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.n_qubits,):
            raise ValueError(f"expected {1 << self.n_qubits} amplitudes, got {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm {norm:.3e})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_array(cls, amps, normalize: bool = False) -> StateVector:
        amps = np.asarray(amps, dtype=complex)
        n = int(round(np.log2(amps.size)))
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def overlap(self, other: StateVector) -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: StateVector) -> float:
        return abs(self.overlap(other)) ** 2

    def dump(self, tol: float = 0.0) -> str:
        """Debug text: ``index real imag`` per amplitude above ``tol``."""
        lines = []
        for i, a in enumerate(self.amplitudes):
            if abs(a) > tol:
                lines.append(f"{i} {a.real:.17g} {a.imag:.17g}")
        return "\n".join(lines) + "\n"


def fock_state(n_qubits: int, occupation: str) -> StateVector:
    if len(occupation) != n_qubits or set(occupation) - {"0", "1"}:
        raise ValueError(f"occupation {occupation!r} is not a bitstring of length {n_qubits}")
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[int(occupation, 2) if occupation else 0] = 1.0
    return StateVector(n_qubits, amps)


def basis_index(occupation: str) -> int:
    return int(occupation, 2)


def index_to_bitstring(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b") if n_qubits else ""


def apply_pauli_exponential(state: StateVector, p: PauliString, theta: float) -> StateVector:
    """``(cos θ + i sin θ P)|ψ>``, i.e. ``exp(iθP)|ψ>``."""
    if p.n != state.n_qubits:
        raise ValueError("qubit_count mismatch")
    psi = state.amplitudes
    out = np.cos(theta) * psi + 1j * np.sin(theta) * apply_pauli(p, psi)
    return StateVector(state.n_qubits, out)


def _check_hermitian(op: QubitOperator, tol: float = 1e-10) -> None:
    bad = [c for _, c in op.items() if abs(c.imag) > tol]
    if bad:
        raise ValueError(f"operator is not Hermitian ({len(bad)} complex coefficients)")


def expectation(state: StateVector, op: QubitOperator) -> float:
    if op.n_qubits != state.n_qubits:
        raise ValueError("qubit_count mismatch")
    _check_hermitian(op)
    val = np.vdot(state.amplitudes, apply_operator(op, state.amplitudes))
    if abs(val.imag) > 1e-10:
        log.warning("expectation has imaginary residue %.3e", val.imag)
    return float(val.real)


def expectation_sparse(state: StateVector | np.ndarray, mat: sp.spmatrix) -> float:
    psi = state.amplitudes if isinstance(state, StateVector) else state
    return float(np.vdot(psi, mat @ psi).real)


def sector_indices(n_qubits: int, n_particles: int | None = None, sz2: int | None = None) -> np.ndarray:
    """Basis indices with the given particle number and twice S_z.

    Even qubits are alpha spin orbitals (qubit ``i`` lives on bit ``n - 1 - i``).
    """
    idx = np.arange(1 << n_qubits, dtype=np.int64)
    keep = np.ones(idx.size, dtype=bool)
    if n_particles is not None:
        keep &= np.bitwise_count(idx) == n_particles
    if sz2 is not None:
        amask = sum(1 << (n_qubits - 1 - q) for q in range(0, n_qubits, 2))
        bmask = sum(1 << (n_qubits - 1 - q) for q in range(1, n_qubits, 2))
        na = np.bitwise_count(idx & amask).astype(int)
        nb = np.bitwise_count(idx & bmask).astype(int)
        keep &= (na - nb) == sz2
    return idx[keep]


def lowest_eigenpair(mat, dense_limit: int = 2048) -> tuple[float, np.ndarray]:
    dim = mat.shape[0]
    if dim == 0:
        raise ValueError("empty sector")
    if dim <= dense_limit:
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        w, v = np.linalg.eigh(dense)
        return float(w[0]), v[:, 0]
    w, v = spla.eigsh(mat, k=1, which="SA", tol=1e-12)
    return float(w[0]), v[:, 0]


def exact_ground_state(
    op: QubitOperator,
    n_particles: int | None = None,
    sz2: int | None = None,
    max_qubits: int = MAX_QUBITS,
) -> tuple[float, StateVector]:
    """Lowest eigenpair, optionally inside a particle-number / S_z sector."""
    n = op.n_qubits
    if n > max_qubits:
        raise ValueError(f"{n} qubits exceeds the diagonalization cap of {max_qubits}")
    _check_hermitian(op)
    mat = op.to_sparse()
    idx = sector_indices(n, n_particles, sz2)
    sub = mat[idx][:, idx]
    e, vec = lowest_eigenpair(sub)
    amps = np.zeros(1 << n, dtype=complex)
    amps[idx] = vec
    amps /= np.linalg.norm(amps)
    return e, StateVector(n, amps)


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.array([[1, 0], [0, -1j]], dtype=complex)
_BASIS_CHANGE = {"Z": None, "I": None, "X": _H, "Y": _H @ _SDG}


def apply_single_qubit(amps: np.ndarray, n_qubits: int, qubit: int, gate: np.ndarray) -> np.ndarray:
    psi = amps.reshape([2] * n_qubits)
    psi = np.moveaxis(np.tensordot(gate, psi, axes=([1], [qubit])), 0, qubit)
    return psi.reshape(-1)


def rotate_to_basis(state: StateVector, letters: str) -> np.ndarray:
    """Amplitudes after mapping each qubit's X/Y/Z eigenbasis onto Z."""
    if len(letters) != state.n_qubits:
        raise ValueError("basis string length must equal qubit count")
    amps = np.array(state.amplitudes)
    for q, ch in enumerate(letters):
        gate = _BASIS_CHANGE[ch]
        if gate is not None:
            amps = apply_single_qubit(amps, state.n_qubits, q, gate)
    return amps


@dataclass(frozen=True)
class NoiseSpec:
    depolarizing_prob_per_exponential: float = 1e-3
    measurement_flip_prob: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("depolarizing_prob_per_exponential", "measurement_flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def is_noiseless(self) -> bool:
        return self.depolarizing_prob_per_exponential == 0 and self.measurement_flip_prob == 0


@dataclass(frozen=True)
class ShotTable:
    """Bitstring counts for one measurement group."""

    group: int
    counts: dict[str, int] = field(default_factory=dict)
    shots_total: int = 0
    shots_kept: int = 0

    def __post_init__(self):
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("negative count")
        if sum(self.counts.values()) != self.shots_kept or self.shots_kept > self.shots_total:
            raise ValueError("counts must sum to shots_kept <= shots_total")

    @classmethod
    def from_counts(cls, group: int, counts: dict[str, int], shots_total: int | None = None) -> ShotTable:
        counts = {b: int(c) for b, c in sorted(counts.items()) if c > 0}
        kept = sum(counts.values())
        return cls(group, counts, kept if shots_total is None else shots_total, kept)

    @property
    def discarded(self) -> int:
        return self.shots_total - self.shots_kept


def sample_bitstrings(
    state: StateVector,
    basis: str,
    shots: int,
    noise: NoiseSpec | None = None,
    seed=None,
    group: int = 0,
) -> ShotTable:
    """Measure ``shots`` times in the per-qubit ``basis`` (``I`` read out as ``Z``).

    Only the readout part of ``noise`` is used here; gate noise belongs to state
    preparation (see :func:`apply_depolarizing`).
    """
    if shots <= 0:
        raise ValueError("shots must be positive")
    rng = _as_rng(noise.seed if seed is None and noise is not None else seed)
    n = state.n_qubits
    probs = np.abs(rotate_to_basis(state, basis)) ** 2
    probs /= probs.sum()
    outcomes = rng.choice(probs.size, size=shots, p=probs)
    flip = 0.0 if noise is None else noise.measurement_flip_prob
    if flip > 0:
        flips = rng.random((shots, n)) < flip
        weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
        outcomes = outcomes ^ (flips.astype(np.int64) @ weights)
    values, counts = np.unique(outcomes, return_counts=True)
    table = {index_to_bitstring(int(v), n): int(c) for v, c in zip(values, counts)}
    return ShotTable.from_counts(group, table, shots)


_PAULIS = ("X", "Y", "Z")


def apply_depolarizing(state: StateVector, prob: float, seed=None, qubits=None) -> StateVector:
    """One stochastic trajectory of single-qubit depolarizing noise.

    Each qubit in ``qubits`` (default: all) independently receives a uniformly
    random non-identity Pauli with probability ``prob``.
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError("prob must lie in [0, 1]")
    if prob == 0.0:
        return state
    rng = _as_rng(seed)
    n = state.n_qubits
    qubits = range(n) if qubits is None else qubits
    hits = [(q, _PAULIS[rng.integers(3)]) for q in qubits if rng.random() < prob]
    if not hits:
        return state
    p = PauliString.from_sparse(n, hits)
    return StateVector(n, apply_pauli(p, state.amplitudes))
