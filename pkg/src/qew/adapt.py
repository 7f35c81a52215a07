"""UpCCGSD operator pool, ADAPT operator selection and the VQE inner loop."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .operators import FermionOperator, QubitOperator, jordan_wigner
from .statevector import StateVector, apply_depolarizing, fock_state

log = logging.getLogger(__name__)


class AdaptError(ValueError):
    pass


def _max_abs(m: sp.spmatrix) -> float:
    m = sp.csr_matrix(m)
    return float(abs(m).max()) if m.nnz else 0.0


class _Component:
    """One anti-Hermitian excitation ``K = T - T†`` with ``T^2 = 0``.

    ``K^3 = -K``, so ``exp(θK) = 1 + sin θ K + (1 - cos θ) K^2`` exactly.
    """

    def __init__(self, op: FermionOperator, n_modes: int):
        mat = jordan_wigner(op, n_modes).to_sparse()
        if _max_abs(mat.imag) > 1e-12:
            raise AdaptError("excitation matrix is not real")
        self.k = sp.csr_matrix(mat.real)
        self.k.eliminate_zeros()
        self.k2 = sp.csr_matrix(self.k @ self.k)
        self.modes = sorted({m for t in op.terms for m, _ in t})

    def expm(self, theta: float, psi: np.ndarray) -> np.ndarray:
        return psi + np.sin(theta) * (self.k @ psi) + (1 - np.cos(theta)) * (self.k2 @ psi)


@dataclass(frozen=True, eq=False)
class PoolOperator:
    """Spin-adapted generator ``G = sum_c K_c`` of mutually commuting components."""

    label: str
    generator: FermionOperator
    components: tuple[FermionOperator, ...]
    n_modes: int

    @cached_property
    def _compiled(self) -> tuple[_Component, ...]:
        return tuple(_Component(c, self.n_modes) for c in self.components)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(sum(c.k for c in self._compiled))

    @property
    def qubits(self) -> list[int]:
        return sorted({q for c in self._compiled for q in range(min(c.modes), max(c.modes) + 1)})

    def apply_exp(self, theta: float, psi: np.ndarray) -> np.ndarray:
        for c in self._compiled:
            psi = c.expm(theta, psi)
        return psi

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    def qubit_operator(self) -> QubitOperator:
        return jordan_wigner(self.generator, self.n_modes).simplify()


def _excitation(creators, annihilators, n_modes) -> FermionOperator:
    t = FermionOperator.term(*[(m, True) for m in creators], *[(m, False) for m in annihilators])
    return t - t.adjoint()


def build_upccgsd_pool(n_spatial_orbitals: int, check_symmetry: bool = True) -> list[PoolOperator]:
    """k=1 UpCCGSD pool: for each spatial pair p<q a spin-adapted single and a
    paired double, doubles first."""
    if n_spatial_orbitals < 1:
        raise AdaptError("need at least one spatial orbital")
    n_modes = 2 * n_spatial_orbitals
    doubles, singles = [], []
    for p in range(n_spatial_orbitals):
        for q in range(p + 1, n_spatial_orbitals):
            pa, pb, qa, qb = 2 * p, 2 * p + 1, 2 * q, 2 * q + 1
            d = _excitation((qa, qb), (pb, pa), n_modes)
            doubles.append(PoolOperator(f"D({p}{p}->{q}{q})", d, (d,), n_modes))
            sa = _excitation((qa,), (pa,), n_modes)
            sb = _excitation((qb,), (pb,), n_modes)
            singles.append(PoolOperator(f"S({p}->{q})", sa + sb, (sa, sb), n_modes))
    pool = doubles + singles
    if check_symmetry and n_modes <= 12:
        for op in pool:
            _check_conserving(op)
    return pool


def _check_conserving(op: PoolOperator) -> None:
    n = op.n_modes
    m = op.matrix.tocoo()
    amask = sum(1 << (n - 1 - q) for q in range(0, n, 2))
    rows, cols = m.row.astype(np.int64), m.col.astype(np.int64)
    same_n = np.bitwise_count(rows) == np.bitwise_count(cols)
    same_a = np.bitwise_count(rows & amask) == np.bitwise_count(cols & amask)
    if not (same_n.all() and same_a.all()):
        raise AdaptError(f"pool operator {op.label} breaks particle number or S_z")


def pool_by_label(pool: list[PoolOperator]) -> dict[str, PoolOperator]:
    return {op.label: op for op in pool}


@dataclass
class AnsatzState:
    """Ordered generators (first element acts first on the reference)."""

    operators: list[PoolOperator]
    parameters: np.ndarray
    reference: str

    def __post_init__(self):
        self.parameters = np.asarray(self.parameters, dtype=float)
        if len(self.operators) != self.parameters.size:
            raise AdaptError("operator and parameter counts differ")
        for op in self.operators:
            if op.n_modes != len(self.reference):
                raise AdaptError(f"{op.label} acts on {op.n_modes} modes, reference has {len(self.reference)}")

    @property
    def n_qubits(self) -> int:
        return len(self.reference)

    @property
    def labels(self) -> list[str]:
        return [op.label for op in self.operators]

    def with_parameters(self, theta) -> AnsatzState:
        return AnsatzState(list(self.operators), np.asarray(theta, dtype=float), self.reference)

    def state(self, theta=None) -> StateVector:
        psi = self.amplitudes(theta)
        return StateVector(self.n_qubits, psi)

    def amplitudes(self, theta=None) -> np.ndarray:
        theta = self.parameters if theta is None else theta
        psi = np.zeros(1 << self.n_qubits)
        psi[int(self.reference, 2)] = 1.0
        for op, t in zip(self.operators, theta):
            psi = op.apply_exp(t, psi)
        return psi

    def noisy_state(self, depolarizing_prob: float, rng: np.random.Generator) -> StateVector:
        """One noise trajectory: depolarize the qubits each generator touches."""
        state = fock_state(self.n_qubits, self.reference)
        for op, t in zip(self.operators, self.parameters):
            state = StateVector(self.n_qubits, op.apply_exp(t, state.amplitudes))
            state = apply_depolarizing(state, depolarizing_prob, rng, op.qubits)
        return state

    def to_json(self) -> dict:
        return {
            "reference": self.reference,
            "labels": self.labels,
            "parameters": [float(t) for t in self.parameters],
        }

    @classmethod
    def from_json(cls, data: dict, pool: list[PoolOperator] | None = None) -> AnsatzState:
        ref = data["reference"]
        pool = pool if pool is not None else build_upccgsd_pool(len(ref) // 2, check_symmetry=False)
        lookup = pool_by_label(pool)
        try:
            ops = [lookup[label] for label in data["labels"]]
        except KeyError as exc:
            raise AdaptError(f"unknown pool label {exc}") from None
        return cls(ops, np.array(data["parameters"], dtype=float), ref)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def hamiltonian_matrix(h: QubitOperator | sp.spmatrix) -> sp.csr_matrix:
    if isinstance(h, QubitOperator):
        if not h.is_hermitian():
            raise AdaptError("Hamiltonian has complex coefficients")
        m = h.to_sparse()
    else:
        m = sp.csr_matrix(h)
    if _max_abs(m.imag) > 1e-12:
        raise AdaptError("Hamiltonian matrix is not real")
    return sp.csr_matrix(m.real)


def adapt_gradient(state: StateVector | np.ndarray, h, op: PoolOperator) -> float:
    """``<ψ|[H, G]|ψ>``, the energy slope of appending ``exp(θG)`` at θ = 0."""
    hm = hamiltonian_matrix(h)
    psi = state.amplitudes if isinstance(state, StateVector) else state
    if np.iscomplexobj(psi) and np.any(psi.imag):
        hpsi = hm @ psi
        return float(2 * np.vdot(hpsi, op.apply(psi)).real)
    psi = np.real(psi)
    return float(2 * (hm @ psi) @ op.apply(psi))


def pool_gradients(psi: np.ndarray, hm: sp.csr_matrix, pool: list[PoolOperator]) -> np.ndarray:
    hpsi = hm @ psi
    return np.array([2 * hpsi @ op.apply(psi) for op in pool])


def energy_and_gradient(ansatz: AnsatzState, hm: sp.csr_matrix, theta) -> tuple[float, np.ndarray]:
    """Energy and exact parameter gradient by a forward/backward sweep."""
    theta = np.asarray(theta, dtype=float)
    psi = ansatz.amplitudes(theta)
    lam = hm @ psi
    energy = float(psi @ lam)
    grad = np.zeros(theta.size)
    for k in range(theta.size - 1, -1, -1):
        op = ansatz.operators[k]
        grad[k] = 2 * lam @ op.apply(psi)
        psi = op.apply_exp(-theta[k], psi)
        lam = op.apply_exp(-theta[k], lam)
    return energy, grad


def energy_at(ansatz: AnsatzState, hm: sp.csr_matrix, theta=None) -> float:
    psi = ansatz.amplitudes(theta)
    return float(psi @ (hm @ psi))


@dataclass(frozen=True)
class AdaptConfig:
    gradient_threshold: float = 1e-5
    max_operators: int = 60
    optimizer_tol: float = 1e-7
    max_iterations: int = 2000
    finite_difference: bool = False

    def __post_init__(self):
        if min(self.gradient_threshold, self.optimizer_tol) <= 0 or min(self.max_operators, self.max_iterations) <= 0:
            raise AdaptError("AdaptConfig values must be positive")


@dataclass
class VqeResult:
    energy: float
    parameters: np.ndarray
    iterations: int
    gradient_norm: float
    converged: bool
    history: list[float] = field(default_factory=list)


def vqe_minimize(ansatz: AnsatzState, h, config: AdaptConfig = AdaptConfig()) -> VqeResult:
    """BFGS over all parameters from ``ansatz.parameters``.

    Returns the best point found; ``converged`` is False (and a warning is
    logged) when the iteration cap is hit before the gradient tolerance.
    """
    hm = hamiltonian_matrix(h)
    theta0 = np.array(ansatz.parameters, dtype=float)
    if theta0.size == 0:
        e = energy_at(ansatz, hm)
        return VqeResult(e, theta0, 0, 0.0, True, [e])
    history = [energy_at(ansatz, hm, theta0)]

    if config.finite_difference:
        fun, jac = (lambda t: energy_at(ansatz, hm, t)), "3-point"
    else:
        fun, jac = (lambda t: energy_and_gradient(ansatz, hm, t)), True

    def record(xk):
        history.append(energy_at(ansatz, hm, xk))

    res = scipy.optimize.minimize(
        fun,
        theta0,
        jac=jac,
        method="BFGS",
        callback=record,
        options={"gtol": config.optimizer_tol, "maxiter": config.max_iterations, "norm": np.inf},
    )
    theta = res.x
    e, g = energy_and_gradient(ansatz, hm, theta)
    if e > history[0]:
        # never hand back something worse than the starting point
        theta, (e, g) = theta0, energy_and_gradient(ansatz, hm, theta0)
    gnorm = float(np.max(np.abs(g)))
    converged = gnorm <= max(config.optimizer_tol, 1e-6) or (res.success and gnorm <= 10 * config.optimizer_tol)
    if not converged:
        log.warning("VQE stopped after %d iterations with |grad|=%.2e (%s)", res.nit, gnorm, res.message)
    return VqeResult(e, theta, int(res.nit), gnorm, converged, history)


@dataclass
class AdaptResult:
    ansatz: AnsatzState
    energies: list[float]
    max_gradients: list[float]
    termination: str
    vqe_converged: bool = True

    @property
    def energy(self) -> float:
        return self.energies[-1]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "n_operators", "label", "energy", "max_gradient"])
        labels = [""] + self.ansatz.labels
        for i, e in enumerate(self.energies):
            g = self.max_gradients[i] if i < len(self.max_gradients) else ""
            w.writerow([i, i, labels[i] if i < len(labels) else "", repr(float(e)), repr(float(g)) if g != "" else ""])
        return buf.getvalue()


def adapt_vqe_loop(
    h,
    reference: str,
    pool: list[PoolOperator],
    config: AdaptConfig = AdaptConfig(),
) -> AdaptResult:
    """Grow the ansatz one operator at a time by largest |gradient|."""
    if not pool:
        raise AdaptError("operator pool is empty")
    hm = hamiltonian_matrix(h)
    ansatz = AnsatzState([], np.zeros(0), reference)
    energies = [energy_at(ansatz, hm)]
    max_grads: list[float] = []
    termination = "max_operators"
    all_converged = True
    while True:
        psi = ansatz.amplitudes()
        grads = np.abs(pool_gradients(psi, hm, pool))
        best = int(np.argmax(grads))  # first index wins ties
        max_grads.append(float(grads[best]))
        if grads[best] < config.gradient_threshold:
            termination = "gradient_converged"
            break
        if len(ansatz.operators) >= config.max_operators:
            termination = "max_operators"
            break
        trial = AnsatzState(ansatz.operators + [pool[best]], np.append(ansatz.parameters, 0.0), reference)
        res = vqe_minimize(trial, hm, config)
        all_converged &= res.converged
        # vqe_minimize never returns a point above its start, which is the previous optimum
        ansatz = trial.with_parameters(res.parameters)
        energies.append(res.energy)
        log.debug("ADAPT %d: %s E=%.12f |g|=%.2e", len(ansatz.operators), pool[best].label, res.energy, grads[best])
    return AdaptResult(ansatz, energies, max_grads, termination, all_converged)


def save_trace(result: AdaptResult, path) -> None:
    with open(path, "w") as f:
        f.write(result.trace_csv())
