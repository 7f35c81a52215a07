"""Reduced density matrices and the uncontracted NEVPT2 correction.

RDM convention (spin orbitals, interleaved alpha/beta)::

    gamma_k[p1..pk, q1..qk] = <a†_p1 .. a†_pk a_qk .. a_q1>

so ``gamma_2[p, q, r, s] = <a†p a†q a_s a_r>``. Orders 3 and 4 are kept in
compact form: a matrix over ascending index tuples, from which any element
follows by antisymmetry.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp

from .active_space import active_space_integrals
from .integrals import MolecularIntegrals, build_hamiltonian
from .measurement import MeasurementGroup, _parity
from .operators import FermionOperator, PauliString, QubitOperator, jordan_wigner
from .statevector import ShotTable, StateVector, exact_ground_state, sector_indices

log = logging.getLogger(__name__)

DENOMINATOR_CUTOFF = 1e-8


class CorrelationError(ValueError):
    pass


def _annihilate(vec: np.ndarray, n: int, mode: int) -> np.ndarray:
    """``a_mode`` on a full Fock-space vector (JW sign from lower modes)."""
    idx = np.arange(vec.size, dtype=np.int64)
    bit = 1 << (n - 1 - mode)
    occ = (idx & bit) != 0
    sign = 1 - 2 * (np.bitwise_count(idx >> (n - mode)) & 1).astype(np.int64)
    out = np.zeros_like(vec)
    src = idx[occ]
    out[src ^ bit] = sign[occ] * vec[occ]
    return out


def _perm_sign(perm) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


@dataclass
class CompactRdm:
    order: int
    n_modes: int
    combos: list[tuple[int, ...]]
    matrix: np.ndarray

    def index(self) -> dict[tuple[int, ...], int]:
        return {c: i for i, c in enumerate(self.combos)}

    def element(self, ps, qs) -> complex:
        if len(set(ps)) < len(ps) or len(set(qs)) < len(qs):
            return 0.0
        sp_, sq_ = np.argsort(ps), np.argsort(qs)
        lookup = self.index()
        i = lookup[tuple(np.asarray(ps)[sp_])]
        j = lookup[tuple(np.asarray(qs)[sq_])]
        return _perm_sign(sp_) * _perm_sign(sq_) * self.matrix[i, j]

    def tensor(self) -> np.ndarray:
        """Dense rank-2k tensor (memory n^{2k})."""
        k, n = self.order, self.n_modes
        out = np.zeros((n,) * (2 * k), dtype=self.matrix.dtype)
        perms = [(p, _perm_sign(p)) for p in itertools.permutations(range(k))]
        for i, ci in enumerate(self.combos):
            for j, cj in enumerate(self.combos):
                v = self.matrix[i, j]
                if v == 0:
                    continue
                for pa, sa in perms:
                    for pb, sb in perms:
                        out[tuple(ci[x] for x in pa) + tuple(cj[x] for x in pb)] = sa * sb * v
        return out

    def trace(self) -> complex:
        """Full-tensor trace ``sum gamma[P, P]`` (k! times the compact trace)."""
        return factorial(self.order) * np.trace(self.matrix)


@dataclass
class RdmSet:
    n_modes: int
    compact: dict[int, CompactRdm]
    stderr: dict[int, np.ndarray] = field(default_factory=dict)
    flagged: list[tuple] = field(default_factory=list)

    @property
    def order_available(self) -> int:
        return max(self.compact, default=0)

    @property
    def gamma1(self) -> np.ndarray:
        return self.compact[1].matrix

    @property
    def gamma2(self) -> np.ndarray:
        return self.compact[2].tensor()

    @property
    def gamma3(self) -> np.ndarray:
        return self.compact[3].tensor()

    @property
    def gamma4(self) -> np.ndarray:
        return self.compact[4].tensor()

    def spin_summed_gamma1(self) -> np.ndarray:
        g = self.gamma1
        return (g[0::2, 0::2] + g[1::2, 1::2]).real

    def n_electrons(self) -> float:
        return float(np.trace(self.gamma1).real)

    def to_text(self, tol: float = 1e-14) -> str:
        """Sparse text, one ``order p.. q.. value`` line per nonzero compact element."""
        lines = []
        for k in sorted(self.compact):
            rdm = self.compact[k]
            for i, ci in enumerate(rdm.combos):
                for j, cj in enumerate(rdm.combos):
                    v = rdm.matrix[i, j]
                    if abs(v) > tol:
                        idx = " ".join(str(x) for x in ci + cj)
                        val = f"{v.real:.17g}" if not np.iscomplexobj(rdm.matrix) else f"{v.real:.17g} {v.imag:.17g}"
                        lines.append(f"{k} {idx} {val}")
        return f"# n_modes {self.n_modes}\n" + "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RdmSet:
        lines = text.strip().splitlines()
        if not lines or not lines[0].startswith("# n_modes"):
            raise CorrelationError("RDM text lacks '# n_modes' header")
        n = int(lines[0].split()[2])
        entries: dict[int, list] = {}
        for ln in lines[1:]:
            parts = ln.split()
            k = int(parts[0])
            idx = tuple(int(x) for x in parts[1 : 1 + 2 * k])
            vals = [float(x) for x in parts[1 + 2 * k :]]
            entries.setdefault(k, []).append((idx, complex(*vals) if len(vals) == 2 else vals[0]))
        compact = {}
        for k, items in entries.items():
            combos = list(itertools.combinations(range(n), k))
            lookup = {c: i for i, c in enumerate(combos)}
            cplx = any(isinstance(v, complex) for _, v in items)
            mat = np.zeros((len(combos), len(combos)), dtype=complex if cplx else float)
            for idx, v in items:
                mat[lookup[idx[:k]], lookup[idx[k:]]] = v
            compact[k] = CompactRdm(k, n, combos, mat)
        return cls(n, compact)


def rdm_from_statevector(state: StateVector | np.ndarray, order: int = 2) -> RdmSet:
    """Exact RDMs up to ``order`` (1..4) as Gram matrices of annihilated states."""
    if not 1 <= order <= 4:
        raise CorrelationError(f"order {order} outside 1..4")
    psi = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    n = int(round(np.log2(psi.size)))
    real = not np.iscomplexobj(psi) or not np.any(psi.imag)
    psi = psi.real if real else psi
    compact = {}
    # vectors a_qk..a_q1|psi> built incrementally from shorter prefixes
    prev = {(): psi}
    for k in range(1, order + 1):
        cur = {}
        for combo in itertools.combinations(range(n), k):
            cur[combo] = _annihilate(prev[combo[:-1]], n, combo[-1])
        combos = list(cur)
        vmat = np.stack([cur[c] for c in combos], axis=1)
        gram = vmat.conj().T @ vmat
        compact[k] = CompactRdm(k, n, combos, gram.real if real else gram)
        prev = cur
    return RdmSet(n, compact)


def _element_operator(ps, qs) -> FermionOperator:
    ops = [(p, True) for p in ps] + [(q, False) for q in reversed(qs)]
    return FermionOperator.term(*ops)


def rdm_pauli_strings(n_modes: int, order: int) -> dict[tuple, QubitOperator]:
    """Pauli decomposition of every compact element operator up to ``order``."""
    out = {}
    for k in range(1, order + 1):
        combos = list(itertools.combinations(range(n_modes), k))
        for ci in combos:
            for cj in combos:
                out[(k, ci, cj)] = jordan_wigner(_element_operator(ci, cj), n_modes)
    return out


def rdm_observable(n_modes: int, order: int) -> QubitOperator:
    """All Pauli strings needed for RDMs up to ``order`` (unit weights), for grouping."""
    strings = set()
    for op in rdm_pauli_strings(n_modes, order).values():
        strings.update(op)
    return QubitOperator(n_modes, {p: 1.0 for p in strings})


def pauli_means(
    strings, groups: list[MeasurementGroup], dists: list[dict[str, float]]
) -> tuple[dict[PauliString, float], dict[PauliString, float], list[PauliString]]:
    """Mean and standard error of each Pauli string from the first covering group."""
    means, errs, missing = {}, {}, []
    prepared = []
    for g, d in zip(groups, dists):
        keys = list(d)
        bits = np.array([int(b, 2) for b in keys], dtype=np.int64)
        w = np.array([d[k] for k in keys], dtype=float)
        prepared.append((PauliString.from_letters(g.measurement_basis), bits, w, w.sum()))
    for p in strings:
        if p.is_identity():
            means[p], errs[p] = 1.0, 0.0
            continue
        for basis, bits, w, total in prepared:
            if ((p.x ^ basis.x) & p.support) == 0 and ((p.z ^ basis.z) & p.support) == 0:
                if total <= 0:
                    continue
                vals = _parity(bits, p.support)
                m = float(w @ vals / total)
                means[p] = m
                errs[p] = float(np.sqrt(max(1 - m * m, 0.0) / total))
                break
        else:
            missing.append(p)
    return means, errs, missing


def rdm_from_distributions(
    n_modes: int, order: int, groups: list[MeasurementGroup], dists: list[dict[str, float]]
) -> RdmSet:
    """RDMs from per-group outcome distributions (counts or exact probabilities).

    Elements whose strings no group covers (or whose group has no shots) are
    flagged and set to zero. The result is Hermitized as ``(A + A†)/2``.
    """
    decomp = rdm_pauli_strings(n_modes, order)
    strings = set()
    for op in decomp.values():
        strings.update(op)
    means, errs, missing = pauli_means(strings, groups, dists)
    missing = set(missing)
    compact, stderr, flagged = {}, {}, []
    for k in range(1, order + 1):
        combos = list(itertools.combinations(range(n_modes), k))
        mat = np.zeros((len(combos), len(combos)), dtype=complex)
        err = np.zeros(mat.shape)
        for i, ci in enumerate(combos):
            for j, cj in enumerate(combos):
                op = decomp[(k, ci, cj)]
                if any(p in missing for p in op):
                    flagged.append((k, ci, cj))
                    continue
                mat[i, j] = sum(c * means[p] for p, c in op.items())
                err[i, j] = np.sqrt(sum(abs(c) ** 2 * errs[p] ** 2 for p, c in op.items()))
        mat = 0.5 * (mat + mat.conj().T)
        if np.max(np.abs(mat.imag), initial=0.0) < 1e-14:
            mat = mat.real
        compact[k] = CompactRdm(k, n_modes, combos, mat)
        stderr[k] = err
    if flagged:
        log.warning("%d RDM elements lack measurements and were set to zero", len(flagged))
    return RdmSet(n_modes, compact, stderr, flagged)


def rdm_from_shots(
    n_modes: int, order: int, groups: list[MeasurementGroup], tables: list[ShotTable]
) -> RdmSet:
    by_group = {t.group: t for t in tables}
    dists = [by_group[g.index].counts if g.index in by_group else {} for g in groups]
    return rdm_from_distributions(n_modes, order, groups, dists)


# ---------------------------------------------------------------------------
# NEVPT2


@dataclass(frozen=True)
class Perturber:
    block: str
    klass: str
    denominator: float
    contribution: float


@dataclass
class Pt2Result:
    delta_e: float
    reference_energy: float
    zeroth_order_energy: float
    perturbers: list[Perturber] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    orbital_energies: dict[str, list[float]] = field(default_factory=dict)

    def class_totals(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for p in self.perturbers:
            out[p.klass] = out.get(p.klass, 0.0) + p.contribution
        return dict(sorted(out.items()))

    def to_json(self) -> dict:
        return {
            "delta_e": self.delta_e,
            "reference_energy": self.reference_energy,
            "zeroth_order_energy": self.zeroth_order_energy,
            "class_totals": self.class_totals(),
            "n_perturbers": len(self.perturbers),
            "warnings": list(self.warnings),
            "orbital_energies": self.orbital_energies,
        }


def generalized_fock(ints: MolecularIntegrals, core, active, gamma_active: np.ndarray) -> np.ndarray:
    """Spatial Fock matrix with closed core and spin-summed active 1-RDM."""
    h2 = ints.h2
    c = list(core)
    a = list(active)
    f = ints.h1.copy()
    if c:
        f += 2 * np.einsum("pqii->pq", h2[:, :, c][:, :, :, c]) - np.einsum("piiq->pq", h2[:, c][:, :, c])
    if a:
        j = np.einsum("pqtu,tu->pq", h2[:, :, a][:, :, :, a], gamma_active)
        k = np.einsum("ptuq,tu->pq", h2[:, a][:, :, a], gamma_active)
        f += j - 0.5 * k
    return 0.5 * (f + f.T)


def dyall_hamiltonian(
    ints: MolecularIntegrals, n_core: int, n_active: int, eps_core, eps_virt
) -> FermionOperator:
    """Zeroth-order operator for orbitals ordered (core, active, virtual)."""
    core = list(range(n_core))
    active = list(range(n_core, n_core + n_active))
    eff = active_space_integrals(ints, None, core, active)
    terms: dict = {}
    for i, e in zip(core, eps_core):
        for s in (0, 1):
            terms[((2 * i + s, True), (2 * i + s, False))] = e
    for a, e in zip(range(n_core + n_active, ints.n_orb), eps_virt):
        for s in (0, 1):
            terms[((2 * a + s, True), (2 * a + s, False))] = e
    act_op = build_hamiltonian(MolecularIntegrals(n_active, 0, 0, 0.0, eff.h1, eff.h2))
    shift = 2 * n_core
    for t, c in act_op.items():
        key = tuple((m + shift, d) for m, d in t)
        terms[key] = terms.get(key, 0) + c
    return FermionOperator(terms)


def _sparse_real(op: FermionOperator, n_modes: int) -> sp.csr_matrix:
    m = jordan_wigner(op, n_modes).to_sparse()
    return sp.csr_matrix(m.real)


def embed_active_state(psi_act: np.ndarray, n_core: int, n_active: int, n_virt: int) -> np.ndarray:
    """Place an active-space vector into the full space with a filled core."""
    na2, nv2 = 2 * n_active, 2 * n_virt
    full = np.zeros(1 << (2 * (n_core + n_active + n_virt)), dtype=psi_act.dtype)
    core_bits = ((1 << (2 * n_core)) - 1) << (na2 + nv2)
    full[core_bits | (np.arange(psi_act.size, dtype=np.int64) << nv2)] = psi_act
    return full


def reconstruct_active_state(
    eff: MolecularIntegrals, rdms: RdmSet, tol: float = 1e-6
) -> np.ndarray:
    """Ground state of the active Hamiltonian, checked against supplied RDMs."""
    h = jordan_wigner(build_hamiltonian(eff), eff.n_qubits).simplify()
    _, state = exact_ground_state(h, eff.n_elec, eff.ms2)
    ref = rdm_from_statevector(state, min(rdms.order_available, 2))
    for k in ref.compact:
        diff = np.max(np.abs(ref.compact[k].matrix - rdms.compact[k].matrix))
        if diff > tol:
            raise CorrelationError(
                f"reconstructed active state disagrees with supplied {k}-RDM by {diff:.2e} (> {tol:.0e})"
            )
    return state.amplitudes.real


def pt2_correction(
    ints: MolecularIntegrals,
    core,
    active,
    virtual,
    active_state: StateVector | np.ndarray | None = None,
    rdms: RdmSet | None = None,
    cutoff: float = DENOMINATOR_CUTOFF,
) -> Pt2Result:
    """Uncontracted NEVPT2 with the Dyall zeroth-order Hamiltonian.

    ``core``/``active``/``virtual`` partition the orbitals of ``ints``. The active
    reference is either given as a state over ``2 * len(active)`` qubits or
    rebuilt from ``rdms``. When RDMs are given they also define the active
    1-RDM entering the orbital energies.
    """
    core, active, virtual = list(core), list(active), list(virtual)
    if sorted(core + active + virtual) != list(range(ints.n_orb)):
        raise CorrelationError("core/active/virtual must partition all orbitals")
    nc, na, nv = len(core), len(active), len(virtual)
    n_modes = 2 * ints.n_orb
    ordered = ints.permuted(core + active + virtual)
    c_idx, a_idx, v_idx = list(range(nc)), list(range(nc, nc + na)), list(range(nc + na, ints.n_orb))
    eff = active_space_integrals(ordered, None, c_idx, a_idx)

    if active_state is None:
        if rdms is None:
            raise CorrelationError("need an active state or RDMs")
        psi_act = reconstruct_active_state(eff, rdms)
    else:
        psi_act = active_state.amplitudes if isinstance(active_state, StateVector) else np.asarray(active_state)
        if psi_act.size != 1 << (2 * na):
            raise CorrelationError(f"active state has {psi_act.size} amplitudes, expected {1 << (2 * na)}")
        if abs(np.linalg.norm(psi_act) - 1) > 1e-8:
            raise CorrelationError("active state is not normalized")
    if np.iscomplexobj(psi_act) and not np.any(psi_act.imag):
        psi_act = psi_act.real

    gamma = rdms.spin_summed_gamma1() if rdms is not None else rdm_from_statevector(psi_act, 1).spin_summed_gamma1()
    fock = generalized_fock(ordered, c_idx, a_idx, gamma)
    eps_core = [fock[i, i] for i in c_idx]
    eps_virt = [fock[a, a] for a in v_idx]

    h_full = _sparse_real(build_hamiltonian(ordered), n_modes)
    h0_full = _sparse_real(dyall_hamiltonian(ordered, nc, na, eps_core, eps_virt), n_modes)
    psi0 = embed_active_state(psi_act, nc, na, nv)
    e_ref = float(np.vdot(psi0, h_full @ psi0).real)
    e0_raw = float(np.vdot(psi0, h0_full @ psi0).real)
    shift = e_ref - e0_raw
    sigma = h_full @ psi0

    n_elec = ordered.n_elec
    sz_bits = _sz2_of(psi_act, na)
    sector = sector_indices(n_modes, n_elec, sz_bits)
    av_bits = 2 * (na + nv)
    core_part = sector >> av_bits
    virt_part = sector & ((1 << (2 * nv)) - 1)
    full_core = (1 << (2 * nc)) - 1
    perturb = (core_part != full_core) | (virt_part != 0)

    result = Pt2Result(0.0, e_ref, e_ref, orbital_energies={"core": eps_core, "virtual": eps_virt})
    keys = (core_part[perturb] << (2 * nv)) | virt_part[perturb]
    pidx = sector[perturb]
    total = 0.0
    for key in np.unique(keys):
        block = pidx[keys == key]
        rhs = sigma[block]
        if not np.any(np.abs(rhs) > 1e-14):
            continue
        cbits, vbits = int(key) >> (2 * nv), int(key) & ((1 << (2 * nv)) - 1)
        holes = 2 * nc - cbits.bit_count()
        parts = vbits.bit_count()
        klass = f"h{holes}p{parts}"
        label = f"core={cbits:0{2 * nc}b} virt={vbits:0{2 * nv}b}" if nc or nv else "-"
        hb = h0_full[block][:, block].toarray() + shift * np.eye(block.size)
        w, v = np.linalg.eigh(hb)
        nums = v.T @ rhs
        for e_mu, num in zip(w, nums):
            if abs(num) < 1e-14:
                continue
            den = e_mu - e_ref
            if abs(den) < cutoff:
                msg = f"{label}: denominator {den:.2e} below cutoff, perturber skipped"
                log.warning(msg)
                result.warnings.append(msg)
                continue
            contrib = -float(abs(num) ** 2 / den)
            result.perturbers.append(Perturber(label, klass, float(den), contrib))
            total += contrib
    result.delta_e = total
    result.zeroth_order_energy = e_ref
    return result


def _sz2_of(psi_act: np.ndarray, na: int) -> int:
    """Twice S_z of the dominant determinant (the reference is an S_z eigenstate)."""
    idx = int(np.argmax(np.abs(psi_act)))
    n = 2 * na
    amask = sum(1 << (n - 1 - q) for q in range(0, n, 2))
    bmask = sum(1 << (n - 1 - q) for q in range(1, n, 2))
    return (idx & amask).bit_count() - (idx & bmask).bit_count()


def total_energy(e_vqe: float, pt2: Pt2Result | None) -> float:
    return e_vqe + (pt2.delta_e if pt2 is not None else 0.0)
