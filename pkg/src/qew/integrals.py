"""Mean-field products: FCIDUMP and orbital-bundle I/O, Hamiltonian construction."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import FermionOperator, QubitOperator, jordan_wigner

SYM_TOL = 1e-10


class IntegralsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MolecularIntegrals:
    """Spatial-orbital integrals; ``h2`` in chemist notation ``(ij|kl)``."""

    n_orb: int
    n_elec: int
    ms2: int
    e_core: float
    h1: np.ndarray
    h2: np.ndarray

    def __post_init__(self):
        h1 = np.asarray(self.h1, dtype=float)
        h2 = np.asarray(self.h2, dtype=float)
        n = self.n_orb
        if h1.shape != (n, n) or h2.shape != (n, n, n, n):
            raise IntegralsError(f"integral shapes {h1.shape}, {h2.shape} do not match n_orb={n}")
        if not 0 <= self.n_elec <= 2 * n:
            raise IntegralsError(f"n_elec={self.n_elec} impossible for {n} orbitals")
        if (self.n_elec + self.ms2) % 2 or abs(self.ms2) > self.n_elec:
            raise IntegralsError(f"ms2={self.ms2} inconsistent with n_elec={self.n_elec}")
        if np.max(np.abs(h1 - h1.T), initial=0.0) > SYM_TOL:
            raise IntegralsError("h1 is not symmetric")
        for perm in _H2_PERMS[1:]:
            if np.max(np.abs(h2 - h2.transpose(perm)), initial=0.0) > SYM_TOL:
                raise IntegralsError("h2 lacks 8-fold permutational symmetry")
        h1.setflags(write=False)
        h2.setflags(write=False)
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)
        object.__setattr__(self, "e_core", float(self.e_core))

    @property
    def n_alpha(self) -> int:
        return (self.n_elec + self.ms2) // 2

    @property
    def n_beta(self) -> int:
        return (self.n_elec - self.ms2) // 2

    @property
    def n_qubits(self) -> int:
        return 2 * self.n_orb

    def hf_occupation(self) -> str:
        """Aufbau occupation bitstring over interleaved spin orbitals."""
        bits = []
        for p in range(self.n_orb):
            bits.append("1" if p < self.n_alpha else "0")
            bits.append("1" if p < self.n_beta else "0")
        return "".join(bits)

    def allclose(self, other: MolecularIntegrals, atol: float = 1e-12) -> bool:
        return (
            self.n_orb == other.n_orb
            and self.n_elec == other.n_elec
            and self.ms2 == other.ms2
            and abs(self.e_core - other.e_core) <= atol
            and np.allclose(self.h1, other.h1, rtol=0, atol=atol)
            and np.allclose(self.h2, other.h2, rtol=0, atol=atol)
        )

    def rotated(self, u: np.ndarray) -> MolecularIntegrals:
        """Integrals in the orbital basis ``phi'_q = sum_p phi_p u[p, q]``."""
        h1 = u.T @ self.h1 @ u
        h2 = np.einsum("pqrs,pi,qj,rk,sl->ijkl", self.h2, u, u, u, u, optimize=True)
        return MolecularIntegrals(self.n_orb, self.n_elec, self.ms2, self.e_core, _sym1(h1), symmetrize_h2(h2))

    def permuted(self, order) -> MolecularIntegrals:
        order = list(order)
        h1 = self.h1[np.ix_(order, order)]
        h2 = self.h2[np.ix_(order, order, order, order)]
        return MolecularIntegrals(self.n_orb, self.n_elec, self.ms2, self.e_core, h1, h2)


_H2_PERMS = [
    (0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2),
    (2, 3, 0, 1), (3, 2, 0, 1), (2, 3, 1, 0), (3, 2, 1, 0),
]


def _sym1(h1: np.ndarray) -> np.ndarray:
    return 0.5 * (h1 + h1.T)


def symmetrize_h2(h2: np.ndarray) -> np.ndarray:
    return sum(h2.transpose(p) for p in _H2_PERMS) / 8.0


def _h2_slots(i, j, k, l):
    return {(i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
            (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i)}


_HEADER_RE = re.compile(r"(NORB|NELEC|MS2)\s*=\s*(-?\d+)", re.IGNORECASE)


def parse_fcidump(text: str) -> MolecularIntegrals:
    """Parse a Molpro-style FCIDUMP (1-based indices, chemist notation)."""
    m = re.search(r"&FCI(.*?)(&END|/)", text, re.IGNORECASE | re.DOTALL)
    if m is None:
        raise IntegralsError("missing &FCI ... &END header")
    fields = {k.upper(): int(v) for k, v in _HEADER_RE.findall(m.group(1))}
    for key in ("NORB", "NELEC"):
        if key not in fields:
            raise IntegralsError(f"header lacks {key}=")
    n = fields["NORB"]
    if n < 0:
        raise IntegralsError("NORB must be non-negative")
    h1 = np.zeros((n, n))
    h2 = np.zeros((n, n, n, n))
    seen1: dict[tuple, float] = {}
    seen2: dict[tuple, float] = {}
    e_core = None
    for lineno, line in enumerate(text[m.end():].splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise IntegralsError(f"data line {lineno}: expected 'value i j k l', got {line!r}")
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError as exc:
            raise IntegralsError(f"data line {lineno}: {exc}") from None
        if any(not 0 <= x <= n for x in (i, j, k, l)):
            raise IntegralsError(f"data line {lineno}: index out of range for NORB={n}")
        if i == j == k == l == 0:
            if e_core is not None and abs(e_core - value) > SYM_TOL:
                raise IntegralsError(f"data line {lineno}: conflicting core energy")
            e_core = value
        elif k == 0 and l == 0 and i > 0 and j > 0:
            _store(seen1, {(i - 1, j - 1), (j - 1, i - 1)}, value, h1, lineno)
        elif i > 0 and j > 0 and k > 0 and l > 0:
            _store(seen2, _h2_slots(i - 1, j - 1, k - 1, l - 1), value, h2, lineno)
        elif j == k == l == 0:
            continue  # orbital energy line, not part of the Hamiltonian
        else:
            raise IntegralsError(f"data line {lineno}: unsupported index pattern {i} {j} {k} {l}")
    return MolecularIntegrals(
        n_orb=n,
        n_elec=fields["NELEC"],
        ms2=fields.get("MS2", 0),
        e_core=0.0 if e_core is None else e_core,
        h1=h1,
        h2=h2,
    )


def _store(seen: dict, slots: set, value: float, arr: np.ndarray, lineno: int) -> None:
    for s in slots:
        if s in seen:
            if abs(seen[s] - value) > SYM_TOL:
                raise IntegralsError(f"data line {lineno}: value conflicts with earlier entry for {s}")
            return
    for s in slots:
        seen[s] = value
        arr[s] = value


def _fmt(v: float) -> str:
    return f"{v: .16e}"


def write_fcidump(ints: MolecularIntegrals) -> str:
    """Canonical FCIDUMP text: one symmetry representative per nonzero value."""
    n = ints.n_orb
    lines = [
        f" &FCI NORB={n},NELEC={ints.n_elec},MS2={ints.ms2},",
        "  ORBSYM=" + "1," * n,
        "  ISYM=1,",
        " &END",
    ]
    for i in range(n):
        for j in range(i + 1):
            for k in range(i + 1):
                for l in range(k + 1 if k < i else j + 1):
                    v = ints.h2[i, j, k, l]
                    if v != 0.0:
                        lines.append(f"{_fmt(v)} {i + 1:3d} {j + 1:3d} {k + 1:3d} {l + 1:3d}")
    for i in range(n):
        for j in range(i + 1):
            v = ints.h1[i, j]
            if v != 0.0:
                lines.append(f"{_fmt(v)} {i + 1:3d} {j + 1:3d}   0   0")
    lines.append(f"{_fmt(ints.e_core)}   0   0   0   0")
    return "\n".join(lines) + "\n"


def read_fcidump(path: str | Path) -> MolecularIntegrals:
    return parse_fcidump(Path(path).read_text())


def save_fcidump(ints: MolecularIntegrals, path: str | Path) -> None:
    Path(path).write_text(write_fcidump(ints))


@dataclass(frozen=True, eq=False)
class OrbitalBundle:
    """AO overlap, MO coefficients, occupations and AO-basis projector columns."""

    ao_overlap: np.ndarray
    mo_coeff: np.ndarray
    mo_occ: np.ndarray
    projector_coeff: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        s = np.asarray(self.ao_overlap, dtype=float)
        c = np.asarray(self.mo_coeff, dtype=float)
        occ = np.asarray(self.mo_occ, dtype=float)
        proj = np.asarray(self.projector_coeff, dtype=float)
        if proj.size == 0:
            proj = np.zeros((s.shape[0], 0))
        if s.shape[0] != s.shape[1] or c.shape[0] != s.shape[0]:
            raise IntegralsError(f"inconsistent AO dimensions {s.shape}, {c.shape}")
        if occ.shape != (c.shape[1],) or proj.shape[0] != s.shape[0]:
            raise IntegralsError("MO_OCC / PROJECTORS dimensions do not match")
        if np.max(np.abs(s - s.T)) > 1e-10 or np.linalg.eigvalsh(s)[0] <= 0:
            raise IntegralsError("AO overlap must be symmetric positive definite")
        if np.max(np.abs(c.T @ s @ c - np.eye(c.shape[1]))) > 1e-8:
            raise IntegralsError("MO coefficients are not orthonormal in the AO metric")
        if not np.all(np.isin(occ, (0.0, 1.0, 2.0))):
            raise IntegralsError("occupations must be 0, 1 or 2")
        for name, arr in (("ao_overlap", s), ("mo_coeff", c), ("mo_occ", occ), ("projector_coeff", proj)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_ao(self) -> int:
        return self.ao_overlap.shape[0]

    @property
    def n_mo(self) -> int:
        return self.mo_coeff.shape[1]

    @property
    def n_elec(self) -> int:
        return int(round(self.mo_occ.sum()))

    def occupied(self) -> np.ndarray:
        return np.flatnonzero(self.mo_occ > 0)

    def virtual(self) -> np.ndarray:
        return np.flatnonzero(self.mo_occ == 0)

    def with_projectors(self, projector_coeff: np.ndarray) -> OrbitalBundle:
        return OrbitalBundle(self.ao_overlap, self.mo_coeff, self.mo_occ, projector_coeff)


_BUNDLE_FIELDS = ("AO_OVERLAP", "MO_COEFF", "MO_OCC", "PROJECTORS")


def write_bundle(bundle: OrbitalBundle) -> str:
    out = []
    for name, arr in zip(_BUNDLE_FIELDS, (bundle.ao_overlap, bundle.mo_coeff, bundle.mo_occ, bundle.projector_coeff)):
        if arr.ndim == 1:
            out.append(f"{name} {arr.shape[0]}")
            out.append(" ".join(_fmt(v) for v in arr))
        else:
            out.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
            out.extend(" ".join(_fmt(v) for v in row) for row in arr)
    return "\n".join(out) + "\n"


def parse_bundle(text: str) -> OrbitalBundle:
    tokens_by_line = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    arrays: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(tokens_by_line):
        head = tokens_by_line[pos]
        name = head[0].upper()
        if name not in _BUNDLE_FIELDS:
            raise IntegralsError(f"unknown bundle field {head[0]!r}")
        dims = [int(d) for d in head[1:]]
        if name == "MO_OCC":
            if len(dims) != 1:
                raise IntegralsError("MO_OCC takes one dimension")
            n_rows, shape = 1, (dims[0],)
        else:
            if len(dims) != 2:
                raise IntegralsError(f"{name} takes two dimensions")
            n_rows, shape = dims[0], tuple(dims)
        rows = tokens_by_line[pos + 1 : pos + 1 + n_rows] if shape[-1] else []
        values = np.array([float(v) for row in rows for v in row])
        if values.size != int(np.prod(shape)):
            raise IntegralsError(f"{name}: expected {np.prod(shape)} values, found {values.size}")
        arrays[name] = values.reshape(shape)
        pos += 1 + len(rows)
    missing = [f for f in _BUNDLE_FIELDS[:3] if f not in arrays]
    if missing:
        raise IntegralsError(f"bundle lacks {', '.join(missing)}")
    return OrbitalBundle(
        arrays["AO_OVERLAP"], arrays["MO_COEFF"], arrays["MO_OCC"], arrays.get("PROJECTORS", np.zeros((0, 0)))
    )


def read_bundle(path: str | Path) -> OrbitalBundle:
    return parse_bundle(Path(path).read_text())


def build_hamiltonian(ints: MolecularIntegrals, tol: float = 0.0) -> FermionOperator:
    """Second-quantized H over interleaved spin orbitals.

    H = e_core + sum h_pq a†p a_q + 1/2 sum (pq|rs) a†p a†r a_s a_q
    """
    n = ints.n_orb
    terms: dict = {}
    if ints.e_core != 0.0:
        terms[()] = ints.e_core
    for p, q in itertools.product(range(n), repeat=2):
        v = ints.h1[p, q]
        if abs(v) <= tol:
            continue
        for s in (0, 1):
            terms[((2 * p + s, True), (2 * q + s, False))] = v
    for p, q, r, s in itertools.product(range(n), repeat=4):
        v = 0.5 * ints.h2[p, q, r, s]
        if abs(v) <= tol:
            continue
        for a, b in itertools.product((0, 1), repeat=2):
            i, j, k, l = 2 * p + a, 2 * q + a, 2 * r + b, 2 * s + b
            if i == k or j == l:
                continue
            key = ((i, True), (k, True), (l, False), (j, False))
            terms[key] = terms.get(key, 0.0) + v
    return FermionOperator(terms)


def qubit_hamiltonian(ints: MolecularIntegrals, tol: float = 1e-12) -> QubitOperator:
    """JW image of :func:`build_hamiltonian` with real coefficients."""
    op = jordan_wigner(build_hamiltonian(ints), ints.n_qubits).simplify(tol)
    if not op.is_hermitian(tol):
        raise IntegralsError("qubit Hamiltonian has complex coefficients")
    return op.real()


def hf_energy(ints: MolecularIntegrals, occupation: str) -> float:
    """Energy of a single determinant given as an interleaved occupation bitstring."""
    if len(occupation) != ints.n_qubits or set(occupation) - {"0", "1"}:
        raise IntegralsError(f"occupation must be a bitstring of length {ints.n_qubits}")
    occ = [k for k, b in enumerate(occupation) if b == "1"]
    if len(occ) != ints.n_elec:
        raise IntegralsError(f"occupation has {len(occ)} electrons, expected {ints.n_elec}")
    e = ints.e_core
    for a in occ:
        e += ints.h1[a // 2, a // 2]
    for a in occ:
        for b in occ:
            p, q = a // 2, b // 2
            e += 0.5 * ints.h2[p, p, q, q]
            if a % 2 == b % 2:
                e -= 0.5 * ints.h2[p, q, q, p]
    return float(e)


def random_integrals(
    n_orb: int,
    n_elec: int,
    seed: int,
    ms2: int = 0,
    n_cholesky: int | None = None,
    spread: float = 1.0,
    coupling: float = 0.3,
    e_core: float = 0.0,
) -> MolecularIntegrals:
    """Molecule-like synthetic integrals.

    One-body part has increasing diagonal orbital energies with weak off-diagonal
    mixing; ``h2`` is a sum of squares of symmetric matrices, so it is positive
    semidefinite as a pair-pair matrix and has full 8-fold symmetry.
    """
    rng = np.random.default_rng(seed)
    n_cholesky = n_cholesky or n_orb + 2
    eps = np.sort(rng.uniform(-1.5, 0.5, n_orb)) * spread
    off = rng.normal(scale=0.1 * coupling, size=(n_orb, n_orb))
    h1 = np.diag(eps) + 0.5 * (off + off.T)
    chol = rng.normal(scale=coupling, size=(n_cholesky, n_orb, n_orb))
    chol = 0.5 * (chol + chol.transpose(0, 2, 1))
    # a dominant diagonal (Coulomb-like) piece keeps the model chemically sane
    chol[0] = np.diag(rng.uniform(0.6, 0.9, n_orb))
    h2 = np.einsum("lpq,lrs->pqrs", chol, chol)
    return MolecularIntegrals(n_orb, n_elec, ms2, e_core, _sym1(h1), symmetrize_h2(h2))
