"""Pauli and fermionic operator algebra plus the Jordan-Wigner mapping.

Conventions used throughout the package:

* qubit ``i`` is the ``i``-th letter of a Pauli string and the ``i``-th
  character of an occupation bitstring; in a state vector it is bit
  ``n - 1 - i`` of the basis index (big-endian, so ``"1100"`` is index 12);
* ``|1>`` means the spin orbital is occupied;
* spin orbitals are interleaved, ``2p`` is alpha and ``2p + 1`` is beta.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-12

_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


@dataclass(frozen=True, order=True)
class PauliString:
    """A tensor product of single-qubit Paulis, stored as symplectic bit masks.

    ``x`` and ``z`` hold one bit per qubit (qubit ``i`` at bit ``n - 1 - i``);
    ``Y`` is encoded as ``x = z = 1`` and stands for the Hermitian ``Y``, not ``XZ``.
    """

    n: int
    x: int = 0
    z: int = 0

    @classmethod
    def from_letters(cls, letters: str) -> PauliString:
        n = len(letters)
        x = z = 0
        for i, ch in enumerate(letters.upper()):
            try:
                bx, bz = _LETTER_BITS[ch]
            except KeyError:
                raise ValueError(f"invalid Pauli letter {ch!r}") from None
            shift = n - 1 - i
            x |= bx << shift
            z |= bz << shift
        return cls(n, x, z)

    @classmethod
    def from_sparse(cls, n: int, ops: Iterable[tuple[int, str]]) -> PauliString:
        """Build from ``[(qubit, letter), ...]``; repeated qubits are not allowed."""
        letters = ["I"] * n
        for q, ch in ops:
            if not 0 <= q < n:
                raise ValueError(f"qubit {q} out of range for {n} qubits")
            if letters[q] != "I":
                raise ValueError(f"qubit {q} given twice")
            letters[q] = ch
        return cls.from_letters("".join(letters))

    @classmethod
    def identity(cls, n: int) -> PauliString:
        return cls(n)

    @property
    def qubit_count(self) -> int:
        return self.n

    @property
    def letters(self) -> str:
        out = []
        for i in range(self.n):
            shift = self.n - 1 - i
            bx = (self.x >> shift) & 1
            bz = (self.z >> shift) & 1
            out.append("IZXY"[bx * 2 + bz])
        return "".join(out)

    def letter(self, qubit: int) -> str:
        shift = self.n - 1 - qubit
        return "IZXY"[((self.x >> shift) & 1) * 2 + ((self.z >> shift) & 1)]

    @property
    def support(self) -> int:
        return self.x | self.z

    @property
    def weight(self) -> int:
        return self.support.bit_count()

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def is_diagonal(self) -> bool:
        return self.x == 0

    def label(self) -> str:
        """Sparse label such as ``X0 Z1 Y3`` (empty for the identity)."""
        return " ".join(f"{ch}{i}" for i, ch in enumerate(self.letters) if ch != "I")

    def commutes(self, other: PauliString) -> bool:
        """General (not qubit-wise) commutation."""
        _check_sizes(self, other)
        anti = (self.x & other.z).bit_count() + (self.z & other.x).bit_count()
        return anti % 2 == 0

    def __str__(self) -> str:
        return self.letters

    def __repr__(self) -> str:
        return f"PauliString({self.letters!r})"


def _check_sizes(a: PauliString, b: PauliString) -> None:
    if a.n != b.n:
        raise ValueError(f"qubit_count mismatch: {a.n} vs {b.n}")


_I_POWERS = (1, 1j, -1, -1j)


def pauli_multiply(
    a: PauliString, b: PauliString, phase_a: complex = 1, phase_b: complex = 1
) -> tuple[PauliString, complex]:
    """Product of two (phased) Pauli strings, returned as ``(string, phase)``.

    >>> pauli_multiply(PauliString.from_letters("XI"), PauliString.from_letters("YI"))
    (PauliString('ZI'), 1j)
    """
    _check_sizes(a, b)
    x = a.x ^ b.x
    z = a.z ^ b.z
    # each string is i^{|x&z|} X^x Z^z; moving Z^{z_a} past X^{x_b} costs (-1)^{|z_a & x_b|}
    k = (a.x & a.z).bit_count() + (b.x & b.z).bit_count() - (x & z).bit_count()
    k += 2 * (a.z & b.x).bit_count()
    return PauliString(a.n, x, z), _I_POWERS[k % 4] * phase_a * phase_b


def qubit_wise_commutes(a: PauliString, b: PauliString) -> bool:
    """True iff on every qubit the letters agree or at least one is ``I``."""
    _check_sizes(a, b)
    both = a.support & b.support
    return ((a.x ^ b.x) & both) == 0 and ((a.z ^ b.z) & both) == 0


class QubitOperator:
    """Weighted sum of Pauli strings on a fixed number of qubits.

    Instances are treated as immutable; arithmetic returns new operators.
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, n_qubits: int, terms: Mapping[PauliString, complex] | None = None):
        self.n_qubits = n_qubits
        self._terms: dict[PauliString, complex] = {}
        for p, c in (terms or {}).items():
            if p.n != n_qubits:
                raise ValueError(f"term {p!r} does not act on {n_qubits} qubits")
            self._terms[p] = self._terms.get(p, 0) + complex(c)

    @classmethod
    def from_list(cls, items: Iterable[tuple[str, complex]]) -> QubitOperator:
        """``[("XIZ", 0.5), ...]`` with dense letter strings."""
        items = list(items)
        if not items:
            raise ValueError("cannot infer qubit count from an empty list")
        n = len(items[0][0])
        op = cls(n)
        for letters, c in items:
            p = PauliString.from_letters(letters)
            op._terms[p] = op._terms.get(p, 0) + complex(c)
        return op

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> QubitOperator:
        return cls(n_qubits, {PauliString.identity(n_qubits): coeff})

    @property
    def terms(self) -> dict[PauliString, complex]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[PauliString, complex]]:
        return iter(self._terms.items())

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[PauliString]:
        return iter(self._terms)

    def coefficient(self, p: PauliString) -> complex:
        return self._terms.get(p, 0j)

    def __add__(self, other: QubitOperator | complex) -> QubitOperator:
        if not isinstance(other, QubitOperator):
            other = QubitOperator.identity(self.n_qubits, other)
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit_count mismatch")
        out = QubitOperator(self.n_qubits, self._terms)
        for p, c in other._terms.items():
            out._terms[p] = out._terms.get(p, 0) + c
        return out

    __radd__ = __add__

    def __neg__(self) -> QubitOperator:
        return self * -1

    def __sub__(self, other: QubitOperator | complex) -> QubitOperator:
        return self + (-other)

    def __mul__(self, other: QubitOperator | complex) -> QubitOperator:
        if isinstance(other, QubitOperator):
            if other.n_qubits != self.n_qubits:
                raise ValueError("qubit_count mismatch")
            out: dict[PauliString, complex] = {}
            for pa, ca in self._terms.items():
                for pb, cb in other._terms.items():
                    p, ph = pauli_multiply(pa, pb)
                    out[p] = out.get(p, 0) + ph * ca * cb
            return QubitOperator(self.n_qubits, out)
        return QubitOperator(self.n_qubits, {p: c * other for p, c in self._terms.items()})

    def __rmul__(self, scalar: complex) -> QubitOperator:
        return QubitOperator(self.n_qubits, {p: c * scalar for p, c in self._terms.items()})

    def adjoint(self) -> QubitOperator:
        return QubitOperator(self.n_qubits, {p: c.conjugate() for p, c in self._terms.items()})

    def commutator(self, other: QubitOperator) -> QubitOperator:
        return (self * other - other * self).simplify()

    def simplify(self, tol: float = DEFAULT_TOL) -> QubitOperator:
        return simplify(self, tol)

    def is_hermitian(self, tol: float = DEFAULT_TOL) -> bool:
        return all(abs(c.imag) <= tol for c in self.simplify(tol)._terms.values())

    def real(self) -> QubitOperator:
        return QubitOperator(self.n_qubits, {p: c.real for p, c in self._terms.items()})

    def norm1(self) -> float:
        return float(sum(abs(c) for c in self._terms.values()))

    def constant(self) -> complex:
        return self._terms.get(PauliString.identity(self.n_qubits), 0j)

    def sorted_terms(self) -> list[tuple[PauliString, complex]]:
        """Terms in the canonical order used for text rendering."""
        return sorted(self._terms.items(), key=lambda t: t[0].letters)

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        return "\n".join(f"{c!r} [{p.label()}]" for p, c in self.sorted_terms())

    def __repr__(self) -> str:
        return f"QubitOperator(n_qubits={self.n_qubits}, terms={len(self)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QubitOperator):
            return NotImplemented
        return self.n_qubits == other.n_qubits and self._terms == other._terms

    def isclose(self, other: QubitOperator, tol: float = 1e-10) -> bool:
        diff = (self - other).simplify(tol)
        return len(diff) == 0

    def to_sparse(self) -> sp.csr_matrix:
        return qubit_operator_sparse(self)

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


def simplify(op: QubitOperator, tol: float = DEFAULT_TOL) -> QubitOperator:
    """Merge duplicates and drop terms with ``|c| <= tol``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    kept = {p: c for p, c in op.items() if abs(c) > tol}
    return QubitOperator(op.n_qubits, kept)


def parse_qubit_operator(text: str, n_qubits: int) -> QubitOperator:
    """Inverse of ``str(QubitOperator)``: one ``coeff [X0 Z1]`` line per term."""
    op = QubitOperator(n_qubits)
    text = text.strip()
    if text in ("", "0"):
        return op
    terms: dict[PauliString, complex] = {}
    for line in text.splitlines():
        coeff_txt, _, rest = line.partition("[")
        label = rest.rstrip().rstrip("]")
        ops = [(int(tok[1:]), tok[0]) for tok in label.split()]
        p = PauliString.from_sparse(n_qubits, ops)
        terms[p] = terms.get(p, 0) + complex(coeff_txt.strip().strip("()"))
    return QubitOperator(n_qubits, terms)


def _basis_indices(n: int) -> np.ndarray:
    return np.arange(1 << n, dtype=np.int64)


def pauli_phases(p: PauliString) -> np.ndarray:
    """Vector ``v`` with ``P|b> = v[b] |b ^ p.x>`` for every basis index ``b``."""
    idx = _basis_indices(p.n)
    signs = 1 - 2 * (np.bitwise_count(idx & p.z) & 1).astype(np.int8)
    return signs * _I_POWERS[(p.x & p.z).bit_count() % 4]


def apply_pauli(p: PauliString, psi: np.ndarray) -> np.ndarray:
    idx = _basis_indices(p.n)
    return (pauli_phases(p) * psi)[idx ^ p.x]


def apply_operator(op: QubitOperator, psi: np.ndarray) -> np.ndarray:
    out = np.zeros_like(psi, dtype=complex)
    for p, c in op.items():
        out += c * apply_pauli(p, psi)
    return out


def qubit_operator_sparse(op: QubitOperator) -> sp.csr_matrix:
    dim = 1 << op.n_qubits
    idx = _basis_indices(op.n_qubits)
    rows, cols, data = [], [], []
    for p, c in op.items():
        rows.append(idx ^ p.x)
        cols.append(idx)
        data.append(c * pauli_phases(p))
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    m = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return m.tocsr()


class FermionOperator:
    """Sum of products of fermionic ladder operators.

    Each term is a tuple of ``(mode, dagger)`` pairs read left to right, so
    ``((0, True), (1, False))`` is ``a†_0 a_1``.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[tuple[tuple[int, bool], ...], complex] | None = None):
        self._terms: dict[tuple[tuple[int, bool], ...], complex] = {}
        for t, c in (terms or {}).items():
            key = tuple((int(m), bool(d)) for m, d in t)
            self._terms[key] = self._terms.get(key, 0) + complex(c)

    @classmethod
    def term(cls, *ops: tuple[int, bool], coeff: complex = 1.0) -> FermionOperator:
        return cls({tuple(ops): coeff})

    @classmethod
    def from_string(cls, text: str, coeff: complex = 1.0) -> FermionOperator:
        """OpenFermion-like shorthand: ``"3^ 1"`` is ``a†_3 a_1``."""
        ops = []
        for tok in text.split():
            ops.append((int(tok.rstrip("^")), tok.endswith("^")))
        return cls({tuple(ops): coeff})

    @property
    def terms(self) -> dict[tuple[tuple[int, bool], ...], complex]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def max_mode(self) -> int:
        return max((m for t in self._terms for m, _ in t), default=-1)

    def __add__(self, other: FermionOperator | complex) -> FermionOperator:
        if not isinstance(other, FermionOperator):
            other = FermionOperator({(): other})
        out = FermionOperator(self._terms)
        for t, c in other._terms.items():
            out._terms[t] = out._terms.get(t, 0) + c
        return out

    __radd__ = __add__

    def __neg__(self) -> FermionOperator:
        return self * -1

    def __sub__(self, other: FermionOperator | complex) -> FermionOperator:
        return self + (-other)

    def __mul__(self, other: FermionOperator | complex) -> FermionOperator:
        if isinstance(other, FermionOperator):
            out: dict = {}
            for ta, ca in self._terms.items():
                for tb, cb in other._terms.items():
                    out[ta + tb] = out.get(ta + tb, 0) + ca * cb
            return FermionOperator(out)
        return FermionOperator({t: c * other for t, c in self._terms.items()})

    def __rmul__(self, scalar: complex) -> FermionOperator:
        return self * scalar

    def adjoint(self) -> FermionOperator:
        return FermionOperator(
            {tuple((m, not d) for m, d in reversed(t)): c.conjugate() for t, c in self._terms.items()}
        )

    def normal_ordered(self, tol: float = DEFAULT_TOL) -> FermionOperator:
        """Canonical form: creators left of annihilators, each block sorted by
        descending mode, duplicates merged and tiny terms dropped."""
        out: dict = {}
        for t, c in self._terms.items():
            for nt, nc in _normal_order_term(t).items():
                out[nt] = out.get(nt, 0) + c * nc
        return FermionOperator({t: c for t, c in out.items() if abs(c) > tol})

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        diff = (self - self.adjoint()).normal_ordered(tol)
        return len(diff) == 0

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        lines = []
        for t, c in sorted(self._terms.items()):
            lines.append(f"{c!r} [{' '.join(f'{m}^' if d else str(m) for m, d in t)}]")
        return "\n".join(lines)

    def __repr__(self) -> str:
        return f"FermionOperator(terms={len(self)})"


def _normal_order_term(term: tuple[tuple[int, bool], ...]) -> dict:
    """Bubble sort with anticommutation; returns {normal_term: coeff}."""
    result: dict = {}
    stack = [(list(term), 1.0)]
    while stack:
        ops, coeff = stack.pop()
        swapped = False
        for i in range(len(ops) - 1):
            (m1, d1), (m2, d2) = ops[i], ops[i + 1]
            # target order: creators first (descending mode), then annihilators (descending)
            if (not d1 and d2) or (d1 == d2 and m1 < m2):
                new = ops[:i] + [ops[i + 1], ops[i]] + ops[i + 2 :]
                stack.append((new, -coeff))
                if not d1 and d2 and m1 == m2:
                    stack.append((ops[:i] + ops[i + 2 :], coeff))
                swapped = True
                break
            if d1 == d2 and m1 == m2:
                # a_p a_p = 0
                swapped = True
                break
        if not swapped:
            key = tuple(ops)
            result[key] = result.get(key, 0) + coeff
    return result


@lru_cache(maxsize=None)
def _ladder(mode: int, dagger: bool, n_modes: int) -> tuple[tuple[PauliString, complex], ...]:
    # a_p = Z_0..Z_{p-1} (X_p + iY_p)/2 ; a†_p = Z_0..Z_{p-1} (X_p - iY_p)/2
    zs = [(q, "Z") for q in range(mode)]
    px = PauliString.from_sparse(n_modes, zs + [(mode, "X")])
    py = PauliString.from_sparse(n_modes, zs + [(mode, "Y")])
    return ((px, 0.5), (py, -0.5j if dagger else 0.5j))


def jordan_wigner(op: FermionOperator, n_modes: int) -> QubitOperator:
    """Map a fermionic operator onto ``n_modes`` qubits.

    Raises ``ValueError`` if any mode index is out of range.
    """
    if op.max_mode() >= n_modes:
        raise ValueError(f"mode {op.max_mode()} out of range for {n_modes} modes")
    ident = PauliString.identity(n_modes)
    total: dict[PauliString, complex] = {}
    for term, coeff in op.items():
        acc = {ident: complex(coeff)}
        for mode, dagger in term:
            nxt: dict[PauliString, complex] = {}
            for pa, ca in acc.items():
                for pb, cb in _ladder(mode, dagger, n_modes):
                    p, ph = pauli_multiply(pa, pb)
                    nxt[p] = nxt.get(p, 0) + ph * ca * cb
            acc = {p: c for p, c in nxt.items() if c != 0}
        for p, c in acc.items():
            total[p] = total.get(p, 0) + c
    return simplify(QubitOperator(n_modes, total), 0.0)


def number_operator(n_modes: int, modes: Iterable[int] | None = None) -> FermionOperator:
    modes = range(n_modes) if modes is None else modes
    return FermionOperator({((m, True), (m, False)): 1.0 for m in modes})


def sz_operator(n_modes: int) -> FermionOperator:
    """Total S_z under interleaved ordering (even modes alpha)."""
    return FermionOperator(
        {((m, True), (m, False)): (0.5 if m % 2 == 0 else -0.5) for m in range(n_modes)}
    )


def s_squared_operator(n_modes: int) -> FermionOperator:
    """Total S^2 = S_- S_+ + S_z (S_z + 1) for interleaved spin orbitals."""
    n_spatial = n_modes // 2
    s_plus = FermionOperator({((2 * p, True), (2 * p + 1, False)): 1.0 for p in range(n_spatial)})
    s_minus = s_plus.adjoint()
    sz = sz_operator(n_modes)
    return (s_minus * s_plus + sz * sz + sz).normal_ordered()
