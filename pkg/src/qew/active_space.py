"""AVAS / Regional-Embedding active-space selection and frozen-core integrals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .integrals import MolecularIntegrals, OrbitalBundle, symmetrize_h2

DEFAULT_THRESHOLD = 0.18
ZERO_SIGMA = 1e-10
COND_LIMIT = 1e12


class ActiveSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class ActiveSpaceSpec:
    n_active_electrons: int
    n_active_orbitals: int

    def __post_init__(self):
        if self.n_active_orbitals < 0 or not 0 <= self.n_active_electrons <= 2 * self.n_active_orbitals:
            raise ActiveSpaceError(f"invalid active space ({self.n_active_electrons}e,{self.n_active_orbitals}o)")

    def __str__(self) -> str:
        return f"({self.n_active_electrons}e,{self.n_active_orbitals}o)"


@dataclass(frozen=True, eq=False)
class AvasResult:
    """Outcome of one AVAS pass.

    ``rotation[:, k]`` expresses new orbital ``k`` in the input MO basis. Index
    sets refer to the rotated orbitals; they partition ``range(n_mo)``.
    """

    sigma_occ: np.ndarray
    sigma_virt: np.ndarray
    rotation: np.ndarray
    active_occ: tuple[int, ...]
    active_virt: tuple[int, ...]
    core: tuple[int, ...]
    frozen_virt: tuple[int, ...]
    threshold: float
    singly_occ: tuple[int, ...] = ()

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(sorted(self.active_occ + self.singly_occ + self.active_virt))

    @property
    def n_active_orbitals(self) -> int:
        return len(self.active)

    @property
    def n_active_electrons(self) -> int:
        return 2 * len(self.active_occ) + len(self.singly_occ)

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "sigma_occ": [float(s) for s in self.sigma_occ],
            "sigma_virt": [float(s) for s in self.sigma_virt],
            "active_occ": list(self.active_occ),
            "active_virt": list(self.active_virt),
            "singly_occ": list(self.singly_occ),
            "core": list(self.core),
            "frozen_virt": list(self.frozen_virt),
            "n_active_electrons": self.n_active_electrons,
            "n_active_orbitals": self.n_active_orbitals,
        }


def orthonormal_projectors(ao_overlap: np.ndarray, projector_coeff: np.ndarray) -> np.ndarray:
    """Löwdin-orthonormalize projector columns in the AO metric."""
    if projector_coeff.shape[1] == 0:
        raise ActiveSpaceError("no projectors supplied")
    sp = projector_coeff.T @ ao_overlap @ projector_coeff
    w, v = np.linalg.eigh(sp)
    if w[0] <= 0 or w[-1] / w[0] > COND_LIMIT:
        raise ActiveSpaceError(f"projector overlap is singular (condition number {w[-1] / max(w[0], 1e-300):.2e})")
    return projector_coeff @ (v / np.sqrt(w)) @ v.T


def projected_overlap(
    bundle: OrbitalBundle, subset: str | Sequence[int], projector_coeff: np.ndarray | None = None
) -> np.ndarray:
    """``S^A_ij = <i|P|j>`` for MOs in ``subset`` ("occupied", "virtual" or indices)."""
    if isinstance(subset, str):
        if subset == "occupied":
            idx = np.flatnonzero(bundle.mo_occ == 2)
        elif subset == "virtual":
            idx = bundle.virtual()
        else:
            raise ActiveSpaceError(f"unknown subset {subset!r}")
    else:
        idx = np.asarray(subset, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= bundle.n_mo):
            raise ActiveSpaceError("subset index out of range")
    proj = bundle.projector_coeff if projector_coeff is None else projector_coeff
    po = orthonormal_projectors(bundle.ao_overlap, proj)
    m = po.T @ bundle.ao_overlap @ bundle.mo_coeff[:, idx]
    sa = m.T @ m
    return 0.5 * (sa + sa.T)


def avas_rotate(overlap: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose ``S^A``; eigenvalues descending, ties kept in solver order."""
    overlap = np.asarray(overlap, dtype=float)
    if overlap.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    if np.max(np.abs(overlap - overlap.T)) > 1e-8:
        raise ActiveSpaceError("projected overlap is not symmetric")
    w, u = np.linalg.eigh(0.5 * (overlap + overlap.T))
    order = np.argsort(-w, kind="stable")
    return w[order], u[:, order]


def select_active(
    sigma_occ: Sequence[float], sigma_virt: Sequence[float], threshold: float = DEFAULT_THRESHOLD
) -> tuple[list[int], list[int]]:
    """Positions (into the sigma arrays) of orbitals kept active.

    An orbital is active when ``sigma >= threshold``; orbitals with vanishing
    overlap are never active, even at threshold 0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ActiveSpaceError("threshold must lie in [0, 1]")

    def pick(sig):
        sig = np.asarray(sig, dtype=float)
        keep = [i for i in range(sig.size) if sig[i] >= threshold and sig[i] > ZERO_SIGMA]
        return sorted(keep, key=lambda i: (-sig[i], i))

    return pick(sigma_occ), pick(sigma_virt)


def run_avas(
    bundle: OrbitalBundle,
    threshold: float = DEFAULT_THRESHOLD,
    virtual_projectors: np.ndarray | None = None,
    n_occ_active: int | None = None,
    n_virt_active: int | None = None,
) -> AvasResult:
    """Rotate doubly occupied and virtual blocks independently and select.

    Singly occupied orbitals are left untouched and always active. When
    ``n_occ_active`` / ``n_virt_active`` are given, exactly that many of the
    highest-overlap orbitals above the threshold are taken from each block.
    """
    docc = np.flatnonzero(bundle.mo_occ == 2)
    socc = np.flatnonzero(bundle.mo_occ == 1)
    virt = bundle.virtual()
    s_occ, u_occ = avas_rotate(projected_overlap(bundle, docc))
    s_virt, u_virt = avas_rotate(projected_overlap(bundle, virt, virtual_projectors))
    rot = np.eye(bundle.n_mo)
    rot[np.ix_(docc, docc)] = u_occ
    rot[np.ix_(virt, virt)] = u_virt
    pick_occ, pick_virt = select_active(s_occ, s_virt, threshold)
    for name, picked, want in (("occupied", pick_occ, n_occ_active), ("virtual", pick_virt, n_virt_active)):
        if want is not None:
            if want > len(picked):
                raise ActiveSpaceError(
                    f"only {len(picked)} {name} orbitals pass threshold {threshold}, {want} requested"
                )
            del picked[want:]
    act_occ = tuple(sorted(int(docc[i]) for i in pick_occ))
    act_virt = tuple(sorted(int(virt[i]) for i in pick_virt))
    core = tuple(sorted(set(docc.tolist()) - set(act_occ)))
    frozen = tuple(sorted(set(virt.tolist()) - set(act_virt)))
    return AvasResult(
        sigma_occ=s_occ,
        sigma_virt=s_virt,
        rotation=rot,
        active_occ=act_occ,
        active_virt=act_virt,
        core=core,
        frozen_virt=frozen,
        threshold=threshold,
        singly_occ=tuple(int(i) for i in socc),
    )


def regional_embedding_projectors(bundle: OrbitalBundle, fragment_ao_indices: Sequence[int]) -> np.ndarray:
    """Fragment basis functions as projectors: columns of the AO identity."""
    idx = list(fragment_ao_indices)
    if not idx:
        raise ActiveSpaceError("fragment is empty")
    if min(idx) < 0 or max(idx) >= bundle.n_ao or len(set(idx)) != len(idx):
        raise ActiveSpaceError("invalid fragment AO indices")
    return np.eye(bundle.n_ao)[:, idx]


def run_regional_embedding(
    bundle: OrbitalBundle, fragment_ao_indices: Sequence[int], threshold: float = DEFAULT_THRESHOLD, **kw
) -> AvasResult:
    """AVAS with the fragment's computational basis as virtual-space projectors.

    The occupied block uses the bundle's own projectors when present, otherwise
    the fragment basis as well.
    """
    re_proj = regional_embedding_projectors(bundle, fragment_ao_indices)
    if bundle.projector_coeff.shape[1] == 0:
        bundle = bundle.with_projectors(re_proj)
    return run_avas(bundle, threshold, virtual_projectors=re_proj, **kw)


def active_space_integrals(
    ints: MolecularIntegrals,
    rotation: np.ndarray | None,
    core: Sequence[int],
    active: Sequence[int],
) -> MolecularIntegrals:
    """Frozen-core effective integrals over ``active`` (in rotated-orbital indices)."""
    core = list(core)
    active = list(active)
    if set(core) & set(active):
        raise ActiveSpaceError("core and active sets overlap")
    if len(set(active)) != len(active) or len(set(core)) != len(core):
        raise ActiveSpaceError("duplicate orbital indices")
    if any(not 0 <= i < ints.n_orb for i in core + active):
        raise ActiveSpaceError("orbital index out of range")
    n_act_elec = ints.n_elec - 2 * len(core)
    if not 0 <= n_act_elec <= 2 * len(active):
        raise ActiveSpaceError(f"{n_act_elec} active electrons do not fit {len(active)} orbitals")
    if rotation is not None:
        rot = np.asarray(rotation, dtype=float)
        if np.max(np.abs(rot.T @ rot - np.eye(ints.n_orb))) > 1e-8:
            raise ActiveSpaceError("rotation is not orthogonal")
        # only the orbitals actually used need transforming
        cols = rot[:, core + active]
    else:
        cols = np.eye(ints.n_orb)[:, core + active]
    h1 = cols.T @ ints.h1 @ cols
    h2 = np.einsum("pqrs,pi,qj,rk,sl->ijkl", ints.h2, cols, cols, cols, cols, optimize=True)
    nc = len(core)
    c, a = slice(0, nc), slice(nc, nc + len(active))
    e_core = ints.e_core
    if nc:
        jc = np.einsum("iijj->", h2[c, c, c, c])
        kc = np.einsum("ijji->", h2[c, c, c, c])
        e_core += 2 * np.trace(h1[c, c]) + 2 * jc - kc
    heff = h1[a, a] + 2 * np.einsum("tuii->tu", h2[a, a, c, c]) - np.einsum("tiiu->tu", h2[a, c, c, a])
    return MolecularIntegrals(
        n_orb=len(active),
        n_elec=n_act_elec,
        ms2=ints.ms2,
        e_core=float(e_core),
        h1=0.5 * (heff + heff.T),
        h2=symmetrize_h2(h2[a, a, a, a]),
    )


def cas_partition(n_orb: int, n_elec: int, spec: ActiveSpaceSpec, ms2: int = 0) -> tuple[list[int], list[int], list[int]]:
    """Core / active / virtual orbitals around the aufbau Fermi level."""
    n_core2 = n_elec - spec.n_active_electrons
    if n_core2 < 0 or n_core2 % 2:
        raise ActiveSpaceError(f"{spec} cannot be cut from {n_elec} electrons with a closed core")
    n_core = n_core2 // 2
    if n_core + spec.n_active_orbitals > n_orb:
        raise ActiveSpaceError(f"{spec} with {n_core} core orbitals exceeds {n_orb} orbitals")
    core = list(range(n_core))
    active = list(range(n_core, n_core + spec.n_active_orbitals))
    virt = list(range(n_core + spec.n_active_orbitals, n_orb))
    return core, active, virt


@dataclass
class ReductionStep:
    spec: ActiveSpaceSpec
    avas: AvasResult
    integrals: MolecularIntegrals
    bundle: OrbitalBundle
    orbitals: tuple[int, ...] = field(default=())


def reduce_with_avas(
    ints: MolecularIntegrals,
    bundle: OrbitalBundle,
    spec: ActiveSpaceSpec,
    threshold: float = DEFAULT_THRESHOLD,
    virtual_projectors: np.ndarray | None = None,
) -> ReductionStep:
    """One AVAS pass sized to ``spec``; returns integrals plus the sub-bundle."""
    if bundle.n_mo != ints.n_orb:
        raise ActiveSpaceError("bundle and integrals have different orbital counts")
    n_socc = int(np.sum(bundle.mo_occ == 1))
    n_occ = spec.n_active_electrons - n_socc
    if n_occ < 0 or n_occ % 2:
        raise ActiveSpaceError(f"{spec} incompatible with {n_socc} singly occupied orbitals")
    n_occ //= 2
    n_virt = spec.n_active_orbitals - n_occ - n_socc
    if n_virt < 0:
        raise ActiveSpaceError(f"{spec} has fewer orbitals than occupied ones")
    res = run_avas(bundle, threshold, virtual_projectors, n_occ_active=n_occ, n_virt_active=n_virt)
    active = list(res.active)
    eff = active_space_integrals(ints, res.rotation, list(res.core), active)
    new_c = bundle.mo_coeff @ res.rotation[:, active]
    sub = OrbitalBundle(bundle.ao_overlap, new_c, bundle.mo_occ[active], bundle.projector_coeff)
    return ReductionStep(spec, res, eff, sub, tuple(active))


def two_step_reduction(
    ints: MolecularIntegrals,
    bundle: OrbitalBundle,
    large_spec: ActiveSpaceSpec,
    small_spec: ActiveSpaceSpec,
    thresholds: tuple[float, float] = (DEFAULT_THRESHOLD, DEFAULT_THRESHOLD),
    virtual_projectors: tuple[np.ndarray | None, np.ndarray | None] = (None, None),
) -> tuple[MolecularIntegrals, list[ReductionStep]]:
    """Cascade of two AVAS reductions; the second runs inside the first's space."""
    if (
        small_spec.n_active_orbitals > large_spec.n_active_orbitals
        or small_spec.n_active_electrons > large_spec.n_active_electrons
    ):
        raise ActiveSpaceError(f"{small_spec} does not fit inside {large_spec}")
    first = reduce_with_avas(ints, bundle, large_spec, thresholds[0], virtual_projectors[0])
    if small_spec == large_spec:
        return first.integrals, [first]
    second = reduce_with_avas(first.integrals, first.bundle, small_spec, thresholds[1], virtual_projectors[1])
    return second.integrals, [first, second]
