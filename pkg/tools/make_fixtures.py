"""Regenerate the bundled fixtures under src/qew/data.

Every fixture is synthetic and deterministic. Models are accepted only if their
ground state in the reference sector is a singlet, so that spin-adapted ADAPT
can reach it.

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from qew.integrals import (
    MolecularIntegrals,
    OrbitalBundle,
    qubit_hamiltonian,
    random_integrals,
    save_fcidump,
    symmetrize_h2,
    write_bundle,
)
from qew.operators import jordan_wigner, s_squared_operator
from qew.statevector import exact_ground_state

DATA = Path(__file__).resolve().parents[1] / "src" / "qew" / "data"


def ground_spin(ints: MolecularIntegrals) -> float:
    h = qubit_hamiltonian(ints)
    _, state = exact_ground_state(h, ints.n_elec, ints.ms2)
    s2 = jordan_wigner(s_squared_operator(ints.n_qubits), ints.n_qubits).to_sparse()
    psi = state.amplitudes
    return float(np.vdot(psi, s2 @ psi).real)


def first_singlet(make, seeds=range(100)):
    for seed in seeds:
        ints = make(seed)
        if abs(ground_spin(ints)) < 1e-6:
            return seed, ints
    raise RuntimeError("no singlet model found")


def embedded_model(seed: int, n_core: int, n_act: int, n_virt: int, n_elec: int, ext: float, e_core=0.0):
    """Core / active / virtual blocks with weak cross-block coupling ``ext``."""
    rng = np.random.default_rng(seed)
    n = n_core + n_act + n_virt
    eps = np.concatenate(
        [
            np.sort(rng.uniform(-3.2, -2.8, n_core)),
            np.sort(rng.uniform(-1.0, 0.2, n_act)),
            np.sort(rng.uniform(1.6, 2.2, n_virt)),
        ]
    )
    blocks = [range(0, n_core), range(n_core, n_core + n_act), range(n_core + n_act, n)]
    scale = np.full((n, n), ext)
    for b in blocks:
        scale[np.ix_(list(b), list(b))] = 1.0
    off = rng.normal(scale=0.05, size=(n, n)) * scale
    h1 = np.diag(eps) + 0.5 * (off + off.T)
    chol = rng.normal(scale=0.25, size=(n + 2, n, n)) * scale
    chol = 0.5 * (chol + chol.transpose(0, 2, 1))
    chol[0] = np.diag(rng.uniform(0.6, 0.9, n))
    h2 = symmetrize_h2(np.einsum("lpq,lrs->pqrs", chol, chol))
    return MolecularIntegrals(n, n_elec, 0, e_core, 0.5 * (h1 + h1.T), h2)


def chain_system(n_ao=12, n_elec=8, spacing=1.4, exponent=0.6):
    """A 1-D chain of s-like functions with a Mulliken/Ohno two-electron model."""
    x = np.arange(n_ao) * spacing + 0.15 * np.sin(np.arange(n_ao))
    d = x[:, None] - x[None, :]
    s = np.exp(-0.5 * exponent * d**2)
    alpha = -0.5 - 0.3 * np.cos(np.arange(n_ao) * 1.3)
    h = np.where(np.eye(n_ao, dtype=bool), np.diag(alpha) @ np.ones((n_ao, n_ao)), -0.9 * s)
    h = 0.5 * (h + h.T)
    gamma = 1.0 / np.sqrt(d**2 + 1.2)
    g = 0.25 * (gamma[:, None, :, None] + gamma[:, None, None, :] + gamma[None, :, :, None] + gamma[None, :, None, :])
    eri = s[:, :, None, None] * s[None, None, :, :] * g
    return s, h, symmetrize_h2(eri), n_elec


def rhf(s, h, eri, n_elec, iters=500):
    n_occ = n_elec // 2
    w, v = np.linalg.eigh(s)
    x = v / np.sqrt(w) @ v.T
    e, c = np.linalg.eigh(x @ h @ x)
    c = x @ c
    dm = 2 * c[:, :n_occ] @ c[:, :n_occ].T
    for _ in range(iters):
        f = h + np.einsum("pqrs,rs->pq", eri, dm) - 0.5 * np.einsum("prqs,rs->pq", eri, dm)
        e, cp = np.linalg.eigh(x @ f @ x)
        c = x @ cp
        new = 2 * c[:, :n_occ] @ c[:, :n_occ].T
        if np.max(np.abs(new - dm)) < 1e-12:
            dm = new
            break
        dm = 0.5 * dm + 0.5 * new
    else:
        raise RuntimeError("RHF did not converge")
    return c, e


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    fixtures = {}

    seed, ints = first_singlet(lambda s: random_integrals(2, 2, seed=s, e_core=0.7))
    save_fcidump(ints, DATA / "two_orbital.fcidump")
    fixtures["two_orbital"] = seed

    seed, ints = first_singlet(lambda s: random_integrals(3, 2, seed=s, e_core=0.4))
    save_fcidump(ints, DATA / "cas_2e3o.fcidump")
    fixtures["cas_2e3o"] = seed

    seed, ints = first_singlet(lambda s: random_integrals(4, 4, seed=s, e_core=0.9))
    save_fcidump(ints, DATA / "cas_4e4o.fcidump")
    fixtures["cas_4e4o"] = seed

    # reaction triple: one core, (2e,3o) active, one virtual orbital
    for seed in range(200):
        r_ints = embedded_model(seed, 1, 3, 1, 4, ext=0.05)
        other = embedded_model(seed + 1000, 1, 3, 1, 4, ext=0.05)
        species = {}
        # small displacement along a fixed direction plus a core-energy bump
        for tag, lam, shift in (("R", 0.0, 0.0), ("TS", 0.5, 0.05), ("P", 1.0, -0.02)):
            h1 = r_ints.h1 + 0.15 * lam * (other.h1 - r_ints.h1)
            h2 = r_ints.h2 + 0.15 * lam * (other.h2 - r_ints.h2)
            species[tag] = MolecularIntegrals(5, 4, 0, 1.0 + shift, h1, h2)
        if all(abs(ground_spin(i)) < 1e-6 for i in species.values()):
            break
    else:
        raise RuntimeError("no singlet reaction triple found")
    for tag, ints in species.items():
        save_fcidump(ints, DATA / f"reaction_{tag}.fcidump")
    fixtures["reaction"] = seed

    # AVAS chain: AO data, RHF orbitals, MO integrals
    s, h, eri, n_elec = chain_system()
    c, _ = rhf(s, h, eri, n_elec)
    occ = np.array([2.0] * (n_elec // 2) + [0.0] * (s.shape[0] - n_elec // 2))
    fragment = [3, 4, 5, 6, 7, 8]
    bundle = OrbitalBundle(s, c, occ, np.eye(s.shape[0])[:, fragment])
    (DATA / "chain.bundle").write_text(write_bundle(bundle))
    h1_mo = c.T @ h @ c
    h2_mo = np.einsum("pqrs,pi,qj,rk,sl->ijkl", eri, c, c, c, c, optimize=True)
    mo_ints = MolecularIntegrals(s.shape[0], n_elec, 0, 2.5, 0.5 * (h1_mo + h1_mo.T), symmetrize_h2(h2_mo))
    save_fcidump(mo_ints, DATA / "chain.fcidump")
    fixtures["chain_fragment_ao"] = fragment

    (DATA / "fixtures.json").write_text(json.dumps(fixtures, indent=2) + "\n")
    print(json.dumps(fixtures))


if __name__ == "__main__":
    main()
