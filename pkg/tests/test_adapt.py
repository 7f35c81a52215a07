import json
import time

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from qew.adapt import (
    AdaptConfig,
    AdaptError,
    AnsatzState,
    PoolOperator,
    _excitation,
    adapt_gradient,
    adapt_vqe_loop,
    build_upccgsd_pool,
    energy_and_gradient,
    energy_at,
    hamiltonian_matrix,
    vqe_minimize,
)
from qew.integrals import hf_energy, qubit_hamiltonian, read_fcidump
from qew.operators import QubitOperator, jordan_wigner, number_operator, sz_operator
from qew.statevector import exact_ground_state, expectation
from qew.workflow import data_path

from test_integrals import FCI_REFERENCE

FIXTURES = {"cas_2e3o": 6, "cas_4e4o": 8}


@pytest.fixture(scope="module")
def adapt_runs():
    runs = {}
    for name in FIXTURES:
        ints = read_fcidump(data_path(f"{name}.fcidump"))
        h = qubit_hamiltonian(ints)
        t0 = time.perf_counter()
        res = adapt_vqe_loop(h, ints.hf_occupation(), build_upccgsd_pool(ints.n_orb))
        runs[name] = (ints, h, res, time.perf_counter() - t0)
    return runs


def test_pool_sizes():
    assert build_upccgsd_pool(1) == []
    pool = build_upccgsd_pool(2)
    assert sorted(op.label for op in pool) == ["D(00->11)", "S(0->1)"]
    for n in (3, 4, 5):
        pairs = n * (n - 1) // 2
        assert len(build_upccgsd_pool(n)) == 2 * pairs
    with pytest.raises(AdaptError):
        build_upccgsd_pool(0)


@pytest.mark.parametrize("n", [2, 3])
def test_pool_conserves_number_and_sz(n):
    num = jordan_wigner(number_operator(2 * n), 2 * n).to_dense()
    sz = jordan_wigner(sz_operator(2 * n), 2 * n).to_dense()
    for op in build_upccgsd_pool(n):
        g = op.matrix.toarray()
        assert np.allclose(g, -g.T)
        for sym in (num, sz):
            assert np.abs(g @ sym - sym @ g).max() < 1e-12


def _random_real_state(n_qubits, n_elec, rng):
    psi = np.zeros(1 << n_qubits)
    for i in range(psi.size):
        if i.bit_count() == n_elec:
            psi[i] = rng.normal()
    return psi / np.linalg.norm(psi)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_central_difference(seed):
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    hm = hamiltonian_matrix(qubit_hamiltonian(ints))
    psi = _random_real_state(6, 2, np.random.default_rng(seed))
    h = 1e-4
    for op in build_upccgsd_pool(3):
        plus, minus = op.apply_exp(h, psi), op.apply_exp(-h, psi)
        fd = (plus @ hm @ plus - minus @ hm @ minus) / (2 * h)
        assert abs(adapt_gradient(psi, hm, op) - fd) < 1e-6


def test_gradient_sign_lowers_energy():
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    hm = hamiltonian_matrix(qubit_hamiltonian(ints))
    psi = np.zeros(64)
    psi[int(ints.hf_occupation(), 2)] = 1.0
    e0 = psi @ hm @ psi
    for op in build_upccgsd_pool(3):
        g = adapt_gradient(psi, hm, op)
        if abs(g) > 1e-6:
            step = op.apply_exp(-1e-3 * np.sign(g), psi)
            assert step @ hm @ step < e0


def test_gradient_vanishes_in_eigenstate():
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    h = qubit_hamiltonian(ints)
    _, state = exact_ground_state(h, 2, 0)
    for op in build_upccgsd_pool(3):
        assert abs(adapt_gradient(state, h, op)) < 1e-10


def test_analytic_parameter_gradient():
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    hm = hamiltonian_matrix(qubit_hamiltonian(ints))
    pool = build_upccgsd_pool(3)
    ansatz = AnsatzState(pool[:4], [0.1, -0.3, 0.2, 0.05], ints.hf_occupation())
    _, g = energy_and_gradient(ansatz, hm, ansatz.parameters)
    fd = scipy.optimize.approx_fprime(ansatz.parameters, lambda t: energy_at(ansatz, hm, t), 1e-7)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_empty_ansatz_gives_reference_energy():
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    ansatz = AnsatzState([], [], ints.hf_occupation())
    res = vqe_minimize(ansatz, qubit_hamiltonian(ints))
    assert res.iterations == 0
    assert res.energy == pytest.approx(hf_energy(ints, ints.hf_occupation()), abs=1e-12)


def test_single_parameter_matches_golden_section():
    h = QubitOperator.from_list([("ZI", 0.5), ("IZ", -0.3), ("XX", 0.2), ("YY", 0.2), ("II", 0.1)])
    gen = _excitation((1,), (0,), 2)
    op = PoolOperator("S", gen, (gen,), 2)
    ansatz = AnsatzState([op], [0.0], "10")
    res = vqe_minimize(ansatz, h, AdaptConfig(optimizer_tol=1e-10))
    hm = hamiltonian_matrix(h)
    scan = scipy.optimize.minimize_scalar(
        lambda t: energy_at(ansatz, hm, [t]), bracket=(-1.0, 0.0, 1.0), method="golden", tol=1e-10
    )
    assert abs(res.energy - scan.fun) < 1e-8
    assert all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))


def test_ansatz_json_round_trip():
    pool = build_upccgsd_pool(3)
    a = AnsatzState([pool[2], pool[0], pool[2]], [0.1, 0.2, -0.3], "110000")
    b = AnsatzState.from_json(json.loads(a.dumps()))
    assert b.labels == a.labels
    np.testing.assert_array_equal(a.amplitudes(), b.amplitudes())
    ref = np.zeros(64)
    ref[0b110000] = 1
    np.testing.assert_array_equal(a.amplitudes(np.zeros(3)), ref)
    with pytest.raises(AdaptError):
        AnsatzState([pool[0]], [0.1, 0.2], "110000")


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_adapt_reaches_fci(adapt_runs, name):
    ints, h, res, seconds = adapt_runs[name]
    assert ints.n_qubits == FIXTURES[name]
    assert abs(res.energy - FCI_REFERENCE[name]) < 1e-6
    assert seconds < 60
    assert res.termination == "gradient_converged"


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_variational_ordering_and_monotone_trace(adapt_runs, name):
    ints, h, res, _ = adapt_runs[name]
    e_hf = hf_energy(ints, ints.hf_occupation())
    assert res.energies[0] == pytest.approx(e_hf, abs=1e-12)
    assert e_hf >= res.energy >= FCI_REFERENCE[name] - 1e-9
    assert all(b <= a + 1e-12 for a, b in zip(res.energies, res.energies[1:]))


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_final_state_keeps_symmetries(adapt_runs, name):
    ints, h, res, _ = adapt_runs[name]
    n = ints.n_qubits
    state = res.ansatz.state()
    assert abs(expectation(state, jordan_wigner(number_operator(n), n)) - ints.n_elec) < 1e-10
    assert abs(expectation(state, jordan_wigner(sz_operator(n), n))) < 1e-10


def test_trace_csv_shape(adapt_runs):
    _, _, res, _ = adapt_runs["cas_2e3o"]
    rows = res.trace_csv().strip().splitlines()
    assert rows[0] == "iteration,n_operators,label,energy,max_gradient"
    assert len(rows) == len(res.energies) + 1


def test_exact_reference_terminates_immediately():
    h = QubitOperator.from_list([("ZIII", 1.0), ("IZII", 1.0), ("IIZI", -1.0), ("IIIZ", -1.0)])
    res = adapt_vqe_loop(h, "0011", build_upccgsd_pool(2))
    assert res.ansatz.operators == [] and res.termination == "gradient_converged"


def test_selection_is_deterministic():
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    h = qubit_hamiltonian(ints)
    a = adapt_vqe_loop(h, ints.hf_occupation(), build_upccgsd_pool(3))
    b = adapt_vqe_loop(h, ints.hf_occupation(), build_upccgsd_pool(3))
    assert a.ansatz.labels == b.ansatz.labels
    assert a.energies == b.energies


def test_empty_pool_rejected():
    with pytest.raises(AdaptError):
        adapt_vqe_loop(QubitOperator.identity(2), "10", [])
    with pytest.raises(AdaptError):
        AdaptConfig(gradient_threshold=0)
