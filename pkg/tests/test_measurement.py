import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qew.integrals import qubit_hamiltonian, read_fcidump
from qew.measurement import (
    MeasurementError,
    MeasurementGroup,
    ShotTable,
    SymmetrySpec,
    allocate_shots,
    bootstrap_statistics,
    energy_differences,
    estimate_expectation,
    estimate_from_distributions,
    exact_distributions,
    group_pauli_terms,
    measure_groups,
    pmsv_filter,
    tables_from_csv,
    tables_to_csv,
)
from qew.operators import PauliString, QubitOperator, qubit_wise_commutes
from qew.statevector import NoiseSpec, StateVector, exact_ground_state, expectation, fock_state
from qew.workflow import data_path


@pytest.fixture(scope="module")
def six_qubit():
    ints = read_fcidump(data_path("cas_2e3o.fcidump"))
    h = qubit_hamiltonian(ints)
    e, state = exact_ground_state(h, ints.n_elec, ints.ms2)
    return h, state, e, group_pauli_terms(h)


def assert_partition(op, groups):
    seen = [(p, c) for g in groups for p, c in g.terms]
    assert sorted(p.letters for p, _ in seen) == sorted(p.letters for p in op)
    for p, c in seen:
        assert c == pytest.approx(op.coefficient(p).real, abs=0)
    for g in groups:
        g.check()
        for (a, _), (b, _) in itertools.combinations(g.terms, 2):
            assert qubit_wise_commutes(a, b)


def test_grouping_by_inspection():
    op = QubitOperator.from_list([("ZI", 1.0), ("IZ", 0.5), ("ZZ", 0.3), ("XX", 0.2)])
    groups = group_pauli_terms(op)
    assert [sorted(p.letters for p, _ in g.terms) for g in groups] == [["IZ", "ZI", "ZZ"], ["XX"]]
    assert len(group_pauli_terms(QubitOperator.identity(3, 2.0))) == 1
    with pytest.raises(MeasurementError):
        group_pauli_terms(QubitOperator(2))


def test_hamiltonian_grouping_is_partition(six_qubit):
    h, _, _, groups = six_qubit
    assert_partition(h, groups)
    assert len(groups) <= len(h)


def chromatic_number(conflict):
    """Exact colouring number by dynamic programming over vertex subsets."""
    n = len(conflict)
    adj = [sum(1 << j for j in range(n) if conflict[i][j]) for i in range(n)]
    independent = [True] * (1 << n)
    for s in range(1, 1 << n):
        low = (s & -s).bit_length() - 1
        rest = s & ~(1 << low)
        independent[s] = independent[rest] and not (adj[low] & rest)
    best = [0] + [n] * ((1 << n) - 1)
    for s in range(1, 1 << n):
        low = s & -s
        sub = s
        while sub:
            if sub & low and independent[sub]:
                best[s] = min(best[s], best[s ^ sub] + 1)
            sub = (sub - 1) & s
    return best[-1]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_grouping_against_coloring_bounds(seed, n_terms):
    rng = np.random.default_rng(seed)
    words = {"".join(rng.choice(list("IXYZ"), 6)) for _ in range(n_terms)}
    op = QubitOperator.from_list([(w, rng.uniform(0.1, 1.0)) for w in sorted(words)])
    groups = group_pauli_terms(op)
    assert_partition(op, groups)
    ps = [PauliString.from_letters(w) for w in sorted(words)]
    conflict = [[not qubit_wise_commutes(a, b) for b in ps] for a in ps]
    max_degree = max(sum(row) for row in conflict)
    assert chromatic_number(conflict) <= len(groups) <= min(len(ps), max_degree + 1)


def test_pmsv_definition():
    group = MeasurementGroup(0, ((PauliString.from_letters("ZZZZ"), 1.0),), "ZZZZ")
    even = SymmetrySpec(((PauliString.from_letters("ZZZZ"), 1),))
    table = ShotTable.from_counts(0, {"1100": 7, "1000": 3})
    out = pmsv_filter(table, group, even)
    assert out.counts == {"1100": 7}
    assert (out.shots_total, out.shots_kept) == (10, 7)


def test_pmsv_skips_symmetries_not_diagonal_in_basis():
    group = MeasurementGroup(0, ((PauliString.from_letters("XXII"), 1.0),), "XXII")
    sym = SymmetrySpec.particle_parities(4, 1, 1)
    ok, skipped = sym.applicable(group)
    assert ok == [] and len(skipped) == 3
    table = ShotTable.from_counts(0, {"1000": 5, "1100": 5})
    assert pmsv_filter(table, group, sym) == table


def test_pmsv_noiseless_eigenstate_discards_nothing(six_qubit):
    h, state, _, groups = six_qubit
    sym = SymmetrySpec.particle_parities(6, 1, 1)
    sym.verify(h)
    tables = measure_groups(groups, 5000, seed=3, state=state)
    filtered = [pmsv_filter(t, g, sym) for t, g in zip(tables, groups)]
    assert sum(t.discarded for t in filtered) == 0


def test_pmsv_beats_raw_under_flip_noise(six_qubit):
    h, state, e, groups = six_qubit
    sym = SymmetrySpec.particle_parities(6, 1, 1)
    wins = 0
    for seed in range(100):
        tables = measure_groups(groups, 10_000, seed, state=state, noise=NoiseSpec(0.0, 0.02))
        raw = estimate_expectation(groups, tables).value
        kept = estimate_expectation(groups, [pmsv_filter(t, g, sym) for t, g in zip(tables, groups)]).value
        wins += abs(kept - e) <= abs(raw - e)
    assert wins >= 95


def test_infinite_shot_limit_is_exact(six_qubit):
    h, state, _, groups = six_qubit
    est = estimate_from_distributions(groups, exact_distributions(state, groups))
    assert abs(est.value - expectation(state, h)) < 1e-12


def test_identity_term_is_exact():
    op = QubitOperator.from_list([("II", 0.75)])
    groups = group_pauli_terms(op)
    tables = measure_groups(groups, 10, seed=0, state=fock_state(2, "10"))
    assert estimate_expectation(groups, tables).value == 0.75


def test_hundred_k_shots_within_five_stderr(six_qubit):
    h, state, e, groups = six_qubit
    est = estimate_expectation(groups, measure_groups(groups, 100_000, seed=21, state=state))
    assert abs(est.value - e) <= 5 * est.stderr


def test_error_slope_on_shot_sweep(six_qubit):
    _, state, e, groups = six_qubit
    budgets = [1_000, 10_000, 100_000]
    rms = []
    for shots in budgets:
        errs = [estimate_expectation(groups, measure_groups(groups, shots, s, state=state)).value - e for s in range(20)]
        rms.append(np.sqrt(np.mean(np.square(errs))))
    slope = np.polyfit(np.log10(budgets), np.log10(rms), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_empty_group_is_flagged():
    op = QubitOperator.from_list([("ZI", 1.0), ("XX", 0.5)])
    groups = group_pauli_terms(op)
    tables = [ShotTable.from_counts(0, {"10": 4}), ShotTable(1, {}, 4, 0)]
    est = estimate_expectation(groups, tables)
    assert not est.valid and est.invalid_groups == [1]


def test_allocation():
    groups = group_pauli_terms(QubitOperator.from_list([("ZI", 3.0), ("XX", 1.0), ("YY", 0.5)]))
    assert sum(allocate_shots(groups, 1001)) == 1001
    w = allocate_shots(groups, 900, "coefficients")
    assert sum(w) == 900 and w[0] > w[-1]
    with pytest.raises(MeasurementError):
        allocate_shots(groups, 2)


def test_bootstrap_constant_and_validation():
    tables = {"a": ShotTable.from_counts(0, {"0": 60, "1": 40})}
    assert bootstrap_statistics(tables, 10, lambda r: 1.0, seed=0) == (1.0, 0.0)
    with pytest.raises(MeasurementError):
        bootstrap_statistics(tables, 1, lambda r: 1.0, seed=0)
    with pytest.raises(MeasurementError):
        bootstrap_statistics({"a": ShotTable.from_counts(0, {"0": 1})}, 10, lambda r: 1.0, seed=0)


def _z_mean(table):
    return (table.counts.get("0", 0) - table.counts.get("1", 0)) / table.shots_kept


def test_bootstrap_matches_binomial_sigma():
    p1, shots = 0.3, 10_000
    state = StateVector.from_array([np.sqrt(1 - p1), np.sqrt(p1)])
    group = group_pauli_terms(QubitOperator.from_list([("Z", 1.0)]))
    stds = []
    for seed in range(50):
        table = measure_groups(group, shots, seed, state=state)[0]
        _, s = bootstrap_statistics({"z": table}, 10, lambda r: _z_mean(r["z"]), seed=1000 + seed)
        stds.append(s)
    m = 1 - 2 * p1
    analytic = np.sqrt(1 - m * m) / np.sqrt(shots)
    assert abs(np.mean(stds) / analytic - 1) < 0.2


def test_bootstrap_energy_difference_matches_propagation():
    shots = 10_000
    probs = {"R": 0.2, "TS": 0.45, "P": 0.1}
    group = group_pauli_terms(QubitOperator.from_list([("Z", 1.0)]))
    stds = []
    for seed in range(40):
        tables = {
            t: measure_groups(group, shots, seed * 3 + i, state=StateVector.from_array([np.sqrt(1 - p), np.sqrt(p)]))
            for i, (t, p) in enumerate(probs.items())
        }
        _, s = bootstrap_statistics(tables, 10, lambda r: _z_mean(r["TS"][0]) - _z_mean(r["R"][0]), seed=seed)
        stds.append(s)
    var = [(1 - (1 - 2 * p) ** 2) / shots for p in (probs["R"], probs["TS"])]
    assert abs(np.mean(stds) / np.sqrt(sum(var)) - 1) < 0.25


def test_bootstrap_is_deterministic():
    tables = {"a": ShotTable.from_counts(0, {"0": 600, "1": 400})}
    f = lambda r: _z_mean(r["a"])  # noqa: E731
    assert bootstrap_statistics(tables, 10, f, seed=5) == bootstrap_statistics(tables, 10, f, seed=5)


def test_energy_differences():
    d = energy_differences(-1.0, -0.5, -1.2)
    assert d.e_a == pytest.approx(0.5) and d.e_d == pytest.approx(-0.2)
    assert d.e_a_ev == pytest.approx(0.5 * 27.211386245988)
    z = energy_differences(-2.0, -2.0, -2.0)
    assert (z.e_a, z.e_d) == (0.0, 0.0)
    with pytest.raises(MeasurementError):
        energy_differences(float("nan"), 0.0, 0.0)


@settings(max_examples=25)
@given(st.dictionaries(st.sampled_from(["00", "01", "10", "11"]), st.integers(1, 50), min_size=1))
def test_shot_csv_round_trip(counts):
    tables = [ShotTable.from_counts(0, counts), ShotTable.from_counts(3, {"11": 2})]
    assert tables_from_csv(tables_to_csv(tables)) == tables
