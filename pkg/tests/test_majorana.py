import itertools

import numpy as np
import pytest

from fhsim import majorana as mj
from fhsim import observables as ob
from fhsim import svsim
from fhsim._fermion_local import annihilators
from fhsim.circuit import triplet_prep_circuit, trotter_circuit
from fhsim.initial_state import default_initial_state
from fhsim.lattice import build_lattice
from fhsim.shots import ShotTable


def dense_z(S, n):
    d = np.ones(2 ** n)
    for m in S:
        d = d * (1 - 2 * ((np.arange(2 ** n) >> (n - 1 - m)) & 1))
    return np.diag(d).astype(complex)


def z_eval(op, bits):
    z = 1 - 2 * bits.astype(int)
    return np.array([sum(v * np.prod(z[r, list(S)]) for S, v in op.items()) for r in range(len(bits))])


def test_doublon_polynomial_terms():
    # 4 sites: constant + 4 up + 4 down + 4 pairs
    poly = mj.observable_to_polynomial(mj.doublons_op(4), 4)
    assert len(poly) == 13
    assert poly.weight_histogram() == {0: 1.0, 2: 2.0, 4: 1.0}


@pytest.mark.parametrize("S", [(0,), (1, 3), (0, 1, 2, 3)])
def test_polynomial_to_matrix_is_z_string(S):
    poly = mj.observable_to_polynomial({frozenset(S): 1.0}, 2)
    assert np.allclose(poly.to_matrix(), dense_z(S, 4))


@pytest.mark.parametrize("kind,angle", [("hop", 0.37), ("fswap", 0.0), ("merged", -0.8)])
def test_heisenberg_gate_matches_dense(kind, angle):
    rng = np.random.default_rng(1)
    terms = {S: rng.normal() for w in (1, 2) for S in itertools.combinations(range(8), 2 * w)}
    poly = mj.MajoranaPolynomial.from_terms(2, terms)
    # adjacent modes 1, 2: the two-mode gate sits on the middle qubits
    G = np.kron(np.kron(np.eye(2), mj.gate_unitary(kind, angle)), np.eye(2))
    out = mj.heisenberg_apply(poly, mj.FermionGate(kind, 1, 2, angle))
    P = poly.to_matrix()
    assert np.allclose(out.to_matrix(), G.conj().T @ P @ G, atol=1e-12)


def test_onsite_gate_matches_dense():
    c = annihilators(4)
    n0, n2 = c[0].T @ c[0], c[2].T @ c[2]
    G = np.diag(np.exp(-1j * 0.9 * np.diag(n0 @ n2)))
    poly = mj.MajoranaPolynomial.from_terms(2, {(0, 2): 1.0, (1, 5): 0.5, (2, 3, 4, 7): -0.3})
    out = mj.heisenberg_apply(poly, mj.FermionGate("onsite", 0, 2, 0.9))
    assert np.allclose(out.to_matrix(), G.conj().T @ poly.to_matrix() @ G, atol=1e-12)


@pytest.mark.parametrize("U", [0.0, 4.0])
def test_mp_matches_statevector(lat23, U):
    init = default_initial_state(lat23)
    t, steps = 0.7, 2
    psi0 = svsim.run_circuit(triplet_prep_circuit(lat23, init=init))
    psi = svsim.run_circuit(trotter_circuit(lat23, t, U, steps, parity=init.parity), psi0)
    circ = mj.FermionicCircuit.trotter(lat23, t, U, steps)
    subsets = [(0,), (3, 9), (1, 2, 7), (0, 5, 6, 11)]
    ref = svsim.z_expectations(psi, 12, subsets)
    got = mj.mp_expectation(circ, [{frozenset(S): 1.0} for S in subsets], init).value
    assert np.allclose(got, ref, atol=1e-10)
    nd = mj.mp_expectation(circ, mj.doublons_op(6), init).value
    assert nd == pytest.approx(np.sum(svsim.density_density(psi, 12)[np.arange(6), np.arange(6) + 6]), abs=1e-10)


def test_initial_overlap_matches_state(lat23):
    init = default_initial_state(lat23)
    psi0 = svsim.run_circuit(triplet_prep_circuit(lat23, init=init))
    for S in [(), (2,), (0, 6), (0, 1, 6, 7)]:
        poly = mj.observable_to_polynomial({frozenset(S): 1.0}, 6)
        assert mj.initial_overlap(poly, init) == pytest.approx(svsim.z_expectations(psi0, 12, [S])[0], abs=1e-12)


def test_truncation_thresholds():
    poly = mj.MajoranaPolynomial.from_terms(2, {(0, 1): 1.0, (0, 1, 2, 3): 1e-3, (0, 1, 2, 3, 4, 5): 0.5})
    assert len(mj.truncate(poly, coeff_thresh=1e-2)) == 2
    assert len(mj.truncate(poly, weight_thresh=4)) == 2
    with pytest.raises(ValueError):
        mj.truncate(poly, coeff_thresh=-1)


def test_term_budget(lat23):
    circ = mj.FermionicCircuit.trotter(lat23, 1.0, 4.0, 3)
    with pytest.raises(mj.TermBudgetExceeded):
        mj.mp_expectation(circ, mj.doublons_op(6), default_initial_state(lat23), max_terms=50)


def test_open_wilson_operator_matches_shot_estimator():
    lat = build_lattice(2, 4)
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, size=(300, 16))
    shots = ShotTable(0.0, 0.0, 0, bits)
    for M in (1, 2, 3):
        op = mj.open_wilson_line_op(lat, M)
        ref = ob.open_wilson_line(shots, lat, M, normalization="pairs")
        assert z_eval(op, bits).mean() == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("M", [1, 2])
def test_open_wilson_short_lines_vanish(M):
    # Sz is zero on holons and doublons, so every string touching an endpoint cancels
    lat = build_lattice(2, 4)
    op = mj.open_wilson_line_op(lat, M)
    assert all(abs(v) < 1e-15 for v in op.values())


@pytest.mark.parametrize("spec", ["doublons", "szsz-bonds", "czz:0,1", "vhd:3", "z:0,4", "n:2", "sz:1"])
def test_observable_strings(lat23, spec):
    assert isinstance(mj.observable_from_string(spec, lat23), dict)


def test_unknown_observable(lat23):
    with pytest.raises(ValueError):
        mj.observable_from_string("bogus", lat23)


def test_size_limit():
    with pytest.raises(ValueError):
        mj.MajoranaPolynomial(33, [], [], [])
