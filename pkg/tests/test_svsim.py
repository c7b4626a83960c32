import numpy as np
import pytest
import scipy.linalg as sla

from fhsim import svsim
from fhsim.circuit import experiment_circuit, triplet_prep_circuit
from fhsim.initial_state import default_initial_state
from fhsim.lattice import build_lattice


def prepared(lat):
    return svsim.run_circuit(triplet_prep_circuit(lat, init=default_initial_state(lat)))


@pytest.mark.parametrize("Lx,Ly", [(2, 2), (2, 3)])
@pytest.mark.parametrize("U", [0.0, 4.0])
def test_energy_starts_at_U_and_is_conserved(Lx, Ly, U):
    # triplets carry no hopping energy, so <H> = U * (one doublon)
    lat = build_lattice(Lx, Ly)
    psi0 = prepared(lat)
    assert svsim.energy(lat, psi0, U) == pytest.approx(U, abs=1e-12)
    psi = svsim.evolve_exact(lat, psi0, 1.3, U)
    assert svsim.energy(lat, psi, U) == pytest.approx(U, abs=1e-9)
    assert np.linalg.norm(psi) == pytest.approx(1.0)


def test_sector_expm_matches_dense():
    lat = build_lattice(2, 2)
    psi0 = prepared(lat)
    H = svsim.hamiltonian(lat, 3.0).toarray()
    ref = sla.expm(-1j * 0.8 * H) @ psi0
    assert np.allclose(svsim.evolve_exact(lat, psi0, 0.8, 3.0), ref, atol=1e-10)


def test_z_expectations_from_probabilities():
    rng = np.random.default_rng(0)
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    p = np.abs(psi) ** 2
    bits = ((np.arange(16)[:, None] >> np.arange(3, -1, -1)) & 1)
    for S in [(0,), (1, 3), (0, 1, 2, 3)]:
        direct = float(np.sum(p * np.prod(1 - 2 * bits[:, list(S)], axis=1)))
        assert svsim.z_expectations(psi, 4, [S])[0] == pytest.approx(direct)


def test_sampling_matches_distribution():
    lat = build_lattice(2, 2)
    psi = svsim.evolve_exact(lat, prepared(lat), 0.5, 2.0)
    shots = svsim.sample(psi, 20000, rng_seed=1)
    emp = shots.bits.mean(0)
    assert np.allclose(emp, svsim.density(psi, 8), atol=0.02)
    again = svsim.sample(psi, 20000, rng_seed=1)
    assert np.array_equal(again.bits, shots.bits)


def test_noiseless_run_is_ideal():
    lat = build_lattice(2, 2)
    c = experiment_circuit(lat, 0.5, 2.0, 2, compile=True)
    noisy = svsim.noisy_run(c, svsim.NoiseModel(0, 0, 0), 4000, seed=3)
    ideal = svsim.density(svsim.run_circuit(c), 8)
    assert np.allclose(noisy.bits.mean(0), ideal, atol=0.03)
    assert np.all(noisy.sector_weights() == 2)


def test_spam_only_flips_bits():
    lat = build_lattice(2, 2)
    c = triplet_prep_circuit(lat, init=default_initial_state(lat))
    sh = svsim.noisy_run(c, svsim.NoiseModel(0, 0, 0.2), 5000, seed=2)
    # every particle-number change comes from readout flips
    bad = np.mean(np.any(sh.sector_weights() != 2, axis=1))
    assert 0.7 < bad < 0.9  # 1 - 0.8^8 = 0.83


def test_noise_validation():
    with pytest.raises(ValueError):
        svsim.NoiseModel(p2=1.5)


def test_too_many_qubits():
    with pytest.raises(ValueError):
        svsim.zero_state(40)


def test_trotter_report_fields():
    rows = svsim.trotter_error_report(build_lattice(2, 2), 2, [0.5, 1.0], observables=2, U=4.0)
    assert [r["t"] for r in rows] == [0.5, 1.0]
    for r in rows:
        assert 0 <= r["mean_error"] <= r["max_error"] <= r["infidelity"] + 1e-12
