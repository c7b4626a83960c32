import itertools

import numpy as np
import pytest

from fhsim import nearflo, svsim
from fhsim.circuit import triplet_prep_circuit, trotter_circuit
from fhsim.initial_state import default_initial_state, paired_state
from fhsim.lattice import build_lattice


def reference(lat, t, steps=None):
    init = default_initial_state(lat)
    psi0 = svsim.run_circuit(triplet_prep_circuit(lat, init=init))
    if steps:
        return svsim.run_circuit(trotter_circuit(lat, t, 0.0, steps, parity=init.parity), psi0)
    return svsim.evolve_exact(lat, psi0, t, 0.0)


@pytest.mark.parametrize("Lx,Ly", [(2, 2), (2, 3), (3, 3)])
def test_propagators_unitary(Lx, Ly):
    lat = build_lattice(Lx, Ly)
    assert nearflo.propagator(lat, 1.1).is_unitary()
    assert nearflo.trotterized_propagator(lat, 1.1, 3).is_unitary()


def test_initial_values_full_scale(lat47):
    init = default_initial_state(lat47)
    p = nearflo.propagator(lat47, 0.0)
    assert nearflo.doublon_count(p, init) == pytest.approx(1.0, abs=1e-12)
    assert nearflo.triplet_density(p, init, lat47) == pytest.approx(-13 / 14, abs=1e-12)
    assert nearflo.sector_dimension(init) == 40116600 ** 2


@pytest.mark.parametrize("Lx,Ly", [(2, 2), (2, 3)])
@pytest.mark.parametrize("steps", [None, 3])
@pytest.mark.parametrize("t", [0.4, 1.7])
def test_densities_match_statevector(Lx, Ly, steps, t):
    lat = build_lattice(Lx, Ly)
    init = default_initial_state(lat)
    psi = reference(lat, t, steps)
    prop = nearflo.trotterized_propagator(lat, t, steps) if steps else nearflo.propagator(lat, t)
    n = lat.n_modes
    assert np.allclose(nearflo.density(prop, init), svsim.density(psi, n), atol=1e-10)
    assert np.allclose(nearflo.density_density(prop, init), svsim.density_density(psi, n), atol=1e-10)


def test_weighted_z_matches_statevector(lat23):
    init = default_initial_state(lat23)
    psi = reference(lat23, 0.9)
    prop = nearflo.propagator(lat23, 0.9)
    rng = np.random.default_rng(5)
    for w in (1, 3, 5, 8):
        S = tuple(sorted(rng.choice(12, w, replace=False)))
        assert nearflo.weighted_z_expectation(prop, init, S) == pytest.approx(
            svsim.z_expectations(psi, 12, [S])[0], abs=1e-10)


def test_amplitudes_match_statevector(lat23):
    init = default_initial_state(lat23)
    psi = reference(lat23, 1.2)
    prop = nearflo.propagator(lat23, 1.2)
    n = 12
    idx = np.argsort(-np.abs(psi))[:10]
    amps = [nearflo.amplitude(prop, init, ((i >> np.arange(n - 1, -1, -1)) & 1)) for i in idx]
    ratio = np.array(amps) / psi[idx]
    assert np.allclose(ratio, ratio[0], atol=1e-9) and abs(abs(ratio[0]) - 1) < 1e-9


def test_probabilities_sum_to_one(lat22):
    from fhsim.xeb import sector_bitstrings
    init = default_initial_state(lat22)
    prop = nearflo.propagator(lat22, 0.7)
    z = sector_bitstrings(4, init.particles_per_sector)
    assert sum(nearflo.probability(prop, init, b) for b in z) == pytest.approx(1.0, abs=1e-12)


def test_wrong_sector_amplitude_is_zero(lat22):
    init = default_initial_state(lat22)
    prop = nearflo.propagator(lat22, 0.7)
    assert nearflo.amplitude(prop, init, "11100000") == 0
    with pytest.raises(ValueError):
        nearflo.amplitude(prop, init, "1010")


def test_triplet_cap():
    lat = build_lattice(4, 7)
    with pytest.raises(ValueError):
        nearflo.weighted_z_expectation(nearflo.propagator(lat, 0.1), default_initial_state(lat), (0,))


def test_density_sums_to_particle_number():
    lat = build_lattice(3, 4)
    init = paired_state(12, holons=(0,), doublons=(5,))
    d = nearflo.density(nearflo.propagator(lat, 2.3), init)
    assert d.sum() == pytest.approx(2 * init.particles_per_sector)
