"""Doublon number and triplet density on the 4x7 torus at U = 0.

Computes the free-fermion evolution of the triplet/holon/doublon product
state, then cross-checks one time point with Majorana propagation.
"""
import time

from fhsim import majorana, nearflo
from fhsim.initial_state import default_initial_state
from fhsim.lattice import build_lattice

lat = build_lattice(4, 7)
init = default_initial_state(lat)

print(" t     doublons   triplets")
for t in [0.0, 0.5, 1.0, 1.5, 2.0]:
    prop = nearflo.propagator(lat, t)
    print(f"{t:4.1f}  {nearflo.doublon_count(prop, init):9.6f}  {nearflo.triplet_density(prop, init, lat):9.6f}")

t0 = time.time()
prop = nearflo.trotterized_propagator(lat, 0.5, 4)
nd, nt = majorana.doublons_and_triplets_mp(lat, 0.5, 0.0, 4, init)
print(f"\n4-step circuit at t=0.5: nearflo {nearflo.doublon_count(prop, init):.10f}, "
      f"majorana {nd:.10f} ({time.time() - t0:.0f} s)")
