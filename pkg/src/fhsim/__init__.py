"""Simulation and analysis toolkit for Fermi-Hubbard quench circuits.

Modules: ``lattice`` (torus, flux, snake ordering), ``circuit`` (swap-network
Trotter circuits), ``svsim`` (statevector reference), ``nearflo`` (free
fermions from a triplet state), ``majorana`` (Heisenberg-picture Majorana
propagation), ``observables``, ``mitigation``, ``xeb`` and ``pipeline``.
"""
__version__ = "0.1.0"
