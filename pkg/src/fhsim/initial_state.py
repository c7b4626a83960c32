"""Triplet / holon / doublon product states and their Fock decomposition.

A triplet on the JW-adjacent site pair ``(a, b)`` is the S_z = 0 state
``(c+_{a up} c+_{b dn} + c+_{a dn} c+_{b up}) |0> / sqrt(2)``. In the qubit
basis (modes ``a_up, b_up, a_dn, b_dn``) this is ``(|1001> - |0110>) / sqrt(2)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import Lattice, Site


@dataclass(frozen=True)
class MagicInitialState:
    """Product of triplets, holons (empty sites) and doublons (full sites).

    All sites are stored as snake positions ``0 <= p < L``.
    """

    n_sites: int
    triplets: tuple[tuple[int, int], ...]
    holons: tuple[int, ...]
    doublons: tuple[int, ...]

    def __post_init__(self):
        seen = [p for pr in self.triplets for p in pr] + list(self.holons) + list(self.doublons)
        if sorted(seen) != list(range(self.n_sites)):
            raise ValueError("triplets, holons and doublons must partition the sites exactly once")
        for a, b in self.triplets:
            if b != a + 1:
                raise ValueError(f"triplet pair {(a, b)} is not JW-adjacent")

    @property
    def n_modes(self) -> int:
        return 2 * self.n_sites

    @property
    def n_triplets(self) -> int:
        return len(self.triplets)

    @property
    def particles_per_sector(self) -> int:
        return self.n_triplets + len(self.doublons)

    @property
    def parity(self) -> int:
        """Per-sector fermion parity ``(-1)^N``."""
        return -1 if self.particles_per_sector % 2 else 1

    def occupations(self) -> np.ndarray:
        """Initial ``<n_mode>`` over all 2L modes (the one-body matrix is diagonal)."""
        L = self.n_sites
        n = np.zeros(2 * L)
        for d in self.doublons:
            n[d] = n[d + L] = 1.0
        for a, b in self.triplets:
            n[[a, b, a + L, b + L]] = 0.5
        return n

    def groups(self) -> list[tuple[str, tuple[int, ...]]]:
        """Independent mode groups: ``("triplet", (a_up, b_up, a_dn, b_dn))`` etc."""
        L = self.n_sites
        out = []
        for a, b in self.triplets:
            out.append(("triplet", (a, b, a + L, b + L)))
        for h in self.holons:
            out.append(("holon", (h, h + L)))
        for d in self.doublons:
            out.append(("doublon", (d, d + L)))
        return out

    @cached_property
    def fock_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """All ``2^{N_triplets}`` Fock components.

        Returns ``(occ, amp)`` where ``occ`` has shape ``(2^T, 2L)`` (0/1
        occupations in JW order) and ``amp`` the real amplitudes in the qubit
        basis ``|n> = prod_{j ascending} (c+_j)^{n_j} |0>``.
        """
        L = self.n_sites
        base = np.zeros(2 * L, dtype=np.int8)
        for d in self.doublons:
            base[d] = base[d + L] = 1
        T = self.n_triplets
        occ = np.repeat(base[None, :], 2 ** T, axis=0)
        amp = np.full(2 ** T, 2.0 ** (-T / 2))
        for m, branch in enumerate(itertools.product((0, 1), repeat=T)):
            for (a, b), br in zip(self.triplets, branch):
                if br == 0:
                    occ[m, a] = 1
                    occ[m, b + L] = 1
                else:
                    occ[m, b] = 1
                    occ[m, a + L] = 1
                    amp[m] = -amp[m]
        return occ, amp

    def statevector(self) -> np.ndarray:
        """Dense state on ``2L`` qubits (qubit 0 is the most significant bit)."""
        n = self.n_modes
        if n > 24:
            raise ValueError("statevector limited to 24 qubits")
        occ, amp = self.fock_terms
        psi = np.zeros(2 ** n, dtype=complex)
        weights = 1 << np.arange(n - 1, -1, -1)
        psi[occ.astype(np.int64) @ weights] = amp
        return psi

    def to_dict(self) -> dict:
        return {"n_sites": self.n_sites, "triplets": [list(t) for t in self.triplets],
                "holons": list(self.holons), "doublons": list(self.doublons)}

    @classmethod
    def from_dict(cls, d) -> "MagicInitialState":
        return cls(int(d["n_sites"]), tuple(tuple(t) for t in d["triplets"]),
                   tuple(d["holons"]), tuple(d["doublons"]))


def paired_state(n_sites: int, holons=(), doublons=()) -> MagicInitialState:
    """Pair every remaining site with its JW successor, scanning in snake order."""
    special = set(holons) | set(doublons)
    rest = [p for p in range(n_sites) if p not in special]
    triplets = []
    i = 0
    while i < len(rest):
        if i + 1 >= len(rest) or rest[i + 1] != rest[i] + 1:
            raise ValueError("remaining sites cannot be paired into JW-adjacent triplets")
        triplets.append((rest[i], rest[i + 1]))
        i += 2
    return MagicInitialState(n_sites, tuple(triplets), tuple(sorted(holons)), tuple(sorted(doublons)))


def default_initial_state(lattice: Lattice | int) -> MagicInitialState:
    """Holon at snake site 0 and (for even L) one doublon, the rest triplets.

    On the 4x7 lattice this is the experiment's pattern: holon 0, doublon 13,
    triplets (1,2), ..., (11,12), (14,15), ..., (26,27).
    """
    L = lattice if isinstance(lattice, int) else lattice.n_sites
    if L % 2:
        return paired_state(L, holons=(0,))
    target = L // 2 - 1
    d = target if target % 2 == 1 else target + 1
    if d >= L:
        d = L - 1
    return paired_state(L, holons=(0,), doublons=(d,))


def state_from_sites(lattice: Lattice, triplets, holons=(), doublons=()) -> MagicInitialState:
    """Build a state from ``(x, y)`` site coordinates."""
    pos = lattice.position
    trip = []
    for a, b in triplets:
        pa, pb = sorted((pos(a), pos(b)))
        trip.append((pa, pb))
    return MagicInitialState(lattice.n_sites, tuple(sorted(trip)),
                             tuple(sorted(pos(s) for s in holons)),
                             tuple(sorted(pos(s) for s in doublons)))
