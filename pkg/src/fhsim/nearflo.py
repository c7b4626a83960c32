"""Free-fermion (U = 0) dynamics from the triplet/holon/doublon state.

Conventions: a number-conserving Gaussian unitary ``V`` acts as
``V c+_j V^dag = sum_i c+_i R_ij``. For ``V = exp(-i H t)`` with
``H = sum h_ij c+_i c_j`` this gives ``R = exp(-i h t)``; the Heisenberg
annihilator is ``V^dag c_i V = sum_a R_ia c_a``. Fock states are
``|n> = prod_{j ascending} (c+_j)^{n_j} |0>`` (the qubit basis), so
``<z|V|m> = det R[z, m]`` with both index lists ascending.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .initial_state import MagicInitialState
from .lattice import Lattice
from .schedule import trotter_program


@dataclass(frozen=True)
class Propagator:
    """Single-particle evolution matrix ``R`` over all ``2L`` modes."""

    R: np.ndarray
    kind: str = "continuous"

    @property
    def n_sites(self) -> int:
        return self.R.shape[0] // 2

    @cached_property
    def block(self) -> np.ndarray:
        """The (identical) spin-sector block."""
        L = self.n_sites
        return self.R[:L, :L]

    def is_unitary(self, tol=1e-10) -> bool:
        R = self.R
        return float(np.abs(R.conj().T @ R - np.eye(len(R))).max()) < tol


def _block_diag(r: np.ndarray) -> np.ndarray:
    L = len(r)
    R = np.zeros((2 * L, 2 * L), dtype=complex)
    R[:L, :L] = r
    R[L:, L:] = r
    return R


def propagator(lattice: Lattice, t: float, J: float = 1.0) -> Propagator:
    h = lattice.hopping_matrix(J)
    return Propagator(_block_diag(sla.expm(-1j * t * h)), "continuous")


def _hop_matrix(L, p, q, a):
    """Single-particle matrix of ``exp(i a (c+_p c_q + h.c.))``."""
    m = np.eye(L, dtype=complex)
    c, s = math.cos(a), math.sin(a)
    m[p, p] = m[q, q] = c
    m[p, q] = m[q, p] = 1j * s
    return m


def trotterized_propagator(lattice: Lattice, t: float, steps: int, J: float = 1.0,
                           step_times=None) -> Propagator:
    """Product of single-bond exponentials in the circuit's hop order."""
    L = lattice.n_sites
    r = np.eye(L, dtype=complex)
    for op in trotter_program(lattice, t, 0.0, steps, J, step_times):
        kind = op[0]
        if op[0] in ("onsite", "cz_block") or op[1] != 0:
            continue  # spin-down block is identical
        if kind == "hop":
            _, _, p, q, a, _ = op
            r = _hop_matrix(L, p, q, a) @ r
        elif kind in ("fswap", "merged"):
            p, q = op[2], op[3]
            m = np.eye(L, dtype=complex)
            m[[p, q]] = m[[q, p]]
            if kind == "merged":
                m = _hop_matrix(L, p, q, op[4]) @ m
            r = m @ r
    return Propagator(_block_diag(r), "trotterized")


# ------------------------------------------------------------- densities
def density(prop: Propagator, init: MagicInitialState) -> np.ndarray:
    """``<n_i(t)> = sum_a |R_ia|^2 <n_a>``."""
    P = np.abs(prop.R) ** 2
    return P @ init.occupations()


def _group_tensor(kind: str, k: int) -> np.ndarray:
    """Local ``<c+_a c_b c+_c c_d>`` for a group's modes (local order = global order)."""
    from . import _fermion_local as fl
    return fl.group_four_point(kind, k)


def density_density(prop: Propagator, init: MagicInitialState) -> np.ndarray:
    """``<n_i n_j>`` assembled from one-, two- and four-distinct-index terms.

    ``<n_i n_j> = sum R*_ia R_ib R*_jc R_jd <c+_a c_b c+_c c_d>``. The initial
    state is a product of independent groups (triplets, holons, doublons),
    each with definite particle number, so only index patterns with
    ``a = b, c = d`` or ``a = d, b = c`` survive across groups, and the
    genuinely four-distinct contributions come from inside one triplet.
    """
    R = prop.R
    n = init.occupations()
    P = np.abs(R) ** 2
    # one distinct index: a = b = c = d
    one = (P * n) @ P.T
    # two distinct indices, (a=b, c=d, a != c): sum P_ia P_jc <n_a n_c>
    nn = np.outer(n, n)
    # two distinct indices, (a=d, b=c, a != b): R*_ia R_ja R_ib R*_jb <n_a (1 - n_b)>
    mix = np.outer(n, 1 - n)
    four = np.zeros(R.shape, dtype=complex)
    for kind, modes in init.groups():
        idx = np.array(modes)
        G = _group_tensor(kind, len(modes))
        local_nn = np.einsum("aacc->ac", G)
        local_mix = np.einsum("abba->ab", G)
        nn[np.ix_(idx, idx)] = local_nn
        mix[np.ix_(idx, idx)] = local_mix
        if kind == "triplet":
            # four distinct modes of one triplet
            mask = np.ones((4, 4, 4, 4), bool)
            for a in range(4):
                for b in range(4):
                    for c in range(4):
                        for d in range(4):
                            if len({a, b, c, d}) < 4:
                                mask[a, b, c, d] = False
            Gd = np.where(mask, G, 0.0)
            Rs = R[:, idx]
            four += np.einsum("ia,ib,jc,jd,abcd->ij", Rs.conj(), Rs, Rs.conj(), Rs, Gd)
    np.fill_diagonal(nn, 0.0)
    np.fill_diagonal(mix, 0.0)
    two_a = P @ nn @ P.T
    X = R.conj()
    # sum_{a,b} R*_ia R_ja mix_ab R_ib R*_jb
    two_b = np.einsum("ia,ja,ab,ib,jb->ij", X, R, mix, R, X, optimize=True)
    out = one + two_a + two_b + four
    return np.real_if_close(out, tol=1e6).real


# -------------------------------------------------------- arbitrary Z
def _dets(M: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Batched ``det(M[rows[k], cols[k]])`` for index arrays of shape ``(K, w)``."""
    if rows.shape[1] == 0:
        return np.ones(len(rows), dtype=complex)
    sub = M[rows[:, :, None], cols[:, None, :]]
    return np.linalg.det(sub)


def _sector_lists(occ: np.ndarray, L: int):
    up = np.array([np.flatnonzero(o[:L]) for o in occ])
    dn = np.array([np.flatnonzero(o[L:]) for o in occ])
    return up, dn


def weighted_z_expectation(prop: Propagator, init: MagicInitialState, mode_subset, cap: int = 8) -> float:
    """``<psi| V^dag Z_S V |psi>`` via the double Fock sum of determinants.

    ``V^dag Z_S V`` is Gaussian with single-particle matrix ``R^dag D R``
    (``D = diag(-1 on S)``), so each pair of Fock components contributes a
    determinant; spin sectors factorize.
    """
    if init.n_triplets > cap:
        raise ValueError(f"{init.n_triplets} triplets exceed the cap of {cap} (cost 4^N determinants)")
    L = prop.n_sites
    R = prop.R
    d = np.ones(2 * L)
    d[list(mode_subset)] = -1
    M = R.conj().T @ (d[:, None] * R)
    occ, amp = init.fock_terms
    up, dn = _sector_lists(occ, L)
    K = len(amp)
    ii, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    val = (_dets(M[:L, :L], up[ii], up[jj]) * _dets(M[L:, L:], dn[ii], dn[jj]))
    tot = np.sum(amp[ii] * amp[jj] * val)
    if abs(tot.imag) > 1e-9:
        raise ArithmeticError(f"Z expectation has imaginary part {tot.imag}")
    return float(tot.real)


# ------------------------------------------------------------ amplitudes
def sector_dimension(init: MagicInitialState) -> int:
    L, N = init.n_sites, init.particles_per_sector
    return math.comb(L, N) ** 2


def amplitude(prop: Propagator, init: MagicInitialState, bitstring, return_flag: bool = False):
    """``<z| V |psi_init>`` summed over the ``2^{N_triplets}`` Fock components."""
    z = np.asarray([int(c) for c in bitstring] if isinstance(bitstring, str) else bitstring, dtype=np.int8)
    L = prop.n_sites
    N = init.particles_per_sector
    if z.shape != (2 * L,):
        raise ValueError("bitstring length does not match the propagator")
    if z[:L].sum() != N or z[L:].sum() != N:
        return (0j, False) if return_flag else 0j
    occ, amp = init.fock_terms
    up, dn = _sector_lists(occ, L)
    zu = np.flatnonzero(z[:L])
    zd = np.flatnonzero(z[L:])
    r = prop.block
    du = _dets(r, np.repeat(zu[None, :], len(amp), 0), up)
    dd = _dets(r, np.repeat(zd[None, :], len(amp), 0), dn)
    val = complex(np.sum(amp * du * dd))
    return (val, True) if return_flag else val


def probability(prop: Propagator, init: MagicInitialState, bitstring) -> float:
    return abs(amplitude(prop, init, bitstring)) ** 2


# ------------------------------------------------------- derived observables
def doublon_count(prop: Propagator, init: MagicInitialState) -> float:
    """``sum_p <n_{p,up} n_{p,dn}>``."""
    L = prop.n_sites
    nn = density_density(prop, init)
    return float(sum(nn[p, p + L] for p in range(L)))


def triplet_density(prop: Propagator, init: MagicInitialState, lattice: Lattice) -> float:
    """``(2/L) sum_bonds 4 (<Sz_i Sz_j> - <Sz_i><Sz_j>)`` with ``Sz = (n_up - n_dn)/2``."""
    L = prop.n_sites
    n = density(prop, init)
    nn = density_density(prop, init)
    eta = np.concatenate([np.ones(L), -np.ones(L)]) / 2
    tot = 0.0
    for b in lattice.bonds():
        i, j = lattice.position(b.i), lattice.position(b.j)
        a = [i, i + L]
        c = [j, j + L]
        szsz = sum(eta[x] * eta[y] * nn[x, y] for x in a for y in c)
        sz_i = sum(eta[x] * n[x] for x in a)
        sz_j = sum(eta[y] * n[y] for y in c)
        tot += 4 * (szsz - sz_i * sz_j)
    return float(2.0 / L * tot)
