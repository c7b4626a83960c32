"""Dense statevector oracle: exact evolution, circuits, noise and sampling.

Qubit 0 is the most significant bit of the basis index, matching the
left-to-right order of bitstrings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .circuit import MEASURE, RELABEL, RZZ, U1Q, Circuit, experiment_circuit, trotter_circuit, triplet_prep_circuit
from .initial_state import MagicInitialState, default_initial_state
from .lattice import Lattice
from .shots import ShotTable

MAX_QUBITS = 24

PAULI = {
    0: np.eye(2, dtype=complex),
    1: np.array([[0, 1], [1, 0]], dtype=complex),
    2: np.array([[0, -1j], [1j, 0]]),
    3: np.diag([1.0 + 0j, -1.0]),
}


def _check_n(n: int):
    if n > MAX_QUBITS:
        raise ValueError(f"statevector simulation limited to {MAX_QUBITS} qubits (got {n})")


def zero_state(n: int) -> np.ndarray:
    _check_n(n)
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1.0
    return psi


def basis_state(bits: Sequence[int]) -> np.ndarray:
    n = len(bits)
    psi = np.zeros(2 ** n, dtype=complex)
    psi[int("".join(str(int(b)) for b in bits), 2)] = 1.0
    return psi


# ------------------------------------------------------------- kernels
def apply_1q(psi: np.ndarray, n: int, q: int, m: np.ndarray) -> np.ndarray:
    v = psi.reshape(2 ** q, 2, 2 ** (n - q - 1))
    return np.einsum("ij,ajb->aib", m, v).reshape(-1)


def apply_rzz(psi: np.ndarray, n: int, a: int, b: int, theta: float) -> np.ndarray:
    a, b = min(a, b), max(a, b)
    v = psi.reshape(2 ** a, 2, 2 ** (b - a - 1), 2, 2 ** (n - b - 1))
    e = np.exp(-0.5j * theta)
    ph = np.array([[e, e.conjugate()], [e.conjugate(), e]]).reshape(1, 2, 1, 2, 1)
    return (v * ph).reshape(-1)


def apply_swap(psi: np.ndarray, n: int, a: int, b: int) -> np.ndarray:
    v = psi.reshape((2,) * n)
    return np.ascontiguousarray(np.swapaxes(v, a, b)).reshape(-1)


def apply_pauli(psi, n, q, k):
    return psi if k == 0 else apply_1q(psi, n, q, PAULI[k])


def apply_gate(psi: np.ndarray, n: int, g) -> np.ndarray:
    if g.kind == U1Q:
        return apply_1q(psi, n, g.qubits[0], g.matrix())
    if g.kind == RZZ:
        return apply_rzz(psi, n, g.qubits[0], g.qubits[1], g.angle)
    if g.kind == RELABEL:
        return apply_swap(psi, n, *g.qubits)
    return psi  # measurement handled by sampling


def run_circuit(circuit: Circuit, state: np.ndarray | None = None) -> np.ndarray:
    n = circuit.n_qubits
    _check_n(n)
    psi = zero_state(n) if state is None else np.asarray(state, dtype=complex).copy()
    if psi.shape != (2 ** n,):
        raise ValueError("state size does not match circuit qubit count")
    for g in circuit.gates:
        psi = apply_gate(psi, n, g)
    return psi


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Full unitary (columns = images of basis states); small circuits only."""
    n = circuit.n_qubits
    if n > 12:
        raise ValueError("unitary construction limited to 12 qubits")
    cols = [run_circuit(circuit, basis_state([(k >> (n - 1 - i)) & 1 for i in range(n)])) for k in range(2 ** n)]
    return np.array(cols).T


# ----------------------------------------------------------- Hamiltonian
def _popcount(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(x.astype(np.uint64)).astype(np.int64)


def sector_basis(n_modes: int, sectors: Iterable[tuple[int, int]]) -> np.ndarray:
    """Sorted basis indices with the requested (N_up, N_dn) weights."""
    L = n_modes // 2
    idx = np.arange(2 ** n_modes, dtype=np.int64)
    up = _popcount(idx >> L)
    dn = _popcount(idx & ((1 << L) - 1))
    keep = np.zeros(len(idx), bool)
    for nu, nd in sectors:
        keep |= (up == nu) & (dn == nd)
    return idx[keep]


def hamiltonian(lattice: Lattice, U: float, basis: np.ndarray | None = None, J: float = 1.0) -> sp.csr_matrix:
    """JW-encoded Fermi-Hubbard Hamiltonian restricted to ``basis`` (sorted indices)."""
    L = lattice.n_sites
    n = 2 * L
    _check_n(n)
    if basis is None:
        basis = np.arange(2 ** n, dtype=np.int64)
    basis = np.asarray(basis, dtype=np.int64)
    D = len(basis)
    bit = lambda m: np.int64(1) << np.int64(n - 1 - m)
    rows, cols, vals = [], [], []
    for b in lattice.bonds():
        p, q = sorted((lattice.position(b.i), lattice.position(b.j)))
        for o in (0, L):
            m1, m2 = o + p, o + q
            b1, b2 = bit(m1), bit(m2)
            occ1 = (basis & b1) != 0
            occ2 = (basis & b2) != 0
            move = occ1 != occ2
            src = basis[move]
            dst = src ^ (b1 | b2)
            between = 0
            for m in range(m1 + 1, m2):
                between |= int(bit(m))
            sign = 1 - 2 * (_popcount(src & np.int64(between)) % 2)
            j = np.searchsorted(basis, dst)
            ok = (j < D)
            ok[ok] &= basis[j[ok]] == dst[ok]
            rows.append(j[ok])
            cols.append(np.flatnonzero(move)[ok])
            vals.append(-J * b.sign * sign[ok].astype(float))
    diag = np.zeros(D)
    for p in range(L):
        diag += U * (((basis & bit(p)) != 0) & ((basis & bit(p + L)) != 0))
    rows.append(np.arange(D))
    cols.append(np.arange(D))
    vals.append(diag)
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(D, D))
    return H


def _sectors_of(psi: np.ndarray, n: int) -> list[tuple[int, int]]:
    L = n // 2
    idx = np.flatnonzero(np.abs(psi) > 1e-15).astype(np.int64)
    up = _popcount(idx >> L)
    dn = _popcount(idx & ((1 << L) - 1))
    return sorted(set(zip(up.tolist(), dn.tolist())))


def evolve_exact(lattice: Lattice, state: np.ndarray, t: float, U: float, J: float = 1.0) -> np.ndarray:
    """Apply ``exp(-i H t)`` using a Krylov-type action on the occupied sectors."""
    n = lattice.n_modes
    _check_n(n)
    psi = np.asarray(state, dtype=complex)
    if psi.shape != (2 ** n,):
        raise ValueError("state size does not match lattice")
    if t == 0:
        return psi.copy()
    basis = sector_basis(n, _sectors_of(psi, n))
    H = hamiltonian(lattice, U, basis, J)
    sub = expm_multiply(-1j * t * H, psi[basis], traceA=0.0)
    out = np.zeros_like(psi)
    out[basis] = sub
    return out


def energy(lattice: Lattice, state: np.ndarray, U: float, J: float = 1.0) -> float:
    n = lattice.n_modes
    basis = sector_basis(n, _sectors_of(state, n))
    H = hamiltonian(lattice, U, basis, J)
    v = state[basis]
    return float(np.real(np.vdot(v, H @ v)))


# ----------------------------------------------------------- observables
def probabilities(psi: np.ndarray) -> np.ndarray:
    return np.abs(psi) ** 2


def walsh_z(p: np.ndarray, n: int) -> np.ndarray:
    """``<Z_S>`` for every subset mask ``S`` (same bit order as basis indices)."""
    v = np.asarray(p, dtype=float).reshape((2,) * n).copy()
    for ax in range(n):
        a = np.take(v, 0, axis=ax)
        b = np.take(v, 1, axis=ax)
        v = np.stack([a + b, a - b], axis=ax)
    return v.reshape(-1)


def z_strings(n: int, max_weight: int) -> list[tuple[int, ...]]:
    import itertools
    out = []
    for w in range(1, max_weight + 1):
        out.extend(itertools.combinations(range(n), w))
    return out


def z_expectations(psi: np.ndarray, n: int, subsets: Sequence[Sequence[int]]) -> np.ndarray:
    w = walsh_z(probabilities(psi), n)
    idx = [sum(1 << (n - 1 - m) for m in s) for s in subsets]
    return w[idx]


def density(psi: np.ndarray, n: int) -> np.ndarray:
    z = z_expectations(psi, n, [(m,) for m in range(n)])
    return (1 - z) / 2


def density_density(psi: np.ndarray, n: int) -> np.ndarray:
    p = probabilities(psi).reshape((2,) * n)
    out = np.zeros((n, n))
    occ = np.array(np.unravel_index(np.arange(2 ** n), (2,) * n)).T.astype(float)  # (2^n, n)
    pf = p.reshape(-1)
    return (occ * pf[:, None]).T @ occ


# --------------------------------------------------------------- sampling
def _bits_of(idx: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


def sample(state: np.ndarray, n_shots: int, rng_seed=None, time: float = 0.0, U: float = 0.0,
           twirl_id: int = 0, meta=None) -> ShotTable:
    psi = np.asarray(state)
    n = int(round(math.log2(len(psi))))
    rng = np.random.default_rng(rng_seed)
    p = probabilities(psi)
    p = p / p.sum()
    idx = rng.choice(len(p), size=n_shots, p=p)
    return ShotTable(time, U, twirl_id, _bits_of(idx.astype(np.int64), n), dict(meta or {}))


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing noise per gate plus readout bit flips (defaults: device table values)."""

    p2: float = 1e-3
    p1: float = 3e-5
    spam: float = 1e-3

    def __post_init__(self):
        for v in (self.p1, self.p2, self.spam):
            if not 0 <= v <= 1:
                raise ValueError("noise probabilities must lie in [0, 1]")


def noisy_run(circuit: Circuit, noise: NoiseModel, n_shots: int, seed=None, time=None, U=None,
              twirl_id: int = 0, initial: np.ndarray | None = None, checkpoint_every: int = 64) -> ShotTable:
    """Monte-Carlo trajectories with random Paulis after faulty gates and readout flips.

    Shots whose trajectory has no gate fault are drawn from the ideal output
    distribution; faulty trajectories restart from the nearest stored
    checkpoint of the ideal evolution.
    """
    n = circuit.n_qubits
    _check_n(n)
    rng = np.random.default_rng(seed)
    gates = [g for g in circuit.gates if g.kind != MEASURE]
    probs = np.array([noise.p2 if g.kind == RZZ else noise.p1 if g.kind == U1Q else 0.0 for g in gates])
    psi = zero_state(n) if initial is None else np.asarray(initial, complex).copy()
    checkpoints = {0: psi}
    budget = max(1, int(2e8 // (16 * len(psi))))
    stride = max(checkpoint_every, len(gates) // budget + 1)
    for k, g in enumerate(gates):
        psi = apply_gate(psi, n, g)
        if (k + 1) % stride == 0:
            checkpoints[k + 1] = psi
    ideal = psi
    faults = rng.random((n_shots, len(gates))) < probs[None, :] if len(gates) else np.zeros((n_shots, 0), bool)
    bits = np.zeros((n_shots, n), np.uint8)
    clean = ~faults.any(axis=1)
    if clean.any():
        p = probabilities(ideal)
        idx = rng.choice(len(p), size=int(clean.sum()), p=p / p.sum())
        bits[clean] = _bits_of(idx.astype(np.int64), n)
    for s in np.flatnonzero(~clean):
        where = np.flatnonzero(faults[s])
        start = (where[0] // stride) * stride
        v = checkpoints[start]
        for k in range(start, len(gates)):
            g = gates[k]
            v = apply_gate(v, n, g)
            if faults[s, k]:
                if g.kind == RZZ:
                    r = int(rng.integers(1, 16))
                    v = apply_pauli(v, n, g.qubits[0], r >> 2)
                    v = apply_pauli(v, n, g.qubits[1], r & 3)
                else:
                    v = apply_pauli(v, n, g.qubits[0], int(rng.integers(1, 4)))
        p = probabilities(v)
        bits[s] = _bits_of(np.array([rng.choice(len(p), p=p / p.sum())], np.int64), n)[0]
    if noise.spam > 0:
        bits ^= (rng.random(bits.shape) < noise.spam).astype(np.uint8)
    t = circuit.meta.get("t", 0.0) if time is None else time
    u = circuit.meta.get("U", 0.0) if U is None else U
    return ShotTable(t, u, twirl_id, bits, {"source": "svsim-noisy"})


# ------------------------------------------------------------ Trotter error
def trotter_error_report(lattice: Lattice, steps: int, times: Sequence[float], observables=3,
                         U: float = 4.0, init: MagicInitialState | None = None) -> list[dict]:
    """Compare exact and Trotterized evolution of the prepared state.

    ``observables`` is a maximum Z-string weight or an explicit list of mode
    subsets. Each row holds ``t``, ``mean_error``, ``max_error`` and the
    infidelity bound ``2 sqrt(1 - |<psi|psi'>|^2)``.
    """
    n = lattice.n_modes
    _check_n(n)
    init = init or default_initial_state(lattice)
    psi0 = run_circuit(triplet_prep_circuit(lattice, init=init))
    subsets = z_strings(n, observables) if isinstance(observables, int) else [tuple(s) for s in observables]
    rows = []
    for t in times:
        exact = evolve_exact(lattice, psi0, t, U)
        trot = run_circuit(trotter_circuit(lattice, t, U, steps, parity=init.parity), psi0)
        ov = abs(np.vdot(exact, trot)) ** 2
        infid = 2 * math.sqrt(max(0.0, 1 - ov))
        err = np.abs(z_expectations(exact, n, subsets) - z_expectations(trot, n, subsets))
        rows.append({"t": float(t), "mean_error": float(err.mean()), "max_error": float(err.max()),
                     "infidelity": infid})
    return rows
