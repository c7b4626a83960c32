"""Small exact fermion algebra on a handful of modes (local JW matrices)."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

_Z = np.diag([1.0, -1.0])
_SM = np.array([[0.0, 1.0], [0.0, 0.0]])  # |0><1|: annihilates an occupied mode


def annihilators(k: int) -> list[np.ndarray]:
    """JW annihilation matrices for ``k`` modes; mode 0 is the most significant qubit."""
    out = []
    for j in range(k):
        m = np.array([[1.0]])
        for i in range(k):
            f = _Z if i < j else _SM if i == j else np.eye(2)
            m = np.kron(m, f)
        out.append(m)
    return out


def majoranas(k: int) -> list[np.ndarray]:
    """``gamma_{2j} = c_j + c+_j``, ``gamma_{2j+1} = i (c+_j - c_j)``."""
    out = []
    for c in annihilators(k):
        cd = c.conj().T
        out.append(c + cd)
        out.append(1j * (cd - c))
    return out


def group_state(kind: str) -> np.ndarray:
    """Local state vector of a group in local JW order."""
    if kind == "triplet":  # modes a_up, b_up, a_dn, b_dn
        v = np.zeros(16)
        v[0b1001] = 1 / np.sqrt(2)
        v[0b0110] = -1 / np.sqrt(2)
        return v
    if kind == "holon":
        v = np.zeros(4)
        v[0] = 1
        return v
    if kind == "doublon":
        v = np.zeros(4)
        v[3] = 1
        return v
    raise ValueError(kind)


@lru_cache(maxsize=None)
def group_four_point(kind: str, k: int) -> np.ndarray:
    """``G[a,b,c,d] = <c+_a c_b c+_c c_d>`` in the group's local state."""
    v = group_state(kind)
    cs = annihilators(k)
    cds = [c.conj().T for c in cs]
    G = np.zeros((k, k, k, k))
    for a in range(k):
        for b in range(k):
            left = v @ cds[a] @ cs[b]
            for c in range(k):
                for d in range(k):
                    G[a, b, c, d] = np.real(left @ cds[c] @ cs[d] @ v)
    G.setflags(write=False)
    return G
