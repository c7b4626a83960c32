"""Qubit circuits: gate set, state preparation, Trotter synthesis, costs.

Native gates are single-qubit unitaries (Z-Y-Z Euler angles), ``RZZ(theta)
= exp(-i theta Z Z / 2)``, the software ``RelabelSwap`` and ``Measure``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .initial_state import MagicInitialState, default_initial_state
from .lattice import Lattice
from .schedule import trotter_program

U1Q, RZZ, RELABEL, MEASURE = "U1q", "RZZ", "RelabelSwap", "Measure"

# ------------------------------------------------------------ 1q matrices


def rz(a):
    return np.array([[np.exp(-0.5j * a), 0], [0, np.exp(0.5j * a)]])


def ry(b):
    c, s = math.cos(b / 2), math.sin(b / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def u1q_matrix(euler) -> np.ndarray:
    """``Rz(a) Ry(b) Rz(c)`` for ``euler = (a, b, c)``."""
    a, b, c = euler
    return rz(a) @ ry(b) @ rz(c)


def zyz_angles(U: np.ndarray) -> tuple[float, float, float]:
    """Euler angles ``(a, b, c)`` with ``U = e^{i g} Rz(a) Ry(b) Rz(c)``."""
    U = np.asarray(U, dtype=complex)
    U = U / np.sqrt(np.linalg.det(U))
    b = 2 * math.atan2(abs(U[1, 0]), abs(U[0, 0]))
    if abs(U[0, 0]) < 1e-12:
        d = 2 * np.angle(U[1, 0])
        return float(d), b, 0.0
    if abs(U[1, 0]) < 1e-12:
        return float(-2 * np.angle(U[0, 0])), 0.0, 0.0
    # U00 = e^{-i(a+c)/2} cos, U10 = e^{i(a-c)/2} sin
    ssum = -2 * np.angle(U[0, 0])
    sdif = 2 * np.angle(U[1, 0])
    return float((ssum + sdif) / 2), b, float((ssum - sdif) / 2)


NAMED = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "S": np.diag([1, 1j]),
    "Sdg": np.diag([1, -1j]),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0 + 0j, -1.0]),
}
NAMED_EULER = {k: zyz_angles(v) for k, v in NAMED.items()}


# ------------------------------------------------------------------ gates
@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None
    euler: tuple[float, float, float] | None = None
    tag: str = ""

    def __post_init__(self):
        if self.kind in (RZZ, RELABEL):
            if len(self.qubits) != 2 or self.qubits[0] == self.qubits[1]:
                raise ValueError(f"{self.kind} needs two distinct qubits")
        elif self.kind in (U1Q, MEASURE):
            if len(self.qubits) != 1:
                raise ValueError(f"{self.kind} acts on one qubit")
        else:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        vals = ([self.angle] if self.angle is not None else []) + list(self.euler or ())
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("gate angles must be finite")

    @property
    def is_physical(self) -> bool:
        return self.kind in (U1Q, RZZ)

    def matrix(self) -> np.ndarray:
        if self.kind == U1Q:
            return u1q_matrix(self.euler)
        if self.kind == RZZ:
            ph = np.exp(-0.5j * self.angle)
            return np.diag([ph, ph.conjugate(), ph.conjugate(), ph])
        if self.kind == RELABEL:
            return np.eye(4)[[0, 2, 1, 3]].astype(complex)
        raise ValueError("measurement has no unitary")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "qubits": list(self.qubits)}
        if self.angle is not None:
            d["angle"] = float(self.angle)
        if self.euler is not None:
            d["euler"] = [float(v) for v in self.euler]
        d["tag"] = self.tag
        return d

    @classmethod
    def from_dict(cls, d) -> "Gate":
        return cls(d["kind"], tuple(int(q) for q in d["qubits"]),
                   d.get("angle"), tuple(d["euler"]) if d.get("euler") is not None else None,
                   d.get("tag", ""))


def one(name: str, q: int, tag: str = "") -> Gate:
    return Gate(U1Q, (q,), euler=NAMED_EULER[name], tag=tag)


def u1q(matrix, q: int, tag: str = "") -> Gate:
    return Gate(U1Q, (q,), euler=zyz_angles(matrix), tag=tag)


def rzz(a: int, b: int, theta: float, tag: str = "") -> Gate:
    return Gate(RZZ, (a, b), angle=float(theta), tag=tag)


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits:
                raise ValueError("gate qubit index out of range")

    def __len__(self):
        return len(self.gates)

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")
        meta = {**self.meta, **other.meta}
        return Circuit(self.n_qubits, self.gates + other.gates, meta)

    def with_measurement(self) -> "Circuit":
        gates = self.gates + [Gate(MEASURE, (q,), tag="measure") for q in range(self.n_qubits)]
        return Circuit(self.n_qubits, gates, dict(self.meta))

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "meta": self.meta,
                "gates": [g.to_dict() for g in self.gates]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "Circuit":
        return cls(int(d["n_qubits"]), [Gate.from_dict(g) for g in d["gates"]], dict(d.get("meta", {})))

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------ two-qubit blocks
def hop_gates(a: int, b: int, t: float, tag: str = "hop") -> list[Gate]:
    """``exp(i t (XX + YY) / 2)`` on qubits ``a, b`` with two RZZ."""
    g = []
    for q in (a, b):
        g.append(one("H", q, tag))
    g.append(rzz(a, b, -t, tag))
    for name in ("H", "Sdg", "H"):
        for q in (a, b):
            g.append(one(name, q, tag))
    g.append(rzz(a, b, -t, tag))
    for name in ("H", "S"):
        for q in (a, b):
            g.append(one(name, q, tag))
    return g


def merged_gates(a: int, b: int, t: float, tag_f: str = "fswap", tag_h: str = "hop-h") -> list[Gate]:
    """FSWAP times ``exp(i t (XX + YY) / 2)`` with two RZZ (no relabelling)."""
    theta = -t - math.pi / 2
    g = [one("H", a, tag_h), one("H", b, tag_h), rzz(a, b, theta, tag_f)]
    for name in ("H", "Sdg", "H"):
        for q in (a, b):
            g.append(one(name, q, tag_h))
    g.append(rzz(a, b, theta, tag_h))
    g.extend([one("H", a, tag_h), one("H", b, tag_h)])
    return g


def cz_gates(a: int, b: int, tag: str = "cz") -> list[Gate]:
    """CZ up to global phase: ``RZZ(pi/2)`` followed by ``Sdg x Sdg``."""
    return [rzz(a, b, math.pi / 2, tag), one("Sdg", a, tag), one("Sdg", b, tag)]


def fswap_gates(a: int, b: int, tag: str = "fswap") -> list[Gate]:
    """FSWAP = SWAP . CZ with the SWAP done by relabelling."""
    return cz_gates(a, b, tag) + [Gate(RELABEL, (a, b), tag=tag)]


def cz_block(n: int, offset: int, Lx: int, tag: str = "boundary-cz") -> list[Gate]:
    """CZ ladder dressing boundary hops with their JW Z-strings (sector of size ``n``)."""
    g = []
    for i in range(Lx - 1):
        for j in range(1, Lx - i):
            g.extend(cz_gates(offset + i, offset + n - j, tag))
    return g


# ---------------------------------------------------------- preparation
def triplet_prep_circuit(lattice: Lattice, dimer_pairing=None, holon_site=None,
                         doublon_site=None, init: MagicInitialState | None = None) -> Circuit:
    """Prepare the triplet/holon/doublon product state from ``|0...0>``.

    Either pass ``init`` or the pairing (snake-position pairs) plus holon and
    doublon positions (``None`` or an int or a list).
    """
    L = lattice.n_sites
    if init is None:
        if dimer_pairing is None:
            init = default_initial_state(lattice)
        else:
            def as_tuple(v):
                if v is None:
                    return ()
                return (v,) if isinstance(v, (int, np.integer)) else tuple(v)
            pairs = tuple(tuple(sorted(p)) for p in dimer_pairing)
            init = MagicInitialState(L, tuple(sorted(pairs)), as_tuple(holon_site), as_tuple(doublon_site))
    if init.n_sites != L:
        raise ValueError("initial state does not match the lattice")
    g: list[Gate] = []
    for d in init.doublons:
        g += [one("X", d, "prep"), one("X", d + L, "prep")]
    for a, b in init.triplets:
        u1, u2, d1, d2 = a, b, a + L, b + L
        g += [one("H", q, "prep") for q in (u1, u2, d1, d2)]
        g += [rzz(u1, u2, math.pi / 2, "prep"), one("Sdg", u1, "prep"), one("Sdg", u2, "prep"),
              one("H", u2, "prep")]
        g += [rzz(u2, d1, math.pi / 2, "prep"), one("Sdg", u2, "prep"), one("Sdg", d1, "prep"),
              one("X", u2, "prep"), one("H", d1, "prep")]
        g += [rzz(d1, d2, math.pi / 2, "prep"), one("Sdg", d1, "prep"), one("Sdg", d2, "prep"),
              one("Y", d1, "prep"), one("H", d2, "prep")]
    return Circuit(2 * L, g, {"kind": "prep", "init": init.to_dict()})


# ---------------------------------------------------------------- Trotter
def trotter_circuit(lattice: Lattice, t: float, U: float, steps: int, J: float = 1.0,
                    parity: int | None = None, step_times=None) -> Circuit:
    """Second-order Trotter circuit built on the fermionic swap network.

    ``parity`` is the per-sector fermion parity ``(-1)^N`` used by the loop
    and boundary hops; it defaults to that of :func:`default_initial_state`.
    """
    if parity is None:
        parity = default_initial_state(lattice).parity
    if parity not in (1, -1):
        raise ValueError("parity must be +1 or -1")
    L, Lx = lattice.n_sites, lattice.Lx
    prog = trotter_program(lattice, t, U, steps, J, step_times)
    g: list[Gate] = []
    for op in prog:
        kind = op[0]
        if kind == "hop":
            _, sec, p, q, a, hk = op
            o = sec * L
            if hk == "v":
                g += hop_gates(o + p, o + q, a, "hop-v")
            else:
                g += hop_gates(o + p, o + q, -parity * a, "hop-v" if hk == "loop" else "boundary-hop")
        elif kind == "merged":
            _, sec, p, q, a = op
            g += merged_gates(sec * L + p, sec * L + q, a)
        elif kind == "fswap":
            _, sec, p, q = op
            g += fswap_gates(sec * L + p, sec * L + q)
        elif kind == "onsite":
            _, p, theta = op
            g.append(rzz(p, p + L, theta / 2, "onsite"))
        elif kind == "cz_block":
            g += cz_block(L, op[1] * L, Lx)
    meta = {"kind": "trotter", "t": float(t), "U": float(U), "steps": int(steps), "J": float(J),
            "Lx": lattice.Lx, "Ly": lattice.Ly, "flux": lattice.preset, "parity": parity}
    return Circuit(2 * L, g, meta)


def experiment_circuit(lattice: Lattice, t: float, U: float, steps: int,
                       init: MagicInitialState | None = None, twirl_seed: int | None = None,
                       compile: bool = False) -> Circuit:
    """Preparation followed by Trotter evolution, optionally twirled and compiled."""
    init = init or default_initial_state(lattice)
    c = triplet_prep_circuit(lattice, init=init) + trotter_circuit(lattice, t, U, steps, parity=init.parity)
    c.meta["init"] = init.to_dict()
    if twirl_seed is not None:
        c = pseudo_twirl(c, twirl_seed)
    if compile:
        c = compile_1q(c)
    return c


# ------------------------------------------------------------------ costs
def predicted_two_qubit_cost(Lx: int, Ly: int, N: int) -> int:
    """Closed-form RZZ count of ``N`` merged second-order Trotter steps (no preparation)."""
    if Lx % 2 == 0:
        n_f = (2 * Lx * Lx - 5 * Lx + 4) * Ly
    else:
        n_f = (2 * Lx * Lx - 4 * Lx + 2) * Ly
    n_h = 2 * Lx * Ly
    if Ly % 2 == 0:
        n_v = 2 * Lx * Ly
        c_b = 0
        c_merge = 4 * Ly
    else:
        n_v = 2 * Lx * (Ly - 1)
        c_b = Lx * Lx + 3 * Lx
        c_merge = 4 * (Ly - 1)
    c_nw = n_f + 2 * n_v + n_h
    c_c = Lx * Ly
    return N * (2 * c_nw + 2 * c_b + c_c - c_merge) + c_merge


def gate_counts(circuit: Circuit) -> dict:
    one_q = two_q = 0
    by_tag: dict[str, int] = {}
    for g in circuit.gates:
        if not g.is_physical:
            continue
        if g.kind == RZZ:
            two_q += 1
        else:
            one_q += 1
        key = f"{g.tag}:{g.kind}"
        by_tag[key] = by_tag.get(key, 0) + 1
    return {"one_qubit": one_q, "two_qubit": two_q, "by_tag": by_tag}


def final_qubit_permutation(circuit: Circuit) -> list[int]:
    """Where each qubit's mode ends up: ``perm[q]`` is the final wire of the mode starting on ``q``.

    Composes relabelling swaps and the physical swaps inside merged
    hop+FSWAP blocks (their second RZZ carries the ``hop-h`` tag and the
    first the ``fswap`` tag).
    """
    wire_of = list(range(circuit.n_qubits))
    mode_on = list(range(circuit.n_qubits))
    pending = None
    for g in circuit.gates:
        swap = None
        if g.kind == RELABEL:
            swap, pending = g.qubits, None
        elif g.kind == RZZ and g.tag == "fswap":
            pending = g.qubits
        elif g.kind == RZZ and g.tag == "hop-h" and pending == g.qubits:
            swap, pending = g.qubits, None
        if swap:
            a, b = swap
            ma, mb = mode_on[a], mode_on[b]
            mode_on[a], mode_on[b] = mb, ma
            wire_of[ma], wire_of[mb] = b, a
    return wire_of


# ----------------------------------------------------------------- twirl
PAULIS = ("I", "X", "Y", "Z")


def pseudo_twirl(circuit: Circuit, seed: int) -> Circuit:
    """Conjugate every RZZ by a random two-qubit Pauli, flipping the angle when needed."""
    rng = np.random.default_rng(seed)
    out = []
    for g in circuit.gates:
        if g.kind != RZZ:
            out.append(g)
            continue
        pa, pb = (PAULIS[i] for i in rng.integers(0, 4, size=2))
        flip = (pa in "XY") != (pb in "XY")
        pre = [one(p, q, "twirl") for p, q in ((pa, g.qubits[0]), (pb, g.qubits[1])) if p != "I"]
        out += pre
        out.append(replace(g, angle=-g.angle if flip else g.angle))
        out += pre
    meta = dict(circuit.meta)
    meta["twirl_seed"] = int(seed)
    return Circuit(circuit.n_qubits, out, meta)


# --------------------------------------------------------------- compile
def compile_1q(circuit: Circuit, measured: bool | None = None) -> Circuit:
    """Merge runs of single-qubit gates into one Z-Y-Z unitary each.

    Pending single-qubit gates travel through relabelling swaps, and pure Z
    rotations are commuted through RZZ gates (both diagonal). Identities are
    dropped. With ``measured=True`` (default: circuit ends in measurements)
    diagonal gates right before measurement are removed as well.
    """
    n = circuit.n_qubits
    if measured is None:
        measured = any(g.kind == MEASURE for g in circuit.gates)
    pend: list[np.ndarray | None] = [None] * n
    out: list[Gate] = []

    def flush(q, keep_z=False):
        """Emit pending gate on ``q``; with ``keep_z`` hold back a trailing Z rotation."""
        m = pend[q]
        pend[q] = None
        if m is None:
            return
        a, b, c = zyz_angles(m)
        if keep_z:
            # m = Rz(a) Ry(b) Rz(c): emit Ry(b) Rz(c), keep Rz(a) pending
            if abs(b) < 1e-12:
                pend[q] = m
                return
            out.append(Gate(U1Q, (q,), euler=(0.0, b, c), tag="1q"))
            if not _is_identity(rz(a)):
                pend[q] = rz(a)
            return
        if _is_identity(m):
            return
        out.append(Gate(U1Q, (q,), euler=(a, b, c), tag="1q"))

    for g in circuit.gates:
        if g.kind == U1Q:
            q = g.qubits[0]
            m = g.matrix()
            pend[q] = m if pend[q] is None else m @ pend[q]
        elif g.kind == RELABEL:
            a, b = g.qubits
            pend[a], pend[b] = pend[b], pend[a]
            out.append(g)
        elif g.kind == RZZ:
            for q in g.qubits:
                flush(q, keep_z=True)
            out.append(g)
        else:  # measurement
            q = g.qubits[0]
            m = pend[q]
            if measured and m is not None and abs(m[0, 1]) < 1e-12:
                pend[q] = None
            flush(q)
            out.append(g)
    for q in range(n):
        flush(q)
    meta = dict(circuit.meta)
    meta["compiled"] = True
    return Circuit(n, out, meta)


def _is_identity(m: np.ndarray) -> bool:
    return abs(abs(np.trace(m)) - 2) < 1e-12
