"""Heisenberg-picture propagation of observables as Majorana polynomials.

Majoranas of mode ``m`` are ``gamma_{2m} = c_m + c+_m`` and
``gamma_{2m+1} = i (c+_m - c_m)``, so ``Z_m = -i gamma_{2m} gamma_{2m+1}``
and ``n_m = (1 + i gamma_{2m} gamma_{2m+1}) / 2``. A monomial ``S`` stands for
the Hermitian operator ``B_S = i^{k(k-1)/2} gamma_S`` (ascending product,
``k = |S|``), so all coefficients are real. Spin-up Majoranas live in the
first 64-bit word and spin-down in the second, which limits a sector to 32
modes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from . import _fermion_local as fl
from . import _mpkernels as K
from .initial_state import MagicInitialState
from .lattice import Lattice
from .schedule import trotter_program

DEFAULT_MAX_TERMS = 10_000_000  # about 2 GB of working memory


class TermBudgetExceeded(MemoryError):
    """Raised when a polynomial grows past the configured term budget."""


# ----------------------------------------------------------- polynomial
@dataclass
class MajoranaPolynomial:
    n_sites: int
    w0: np.ndarray
    w1: np.ndarray
    coeff: np.ndarray

    def __post_init__(self):
        if self.n_sites > 32:
            raise ValueError("Majorana propagation supports at most 32 sites per sector")
        self.w0 = np.ascontiguousarray(self.w0, dtype=np.uint64)
        self.w1 = np.ascontiguousarray(self.w1, dtype=np.uint64)
        self.coeff = np.ascontiguousarray(self.coeff, dtype=np.float64)

    def __len__(self):
        return len(self.coeff)

    @classmethod
    def from_terms(cls, n_sites: int, terms: Mapping[tuple[int, ...], float]) -> "MajoranaPolynomial":
        """From ``{sorted Majorana indices: coefficient}`` (global index ``< 4 n_sites``)."""
        acc: dict[tuple[int, int], float] = {}
        L2 = 2 * n_sites
        for S, v in terms.items():
            a = b = 0
            for g in S:
                if g < L2:
                    a |= 1 << g
                else:
                    b |= 1 << (g - L2)
            acc[(a, b)] = acc.get((a, b), 0.0) + float(v)
        items = [(k, v) for k, v in acc.items() if v != 0.0]
        w0 = np.array([k[0] for k, _ in items], dtype=np.uint64)
        w1 = np.array([k[1] for k, _ in items], dtype=np.uint64)
        return cls(n_sites, w0, w1, np.array([v for _, v in items]))

    def terms(self) -> dict[tuple[int, ...], float]:
        L2 = 2 * self.n_sites
        out = {}
        for a, b, v in zip(self.w0.tolist(), self.w1.tolist(), self.coeff.tolist()):
            S = tuple([i for i in range(64) if (a >> i) & 1] + [L2 + i for i in range(64) if (b >> i) & 1])
            out[S] = out.get(S, 0.0) + v
        return out

    def weights(self) -> np.ndarray:
        return K.weights(self.w0, self.w1)

    def magnitudes(self) -> np.ndarray:
        """Per-term ``|c|`` (largest column when several observables share the support)."""
        a = np.abs(self.coeff)
        return a if a.ndim == 1 else a.max(axis=1)

    def canonical(self) -> "MajoranaPolynomial":
        """Merge duplicates, drop zeros, sort monomials."""
        if len(self) == 0:
            return self
        order = np.lexsort((self.w0, self.w1))
        a, b, c = self.w0[order], self.w1[order], self.coeff[order]
        new = np.ones(len(a), bool)
        new[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
        idx = np.flatnonzero(new)
        s = np.add.reduceat(c, idx)
        keep = s != 0 if s.ndim == 1 else (s != 0).any(axis=1)
        return MajoranaPolynomial(self.n_sites, a[idx][keep], b[idx][keep], s[keep])

    def weight_histogram(self) -> dict[int, float]:
        w = self.weights()
        out: dict[int, float] = {}
        for k in np.unique(w):
            out[int(k)] = float(np.abs(self.coeff[w == k]).sum())
        return out

    def to_matrix(self) -> np.ndarray:
        """Dense operator on ``2 n_sites`` modes (small systems only)."""
        n = 2 * self.n_sites
        if n > 8:
            raise ValueError("dense reconstruction limited to 8 modes")
        g = fl.majoranas(n)
        M = np.zeros((2 ** n, 2 ** n), dtype=complex)
        for S, v in self.terms().items():
            op = np.eye(2 ** n, dtype=complex)
            for i in S:
                op = op @ g[i]
            k = len(S)
            M += v * (1j ** (k * (k - 1) // 2)) * op
        return M


# ----------------------------------------------------- observable input
ZPoly = dict  # frozenset(modes) -> real coefficient, a diagonal observable in Z strings


def z_mul(a: ZPoly, b: ZPoly) -> ZPoly:
    out: dict = {}
    for s1, v1 in a.items():
        for s2, v2 in b.items():
            s = s1 ^ s2
            out[s] = out.get(s, 0.0) + v1 * v2
    return {k: v for k, v in out.items() if v != 0.0}


def z_add(*polys: ZPoly, scale: Sequence[float] | None = None) -> ZPoly:
    out: dict = {}
    for k, p in enumerate(polys):
        f = 1.0 if scale is None else scale[k]
        for s, v in p.items():
            out[s] = out.get(s, 0.0) + f * v
    return {k: v for k, v in out.items() if v != 0.0}


def number_op(m: int) -> ZPoly:
    return {frozenset(): 0.5, frozenset([m]): -0.5}


def sz_op(p: int, L: int) -> ZPoly:
    """``S^z = (n_up - n_dn) / 2`` at snake site ``p``."""
    return {frozenset([p]): -0.25, frozenset([p + L]): 0.25}


def doublons_op(L: int) -> ZPoly:
    return z_add(*[z_mul(number_op(p), number_op(p + L)) for p in range(L)])


def szsz_bonds_op(lattice: Lattice) -> ZPoly:
    """Sum over all torus bonds of ``S^z_i S^z_j`` (non-connected part)."""
    L = lattice.n_sites
    terms = []
    for b in lattice.bonds():
        p, q = lattice.position(b.i), lattice.position(b.j)
        terms.append(z_mul(sz_op(p, L), sz_op(q, L)))
    return z_add(*terms)


def holon_op(p: int, L: int) -> ZPoly:
    return z_mul(z_add(number_op(p), scale=[-1.0]) | {frozenset(): 0.5}, z_add(number_op(p + L), scale=[-1.0]) | {frozenset(): 0.5})


def doublon_op(p: int, L: int) -> ZPoly:
    return z_mul(number_op(p), number_op(p + L))


def open_wilson_line_op(lattice: Lattice, M: int, kind: str = "hd") -> ZPoly:
    """Diagonal operator whose expectation is the pair-normalized open Wilson line:
    ``(1/N_pairs) sum_pairs A_i B_j mean_paths sum_bonds Sz Sz``."""
    from .observables import _pairs_at, _path_bonds

    L = lattice.n_sites
    ops = {"h": holon_op, "d": doublon_op}
    pairs = _pairs_at(lattice, M, kind[0] != kind[1])
    terms = []
    for i, j in pairs:
        ends = z_mul(ops[kind[0]](i, L), ops[kind[1]](j, L))
        paths = _path_bonds(lattice, i, j)
        string = z_add(*[z_mul(sz_op(m, L), sz_op(q, L)) for bonds in paths for m, q in bonds])
        terms.append(z_mul(ends, {k: v / len(paths) for k, v in string.items()}))
    if not terms:
        return {}
    return {k: v / len(pairs) for k, v in z_add(*terms).items()}


def observable_to_polynomial(observable: ZPoly, n_sites: int) -> MajoranaPolynomial:
    """Exact translation of a diagonal observable: ``Z_S = (-1)^{|S|} B_{S'}``."""
    terms = {}
    for S, v in observable.items():
        if any(not 0 <= m < 2 * n_sites for m in S):
            raise ValueError("mode index out of range")
        maj = tuple(sorted(g for m in S for g in (2 * m, 2 * m + 1)))
        terms[maj] = terms.get(maj, 0.0) + v * (-1) ** len(S)
    return MajoranaPolynomial.from_terms(n_sites, terms)


def observable_from_string(spec: str, lattice: Lattice) -> ZPoly:
    """Parse CLI observable names: ``doublons``, ``szsz-bonds``, ``czz:i,j`` (non-connected part), ``vhd:M`` (pair-normalized open Wilson line), ``z:m1,m2,...``, ``n:m``."""
    L = lattice.n_sites
    if spec == "doublons":
        return doublons_op(L)
    if spec in ("szsz-bonds", "triplets"):
        return szsz_bonds_op(lattice)
    kind, _, rest = spec.partition(":")
    idx = [int(v) for v in rest.split(",") if v]
    if kind == "czz" and len(idx) == 2:
        return {k: 4 * v for k, v in z_mul(sz_op(idx[0], L), sz_op(idx[1], L)).items()}
    if kind == "vhd" and len(idx) == 1:
        return open_wilson_line_op(lattice, idx[0], "hd")
    if kind == "sz" and len(idx) == 1:
        return sz_op(idx[0], L)
    if kind == "z":
        return {frozenset(idx): 1.0}
    if kind == "n" and len(idx) == 1:
        return number_op(idx[0])
    raise ValueError(f"unknown observable {spec!r}")


# ----------------------------------------------------------- local gates
_LOCAL_BASIS = None


def _local_basis():
    global _LOCAL_BASIS
    if _LOCAL_BASIS is None:
        g = fl.majoranas(2)
        basis = []
        for l in range(16):
            op = np.eye(4, dtype=complex)
            k = 0
            for i in range(4):
                if (l >> i) & 1:
                    op = op @ g[i]
                    k += 1
            basis.append((1j ** (k * (k - 1) // 2)) * op)
        _LOCAL_BASIS = np.array(basis)
    return _LOCAL_BASIS


def transfer_matrix(G: np.ndarray) -> np.ndarray:
    """``T[l2, l] = Tr(b_l2^dag G^dag b_l G) / 4`` for a 2-mode unitary ``G``."""
    B = _local_basis()
    conj = np.einsum("ij,ljk,km->lim", G.conj().T, B, G)
    T = np.einsum("pji,lji->pl", B.conj(), conj) / 4
    if np.abs(T.imag).max() > 1e-12:
        raise ArithmeticError("transfer matrix is not real")
    T = T.real
    T[np.abs(T) < 1e-15] = 0.0
    return T


@lru_cache(maxsize=None)
def _two_mode_ops():
    c = fl.annihilators(2)
    cd = [x.conj().T for x in c]
    hop = cd[0] @ c[1] + cd[1] @ c[0]
    nn = cd[0] @ c[0] @ cd[1] @ c[1]
    fs = np.eye(4)[[0, 2, 1, 3]].astype(complex)
    fs[3, 3] = -1
    return hop, nn, fs


def gate_unitary(kind: str, angle: float = 0.0) -> np.ndarray:
    hop, nn, fs = _two_mode_ops()
    if kind == "hop":
        return sla.expm(1j * angle * hop)
    if kind == "onsite":
        return sla.expm(-1j * angle * nn)
    if kind == "fswap":
        return fs
    if kind == "merged":
        return fs @ sla.expm(1j * angle * hop)
    raise ValueError(kind)


@dataclass(frozen=True)
class FermionGate:
    """Two-mode gate on global modes ``(ma, mb)`` (``ma < mb``)."""

    kind: str
    ma: int
    mb: int
    angle: float = 0.0

    def transfer(self) -> np.ndarray:
        return transfer_matrix(gate_unitary(self.kind, self.angle))


@dataclass
class FermionicCircuit:
    n_sites: int
    gates: list[FermionGate]

    @classmethod
    def from_program(cls, lattice: Lattice, program: list) -> "FermionicCircuit":
        L = lattice.n_sites
        gates = []
        for op in program:
            kind = op[0]
            if kind == "cz_block":
                continue
            if kind == "onsite":
                gates.append(FermionGate("onsite", op[1], op[1] + L, float(op[2])))
            elif kind == "hop":
                _, sec, p, q, a, _ = op
                gates.append(FermionGate("hop", sec * L + p, sec * L + q, float(a)))
            elif kind == "merged":
                _, sec, p, q, a = op
                gates.append(FermionGate("merged", sec * L + p, sec * L + q, float(a)))
            elif kind == "fswap":
                _, sec, p, q = op
                gates.append(FermionGate("fswap", sec * L + p, sec * L + q))
        return cls(L, gates)

    @classmethod
    def trotter(cls, lattice: Lattice, t: float, U: float, steps: int, J: float = 1.0) -> "FermionicCircuit":
        return cls.from_program(lattice, trotter_program(lattice, t, U, steps, J))

    def tag_sequence(self) -> list[str]:
        return [g.kind for g in self.gates]


def _locals(ma: int, mb: int, L: int):
    """Word/bit positions of the four Majoranas of modes ``ma < mb``."""
    w, b = [], []
    for m in (ma, mb):
        for s in (0, 1):
            word = 0 if m < L else 1
            w.append(word)
            b.append(2 * (m - word * L) + s)
    return np.array(w, np.int64), np.array(b, np.int64)


ZERO_TOL = 1e-15


def _affected_patterns(T: np.ndarray) -> np.ndarray:
    """Local patterns the gate does not map to themselves."""
    return np.array([not (T[l, l] == 1.0 and np.count_nonzero(T[:, l]) == 1) for l in range(16)])


class _Buffer:
    """Growable in-place term storage used while propagating."""

    def __init__(self, poly: MajoranaPolynomial, max_terms: float = math.inf):
        self.max_terms = max_terms
        self.n_sites = poly.n_sites
        self.n = len(poly)
        cap = max(16, int(1.5 * self.n))
        self.w0 = np.zeros(cap, np.uint64)
        self.w1 = np.zeros(cap, np.uint64)
        coeff = poly.coeff
        self.single = coeff.ndim == 1
        coeff = coeff[:, None] if self.single else coeff
        self.c = np.zeros((cap, coeff.shape[1]))
        self.w0[:self.n], self.w1[:self.n], self.c[:self.n] = poly.w0, poly.w1, coeff
        self.dead = 0

    def reserve(self, extra: int):
        need = self.n + extra
        if need <= len(self.c):
            return
        cap = max(need, int(1.5 * len(self.c)))
        for name in ("w0", "w1", "c"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], old.dtype)
            new[:self.n] = old[:self.n]
            setattr(self, name, new)

    def compact(self):
        keep = (self.c[:self.n] != 0.0).any(axis=1)
        k = int(keep.sum())
        self.w0[:k] = self.w0[:self.n][keep]
        self.w1[:k] = self.w1[:self.n][keep]
        self.c[:k] = self.c[:self.n][keep]
        self.n, self.dead = k, 0

    @property
    def live(self) -> int:
        return self.n - self.dead

    def apply(self, gate: "FermionGate", T: np.ndarray):
        self.apply_layer([gate], [T])

    def apply_layer(self, gates: Sequence["FermionGate"], Ts: Sequence[np.ndarray]):
        """Apply gates on pairwise disjoint modes with a single scan of the terms."""
        if self.n == 0:
            return
        locs = [_locals(g.ma, g.mb, self.n_sites) for g in gates]
        own = -np.ones((2, 64), np.int64)
        for q, (lw, lb) in enumerate(locs):
            if (own[lw, lb] >= 0).any():
                raise ValueError("gates in a layer must act on disjoint modes")
            own[lw, lb] = q
        G = len(gates)
        n0 = self.n
        ptr, rows = K.bucket_rows(self.w0, self.w1, 0, n0, own[0], own[1], G)
        for q, (g, T) in enumerate(zip(gates, Ts)):
            affected = _affected_patterns(T)
            if not affected.any():
                continue
            cand = rows[ptr[q]:ptr[q + 1]]
            if self.n > n0:
                own_q = np.where(own == q, 0, -1)
                _, extra = K.bucket_rows(self.w0, self.w1, n0, self.n, own_q[0], own_q[1], 1)
                cand = np.concatenate([cand, extra])
            lw, lb = locs[q]
            if (np.count_nonzero(T, axis=0) == 1).all():
                K.permute_rows(self.w0, self.w1, self.c, cand, lw, lb, T)
                continue
            idx, pat, grp, g0, g1, acc = K.local_groups(self.w0, self.w1, self.c, cand, lw, lb, T, affected)
            grow = int(np.count_nonzero((np.abs(acc) > ZERO_TOL).any(axis=2)))
            if self.live + grow - len(idx) > self.max_terms:
                raise TermBudgetExceeded(f"polynomial would grow to about {self.live + grow - len(idx)} terms "
                                         f"(budget {self.max_terms})")
            self.reserve(grow)
            self.n, dead = K.write_back(self.w0, self.w1, self.c, self.n, idx, pat, grp, g0, g1, acc, lw, lb, ZERO_TOL)
            self.dead += dead
        if self.dead > self.n // 4:
            self.compact()

    def polynomial(self) -> MajoranaPolynomial:
        self.compact()
        c = self.c[:self.n, 0].copy() if self.single else self.c[:self.n].copy()
        return MajoranaPolynomial(self.n_sites, self.w0[:self.n].copy(), self.w1[:self.n].copy(), c)


def heisenberg_apply(poly: MajoranaPolynomial, gate: FermionGate, T: np.ndarray | None = None) -> MajoranaPolynomial:
    """``G^dag P G`` for one two-mode gate (exact up to dropping |c| <= 1e-15)."""
    if gate.kind == "onsite" and gate.angle == 0.0:
        return poly
    buf = _Buffer(poly)
    buf.apply(gate, gate.transfer() if T is None else T)
    return buf.polynomial()


def truncate(poly: MajoranaPolynomial, coeff_thresh: float = 0.0, weight_thresh: float = math.inf) -> MajoranaPolynomial:
    if coeff_thresh < 0 or weight_thresh < 0:
        raise ValueError("thresholds must be non-negative")
    keep = poly.magnitudes() >= coeff_thresh
    if math.isfinite(weight_thresh):
        keep &= poly.weights() <= weight_thresh
    if keep.all():
        return poly
    return MajoranaPolynomial(poly.n_sites, poly.w0[keep], poly.w1[keep], poly.coeff[keep])


# --------------------------------------------------------------- overlap
@lru_cache(maxsize=None)
def _group_table(kind: str) -> np.ndarray:
    k = 4 if kind == "triplet" else 2
    v = fl.group_state(kind)
    g = fl.majoranas(k)
    tab = np.zeros(2 ** (2 * k))
    for p in range(2 ** (2 * k)):
        op = np.eye(2 ** k, dtype=complex)
        w = 0
        for i in range(2 * k):
            if (p >> i) & 1:
                op = op @ g[i]
                w += 1
        val = (1j ** (w * (w - 1) // 2)) * (v @ op @ v)
        tab[p] = val.real if abs(val.real) > 1e-14 else 0.0
    return tab


def initial_overlap(poly: MajoranaPolynomial, init: MagicInitialState) -> float:
    """``<psi_init| P |psi_init>`` for the triplet/holon/doublon product state."""
    L = poly.n_sites
    if init.n_sites != L:
        raise ValueError("state and polynomial sizes differ")
    groups = init.groups()
    G = len(groups)
    gw = np.zeros((G, 8), np.int64)
    gb = np.zeros((G, 8), np.int64)
    gs = np.zeros(G, np.int64)
    tabs, offs = [], []
    off = 0
    for gi, (kind, modes) in enumerate(groups):
        i = 0
        for m in modes:
            for s in (0, 1):
                word = 0 if m < L else 1
                gw[gi, i] = word
                gb[gi, i] = 2 * (m - word * L) + s
                i += 1
        gs[gi] = i
        t = _group_table(kind)
        tabs.append(t)
        offs.append(off)
        off += len(t)
    c = poly.coeff[:, None] if poly.coeff.ndim == 1 else poly.coeff
    vals = K.overlap(poly.w0, poly.w1, c, gw, gb, gs, np.concatenate(tabs), np.array(offs, np.int64))
    return float(vals[0]) if poly.coeff.ndim == 1 else vals


# ------------------------------------------------------------ propagation
@dataclass
class MPRun:
    value: float
    polynomial: MajoranaPolynomial
    histograms: list[tuple[int, dict]] = field(default_factory=list)
    max_terms: int = 0


def _transfer_cached(cache: dict, g: FermionGate) -> np.ndarray:
    key = (g.kind, g.angle)
    T = cache.get(key)
    if T is None:
        T = cache[key] = g.transfer()
    return T


def propagate(circuit: FermionicCircuit, poly: MajoranaPolynomial, coeff_thresh: float = 0.0,
              weight_thresh: float = math.inf, max_terms: int = DEFAULT_MAX_TERMS,
              record: bool = True) -> tuple[MajoranaPolynomial, list, int]:
    """Heisenberg-evolve ``poly`` through the circuit (last gate first).

    Truncation is applied after every onsite layer; histograms are recorded
    at the start, after every onsite layer and at the end.
    """
    hist = [(0, poly.weight_histogram())] if record else []
    peak = len(poly)
    gates = circuit.gates
    cache: dict = {}
    buf = _Buffer(poly, max_terms)
    k = len(gates) - 1
    layer = 0
    while k >= 0:
        g = gates[k]
        if g.kind == "onsite":
            while k >= 0 and gates[k].kind == "onsite":
                if gates[k].angle != 0.0:
                    buf.apply(gates[k], _transfer_cached(cache, gates[k]))
                k -= 1
            poly = truncate(buf.polynomial(), coeff_thresh, weight_thresh)
            buf = _Buffer(poly, max_terms)
            layer += 1
            if record:
                hist.append((layer, poly.weight_histogram()))
        else:
            layer_gates: list = []
            used: set = set()
            while k >= 0 and gates[k].kind != "onsite" and not ({gates[k].ma, gates[k].mb} & used):
                used |= {gates[k].ma, gates[k].mb}
                layer_gates.append(gates[k])
                k -= 1
            buf.apply_layer(layer_gates, [_transfer_cached(cache, x) for x in layer_gates])
        peak = max(peak, buf.live)
        if buf.live > max_terms:
            raise TermBudgetExceeded(f"polynomial grew to {buf.live} terms (budget {max_terms})")
    poly = buf.polynomial()
    if record:
        hist.append((layer + 1, poly.weight_histogram()))
    return poly, hist, peak


def stack_polynomials(polys: Sequence[MajoranaPolynomial]) -> MajoranaPolynomial:
    """One polynomial with a coefficient column per input, over the union of monomials."""
    polys = list(polys)
    if not polys:
        raise ValueError("nothing to stack")
    L = polys[0].n_sites
    w0 = np.concatenate([p.w0 for p in polys])
    w1 = np.concatenate([p.w1 for p in polys])
    keys, inv = np.unique(np.stack([w0, w1], axis=1), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    c = np.zeros((len(keys), len(polys)))
    off = 0
    for q, p in enumerate(polys):
        np.add.at(c[:, q], inv[off:off + len(p)], p.coeff)
        off += len(p)
    return MajoranaPolynomial(L, keys[:, 0], keys[:, 1], c)


def mp_expectation(circuit: FermionicCircuit, observable,
                   init: MagicInitialState, coeff_thresh: float = 0.0, weight_thresh: float = math.inf,
                   max_terms: int = DEFAULT_MAX_TERMS) -> MPRun:
    """Expectation of one observable, or an array of values for a list of
    observables propagated together on a shared monomial support."""
    if isinstance(observable, (list, tuple)):
        poly = stack_polynomials([o if isinstance(o, MajoranaPolynomial) else observable_to_polynomial(o, circuit.n_sites)
                                  for o in observable])
    elif isinstance(observable, MajoranaPolynomial):
        poly = observable
    else:
        poly = observable_to_polynomial(observable, circuit.n_sites)
    poly = truncate(poly, coeff_thresh, weight_thresh)
    out, hist, peak = propagate(circuit, poly, coeff_thresh, weight_thresh, max_terms)
    return MPRun(initial_overlap(out, init), out, hist, peak)


def weight_sector_histogram(run: MPRun) -> list[tuple[int, dict]]:
    return run.histograms


def _triplet_density(lattice: Lattice, szsz: float, sz: np.ndarray) -> float:
    conn = szsz
    for b in lattice.bonds():
        conn -= sz[lattice.position(b.i)] * sz[lattice.position(b.j)]
    return 2.0 / lattice.n_sites * 4 * conn


def n_triplets_mp(lattice: Lattice, t: float, U: float, steps: int, init: MagicInitialState, **kw) -> float:
    """Triplet density ``(2/L) sum_bonds 4 (<SzSz> - <Sz><Sz>)`` from MP runs."""
    L = lattice.n_sites
    circ = FermionicCircuit.trotter(lattice, t, U, steps)
    szsz = mp_expectation(circ, szsz_bonds_op(lattice), init, **kw).value
    sz = mp_expectation(circ, [sz_op(p, L) for p in range(L)], init, **kw).value
    return _triplet_density(lattice, szsz, sz)


def doublons_and_triplets_mp(lattice: Lattice, t: float, U: float, steps: int, init: MagicInitialState,
                             **kw) -> tuple[float, float]:
    """``(N_doublons, n_triplets)``; the single-site ``Sz`` runs share one propagation."""
    L = lattice.n_sites
    circ = FermionicCircuit.trotter(lattice, t, U, steps)
    nd = mp_expectation(circ, doublons_op(L), init, **kw).value
    szsz = mp_expectation(circ, szsz_bonds_op(lattice), init, **kw).value
    sz = mp_expectation(circ, [sz_op(p, L) for p in range(L)], init, **kw).value
    return float(nd), _triplet_density(lattice, szsz, sz)
