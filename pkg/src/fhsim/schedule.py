"""Fermionic swap-network schedule of the second-order Trotter step.

Everything here lives in *position space*: a position is a snake index within
one spin sector, and a fermionic op acts on whichever modes currently occupy
those positions. FSWAP layers permute the site columns inside every row
(identically in both sectors); the reversed pass undoes the permutation.

Ops produced by :func:`trotter_program` (angles already include the time step):

``("hop", sector, p, q, a, kind)``
    ``exp(i a (c+_p c_q + h.c.))``; ``kind`` is ``"v"``, ``"loop"`` or
    ``"boundary"`` (the latter two are not JW-adjacent).
``("merged", sector, p, p + 1, a)``
    FSWAP on ``(p, p+1)`` times the horizontal hop ``exp(i a (...))``.
``("fswap", sector, p, p + 1)``
``("onsite", p, theta)``
    ``exp(-i theta n_{p up} n_{p dn})``.
``("cz_block", sector)``
    Z-string dressing of boundary hops; a no-op in fermionic language.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .lattice import Lattice


@dataclass
class NetworkPass:
    """Forward half-pass of one Trotter step with unit time.

    ``v0`` are the vertical hops executed before any swap, ``layers`` the
    ``(swap_ops, vertical_ops)`` stages, ``boundary`` the periodic vertical
    hops between the last and first row (odd ``Ly`` only). Hop entries are
    ``(kind, sector, p, q, s)`` with ``s`` the summed bond signs.
    """

    v0: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    boundary: list = field(default_factory=list)
    n_left: int = 0
    n_right: int = 0


def _grid_position(lat: Lattice, y: int, g: int) -> int:
    return y * lat.Lx + (g if y % 2 == 0 else lat.Lx - 1 - g)


def network_pass(lat: Lattice) -> NetworkPass:
    Lx, Ly, L = lat.Lx, lat.Ly, lat.n_sites
    # bond bookkeeping: key -> sign
    sign = {}
    for b in lat.bonds():
        o = "h" if b.orientation == "horizontal" else "v"
        sign[(o, b.i[0], b.i[1])] = b.sign
    pending_h = {(x, y) for x in range(Lx) for y in range(Ly)}
    n_vrows = Ly if Ly % 2 == 0 else Ly - 1
    pending_v = {(x, y) for x in range(Lx) for y in range(n_vrows)}
    perm = list(range(Lx))  # perm[g] = site column at grid column g
    out = NetworkPass()

    def vertical_ready():
        ops = []
        for y in range(n_vrows):
            g = Lx - 1 if y % 2 == 0 else 0
            x = perm[g]
            if (x, y) not in pending_v:
                continue
            p = _grid_position(lat, y, g)
            if y == Ly - 1:  # even Ly wrap through the JW loop
                q, kind = _grid_position(lat, 0, g), "loop"
                p, q = min(p, q), max(p, q)
            else:
                q, kind = _grid_position(lat, y + 1, g), "v"
            pending_v.discard((x, y))
            for sec in (0, 1):
                ops.append((kind, sec, p, q, sign[("v", x, y)]))
        return ops

    out.v0 = vertical_ready()
    left = True
    while pending_h or pending_v:
        start = 0 if left else 1
        pairs = [(g, g + 1) for g in range(start, Lx - 1, 2)]
        if not pairs:
            raise RuntimeError("swap network cannot make progress")
        swaps = []
        for y in range(Ly):
            for g, g1 in pairs:
                xa, xb = perm[g], perm[g1]
                s = 0
                found = False
                for x0, x1 in ((xa, xb), (xb, xa)):
                    if (x0 + 1) % Lx == x1 and (x0, y) in pending_h:
                        pending_h.discard((x0, y))
                        s += sign[("h", x0, y)]
                        found = True
                p, q = sorted((_grid_position(lat, y, g), _grid_position(lat, y, g1)))
                for sec in (0, 1):
                    swaps.append(("merged" if found else "fswap", sec, p, q, s))
        for g, g1 in pairs:
            perm[g], perm[g1] = perm[g1], perm[g]
        if left:
            out.n_left += 1
        else:
            out.n_right += 1
        out.layers.append((swaps, vertical_ready()))
        left = not left
    if Ly % 2 == 1:
        for sec in (0, 1):
            for c in range(Lx):
                x = perm[c]
                p, q = c, L - Lx + c
                out.boundary.append(("boundary", sec, p, q, sign[("v", x, Ly - 1)]))
    out.final_perm = list(perm)
    return out


def _scaled(hops, tau):
    return [("hop", sec, p, q, s * tau, kind) for kind, sec, p, q, s in hops]


def forward_body(np_: NetworkPass, tau: float) -> list:
    """Swap layers and verticals of a forward pass (without ``v0``), time ``tau``."""
    ops = []
    for swaps, vert in np_.layers:
        for kind, sec, p, q, s in swaps:
            if kind == "merged":
                ops.append(("merged", sec, p, q, s * tau))
            else:
                ops.append(("fswap", sec, p, q))
        ops.extend(_scaled(vert, tau))
    return ops


def trotter_program(lat: Lattice, t: float, U: float, steps: int, J: float = 1.0,
                    step_times: Sequence[float] | None = None) -> list:
    """Fermionic op list of ``steps`` second-order Trotter steps of total time ``t``.

    The last vertical layer of step ``j`` is fused with the first vertical
    layer of step ``j+1`` (angle ``(dt_j + dt_{j+1}) / 2``).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if t < 0:
        raise ValueError("t must be >= 0")
    dts = list(step_times) if step_times is not None else [t / steps] * steps
    if len(dts) != steps:
        raise ValueError("step_times must have one entry per step")
    np_ = network_pass(lat)
    L = lat.n_sites
    ops: list = []
    for j, dt in enumerate(dts):
        tau = J * dt / 2
        lead = tau if j == 0 else J * (dts[j - 1] + dt) / 2
        ops.extend(_scaled(np_.v0, lead))
        fwd = forward_body(np_, tau)
        ops.extend(fwd)
        bnd = _scaled(np_.boundary, tau)
        if bnd:
            for sec in (0, 1):
                ops.append(("cz_block", sec))
                ops.extend(o for o in bnd if o[1] == sec)
        for p in range(L):
            ops.append(("onsite", p, U * dt))
        if bnd:
            for sec in (0, 1):
                ops.extend(reversed([o for o in bnd if o[1] == sec]))
                ops.append(("cz_block", sec))
        ops.extend(reversed(fwd))
        if j == steps - 1:
            ops.extend(_scaled(np_.v0, tau))
    return ops
