"""Torus geometry, flux phases and Jordan-Wigner snake ordering.

Axis convention: ``Lx`` is the snake width (number of columns), ``Ly`` the
number of rows. Sites are ``(x, y)`` pairs with ``0 <= x < Lx`` and
``0 <= y < Ly``. Within each spin sector the modes follow a snake: even rows
run left to right, odd rows right to left. Spin-up modes occupy
``[0, L)`` and spin-down modes ``[L, 2L)`` with ``L = Lx * Ly``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

UP = 0
DOWN = 1

Site = tuple[int, int]


@dataclass(frozen=True)
class Bond:
    """Undirected nearest-neighbour bond ``i -> j`` carrying phase ``phase``.

    The hopping term is ``-J (e^{i phase} c_i^dag c_j + h.c.)``. ``index``
    distinguishes the two parallel bonds that appear when ``Lx == 2`` or
    ``Ly == 2``; it is the position of the bond in :meth:`Lattice.bonds`.
    """

    i: Site
    j: Site
    phase: float
    orientation: str
    wraps_boundary: bool
    index: int = 0

    @property
    def sign(self) -> int:
        """Real hopping sign ``cos(phase)``, either +1 or -1."""
        return 1 if self.phase == 0.0 else -1


def _spin_index(spin) -> int:
    if spin in (UP, "up", "u", "↑"):
        return UP
    if spin in (DOWN, "down", "d", "dn", "↓"):
        return DOWN
    raise ValueError(f"unknown spin {spin!r}")


def _normalize_phase(phi: float) -> float:
    r = math.remainder(float(phi), 2 * math.pi)
    if abs(r) < 1e-12:
        return 0.0
    if abs(abs(r) - math.pi) < 1e-12:
        return math.pi
    raise ValueError(f"flux phase {phi} is not in {{0, pi}}")


@dataclass(frozen=True)
class Lattice:
    """Doubly periodic ``Lx x Ly`` lattice with bond phases in {0, pi}.

    ``flux`` maps the key ``(orientation, x, y)`` of the bond leaving site
    ``(x, y)`` in the +x ("h") or +y ("v") direction to its phase. Missing
    keys carry phase 0.
    """

    Lx: int
    Ly: int
    flux: Mapping[tuple[str, int, int], float] = field(default_factory=dict)
    preset: str = "custom"

    # ---------------------------------------------------------------- sizes
    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly

    @property
    def n_modes(self) -> int:
        return 2 * self.Lx * self.Ly

    # -------------------------------------------------------------- indexing
    def position(self, site: Site) -> int:
        """Snake position of ``site`` inside one spin sector."""
        x, y = self._check_site(site)
        return y * self.Lx + (x if y % 2 == 0 else self.Lx - 1 - x)

    def site_at(self, pos: int) -> Site:
        """Inverse of :meth:`position`."""
        if not 0 <= pos < self.n_sites:
            raise IndexError(f"position {pos} out of range")
        y, r = divmod(pos, self.Lx)
        x = r if y % 2 == 0 else self.Lx - 1 - r
        return (x, y)

    def jw_index(self, site: Site, spin) -> int:
        return self.position(site) + _spin_index(spin) * self.n_sites

    def mode(self, jw: int) -> tuple[Site, int]:
        """Inverse of :meth:`jw_index`: returns ``(site, spin)``."""
        if not 0 <= jw < self.n_modes:
            raise IndexError(f"mode {jw} out of range")
        spin, pos = divmod(jw, self.n_sites)
        return self.site_at(pos), spin

    @property
    def sites(self) -> list[Site]:
        """Sites in snake order."""
        return [self.site_at(p) for p in range(self.n_sites)]

    def _check_site(self, site: Site) -> Site:
        x, y = int(site[0]), int(site[1])
        if not (0 <= x < self.Lx and 0 <= y < self.Ly):
            raise IndexError(f"site {site} outside {self.Lx}x{self.Ly} lattice")
        return x, y

    # ----------------------------------------------------------------- bonds
    def bonds(self) -> list[Bond]:
        """Two bonds per site (``+x`` then ``+y``), listed in snake order."""
        out = []
        for p in range(self.n_sites):
            x, y = self.site_at(p)
            for orient in ("h", "v"):
                if orient == "h":
                    j = ((x + 1) % self.Lx, y)
                    wraps = x == self.Lx - 1
                else:
                    j = (x, (y + 1) % self.Ly)
                    wraps = y == self.Ly - 1
                phase = self.flux.get((orient, x, y), 0.0)
                out.append(Bond((x, y), j, phase,
                                "horizontal" if orient == "h" else "vertical",
                                wraps, len(out)))
        return out

    def neighbors(self, site: Site) -> list[Site]:
        x, y = self._check_site(site)
        return [((x + 1) % self.Lx, y), ((x - 1) % self.Lx, y),
                (x, (y + 1) % self.Ly), (x, (y - 1) % self.Ly)]

    def plaquette_flux(self, x: int, y: int) -> float:
        """Sum of phases around the plaquette with lower-left corner ``(x, y)``, mod 2 pi."""
        f = self.flux
        x1, y1 = (x + 1) % self.Lx, (y + 1) % self.Ly
        tot = (f.get(("h", x, y), 0.0) + f.get(("v", x1, y), 0.0)
               - f.get(("h", x, y1), 0.0) - f.get(("v", x, y), 0.0))
        return _normalize_phase(tot)

    def plaquette_fluxes(self) -> np.ndarray:
        """Array of shape ``(Lx, Ly)`` of plaquette fluxes in {0, pi}."""
        return np.array([[self.plaquette_flux(x, y) for y in range(self.Ly)]
                         for x in range(self.Lx)])

    def hopping_matrix(self, J: float = 1.0) -> np.ndarray:
        """Single-particle Hamiltonian ``h`` of one spin sector in snake positions."""
        h = np.zeros((self.n_sites, self.n_sites))
        for b in self.bonds():
            p, q = self.position(b.i), self.position(b.j)
            h[p, q] += -J * b.sign
            h[q, p] += -J * b.sign
        return h

    # -------------------------------------------------------------- geometry
    def displacement(self, a: Site, b: Site) -> tuple[list[int], list[int]]:
        """Minimal-image displacement choices along x and y from ``a`` to ``b``."""
        (ax, ay), (bx, by) = self._check_site(a), self._check_site(b)

        def choices(d, n):
            d %= n
            if d == 0:
                return [0]
            if 2 * d == n:
                return [d, -d]
            return [d] if d < n - d else [d - n]

        return choices(bx - ax, self.Lx), choices(by - ay, self.Ly)

    def distance(self, a: Site, b: Site) -> int:
        dx, dy = self.displacement(a, b)
        return abs(dx[0]) + abs(dy[0])

    def squared_distance(self, a: Site, b: Site) -> int:
        dx, dy = self.displacement(a, b)
        return dx[0] ** 2 + dy[0] ** 2

    def shortest_paths(self, a: Site, b: Site) -> list[list[Site]]:
        """All monotone minimal-image paths from ``a`` to ``b`` (both tie directions)."""
        a, b = self._check_site(a), self._check_site(b)
        if a == b:
            raise ValueError("shortest_paths needs two distinct sites")
        dxs, dys = self.displacement(a, b)
        seen = set()
        paths = []
        for dx, dy in itertools.product(dxs, dys):
            nx, ny = abs(dx), abs(dy)
            sx, sy = (1 if dx > 0 else -1), (1 if dy > 0 else -1)
            for xs in itertools.combinations(range(nx + ny), nx):
                xset = set(xs)
                cur = a
                path = [cur]
                for k in range(nx + ny):
                    if k in xset:
                        cur = ((cur[0] + sx) % self.Lx, cur[1])
                    else:
                        cur = (cur[0], (cur[1] + sy) % self.Ly)
                    path.append(cur)
                key = tuple(path)
                if key not in seen:
                    seen.add(key)
                    paths.append(path)
        return paths

    # --------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        return {
            "Lx": self.Lx,
            "Ly": self.Ly,
            "preset": self.preset,
            "bonds": [
                {"i": list(b.i), "j": list(b.j), "phase": b.phase,
                 "orientation": b.orientation, "wraps_boundary": b.wraps_boundary}
                for b in self.bonds()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Lattice":
        Lx, Ly = int(d["Lx"]), int(d["Ly"])
        phases = {}
        for b in d.get("bonds", []):
            x, y = b["i"]
            o = "h" if b["orientation"] == "horizontal" else "v"
            if float(b["phase"]) != 0.0:
                phases[(o, int(x), int(y))] = float(b["phase"])
        return build_lattice(Lx, Ly, phases, preset=d.get("preset", "custom"))

    @classmethod
    def from_json(cls, text: str) -> "Lattice":
        return cls.from_dict(json.loads(text))


PRESETS = ("paper", "zero-flux", "pi-column")


def build_lattice(Lx: int, Ly: int, flux_spec="paper", preset: str | None = None) -> Lattice:
    """Build a torus lattice.

    ``flux_spec`` is a preset name or an explicit map from bond keys
    ``(orientation, x, y)`` (orientation ``"h"``/``"v"``, bond leaving
    ``(x, y)`` in the positive direction) to phases in {0, pi}.

    Presets:

    ``"paper"``
        phase pi on the horizontal wrap bond ``(Lx-1, y) -> (0, y)`` of every
        row, i.e. pi flux threaded through the short (x) cycle of the torus.
    ``"zero-flux"``
        all phases 0.
    ``"pi-column"``
        phase pi on the bond ``(0, y) -> (1, y)`` for odd ``y``; every
        plaquette of column 0 then carries flux pi. Requires even ``Ly``.
    """
    Lx, Ly = int(Lx), int(Ly)
    if Lx < 2 or Ly < 2:
        raise ValueError("Lx and Ly must both be >= 2")
    if isinstance(flux_spec, str):
        name = flux_spec
        if name == "paper":
            phases = {("h", Lx - 1, y): math.pi for y in range(Ly)}
        elif name in ("zero-flux", "zero"):
            phases = {}
        elif name == "pi-column":
            if Ly % 2:
                raise ValueError("a column of pi plaquettes needs even Ly on a torus")
            phases = {("h", 0, y): math.pi for y in range(1, Ly, 2)}
        else:
            raise ValueError(f"unknown flux preset {name!r}")
        return Lattice(Lx, Ly, phases, preset=preset or name)
    phases = {}
    for key, phi in dict(flux_spec).items():
        o, x, y = key
        if o not in ("h", "v") or not (0 <= x < Lx and 0 <= y < Ly):
            raise ValueError(f"invalid bond key {key!r}")
        p = _normalize_phase(phi)
        if p:
            phases[(o, int(x), int(y))] = p
    return Lattice(Lx, Ly, phases, preset=preset or "custom")


def jw_index(lattice: Lattice, site: Site, spin) -> int:
    return lattice.jw_index(site, spin)


def bonds(lattice: Lattice) -> list[Bond]:
    return lattice.bonds()


def torus_manhattan(lattice: Lattice, a: Site, b: Site) -> int:
    return lattice.distance(a, b)


def shortest_paths(lattice: Lattice, a: Site, b: Site) -> list[list[Site]]:
    return lattice.shortest_paths(a, b)
