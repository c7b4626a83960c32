"""Shot-based estimators for charge, spin and string observables.

All estimators take a :class:`~fhsim.shots.ShotTable` whose bitstrings are
occupations in JW order (spin-up modes ``[0, L)``, spin-down ``[L, 2L)``,
mode ``p`` of a sector sits at snake position ``p``). Estimators that return
an :class:`Estimate` also carry per-twirl-instance statistics so error bars
can be formed without rescanning the shots.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import Lattice, Site
from .shots import ShotTable, _strip_comments


# ------------------------------------------------------------ containers
@dataclass
class Estimate:
    """Pooled mean of a per-shot quantity plus per-twirl-instance moments."""

    value: float
    instance_means: np.ndarray
    instance_vars: np.ndarray
    instance_counts: np.ndarray

    @property
    def n_instances(self) -> int:
        return len(self.instance_means)

    @property
    def sigma(self) -> float:
        from .mitigation import twirl_error_bar

        if self.n_instances < 2:
            n = int(self.instance_counts.sum())
            return float(math.sqrt(self.instance_vars[0] / n)) if n > 0 else float("nan")
        return twirl_error_bar(self.instance_means, self.instance_vars, self.n_instances,
                               int(round(self.instance_counts.mean())))


def estimate(values: np.ndarray, shots: ShotTable) -> Estimate:
    """Per-shot ``values`` (shape ``(n_shots, ...)``) reduced per twirl instance.

    The pooled value is the mean of the instance means, which equals the
    plain shot mean when every instance has the same shot count.
    """
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise ValueError("no shots to estimate from")
    groups = shots.twirl_groups()
    means = np.array([values[g].mean(axis=0) for g in groups])
    var = np.array([values[g].var(axis=0, ddof=1) if len(g) > 1 else np.zeros(values.shape[1:]) for g in groups])
    counts = np.array([len(g) for g in groups])
    return Estimate(means.mean(axis=0), means, var, counts)


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray
    label: str = ""
    provenance: str = "raw"

    PROVENANCES = ("raw", "tflo", "tmps", "gpr", "pf", "exact", "mp")

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.sigmas = np.zeros_like(self.values) if self.sigmas is None else np.asarray(self.sigmas, dtype=float)
        if not (len(self.times) == len(self.values) == len(self.sigmas)):
            raise ValueError("times, values and sigmas must be aligned")
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be non-negative")
        if self.provenance not in self.PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.times)

    def restrict(self, t_min: float = -math.inf, t_max: float = math.inf) -> "TimeSeries":
        m = (self.times >= t_min - 1e-12) & (self.times <= t_max + 1e-12)
        return TimeSeries(self.times[m], self.values[m], self.sigmas[m], self.label, self.provenance)

    def to_csv(self, path_or_buf=None, header: bool = True) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["label", "time", "value", "sigma", "provenance"])
        for t, v, s in zip(self.times, self.values, self.sigmas):
            w.writerow([self.label, repr(float(t)), repr(float(v)), repr(float(s)), self.provenance])
        return _emit(buf.getvalue(), path_or_buf)

    @staticmethod
    def many_to_csv(series: Iterable["TimeSeries"], path_or_buf=None) -> str | None:
        parts = [s.to_csv(header=(i == 0)) for i, s in enumerate(series)]
        return _emit("".join(parts), path_or_buf)

    @staticmethod
    def from_csv(path_or_buf) -> dict[str, "TimeSeries"]:
        """Read a CSV with columns ``label,time,value,sigma,provenance``; a
        missing label column means a single unnamed series."""
        text = path_or_buf.read() if hasattr(path_or_buf, "read") else open(path_or_buf).read()
        rows = list(csv.DictReader(io.StringIO(_strip_comments(text))))
        if not rows:
            raise ValueError("time series CSV has no rows")
        missing = {"time", "value"} - set(rows[0])
        if missing:
            raise ValueError(f"time series CSV lacks columns {sorted(missing)}")
        out: dict[str, dict] = {}
        for r in rows:
            d = out.setdefault(r.get("label", "") or "", {"t": [], "v": [], "s": [], "p": r.get("provenance") or "raw"})
            d["t"].append(float(r["time"]))
            d["v"].append(float(r["value"]))
            d["s"].append(float(r.get("sigma") or 0.0))
        return {k: TimeSeries(d["t"], d["v"], d["s"], k, d["p"]) for k, d in out.items()}


def _emit(text: str, path_or_buf):
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)
    return None


def time_series(shots: ShotTable, estimator: Callable[[ShotTable], Estimate], label: str = "",
                U: float | None = None) -> TimeSeries:
    """Apply ``estimator`` to every time group (optionally at one ``U``)."""
    ts, vs, ss = [], [], []
    for (t, u), grp in shots.groups():
        if U is not None and not math.isclose(u, U):
            continue
        e = estimator(grp)
        ts.append(t)
        vs.append(float(e.value))
        ss.append(float(e.sigma))
    return TimeSeries(ts, vs, ss, label, "raw")


# ------------------------------------------------------------- per-shot
def _zvals(shots: ShotTable) -> np.ndarray:
    return 1.0 - 2.0 * shots.bits.astype(float)


def _sectors(shots: ShotTable) -> tuple[np.ndarray, np.ndarray]:
    L = shots.n_sites
    b = shots.bits.astype(np.int64)
    return b[:, :L], b[:, L:]


def doublon_indicators(shots: ShotTable) -> np.ndarray:
    up, dn = _sectors(shots)
    return up * dn


def holon_indicators(shots: ShotTable) -> np.ndarray:
    up, dn = _sectors(shots)
    return (1 - up) * (1 - dn)


def spin_z(shots: ShotTable) -> np.ndarray:
    up, dn = _sectors(shots)
    return 0.5 * (up - dn)


def charge(shots: ShotTable) -> np.ndarray:
    up, dn = _sectors(shots)
    return (up + dn).astype(float)


# ---------------------------------------------------------- estimators
@dataclass
class ZEstimates:
    """Z-string expectation values keyed by sorted mode tuples."""

    subsets: list[tuple[int, ...]]
    estimates: Estimate  # vector-valued, aligned with ``subsets``

    def value(self, subset) -> float:
        return float(self.estimates.value[self.index[tuple(sorted(subset))]])

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {S: float(v) for S, v in zip(self.subsets, self.estimates.value)}

    @property
    def index(self) -> dict:
        if not hasattr(self, "_index"):
            self._index = {S: i for i, S in enumerate(self.subsets)}
        return self._index


def z_expectations(shots: ShotTable, max_weight: int = 2, subsets: Sequence[Sequence[int]] | None = None) -> ZEstimates:
    """Empirical ``<Z_S>`` for all strings of weight ``1..max_weight`` (or the given subsets)."""
    if len(shots) == 0:
        raise ValueError("empty shot group")
    n = shots.n_modes
    if subsets is None:
        subsets = [S for w in range(1, max_weight + 1) for S in itertools.combinations(range(n), w)]
    subsets = [tuple(sorted(S)) for S in subsets]
    z = _zvals(shots)
    vals = np.empty((len(shots), len(subsets)))
    for i, S in enumerate(subsets):
        vals[:, i] = np.prod(z[:, list(S)], axis=1) if S else 1.0
    return ZEstimates(subsets, estimate(vals, shots))


def doublon_count(shots: ShotTable) -> Estimate:
    """``N_doublons = sum_i n_i,up n_i,dn`` per shot."""
    return estimate(doublon_indicators(shots).sum(1), shots)


def holon_count(shots: ShotTable) -> Estimate:
    return estimate(holon_indicators(shots).sum(1), shots)


def doublon_count_symmetrized(shots: ShotTable) -> tuple[float, float]:
    """``(N_d + N_h) / 2`` with ``sigma = sigma_d + sigma_h`` (errors taken as fully correlated)."""
    d, h = doublon_count(shots), holon_count(shots)
    return 0.5 * (float(d.value) + float(h.value)), float(d.sigma + h.sigma)


def _pos(lattice: Lattice | None, site) -> int:
    if isinstance(site, (int, np.integer)):
        return int(site)
    if lattice is None:
        raise ValueError("site tuples need a lattice")
    return lattice.position(tuple(site))


def czz(shots: ShotTable, site_i, site_j, lattice: Lattice | None = None) -> float:
    """Connected spin correlator ``4 (<Sz_i Sz_j> - <Sz_i><Sz_j>)``."""
    i, j = _pos(lattice, site_i), _pos(lattice, site_j)
    if i == j:
        raise ValueError("czz needs two distinct sites")
    sz = spin_z(shots)
    return float(4 * (np.mean(sz[:, i] * sz[:, j]) - sz[:, i].mean() * sz[:, j].mean()))


def bond_pairs(lattice: Lattice) -> list[tuple[int, int]]:
    return [(lattice.position(b.i), lattice.position(b.j)) for b in lattice.bonds()]


def triplet_density(shots: ShotTable, lattice: Lattice) -> float:
    """``(2 / (Lx Ly)) sum over all torus bonds of C^zz``."""
    sz = spin_z(shots)
    m = sz.mean(0)
    tot = 0.0
    for i, j in bond_pairs(lattice):
        tot += 4 * (np.mean(sz[:, i] * sz[:, j]) - m[i] * m[j])
    return float(2.0 / lattice.n_sites * tot)


def triplet_density_from_z(z: dict, lattice: Lattice) -> float:
    """Same quantity assembled from weight-1 and weight-2 ``<Z>`` values.

    With ``Sz_i = (Z_{i,dn} - Z_{i,up}) / 4`` the connected correlator is
    ``C^zz = (1/4) sum_{s,s'} eta_s eta_s' (<Z_is Z_js'> - <Z_is><Z_js'>)``.
    """
    L = lattice.n_sites

    def zz(a, b):
        return z[tuple(sorted((a, b)))] - z[(a,)] * z[(b,)]

    tot = 0.0
    for i, j in bond_pairs(lattice):
        c = 0.0
        for si, ei in ((0, -1), (L, 1)):
            for sj, ej in ((0, -1), (L, 1)):
                c += ei * ej * zz(i + si, j + sj)
        tot += c / 4
    return float(2.0 / L * tot)


def wilson_loop(shots: ShotTable, loop: Sequence) -> Estimate:
    """Mean over shots of ``prod_{j in loop} (1 - d_j)``."""
    sites = list(loop.sites if isinstance(loop, Loop) else loop)
    lat = getattr(loop, "lattice", None)
    pos = [_pos(lat, s) for s in sites]
    if len(set(pos)) != len(pos):
        raise ValueError("loop sites must be distinct")
    d = doublon_indicators(shots)
    return estimate(np.prod(1 - d[:, pos], axis=1), shots)


# ------------------------------------------------------------ loop family
@dataclass
class Loop:
    """Closed rectilinear contour: ``sites`` in cyclic order.

    ``perimeter`` counts contour sites, ``area`` counts enclosed plaquettes.
    """

    sites: list[Site]
    area: int
    perimeter: int
    plaquettes: frozenset = field(default_factory=frozenset)
    lattice: Lattice | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"sites": [list(s) for s in self.sites], "area": self.area, "perimeter": self.perimeter}


def _contour(plaq: frozenset) -> list[tuple[int, int]] | None:
    """Boundary vertex cycle of a plaquette set, or None if not one simple loop."""
    edges: dict = {}
    for x, y in plaq:
        for e in (((x, y), (x + 1, y)), ((x, y + 1), (x + 1, y + 1)), ((x, y), (x, y + 1)), ((x + 1, y), (x + 1, y + 1))):
            edges[e] = edges.get(e, 0) + 1
    bnd = [e for e, k in edges.items() if k == 1]
    adj: dict = {}
    for a, b in bnd:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in adj.values()):
        return None
    start = min(adj)
    cyc = [start]
    prev, cur = None, start
    while True:
        nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
        if nxt == start:
            break
        cyc.append(nxt)
        prev, cur = cur, nxt
    return cyc if len(cyc) == len(adj) else None


def _corner_cut_shapes(w: int, h: int):
    """Plaquette sets with bounding box ``w x h`` obtained by removing
    rectangular blocks at the corners (orthogonally convex shapes)."""
    blocks = [(a, b) for a in range(w) for b in range(h)]
    full = {(x, y) for x in range(w) for y in range(h)}
    for cuts in itertools.product(blocks, repeat=4):
        rem = set()
        for (a, b), (cx, cy) in zip(cuts, ((0, 0), (1, 0), (0, 1), (1, 1))):
            xs = range(a) if cx == 0 else range(w - a, w)
            ys = range(b) if cy == 0 else range(h - b, h)
            rem |= {(x, y) for x in xs for y in ys}
        yield frozenset(full - rem)


def loop_family(lattice: Lattice, area: int | None = None, perimeter: int | None = None,
                origin: Site = (0, 0)) -> list[Loop]:
    """Simple closed contours of fixed area (varying perimeter) or fixed
    perimeter (varying area).

    Shapes are rectangles with rectangular corner blocks removed; the contour
    never wraps the torus, so its bounding box spans at most ``Lx`` by ``Ly``
    sites. Results are sorted by (perimeter, area) and deduplicated.
    """
    if (area is None) == (perimeter is None):
        raise ValueError("give exactly one of area or perimeter")
    out: dict[frozenset, Loop] = {}
    ox, oy = origin
    for w in range(1, lattice.Lx):
        for h in range(1, lattice.Ly):
            p = 2 * (w + h)
            if perimeter is not None and p != perimeter:
                continue
            if area is not None and w * h < area:
                continue
            for plaq in _corner_cut_shapes(w, h):
                if area is not None and len(plaq) != area:
                    continue
                if plaq in out or not plaq:
                    continue
                xs = [x for x, _ in plaq]
                ys = [y for _, y in plaq]
                if max(xs) - min(xs) + 1 != w or max(ys) - min(ys) + 1 != h:
                    continue
                cyc = _contour(plaq)
                if cyc is None or len(cyc) != p:
                    continue
                sites = [((x + ox) % lattice.Lx, (y + oy) % lattice.Ly) for x, y in cyc]
                out[plaq] = Loop(sites, len(plaq), len(cyc), plaq, lattice)
    return sorted(out.values(), key=lambda lp: (lp.perimeter, lp.area, sorted(lp.plaquettes)))


# ------------------------------------------------------- open Wilson line
def _pairs_at(lattice: Lattice, M: int, ordered: bool) -> list[tuple[int, int]]:
    sites = lattice.sites
    out = []
    for a, b in itertools.product(range(len(sites)), repeat=2):
        if a == b or (not ordered and b < a):
            continue
        if lattice.distance(sites[a], sites[b]) == M:
            out.append((lattice.position(sites[a]), lattice.position(sites[b])))
    return out


def _path_bonds(lattice: Lattice, i: int, j: int) -> list[list[tuple[int, int]]]:
    paths = lattice.shortest_paths(lattice.site_at(i), lattice.site_at(j))
    return [[(lattice.position(p[k]), lattice.position(p[k + 1])) for k in range(len(p) - 1)] for p in paths]


def open_wilson_line(shots: ShotTable, lattice: Lattice, M: int, kind: str = "hd",
                     normalization: str = "paths", per_shot: bool = False):
    """Path-averaged ``Sz Sz`` string between charge carriers at distance ``M``.

    For every shot and every qualifying endpoint pair ``(i, j)`` (``alpha`` at
    ``i``, ``beta`` at ``j``, torus Manhattan distance ``M``), each shortest
    path contributes ``R = sum over its bonds of Sz_m Sz_n``.

    ``normalization="paths"`` sums ``R`` over all configurations and paths and
    divides by the total number of paths visited; no qualifying pair gives 0.
    ``normalization="pairs"`` averages over shots the per-shot quantity
    ``sum_pairs mean_paths(R) / N_pairs`` with ``N_pairs`` the number of site
    pairs at distance ``M`` on the lattice.

    With ``per_shot=True`` the per-shot contributions (numerator, paths) are
    returned instead, for resampling.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if kind not in ("hd", "dh", "hh", "dd"):
        raise ValueError(f"unknown kind {kind!r}")
    if normalization not in ("paths", "pairs"):
        raise ValueError("normalization must be 'paths' or 'pairs'")
    ordered = kind[0] != kind[1]
    pairs = _pairs_at(lattice, M, ordered)
    d = doublon_indicators(shots)
    h = holon_indicators(shots)
    ind = {"h": h, "d": d}
    A, B = ind[kind[0]], ind[kind[1]]
    sz = spin_z(shots)
    n = len(shots)
    num = np.zeros(n)
    npaths = np.zeros(n)
    avg = np.zeros(n)
    for i, j in pairs:
        hit = (A[:, i] * B[:, j]).astype(bool)
        if not hit.any():
            continue
        paths = _path_bonds(lattice, i, j)
        s = sz[hit]
        R = np.zeros((int(hit.sum()), len(paths)))
        for k, bonds in enumerate(paths):
            for m, q in bonds:
                R[:, k] += s[:, m] * s[:, q]
        num[hit] += R.sum(1)
        npaths[hit] += len(paths)
        avg[hit] += R.mean(1)
    if per_shot:
        return num, npaths
    if normalization == "paths":
        tot = npaths.sum()
        return 0.0 if tot == 0 else float(num.sum() / tot)
    if not pairs:
        return 0.0
    return float(np.mean(avg / len(pairs)))


# ------------------------------------------------------ pair correlation
def distance_shells(lattice: Lattice) -> dict[int, int]:
    """``Z(r)``: number of sites at each squared minimal-image distance from a site."""
    s0 = lattice.sites[0]
    out: dict[int, int] = {}
    for s in lattice.sites:
        if s == s0:
            continue
        d2 = lattice.squared_distance(s0, s)
        out[d2] = out.get(d2, 0) + 1
    return dict(sorted(out.items()))


def pair_correlation(shots: ShotTable, lattice: Lattice, kind: str = "charge") -> dict[int, float]:
    """``g(r) = 1/(L Z(r)) sum_x sum_{|y - x| = r} <f_x f_y>`` keyed by squared distance.

    ``f`` is the site charge ``n_up + n_dn`` or ``Sz``; ``r = 0`` is excluded.
    """
    if kind not in ("charge", "spin"):
        raise ValueError("kind must be 'charge' or 'spin'")
    f = charge(shots) if kind == "charge" else spin_z(shots).astype(float)
    C = f.T @ f / len(shots)
    sites = lattice.sites
    L = len(sites)
    shells = distance_shells(lattice)
    acc = {r2: 0.0 for r2 in shells}
    for a in sites:
        for b in sites:
            if a == b:
                continue
            acc[lattice.squared_distance(a, b)] += C[lattice.position(a), lattice.position(b)]
    return {r2: acc[r2] / (L * shells[r2]) for r2 in shells}


# --------------------------------------------------- charge-field tools
def site_grid(values: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Per-position values reshaped to an ``(Lx, Ly)`` grid indexed ``[x, y]``."""
    g = np.zeros((lattice.Lx, lattice.Ly))
    for p, (x, y) in enumerate(lattice.site_at(q) for q in range(lattice.n_sites)):
        g[x, y] = values[p]
    return g


def density_fourier(density_field: np.ndarray, lattice: Lattice | None = None) -> np.ndarray:
    """``n(k) = sum_r e^{i k.r} n_r - Lx Ly delta_{k,0}`` on the ``(Lx, Ly)`` grid
    of momenta ``k = (2 pi m / Lx, 2 pi n / Ly)``.

    ``density_field`` is an ``(Lx, Ly)`` array, or a per-position vector
    together with ``lattice``.
    """
    f = np.asarray(density_field, dtype=float)
    if f.ndim == 1:
        if lattice is None:
            raise ValueError("a flat density needs the lattice")
        f = site_grid(f, lattice)
    nk = np.fft.ifft2(f) * f.size
    nk[0, 0] -= f.size
    return nk


def charge_difference(shots: ShotTable) -> np.ndarray:
    """``Delta_i = <n^d_i> - <n^h_i>`` per snake position."""
    return (doublon_indicators(shots) - holon_indicators(shots)).mean(0)


def absence_moments(shots: ShotTable, k: int, n_subsets: int = 1000, seed=None,
                    with_replacement: bool = False) -> float:
    """Monte-Carlo ``<X^k>`` for ``X = 1 - N_doublons / L``.

    Averages ``prod_{j in S} (1 - d_j)`` over shots and ``n_subsets`` random
    ``k``-site sets ``S``. When ``n_subsets`` covers every distinct subset the
    average is taken exhaustively. ``with_replacement=True`` samples ``k``
    independent sites instead, which makes the estimator unbiased for
    ``<X^k>`` itself.
    """
    L = shots.n_sites
    if k < 0 or (k > L and not with_replacement):
        raise ValueError("k must lie in [0, L]")
    if k == 0:
        return 1.0
    a = 1 - doublon_indicators(shots)
    rng = np.random.default_rng(seed)
    if with_replacement:
        if n_subsets >= L ** k:
            subsets = np.array(list(itertools.product(range(L), repeat=k)))
        else:
            subsets = rng.integers(0, L, size=(n_subsets, k))
    elif n_subsets >= math.comb(L, k):
        subsets = np.array(list(itertools.combinations(range(L), k)))
    else:
        subsets = np.array([rng.choice(L, size=k, replace=False) for _ in range(n_subsets)])
    vals = np.ones((len(shots), len(subsets)))
    for c in range(k):
        vals *= a[:, subsets[:, c]]
    return float(vals.mean())


def absence_central_moment(shots: ShotTable, k: int) -> float:
    """``<(X - mu)^k>`` from the per-shot ``X = 1 - N_doublons / L``."""
    X = 1 - doublon_indicators(shots).sum(1) / shots.n_sites
    return float(np.mean((X - X.mean()) ** k))
