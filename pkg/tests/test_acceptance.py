"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
import itertools
import math
import time
from collections import deque

import numpy as np
import pytest
from scipy.stats import spearmanr

from fhsim import majorana as mj
from fhsim import nearflo, svsim, xeb
from fhsim import observables as ob
from fhsim.circuit import experiment_circuit, gate_counts, predicted_two_qubit_cost, triplet_prep_circuit, trotter_circuit
from fhsim.initial_state import default_initial_state
from fhsim.lattice import build_lattice
from fhsim.mitigation import bootstrap, gpr_smooth, particle_filter_smooth, tflo_apply, tflo_fit
from fhsim.observables import TimeSeries
from fhsim.shots import ShotTable

TIMES20 = [round(0.1 * k, 1) for k in range(1, 21)]


# ------------------------------------------------------------------ 1
PUBLISHED_ROWS = {(4, 5): (428, 16), (4, 6): (486, 24), (5, 5): (674, 16), (4, 7): (588, 24)}


def test_gate_counts(verdict):
    bad = []
    for (Lx, Ly), (a, b) in PUBLISHED_ROWS.items():
        lat = build_lattice(Lx, Ly)
        for N in (1, 2, 4):
            pred = predicted_two_qubit_cost(Lx, Ly, N)
            built = gate_counts(trotter_circuit(lat, 0.5, 4.0, N))["two_qubit"]
            if not pred == built == a * N + b:
                bad.append(f"{Lx}x{Ly} N={N}: formula {pred}, built {built}, published {a * N + b}")
    counts = gate_counts(experiment_circuit(build_lattice(4, 7), 2.0, 4.0, 4))
    prep = counts["by_tag"].get("prep:RZZ", 0)
    if counts["two_qubit"] != 2415 or prep != 39:
        bad.append(f"full experiment {counts['two_qubit']} gates with {prep} prep (want 2415 / 39)")
    verdict(1, not bad, "; ".join(bad) if bad else "all rows and 2415 (39 prep) reproduced")


# ------------------------------------------------------------------ 2
def _z_strings(n, wmax=4):
    return [S for w in range(1, wmax + 1) for S in itertools.combinations(range(n), w)]


@pytest.mark.parametrize("Lx,Ly", [(2, 2), (2, 3)])
def test_oracle_equivalence(verdict, Lx, Ly):
    lat = build_lattice(Lx, Ly)
    init = default_initial_state(lat)
    n = lat.n_modes
    subsets = _z_strings(n)
    steps = 4
    psi0 = svsim.run_circuit(triplet_prep_circuit(lat, init=init))
    worst = {"cont": 0.0, "trot": 0.0, "mp": 0.0}
    for t in (0.0, 0.5, 1.0, 1.5, 2.0):
        sv_c = svsim.z_expectations(svsim.evolve_exact(lat, psi0, t, 0.0), n, subsets)
        sv_t = svsim.z_expectations(
            svsim.run_circuit(trotter_circuit(lat, t, 0.0, steps, parity=init.parity), psi0), n, subsets)
        pc, pt = nearflo.propagator(lat, t), nearflo.trotterized_propagator(lat, t, steps)
        circ = mj.FermionicCircuit.trotter(lat, t, 0.0, steps)
        for k, S in enumerate(subsets):
            worst["cont"] = max(worst["cont"], abs(nearflo.weighted_z_expectation(pc, init, S) - sv_c[k]))
            worst["trot"] = max(worst["trot"], abs(nearflo.weighted_z_expectation(pt, init, S) - sv_t[k]))
            mp = mj.mp_expectation(circ, {frozenset(S): 1.0}, init).value
            worst["mp"] = max(worst["mp"], abs(mp - sv_t[k]))
    ok = max(worst.values()) <= 1e-8
    detail = (f"{Lx}x{Ly}, {len(subsets)} Z strings x 5 times; max |diff| continuous {worst['cont']:.1e}, "
              f"trotterized {worst['trot']:.1e}, majorana {worst['mp']:.1e}")
    verdict(2, ok, detail)


# ------------------------------------------------------------------ 3
@pytest.mark.slow
def test_full_scale_ground_truth(verdict, lat47):
    init = default_initial_state(lat47)
    steps = 4
    t0 = time.time()
    worst = 0.0
    p0 = nearflo.propagator(lat47, 0.0)
    nd0, nt0 = nearflo.doublon_count(p0, init), nearflo.triplet_density(p0, init, lat47)
    md0, mt0 = mj.doublons_and_triplets_mp(lat47, 0.0, 0.0, steps, init)
    start_ok = all(abs(a - 1.0) < 1e-12 for a in (nd0, md0)) and all(abs(b + 13 / 14) < 1e-12 for b in (nt0, mt0))
    for t in TIMES20:
        prop = nearflo.trotterized_propagator(lat47, t, steps)
        nd, nt = nearflo.doublon_count(prop, init), nearflo.triplet_density(prop, init, lat47)
        md, mt = mj.doublons_and_triplets_mp(lat47, t, 0.0, steps, init)
        worst = max(worst, abs(nd - md), abs(nt - mt))
    mins = (time.time() - t0) / 60
    ok = worst <= 1e-8 and start_ok and mins < 30
    verdict(3, ok, f"4x7, 20 times: max |nearflo - majorana| {worst:.1e}; t=0 doublons {nd0:.12f}, "
                   f"triplets {nt0:.12f} (-13/14 = {-13 / 14:.12f}); {mins:.1f} min")


# ------------------------------------------------------------------ 4
TROTTER_TIMES = list(np.linspace(0.0, 2.0, 15))


def _trotter_structure(rows):
    t = np.array([r["t"] for r in rows])
    inf = np.array([r["infidelity"] for r in rows])
    mean = np.array([r["mean_error"] for r in rows])
    mx = np.array([r["max_error"] for r in rows])
    bounded = bool(np.all(mx <= inf + 1e-12))
    rho = float(spearmanr(t, inf)[0])
    early = (t > 0) & (t <= 1.5)
    ratio = float(mean[early].mean() / mx[early].mean())
    return bounded, rho, ratio


@pytest.mark.slow
def test_trotter_error_protocol(verdict):
    parts, ok = [], True
    # the default-flux 2x2 torus cancels its horizontal hops; the remaining
    # dynamics keeps the onsite energy fixed, so Trotterization is exact there
    rows = svsim.trotter_error_report(build_lattice(2, 2), 4, TROTTER_TIMES, observables=3, U=4.0)
    inf = max(r["infidelity"] for r in rows)
    bounded = all(r["max_error"] <= r["infidelity"] + 1e-12 for r in rows)
    ok &= bounded and inf < 1e-5
    parts.append(f"2x2 default flux: exact Trotterization (max infidelity {inf:.1e}), bounded {bounded}")
    for Lx, Ly, flux in ((2, 2, "zero"), (2, 3, "paper"), (3, 3, "paper")):
        rows = svsim.trotter_error_report(build_lattice(Lx, Ly, flux), 4, TROTTER_TIMES, observables=3, U=4.0)
        bounded, rho, ratio = _trotter_structure(rows)
        good = bounded and rho >= 0.9 and ratio <= 0.5
        ok &= good
        parts.append(f"{Lx}x{Ly} {flux}: bounded {bounded}, spearman {rho:.2f}, mean/max(t<=1.5) {ratio:.2f}")
    verdict(4, ok, "; ".join(parts))


# ------------------------------------------------------------------ 5
def _ideal_z(lat, init, U, times, subsets, steps=4):
    psi0 = svsim.run_circuit(triplet_prep_circuit(lat, init=init))
    vals = np.array([svsim.z_expectations(
        svsim.run_circuit(trotter_circuit(lat, t, U, steps, parity=init.parity), psi0), lat.n_modes, subsets)
        for t in times])
    return {S: vals[:, k] for k, S in enumerate(subsets)}


def _smoother_fixtures(seeds=range(200, 206)):
    t = np.round(np.arange(1, 21) * 0.1, 10)
    shapes = (lambda t: 0.6 * np.sin(2.2 * t) + 0.2, lambda t: 1 - 0.8 * np.exp(-2 * t),
              lambda t: 0.3 * np.cos(3 * t) * np.exp(-t / 2))
    out = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for f in shapes:
            truth = f(t)
            sig = np.full_like(t, np.ptp(truth) / 3)
            out.append((truth, TimeSeries(t, truth + sig * rng.standard_normal(len(t)), sig)))
    return out


@pytest.mark.slow
def test_mitigation_recovery(verdict):
    from fhsim.pipeline import RunManifest, _raw_z, synthesize_shots

    m = RunManifest({"lattice": {"Lx": 2, "Ly": 3}, "times": TIMES20, "U": [0.0, 4.0], "steps": 4, "seed": 0,
                     "circuit_twirls": 16, "shot_twirls": 16, "shots_per_twirl": 10, "stages": []})
    lat = m.lattice()
    init = default_initial_state(lat)
    shots = synthesize_shots(m)
    subsets = _z_strings(lat.n_modes, 2)
    raw = {u: _raw_z(shots, u, lat.n_sites) for u in (0.0, 4.0)}
    ideal = {u: _ideal_z(lat, init, u, TIMES20, subsets) for u in (0.0, 4.0)}
    # train on the free-fermion (U=0) circuits, score on held-out U=4 cells
    noisy0 = {S: s for S, s in raw[0.0].items() if np.ptp(s.values) > 0}
    exact0 = {S: TimeSeries(TIMES20, ideal[0.0][S], None) for S in noisy0}
    fmap = tflo_fit(noisy0, exact0, n_sites=lat.n_sites)
    hit = tot = 0
    for S in subsets:
        s = raw[4.0][S]
        c = tflo_apply(fmap, s, S) if S in noisy0 else s
        hit += int(np.sum(np.abs(c.values - ideal[4.0][S]) <= 2 * c.sigmas + 1e-12))
        tot += len(s)
    frac = hit / tot
    err_g, err_p = [], []
    for i, (truth, s) in enumerate(_smoother_fixtures()):
        err_g.append(gpr_smooth(s).values - truth)
        err_p.append(particle_filter_smooth(s, seed=i).values - truth)
    rg, rp = math.sqrt(np.mean(np.square(err_g))), math.sqrt(np.mean(np.square(err_p)))
    rel = abs(rp - rg) / rg
    ok = frac >= 0.9 and rel <= 0.25
    verdict(5, ok, f"TFLO within 2 sigma at {frac:.1%} of {tot} U=4 cells; pooled RMSE gpr {rg:.4f}, "
                   f"pf {rp:.4f} (rel diff {rel:.1%})")


# ------------------------------------------------------------------ 6
def test_error_bar_consistency(verdict):
    Nt, Ns = 16, 10
    ratios = []
    for seed in range(4):
        rng = np.random.default_rng(1000 + seed)
        base = rng.uniform(0.2, 0.8, 12)
        bits = []
        for _ in range(Nt):
            # per-instance drift of the occupation probabilities mimics coherent twirl-to-twirl variation
            p = np.clip(base + rng.normal(0, 0.08, 12), 0, 1)
            bits.append((rng.random((Ns, 12)) < p).astype(np.uint8))
        sh = ShotTable(0.5, 0.0, np.repeat(np.arange(Nt), Ns), np.vstack(bits))
        f = lambda s: np.r_[ob.doublon_count(s).value, ob.z_expectations(s, 1).estimates.value]
        analytic = np.r_[ob.doublon_count(sh).sigma, ob.z_expectations(sh, 1).estimates.sigma]
        ratios.append(analytic / bootstrap(sh, f, B=400, seed=seed).sigma)
    r = np.concatenate(ratios)
    ok = bool(np.all(np.abs(r - 1) <= 0.2))
    verdict(6, ok, f"{len(r)} estimators: analytic/bootstrap in [{r.min():.3f}, {r.max():.3f}]")


# ------------------------------------------------------------------ 7
def test_xeb_behavior(verdict):
    lat = build_lattice(2, 2)
    init = default_initial_state(lat)
    model = xeb.XebModel(nearflo.propagator(lat, 1.0), init)
    n = 10_000
    exact = xeb.sample_model(model, n, seed=1, epsilon=0.0)
    unif = xeb.uniform_samples(init, n, seed=2)
    m_eval = model.with_epsilon(0.01)
    xe_exact, xe_unif = xeb.log_xeb(exact, m_eval).value, xeb.log_xeb(unif, m_eval).value
    e_exact, e_unif = xeb.fit_epsilon(exact, model).epsilon, xeb.fit_epsilon(unif, model).epsilon
    mix = {f: xeb.fit_epsilon(xeb.sample_model(model, n, seed=10 + k, epsilon=f), model).epsilon
           for k, f in enumerate((0.2, 0.5, 0.8))}
    big = build_lattice(4, 7)
    binit = default_initial_state(big)
    prop = nearflo.propagator(big, 1.0)
    rows = xeb.uniform_samples(binit, 5, seed=3)
    secs = []
    for b in rows:
        t0 = time.perf_counter()
        nearflo.amplitude(prop, binit, b)
        secs.append(time.perf_counter() - t0)
    ok = (xe_exact < xe_unif and e_exact < 0.05 and e_unif > 0.95
          and all(abs(v - f) < 0.05 for f, v in mix.items()) and max(secs) < 1.0)
    verdict(7, ok, f"XE exact {xe_exact:.3f} < uniform {xe_unif:.3f} bits; eps* exact {e_exact:.4f}, "
                   f"uniform {e_unif:.4f}, mixtures " + ", ".join(f"{f}->{v:.3f}" for f, v in mix.items())
                   + f"; 56-mode amplitude max {max(secs):.3f} s")


# ------------------------------------------------------------------ 8
def _snake(Lx, x, y):
    return y * Lx + (x if y % 2 == 0 else Lx - 1 - x)


def _torus_graph(Lx, Ly):
    nb = {}
    for x, y in itertools.product(range(Lx), range(Ly)):
        nb[(x, y)] = {((x + 1) % Lx, y), ((x - 1) % Lx, y), (x, (y + 1) % Ly), (x, (y - 1) % Ly)} - {(x, y)}
    return nb


def _bfs(nb, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in nb[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def _all_shortest(nb, a, b):
    db = _bfs(nb, b)
    out = []

    def walk(path):
        u = path[-1]
        if u == b:
            out.append(list(path))
            return
        for v in sorted(nb[u]):
            if db[v] == db[u] - 1:
                walk(path + [v])

    walk([a])
    return out


def _brute_wilson_line(bits, Lx, Ly, M, kind="hd"):
    """Reference open-Wilson-line value (path normalization) from the graph definition."""
    nb = _torus_graph(Lx, Ly)
    L = Lx * Ly
    sites = list(nb)
    paths = {}
    for a in sites:
        da = _bfs(nb, a)
        for b in sites:
            if a != b and da[b] == M:
                paths[a, b] = _all_shortest(nb, a, b)
    num = den = 0.0
    for row in bits.astype(int):
        up = {s: row[_snake(Lx, *s)] for s in sites}
        dn = {s: row[L + _snake(Lx, *s)] for s in sites}
        sz = {s: 0.5 * (up[s] - dn[s]) for s in sites}
        is_ = {"h": lambda s: not up[s] and not dn[s], "d": lambda s: up[s] and dn[s]}
        for (a, b), ps in paths.items():
            if not (is_[kind[0]](a) and is_[kind[1]](b)):
                continue
            for p in ps:
                num += sum(sz[p[k]] * sz[p[k + 1]] for k in range(len(p) - 1))
                den += 1
    return 0.0 if den == 0 else num / den


def _hand_built(Lx, Ly, n, seed):
    """Random shots biased towards holons and doublons."""
    rng = np.random.default_rng(seed)
    L = Lx * Ly
    kind = rng.choice(4, size=(n, L), p=[0.25, 0.25, 0.25, 0.25])  # holon, up, down, doublon
    up = np.isin(kind, (1, 3)).astype(np.uint8)
    dn = np.isin(kind, (2, 3)).astype(np.uint8)
    return ShotTable(0.0, 0.0, 0, np.hstack([up, dn]))


def test_observable_algorithms(verdict):
    problems = []
    for Lx, Ly in ((3, 3), (3, 4), (4, 4)):
        lat = build_lattice(Lx, Ly)
        L = Lx * Ly
        sh = _hand_built(Lx, Ly, 12, seed=Lx * 10 + Ly)
        for M in range(1, Lx // 2 + Ly // 2 + 1):
            for kind in ("hd", "hh"):
                got = ob.open_wilson_line(sh, lat, M, kind)
                ref = _brute_wilson_line(sh.bits, Lx, Ly, M, kind)
                if abs(got - ref) > 1e-12:
                    problems.append(f"{Lx}x{Ly} V_{kind}({M}) {got} vs {ref}")
        loops = ob.loop_family(lat, perimeter=8) + ob.loop_family(lat, area=2)
        for lp in loops:
            pos = [_snake(Lx, x, y) for x, y in lp.sites]
            ref = np.mean([all(not (r[p] and r[L + p]) for p in pos) for r in sh.bits])
            if ob.wilson_loop(sh, lp).value != ref:
                problems.append(f"{Lx}x{Ly} loop {lp.sites}")
        # shell counts by exhaustive minimal-image enumeration
        shells = {}
        for x, y in itertools.product(range(Lx), range(Ly)):
            if (x, y) == (0, 0):
                continue
            dx, dy = min(x, Lx - x), min(y, Ly - y)
            shells[dx * dx + dy * dy] = shells.get(dx * dx + dy * dy, 0) + 1
        Z = ob.distance_shells(lat)
        if Z != shells or Z[1] != 4:
            problems.append(f"{Lx}x{Ly} shells {Z} vs {shells}")
        # g(r): constant unit field gives 1 everywhere; random shots match the pair-count sum
        const = ShotTable(0.0, 0.0, 0, np.tile(np.r_[np.ones(L), np.zeros(L)].astype(np.uint8), (3, 1)))
        if not all(abs(v - 1) < 1e-12 for v in ob.pair_correlation(const, lat).values()):
            problems.append(f"{Lx}x{Ly} g(r) of constant field")
        g = ob.pair_correlation(sh, lat)
        ch = sh.bits[:, :L].astype(float) + sh.bits[:, L:]
        for r2, val in g.items():
            acc, cnt = 0.0, 0
            for (x1, y1), (x2, y2) in itertools.product(itertools.product(range(Lx), range(Ly)), repeat=2):
                dx, dy = min(abs(x1 - x2), Lx - abs(x1 - x2)), min(abs(y1 - y2), Ly - abs(y1 - y2))
                if dx * dx + dy * dy == r2:
                    acc += np.mean(ch[:, _snake(Lx, x1, y1)] * ch[:, _snake(Lx, x2, y2)])
                    cnt += 1
            if cnt != L * shells[r2] or abs(val - acc / cnt) > 1e-12:
                problems.append(f"{Lx}x{Ly} g({r2})")
    verdict(8, not problems, "; ".join(problems[:5]) if problems else
            "open Wilson lines, Wilson loops, Z(1)=4 and g(r) match brute force on 3x3, 3x4, 4x4")
