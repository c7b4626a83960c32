"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad arguments, bad or missing input
files), 2 internal error. The worker count for parallel stages is read from
the ``FHSIM_WORKERS`` environment variable.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
import traceback

import numpy as np

from . import __version__


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _floats(text: str) -> list[float]:
    """``0.1,0.2`` or ``start:stop:step`` (inclusive stop)."""
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        n = int(round((b - a) / s))
        return [round(a + k * s, 10) for k in range(n + 1)]
    return [float(v) for v in text.split(",") if v]


def _emit(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _lattice(a):
    from .lattice import build_lattice
    return build_lattice(a.lx, a.ly, a.flux)


def _add_lattice(p, required=True):
    p.add_argument("--lx", type=int, required=required)
    p.add_argument("--ly", type=int, required=required)
    p.add_argument("--flux", default="paper", help="flux preset: paper, zero, pi-column")


# ---------------------------------------------------------------- commands
def cmd_lattice(a):
    lat = _lattice(a)
    d = lat.to_dict()
    d["snake_order"] = [list(lat.site_at(p)) for p in range(lat.n_sites)]
    d["n_modes"] = lat.n_modes
    _emit(json.dumps(d, indent=1) + "\n", a.out)


def cmd_circuit_build(a):
    from .circuit import experiment_circuit, gate_counts, trotter_circuit
    lat = _lattice(a)
    if a.no_prep:
        c = trotter_circuit(lat, a.time, a.u, a.steps)
        if a.twirl_seed is not None:
            from .circuit import pseudo_twirl
            c = pseudo_twirl(c, a.twirl_seed)
    else:
        c = experiment_circuit(lat, a.time, a.u, a.steps, twirl_seed=a.twirl_seed, compile=a.compile)
    _emit(c.to_json(), a.out)
    print(json.dumps(gate_counts(c)), file=sys.stderr)


def cmd_circuit_cost(a):
    from .circuit import experiment_circuit, gate_counts, predicted_two_qubit_cost
    lat = _lattice(a)
    c = experiment_circuit(lat, 0.1, 4.0, a.steps)
    print(json.dumps({"predicted_trotter": predicted_two_qubit_cost(a.lx, a.ly, a.steps),
                      "constructed_total": gate_counts(c)["two_qubit"]}))


def _series_out(series, out):
    from .observables import TimeSeries
    _emit(TimeSeries.many_to_csv(series), out)


def cmd_sim_sv(a):
    from . import svsim
    from .circuit import triplet_prep_circuit, trotter_circuit
    from .initial_state import default_initial_state
    from .observables import TimeSeries
    lat = _lattice(a)
    if lat.n_modes > 24:
        raise UserError("statevector simulation is limited to 24 modes")
    init = default_initial_state(lat)
    psi0 = svsim.run_circuit(triplet_prep_circuit(lat, init=init))
    n = lat.n_modes
    L = lat.n_sites
    rows = {"doublons": [], "triplets": []}
    zs = svsim.z_strings(n, a.z_weight) if a.z_weight else []
    zrows = {S: [] for S in zs}
    for t in a.times:
        if a.steps:
            psi = svsim.run_circuit(trotter_circuit(lat, t, a.u, a.steps, parity=init.parity), psi0)
        else:
            psi = svsim.evolve_exact(lat, psi0, t, a.u)
        d = svsim.density(psi, n)
        dd = svsim.density_density(psi, n)
        rows["doublons"].append(float(sum(dd[p, p + L] for p in range(L))))
        rows["triplets"].append(_triplets_from_nn(lat, d, dd))
        if zs:
            for S, v in zip(zs, svsim.z_expectations(psi, n, zs)):
                zrows[S].append(float(v))
    prov = "exact"
    series = [TimeSeries(a.times, v, None, k, prov) for k, v in rows.items()]
    series += [TimeSeries(a.times, v, None, "z:" + ",".join(map(str, S)), prov) for S, v in zrows.items()]
    _series_out(series, a.out)


def _triplets_from_nn(lat, d, dd) -> float:
    L = lat.n_sites
    eta = np.concatenate([np.ones(L), -np.ones(L)]) / 2
    tot = 0.0
    for b in lat.bonds():
        i, j = lat.position(b.i), lat.position(b.j)
        szsz = sum(eta[x] * eta[y] * dd[x, y] for x in (i, i + L) for y in (j, j + L))
        tot += 4 * (szsz - (eta[i] * d[i] + eta[i + L] * d[i + L]) * (eta[j] * d[j] + eta[j + L] * d[j + L]))
    return float(2.0 / L * tot)


def cmd_sim_nearflo(a):
    from . import nearflo
    from .initial_state import default_initial_state
    from .observables import TimeSeries
    lat = _lattice(a)
    init = default_initial_state(lat)
    nd, nt = [], []
    for t in a.times:
        prop = nearflo.trotterized_propagator(lat, t, a.steps) if a.steps else nearflo.propagator(lat, t)
        nd.append(nearflo.doublon_count(prop, init))
        nt.append(nearflo.triplet_density(prop, init, lat))
    _series_out([TimeSeries(a.times, nd, None, "doublons", "exact"),
                 TimeSeries(a.times, nt, None, "triplets", "exact")], a.out)


def cmd_sim_mp(a):
    from . import majorana as mp
    from .initial_state import default_initial_state
    from .observables import TimeSeries
    lat = _lattice(a)
    if lat.n_sites > 32:
        raise UserError("Majorana propagation supports at most 32 sites")
    init = default_initial_state(lat)
    kw = {"coeff_thresh": a.coeff_thresh, "weight_thresh": a.weight_thresh}
    vals = []
    for t in a.times:
        circ = mp.FermionicCircuit.trotter(lat, t, a.u, a.steps)
        if a.observable == "triplets":
            vals.append(mp.n_triplets_mp(lat, t, a.u, a.steps, init, **kw))
        else:
            try:
                op = mp.observable_from_string(a.observable, lat)
            except ValueError as e:
                raise UserError(str(e)) from None
            vals.append(float(mp.mp_expectation(circ, op, init, **kw).value))
    _series_out([TimeSeries(a.times, vals, None, f"{a.observable}@U={a.u:g}", "mp")], a.out)


def cmd_shots_synthesize(a):
    from .pipeline import RunManifest, synthesize_shots
    m = RunManifest({"lattice": {"Lx": a.lx, "Ly": a.ly, "flux": a.flux}, "times": a.times, "U": a.u,
                     "steps": a.steps, "seed": a.seed, "circuit_twirls": a.circuit_twirls,
                     "shot_twirls": a.twirls, "shots_per_twirl": a.shots,
                     "noise": {"p1": a.p1, "p2": a.p2, "spam": a.spam}, "stages": []})
    _emit(synthesize_shots(m).to_csv(), a.out)


def _read_shots(path):
    from .shots import ShotTable
    try:
        return ShotTable.from_csv(path)
    except (OSError, ValueError) as e:
        raise UserError(f"cannot read shots: {e}") from None


def cmd_shots_postselect(a):
    from .mitigation import postselect
    shots = _read_shots(a.shots)
    policy = "exact" if a.max_error is None else a.max_error
    kept, rep = postselect(shots, policy)
    _emit(kept.to_csv(), a.out)
    print(json.dumps({"total": rep.total, "retained": rep.retained, "fraction": rep.fraction,
                      "histogram": {f"{k[0]},{k[1]}": v for k, v in sorted(rep.histogram.items())}}),
          file=sys.stderr)


def cmd_analyze(a):
    from . import observables as obs
    from .mitigation import postselect
    from .observables import TimeSeries
    shots = _read_shots(a.shots)
    if not a.raw:
        shots, _ = postselect(shots)
    lat = _lattice(a) if a.lx else None
    what = a.observable
    if what in ("triplets", "czz", "wilson", "vhd") and lat is None:
        raise UserError(f"{what} needs --lx/--ly")
    series = []
    for u in sorted({float(v) for v in shots.U}):
        sel = shots.select(U=u)
        if what == "doublons":
            series.append(obs.time_series(sel, obs.doublon_count, f"doublons@U={u:g}"))
        elif what == "holons":
            series.append(obs.time_series(sel, obs.holon_count, f"holons@U={u:g}"))
        elif what == "triplets":
            ts = [(t, obs.triplet_density(g, lat)) for (t, _), g in sel.groups()]
            series.append(TimeSeries([x for x, _ in ts], [y for _, y in ts], None, f"triplets@U={u:g}"))
        elif what == "czz":
            if a.i is None or a.j is None:
                raise UserError("czz needs --i and --j")
            ts = [(t, obs.czz(g, a.i, a.j)) for (t, _), g in sel.groups()]
            series.append(TimeSeries([x for x, _ in ts], [y for _, y in ts], None, f"czz:{a.i},{a.j}@U={u:g}"))
        elif what == "wilson":
            loops = _loops(a, lat)
            for name, lp in loops:
                series.append(obs.time_series(sel, lambda g, lp=lp: obs.wilson_loop(g, lp), f"{name}@U={u:g}"))
        elif what == "vhd":
            if a.M is None:
                raise UserError("vhd needs --M")
            ts = [(t, obs.open_wilson_line(g, lat, a.M, "hd", a.normalization)) for (t, _), g in sel.groups()]
            series.append(TimeSeries([x for x, _ in ts], [y for _, y in ts], None, f"vhd:{a.M}@U={u:g}"))
    _series_out(series, a.out)


def _loops(a, lat):
    from .observables import loop_family
    if a.loops:
        try:
            with open(a.loops) as fh:
                data = json.load(fh)
        except (OSError, ValueError) as e:
            raise UserError(f"cannot read loops: {e}") from None
        return [(d.get("name", f"loop{k}"), [tuple(s) for s in d["sites"]]) for k, d in enumerate(data)]
    out = []
    for A in range(1, lat.n_sites):
        for lp in loop_family(lat, area=A):
            out.append((f"W(A={lp.area},p={lp.perimeter})", lp))
    seen, uniq = set(), []
    for name, lp in out:
        if name not in seen:
            seen.add(name)
            uniq.append((name, lp))
    return uniq


def _read_series(path):
    from .observables import TimeSeries
    try:
        return TimeSeries.from_csv(path)
    except (OSError, ValueError) as e:
        raise UserError(f"cannot read series: {e}") from None


def _base(label: str) -> str:
    return label.split("@", 1)[0]


def cmd_mitigate_tflo(a):
    from .mitigation import tflo_apply, tflo_fit
    exact = _read_series(a.train)
    noisy = _read_series(a.apply)
    train_noisy = _read_series(a.noisy_train) if a.noisy_train else noisy
    pairs = {k: train_noisy[k] for k in exact if k in train_noisy and np.ptp(train_noisy[k].values) > 0}
    if not pairs:
        raise UserError("no training series: labels in --train must match noisy labels")
    fmap = tflo_fit({_base(k): s for k, s in pairs.items()}, {_base(k): exact[k] for k in pairs})
    out = [tflo_apply(fmap, s, _base(k)) for k, s in noisy.items() if _base(k) in fmap.fits]
    _series_out(out, a.out)


def cmd_mitigate_gpr(a):
    from .mitigation import gpr_smooth
    _series_out([gpr_smooth(s) for s in _read_series(a.series).values()], a.out)


def cmd_mitigate_pf(a):
    from .mitigation import particle_filter_smooth
    rng = np.random.SeedSequence(a.seed)
    series = list(_read_series(a.series).values())
    _series_out([particle_filter_smooth(s, seed=c) for s, c in zip(series, rng.spawn(len(series)))], a.out)


def cmd_mitigate_bootstrap(a):
    from . import observables as obs
    from .mitigation import bootstrap
    from .observables import TimeSeries
    shots = _read_shots(a.shots)
    est = {"doublons": obs.doublon_count, "holons": obs.holon_count}[a.observable]
    series = []
    for u in sorted({float(v) for v in shots.U}):
        sel = shots.select(U=u)
        keys = sel.keys()
        raw = obs.time_series(sel, est, f"{a.observable}@U={u:g}")

        def pipe(s, keys=keys):
            return [float(est(s.select(t, uu)).value) for t, uu in keys]

        b = bootstrap(sel, pipe, a.B, a.seed)
        series.append(TimeSeries(raw.times, raw.values, b.sigma, raw.label + ":bootstrap"))
        series.append(raw)
    _series_out(series, a.out)


def cmd_xeb(a):
    from . import nearflo
    from .initial_state import default_initial_state
    from .xeb import XebModel, fit_epsilon, log_xeb
    shots = _read_shots(a.shots)
    lat = _lattice(a)
    if lat.n_modes != shots.n_modes:
        raise UserError("shot width does not match the lattice")
    init = default_initial_state(lat)
    times = [a.time] if a.time is not None else sorted({float(t) for t in shots.time})
    print("time,n,xe_bits,se_bits,epsilon")
    for t in times:
        sel = shots.select(time=t)
        if len(sel) == 0:
            raise UserError(f"no shots at time {t}")
        prop = nearflo.trotterized_propagator(lat, t, a.steps) if a.steps else nearflo.propagator(lat, t)
        model = XebModel(prop, init, 0.0 if a.fit_epsilon else a.epsilon)
        if a.fit_epsilon:
            fit = fit_epsilon(sel.bits, model)
            model = model.with_epsilon(fit.epsilon)
        try:
            s = log_xeb(sel.bits, model)
        except ZeroDivisionError as e:
            raise UserError(str(e)) from None
        print(f"{t!r},{s.n},{s.value!r},{s.se!r},{model.epsilon!r}")


def cmd_pipeline_run(a):
    from .pipeline import RunManifest, run_pipeline
    m = RunManifest.preset(a.preset) if a.preset else RunManifest.load(a.manifest)
    if a.seed is not None:
        m = RunManifest(dict(m.config, seed=a.seed), m.version, m.inputs)
    rec = run_pipeline(m, a.out)
    print(json.dumps({"manifest_digest": rec["manifest_digest"], "outputs": len(rec["outputs"])}))


def cmd_pipeline_figures(a):
    from .pipeline import reproduce_figures
    files = reproduce_figures(a.preset, a.out, a.times, a.seed or 0)
    for k, v in files.items():
        print(f"{k}: {v}")


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    P = _Parser(prog="fhsim", description="Fermi-Hubbard quench circuits: build, simulate, analyze.")
    P.add_argument("--version", action="version", version=__version__)
    sub = P.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("lattice", parents=[common], help="describe a lattice")
    _add_lattice(p)
    p.set_defaults(fn=cmd_lattice)

    pc = sub.add_parser("circuit", help="circuit construction").add_subparsers(dest="sub", required=True,
                                                                                 parser_class=_Parser)
    p = pc.add_parser("build", parents=[common])
    _add_lattice(p)
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--twirl-seed", type=int, default=None)
    p.add_argument("--compile", action="store_true", help="merge single-qubit gates")
    p.add_argument("--no-prep", action="store_true", help="omit the triplet preparation")
    p.set_defaults(fn=cmd_circuit_build)
    p = pc.add_parser("cost", parents=[common])
    _add_lattice(p)
    p.add_argument("--steps", type=int, default=4)
    p.set_defaults(fn=cmd_circuit_cost)

    ps = sub.add_parser("sim", help="simulators").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    for name, fn in (("sv", cmd_sim_sv), ("nearflo", cmd_sim_nearflo), ("mp", cmd_sim_mp)):
        p = ps.add_parser(name, parents=[common])
        _add_lattice(p)
        p.add_argument("--times", type=_floats, default=_floats("0.1:2.0:0.1"))
        p.add_argument("--steps", type=int, default=4 if name == "mp" else 0,
                       help="Trotter steps (0: continuous time)")
        if name != "nearflo":
            p.add_argument("--u", type=float, default=0.0)
        if name == "sv":
            p.add_argument("--z-weight", type=int, default=0, help="also emit all Z strings up to this weight")
        if name == "mp":
            p.add_argument("--observable", default="doublons",
                           help="doublons | triplets | czz:i,j | vhd:M | z:m1,m2,...")
            p.add_argument("--coeff-thresh", type=float, default=0.0)
            p.add_argument("--weight-thresh", type=float, default=math.inf)
        p.set_defaults(fn=fn)

    psh = sub.add_parser("shots", help="shot files").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    p = psh.add_parser("synthesize", parents=[common])
    _add_lattice(p)
    p.add_argument("--times", type=_floats, default=_floats("0.1:2.0:0.1"))
    p.add_argument("--u", type=_floats, default=[0.0, 4.0])
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--twirls", type=int, default=16)
    p.add_argument("--circuit-twirls", type=int, default=8)
    p.add_argument("--shots", type=int, default=10)
    p.add_argument("--p1", type=float, default=3e-5)
    p.add_argument("--p2", type=float, default=1e-3)
    p.add_argument("--spam", type=float, default=1e-3)
    p.set_defaults(fn=cmd_shots_synthesize)
    p = psh.add_parser("postselect", parents=[common])
    p.add_argument("--shots", required=True)
    p.add_argument("--max-error", type=int, default=None)
    p.set_defaults(fn=cmd_shots_postselect)

    p = sub.add_parser("analyze", parents=[common], help="observables from shots")
    p.add_argument("observable", choices=["doublons", "holons", "triplets", "czz", "wilson", "vhd"])
    p.add_argument("--shots", required=True)
    _add_lattice(p, required=False)
    p.add_argument("--i", type=int)
    p.add_argument("--j", type=int)
    p.add_argument("--loops", help="JSON list of {name, sites: [[x, y], ...]}")
    p.add_argument("--M", type=int)
    p.add_argument("--normalization", default="paths", choices=["paths", "pairs"])
    p.add_argument("--raw", action="store_true", help="skip post-selection")
    p.set_defaults(fn=cmd_analyze)

    pm = sub.add_parser("mitigate", help="error mitigation").add_subparsers(dest="sub", required=True,
                                                                            parser_class=_Parser)
    p = pm.add_parser("tflo", parents=[common])
    p.add_argument("--train", required=True, help="exact series CSV")
    p.add_argument("--apply", required=True, help="noisy series CSV")
    p.add_argument("--noisy-train", help="noisy training series (default: the --apply file)")
    p.set_defaults(fn=cmd_mitigate_tflo)
    for name, fn in (("gpr", cmd_mitigate_gpr), ("pf", cmd_mitigate_pf)):
        p = pm.add_parser(name, parents=[common])
        p.add_argument("--series", required=True)
        p.set_defaults(fn=fn)
    p = pm.add_parser("bootstrap", parents=[common])
    p.add_argument("--shots", required=True)
    p.add_argument("--observable", default="doublons", choices=["doublons", "holons"])
    p.add_argument("--B", type=int, default=200)
    p.set_defaults(fn=cmd_mitigate_bootstrap)

    p = sub.add_parser("xeb", parents=[common], help="cross-entropy benchmark")
    p.add_argument("--shots", required=True)
    _add_lattice(p)
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--steps", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--epsilon", type=float, default=0.1)
    g.add_argument("--fit-epsilon", action="store_true")
    p.set_defaults(fn=cmd_xeb)

    pp = sub.add_parser("pipeline", help="manifest runs").add_subparsers(dest="sub", required=True,
                                                                         parser_class=_Parser)
    p = pp.add_parser("run", parents=[common])
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--manifest")
    g.add_argument("--preset", choices=["paper", "small"])
    p.set_defaults(fn=cmd_pipeline_run)
    p = pp.add_parser("figures", parents=[common])
    p.add_argument("--preset", required=True, choices=["fig3-U0", "fig3-mp", "fig-mitigation", "fig-wilson"])
    p.add_argument("--times", type=_floats, default=None)
    p.set_defaults(fn=cmd_pipeline_figures)
    return P


def main(argv=None) -> int:
    from .pipeline import PipelineError
    args = build_parser().parse_args(argv)
    if getattr(args, "out", None) is None and args.fn in (cmd_pipeline_run, cmd_pipeline_figures):
        print("error: --out directory required", file=sys.stderr)
        return 1
    try:
        args.fn(args)
    except (UserError, PipelineError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
