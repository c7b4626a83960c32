"""File-based experiment pipeline and figure data products.

A run is described by a JSON manifest. Stages read and write CSV/JSON files
in one output directory; every file carries the manifest digest (a ``#``
comment line in CSVs, a ``manifest_digest`` key in JSON) and the run record
``run.json`` lists the SHA-256 of every output.
"""
from __future__ import annotations

import gzip
import hashlib
import io
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, majorana, nearflo, observables as obs, svsim
from .circuit import experiment_circuit
from .initial_state import default_initial_state
from .lattice import build_lattice
from .mitigation import (SmootherConfig, gpr_smooth, particle_filter_smooth, postselect,
                         symmetry_average, tflo_apply, tflo_fit)
from .observables import TimeSeries
from .shots import ShotTable

WORKERS_ENV = "FHSIM_WORKERS"
STAGES = ("circuits", "exact", "mp", "shots", "observables", "mitigate")
DEPENDS = {"observables": ("shots",), "mitigate": ("observables", "exact")}
PAPER_TIMES = [round(0.1 * k, 1) for k in range(1, 21)]

SCHEMA = {
    "type": "object",
    "required": ["lattice", "times", "U", "steps", "seed", "stages"],
    "properties": {
        "name": {"type": "string"},
        "lattice": {"type": "object", "required": ["Lx", "Ly"],
                    "properties": {"Lx": {"type": "integer", "minimum": 2}, "Ly": {"type": "integer", "minimum": 2},
                                   "flux": {"type": "string"}}},
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "U": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "steps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "circuit_twirls": {"type": "integer", "minimum": 1},
        "shot_twirls": {"type": "integer", "minimum": 1},
        "shots_per_twirl": {"type": "integer", "minimum": 1},
        "noise": {"type": "object", "properties": {k: {"type": "number", "minimum": 0, "maximum": 1}
                                                   for k in ("p1", "p2", "spam")}},
        "mp": {"type": "object", "properties": {"U": {"type": "array", "items": {"type": "number"}},
                                                "coeff_thresh": {"type": "number", "minimum": 0},
                                                "weight_thresh": {"type": ["number", "null"]}}},
        "stages": {"type": "array", "items": {"enum": list(STAGES)}, "uniqueItems": True},
    },
}

DEFAULTS = {"name": "run", "circuit_twirls": 8, "shot_twirls": 16, "shots_per_twirl": 10,
            "noise": {"p1": 3e-5, "p2": 1e-3, "spam": 1e-3},
            "mp": {"U": [], "coeff_thresh": 0.0, "weight_thresh": None}}


class PipelineError(Exception):
    """User-facing pipeline failure (bad manifest, missing or stale input)."""


# ------------------------------------------------------------- manifest
@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            jsonschema.validate(self.config, SCHEMA)
        except jsonschema.ValidationError as e:
            raise PipelineError(f"manifest: {e.message}") from None
        cfg = json.loads(json.dumps(DEFAULTS))
        for k, v in self.config.items():
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
        cfg["lattice"].setdefault("flux", "paper")
        self.config = cfg

    def to_dict(self) -> dict:
        return {"config": self.config, "version": self.version, "inputs": self.inputs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        if "config" in d:
            return cls(d["config"], d.get("version", __version__), d.get("inputs", {}))
        return cls(d)

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def preset(cls, name: str) -> "RunManifest":
        if name == "paper":
            return cls({"name": "paper", "lattice": {"Lx": 4, "Ly": 7, "flux": "paper"}, "times": PAPER_TIMES,
                        "U": [0.0, 4.0], "steps": 4, "seed": 0, "circuit_twirls": 8, "shot_twirls": 16,
                        "shots_per_twirl": 10, "stages": ["circuits", "exact"]})
        if name == "small":
            return cls({"name": "small", "lattice": {"Lx": 2, "Ly": 3, "flux": "paper"}, "times": PAPER_TIMES,
                        "U": [0.0, 4.0], "steps": 4, "seed": 0, "circuit_twirls": 8, "shot_twirls": 16,
                        "shots_per_twirl": 10, "stages": ["exact", "shots", "observables", "mitigate"]})
        raise PipelineError(f"unknown preset {name!r}")

    # ---------------------------------------------------------- helpers
    def lattice(self):
        lc = self.config["lattice"]
        return build_lattice(lc["Lx"], lc["Ly"], lc.get("flux", "paper"))

    def circuit_jobs(self) -> list[tuple[float, float, int]]:
        c = self.config
        return [(float(t), float(u), k) for u in c["U"] for t in c["times"] for k in range(c["circuit_twirls"])]


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise PipelineError(f"{WORKERS_ENV} must be an integer") from None


def _map(fn, jobs):
    n = workers()
    if n == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(n) as ex:
        return list(ex.map(fn, jobs))


def _seed(base: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([base, *[(int(round(k * 1000)) if isinstance(k, float) else int(k)) % 2 ** 32
                                           for k in keys]])


def _order(stages) -> list[str]:
    """Declared stages in dependency order."""
    return [s for s in STAGES if s in stages]


# --------------------------------------------------------------- output
class _Writer:
    def __init__(self, out: Path, digest: str):
        self.out, self.digest, self.files = out, digest, {}

    def csv(self, name: str, text: str):
        self._put(name, f"# manifest {self.digest}\n{text}".encode())

    def json(self, name: str, obj):
        obj = dict(obj, manifest_digest=self.digest)
        self._put(name, json.dumps(obj, sort_keys=True).encode())

    def gz(self, name: str, data: bytes):
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0, filename="") as fh:
            fh.write(data)
        self._put(name, buf.getvalue())

    def _put(self, name: str, data: bytes):
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()


def _read_stamped(out: Path, name: str, digest: str) -> str:
    p = out / name
    if not p.exists():
        raise PipelineError(f"missing upstream file {p}")
    text = p.read_text()
    first = text.split("\n", 1)[0]
    if first != f"# manifest {digest}":
        raise PipelineError(f"digest mismatch in {p}: {first!r} (expected manifest {digest})")
    return text


# --------------------------------------------------------------- stages
def _build_circuit(job):
    cfg, t, u, k = job
    lat = build_lattice(cfg["lattice"]["Lx"], cfg["lattice"]["Ly"], cfg["lattice"]["flux"])
    seed = int(_seed(cfg["seed"], k).generate_state(1)[0])
    c = experiment_circuit(lat, t, u, cfg["steps"], twirl_seed=seed, compile=True)
    c.meta["twirl_id"] = k
    return c.to_json().encode()


def _stage_circuits(m: RunManifest, w: _Writer):
    jobs = m.circuit_jobs()
    blobs = _map(_build_circuit, [(m.config, t, u, k) for t, u, k in jobs])
    index = []
    for (t, u, k), blob in zip(jobs, blobs):
        name = f"circuits/t{t:.3f}_U{u:g}_tw{k}.json.gz"
        w.gz(name, blob)
        index.append({"time": t, "U": u, "twirl_id": k, "file": name})
    w.json("circuits/index.json", {"circuits": index, "count": len(index)})


def exact_z_series(lattice, times, init=None, max_weight: int = 2, steps: int | None = None) -> dict:
    """Free-fermion ``<Z>`` and ``<ZZ>`` series from densities and density correlators."""
    init = init or default_initial_state(lattice)
    n = lattice.n_modes
    subsets = [S for w in range(1, max_weight + 1) for S in itertools.combinations(range(n), w)]
    vals = {S: [] for S in subsets}
    for t in times:
        prop = (nearflo.propagator(lattice, t) if steps is None
                else nearflo.trotterized_propagator(lattice, t, steps))
        d = nearflo.density(prop, init)
        dd = nearflo.density_density(prop, init)
        for S in subsets:
            if len(S) == 1:
                vals[S].append(1 - 2 * d[S[0]])
            else:
                a, b = S
                vals[S].append(1 - 2 * d[a] - 2 * d[b] + 4 * dd[a, b])
    return {S: TimeSeries(times, v, None, _zlabel(S), "exact") for S, v in vals.items()}


def _zlabel(S) -> str:
    return "z:" + ",".join(map(str, S))


def _parse_zlabel(label: str) -> tuple[int, ...]:
    return tuple(int(v) for v in label[2:].split(","))


def _stage_exact(m: RunManifest, w: _Writer):
    lat = m.lattice()
    init = default_initial_state(lat)
    times = m.config["times"]
    nd, nt = [], []
    for t in times:
        prop = nearflo.propagator(lat, t)
        nd.append(nearflo.doublon_count(prop, init))
        nt.append(nearflo.triplet_density(prop, init, lat))
    series = [TimeSeries(times, nd, None, "doublons", "exact"), TimeSeries(times, nt, None, "triplets", "exact")]
    w.csv("exact_U0.csv", TimeSeries.many_to_csv(series))
    if lat.n_modes <= 24:
        # TFLO training targets: ideal values of the same Trotterized circuits the shots come from
        z = exact_z_series(lat, times, init, steps=m.config["steps"])
        w.csv("exact_z_U0.csv", TimeSeries.many_to_csv(z.values()))


def _stage_mp(m: RunManifest, w: _Writer):
    lat = m.lattice()
    init = default_initial_state(lat)
    c = m.config
    kw = {"coeff_thresh": c["mp"]["coeff_thresh"],
          "weight_thresh": np.inf if c["mp"]["weight_thresh"] is None else c["mp"]["weight_thresh"]}
    series = []
    for u in c["mp"]["U"]:
        rows = [majorana.doublons_and_triplets_mp(lat, t, u, c["steps"], init, **kw) for t in c["times"]]
        series.append(TimeSeries(c["times"], [r[0] for r in rows], None, f"doublons@U={u:g}", "mp"))
        series.append(TimeSeries(c["times"], [r[1] for r in rows], None, f"triplets@U={u:g}", "mp"))
    w.csv("mp.csv", TimeSeries.many_to_csv(series) if series else "label,time,value,sigma,provenance\n")


def _noisy_shots(job):
    cfg, t, u, k = job
    lat = build_lattice(cfg["lattice"]["Lx"], cfg["lattice"]["Ly"], cfg["lattice"]["flux"])
    circ_seed = int(_seed(cfg["seed"], k % cfg["circuit_twirls"]).generate_state(1)[0])
    c = experiment_circuit(lat, t, u, cfg["steps"], twirl_seed=circ_seed, compile=True)
    noise = svsim.NoiseModel(**cfg["noise"])
    return svsim.noisy_run(c, noise, cfg["shots_per_twirl"], seed=_seed(cfg["seed"], t, u, k, 7),
                           time=t, U=u, twirl_id=k)


def synthesize_shots(m: RunManifest) -> ShotTable:
    """Noisy trajectory shots for every ``(time, U, twirl)`` cell of the manifest."""
    c = m.config
    if 2 * c["lattice"]["Lx"] * c["lattice"]["Ly"] > 24:
        raise PipelineError("shot synthesis needs a statevector; lattice too large (max 12 sites)")
    jobs = [(c, float(t), float(u), k) for u in c["U"] for t in c["times"] for k in range(c["shot_twirls"])]
    return ShotTable.concat(_map(_noisy_shots, jobs))


def _stage_shots(m: RunManifest, w: _Writer):
    w.csv("shots.csv", synthesize_shots(m).to_csv())


def _raw_z(shots: ShotTable, U: float, n_sites: int, max_weight: int = 2) -> dict:
    """Post-selected, spin-symmetrized ``<Z>`` series with twirl-aware error bars."""
    sel = shots.select(U=U)
    out: dict = {}
    for (t, _), grp in sel.groups():
        kept, _ = postselect(grp)
        if len(kept) == 0:
            continue
        est = obs.z_expectations(kept, max_weight)
        vals = symmetry_average(est.as_dict(), n_sites)
        sig = {S: float(s) for S, s in zip(est.subsets, np.atleast_1d(est.estimates.sigma))}
        for S, v in vals.items():
            d = out.setdefault(S, ([], [], []))
            d[0].append(t)
            d[1].append(v)
            d[2].append(sig[S])
    return {S: TimeSeries(a, b, c, _zlabel(S), "raw") for S, (a, b, c) in out.items()}


def _stage_observables(m: RunManifest, w: _Writer):
    text = _read_stamped(w.out, "shots.csv", w.digest)
    shots = ShotTable.from_csv(io.StringIO(text))
    lat = m.lattice()
    series = []
    for u in m.config["U"]:
        sel = shots.select(U=u)
        kept = ShotTable.concat([postselect(g)[0] for _, g in sel.groups()])
        d = obs.time_series(kept, obs.doublon_count, f"doublons@U={u:g}")
        series.append(d)
        tr = [(t, obs.triplet_density(g, lat)) for (t, _), g in kept.groups()]
        series.append(TimeSeries([a for a, _ in tr], [b for _, b in tr], None, f"triplets@U={u:g}", "raw"))
        z = _raw_z(shots, u, lat.n_sites)
        series += [TimeSeries(s.times, s.values, s.sigmas, f"{s.label}@U={u:g}", "raw") for s in z.values()]
    w.csv("raw.csv", TimeSeries.many_to_csv(series))


def _stage_mitigate(m: RunManifest, w: _Writer):
    raw = TimeSeries.from_csv(io.StringIO(_read_stamped(w.out, "raw.csv", w.digest)))
    lat = m.lattice()
    U = m.config["U"]
    out = []
    if 0.0 in [float(u) for u in U] and (w.out / "exact_z_U0.csv").exists():
        exact = TimeSeries.from_csv(io.StringIO(_read_stamped(w.out, "exact_z_U0.csv", w.digest)))
        # constant noisy series carry no information for the affine fit and stay raw
        noisy0 = {_parse_zlabel(k): raw[f"{k}@U=0"] for k in exact
                  if f"{k}@U=0" in raw and np.ptp(raw[f"{k}@U=0"].values) > 0}
        exact0 = {_parse_zlabel(k): s for k, s in exact.items()}
        fmap = tflo_fit(noisy0, exact0, n_sites=lat.n_sites)
        for u in U:
            for S in noisy0:
                s = raw.get(f"{_zlabel(S)}@U={u:g}")
                if s is not None:
                    out.append(tflo_apply(fmap, s, S))
    cfg = SmootherConfig()
    for u in U:
        s = raw.get(f"doublons@U={u:g}")
        if s is not None and len(s) >= 3:
            out.append(gpr_smooth(s, cfg))
            out.append(particle_filter_smooth(s, cfg, seed=_seed(m.config["seed"], u, 11)))
    w.csv("mitigated.csv", TimeSeries.many_to_csv(out) if out else "label,time,value,sigma,provenance\n")


_RUNNERS = {"circuits": _stage_circuits, "exact": _stage_exact, "mp": _stage_mp, "shots": _stage_shots,
            "observables": _stage_observables, "mitigate": _stage_mitigate}


def run_pipeline(manifest: RunManifest | dict, out_dir) -> dict:
    """Run the declared stages in dependency order and write ``run.json``.

    Identical manifests give byte-identical outputs. Returns the run record.
    """
    m = manifest if isinstance(manifest, RunManifest) else RunManifest.from_dict(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = _Writer(out, m.digest)
    stages = _order(m.config["stages"])
    for s in stages:
        for dep in DEPENDS.get(s, ()):
            if dep not in stages and not any((out / f).exists() for f in _PRODUCTS[dep]):
                raise PipelineError(f"stage {s!r} needs outputs of {dep!r}")
        _RUNNERS[s](m, w)
    record = {"manifest": m.to_dict(), "manifest_digest": m.digest, "stages": stages,
              "outputs": dict(sorted(w.files.items()))}
    (out / "run.json").write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
    return record


_PRODUCTS = {"circuits": ["circuits/index.json"], "exact": ["exact_U0.csv"], "mp": ["mp.csv"],
             "shots": ["shots.csv"], "observables": ["raw.csv"], "mitigate": ["mitigated.csv"]}


# -------------------------------------------------------------- figures
FIGURE_PRESETS = ("fig3-U0", "fig3-mp", "fig-mitigation", "fig-wilson")


def reproduce_figures(preset: str, out_dir, times=None, seed: int = 0, lattice=None) -> dict[str, Path]:
    """Write per-figure TimeSeries CSVs for external plotting.

    ``fig3-U0``: free-fermion doublon number and triplet density on 4x7.
    ``fig3-mp``: the same pair from Majorana propagation at U = 0.
    ``fig-mitigation``: raw, TFLO, GPR and PF series on a noisy 2x3 run.
    ``fig-wilson``: Wilson loops of every (area, perimeter) on sampled 3x3 shots at U = 4.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    times = PAPER_TIMES if times is None else [float(t) for t in times]
    files = {}
    if preset == "fig3-U0":
        lat = lattice or build_lattice(4, 7)
        init = default_initial_state(lat)
        nd, nt = [], []
        for t in [0.0] + times:
            prop = nearflo.propagator(lat, t)
            nd.append(nearflo.doublon_count(prop, init))
            nt.append(nearflo.triplet_density(prop, init, lat))
        ts = [0.0] + times
        text = TimeSeries.many_to_csv([TimeSeries(ts, nd, None, "doublons", "exact"),
                                       TimeSeries(ts, nt, None, "triplets", "exact")])
    elif preset == "fig3-mp":
        lat = lattice or build_lattice(4, 7)
        init = default_initial_state(lat)
        rows = [majorana.doublons_and_triplets_mp(lat, t, 0.0, 4, init) for t in times]
        text = TimeSeries.many_to_csv([TimeSeries(times, [r[0] for r in rows], None, "doublons", "mp"),
                                       TimeSeries(times, [r[1] for r in rows], None, "triplets", "mp")])
    elif preset == "fig-mitigation":
        lc = {"Lx": lattice.Lx, "Ly": lattice.Ly, "flux": lattice.preset} if lattice else {"Lx": 2, "Ly": 3}
        m = RunManifest({"name": "fig-mitigation", "lattice": lc, "times": times, "U": [0.0, 4.0], "steps": 4,
                         "seed": seed, "stages": ["exact", "shots", "observables", "mitigate"]})
        rec = run_pipeline(m, out / "fig-mitigation")
        raw = (out / "fig-mitigation" / "raw.csv").read_text()
        mit = (out / "fig-mitigation" / "mitigated.csv").read_text()
        text = raw.split("\n", 1)[1] + "".join(mit.split("\n", 2)[2:])
        files["run"] = out / "fig-mitigation" / "run.json"
        del rec
    elif preset == "fig-wilson":
        lat = lattice or build_lattice(3, 3)
        init = default_initial_state(lat)
        from .circuit import triplet_prep_circuit
        psi0 = svsim.run_circuit(triplet_prep_circuit(lat, init=init))
        loops = {}
        for a in range(1, lat.n_sites):
            for lp in obs.loop_family(lat, area=a):
                loops.setdefault((lp.area, lp.perimeter), lp)
        rng = np.random.default_rng(seed)
        vals = {k: ([], []) for k in loops}
        for t in times:
            psi = svsim.evolve_exact(lat, psi0, t, 4.0)
            shots = svsim.sample(psi, 160, rng_seed=rng.integers(2 ** 32), time=t, U=4.0)
            shots.twirl_id[:] = np.arange(len(shots)) // 10
            for k, lp in loops.items():
                e = obs.wilson_loop(shots, lp)
                vals[k][0].append(float(e.value))
                vals[k][1].append(float(e.sigma))
        text = TimeSeries.many_to_csv([TimeSeries(times, v, s, f"W(A={a},p={p})", "raw")
                                       for (a, p), (v, s) in sorted(vals.items())])
    else:
        raise PipelineError(f"unknown figure preset {preset!r}; choose from {FIGURE_PRESETS}")
    path = out / f"{preset}.csv"
    path.write_text(text)
    files[preset] = path
    return files
