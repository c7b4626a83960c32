"""Noisy 2x3 run through the manifest pipeline, then a look at the mitigated series."""
import io
import sys
import tempfile
from pathlib import Path

from fhsim.observables import TimeSeries
from fhsim.pipeline import RunManifest, run_pipeline

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
m = RunManifest({"name": "demo", "lattice": {"Lx": 2, "Ly": 3}, "times": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
                 "U": [0.0, 4.0], "steps": 4, "seed": 1, "shot_twirls": 8,
                 "stages": ["exact", "shots", "observables", "mitigate"]})
rec = run_pipeline(m, out)
print(f"wrote {len(rec['outputs'])} files to {out} (manifest {rec['manifest_digest']})")

raw = TimeSeries.from_csv(io.StringIO((out / "raw.csv").read_text()))
mit = TimeSeries.from_csv(io.StringIO((out / "mitigated.csv").read_text()))
label = "z:0,1@U=4"
if label in raw:
    print(f"\n{label}: raw vs TFLO")
    for t, a, b, s in zip(raw[label].times, raw[label].values, mit[label].values, mit[label].sigmas):
        print(f"  t={t:.2f}  raw {a:+.3f}  tflo {b:+.3f} +- {s:.3f}")
