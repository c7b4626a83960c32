import json

import pytest

from fhsim import pipeline as pl


def small(stages=("circuits", "exact", "mp", "shots", "observables", "mitigate"), **kw):
    cfg = {"name": "t", "lattice": {"Lx": 2, "Ly": 2}, "times": [0.2, 0.4, 0.6, 0.8], "U": [0.0, 2.0],
           "steps": 1, "seed": 7, "circuit_twirls": 2, "shot_twirls": 3, "shots_per_twirl": 4,
           "mp": {"U": [0.0]}, "stages": list(stages)}
    cfg.update(kw)
    return pl.RunManifest(cfg)


@pytest.mark.parametrize("bad", [
    {"lattice": {"Lx": 1, "Ly": 2}},
    {"times": []},
    {"steps": 0},
    {"stages": ["nope"]},
    {"noise": {"p2": 2.0}},
])
def test_schema_errors(bad):
    with pytest.raises(pl.PipelineError):
        small(**bad)


def test_missing_required_key():
    cfg = small().config
    del cfg["seed"]
    with pytest.raises(pl.PipelineError):
        pl.RunManifest(cfg)


def test_defaults_filled_and_digest_stable():
    m = small()
    assert m.config["noise"]["p2"] == 1e-3 and m.config["lattice"]["flux"] == "paper"
    assert small().digest == m.digest
    assert small(seed=8).digest != m.digest


def test_empty_stage_list_writes_record_only(tmp_path):
    rec = pl.run_pipeline(small(stages=()), tmp_path)
    assert rec["outputs"] == {} and rec["stages"] == []
    assert [p.name for p in tmp_path.iterdir()] == ["run.json"]
    assert json.loads((tmp_path / "run.json").read_text())["manifest"]["config"]["name"] == "t"


def test_full_run_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ra = pl.run_pipeline(small(), a)
    rb = pl.run_pipeline(small(), b)
    assert ra["outputs"] == rb["outputs"]
    assert (a / "run.json").read_bytes() == (b / "run.json").read_bytes()
    for name in ("exact_U0.csv", "mp.csv", "shots.csv", "raw.csv", "mitigated.csv"):
        assert (a / name).read_text().startswith(f"# manifest {ra['manifest_digest']}\n")
    index = json.loads((a / "circuits" / "index.json").read_text())
    assert index["manifest_digest"] == ra["manifest_digest"]
    assert len(list((a / "circuits").glob("*.json.gz"))) == 4 * 2 * 2


def test_stages_run_in_dependency_order(tmp_path):
    rec = pl.run_pipeline(small(stages=("mitigate", "observables", "shots", "exact")), tmp_path)
    assert rec["stages"] == ["exact", "shots", "observables", "mitigate"]


def test_missing_upstream(tmp_path):
    with pytest.raises(pl.PipelineError, match="needs outputs"):
        pl.run_pipeline(small(stages=("observables",)), tmp_path)


def test_stale_upstream_digest(tmp_path):
    pl.run_pipeline(small(stages=("shots",)), tmp_path)
    with pytest.raises(pl.PipelineError, match="digest mismatch"):
        pl.run_pipeline(small(stages=("observables",), seed=99), tmp_path)


def test_presets():
    m = pl.RunManifest.preset("paper")
    assert len(m.circuit_jobs()) == 20 * 2 * 8
    assert m.lattice().n_sites == 28
    assert pl.RunManifest.preset("small").lattice().n_sites == 6
    with pytest.raises(pl.PipelineError):
        pl.RunManifest.preset("huge")


def test_manifest_round_trip(tmp_path):
    m = small()
    p = tmp_path / "m.json"
    p.write_text(m.to_json())
    assert pl.RunManifest.load(p).digest == m.digest


@pytest.mark.slow
def test_paper_preset_builds_all_circuits(tmp_path):
    rec = pl.run_pipeline(pl.RunManifest.preset("paper"), tmp_path)
    assert len(list((tmp_path / "circuits").glob("*.json.gz"))) == 320
    assert "exact_U0.csv" in rec["outputs"]
