import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fhsim import mitigation as mt
from fhsim.observables import TimeSeries, doublon_count
from fhsim.shots import ShotTable


def test_postselect_exact_and_tolerant():
    bits = [[1, 0, 0, 1], [1, 1, 0, 1], [0, 0, 0, 0], [0, 1, 1, 0]]
    sh = ShotTable(0.0, 0.0, 0, bits)
    kept, rep = mt.postselect(sh)
    assert len(kept) == 2 and rep.fraction == 0.5
    assert rep.histogram[(1, 1)] == 2
    kept1, _ = mt.postselect(sh, 1)
    assert len(kept1) == 3
    with pytest.raises(ValueError):
        mt.postselect(ShotTable(0.0, 0.0, 0, [[1, 0, 1, 0, 1, 0]]))


def test_symmetry_average():
    z = {(0,): 0.2, (2,): 0.4, (0, 1): 0.1, (1, 3): 0.5}
    out = mt.symmetry_average(z, 2)
    assert out[(0,)] == pytest.approx(0.3) and out[(2,)] == pytest.approx(0.3)
    assert out[(0, 1)] == 0.1  # partner (2, 3) missing


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=20), st.integers(1, 50))
def test_twirl_error_bar_formula(means, Ns):
    means = np.array(means)
    var = np.full(len(means), 0.25)
    Nt = len(means)
    want = np.sum((means - means.mean()) ** 2) / (Nt * (Nt - 1))
    if Ns > 1:
        want += 0.25 * Nt / (Nt ** 2 * Ns)
    assert mt.twirl_error_bar(means, var, Nt, Ns) == pytest.approx(math.sqrt(want), abs=1e-12)


def test_twirl_error_bar_needs_two_instances():
    with pytest.raises(ValueError):
        mt.twirl_error_bar([0.1], [0.0], 1, 5)


def twirled(seed=0, Nt=16, Ns=10):
    rng = np.random.default_rng(seed)
    return ShotTable(0.0, 0.0, np.repeat(np.arange(Nt), Ns), rng.integers(0, 2, (Nt * Ns, 8)))


def test_bootstrap_single_replicate_is_degenerate():
    res = mt.bootstrap(twirled(), lambda s: doublon_count(s).value, B=1, seed=0)
    assert res.degenerate and res.sigma == 0
    with pytest.raises(ValueError):
        mt.bootstrap(twirled(), lambda s: 0.0, B=0)


def test_bootstrap_is_seeded():
    f = lambda s: doublon_count(s).value
    a = mt.bootstrap(twirled(), f, B=20, seed=5)
    b = mt.bootstrap(twirled(), f, B=20, seed=5)
    assert np.array_equal(a.replicates, b.replicates)


def test_resample_keeps_shape():
    sh = twirled()
    r = mt.resample_shots(sh, np.random.default_rng(0))
    assert len(r) == len(sh) and sorted(set(r.twirl_id)) == list(range(16))


def series(values, sig=0.01, label="x"):
    t = np.linspace(0.1, 2.0, len(values))
    return TimeSeries(t, values, np.full(len(values), sig), label)


def test_tflo_recovers_affine_map():
    t = np.linspace(0.1, 2.0, 20)
    exact = {k: series(np.cos(t * (k + 1)), 0, k) for k in range(3)}
    noisy = {k: series(0.6 * exact[k].values + 0.1, 0.01, k) for k in range(3)}
    fmap = mt.tflo_fit(noisy, exact)
    for k in range(3):
        f = fmap[k]
        assert f.stage == 1
        assert f.slope == pytest.approx(1 / 0.6) and f.intercept == pytest.approx(-0.1 / 0.6)
        assert np.allclose(mt.tflo_apply(fmap, noisy[k]).values, exact[k].values)


def test_tflo_stage_two_uses_group_prior():
    t = np.linspace(0.1, 2.0, 20)
    exact = {(0,): series(np.cos(t), 0), (1,): series(np.sin(t), 0), (2,): series(0.5 + 1e-4 * t, 0)}
    noisy = {k: series(0.5 * v.values, 0.05) for k, v in exact.items()}
    fmap = mt.tflo_fit(noisy, exact)
    assert fmap[(2,)].stage == 2
    assert fmap[(2,)].slope == pytest.approx(2.0, abs=0.2)


def test_tflo_rejects_constant_noisy():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        mt.tflo_fit({"a": series(np.zeros(5))}, {"a": series(t)})
    with pytest.raises(KeyError):
        mt.tflo_fit({"a": series(t)}, {})


def test_gpr_constant_series():
    s = series(np.full(20, 0.7), 0.05)
    g = mt.gpr_smooth(s)
    assert np.allclose(g.values, 0.7, atol=1e-9) and g.provenance == "gpr"
    with pytest.raises(ValueError):
        mt.gpr_smooth(series([1.0, 2.0]))


def test_particle_filter_is_seeded():
    rng = np.random.default_rng(0)
    t = np.linspace(0.1, 2.0, 20)
    s = series(np.sin(2 * t) + 0.05 * rng.normal(size=20), 0.05)
    a = mt.particle_filter_smooth(s, seed=3)
    b = mt.particle_filter_smooth(s, seed=3)
    assert np.array_equal(a.values, b.values) and a.provenance == "pf"
    assert np.sqrt(np.mean((a.values - np.sin(2 * t)) ** 2)) < 0.1
