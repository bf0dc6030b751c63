import numpy as np
import pytest

from oracles import naive_glauber_fixed_point
from rfimlab.disorder import field_from_values, sample_field
from rfimlab.glauber import (
    GlauberState,
    domination_violations,
    glauber_at,
    glauber_evolve,
    ground_state_domination,
    plus_fraction_curve,
    plus_probability,
    positive_T_glauber,
)
from rfimlab.groundstate import EnergyModel, ground_state
from rfimlab.lattice import Lattice


def _fixture():
    lat = Lattice(2, 3)
    h = np.full(lat.n, -10.0)
    h[0] = 10.0
    return lat, field_from_values(h, lat)


def test_two_event_fixture():
    lat, fld = _fixture()
    events, state = glauber_evolve(lat, fld, 1.0, 20.0)
    assert [(e.M, e.size) for e in events] == [(-6.0, 1), (12.0, 8)]
    assert events[0].seed_vertex == 0
    assert events[-1].plus_fraction_after == 1.0
    assert (state.spins == 1).all()


@pytest.mark.parametrize("d,N", [(2, 5), (2, 8), (3, 4)])
def test_clean_system_single_event(d, N):
    lat = Lattice(d, N)
    events, _ = glauber_evolve(lat, field_from_values(np.zeros(lat.n), lat), 0.0, 10.0)
    assert [(e.M, e.size) for e in events] == [(2.0 * d, lat.n)]


@pytest.mark.parametrize("boundary", ["torus", "minus", "free"])
def test_fixed_point_matches_naive_loop(boundary):
    wrap = boundary == "torus"
    lat = Lattice(2, 7, wrap=wrap)
    for seed in range(4):
        fld = sample_field(seed, lat)
        for M in (-1.0, 0.5, 1.5, 2.5, 4.0):
            got = glauber_at(lat, fld, 1.0, M, boundary)
            assert np.array_equal(got, naive_glauber_fixed_point(lat, fld.values, 1.0, M, boundary))


def test_event_driven_equals_fixed_point_and_nests():
    lat = Lattice(2, 16)
    fld = sample_field(4, lat)
    state = GlauberState.all_minus(lat, fld, 1.0)
    for M in np.linspace(-2, 5, 15):
        state.evolve(float(M))
        assert np.array_equal(state.spins, glauber_at(lat, fld, 1.0, float(M)))
    with pytest.raises(ValueError):
        state.evolve(0.0)


def test_extremes_of_M():
    lat = Lattice(2, 6)
    fld = sample_field(2, lat)
    eh = 1.3 * fld.values
    assert (glauber_at(lat, fld, 1.3, float((-eh - 4).min()) - 1e-9) == -1).all()
    assert (glauber_at(lat, fld, 1.3, float((-eh + 4).max())) == 1).all()


def test_events_are_ordered_and_consistent():
    lat = Lattice(2, 20)
    fld = sample_field(6, lat)
    events, state = glauber_evolve(lat, fld, 0.8, 3.0)
    Ms = [e.M for e in events]
    assert Ms == sorted(Ms)
    flipped = np.concatenate([e.flipped for e in events])
    assert len(set(flipped.tolist())) == len(flipped) == int((state.spins > 0).sum())
    for e in events:
        # the triggering vertex flips first
        assert e.flipped[0] == e.seed_vertex
    grid = np.linspace(-3, 3, 25)
    curve = plus_fraction_curve(events, lat.n, grid)
    assert (np.diff(curve) >= 0).all()
    for M, frac in zip(grid, curve):
        assert frac == (glauber_at(lat, fld, 0.8, float(M)) > 0).mean()


def test_flip_times_recorded():
    lat, fld = _fixture()
    _, state = glauber_evolve(lat, fld, 1.0, 0.0)
    assert state.flip_M[0] == -6.0 and np.isinf(state.flip_M[1:]).all()


def test_domination_chain():
    for boundary, wrap in (("torus", True), ("minus", False)):
        lat = Lattice(2, 24, wrap=wrap)
        for seed in range(5):
            _, state = glauber_evolve(lat, sample_field(seed, lat), 0.7, 3.0, boundary)
            assert domination_violations(state) == []
    _, state = glauber_evolve(Lattice(2, 5, wrap=False), sample_field(0, Lattice(2, 5, wrap=False)), 1.0, 1.0, "free")
    with pytest.raises(ValueError):
        domination_violations(state)


def test_ground_state_comparison_is_reported():
    lat = Lattice(2, 8)
    fld = sample_field(1, lat)
    gl = glauber_at(lat, fld, 1.0, 0.5)
    gs = ground_state(EnergyModel(lat, fld, 1.0, 0.5))
    rep = ground_state_domination(gl, gs)
    assert rep["dominated"] == (rep["excess_plus"] == 0)
    assert ground_state_domination(gs, gs) == {"dominated": True, "excess_plus": 0}


def test_plus_probability():
    assert plus_probability(0.0, 0.3) == 0.5
    assert plus_probability(10.5, 1.0) >= 1 - 1e-9
    assert plus_probability(-10.5, 1.0) <= 1e-9
    assert plus_probability(1e6, 1e-3) == 1.0
    assert plus_probability(-1e6, 1e-3) == 0.0
    assert abs(plus_probability(1.0, 2.0) - 1 / (1 + np.exp(-1.0))) < 1e-15
    with pytest.raises(ValueError):
        plus_probability(0.0, 0.0)


def test_positive_T_deterministic_and_validated():
    lat = Lattice(2, 8)
    fld = sample_field(3, lat)
    a = positive_T_glauber(lat, fld, 1.0, 0.5, 5.0, -2, 2, seed=9)
    b = positive_T_glauber(lat, fld, 1.0, 0.5, 5.0, -2, 2, seed=9)
    assert a == b
    assert len(a) == 33 and a[0].M == -2 and a[-1].M == 2
    for bad in [dict(T=0.0), dict(alpha=0.0), dict(M_hi=-3.0)]:
        kw = dict(T=0.5, alpha=1.0, M_lo=-2.0, M_hi=2.0)
        kw.update(bad)
        with pytest.raises(ValueError):
            positive_T_glauber(lat, fld, 1.0, seed=0, **kw)


def test_positive_T_low_temperature_tracks_zero_T_extremes():
    lat = Lattice(2, 8)
    fld = sample_field(3, lat)
    out = positive_T_glauber(lat, fld, 1.0, 0.01, 50.0, -8, 8, seed=1, grid=[-8.0, -6.0, 8.0])
    assert out[1].plus_fraction == 0.0
    assert out[2].plus_fraction == 1.0


def test_positive_T_magnetization_trend():
    lat = Lattice(2, 16)
    grid = np.linspace(-4, 4, 9)
    mags = np.array(
        [
            [s.magnetization for s in positive_T_glauber(lat, sample_field(seed, lat), 1.0, 0.5, 50.0, -4, 4, seed, grid)]
            for seed in range(20)
        ]
    )
    mean = mags.mean(axis=0)
    err = mags.std(axis=0, ddof=1) / np.sqrt(len(mags))
    allowance = 3 * np.sqrt(err[1:] ** 2 + err[:-1] ** 2) + 1e-12
    assert (np.diff(mean) >= -allowance).all()
    assert mean[0] < -0.9 and mean[-1] > 0.9
