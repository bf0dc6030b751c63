import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_bootstrap, pairwise_diameter
from rfimlab.bootstrap import (
    CLOSED,
    EMPTY,
    OPEN,
    PHASE_COLUMNS,
    BPRule,
    SiteConfig,
    bp_final,
    bp_final_boxed,
    bp_final_synchronous,
    cluster_stats,
    covering_schedule,
    phase_scan,
    q_from_law,
    sample_sites,
    spans,
    u_monitor,
    u_statistic,
    u_values,
)
from rfimlab.lattice import Lattice, label_components


def _grid_config(rows):
    """Build a SiteConfig from strings: '.' empty, 'o' open, 'x' closed."""
    code = {".": EMPTY, "o": OPEN, "x": CLOSED}
    arr = np.array([[code[c] for c in r] for r in rows], dtype=np.int8)
    lat = Lattice.rect(arr.shape)
    return lat, SiteConfig.from_state(lat, arr.ravel())


def test_nothing_open_stays_put():
    lat, cfg = _grid_config(["...", ".x.", "..."])
    assert bp_final(lat, cfg, BPRule(2)) == cfg


def test_diagonal_fills_square():
    lat, cfg = _grid_config(["o..", ".o.", "..o"])
    final, trace = bp_final(lat, cfg, BPRule(2), trace=True)
    assert final.open.all()
    assert final.initial_open.sum() == 3
    assert u_values(trace).tolist() == [6, 5, 5, 4, 4, 4, 4]
    stats = cluster_stats(final)
    assert len(stats) == 1 and stats[0].diameter == 2 and stats[0].initial_count == 3


def test_closed_site_and_variant():
    lat, cfg = _grid_config(["o..", "xo.", "..o"])
    final = bp_final(lat, cfg, BPRule(2))
    grid = final.state.reshape(3, 3)
    assert grid[1, 0] == CLOSED
    # the closed site shields (2, 0), which only ever sees one open neighbour
    assert grid[2, 0] == EMPTY
    assert final.open.sum() == 7
    assert sum(final.open[lat.index(nb)] for nb in lat.neighbors((1, 0))) == 2
    assert np.array_equal(final.state, naive_bootstrap(lat, cfg.state, 2))
    assert bp_final(lat, cfg, BPRule(2, closed_flippable_at=3)) == final
    assert bp_final(lat, cfg, BPRule(2, closed_flippable_at=2)).open.all()


def test_u_merge_with_equality():
    lat, cfg = _grid_config(["...", "o.o", "..."])
    final, trace = bp_final(lat, cfg, BPRule(2), trace=True)
    assert u_values(trace).tolist() == [4, 4]
    assert u_monitor(trace)
    assert final.open.sum() == 3


def test_u_needs_trace():
    with pytest.raises(ValueError):
        u_values(None)
    _, trace = bp_final(Lattice(2, 4), SiteConfig.from_state(Lattice(2, 4), np.zeros(16)), BPRule(2), trace=True)
    with pytest.raises(ValueError):
        u_values(trace)


def test_rule_validation():
    with pytest.raises(ValueError):
        BPRule(0)
    with pytest.raises(ValueError):
        BPRule(2, closed_flippable_at=0)
    lat = Lattice(2, 4, wrap=False)
    cfg = sample_sites(0, lat, 0.1, 0.0)
    with pytest.raises(ValueError):
        bp_final(lat, cfg, BPRule(3, modified=True))
    with pytest.raises(ValueError):
        bp_final(lat, cfg, BPRule(5))
    assert BPRule(2, modified=True).describe()["direction_counting"] == "axes"


def test_site_config_validation():
    lat = Lattice(2, 3)
    with pytest.raises(ValueError):
        SiteConfig(lat, np.zeros(9), np.ones(9, bool))
    with pytest.raises(ValueError):
        SiteConfig(lat, np.zeros(8), np.zeros(8, bool))
    with pytest.raises(ValueError):
        sample_sites(0, lat, 0.7, 0.5)


def test_isolated_singleton_stats():
    lat, cfg = _grid_config([".....", "..o..", "....."])
    (s,) = cluster_stats(bp_final(lat, cfg, BPRule(2)))
    assert (s.size, s.diameter, s.initial_count) == (1, 0, 1)
    assert s.satisfies_seed_bound


def test_modified_rule_counts_axes():
    # two open neighbours on the same axis give one direction only
    lat, cfg = _grid_config(["...", "o.o", "..."])
    assert bp_final(lat, cfg, BPRule(2, modified=True)).open.sum() == 2
    lat, cfg = _grid_config([".o.", "o..", "..."])
    assert bp_final(lat, cfg, BPRule(2, modified=True)).open[lat.index((1, 1))]


def test_spans():
    lat, cfg = _grid_config(["o..", "o..", "o.."])
    assert spans(cfg)
    lat, cfg = _grid_config(["o..", "o..", "..."])
    assert not spans(cfg)
    lat, cfg = _grid_config(["...", "...", "..."])
    assert not spans(cfg)


RULES_2D = [BPRule(2), BPRule(3), BPRule(2, modified=True), BPRule(2, closed_flippable_at=3), BPRule(1)]


@settings(max_examples=80, deadline=None)
@given(
    st.integers(0, 2**40),
    st.sampled_from(RULES_2D),
    st.floats(0.0, 0.5),
    st.floats(0.0, 0.3),
    st.booleans(),
)
def test_queue_equals_synchronous_and_naive(seed, rule, p, q, wrap):
    lat = Lattice(2, 7, wrap=wrap)
    cfg = sample_sites(seed, lat, p, q)
    a = bp_final(lat, cfg, rule)
    assert a == bp_final_synchronous(lat, cfg, rule)
    ref = naive_bootstrap(lat, cfg.state, rule.threshold, rule.modified, rule.closed_flippable_at)
    assert np.array_equal(a.state, ref)
    # the result is a fixed point
    assert bp_final(lat, a, rule).state.tolist() == a.state.tolist()


def test_naive_agreement_in_3d():
    lat = Lattice(3, 5, wrap=False)
    for seed in range(10):
        cfg = sample_sites(seed, lat, 0.25, 0.05)
        for rule in (BPRule(2), BPRule(3), BPRule(3, modified=True), BPRule(3, closed_flippable_at=4)):
            ref = naive_bootstrap(lat, cfg.state, rule.threshold, rule.modified, rule.closed_flippable_at)
            assert np.array_equal(bp_final(lat, cfg, rule).state, ref)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**40), st.sampled_from(RULES_2D[:4]), st.floats(0.02, 0.3), st.floats(0.0, 0.1))
def test_u_monotone_seed_bound_and_boxes(seed, rule, p, q):
    lat = Lattice(2, 20, wrap=False)
    cfg = sample_sites(seed, lat, p, q)
    final, trace = bp_final(lat, cfg, rule, trace=True)
    U = u_values(trace)
    assert (np.diff(U) <= 0).all()
    assert U[0] == u_statistic(cfg) and U[-1] == u_statistic(final)
    assert all(s.satisfies_seed_bound for s in cluster_stats(final))
    assert bp_final_boxed(lat, cfg, rule, [2, 5]) == final
    assert bp_final_boxed(lat, cfg, rule, [19]) == final


def test_u_can_increase_at_threshold_one():
    lat, cfg = _grid_config(["o...."])
    final, trace = bp_final(lat, cfg, BPRule(1), trace=True)
    assert not u_monitor(trace)
    assert not cluster_stats(final)[0].satisfies_seed_bound


def test_cluster_diameters_vs_pairwise_scan():
    for wrap in (False, True):
        lat = Lattice(2, 12, wrap=wrap)
        final = bp_final(lat, sample_sites(5, lat, 0.15, 0.02), BPRule(2))
        labels, _ = label_components(lat, final.open)
        for s in cluster_stats(final):
            comp = labels == s.label
            assert s.diameter == pairwise_diameter(lat, comp)
            assert s.size == comp.sum()
            assert s.initial_count == (comp & final.initial_open).sum()


def test_monotone_coupling():
    lat = Lattice(2, 24, wrap=False)
    for seed in range(10):
        for rule in (BPRule(2), BPRule(2, modified=True)):
            for (p1, q1), (p2, q2) in [((0.05, 0.02), (0.08, 0.02)), ((0.05, 0.02), (0.05, 0.005))]:
                small = bp_final(lat, sample_sites(seed, lat, p1, q1), rule).open
                big = bp_final(lat, sample_sites(seed, lat, p2, q2), rule).open
                assert (small <= big).all()


def test_covering_schedule():
    lat = Lattice(2, 10, wrap=False)
    assert covering_schedule(lat, [2, 4]) == [2, 4, 9]
    assert covering_schedule(lat, [3, 12]) == [3, 12]
    with pytest.raises(ValueError):
        covering_schedule(lat, [4, 2])
    with pytest.raises(ValueError):
        bp_final_boxed(Lattice(2, 5), sample_sites(0, Lattice(2, 5), 0.1, 0), BPRule(2), [2])


def test_phase_scan_rows():
    rows = phase_scan(2, [0.1, 0.2], "power", 1.0, 16, range(3), config_hash="h")
    assert [r["p"] for r in rows] == [0.1, 0.2]
    assert rows[0]["q"] == q_from_law(0.1, 2, "power", 1.0)
    assert set(rows[0]) == set(PHASE_COLUMNS)
    assert rows[0]["seeds"] == "0..2" and rows[0]["trials"] == 3
    assert rows[0]["density"] <= rows[1]["density"]
    with pytest.raises(ValueError):
        q_from_law(0.1, 2, "cubic", 1.0)


def test_phase_scan_pure_bootstrap_fills_large_box():
    (row,) = phase_scan(2, [0.05], "fixed", 0.0, 512, [0, 1])
    assert row["density"] > 0.99 and row["spanning_freq"] == 1.0


def test_phase_scan_pollution_lowers_density():
    rows_hi = phase_scan(2, [0.05], "fixed", 0.02, 128, range(20))
    rows_lo = phase_scan(2, [0.05], "fixed", 0.0025, 128, range(20))
    assert rows_hi[0]["density"] <= rows_lo[0]["density"]
