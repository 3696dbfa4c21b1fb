"""Unit tests for merging, neighborhood inference, estimation, detection."""

import math

import numpy as np
import pytest
from scipy.spatial import distance as sdist

from laacoex import hub
from laacoex import macsim as ms
from laacoex import monitor as mon
from laacoex.monitor import MonitorReport, ObservationVector


def ov(t_s, t_e, lid, cls="C1", r=0, h=0):
    return ObservationVector(float(t_s), float(t_e), lid, cls, r, h)


def merged_obs(t_s, t_e, enb="E0", cls="C3", r=0, flags=(("ap0", 0),)):
    return hub.MergedObservation(float(t_s), float(t_e), enb, cls, r,
                                 tuple(flags))


# -- id matching ------------------------------------------------------------

def test_match_ids_worked_example():
    ap1 = MonitorReport("ap1", [
        ov(10, 150, 0), ov(160, 300, 1), ov(320, 500, 1), ov(510, 650, 0)], [])
    ap2 = MonitorReport("ap2", [
        ov(160.1, 300.1, 0), ov(320.1, 500.1, 0),
        ov(550.1, 700.2, 1), ov(720.1, 820.1, 1)], [])
    merged = hub.match_ids([ap1, ap2], eps_us=0.2, duration_tol_us=0.2)
    assert len(merged) == 3
    sizes = sorted(len(v) for v in merged.values())
    assert sizes == [2, 2, 2]
    # the shared transmitter's records carry both monitors' flags
    shared = [v for v in merged.values()
              if all(len(o.h_flags) == 2 for o in v)]
    assert len(shared) == 1
    ts = [o.t_s_us for o in shared[0]]
    assert ts == [160, 320]


def test_match_ids_identical_reports_full_merge():
    obs = [ov(1000 * k, 1000 * k + 140, 0) for k in range(5)]
    obs_b = [ov(o.t_s_us + 0.1, o.t_e_us + 0.1, 3) for o in obs]
    merged = hub.match_ids([MonitorReport("a", obs, []),
                            MonitorReport("b", obs_b, [])], eps_us=0.2)
    assert len(merged) == 1
    records = next(iter(merged.values()))
    assert len(records) == 5
    assert all(len(o.h_flags) == 2 for o in records)


def test_match_ids_disjoint_supports_do_not_merge():
    a = [ov(1000 * k, 1000 * k + 140, 0) for k in range(4)]
    b = [ov(1000 * k + 500, 1000 * k + 640, 0) for k in range(4)]
    merged = hub.match_ids([MonitorReport("a", a, []),
                            MonitorReport("b", b, [])], eps_us=0.2)
    assert len(merged) == 2


def test_match_ids_ambiguity_raises():
    # one monitor splits what another sees as a single id
    a = [ov(1000 * k, 1000 * k + 140, 0) for k in range(6)]
    b = ([ov(1000 * k + 0.05, 1000 * k + 140.05, 7) for k in range(3)]
         + [ov(1000 * k + 0.05, 1000 * k + 140.05, 8) for k in range(3, 6)])
    with pytest.raises(hub.AmbiguousIdError):
        hub.match_ids([MonitorReport("a", a, []), MonitorReport("b", b, [])],
                      eps_us=0.2, min_match_fraction=0.8)


def test_match_ids_idempotent():
    ap1 = MonitorReport("ap1", [ov(10, 150, 0), ov(310, 450, 0)], [])
    ap2 = MonitorReport("ap2", [ov(10.1, 150.1, 4), ov(310.1, 450.1, 4)], [])
    merged = hub.match_ids([ap1, ap2], eps_us=0.2)
    (enb_id, records), = merged.items()
    # feed the merged set back as a single report: nothing changes
    again = hub.match_ids([MonitorReport("hub", [
        ov(o.t_s_us, o.t_e_us, 0) for o in records], [])], eps_us=0.2)
    (_, records2), = again.items()
    assert [(o.t_s_us, o.t_e_us) for o in records2] == \
        [(o.t_s_us, o.t_e_us) for o in records]


def test_match_ids_round_reconciliation():
    # a monitor that missed the original reports round 0; the merge keeps
    # the deeper chain
    a = [ov(0, 8000, 0, r=0), ov(10_000, 18_000, 0, r=1)]
    b = [ov(10_000.05, 18_000.05, 2, r=0)]
    merged = hub.match_ids([MonitorReport("a", a, []),
                            MonitorReport("b", b, [])], eps_us=0.2)
    records = next(iter(merged.values()))
    assert records[1].retx_round == 1


# -- neighborhood inference ---------------------------------------------------

def test_neighborhood_aps_from_flags():
    obs = [merged_obs(0, 8000, flags=(("ap0", 0), ("ap1", 1))),
           merged_obs(10_000, 18_000, flags=(("ap0", 0), ("ap1", 1)))]
    graph = hub.infer_enb_neighborhood({"E0": obs})
    assert graph.one_hop_aps("E0") == frozenset({"ap0"})


def test_neighborhood_interleaved_enbs_are_neighbors():
    a = [merged_obs(20_000 * k, 20_000 * k + 8000, "E0") for k in range(20)]
    b = [merged_obs(20_000 * k + 9000, 20_000 * k + 17_000, "E1")
         for k in range(20)]
    graph = hub.infer_enb_neighborhood({"E0": a, "E1": b})
    assert "E1" in graph.one_hop_enbs("E0")
    assert "E0" in graph.one_hop_enbs("E1")


def test_neighborhood_overlapping_enbs_are_hidden():
    a = [merged_obs(20_000 * k, 20_000 * k + 8000, "E0") for k in range(20)]
    b = [merged_obs(20_000 * k + 4000, 20_000 * k + 12_000, "E1")
         for k in range(20)]
    graph = hub.infer_enb_neighborhood({"E0": a, "E1": b}, gamma_int=3)
    assert "E1" not in graph.one_hop_enbs("E0")


def test_neighborhood_boundary_exact_threshold_stays_neighbors():
    a = [merged_obs(20_000 * k, 20_000 * k + 8000, "E0") for k in range(10)]
    # exactly 3 overlapping pairs
    b = [merged_obs(20_000 * k + 4000, 20_000 * k + 12_000, "E1")
         for k in range(3)]
    b += [merged_obs(20_000 * k + 9000, 20_000 * k + 17_000, "E1")
          for k in range(3, 10)]
    graph = hub.infer_enb_neighborhood({"E0": a, "E1": b}, gamma_int=3)
    assert "E1" in graph.one_hop_enbs("E0")
    graph2 = hub.infer_enb_neighborhood({"E0": a, "E1": b}, gamma_int=2.9)
    assert "E1" not in graph2.one_hop_enbs("E0")


# -- backoff estimation -------------------------------------------------------

EMPTY_GRAPH = hub.NeighborhoodGraph({"E0": frozenset()}, {"E0": frozenset()})


def test_estimate_simple_gap():
    # no intermediates, class C3: gap of 16 + 3*9 + 5*9 = 88 us means 5 slots
    obs = [merged_obs(0, 8000), merged_obs(8088, 16_088)]
    est = hub.estimate_backoff(obs, EMPTY_GRAPH, {}, {"E0": obs})
    assert len(est) == 1
    assert est[0].slots == 5
    assert not est[0].excluded


def test_estimate_two_intermediates_with_truncated_defer():
    # after the frame ending at 8000: two counted slots, a Wi-Fi busy
    # period, a defer cut down to one slot by a second transmitter, then
    # the last three slots; the reconstruction recovers 2 + 0 + 3 = 5
    graph = hub.NeighborhoodGraph({"E0": frozenset({"K"})},
                                  {"E0": frozenset({"E1"})})
    obs = [merged_obs(0, 8000), merged_obs(18_156, 26_156)]
    other = [merged_obs(10_086, 18_086, "E1")]
    activity = {"K": [(8061.0, 10_061.0)]}
    est = hub.estimate_backoff(obs, graph, activity, {"E0": obs, "E1": other})
    assert len(est) == 1
    assert est[0].raw_slots == pytest.approx(5.0, abs=1e-9)
    assert est[0].slots == 5
    assert not est[0].excluded


def test_estimate_overlapping_intermediates_merge():
    # two colliding intermediates register as one busy interval
    graph = hub.NeighborhoodGraph({"E0": frozenset({"K", "L"})},
                                  {"E0": frozenset()})
    activity = {"K": [(8061.0, 10_061.0)], "L": [(8061.0, 10_061.0)]}
    obs = [merged_obs(0, 8000),
           merged_obs(10_061 + 16 + 27 + 3 * 9, 18_131)]
    est = hub.estimate_backoff(obs, graph, activity, {"E0": obs})
    assert est[0].slots == 5  # 2 slots before the freeze, 3 after
    assert not est[0].excluded


def test_estimate_unsaturated_gap_excluded():
    # drawn 3 with window 16, but 50 idle-queue slots inflate the estimate
    t2 = 8000 + 16 + 27 + (3 + 50) * 9
    obs = [merged_obs(0, 8000), merged_obs(t2, t2 + 8000)]
    est = hub.estimate_backoff(obs, EMPTY_GRAPH, {}, {"E0": obs})
    assert est[0].slots == 53
    assert est[0].excluded
    assert est[0].reason == "unsaturated"


def test_estimate_window_from_round():
    # class C3 with round 1 contends from a window of 32
    obs = [merged_obs(0, 8000), merged_obs(8088, 16_088, r=1)]
    est = hub.estimate_backoff(obs, EMPTY_GRAPH, {}, {"E0": obs})
    assert est[0].cw == 32


def test_estimate_negative_policies():
    # gap shorter than the mandatory defer: impossible for a compliant node
    obs = [merged_obs(0, 8000), merged_obs(8010, 16_010)]
    inc = hub.estimate_backoff(obs, EMPTY_GRAPH, {}, {"E0": obs})
    assert inc[0].slots < 0 and not inc[0].excluded
    exc = hub.estimate_backoff(obs, EMPTY_GRAPH, {}, {"E0": obs},
                               negative_policy="exclude")
    assert exc[0].excluded and exc[0].reason == "negative"


def test_estimate_rounding_clamps_small_negatives():
    obs = [merged_obs(0, 8000), merged_obs(8085.5, 16_085.5)]
    est = hub.estimate_backoff(obs, EMPTY_GRAPH, {}, {"E0": obs})
    # raw value sits between -0.5 and 0.5 of an integer; rounds to nearest
    assert est[0].slots == round(est[0].raw_slots)


# -- distributions -------------------------------------------------------------

def make_estimates(slots, cws=None, excluded=None):
    cws = cws or [16] * len(slots)
    excluded = excluded or [False] * len(slots)
    return [hub.BackoffEstimate(i + 1, float(s), s, cw, exc)
            for i, (s, cw, exc) in enumerate(zip(slots, cws, excluded))]


def test_empirical_distribution_counts():
    dist = hub.empirical_distribution(make_estimates([2, 2, 3]))
    assert dist.as_dict() == {2: pytest.approx(2 / 3), 3: pytest.approx(1 / 3)}


def test_empirical_distribution_point_mass():
    dist = hub.empirical_distribution(make_estimates([4, 4, 4, 4]))
    assert dist.as_dict() == {4: 1.0}


def test_empirical_distribution_all_excluded_raises():
    with pytest.raises(hub.InsufficientDataError):
        hub.empirical_distribution(make_estimates([2, 3], excluded=[True, True]))


def test_empirical_concentration_under_uniform_draws():
    rng = np.random.default_rng(1)
    draws = rng.integers(0, 16, size=100_000)
    dist = hub.empirical_distribution(make_estimates(list(draws)))
    assert max(abs(m - 1 / 16) for m in dist.as_dict().values()) < 0.01


def test_expected_distribution_single_window():
    dist = hub.expected_distribution(make_estimates([0, 1, 2], cws=[4, 4, 4]))
    assert dist.as_dict() == {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25}


def test_expected_distribution_mixed_windows():
    dist = hub.expected_distribution(make_estimates([0, 0], cws=[4, 8]))
    d = dist.as_dict()
    for x in range(4):
        assert d[x] == pytest.approx(3 / 16)
    for x in range(4, 8):
        assert d[x] == pytest.approx(1 / 16)


def test_distribution_normalization_guard():
    with pytest.raises(ValueError):
        hub.BackoffDistribution(np.array([0, 1]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        hub.BackoffDistribution(np.array([0, 1]), np.array([1.2, -0.2]))


# -- divergence and verdicts -----------------------------------------------------

def uniform_dist(n):
    return hub.BackoffDistribution(np.arange(n), np.full(n, 1.0 / n))


def test_js_divergence_identity():
    u = uniform_dist(8)
    assert hub.js_divergence(u, u) == 0.0


def test_js_divergence_disjoint_supports():
    a = hub.BackoffDistribution(np.array([0, 1]), np.array([0.5, 0.5]))
    b = hub.BackoffDistribution(np.array([5, 6]), np.array([0.5, 0.5]))
    assert hub.js_divergence(a, b) == pytest.approx(1.0)


def test_js_divergence_uniform4_vs_uniform8():
    got = hub.js_divergence(uniform_dist(4), uniform_dist(8))
    # brute-force oracle on the union support
    p = np.array([0.25, 0.25, 0.25, 0.25, 0, 0, 0, 0])
    q = np.full(8, 0.125)
    oracle = sdist.jensenshannon(p, q, base=2) ** 2
    assert got == pytest.approx(oracle, abs=1e-12)
    assert got == pytest.approx(0.3112781244591328, abs=1e-12)


def test_js_divergence_symmetry_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = rng.dirichlet(np.ones(6))
        b = rng.dirichlet(np.ones(6))
        da = hub.BackoffDistribution(np.arange(6), a)
        db = hub.BackoffDistribution(np.arange(6), b)
        assert hub.js_divergence(da, db) == pytest.approx(
            hub.js_divergence(db, da), abs=1e-12)
        oracle = sdist.jensenshannon(a, b, base=2) ** 2
        assert hub.js_divergence(da, db) == pytest.approx(oracle, abs=1e-10)


def test_verdict_threshold_semantics():
    m = uniform_dist(4)
    w = uniform_dist(8)
    v = hub.render_verdict(m, w, delta=0.1, n_observations=100)
    assert v.misbehaving
    exact = hub.render_verdict(m, w, delta=v.divergence, n_observations=100)
    assert not exact.misbehaving  # strict inequality at the boundary


def test_verdict_monotone_in_delta():
    m = uniform_dist(4)
    w = uniform_dist(8)
    flags = [hub.render_verdict(m, w, d, 10).misbehaving
             for d in np.linspace(0, 1, 21)]
    # once compliant at some threshold, stays compliant for larger ones
    assert flags == sorted(flags, reverse=True)


def test_verdict_insufficient_observations():
    v = hub.render_verdict(uniform_dist(4), uniform_dist(4), 0.1,
                           n_observations=5, min_observations=10)
    assert v is None


# -- end-to-end over simulator traces ---------------------------------------------

def _cluster(policy=None, seed=11, n_events=9000):
    def node(nid, kind="ap", pos=(0, 0), power=20.0, traffic=None, pol=None):
        return ms.NodeConfig(node_id=nid, kind=kind, position=pos,
                             tx_power_dbm=power,
                             traffic_class=ms.class_params("C3"),
                             traffic=traffic or ms.TrafficModel(),
                             policy=pol or ms.MisbehaviorPolicy())
    idle = ms.TrafficModel(kind="idle")
    nodes = [node("enb0", kind="enb", power=30.0, pol=policy),
             node("ap0", pos=(3, 0)), node("ap1", pos=(0, 3)),
             node("watch", pos=(2, 2), traffic=idle)]
    tr = ms.run_sim(ms.Scenario("o", nodes, seed=seed, n_events=n_events))
    reports = [mon.observe_trace(tr, m) for m in ("ap0", "ap1", "watch")]
    return tr, reports


def test_pipeline_oracle_equivalence_small():
    tr, reports = _cluster()
    ev = hub.evaluate_reports(reports)["E0"]
    gt = {e.t_s_us: e for e in tr.events_for("enb0")}
    assert ev.estimates
    for est in ev.estimates:
        assert not est.excluded
        truth = gt[ev.observations[est.index].t_s_us]
        assert est.slots == truth.backoff


def test_pipeline_divergence_separates_misbehavior():
    _, rep_ok = _cluster(seed=21)
    _, rep_bad = _cluster(policy=ms.MisbehaviorPolicy.cw_reduction(8, 0.5),
                          seed=21)
    d_ok = hub.evaluate_reports(rep_ok)["E0"].verdict.divergence
    d_bad = hub.evaluate_reports(rep_bad)["E0"].verdict.divergence
    assert d_bad > 2 * d_ok


def test_pipeline_max_observations_cap():
    _, reports = _cluster()
    capped = hub.evaluate_reports(
        reports, hub.HubConfig(max_observations=50))["E0"]
    assert len(capped.observations) == 50
