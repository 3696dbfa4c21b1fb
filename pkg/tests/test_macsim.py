"""Unit tests for the channel-access simulator."""

import numpy as np
import pytest

from laacoex import macsim as ms


def node(nid, kind="ap", cls="C3", policy=None, traffic=None, pos=(0.0, 0.0),
         power=20.0, cca=ms.COMPLIANT_CCA_DBM, frame_us=None, mcop_ms=None):
    return ms.NodeConfig(
        node_id=nid, kind=kind, position=pos, tx_power_dbm=power,
        cca_threshold_dbm=cca, traffic_class=ms.class_params(cls, mcop_ms),
        traffic=traffic or ms.TrafficModel(),
        policy=policy or ms.MisbehaviorPolicy(), frame_duration_us=frame_us)


def close_cluster(n_aps, enb_policy=None, enb_cls="C3", ap_cls="C3"):
    nodes = [node("enb0", kind="enb", pos=(0.0, 0.0), power=30.0, cls=enb_cls,
                  policy=enb_policy)]
    nodes += [node(f"ap{i}", pos=(2.0 + i, 0.0), cls=ap_cls) for i in range(n_aps)]
    return nodes


def test_class_table_values():
    for cid, p, qmin, qmax, mcop in [("C1", 1, 4, 8, 2000), ("C2", 1, 8, 16, 3000),
                                     ("C3", 3, 16, 64, 8000), ("C4", 7, 16, 1024, 8000)]:
        c = ms.class_params(cid)
        assert (c.defer_slots, c.cw_min, c.cw_max, c.mcop_us) == (p, qmin, qmax, mcop)
    assert ms.class_params("C3", 10).mcop_us == 10_000
    with pytest.raises(ms.ValidationError):
        ms.class_params("C1", 10)


def test_policy_validation():
    with pytest.raises(ms.ValidationError):
        ms.MisbehaviorPolicy.cw_reduction(0, 0.5)
    with pytest.raises(ms.ValidationError):
        ms.MisbehaviorPolicy.cw_reduction(8, 1.5)
    with pytest.raises(ms.ValidationError):
        ms.TrafficModel(kind="poisson", rate_per_s=0.0)


def test_interference_graph_symmetric_pair():
    a = node("a", pos=(0.0, 0.0))
    b = node("b", pos=(10.0, 0.0))
    g = ms.interference_graph([a, b])
    assert g.edge("a", "b") and g.edge("b", "a")


def test_interference_graph_power_asymmetry():
    # 30 dBm reaches 400 m at the -73 dBm threshold, 20 dBm does not
    enb = node("enb", kind="enb", pos=(0.0, 0.0), power=30.0)
    ap = node("ap", pos=(400.0, 0.0), power=20.0)
    g = ms.interference_graph([enb, ap])
    assert g.edge("enb", "ap")          # the AP hears the loud eNB
    assert not g.edge("ap", "enb")      # the eNB cannot hear the AP
    assert "ap" not in g.audible_to("enb")


def test_interference_graph_lone_node():
    g = ms.interference_graph([node("x")])
    assert g.audible_to("x") == frozenset()


def test_two_identical_nodes_split_evenly():
    sc = ms.Scenario("pair", [node("a", pos=(0, 0)), node("b", pos=(3, 0))],
                     seed=1, n_events=100_000)
    tr = ms.run_sim(sc)
    assert ms.attempt_rate(tr, "a") == pytest.approx(0.5, abs=0.02)
    assert ms.attempt_rate(tr, "b") == pytest.approx(0.5, abs=0.02)


def test_attempt_rates_sum_to_one():
    sc = ms.Scenario("trio", close_cluster(2), seed=5, n_events=5000)
    tr = ms.run_sim(sc)
    total = sum(ms.attempt_rate(tr, nid) for nid in tr.nodes)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_single_node_saturated():
    sc = ms.Scenario("solo", [node("x")], seed=2, n_events=300)
    tr = ms.run_sim(sc)
    assert ms.attempt_rate(tr, "x") == 1.0
    assert not any(e.collided for e in tr.events)


def test_empty_trace_metric_error():
    sc = ms.Scenario("solo", [node("x")], seed=2, n_events=10)
    tr = ms.run_sim(sc)
    tr.events = []
    with pytest.raises(ms.EmptyTraceError):
        ms.attempt_rate(tr, "x")


def test_determinism_bit_identical():
    sc = ms.Scenario("det", close_cluster(3), seed=42, n_events=4000)
    t1 = ms.run_sim(sc)
    t2 = ms.run_sim(sc)
    assert t1.events == t2.events
    t3 = ms.run_sim(sc, seed=43)
    assert t3.events != t1.events


def test_no_overlap_between_mutually_audible_nodes():
    sc = ms.Scenario("overlap", close_cluster(3), seed=7, n_events=6000)
    tr = ms.run_sim(sc)
    by_node = {n: tr.events_for(n) for n in tr.nodes}
    for a in tr.nodes:
        for b in tr.nodes:
            if a >= b:
                continue
            if not (tr.graph.edge(a, b) and tr.graph.edge(b, a)):
                continue
            for ea in by_node[a]:
                for eb in by_node[b]:
                    if ea.t_s_us < eb.t_e_us and eb.t_s_us < ea.t_e_us:
                        # overlap allowed only as a same-instant collision
                        assert ea.t_s_us == eb.t_s_us
                        assert ea.collided and eb.collided


def test_hidden_nodes_overlap_freely():
    far = [node("a", pos=(0, 0)), node("b", pos=(5000.0, 0.0))]
    sc = ms.Scenario("hidden", far, seed=3, n_events=2000)
    tr = ms.run_sim(sc)
    assert not any(e.collided for e in tr.events)
    ev_a = tr.events_for("a")
    ev_b = tr.events_for("b")
    overlaps = sum(1 for ea in ev_a[:200] for eb in ev_b[:200]
                   if ea.t_s_us < eb.t_e_us and eb.t_s_us < ea.t_e_us)
    assert overlaps > 0


def test_cw_ladder_matches_retx_round():
    sc = ms.Scenario("ladder", close_cluster(4), seed=9, n_events=30_000)
    tr = ms.run_sim(sc)
    cls = ms.class_params("C3")
    for e in tr.events:
        expected = min(2 ** e.retx_round * cls.cw_min, cls.cw_max)
        assert e.cw == expected
        assert 0 <= e.backoff < e.cw


def test_no_cw_growth_pins_window():
    sc = ms.Scenario("pin", close_cluster(
        4, enb_policy=ms.MisbehaviorPolicy.no_cw_growth()), seed=9, n_events=30_000)
    tr = ms.run_sim(sc)
    enb_events = tr.events_for("enb0")
    assert any(e.retx_round > 0 for e in enb_events)
    assert all(e.cw == 16 for e in enb_events)


def test_cw_reduction_mixes_windows():
    pol = ms.MisbehaviorPolicy.cw_reduction(8, 0.5)
    sc = ms.Scenario("mix", close_cluster(2, enb_policy=pol), seed=11, n_events=30_000)
    tr = ms.run_sim(sc)
    enb_first = [e for e in tr.events_for("enb0") if e.retx_round == 0]
    qs = {e.cw for e in enb_first}
    assert 8 in qs and 16 in qs
    frac_reduced = np.mean([e.cw == 8 for e in enb_first])
    assert 0.4 < frac_reduced < 0.6


def test_defer_reduction_changes_timing():
    # lone node: inter-transmission gap is defer plus backoff slots exactly
    for p_slots, policy in [(3, None), (1, ms.MisbehaviorPolicy.defer_reduction(1))]:
        sc = ms.Scenario("defer", [node("e", kind="enb", policy=policy)],
                         seed=4, n_events=200)
        tr = ms.run_sim(sc)
        ev = tr.events
        for prev, cur in zip(ev, ev[1:]):
            gap = cur.t_s_us - prev.t_e_us
            assert gap == ms.T_DEF_US + (p_slots + cur.backoff) * ms.T_SLOT_US


def test_retx_round_resets_after_success():
    sc = ms.Scenario("retx", close_cluster(4), seed=13, n_events=20_000)
    tr = ms.run_sim(sc)
    last_round = {}
    for e in tr.events:
        prev = last_round.get(e.node_id)
        if prev is not None:
            if prev[1]:  # previous attempt collided
                assert e.retx_round == prev[0] + 1
            else:
                assert e.retx_round == 0
        last_round[e.node_id] = (e.retx_round, e.collided)


def test_retransmission_keeps_frame_id():
    sc = ms.Scenario("frames", close_cluster(4), seed=17, n_events=20_000)
    tr = ms.run_sim(sc)
    for nid in tr.nodes:
        ev = tr.events_for(nid)
        for prev, cur in zip(ev, ev[1:]):
            if prev.collided:
                assert cur.frame_id == prev.frame_id
            else:
                assert cur.frame_id != prev.frame_id


def test_saturated_node_eta_zero():
    sc = ms.Scenario("sat", close_cluster(1), seed=3, n_events=500)
    tr = ms.run_sim(sc)
    assert ms.saturation_level(tr, "ap0") == 0.0


def test_tiny_arrival_rate_eta_near_one():
    lam = ms.TrafficModel(kind="poisson", rate_per_s=1.0)
    nodes = [node("e", kind="enb", traffic=lam), node("a", pos=(3, 0))]
    sc = ms.Scenario("unsat", nodes, seed=8, n_events=4000)
    tr = ms.run_sim(sc)
    assert ms.saturation_level(tr, "e") > 0.9
    assert ms.saturation_level(tr, "a") == 0.0


def test_poisson_queue_gap_recorded():
    lam = ms.TrafficModel(kind="poisson", rate_per_s=20.0)
    nodes = [node("e", kind="enb", traffic=lam), node("a", pos=(3, 0))]
    sc = ms.Scenario("gap", nodes, seed=8, n_events=3000)
    tr = ms.run_sim(sc)
    gaps = [e.queue_gap_us for e in tr.events_for("e") if e.retx_round == 0]
    assert any(g > 0 for g in gaps)


def test_idle_node_never_transmits():
    nodes = [node("mon", traffic=ms.TrafficModel(kind="idle")), node("a", pos=(3, 0))]
    sc = ms.Scenario("idle", nodes, seed=8, n_events=500)
    tr = ms.run_sim(sc)
    assert not tr.events_for("mon")


def test_ground_truth_channel_views():
    nodes = [node("a", pos=(0, 0)), node("b", pos=(5, 0)),
             node("far", pos=(5000, 0))]
    sc = ms.Scenario("gt", nodes, seed=21, n_events=900)
    tr = ms.run_sim(sc)
    e = next(ev for ev in tr.events if ev.node_id == "a")
    t_mid = (e.t_s_us + e.t_e_us) // 2
    busy, active = ms.ground_truth_channel(tr, t_mid, "b")
    assert busy and "a" in active
    # the hidden observer does not sense it
    busy_far, active_far = ms.ground_truth_channel(tr, t_mid, "far")
    assert "a" not in active_far
    # the transmitter's own frame is excluded from its sensed set
    busy_self, active_self = ms.ground_truth_channel(tr, t_mid, "a")
    assert "a" not in active_self


def test_cca_inflation_ignores_mid_range_ap():
    # AP at 160 m: received at the eNB around -70.5 dBm, between -73 and -68
    enb = node("enb0", kind="enb", pos=(0, 0), power=30.0,
               policy=ms.MisbehaviorPolicy.cca_inflation(-68.0))
    ap = node("ap0", pos=(160.0, 0.0), power=20.0)
    g = ms.interference_graph([enb, ap])
    assert not g.edge("ap0", "enb0")  # eNB disregards the AP
    assert g.edge("enb0", "ap0")      # the AP still hears the eNB
    compliant = node("enb1", kind="enb", pos=(0, 0), power=30.0)
    g2 = ms.interference_graph([compliant, ap])
    assert g2.edge("ap0", "enb1")


def test_ignored_transmissions_metric():
    enb = node("enb0", kind="enb", pos=(0, 0), power=30.0,
               policy=ms.MisbehaviorPolicy.cca_inflation(-68.0))
    aps = [node(f"ap{i}", pos=(160.0 + i, 0.0), power=20.0) for i in range(2)]
    sc = ms.Scenario("cca", [enb] + aps, seed=5, n_events=4000)
    tr = ms.run_sim(sc)
    assert ms.ignored_transmissions(tr, "enb0") > 0.0
    # a compliant eNB in the same spot ignores nothing
    sc2 = ms.Scenario("cca2", [node("enb0", kind="enb", pos=(0, 0), power=30.0)] + aps,
                      seed=5, n_events=4000)
    tr2 = ms.run_sim(sc2)
    assert ms.ignored_transmissions(tr2, "enb0") == 0.0


def test_trace_roundtrip(tmp_path):
    lam = ms.TrafficModel(kind="poisson", rate_per_s=50.0)
    nodes = close_cluster(2, enb_policy=ms.MisbehaviorPolicy.cw_reduction(8, 0.5))
    nodes[1] = node("ap0", pos=(2, 0), traffic=lam)
    sc = ms.Scenario("rt", nodes, seed=33, n_events=800)
    tr = ms.run_sim(sc)
    path = tmp_path / "trace.tsv"
    ms.write_trace(tr, path)
    back = ms.read_trace(path)
    assert back.events == tr.events
    assert set(back.nodes) == set(tr.nodes)
    assert back.nodes["enb0"].policy == tr.nodes["enb0"].policy
    assert back.queue_empty_us == tr.queue_empty_us
    # byte-stable export
    path2 = tmp_path / "trace2.tsv"
    ms.write_trace(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_attempt_rate_degradation_under_always_reduce():
    base = ms.Scenario("b", close_cluster(5), seed=3, n_events=40_000)
    mis = ms.Scenario("m", close_cluster(
        5, enb_policy=ms.MisbehaviorPolicy.cw_reduction(8, 0.0)), seed=3,
        n_events=40_000)
    tb = ms.run_sim(base)
    tm = ms.run_sim(mis)
    drop = 1 - ms.attempt_rate(tm, "ap0") / ms.attempt_rate(tb, "ap0")
    assert drop > 0.2
