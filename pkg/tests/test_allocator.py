import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from comp_vr import sdp
from comp_vr.allocator import (LinkAgent, audit_downlink, audit_uplink, candidate_groups, downlink_evaluate,
                               knn_candidates, order_preserving_candidates, penalized, quantize_downlink,
                               quantize_uplink, select_downlink_action, select_uplink_action,
                               uplink_power_closed_form, uplink_reward)
from comp_vr.config import SimConfig
from comp_vr.net_model import ChannelRealization

probs_strategy = arrays(float, st.integers(1, 6), elements=st.floats(0.01, 0.99))


def make_channel(rng, cfg, n, interferers=None, margin=10.0):
    """Random CoMP channels scaled so each user alone needs about cap/margin."""
    j, k = cfg.n_aps, cfg.n_elements
    h = (rng.standard_normal((n, j, k)) + 1j * rng.standard_normal((n, j, k))) / np.sqrt(2 * j * k)
    cap = cfg.ap_max_power - cfg.ap_circuit_power
    h *= math.sqrt(cfg.sinr_target * cfg.dl_noise_power * margin / cap)
    inter = np.zeros((n, n), dtype=bool) if interferers is None else np.asarray(interferers, dtype=bool)
    dist = np.full((n, j), 20.0)
    return ChannelRealization(dist ** -cfg.ul_fading_exponent, h, np.zeros((n, j)), np.ones((n, j)), inter, dist)


def caps_of(cfg):
    return np.full(cfg.n_aps, cfg.ap_max_power - cfg.ap_circuit_power)


# ---------------------------------------------------------------------------
# quantizers


def test_uplink_quantizer_hand_case():
    gs = quantize_uplink(np.array([[0.7, 0.2], [0.4, 0.6]]))
    assert len(gs) == 2
    np.testing.assert_array_equal(gs.thresholds, [0.6, 0.7])
    np.testing.assert_array_equal(gs.groups[0], [[1, 0], [0, 1]])
    np.testing.assert_array_equal(gs.groups[1], [[1, 0], [0, 0]])


def test_uplink_quantizer_uniform_scores():
    p = np.full((3, 3), 0.1)
    p[[0, 1, 2], [2, 0, 1]] = 0.9
    gs = quantize_uplink(p)
    np.testing.assert_array_equal(gs.groups[0], (p == 0.9).astype(int))
    for g in gs.groups[1:]:
        assert g.sum() == 0


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=st.floats(0.01, 0.99)))
def test_uplink_groups_one_ap_per_user(p):
    gs = quantize_uplink(p)
    assert len(gs) == p.shape[0]
    for g in gs.groups:
        assert np.all(g.sum(axis=1) <= 1)
        rows = np.flatnonzero(g.sum(axis=1))
        np.testing.assert_array_equal(g[rows].argmax(axis=1), p[rows].argmax(axis=1))


def test_downlink_quantizer_hand_case():
    gs = quantize_downlink(np.array([0.3, 0.8, 0.6]))
    got = [g.tolist() for g in gs.groups]
    assert got == [[0, 1, 1], [0, 1, 1], [0, 1, 0]]


def test_downlink_quantizer_edges():
    gs = quantize_downlink(np.array([0.1, 0.2, 0.4]))
    assert gs.groups[0].sum() == 0
    # no group is thresholded at the maximum, so none is forced empty by it
    assert len(gs) == 3 and gs.groups[-1].tolist() == [0, 0, 1]


def test_order_preserving_hand_table():
    p = np.array([0.2, 0.6, 0.45])
    got = [c.tolist() for c in order_preserving_candidates(p, 4)]
    assert got == [[0, 1, 0], [0, 1, 1], [0, 0, 0], [1, 1, 1]]


def test_order_preserving_equal_coordinates():
    for c in order_preserving_candidates(np.full(4, 0.3), 4):
        assert c.sum() in (0, 4)


@settings(max_examples=100, deadline=None)
@given(probs_strategy, st.integers(1, 8))
def test_order_preserving_keeps_ordering(p, count):
    for c in order_preserving_candidates(p, count):
        for i, k in itertools.permutations(range(p.size), 2):
            if p[i] > p[k]:
                assert c[i] >= c[k]


@settings(max_examples=100, deadline=None)
@given(probs_strategy, st.integers(1, 8))
def test_knn_matches_enumeration(p, count):
    got = knn_candidates(p, count)
    verts = [np.array(v) for v in itertools.product([0, 1], repeat=p.size)]
    dist = sorted(float(np.sum((v - p) ** 2)) for v in verts)
    want = dist[:min(count, len(verts))]
    np.testing.assert_allclose([float(np.sum((c - p) ** 2)) for c in got], want, rtol=1e-12, atol=1e-12)
    assert len({c.tobytes() for c in got}) == len(got)


def test_knn_single_candidate_is_rounding():
    p = np.array([0.1, 0.51, 0.9, 0.49])
    (only,) = knn_candidates(p, 1)
    np.testing.assert_array_equal(only, [0, 1, 1, 0])


def test_candidate_groups_reshape_flat_quantizers():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.01, 0.99, 12)
    for q in ("droo", "knn"):
        gs = candidate_groups(p, q, (4, 3), 4)
        assert len(gs) == 4 and all(g.shape == (4, 3) for g in gs.groups)
    with pytest.raises(ValueError):
        candidate_groups(p, "nope", (4, 3), 4)


# ---------------------------------------------------------------------------
# uplink power and reward


def test_uplink_power_examples(cfg):
    cfg16 = SimConfig(n_users=16)
    assoc = np.zeros((16, 1), dtype=int)
    assoc[0, 0] = 1
    near = np.full((16, 1), 20.0 ** -5)
    far = np.full((16, 1), 100.0 ** -5)
    assert uplink_power_closed_form(np.zeros((16, 1), dtype=int), near, cfg16).sum() == 0
    assert uplink_power_closed_form(assoc, far, cfg16)[0] == 0.0
    assert uplink_power_closed_form(assoc, near, cfg16)[0] == pytest.approx(5.3207e-4, rel=1e-4)


def test_uplink_reward_examples(cfg):
    n, j = cfg.n_users, cfg.n_aps
    pathloss = np.full((n, j), 20.0 ** -5)
    assert uplink_reward(np.zeros((n, j), dtype=int), np.zeros(n), pathloss, cfg) == 0.0
    assoc = np.zeros((n, j), dtype=int)
    assoc[0, 0] = 1
    p = uplink_power_closed_form(assoc, pathloss, cfg)
    r = uplink_reward(assoc, p, pathloss, cfg)
    assert r == pytest.approx(1 / n - (p[0] + cfg.hmd_circuit_power) / cfg.hmd_max_power, rel=1e-12)
    # as the requirement vanishes the reward approaches 1/N - p^c / p~
    close = np.full((n, j), 1e-3 ** -5)
    p = uplink_power_closed_form(assoc, close, cfg)
    assert uplink_reward(assoc, p, close, cfg) == pytest.approx(1 / n - cfg.hmd_circuit_power / cfg.hmd_max_power,
                                                                abs=1e-12)


def test_uplink_reward_against_accumulation():
    cfg = SimConfig(n_users=16)
    rng = np.random.default_rng(1)
    pathloss = rng.uniform(10.0, 90.0, (16, 3)) ** -5
    assoc = np.zeros((16, 3), dtype=int)
    assoc[np.arange(16), rng.integers(0, 3, 16)] = 1
    p = uplink_power_closed_form(assoc, pathloss, cfg)
    total = 0.0
    noise = cfg.noise_psd * cfg.ul_bandwidth / 16
    for i in range(16):
        for j in range(3):
            snr = p[i] * cfg.rayleigh_gain * pathloss[i, j] / noise
            if assoc[i, j] and snr >= cfg.ul_snr_threshold * (1 - 1e-9):
                total += 1 / 16 - (p[i] + cfg.hmd_circuit_power) / cfg.hmd_max_power
    assert uplink_reward(assoc, p, pathloss, cfg) == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_select_single_group_returned(cfg):
    g = np.zeros((cfg.n_users, cfg.n_aps), dtype=int)
    out = select_uplink_action([g], np.ones((cfg.n_users, cfg.n_aps)), cfg)
    assert out.index == 0 and out.assoc is not None


def test_select_matches_enumeration_n4():
    cfg = SimConfig(n_users=4)
    rng = np.random.default_rng(2)
    pathloss = rng.uniform(10.0, 60.0, (4, 3)) ** -5
    # every single-AP-per-user action
    rows = [np.eye(3, dtype=int)[k] if k < 3 else np.zeros(3, dtype=int) for k in range(4)]
    actions = [np.array(c) for c in itertools.product(rows, repeat=4)]
    best = max(uplink_reward(a, uplink_power_closed_form(a, pathloss, cfg), pathloss, cfg) for a in actions)
    out = select_uplink_action(actions, pathloss, cfg)
    assert out.reward == pytest.approx(best, abs=1e-15)
    assert np.all(out.reward >= out.rewards)
    assert out.index == int(np.flatnonzero(out.rewards == out.rewards.max())[0])


def test_audit_uplink_flags(cfg):
    n, j = cfg.n_users, cfg.n_aps
    pathloss = np.full((n, j), 20.0 ** -5)
    a = np.zeros((n, j), dtype=int)
    a[: cfg.decode_capacity + 1, 0] = 1
    p = uplink_power_closed_form(a, pathloss, cfg)
    flags = audit_uplink(a, p, pathloss, cfg)
    assert not flags["ul_capacity"] and flags["ul_decode"] and not flags["ul_ok"]
    a2 = np.zeros((n, j), dtype=int)
    a2[0, :2] = 1
    assert not audit_uplink(a2, uplink_power_closed_form(a2, pathloss, cfg), pathloss, cfg)["ul_single_ap"]
    far = np.full((n, j), 100.0 ** -5)
    a3 = np.zeros((n, j), dtype=int)
    a3[0, 0] = 1
    assert not audit_uplink(a3, uplink_power_closed_form(a3, far, cfg), far, cfg)["ul_decode"]


def test_penalty():
    assert penalized(0.3, -0.2, 10.0) == pytest.approx(-1.7)
    assert penalized(0.0, 1.0, 10.0) == -10.0


# ---------------------------------------------------------------------------
# downlink


def test_downlink_empty_set(cfg):
    rng = np.random.default_rng(3)
    ch = make_channel(rng, cfg, 4)
    out = downlink_evaluate(np.zeros(4, dtype=int), ch, cfg, caps_of(cfg), rng)
    assert out.reward == 0.0 and out.status == sdp.FEASIBLE and not out.beams.any()


def test_downlink_one_of_four(cfg):
    rng = np.random.default_rng(4)
    ch = make_channel(rng, cfg, 4)
    out = downlink_evaluate(np.array([0, 0, 1, 0]), ch, cfg, caps_of(cfg), rng)
    assert out.reward == 0.25
    assert audit_downlink(out.serve, out.beams, ch, cfg, caps_of(cfg))["dl_ok"]


def test_downlink_mutual_interferers_infeasible(cfg):
    rng = np.random.default_rng(5)
    inter = np.array([[0, 1], [1, 0]], dtype=bool)
    ch = make_channel(rng, cfg, 2, inter)
    out = downlink_evaluate(np.ones(2, dtype=int), ch, cfg, caps_of(cfg), rng)
    assert out.reward == -math.inf and out.status == sdp.INFEASIBLE


def test_downlink_select_prefers_largest_feasible_then_power(cfg):
    rng = np.random.default_rng(6)
    inter = np.zeros((3, 3), dtype=bool)
    inter[0, 1] = inter[1, 0] = True
    ch = make_channel(rng, cfg, 3, inter)
    groups = [np.array(v) for v in ([1, 1, 1], [1, 0, 1], [0, 1, 1], [0, 0, 1])]
    out = select_downlink_action(groups, ch, cfg, caps_of(cfg), rng)
    assert out.serve.sum() == 2 and out.index in (1, 2)
    other = downlink_evaluate(groups[3 - out.index], ch, cfg, caps_of(cfg), rng)
    assert out.power <= other.power


def test_downlink_nothing_feasible_serves_nobody(cfg):
    rng = np.random.default_rng(7)
    inter = np.array([[0, 1], [1, 0]], dtype=bool)
    ch = make_channel(rng, cfg, 2, inter)
    out = select_downlink_action([np.ones(2, dtype=int)], ch, cfg, caps_of(cfg), rng)
    assert out.serve.sum() == 0 and out.reward == 0.0 and out.index == -1


def test_audit_downlink_catches_loud_unserved_user(cfg):
    rng = np.random.default_rng(8)
    ch = make_channel(rng, cfg, 3)
    out = downlink_evaluate(np.array([1, 0, 0]), ch, cfg, caps_of(cfg), rng)
    beams = out.beams.copy()
    beams[1] = 1e-9
    assert not audit_downlink(out.serve, beams, ch, cfg, caps_of(cfg))["dl_unserved_silent"]
    assert not audit_downlink(out.serve, out.beams * 0.5, ch, cfg, caps_of(cfg))["dl_sinr"]


# ---------------------------------------------------------------------------
# agent


def test_agent_trains_on_interval():
    cfg = SimConfig(batch_size=4, train_interval=5)
    rng = np.random.default_rng(9)
    agent = LinkAgent.create(3, 2, cfg, 0.01, "proposed", rng)
    losses = []
    for t in range(20):
        s = rng.random(3)
        losses.append(agent.record(s, agent.act(s) > 0.5, s))
    trained = [k for k, v in enumerate(losses) if v is not None]
    assert trained == [4, 9, 14, 19]
    assert len(agent.losses) == 4
    assert agent.schedule.t == 20


def test_agent_greedy_act_is_forward_pass():
    cfg = SimConfig()
    rng = np.random.default_rng(10)
    agent = LinkAgent.create(5, 3, cfg, 0.01, "proposed", rng)
    s = rng.random(5)
    np.testing.assert_array_equal(agent.act(s, epsilon=0.0), agent.act(s, epsilon=0.0))
    out = agent.act(s)
    assert out.shape == (3,) and np.all((out > 0) & (out < 1))
