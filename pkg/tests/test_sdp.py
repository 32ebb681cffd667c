import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comp_vr import sdp
from comp_vr.allocator import uplink_power_closed_form
from comp_vr.config import SimConfig

TAU = 2.0 ** 1.25 - 1.0


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def instance(h, coupling=None, tau=TAU, noise=1.0, caps=None, k=2):
    h = np.atleast_2d(h)
    s, n = h.shape
    coupling = np.zeros((s, s), dtype=bool) if coupling is None else np.asarray(coupling, dtype=bool)
    caps = np.full(n // k, 1e6) if caps is None else np.asarray(caps, dtype=float)
    return sdp.build_instance(np.ones(s, dtype=int), h, coupling, tau, noise, caps, k)


def received(inst, grams):
    return np.einsum("sij,sji->s", inst.grams(), grams).real


def test_empty_instance():
    inst = sdp.build_instance(np.zeros(4, dtype=int), np.ones((4, 6)), np.zeros((4, 4)), TAU, 1.0,
                              np.ones(3), 2)
    sol = sdp.solve(inst)
    assert sol.status == sdp.FEASIBLE
    assert sol.grams.shape == (0, 6, 6)
    assert sdp.recover_beamformers(inst, sol, np.random.default_rng(0)).beams.shape == (0, 6)


def test_blocks_are_hermitian_psd_of_full_dimension():
    rng = np.random.default_rng(1)
    inst = instance(cplx(rng, 3, 6))
    sol = sdp.solve(inst, fast_path=False)
    assert sol.grams.shape == (3, 6, 6)
    for g in sol.grams:
        assert np.allclose(g, g.conj().T, atol=1e-12 * np.abs(g).max())
        assert np.linalg.eigvalsh(g).min() >= -1e-8 * np.abs(g).max()


@pytest.mark.parametrize("seed", range(5))
def test_single_user_matches_matched_filter(seed):
    rng = np.random.default_rng(seed)
    h = cplx(rng, 6)
    sol = sdp.solve(instance(h), fast_path=False)
    want = sdp.single_user_min_power(h, TAU, 1.0)
    assert sol.status == sdp.FEASIBLE
    assert np.real(np.trace(sol.grams[0])) == pytest.approx(want, rel=1e-6)


def test_fast_path_agrees_with_interior_point():
    rng = np.random.default_rng(2)
    inst = instance(cplx(rng, 3, 6), coupling=[[0, 1, 0], [0, 0, 0], [0, 0, 0]], tau=0.5)
    a = sdp.solve(inst, fast_path=True)
    b = sdp.solve(inst, fast_path=False)
    assert a.extra.get("method") == "matched-filter"
    assert b.objective == pytest.approx(a.objective, rel=1e-6)


def test_capped_single_user_matches_grid_search():
    # one user, two single-antenna APs, the stronger AP capped below its matched-filter share
    h = np.array([2.0, 1.0 + 0.0j])
    cap1 = 0.1
    inst = sdp.build_instance(np.array([1]), h[None, :], np.zeros((1, 1), dtype=bool), TAU, 1.0,
                              np.array([cap1, 1e6]), 1)
    sol = sdp.solve(inst, fast_path=False)
    assert sol.status == sdp.FEASIBLE
    # beams can be phase-aligned, so only amplitudes matter
    a1 = np.linspace(0.0, np.sqrt(cap1), 200001)
    a2 = np.maximum(0.0, (np.sqrt(TAU) - abs(h[0]) * a1) / abs(h[1]))
    best = float(np.min(a1 ** 2 + a2 ** 2))
    assert sol.objective == pytest.approx(best, rel=1e-3)
    ap = np.einsum("jab,sba->j", inst.selectors(), sol.grams).real
    assert ap[0] <= cap1 * (1 + 1e-6)


def test_check_rank():
    rng = np.random.default_rng(3)
    h = cplx(rng, 6)
    ok, ratio = sdp.check_rank(np.outer(h, h.conj()))
    assert ok and ratio < 1e-12
    ok, ratio = sdp.check_rank(np.eye(6))
    assert not ok and ratio == pytest.approx(1.0)


def test_recovery_returns_channel_direction_up_to_phase():
    rng = np.random.default_rng(4)
    h = cplx(rng, 6)
    inst = instance(h)
    sol = sdp.solve(inst, fast_path=False)
    rec = sdp.recover_beamformers(inst, sol, rng)
    assert rec.method == "eigen"
    g = rec.beams[0]
    cos = abs(np.vdot(h, g)) / (np.linalg.norm(h) * np.linalg.norm(g))
    assert cos == pytest.approx(1.0, abs=1e-8)
    assert abs(np.vdot(h, g)) ** 2 == pytest.approx(received(inst, sol.grams)[0], rel=1e-8)


def test_no_interference_solution_is_rank_one():
    rng = np.random.default_rng(5)
    inst = instance(cplx(rng, 4, 6), caps=np.full(3, 1e6))
    sol = sdp.solve(inst, fast_path=False)
    assert all(sdp.check_rank(g)[0] for g in sol.grams)


def test_sinr_constraints_active_at_optimum():
    rng = np.random.default_rng(6)
    coupling = np.array([[0, 1, 0], [1, 0, 0], [0, 1, 0]], dtype=bool)
    inst = instance(cplx(rng, 3, 6), coupling=coupling, tau=0.5)
    sol = sdp.solve(inst, fast_path=False)
    recv = received(inst, sol.grams)
    need = 0.5 * (1.0 + coupling.astype(float) @ recv)
    np.testing.assert_allclose(recv, need, rtol=1e-6)


@pytest.mark.parametrize("c", [0.1, 3.0, 1e3])
def test_channel_scaling(c):
    rng = np.random.default_rng(7)
    h = cplx(rng, 2, 6)
    coupling = [[0, 1], [0, 0]]
    base = sdp.solve(instance(h, coupling, tau=0.5), fast_path=False)
    scaled = sdp.solve(instance(c * h, coupling, tau=0.5), fast_path=False)
    assert scaled.objective == pytest.approx(base.objective / c ** 2, rel=1e-6)


def test_perron_certificate_for_mutual_interference():
    rng = np.random.default_rng(8)
    inst = instance(cplx(rng, 2, 6), coupling=[[0, 1], [1, 0]])
    sol = sdp.solve(inst)
    assert sol.status == sdp.INFEASIBLE and sol.certificate == "perron"
    assert sdp.interference_min_received(inst) is None


def test_phase1_certificate_for_tight_caps():
    rng = np.random.default_rng(9)
    h = cplx(rng, 6)
    floor = sdp.single_user_min_power(h, TAU, 1.0)
    sol = sdp.solve(instance(h, caps=np.full(3, floor / 10)))
    assert sol.status == sdp.INFEASIBLE and sol.certificate == "phase1"
    assert sol.phase1_value > sdp.PHASE1_TOL


def test_iteration_exhaustion_is_not_infeasibility():
    rng = np.random.default_rng(10)
    h = cplx(rng, 6)
    floor = sdp.single_user_min_power(h, TAU, 1.0)
    sol = sdp.solve(instance(h, caps=np.full(3, floor / 2)), max_iter=2)
    assert sol.status == sdp.FAILED


def test_instance_round_trip():
    rng = np.random.default_rng(11)
    inst = instance(cplx(rng, 3, 6), coupling=[[0, 1, 0], [0, 0, 1], [0, 0, 0]], caps=[1.0, 2.0, 3.0])
    back = sdp.SdpInstance.from_dict(json.loads(json.dumps(inst.to_dict())))
    np.testing.assert_array_equal(back.channels, inst.channels)
    np.testing.assert_array_equal(back.coupling, inst.coupling)
    np.testing.assert_array_equal(back.power_caps, inst.power_caps)
    assert (back.sinr_target, back.noise_power, back.n_elements) == (inst.sinr_target, inst.noise_power, 2)


def test_agrees_with_generic_conic_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(12)
    coupling = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=bool)
    h = cplx(rng, 3, 6)
    # caps force the interior-point path
    caps = np.array([0.4, 2.0, 2.0])
    inst = instance(h, coupling, tau=0.5, caps=caps)
    sol = sdp.solve(inst, fast_path=False)
    assert sol.status == sdp.FEASIBLE

    hs = inst.grams()
    gs = [cp.Variable((6, 6), hermitian=True) for _ in range(3)]
    cons = [g >> 0 for g in gs]
    for i in range(3):
        interf = sum(cp.real(cp.trace(hs[m] @ gs[m])) for m in np.flatnonzero(coupling[i]))
        cons.append(cp.real(cp.trace(hs[i] @ gs[i])) >= 0.5 * (1.0 + interf))
    for j, z in enumerate(inst.selectors()):
        cons.append(sum(cp.real(cp.trace(z @ g)) for g in gs) <= caps[j])
    prob = cp.Problem(cp.Minimize(sum(cp.real(cp.trace(g)) for g in gs)), cons)
    prob.solve(solver="CLARABEL")
    assert sol.objective == pytest.approx(prob.value, rel=1e-5)


# ---------------------------------------------------------------------------
# uplink power reference


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_lp_oracle_matches_closed_form(seed):
    cfg = SimConfig(n_users=8, n_aps=3)
    rng = np.random.default_rng(seed)
    dist = rng.uniform(5.0, 80.0, (8, 3))
    pathloss = dist ** -cfg.ul_fading_exponent
    assoc = np.zeros((8, 3), dtype=int)
    rows = rng.random(8) < 0.8
    assoc[rows, rng.integers(0, 3, 8)[rows]] = 1
    closed = uplink_power_closed_form(assoc, pathloss, cfg)
    oracle = sdp.lp_power_oracle(assoc, pathloss, cfg.ul_snr_threshold, cfg.noise_psd, cfg.ul_bandwidth,
                                 cfg.rayleigh_gain, cfg.hmd_power_budget)
    np.testing.assert_allclose(closed, oracle, rtol=1e-9, atol=0.0)


def test_lp_oracle_at_budget_boundary():
    cfg = SimConfig(n_users=4, n_aps=1)
    noise = cfg.noise_psd * cfg.ul_bandwidth / 4
    # pathloss chosen so the requirement equals the budget, then nudged either side
    exact = cfg.ul_snr_threshold * noise / (cfg.rayleigh_gain * cfg.hmd_power_budget)
    pathloss = np.array([[exact], [exact * (1 + 1e-9)], [exact * (1 - 1e-6)], [exact]])
    assoc = np.array([[1], [1], [1], [0]])
    closed = uplink_power_closed_form(assoc, pathloss, cfg)
    oracle = sdp.lp_power_oracle(assoc, pathloss, cfg.ul_snr_threshold, cfg.noise_psd, cfg.ul_bandwidth,
                                 cfg.rayleigh_gain, cfg.hmd_power_budget)
    assert closed[2] == 0.0 and oracle[2] == 0.0
    assert closed[3] == 0.0 and oracle[3] == 0.0
    assert closed[1] > 0 and oracle[1] == pytest.approx(closed[1], rel=1e-9)
    assert oracle[0] == pytest.approx(cfg.hmd_power_budget, rel=1e-9)
