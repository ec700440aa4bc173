import math
from dataclasses import replace

import numpy as np
import pytest

from leohandover.metrics import BeamformerSet, ScheduleMask, effective_gains, rate_moments, sinr_omega
from leohandover.optimizer import (
    AlgoConfig,
    FPAux,
    FrameModel,
    build_frame1_program,
    build_framek_program,
    check_solution,
    eta_target,
    extract_schedule,
    solve_frame,
    solve_frame1,
    solve_framek,
    update_fp_aux,
)
from leohandover import conic

from conftest import random_w
from helpers_opt import CFG, desk_instance, scalar_los


def _prev(stats, delta):
    return ScheduleMask(stats.sat_ids, np.asarray(delta, int), np.zeros_like(delta, dtype=int))


def test_eta_table_value():
    assert float(eta_target(0.05, 0.2)) == pytest.approx(0.044274, abs=1e-6)
    assert CFG.eta(3) == pytest.approx(np.full(3, 2 ** 0.0625 - 1))


@pytest.mark.parametrize("bad", [dict(tau_ho=0.0), dict(tau_ho=1.0), dict(rho=1.0),
                                 dict(u_max=0), dict(p_rad=0.0), dict(epsilon=0.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        AlgoConfig(**bad)


def test_frame1_program_scalar_oracle():
    s, p_star = scalar_los()
    prog = build_frame1_program(s, np.zeros((1, 1)), 0.0, CFG)
    res = conic.solve(prog)
    assert res.optimal
    W = FrameModel(s, CFG).decode(prog.meta["layout"], res.x)["W"]
    assert W.beam_power()[0, 0] == pytest.approx(p_star, rel=1e-6)


def test_frame1_scalar_solver_and_direction():
    s, p_star = scalar_los()
    sol = solve_frame1(s, CFG)
    assert sol.feasible
    assert sol.W.beam_power()[0, 0] == pytest.approx(p_star, rel=1e-5)
    assert sol.iterations[0] <= 3
    w, b = sol.W.w[0, 0], s.b[0, 0]
    cos = abs(np.vdot(b.conj(), w)) / (np.linalg.norm(w) * np.linalg.norm(b))
    assert cos >= 1 - 1e-6
    # frame 1 pays the handover cost for the one new link
    assert sol.power.handover_power == CFG.p_ho


def test_framek_scalar_oracle_with_established_link():
    s, p_star = scalar_los(first=False)
    prev = _prev(s, [[1]])
    sol = solve_framek(s, prev, CFG)
    assert sol.feasible
    assert sol.W.beam_power()[0, 0] == pytest.approx(p_star, rel=1e-5)
    assert sol.power.handover_event_count == 0
    assert sol.power.total == pytest.approx(p_star, rel=1e-5)


def test_framek_without_links_is_frame1():
    s, p_star = scalar_los()
    sol = solve_framek(s, _prev(s, [[0]]), CFG)
    assert sol.W.beam_power()[0, 0] == pytest.approx(p_star, rel=1e-5)


def test_frame1_outputs_meet_sinr_target():
    for seed in range(3):
        s = desk_instance(seed)
        sol = solve_frame1(s, CFG)
        assert sol.feasible
        sinr = sinr_omega(effective_gains(sol.W, s), s)
        assert np.all(sinr >= CFG.eta(s.num_users) * (1 - 1e-6))


def test_unlimited_cardinality_keeps_pressure_off():
    s = desk_instance(4)
    cfg = replace(CFG, u_max=s.num_users)
    sol = solve_frame1(s, cfg)
    assert sol.feasible
    assert np.all(sol.mask.delta.sum(axis=1) <= s.num_users)


def test_tight_cardinality_finds_schedule():
    # the instance admits a one-beam-per-satellite schedule (checked by brute force)
    s = desk_instance(5, L=3, U=3, N=2)
    cfg = replace(CFG, u_max=1)
    import itertools
    from leohandover.baselines import coop_fixed_schedule
    exists = False
    for assign in itertools.permutations(range(3)):
        delta = np.zeros((3, 3), int)
        delta[list(assign), range(3)] = 1
        exists |= coop_fixed_schedule(s, ScheduleMask.carry_over(delta, s.sat_ids, None), None, cfg).feasible
    assert exists
    sol = solve_frame1(s, cfg)
    assert sol.feasible
    assert np.all(sol.mask.delta.sum(axis=1) <= 1)
    ok, _ = check_solution(sol.W, sol.mask, s, cfg, rate_tol=1e-4)
    assert ok


def test_framek_program_weights():
    s = desk_instance(6)
    L, U = s.alpha_bar.shape
    W = solve_frame1(s, CFG).W
    prev = np.ones((L, U))
    lt, lam = update_fp_aux(W, s, prev)
    prog = build_framek_program(s, prev, np.zeros((L, U)), FPAux(lt, lam), 0.0, CFG)
    res = conic.solve(prog)
    assert res.optimal
    d = FrameModel(s, CFG).decode(prog.meta["layout"], res.x)
    # all links established: objective is the plain radiated power
    assert d["q"] == pytest.approx(np.sum(np.abs(d["W"].w) ** 2), rel=1e-6)
    with pytest.raises(conic.BuildError):
        build_framek_program(s, np.ones((L + 1, U)), np.zeros((L, U)), FPAux(lt, lam), 0.0, CFG)


def test_fp_aux_identities(rng):
    s = desk_instance(7)
    W = BeamformerSet(1, s.sat_ids, random_w(rng, s.b.shape))
    prev = rng.integers(0, 2, s.alpha_bar.shape)
    lt, lam = update_fp_aux(W, s, prev)
    g = effective_gains(W, s)
    mean, var, cross = rate_moments(g, s)
    A, B = mean.real, var + cross.sum(1) + s.noise_var
    surrogate = 2 * lam * A - lam ** 2 * B
    want = np.where(A > 0, A ** 2 / B, 0.0)
    np.testing.assert_allclose(surrogate, want, rtol=1e-12)
    # when the mean gain is real, the surrogate equals the SINR
    real_mean = np.abs(mean.imag) < 1e-12 * np.abs(mean)
    np.testing.assert_allclose(surrogate[real_mean], sinr_omega(g, s)[real_mean], rtol=1e-12)
    z0, z1 = update_fp_aux(BeamformerSet.zeros(s), s, prev)
    assert np.all(z0 == 0) and np.all(z1 == 0)


def test_extract_schedule_thresholds():
    s = desk_instance(8, L=2, U=2, N=1)
    W = BeamformerSet.zeros(s)
    assert not extract_schedule(W, CFG)[0].delta.any()
    w = np.zeros((2, 2, 1), complex)
    w[0, 1, 0] = math.sqrt(CFG.p_rad)
    np.testing.assert_array_equal(extract_schedule(BeamformerSet(1, s.sat_ids, w), CFG)[0].delta,
                                  [[0, 1], [0, 0]])
    w = np.zeros((2, 2, 1), complex)
    w[1, 0, 0] = math.sqrt(1e-9 * CFG.p_rad)
    w[1, 1, 0] = math.sqrt(0.1 * CFG.p_rad)
    mask, W2 = extract_schedule(BeamformerSet(1, s.sat_ids, w), CFG)
    np.testing.assert_array_equal(mask.delta, [[0, 0], [0, 1]])
    assert W2.w[1, 0, 0] == 0


def test_extract_schedule_trims_weakest():
    s = desk_instance(9, L=1, U=3, N=1)
    w = np.array([[[1.0], [3.0], [2.0]]], complex)
    mask, _ = extract_schedule(BeamformerSet(1, s.sat_ids, w), replace(CFG, u_max=2))
    np.testing.assert_array_equal(mask.delta, [[0, 1, 1]])


def test_stationarity_on_repeated_frame():
    s = desk_instance(10, L=3, U=4, N=2)
    first = solve_frame1(s, CFG)
    assert first.feasible
    again = solve_framek(s, first.mask, CFG)
    assert again.feasible
    assert again.power.handover_event_count == 0
    assert again.power.total <= first.power.total * (1 + 1e-6)


def test_inner_objectives_monotone():
    s = desk_instance(11, L=3, U=4, N=2)
    first = solve_frame1(s, CFG)
    prev = ScheduleMask(s.sat_ids, first.mask.delta, np.zeros_like(first.mask.delta))
    # a fresh previous mask with half the links forces handover trade-offs
    delta = first.mask.delta.copy()
    delta[0] = 0
    sol = solve_framek(s, ScheduleMask(s.sat_ids, delta, delta * 0), CFG)
    objs = sol.inner_objectives
    assert objs
    for (o1, i1, v1), (o2, i2, v2) in zip(objs, objs[1:]):
        if o1 == o2 and i2 == i1 + 1:
            assert v2 <= v1 + 10 * CFG.tol_gap * max(1.0, abs(v1))
    assert prev.delta.shape == delta.shape


def test_handover_count_falls_with_cost():
    s1 = desk_instance(12, L=3, U=4, N=2)
    s2 = desk_instance(13, L=3, U=4, N=2)
    counts = []
    for p_ho in (1.0, 1000.0):
        cfg = replace(CFG, p_ho=p_ho)
        a = solve_frame(s1, None, cfg)
        b = solve_frame(s2, a.mask, cfg)
        counts.append(b.power.handover_event_count)
    assert counts[1] <= counts[0]


def test_infeasible_qos_reported():
    s = desk_instance(14, snr_db=-60.0)
    sol = solve_frame1(s, CFG)
    assert not sol.feasible
    assert sol.power is None
