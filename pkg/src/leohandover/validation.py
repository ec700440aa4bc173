"""Self-checks run by ``leohandover validate``.

Every check is deterministic (fixed seeds) and returns a :class:`Check`.
One check is a negative control: it perturbs a moment-matrix factor and
passes only if the reconstruction test notices.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import baselines, conic, orbits
from .channel import (
    build_channel_stats,
    noise_variance,
    stats_from_links,
)
from .config import make_config
from .experiment import build_frames
from .metrics import (
    BeamformerSet,
    ScheduleMask,
    effective_gains,
    frame_power,
    mc_moments,
    rate_moments,
    sinr_omega,
)
from .optimizer import check_solution, solve_frame


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def psi_reconstruction_error(stats) -> float:
    """Largest relative error of Psi_u^H Psi_u against Omega_u."""
    worst = 0.0
    for u in range(stats.num_users):
        om = stats.Omega[u]
        rec = stats.Psi[u].conj().T @ stats.Psi[u]
        worst = max(worst, np.abs(rec - om).max() / max(np.abs(om).max(), 1e-300))
    return float(worst)


def _random_stats(rng, L=3, U=3, N=4):
    gamma = rng.uniform(0.5, 2.0, (L, U))
    k = 10 ** (rng.uniform(1.5, 2.0, (L, U)))
    b = rng.standard_normal((L, U, N)) + 1j * rng.standard_normal((L, U, N))
    return stats_from_links(gamma, k, b, noise_var=0.1)


def check_noise() -> Check:
    s2 = noise_variance(-173.855, 250e6, 4.0)
    dbm = 10 * math.log10(s2) + 30
    ok = abs(dbm - (-85.876)) < 1e-3
    return Check("noise variance", ok, f"{s2:.4e} W = {dbm:.4f} dBm")


def check_constellation() -> Check:
    spec = orbits.ConstellationSpec()
    ok = abs(spec.period / 5779 - 1) < 1e-3 and abs(spec.orbital_speed / 7570 - 1) < 1e-3
    el = orbits.build_walker_delta(spec)
    pos, vel = orbits.propagate(el, 1234.5)
    r = np.linalg.norm(pos, axis=1) / spec.orbital_radius - 1
    v = np.linalg.norm(vel, axis=1) / spec.orbital_speed - 1
    ok &= bool(np.abs(r).max() < 1e-9 and np.abs(v).max() < 1e-9) and len(el) == 784
    return Check("constellation", ok, f"period {spec.period:.1f} s, speed {spec.orbital_speed:.1f} m/s")


def check_psi(perturb: float = 0.0) -> Check:
    rng = np.random.default_rng(11)
    st = _random_stats(rng)
    if perturb:
        psi = st.Psi.copy()
        psi[0, 0, 0] *= 1.0 + perturb
        object.__setattr__(st, "Psi", psi)
    err = psi_reconstruction_error(st)
    return Check("Psi reconstruction", err < 1e-9, f"max relative error {err:.2e}")


def check_fault_injection() -> Check:
    inner = check_psi(perturb=1e-3)
    ok = not inner.ok
    return Check("fault injection (perturbed Psi is caught)", ok, inner.detail)


def check_moments(n_instances: int, n_samples: int) -> Check:
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(n_instances):
        st = _random_stats(rng, L=int(rng.integers(1, 5)), U=int(rng.integers(1, 5)),
                           N=int(rng.integers(1, 5)))
        W = BeamformerSet(1, st.sat_ids, rng.standard_normal(st.b.shape) + 1j * rng.standard_normal(st.b.shape))
        mean, var, cross = rate_moments(effective_gains(W, st), st)
        est = mc_moments(W, st, n_samples, rng)
        z = [np.abs(est.mean - mean) / np.maximum(est.mean_se, 1e-300),
             np.abs(est.var - var) / np.maximum(est.var_se, 1e-300)]
        off = ~np.eye(st.num_users, dtype=bool)
        z.append(np.abs(est.cross - cross)[off] / np.maximum(est.cross_se[off], 1e-300))
        worst = max(worst, max(float(np.max(x, initial=0.0)) for x in z))
    return Check("moment formulas vs Monte Carlo", worst < 5.0, f"worst deviation {worst:.2f} standard errors")


def check_sinr_forms() -> Check:
    rng = np.random.default_rng(31)
    st = _random_stats(rng)
    W = BeamformerSet(1, st.sat_ids, rng.standard_normal(st.b.shape) + 1j * rng.standard_normal(st.b.shape))
    g = effective_gains(W, st)
    mean, var, cross = rate_moments(g, st)
    a = np.abs(mean) ** 2 / (var + cross.sum(axis=1) + st.noise_var)
    b = sinr_omega(g, st)
    err = float(np.max(np.abs(a - b) / a))
    return Check("SINR: moment form equals stacked form", err < 1e-10, f"relative error {err:.1e}")


def check_conic() -> Check:
    prog = conic.ConeProgram()
    sl = prog.add_variables(3)
    prog.add_objective([0, 0, 1], sl)
    prog.add_eq(np.eye(3)[:2], [0.0, 0.0])
    prog.add_soc(np.eye(3)[:2], [-3.0, -4.0], [0, 0, 1], 0.0)
    r1 = conic.solve(prog)
    prog = conic.ConeProgram()
    sl = prog.add_variables(2)
    prog.add_objective([0, 1], sl)
    prog.add_eq([[1, 0]], [1.0])
    prog.add_exp([[math.log(2), 0], [0, 0], [0, 1]], [0, 1, 0])
    r2 = conic.solve(prog)
    prog = conic.ConeProgram()
    prog.add_variables(1)
    prog.add_eq([[1.0], [1.0]], [0.0, 1.0])
    r3 = conic.solve(prog)
    ok = (r1.optimal and abs(r1.objective_value - 5) < 1e-6 and r2.optimal
          and abs(r2.objective_value - 2) < 1e-6 and r3.status is conic.Status.INFEASIBLE)
    return Check("conic solver", ok, f"{r1.objective_value:.8f}, {r2.objective_value:.8f}, {r3.status.value}")


def check_schedules(n_draws: int) -> Check:
    cfg = make_config("desk")
    frame = build_frames(cfg, np.random.default_rng(5))[0]
    rng = np.random.default_rng(6)
    st = build_channel_stats(frame, rng, Nh=cfg.upa_h, Nv=cfg.upa_v, rx_gain_db=cfg.rx_gain_db)
    bad = 0
    for _ in range(n_draws):
        for rule in baselines.RULES:
            for fill in (True, False):
                m = baselines.make_schedule(rule, frame, st, cfg.u_max, rng, fill=fill)
                cover = m.delta.sum(axis=0)
                bad += int(np.any(cover < 1) or np.any(m.delta.sum(axis=1) > cfg.u_max)
                           or (not fill and np.any(cover != 1)))
    return Check("schedule coverage and cardinality", bad == 0, f"{bad} violating masks")


def check_power_identity() -> Check:
    rng = np.random.default_rng(41)
    worst = 0.0
    for _ in range(50):
        L, U, N = 3, 4, 2
        W = BeamformerSet(1, (0, 1, 2), rng.standard_normal((L, U, N)) + 1j * rng.standard_normal((L, U, N)))
        m = ScheduleMask((0, 1, 2), rng.integers(0, 2, (L, U)), rng.integers(0, 2, (L, U)))
        p = frame_power(W, m, 0.2, 3.0)
        worst = max(worst, abs(p.total - p.handover_power - p.radiated_power) / p.total,
                    abs(p.total - p.per_satellite.sum()) / p.total)
    return Check("power accounting identity", worst < 1e-12, f"worst relative gap {worst:.1e}")


def check_frame_solutions(n_frames: int) -> Check:
    cfg = make_config("desk", num_frames=n_frames)
    frames = build_frames(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    algo = cfg.algo()
    prev, bad, n_ok = None, 0, 0
    for f in frames:
        st = build_channel_stats(f, rng, Nh=cfg.upa_h, Nv=cfg.upa_v, noise_var=cfg.noise_var_w,
                                 rx_gain_db=cfg.rx_gain_db)
        sol = solve_frame(st, prev, algo)
        if sol.feasible:
            n_ok += 1
            ok, _ = check_solution(sol.W, sol.mask, st, algo, rate_tol=1e-4)
            bad += int(not ok)
            prev = sol.mask
        else:
            prev = None
    return Check("optimizer output feasibility", bad == 0 and n_ok > 0,
                 f"{n_ok}/{len(frames)} frames feasible, {bad} fail re-evaluation")


def run_checks(fast: bool = False) -> list[Check]:
    plan = [
        check_noise,
        check_constellation,
        check_psi,
        check_fault_injection,
        lambda: check_moments(5 if fast else 20, 20_000 if fast else 100_000),
        check_sinr_forms,
        check_conic,
        lambda: check_schedules(20 if fast else 200),
        check_power_identity,
        lambda: check_frame_solutions(2 if fast else 4),
    ]
    out = []
    for fn in plan:
        t0 = time.perf_counter()
        try:
            c = fn()
        except Exception as exc:  # a crashing check is a failing check
            c = Check(getattr(fn, "__name__", "check"), False, f"{type(exc).__name__}: {exc}")
        c.seconds = time.perf_counter() - t0
        out.append(c)
    return out


def format_report(checks: list[Check]) -> str:
    lines = []
    for c in checks:
        tag = "PASS" if c.ok else "FAIL"
        lines.append(f"{tag}  {c.name:<45s} {c.seconds:8.2f} s  {c.detail}")
    n_fail = sum(not c.ok for c in checks)
    lines.append(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return "\n".join(lines)
