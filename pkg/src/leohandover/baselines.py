"""Pre-fixed scheduling rules and the two baseline transmitter designs.

Every rule works in two stages: (i) each user is attached to one satellite
with spare capacity, (ii) satellites with capacity left take on extra users.
Non-cooperative baselines stop after stage (i).
"""
from __future__ import annotations

import numpy as np

from .channel import ChannelStats
from .metrics import ScheduleMask
from .optimizer import AlgoConfig, FrameSolution, InfeasibleSchedule, _solve_fixed
from .orbits import FrameSnapshot

RULES = ("random", "distance", "correlation")


def _check_capacity(L: int, U: int, u_max: int) -> None:
    if L * u_max < U:
        raise InfeasibleSchedule(f"{L} satellites x {u_max} beams cannot cover {U} users")


def _usable(frame: FrameSnapshot) -> np.ndarray:
    return np.asarray(frame.visible, dtype=bool)


def _no_link(u: int) -> InfeasibleSchedule:
    return InfeasibleSchedule(f"user {u} has no visible satellite with spare capacity")


def _mask(frame, delta, previous) -> ScheduleMask:
    return ScheduleMask.carry_over(delta, frame.serving_set, previous)


def schedule_random(frame: FrameSnapshot, u_max: int, rng: np.random.Generator,
                    previous: ScheduleMask | None = None, fill: bool = True) -> ScheduleMask:
    L, U = frame.distance.shape
    _check_capacity(L, U, u_max)
    ok = _usable(frame)
    delta = np.zeros((L, U), dtype=int)
    for u in rng.permutation(U):
        cand = np.flatnonzero(ok[:, u] & (delta.sum(axis=1) < u_max))
        if cand.size == 0:
            raise _no_link(int(u))
        delta[rng.choice(cand), u] = 1
    if fill:
        for l in range(L):
            spare = u_max - delta[l].sum()
            cand = np.flatnonzero(ok[l] & (delta[l] == 0))
            if spare > 0 and cand.size:
                pick = rng.choice(cand, size=min(spare, cand.size), replace=False)
                delta[l, pick] = 1
    return _mask(frame, delta, previous)


def _stage_one_nearest(frame: FrameSnapshot, u_max: int) -> np.ndarray:
    """Users by ascending nearest-link distance, each to its nearest satellite with room."""
    L, U = frame.distance.shape
    _check_capacity(L, U, u_max)
    ok = _usable(frame)
    dist = np.where(ok, frame.distance, np.inf)
    delta = np.zeros((L, U), dtype=int)
    order = np.lexsort((np.arange(U), dist.min(axis=0)))
    for u in order:
        room = ok[:, u] & (delta.sum(axis=1) < u_max)
        if not room.any():
            raise _no_link(int(u))
        cand = np.flatnonzero(room)
        l = cand[np.lexsort((cand, dist[cand, u]))[0]]
        delta[l, u] = 1
    return delta


def schedule_distance(frame: FrameSnapshot, u_max: int, previous: ScheduleMask | None = None,
                      fill: bool = True) -> ScheduleMask:
    delta = _stage_one_nearest(frame, u_max)
    if fill:
        ok = _usable(frame)
        for l in range(delta.shape[0]):
            cand = np.flatnonzero(ok[l] & (delta[l] == 0))
            cand = cand[np.lexsort((cand, frame.distance[l, cand]))]
            spare = u_max - delta[l].sum()
            delta[l, cand[:max(spare, 0)]] = 1
    return _mask(frame, delta, previous)


def steering_correlation(b_u: np.ndarray, b_v: np.ndarray) -> float:
    """|b_u^H b_v| / (||b_u|| ||b_v||); 0 if either vector vanishes."""
    nu, nv = np.linalg.norm(b_u), np.linalg.norm(b_v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(abs(np.vdot(b_u, b_v)) / (nu * nv))


def schedule_correlation(frame: FrameSnapshot, stats: ChannelStats, u_max: int,
                         previous: ScheduleMask | None = None, fill: bool = True) -> ScheduleMask:
    """Distance-based stage (i), then min-max steering-correlation filling."""
    delta = _stage_one_nearest(frame, u_max)
    if fill:
        ok = _usable(frame)
        L, U = delta.shape
        for l in range(L):
            while delta[l].sum() < u_max:
                cand = np.flatnonzero(ok[l] & (delta[l] == 0))
                if cand.size == 0:
                    break
                served = np.flatnonzero(delta[l])
                score = np.array([
                    max((steering_correlation(stats.b[l, u], stats.b[l, v]) for v in served),
                        default=0.0)
                    for u in cand
                ])
                best = np.lexsort((cand, frame.distance[l, cand], score))[0]
                delta[l, cand[best]] = 1
    return _mask(frame, delta, previous)


def make_schedule(rule: str, frame: FrameSnapshot, stats: ChannelStats, u_max: int,
                  rng: np.random.Generator, previous: ScheduleMask | None = None,
                  fill: bool = True) -> ScheduleMask:
    if rule == "random":
        return schedule_random(frame, u_max, rng, previous, fill)
    if rule == "distance":
        return schedule_distance(frame, u_max, previous, fill)
    if rule == "correlation":
        return schedule_correlation(frame, stats, u_max, previous, fill)
    raise ValueError(f"unknown scheduling rule {rule!r}")


def _aligned(mask: ScheduleMask, stats: ChannelStats, prev_mask: ScheduleMask | None) -> ScheduleMask:
    if tuple(mask.sat_ids) != tuple(stats.sat_ids):
        raise ValueError("mask and statistics refer to different serving sets")
    if prev_mask is None:
        return mask
    return ScheduleMask.carry_over(mask.delta, stats.sat_ids, prev_mask)


def coop_fixed_schedule(stats: ChannelStats, mask: ScheduleMask,
                        prev_mask: ScheduleMask | None, cfg: AlgoConfig) -> FrameSolution:
    """Cooperative beamformers restricted to the support of ``mask``."""
    mask = _aligned(mask, stats, prev_mask)
    return _solve_fixed(stats, mask, cfg, prev_mask)


def noncoop_mrt(stats: ChannelStats, mask: ScheduleMask,
                prev_mask: ScheduleMask | None, cfg: AlgoConfig) -> FrameSolution:
    """One satellite per user, MRT directions, optimised beam amplitudes."""
    cols = np.asarray(mask.delta).sum(axis=0)
    if np.any(cols != 1):
        raise ValueError("non-cooperative transmission needs exactly one satellite per user")
    mask = _aligned(mask, stats, prev_mask)
    return _solve_fixed(stats, mask, cfg, prev_mask, beams="mrt")
