"""Handover-aware joint cooperative beamforming and implicit scheduling.

Each frame is solved by a sequence of convex cone programs:

* frame 1 (no established links): reweighted l2 loop around an exact
  second-order-cone form of the single-rate QoS constraint;
* later frames: the same reweighting loop as the outer iteration, with a
  fractional-programming (quadratic transform) inner loop handling the
  two-segment rate constraint.

Internally every program is written in normalised units: beamformers are
divided by sqrt(P_rad) and link gains by the noise standard deviation, so
the noise power is 1 and the per-satellite power budget is 1.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from . import conic
from .channel import ChannelStats
from .conic import ComplexAffine, ConeProgram, Status, complex_from_slice
from .metrics import (
    BeamformerSet,
    ScheduleMask,
    aligned_previous,
    effective_gains,
    frame_power,
    gated_gains,
    rate_moments,
    segmented_rate,
)

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
AUX_GAINS = True


@dataclass(frozen=True)
class AlgoConfig:
    u_max: int = 4
    p_rad: float = 1e4
    p_ho: float = 100.0
    tau_ho: float = 0.2
    rate_min: float = 0.05
    epsilon: float = 1e-6
    mu0: float = 1.0
    rho: float = 3.0
    mu_max: float = 1e6
    delta_threshold: float = 1e-5
    outer_max: int = 15
    inner_max: int = 20
    rel_tol: float = 1e-3
    tol_feas: float = 1e-9  # tighter than tol_gap: QT iterates must stay feasible for the next program
    tol_gap: float = 1e-8
    max_iter: int = 200
    polish: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau_ho < 1.0:
            raise ValueError("tau_ho must lie in (0, 1)")
        if self.rho <= 1.0:
            raise ValueError("rho must exceed 1")
        if min(self.outer_max, self.inner_max) < 1 or self.u_max < 1:
            raise ValueError("iteration caps and u_max must be >= 1")
        if self.epsilon <= 0 or self.p_rad <= 0 or self.p_ho < 0:
            raise ValueError("epsilon and p_rad must be positive, p_ho non-negative")

    def rate_vector(self, num_users: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rate_min, dtype=float), (num_users,)).copy()

    def eta(self, num_users: int) -> np.ndarray:
        """Single-segment SINR target 2^(R/(1-tau)) - 1."""
        return 2.0 ** (self.rate_vector(num_users) / (1.0 - self.tau_ho)) - 1.0


def eta_target(rate_min, tau_ho: float) -> np.ndarray:
    return 2.0 ** (np.asarray(rate_min, dtype=float) / (1.0 - tau_ho)) - 1.0


@dataclass
class FPAux:
    lambda_tilde: np.ndarray
    lam: np.ndarray
    gamma_tilde: np.ndarray | None = None
    gamma: np.ndarray | None = None
    z: np.ndarray | None = None
    omega: np.ndarray | None = None
    zeta: np.ndarray | None = None
    eta: np.ndarray | None = None


@dataclass
class FrameSolution:
    W: BeamformerSet
    mask: ScheduleMask
    power: object
    rates: np.ndarray
    feasible: bool
    iterations: tuple[int, int] = (0, 0)
    solver_statuses: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    warning: str = ""
    inner_objectives: list = field(default_factory=list)


class InfeasibleSchedule(ValueError):
    """A mask cannot be used with the requested transmitter design."""


# ---------------------------------------------------------------------------
# program assembly


def _sel(n: int, idx, vals=None) -> sp.csr_matrix:
    """Rows selecting variables ``idx`` (one row each), optionally scaled."""
    idx = np.atleast_1d(idx)
    vals = np.ones(idx.size) if vals is None else np.broadcast_to(vals, idx.shape)
    return sp.csr_matrix((vals, (np.arange(idx.size), idx)), shape=(idx.size, n))


def _zero(n: int, m: int = 1) -> sp.csr_matrix:
    return sp.csr_matrix((m, n))


def _scaled(T: sp.csr_matrix, scale: np.ndarray, E: sp.csr_matrix | None = None) -> sp.csr_matrix:
    """diag(scale) T + E without rebuilding the sparsity pattern row by row."""
    out = sp.diags(scale) @ T
    return out if E is None else out + E


class _Layout:
    def __init__(self, **kw):
        self.__dict__.update(kw)


class FrameModel:
    """Static, normalised description of one frame's beamforming problem.

    ``support`` restricts which beams may be nonzero; ``beams="mrt"`` fixes
    every beam to the matched-filter direction so only one real amplitude
    per scheduled link is optimised.  Constraint matrices that do not change
    between iterations are built once and reused.
    """

    def __init__(self, stats: ChannelStats, cfg: AlgoConfig, support=None,
                 beams: str = "full"):
        self.stats = stats
        self.cfg = cfg
        L, U, N = stats.b.shape
        self.L, self.U, self.N = L, U, N
        self.sigma = math.sqrt(stats.noise_var)
        self.wscale = math.sqrt(cfg.p_rad)
        gscale = self.wscale / self.sigma
        self.ab = stats.alpha_bar * gscale
        self.psi = stats.Psi * gscale
        self.support = np.ones((L, U), dtype=bool) if support is None else np.asarray(support, bool)
        if beams not in ("full", "mrt"):
            raise ValueError(f"unknown beam model {beams!r}")
        self.beams = beams
        self.pairs = np.argwhere(self.support)
        self.rates = cfg.rate_vector(U)
        self.p_ho_n = cfg.p_ho / cfg.p_rad
        if beams == "mrt":
            self.mrt_dirs = {}
            for l, u in self.pairs:
                bn = np.linalg.norm(stats.b[l, u])
                if bn == 0:
                    raise InfeasibleSchedule(f"link ({l}, {u}) has a null array response")
                self.mrt_dirs[(l, u)] = stats.b[l, u].conj() / bn
        # B maps w (l, i, n) to g (l, u, i) = b[l, u] . w[l, i]
        r = np.arange(L * U * U)
        l_, u_, i_ = np.unravel_index(r, (L, U, U))
        rows = np.repeat(r, N)
        cols = ((l_ * U + i_)[:, None] * N + np.arange(N)).ravel()
        vals = stats.b[l_, u_].ravel()
        self.Bmat = sp.csr_matrix((vals, (rows, cols)), shape=(L * U * U, L * U * N))
        self._cache = {}

    # -- layout ---------------------------------------------------------
    def _allocate(self, mode: str, cardinality: bool):
        key = (mode, cardinality)
        if key in self._cache:
            return self._cache[key]
        L, U, N = self.L, self.U, self.N
        P = len(self.pairs)
        prog = ConeProgram()
        if self.beams == "full":
            sl_w = prog.add_variables(2 * P * N, name="w")
        else:
            sl_w = prog.add_variables(P, lb=0.0, name="s")
        sl_g = prog.add_variables(2 * L * U * U, name="g") if AUX_GAINS else None
        sl_q = prog.add_variables(1, lb=0.0, name="q")
        sl_om = sl_ze = None
        if cardinality:
            sl_om = prog.add_variables(P, lb=0.0, ub=1.0, name="omega")
            sl_ze = prog.add_variables(L, lb=0.0, name="zeta")
        sl_gt = sl_ga = sl_tt = sl_t = None
        if mode == "fp":
            sl_gt = prog.add_variables(U, lb=0.0, name="Gamma_tilde")
            sl_ga = prog.add_variables(U, lb=0.0, name="Gamma")
            sl_tt = prog.add_variables(U, name="t_tilde")
            sl_t = prog.add_variables(U, name="t")
        n = prog.n_vars

        # beamformers as a complex affine map of the real variables
        if self.beams == "full":
            blk = complex_from_slice(prog, sl_w)
            rows = ((self.pairs[:, 0] * U + self.pairs[:, 1])[:, None] * N + np.arange(N)).ravel()
            scatter = sp.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))),
                                    shape=(L * U * N, rows.size))
            w = blk.transform(scatter)
        else:
            M = np.zeros((L * U * N, P), dtype=complex)
            for k, (l, u) in enumerate(self.pairs):
                M[(l * U + u) * N:(l * U + u + 1) * N, k] = self.mrt_dirs[(l, u)]
            sel = prog.selector(sl_w)
            w = ComplexAffine(sp.csr_matrix(M.real) @ sel, sp.csr_matrix(M.imag) @ sel)
        Bw = w.transform(self.Bmat)
        if AUX_GAINS:
            g = complex_from_slice(prog, sl_g)
            geq = sp.vstack([g.re - Bw.re, g.im - Bw.im]).tocsr()
        else:
            g, geq = Bw, None

        wst, _ = w.stacked()
        wst = wst.tocsr()
        pair_rows = []
        for l, u in self.pairs:
            base = (l * U + u) * N
            idx = np.concatenate([np.arange(base, base + N), L * U * N + np.arange(base, base + N)])
            pair_rows.append(wst[idx])
        pair_dim = pair_rows[0].shape[0] if pair_rows else 0
        sat_of = self.pairs[:, 0] if P else np.zeros(0, dtype=int)

        # static cones: per-satellite budget, per-beam bound by omega
        Gs, hs, cones = [], [], []
        for l in range(L):
            ks = np.flatnonzero(sat_of == l)
            if ks.size == 0:
                continue
            Gs += [_zero(n)] + [pair_rows[k] for k in ks]
            hs.append(np.r_[1.0, np.zeros(ks.size * pair_dim)])
            cones.append(("soc", 1 + ks.size * pair_dim))
        if cardinality:
            for k in range(P):
                Gs += [_sel(n, sl_om.start + k), pair_rows[k]]
                hs.append(np.zeros(1 + pair_dim))
                cones.append(("soc", 1 + pair_dim))
        static = conic.ConeBlock(sp.vstack(Gs).tocsr(), np.concatenate(hs), tuple(cones)) if Gs else None

        # objective epigraph template: ||[2 sqrt(c) w; 2 sqrt(c_om) om; q - 1]|| <= q + 1
        e_q = _sel(n, sl_q.start)
        parts = [e_q] + pair_rows
        if cardinality:
            parts.append(_sel(n, np.arange(sl_om.start, sl_om.stop)))
        parts.append(e_q)
        obj_T = sp.vstack(parts).tocsr()
        obj_h = np.zeros(obj_T.shape[0])
        obj_h[0], obj_h[-1] = 1.0, -1.0

        card_T = card_h = card_cones = None
        if cardinality:
            parts, hs, cones, self_rows = [], [], [], []
            for l in range(L):
                ks = np.flatnonzero(sat_of == l)
                if ks.size == 0:
                    continue
                e_z = _sel(n, sl_ze.start + l)
                parts += [e_z, _sel(n, sl_om.start + ks), e_z]
                hs.append(np.r_[self.cfg.u_max + 1.0, np.zeros(ks.size), self.cfg.u_max - 1.0])
                cones.append(("soc", ks.size + 2))
                self_rows.append(ks)
            card_T = sp.vstack(parts).tocsr()
            card_h = np.concatenate(hs)
            card_cones = (tuple(cones), self_rows)

        exp_blk = seg_blk = None
        if mode == "fp":
            parts, hs = [], []
            for g0, t0 in ((sl_gt.start, sl_tt.start), (sl_ga.start, sl_t.start)):
                for u in range(U):
                    parts += [_sel(n, g0 + u, LN2), _zero(n), _sel(n, t0 + u)]
                    hs.append([0.0, 1.0, 0.0])
            exp_blk = conic.ConeBlock(sp.vstack(parts).tocsr(), np.concatenate(hs),
                                      tuple([("exp", 3)] * (2 * U)))
            tau = self.cfg.tau_ho
            F = (_sel(n, np.arange(sl_gt.start, sl_gt.stop), tau)
                 + _sel(n, np.arange(sl_ga.start, sl_ga.stop), 1.0 - tau)).tocsr()
            seg_blk = conic.ConeBlock(F, -self.rates.astype(float), (("nonneg", U),))

        lay = _Layout(n=n, lower=prog.lower.copy(), upper=prog.upper.copy(),
                      names=list(prog.names), sl_w=sl_w, sl_g=sl_g, sl_q=sl_q, sl_om=sl_om,
                      sl_ze=sl_ze, sl_gt=sl_gt, sl_ga=sl_ga, sl_tt=sl_tt, sl_t=sl_t,
                      w=w, g=g, geq=geq, pair_rows=pair_rows, pair_dim=pair_dim,
                      static=static, obj_T=obj_T, obj_h=obj_h, card_T=card_T, card_h=card_h,
                      card_cones=card_cones, exp_blk=exp_blk, seg_blk=seg_blk, gate_cache={})
        self._cache[key] = lay
        return lay

    def _gated(self, lay, gate):
        """Signal template for every user under a (l, u) gate mask.

        Returns ``(T, aim)``: ``T`` stacks, per user, the rows
        ``[Re A_u; Psi_u g_u (re, im); Re A_u]`` and ``aim`` the nonzero
        ``Im A_u`` rows.
        """
        key = None if gate is None else np.asarray(gate, dtype=float).tobytes()
        if key in lay.gate_cache:
            return lay.gate_cache[key]
        L, U = self.L, self.U
        LU = L * U
        gate = np.ones((L, U)) if gate is None else np.asarray(gate, dtype=float)
        uu = np.arange(U)
        # signal sums A_u = sum_l abar[l, u] gate[l, u] g[l, u, u]
        sig_cols = (np.arange(L)[None, :] * U * U + (uu * U + uu)[:, None]).ravel()
        C = sp.csr_matrix(((self.ab * gate).T.ravel(), (np.repeat(uu, L), sig_cols)),
                          shape=(U, L * U * U))
        A = lay.g.transform(C)
        # stacked Psi_u g_u with g_u ordered stream-major (index i*L + l)
        blocks = []
        for u in range(U):
            idx = ((np.arange(L)[None, :] * U + u) * U + np.arange(U)[:, None]).ravel()
            S = sp.csr_matrix((np.tile(gate[:, u], U), (np.arange(LU), idx)), shape=(LU, L * U * U))
            blocks.append(sp.csr_matrix(self.psi[u]) @ S)
        pg = lay.g.transform(sp.vstack(blocks).tocsr())
        full = sp.vstack([A.re, pg.re, pg.im]).tocsr()
        m = 2 + 2 * LU
        order = np.empty((U, m), dtype=int)
        order[:, 0] = uu
        order[:, -1] = uu
        order[:, 1:1 + LU] = U + uu[:, None] * LU + np.arange(LU)
        order[:, 1 + LU:m - 1] = U + U * LU + uu[:, None] * LU + np.arange(LU)
        T = full[order.ravel()]
        aim = A.im if A.im.nnz else None
        if aim is not None:
            keep = np.diff(aim.indptr) > 0
            aim = aim[keep]
        lay.gate_cache[key] = (T, aim)
        return T, aim

    # -- program generation -------------------------------------------------
    def _base(self, lay, z, mu, weights_w, weights_om, const):
        """Equalities, power cones, cardinality and the objective epigraph."""
        n = lay.n
        prog = ConeProgram(n_vars=n, objective=np.zeros(n), lower=lay.lower, upper=lay.upper,
                           names=lay.names)
        prog.objective_constant = const
        prog.objective[lay.sl_q.start] = 1.0
        if lay.geq is not None:
            prog.add_eq(lay.geq, np.zeros(lay.geq.shape[0]))
        if lay.static is not None:
            prog.add_block(lay.static)

        scale = [np.ones(1)]
        for l, u in self.pairs:
            scale.append(np.full(lay.pair_dim, 2.0 * math.sqrt(weights_w[l, u])))
        if lay.sl_om is not None:
            c_om = weights_om[self.pairs[:, 0], self.pairs[:, 1]]
            scale.append(2.0 * np.sqrt(np.maximum(c_om, 0.0)))
        scale.append(np.ones(1))
        G = _scaled(lay.obj_T, np.concatenate(scale))
        prog.add_block(conic.ConeBlock(G.tocsr(), lay.obj_h, (("soc", G.shape[0]),)))

        if lay.sl_om is not None:
            # mu is in watts per unit of slack, like the power objective
            prog.objective[lay.sl_ze] = mu / self.cfg.p_rad
            cones, groups = lay.card_cones
            scale = []
            for ks in groups:
                zk = z[self.pairs[ks, 0], self.pairs[ks, 1]]
                scale += [np.ones(1), 2.0 * np.sqrt(zk), np.ones(1)]
            G = _scaled(lay.card_T, np.concatenate(scale))
            prog.add_block(conic.ConeBlock(G.tocsr(), lay.card_h, cones))
        return prog

    def _weights(self, prev, z, new_link_cost: bool):
        tau = self.cfg.tau_ho
        prev = np.zeros((self.L, self.U)) if prev is None else prev
        ww = tau * prev + (1.0 - tau)
        wo = None
        if new_link_cost and z is not None:
            wo = z * (1.0 - prev) * self.p_ho_n
        return ww, wo

    def _finalize(self, prog, lay):
        prog.meta["decode"] = lambda x, lay=lay: self.decode(lay, x)
        prog.meta["layout"] = lay
        return prog

    def soc_program(self, z=None, mu=0.0, prev=None, cardinality=True,
                    imag_gates=(), eta=None, const=0.0) -> ConeProgram:
        """Exact single-rate SOC form: SINR_u >= eta_u on the full gains.

        ``imag_gates`` adds zero-imaginary-part equalities for extra gated
        signal sums (used to build feasible starting points for later frames).
        """
        lay = self._allocate("soc", cardinality)
        ww, wo = self._weights(prev, z, cardinality)
        prog = self._base(lay, z, mu, ww, wo, const)
        eta = self.cfg.eta(self.U) if eta is None else np.broadcast_to(eta, (self.U,))
        T, aim = self._gated(lay, None)
        if aim is not None:
            prog.add_eq(aim, np.zeros(aim.shape[0]))
        m = 2 + 2 * self.L * self.U
        scale = np.ones((self.U, m))
        scale[:, 0] = 1.0 / np.sqrt(eta)
        scale[:, -1] = 0.0
        h = np.zeros((self.U, m))
        h[:, -1] = 1.0
        G = _scaled(T, scale.ravel()).tocsr()
        prog.add_block(conic.ConeBlock(G, h.ravel(), tuple([("soc", m)] * self.U)))
        for gate in imag_gates:
            _, aim_g = self._gated(lay, gate)
            if aim_g is not None:
                prog.add_eq(aim_g, np.zeros(aim_g.shape[0]))
        return self._finalize(prog, lay)

    def fp_program(self, prev, lam_t, lam, z=None, mu=0.0, cardinality=True,
                   const=0.0) -> ConeProgram:
        """Quadratic-transform restriction of the two-segment rate constraint.

        For each segment ``2 lam Re A - lam^2 (||Psi g||^2 + 1) >= t - 1`` is
        written as a rotated cone; ``t >= 2^Gamma`` is an exponential cone.
        ``lam_t``/``lam`` are in physical units (1/sqrt(W)).
        """
        lay = self._allocate("fp", cardinality)
        n = lay.n
        ww, wo = self._weights(prev, z, cardinality)
        prog = self._base(lay, z, mu, ww, wo, const)
        U, m = self.U, 2 + 2 * self.L * self.U
        for gate, lvec, sl_t in ((prev, lam_t, lay.sl_tt), (None, lam, lay.sl_t)):
            lu = np.asarray(lvec, dtype=float) * self.sigma
            T, aim = self._gated(lay, gate)
            if aim is not None:
                prog.add_eq(aim, np.zeros(aim.shape[0]))
            key = ("E", sl_t.start)
            if key not in lay.gate_cache:
                r = np.concatenate([np.arange(U) * m, np.arange(U) * m + m - 1])
                c = np.concatenate([np.arange(U), np.arange(U)]) + sl_t.start
                lay.gate_cache[key] = sp.csr_matrix((-np.ones(2 * U), (r, c)), shape=(U * m, n))
            G = _scaled(T, np.repeat(2.0 * lu, m), lay.gate_cache[key]).tocsr()
            h = np.zeros((U, m))
            h[:, 0] = 2.0 - lu ** 2
            h[:, -1] = -lu ** 2
            prog.add_block(conic.ConeBlock(G, h.ravel(), tuple([("soc", m)] * U)))
        prog.add_block(lay.exp_blk)
        prog.add_block(lay.seg_blk)
        return self._finalize(prog, lay)

    def decode(self, lay, x) -> dict:
        L, U, N = self.L, self.U, self.N
        w = lay.w.evaluate(x).reshape(L, U, N) * self.wscale
        out = {"W": BeamformerSet(self.stats.frame_index, self.stats.sat_ids, w),
               "q": float(x[lay.sl_q.start]) * self.cfg.p_rad}
        if lay.sl_om is not None:
            om = np.zeros((L, U))
            om[self.pairs[:, 0], self.pairs[:, 1]] = x[lay.sl_om]
            out["omega"] = om
            out["zeta"] = x[lay.sl_ze].copy()
        if lay.sl_gt is not None:
            out["gamma_tilde"] = x[lay.sl_gt].copy()
            out["gamma"] = x[lay.sl_ga].copy()
        return out

    def solve(self, prog: ConeProgram):
        return conic.solve(prog, self.cfg.tol_feas, self.cfg.tol_gap, self.cfg.max_iter)


def build_frame1_program(stats: ChannelStats, z, mu: float, cfg: AlgoConfig) -> ConeProgram:
    z = np.asarray(z, dtype=float)
    if z.shape != stats.alpha_bar.shape:
        raise conic.BuildError("reweighting weights must have shape (L, U)")
    return FrameModel(stats, cfg).soc_program(z=z, mu=mu)


def build_framek_program(stats: ChannelStats, prev_delta, z, fp: FPAux, mu: float,
                         cfg: AlgoConfig) -> ConeProgram:
    prev = np.asarray(prev_delta, dtype=float)
    if prev.shape != stats.alpha_bar.shape:
        raise conic.BuildError("prev_delta must be aligned to the serving set, shape (L, U)")
    z = np.asarray(z, dtype=float)
    return FrameModel(stats, cfg).fp_program(prev, fp.lambda_tilde, fp.lam, z=z, mu=mu)


# ---------------------------------------------------------------------------
# auxiliary updates and schedule extraction


def update_fp_aux(W: BeamformerSet, stats: ChannelStats, prev_delta):
    """Optimal quadratic-transform multipliers ``A / B`` for both segments."""
    g = effective_gains(W, stats)
    out = []
    for gg in (gated_gains(g, prev_delta), g):
        mean, var, cross = rate_moments(gg, stats)
        den = var + cross.sum(axis=1) + stats.noise_var
        out.append(np.maximum(mean.real, 0.0) / den)
    return out[0], out[1]


def extract_schedule(W: BeamformerSet, cfg: AlgoConfig, previous: ScheduleMask | None = None):
    """Threshold beam powers into a mask; returns ``(mask, thresholded W)``.

    If a satellite keeps more than ``u_max`` beams, only the strongest
    ``u_max`` survive.
    """
    p = W.beam_power()
    delta = (p > cfg.delta_threshold * cfg.p_rad).astype(int)
    for l in range(delta.shape[0]):
        on = np.flatnonzero(delta[l])
        if on.size > cfg.u_max:
            order = on[np.argsort(-p[l, on], kind="stable")]
            delta[l, order[cfg.u_max:]] = 0
    w = W.w * delta[:, :, None]
    W2 = BeamformerSet(W.frame_index, W.sat_ids, w)
    return ScheduleMask.carry_over(delta, W.sat_ids, previous), W2


def check_solution(W: BeamformerSet, mask: ScheduleMask, stats: ChannelStats,
                   cfg: AlgoConfig, rate_tol: float = 1e-6):
    rates = segmented_rate(W, stats, mask, cfg.tau_ho)
    ok = bool(np.all(rates >= cfg.rate_vector(stats.num_users) - rate_tol))
    ok &= bool(np.all(mask.delta.sum(axis=1) <= cfg.u_max))
    ok &= bool(np.all(W.sat_power() <= cfg.p_rad * (1.0 + 1e-8)))
    return ok, rates


def _clip_power(W: BeamformerSet, p_rad: float) -> BeamformerSet:
    """Scale satellites that exceed the budget by solver round-off."""
    sp_ = W.sat_power()
    scale = np.where(sp_ > p_rad, np.sqrt(p_rad / np.maximum(sp_, 1e-300)), 1.0)
    return BeamformerSet(W.frame_index, W.sat_ids, W.w * scale[:, None, None])


def _omega_from(W: BeamformerSet, p_rad: float) -> np.ndarray:
    return np.sqrt(W.beam_power() / p_rad)


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), 1e-12)


def _infeasible(stats, previous, statuses, trace, msg="") -> FrameSolution:
    W = BeamformerSet.zeros(stats)
    mask = ScheduleMask.carry_over(np.zeros(stats.alpha_bar.shape, dtype=int), stats.sat_ids,
                                   previous)
    return FrameSolution(W, mask, None, np.zeros(stats.num_users), False, (0, 0),
                         statuses, trace, msg)


# ---------------------------------------------------------------------------
# initial points


def mrt_initial(stats: ChannelStats, cfg: AlgoConfig, support=None) -> BeamformerSet:
    """Matched-filter beams sized for each user's SINR target, ignoring interference.

    Every link in ``support`` (default: the nearest-satellite link of each
    user) gets ``sqrt(p) conj(b)/||b||`` with a common per-user power chosen so
    that the coherent noise-limited SINR meets the single-segment target;
    satellites are then scaled back to the power budget.
    """
    L, U, N = stats.b.shape
    if support is None:
        support = np.zeros((L, U), dtype=bool)
        support[np.argmax(stats.gamma, axis=0), np.arange(U)] = True
    eta = cfg.eta(U)
    w = np.zeros((L, U, N), dtype=complex)
    for u in range(U):
        ls = np.flatnonzero(support[:, u])
        bn = np.linalg.norm(stats.b[ls, u], axis=1)
        amp = float(np.sum(stats.alpha_bar[ls, u] * bn))
        if amp <= 0:
            continue
        p = eta[u] * stats.noise_var / amp ** 2
        for l, n_ in zip(ls, bn):
            if n_ > 0:
                w[l, u] = math.sqrt(p) * stats.b[l, u].conj() / n_
    return _clip_power(BeamformerSet(stats.frame_index, stats.sat_ids, w), cfg.p_rad)


def _initial_point(model: FrameModel, prev, statuses):
    """Convex single-rate relaxation (no cardinality) as a starting point.

    Its solution meets the QoS with the data segment alone and keeps both
    signal sums real, so it is feasible for the quadratic-transform program
    at the multipliers it induces.
    """
    gates = () if prev is None or not np.any(prev) else (prev,)
    prog = model.soc_program(prev=prev, cardinality=False, imag_gates=gates)
    res = model.solve(prog)
    statuses.append(("init", res.status.value))
    if not res.optimal:
        return None
    return _clip_power(model.decode(prog.meta["layout"], res.x)["W"], model.cfg.p_rad)


# ---------------------------------------------------------------------------
# frame solvers


def _raw_mask(W: BeamformerSet, cfg: AlgoConfig) -> np.ndarray:
    return (W.beam_power() > cfg.delta_threshold * cfg.p_rad).astype(int)


def cover_schedule(delta: np.ndarray, power: np.ndarray, stats: ChannelStats,
                   cfg: AlgoConfig) -> np.ndarray | None:
    """Capacity-respecting support that serves every user.

    Returns ``delta`` unchanged if it already covers all users.  Otherwise
    each user is matched to one satellite slot (``u_max`` slots per
    satellite) maximising beam power, with the link's mean channel strength
    breaking ties among sub-threshold beams; spare slots are then refilled
    with the strongest beams of ``delta``.  ``None`` if capacity is short.
    """
    L, U = delta.shape
    if np.all(delta.sum(axis=0) >= 1):
        return delta
    if L * cfg.u_max < U:
        return None
    strength = stats.alpha_bar ** 2 * np.sum(np.abs(stats.b) ** 2, axis=2)
    usable = strength > 0
    if not np.all(usable.any(axis=0)):
        return None
    floor = cfg.delta_threshold * cfg.p_rad
    score = power + floor * strength / strength.max()
    score = np.where(usable, score, -1e300)
    cost = -np.repeat(score, cfg.u_max, axis=0)
    rows, cols = linear_sum_assignment(cost)
    out = np.zeros_like(delta)
    out[rows // cfg.u_max, cols] = 1
    for l, u in sorted(zip(*np.nonzero(delta)), key=lambda lu: -power[lu]):
        if out[l, u] == 0 and out[l].sum() < cfg.u_max:
            out[l, u] = 1
    return out


class _SupportPool:
    """Fixed-support re-solves of the schedules visited by the outer loop.

    Each distinct support that already meets the cardinality limit is
    re-optimised once; the cheapest feasible one is remembered.
    """

    def __init__(self, stats, cfg, previous, statuses):
        self.stats, self.cfg, self.previous, self.statuses = stats, cfg, previous, statuses
        self.seen = set()
        self.best = None

    def offer(self, delta: np.ndarray, init: BeamformerSet | None = None, power=None):
        if not self.cfg.polish or not np.any(delta):
            return
        if np.any(delta.sum(axis=1) > self.cfg.u_max):
            return
        if power is not None:
            covered = cover_schedule(delta, power, self.stats, self.cfg)
            if covered is None:
                return
            if covered is not delta:
                delta, init = covered, None  # a new support has no warm start
        key = delta.tobytes()
        if key in self.seen:
            return
        self.seen.add(key)
        mask = ScheduleMask.carry_over(delta, self.stats.sat_ids, self.previous)
        sol = _solve_fixed(self.stats, mask, self.cfg, self.previous, init=init,
                           statuses=self.statuses, tag="polish")
        if sol is not None and sol.feasible:
            if self.best is None or sol.power.total < self.best.power.total:
                self.best = sol


def _finish(model, W, stats, cfg, previous, statuses, trace, iters, inner_objs, warning="",
            pool: _SupportPool | None = None):
    mask, Wt = extract_schedule(W, cfg, previous)
    Wt = _clip_power(Wt, cfg.p_rad)
    ok, rates = check_solution(Wt, mask, stats, cfg)
    pool = _SupportPool(stats, cfg, previous, statuses) if pool is None else pool
    pool.offer(mask.delta, Wt if ok else None, power=W.beam_power())
    best = pool.best
    if best is not None and (not ok or best.power.total < frame_power(Wt, mask, cfg.tau_ho, cfg.p_ho).total):
        mask, Wt, rates, ok = best.mask, best.W, best.rates, True
    power = frame_power(Wt, mask, cfg.tau_ho, cfg.p_ho)
    if not ok:
        warning = (warning + "; " if warning else "") + "QoS or cardinality violated after thresholding"
    return FrameSolution(Wt, mask, power, rates, ok, iters, statuses, trace, warning, inner_objs)


def _sparsity(omega) -> int:
    return int(np.sum(omega > 1e-3))


def solve_frame1(stats: ChannelStats, cfg: AlgoConfig, previous: ScheduleMask | None = None) -> FrameSolution:
    """Reweighted l2 loop on the exact SOC program (no links established yet)."""
    model = FrameModel(stats, cfg)
    statuses, trace = [], []
    W0 = _initial_point(model, None, statuses)
    if W0 is None:
        return _infeasible(stats, previous, statuses, trace, "initial relaxation infeasible")
    z = 1.0 / (_omega_from(W0, cfg.p_rad) ** 2 + cfg.epsilon)
    mu = cfg.mu0
    pool = _SupportPool(stats, cfg, previous, statuses)
    W, prev_obj, outer = W0, None, 0
    for outer in range(1, cfg.outer_max + 1):
        prog = model.soc_program(z=z, mu=mu)
        res = model.solve(prog)
        statuses.append(("outer", res.status.value))
        if not res.optimal:
            if outer == 1:
                return _infeasible(stats, previous, statuses, trace, res.message)
            log.warning("frame %d: %s at outer iteration %d; keeping previous iterate",
                        stats.frame_index, res.status.value, outer)
            return _finish(model, W, stats, cfg, previous, statuses, trace, (outer, 0), [],
                           f"solver {res.status.value} at outer {outer}", pool)
        d = model.decode(prog.meta["layout"], res.x)
        W = d["W"]
        viol = conic.check_feasibility(prog, res.x)
        trace.append({"outer": outer, "inner": 0, "objective": res.objective_value,
                      "max_violation": max(viol.values()), "mu": mu,
                      "sparsity": _sparsity(d["omega"])})
        obj = d["q"]
        z = 1.0 / (d["omega"] ** 2 + cfg.epsilon)
        mu = min(cfg.rho * mu, cfg.mu_max)
        raw = _raw_mask(W, cfg)
        card_ok = np.all(raw.sum(axis=1) <= cfg.u_max)
        pool.offer(extract_schedule(W, cfg)[0].delta, power=W.beam_power())
        if prev_obj is not None and _rel_change(obj, prev_obj) < cfg.rel_tol and card_ok:
            break
        prev_obj = obj
    return _finish(model, W, stats, cfg, previous, statuses, trace, (outer, 0), [], pool=pool)


def _fp_loop(model: FrameModel, prev, W, statuses, trace, inner_objs, z=None, mu=0.0,
             cardinality=True, outer=0, const=0.0):
    """Inner quadratic-transform iterations; returns (W, decoded, ok, count)."""
    cfg = model.cfg
    stats = model.stats
    prev_obj, last, count = None, None, 0
    aux = update_fp_aux(W, stats, prev)
    for inner in range(1, cfg.inner_max + 1):
        lam_t, lam = aux
        prog = model.fp_program(prev, lam_t, lam, z=z, mu=mu, cardinality=cardinality,
                                const=const)
        res = model.solve(prog)
        statuses.append(("inner", res.status.value))
        if not res.optimal:
            return W, last, False, count, res
        count += 1
        d = model.decode(prog.meta["layout"], res.x)
        W = d["W"]
        last = d
        inner_objs.append((outer, inner, res.objective_value))
        viol = conic.check_feasibility(prog, res.x)
        trace.append({"outer": outer, "inner": inner, "objective": res.objective_value,
                      "max_violation": max(viol.values()), "mu": mu,
                      "sparsity": _sparsity(d["omega"]) if "omega" in d else -1})
        obj = d["q"]
        aux = update_fp_aux(W, stats, prev)
        # a fixed point of the multipliers makes the next solve a repeat
        fixed = all(np.all(np.abs(a - b) <= cfg.rel_tol * np.maximum(np.abs(b), 1e-300))
                    for a, b in zip(aux, (lam_t, lam)))
        if fixed or (prev_obj is not None and _rel_change(obj, prev_obj) < cfg.rel_tol):
            break
        prev_obj = obj
    return W, last, True, count, None


def solve_framek(stats: ChannelStats, prev_mask: ScheduleMask | None, cfg: AlgoConfig) -> FrameSolution:
    """Double loop: reweighting outside, quadratic-transform iterations inside."""
    prev = aligned_previous(prev_mask, stats.sat_ids, stats.num_users).astype(float)
    if not np.any(prev):
        # no established links: the two-segment constraint is the single-rate one
        return solve_frame1(stats, cfg, prev_mask)
    model = FrameModel(stats, cfg)
    statuses, trace, inner_objs = [], [], []
    W = _initial_point(model, prev, statuses)
    if W is None:
        W = mrt_initial(stats, cfg, support=np.ones(prev.shape, dtype=bool))
    z = 1.0 / (_omega_from(W, cfg.p_rad) ** 2 + cfg.epsilon)
    mu = cfg.mu0
    pool = _SupportPool(stats, cfg, prev_mask, statuses)
    if np.all(prev.sum(axis=0) >= 1):
        pool.offer(prev.astype(int))  # incumbent: keep every link, no handover
    prev_obj, total_inner, outer = None, 0, 0
    for outer in range(1, cfg.outer_max + 1):
        W_new, d, ok, cnt, res = _fp_loop(model, prev, W, statuses, trace, inner_objs,
                                          z=z, mu=mu, outer=outer)
        total_inner += cnt
        if d is None:
            if outer == 1:
                return _infeasible(stats, prev_mask, statuses, trace, res.message)
            log.warning("frame %d: %s at outer iteration %d; keeping previous iterate",
                        stats.frame_index, res.status.value, outer)
            return _finish(model, W, stats, cfg, prev_mask, statuses, trace,
                           (outer, total_inner), inner_objs, f"solver {res.status.value}", pool)
        W = W_new
        if not ok:
            log.warning("frame %d: inner solve failed at outer %d; keeping last iterate",
                        stats.frame_index, outer)
            return _finish(model, W, stats, cfg, prev_mask, statuses, trace,
                           (outer, total_inner), inner_objs, f"solver {res.status.value}", pool)
        obj = d["q"]
        z = 1.0 / (d["omega"] ** 2 + cfg.epsilon)
        mu = min(cfg.rho * mu, cfg.mu_max)
        raw = _raw_mask(W, cfg)
        card_ok = np.all(raw.sum(axis=1) <= cfg.u_max)
        pool.offer(extract_schedule(W, cfg)[0].delta, power=W.beam_power())
        if prev_obj is not None and _rel_change(obj, prev_obj) < cfg.rel_tol and card_ok:
            break
        prev_obj = obj
    return _finish(model, W, stats, cfg, prev_mask, statuses, trace, (outer, total_inner),
                   inner_objs, pool=pool)


def solve_frame(stats: ChannelStats, prev_mask: ScheduleMask | None, cfg: AlgoConfig) -> FrameSolution:
    if prev_mask is None:
        return solve_frame1(stats, cfg)
    return solve_framek(stats, prev_mask, cfg)


# ---------------------------------------------------------------------------
# fixed-schedule transmitter (shared with the baselines)


def _solve_fixed(stats: ChannelStats, mask: ScheduleMask, cfg: AlgoConfig,
                 previous: ScheduleMask | None, beams: str = "full", init=None,
                 statuses=None, tag: str = "fixed") -> FrameSolution | None:
    """Optimise beams on a given support; the schedule itself is a constant."""
    statuses = [] if statuses is None else statuses
    trace, inner_objs = [], []
    support = mask.delta.astype(bool)
    prev = mask.prev_delta.astype(float)
    try:
        model = FrameModel(stats, cfg, support=support, beams=beams)
    except InfeasibleSchedule as exc:
        return _infeasible(stats, previous, statuses, trace, str(exc))
    new_links = mask.delta * (1 - mask.prev_delta)
    const = cfg.p_ho * new_links.sum() / cfg.p_rad
    if not np.any(prev):
        prog = model.soc_program(prev=prev, cardinality=False, const=const)
        res = model.solve(prog)
        statuses.append((tag, res.status.value))
        if not res.optimal:
            return FrameSolution(BeamformerSet.zeros(stats), mask, None,
                                 np.zeros(stats.num_users), False, (1, 0), statuses, trace,
                                 res.message)
        W = model.decode(prog.meta["layout"], res.x)["W"]
        iters = (1, 0)
    else:
        W = init
        if W is None:
            W = _initial_point(model, prev, statuses)
        if W is None:
            W = mrt_initial(stats, cfg, support=support)
        W, d, ok, cnt, res = _fp_loop(model, prev, W, statuses, trace, inner_objs,
                                      cardinality=False, const=const)
        if d is None:
            return FrameSolution(BeamformerSet.zeros(stats), mask, None,
                                 np.zeros(stats.num_users), False, (1, 0), statuses, trace,
                                 res.message if res is not None else "")
        iters = (1, cnt)
    W = _clip_power(BeamformerSet(W.frame_index, W.sat_ids, W.w * support[:, :, None]), cfg.p_rad)
    ok, rates = check_solution(W, mask, stats, cfg)
    power = frame_power(W, mask, cfg.tau_ho, cfg.p_ho)
    return FrameSolution(W, mask, power, rates, ok, iters, statuses, trace,
                         "" if ok else "QoS violated", inner_objs)
