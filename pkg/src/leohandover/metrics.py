"""Beamformed gains, hardening-bound and segmented rates, and the
handover-aware power model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelStats, sample_instantaneous


@dataclass
class BeamformerSet:
    """Complex beamformers ``w[l, u]`` (shape ``(L, U, N)``), in sqrt(W)."""

    frame_index: int
    sat_ids: tuple[int, ...]
    w: np.ndarray

    @classmethod
    def zeros(cls, stats: ChannelStats) -> "BeamformerSet":
        L, U, N = stats.b.shape
        return cls(stats.frame_index, stats.sat_ids, np.zeros((L, U, N), dtype=complex))

    def beam_power(self) -> np.ndarray:
        return np.sum(np.abs(self.w) ** 2, axis=2)

    def sat_power(self) -> np.ndarray:
        return self.beam_power().sum(axis=1)

    def copy(self) -> "BeamformerSet":
        return BeamformerSet(self.frame_index, self.sat_ids, self.w.copy())


@dataclass
class ScheduleMask:
    """Current and previous-frame link indicators aligned to ``sat_ids``."""

    sat_ids: tuple[int, ...]
    delta: np.ndarray
    prev_delta: np.ndarray

    @classmethod
    def carry_over(cls, delta, sat_ids, previous: "ScheduleMask | None") -> "ScheduleMask":
        """Build a mask whose ``prev_delta`` is looked up by global satellite id.

        Satellites absent from the previous serving set get an all-zero row.
        """
        delta = np.asarray(delta, dtype=int)
        return cls(tuple(sat_ids), delta, aligned_previous(previous, sat_ids, delta.shape[1]))

    @property
    def handover_events(self) -> int:
        return int(np.sum(self.delta * (1 - self.prev_delta)))


def aligned_previous(previous: "ScheduleMask | None", sat_ids, num_users: int) -> np.ndarray:
    out = np.zeros((len(sat_ids), num_users), dtype=int)
    if previous is None:
        return out
    rows = {sid: r for r, sid in enumerate(previous.sat_ids)}
    if previous.delta.shape[1] != num_users:
        raise ValueError("previous mask has a different number of users")
    for r, sid in enumerate(sat_ids):
        if sid in rows:
            out[r] = previous.delta[rows[sid]]
    return out


@dataclass(frozen=True)
class PowerReport:
    per_satellite: np.ndarray
    total: float
    handover_power: float
    radiated_power: float
    handover_event_count: int


def effective_gains(W: BeamformerSet, stats: ChannelStats) -> np.ndarray:
    """g[l, u, i] = b(theta_{l,u})^T w_{l,i}."""
    return np.einsum("lun,lin->lui", stats.b, W.w)


def gated_gains(g: np.ndarray, prev_delta: np.ndarray) -> np.ndarray:
    """Handover-subframe gains: row (l, u) survives only if it was active before."""
    return g * np.asarray(prev_delta)[:, :, None]


def rate_moments(g: np.ndarray, stats: ChannelStats):
    """Closed-form moments of the effective gain.

    Returns ``(mean, var, cross)`` where ``mean[u] = E[Y_uu]``,
    ``var[u] = V[Y_uu]`` and ``cross[u, i] = E|Y_ui|^2`` (diagonal zeroed).
    """
    L, U, _ = g.shape
    diag = g[:, np.arange(U), np.arange(U)]
    mean = np.einsum("lu,lu->u", stats.alpha_bar, diag)
    var = np.einsum("lu,lu->u", stats.beta, np.abs(diag) ** 2)
    cross = np.einsum("lui,ulm,mui->ui", g.conj(), stats.T, g).real
    cross[np.arange(U), np.arange(U)] = 0.0
    return mean, var, cross


def _rate_from_gains(g: np.ndarray, stats: ChannelStats) -> np.ndarray:
    mean, var, cross = rate_moments(g, stats)
    sinr = np.abs(mean) ** 2 / (var + cross.sum(axis=1) + stats.noise_var)
    return np.log2(1.0 + sinr)


def sinr_omega(g: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Per-user SINR through the stacked form |abar^T g_uu|^2 / (g^H Omega g + sigma^2)."""
    L, U, _ = g.shape
    out = np.empty(U)
    for u in range(U):
        gu = g[:, u, :].T.reshape(-1)
        num = abs(np.dot(stats.alpha_bar[:, u], g[:, u, u])) ** 2
        den = np.real(gu.conj() @ stats.Omega[u] @ gu) + stats.noise_var
        out[u] = num / den
    return out


def hardening_rate(W: BeamformerSet, stats: ChannelStats) -> np.ndarray:
    return _rate_from_gains(effective_gains(W, stats), stats)


def handover_subframe_rate(W: BeamformerSet, stats: ChannelStats, prev_delta) -> np.ndarray:
    return _rate_from_gains(gated_gains(effective_gains(W, stats), prev_delta), stats)


def segmented_rate(W: BeamformerSet, stats: ChannelStats, mask: ScheduleMask,
                   tau_ho: float) -> np.ndarray:
    if not 0.0 < tau_ho < 1.0:
        raise ValueError("tau_ho must lie in (0, 1)")
    g = effective_gains(W, stats)
    r = _rate_from_gains(g, stats)
    r_ho = _rate_from_gains(gated_gains(g, mask.prev_delta), stats)
    return tau_ho * r_ho + (1.0 - tau_ho) * r


def frame_power(W: BeamformerSet, mask: ScheduleMask, tau_ho: float, p_ho: float) -> PowerReport:
    beam = W.beam_power()
    new_links = mask.delta * (1 - mask.prev_delta)
    ho = new_links * p_ho
    rad = tau_ho * mask.prev_delta * beam + (1.0 - tau_ho) * beam
    per_sat = (ho + rad).sum(axis=1)
    return PowerReport(
        per_satellite=per_sat,
        total=float(per_sat.sum()),
        handover_power=float(ho.sum()),
        radiated_power=float(rad.sum()),
        handover_event_count=int(new_links.sum()),
    )


def sample_effective_gains(g: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Y[s, u, i] = sum_l alpha[s, l, u] g[l, u, i] for sampled alphas."""
    return np.einsum("slu,lui->sui", alpha, g)


def ergodic_rate_mc(W: BeamformerSet, stats: ChannelStats, n_samples: int,
                    rng: np.random.Generator, convention: str = "moment",
                    batch: int = 20_000):
    """Monte-Carlo ergodic rate per user: ``(mean, standard_error)``."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    g = effective_gains(W, stats)
    U = g.shape[1]
    total = np.zeros(U)
    total_sq = np.zeros(U)
    shift = None
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        Y = sample_effective_gains(g, sample_instantaneous(stats, rng, m, convention))
        p = np.abs(Y) ** 2
        sig = p[:, np.arange(U), np.arange(U)]
        interf = p.sum(axis=2) - sig
        r = np.log2(1.0 + sig / (interf + stats.noise_var))
        if shift is None:
            shift = r.mean(axis=0)
        d = r - shift  # shifted sums avoid cancellation in the variance
        total += d.sum(axis=0)
        total_sq += (d ** 2).sum(axis=0)
        done += m
    mean_d = total / n_samples
    var = np.maximum(total_sq / n_samples - mean_d ** 2, 0.0)
    return shift + mean_d, np.sqrt(var / n_samples)


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    mean_se: np.ndarray
    var: np.ndarray
    var_se: np.ndarray
    cross: np.ndarray
    cross_se: np.ndarray


def mc_moments(W: BeamformerSet, stats: ChannelStats, n_samples: int,
               rng: np.random.Generator, convention: str = "moment") -> MomentEstimate:
    """Sample estimates (with standard errors) of E[Y_uu], V[Y_uu], E|Y_ui|^2."""
    g = effective_gains(W, stats)
    U = g.shape[1]
    Y = sample_effective_gains(g, sample_instantaneous(stats, rng, n_samples, convention))
    n = n_samples
    yuu = Y[:, np.arange(U), np.arange(U)]
    mean = yuu.mean(axis=0)
    dev = yuu - mean
    mean_se = np.sqrt(np.mean(np.abs(dev) ** 2, axis=0) / n)
    d2 = np.abs(dev) ** 2
    var = d2.sum(axis=0) / (n - 1)
    var_se = d2.std(axis=0, ddof=1) / np.sqrt(n)
    p = np.abs(Y) ** 2
    cross = p.mean(axis=0)
    cross_se = p.std(axis=0, ddof=1) / np.sqrt(n)
    cross[np.arange(U), np.arange(U)] = 0.0
    cross_se[np.arange(U), np.arange(U)] = 0.0
    return MomentEstimate(mean, mean_se, var, var_se, cross, cross_se)
