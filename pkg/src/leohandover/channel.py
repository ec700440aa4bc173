"""Statistical CSI: Rician link moments, UPA array response and the per-user
moment matrices used by the hardening-bound rate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .orbits import FrameSnapshot

SPEED_OF_LIGHT = 299_792_458.0
PATTERN_PEAK = math.sqrt(3.0 / (2.0 * math.pi))


class FactorizationError(ArithmeticError):
    def __init__(self, user: int, msg: str = ""):
        super().__init__(f"could not factor Omega for user {user}" + (f": {msg}" if msg else ""))
        self.user = user


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def noise_variance(noise_psd_dbm_hz: float, bandwidth_hz: float, noise_figure_db: float) -> float:
    """sigma^2 = F * N0 * B in watts."""
    return dbm_to_watts(noise_psd_dbm_hz) * bandwidth_hz * float(db_to_linear(noise_figure_db))


def path_gain(distance, boresight_angle=None, carrier_freq: float = 12e9, visible=True):
    """Free-space power gain (lambda / (4 pi d))^2; zero on invisible links.

    The element pattern is not included here; it enters through the array
    response.  ``boresight_angle`` is accepted for interface symmetry only.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    lam = SPEED_OF_LIGHT / carrier_freq
    gamma = (lam / (4.0 * np.pi * d)) ** 2
    return np.where(visible, gamma, 0.0)


def rician_params(gamma, rician_k):
    """Per-component LOS mean and scatter variance of the Rician gain."""
    gamma = np.asarray(gamma, dtype=float)
    k = np.asarray(rician_k, dtype=float)
    if np.any(k < 0):
        raise ValueError("Rician K-factor must be non-negative")
    # k = inf is the pure line-of-sight limit
    los = np.where(np.isinf(k), 1.0, k / (1.0 + np.where(np.isinf(k), 0.0, k)))
    alpha_bar = np.sqrt(los * gamma / 2.0)
    beta = gamma / (2.0 * (1.0 + k))
    return alpha_bar, beta


def steering_vector(theta_az, theta_el, Nh: int, Nv: int, spacing_over_lambda: float = 0.5):
    """UPA steering vector; broadcasting over leading angle dimensions.

    Returns an array of shape ``theta.shape + (Nh*Nv,)`` with the vertical
    index running fastest (Kronecker order horizontal (x) vertical).
    """
    if Nh < 1 or Nv < 1:
        raise ValueError("array dimensions must be >= 1")
    az = np.asarray(theta_az, dtype=float)
    el = np.asarray(theta_el, dtype=float)
    phi_h = spacing_over_lambda * np.cos(az) * np.cos(el)
    phi_v = spacing_over_lambda * np.sin(az) * np.cos(el)
    ah = np.exp(-2j * np.pi * phi_h[..., None] * np.arange(Nh))
    av = np.exp(-2j * np.pi * phi_v[..., None] * np.arange(Nv))
    return (ah[..., :, None] * av[..., None, :]).reshape(az.shape + (Nh * Nv,))


def element_gain(boresight_angle):
    """Amplitude pattern sqrt(3/(2 pi)) cos(theta), zero beyond pi/2."""
    th = np.asarray(boresight_angle, dtype=float)
    return np.where(th < np.pi / 2, PATTERN_PEAK * np.cos(th), 0.0)


def array_response(theta_az, theta_el, boresight_angle, Nh: int, Nv: int,
                   spacing_over_lambda: float = 0.5):
    g = element_gain(boresight_angle)
    return g[..., None] * steering_vector(theta_az, theta_el, Nh, Nv, spacing_over_lambda)


@dataclass(frozen=True)
class LinkStats:
    gamma: float
    rician_k: float
    alpha_bar: float
    beta: float
    b_vec: np.ndarray


@dataclass(frozen=True)
class ChannelStats:
    """Statistical CSI of one frame.

    Arrays indexed ``[l, u]`` follow the serving-set order.  ``T``, ``Q``
    are ``(U, L, L)``; ``Omega`` and ``Psi`` are ``(U, L*U, L*U)`` with the
    stacked gain vector ordered stream-major (``g_u = [g_{u,1}; ...; g_{u,U}]``).
    """

    frame_index: int
    sat_ids: tuple[int, ...]
    gamma: np.ndarray
    rician_k: np.ndarray
    alpha_bar: np.ndarray
    beta: np.ndarray
    b: np.ndarray
    T: np.ndarray
    Q: np.ndarray
    Omega: np.ndarray
    Psi: np.ndarray
    noise_var: float

    @property
    def num_sats(self) -> int:
        return self.alpha_bar.shape[0]

    @property
    def num_users(self) -> int:
        return self.alpha_bar.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.b.shape[2]

    def link(self, l: int, u: int) -> LinkStats:
        return LinkStats(
            float(self.gamma[l, u]), float(self.rician_k[l, u]),
            float(self.alpha_bar[l, u]), float(self.beta[l, u]), self.b[l, u].copy(),
        )

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "sat_ids": list(self.sat_ids),
            "gamma": self.gamma.tolist(),
            "rician_k": self.rician_k.tolist(),
            "alpha_bar": self.alpha_bar.tolist(),
            "beta": self.beta.tolist(),
            "b_re": self.b.real.tolist(),
            "b_im": self.b.imag.tolist(),
            "noise_var_w": self.noise_var,
        }


def moment_matrices(alpha_bar: np.ndarray, beta: np.ndarray):
    """T_u = abar abar^T + diag(beta), Q_u = diag(beta); both ``(U, L, L)``."""
    ab = alpha_bar.T
    bt = beta.T
    Q = np.einsum("ul,lm->ulm", bt, np.eye(ab.shape[1]))
    T = ab[:, :, None] * ab[:, None, :] + Q
    return T, Q


def assemble_omega(T: np.ndarray, Q: np.ndarray) -> np.ndarray:
    U, L, _ = T.shape
    omega = np.zeros((U, L * U, L * U))
    for u in range(U):
        for i in range(U):
            blk = Q[u] if i == u else T[u]
            omega[u, i * L:(i + 1) * L, i * L:(i + 1) * L] = blk
    return omega


def psd_factor(mat: np.ndarray, user: int = -1) -> np.ndarray:
    """Psi with Psi^H Psi = mat.

    Cholesky first, then Cholesky with a small diagonal jitter, then an
    eigen square root for singular matrices.
    """
    n = mat.shape[0]
    try:
        return np.linalg.cholesky(mat).conj().T
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * max(np.trace(mat).real, 0.0) / n
    if jitter > 0:
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(n)).conj().T
        except np.linalg.LinAlgError:
            pass
    herm = 0.5 * (mat + mat.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    scale = max(np.abs(vals).max(), 1e-300)
    if vals.min() < -1e-9 * scale:
        raise FactorizationError(user, f"matrix not PSD (min eigenvalue {vals.min():.3e})")
    return np.sqrt(np.clip(vals, 0.0, None))[:, None] * vecs.conj().T


def factor_omega(T: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Block-diagonal factor of every Omega_u, built block by block."""
    U, L, _ = T.shape
    psi = np.zeros((U, L * U, L * U))
    for u in range(U):
        fT = psd_factor(T[u], u)
        fQ = psd_factor(Q[u], u)
        for i in range(U):
            psi[u, i * L:(i + 1) * L, i * L:(i + 1) * L] = fQ if i == u else fT
    return psi


def stats_from_links(gamma, rician_k, b, noise_var: float, frame_index: int = 1,
                     sat_ids=None) -> ChannelStats:
    """Assemble ChannelStats from per-link gains, K-factors and array responses."""
    gamma = np.asarray(gamma, dtype=float)
    rician_k = np.asarray(rician_k, dtype=float)
    b = np.asarray(b, dtype=complex)
    alpha_bar, beta = rician_params(gamma, rician_k)
    T, Q = moment_matrices(alpha_bar, beta)
    L = gamma.shape[0]
    return ChannelStats(
        frame_index=frame_index,
        sat_ids=tuple(range(L)) if sat_ids is None else tuple(sat_ids),
        gamma=gamma,
        rician_k=rician_k,
        alpha_bar=alpha_bar,
        beta=beta,
        b=b,
        T=T,
        Q=Q,
        Omega=assemble_omega(T, Q),
        Psi=factor_omega(T, Q),
        noise_var=float(noise_var),
    )


def build_channel_stats(
    frame: FrameSnapshot,
    rng: np.random.Generator,
    *,
    carrier_freq: float = 12e9,
    Nh: int = 4,
    Nv: int = 4,
    rician_k_range_db=(15.0, 20.0),
    noise_var: float = None,
    spacing_over_lambda: float = 0.5,
    rx_gain_db: float = 0.0,
) -> ChannelStats:
    """Draw K-factors and assemble the frame's statistics.

    ``rx_gain_db`` is a flat user-terminal antenna gain folded into the
    large-scale gain (0 dB leaves pure free-space loss).
    """
    if noise_var is None:
        noise_var = noise_variance(-173.855, 250e6, 4.0)
    k_db = rng.uniform(rician_k_range_db[0], rician_k_range_db[1], size=frame.distance.shape)
    gamma = path_gain(frame.distance, frame.boresight_angle, carrier_freq, frame.visible)
    gamma = gamma * float(db_to_linear(rx_gain_db))
    b = array_response(frame.aod_az, frame.aod_el, frame.boresight_angle, Nh, Nv,
                       spacing_over_lambda)
    b = np.where(frame.visible[..., None], b, 0.0)
    return stats_from_links(gamma, db_to_linear(k_db), b, noise_var,
                            frame.frame_index, frame.serving_set)


def sample_instantaneous(stats: ChannelStats, rng: np.random.Generator, n_samples: int = 1,
                         convention: str = "moment") -> np.ndarray:
    """Draw complex link gains alpha, shape ``(n_samples, L, U)``.

    ``convention="moment"`` draws ``alpha = abar + CN(0, beta)``; its first
    and second moments are exactly the ones the hardening-bound rate uses.
    ``convention="componentwise"`` draws Re and Im independently from
    ``N(abar, beta)``, so ``E|alpha|^2 = gamma`` but every moment of the
    effective gain is twice the closed form (and the mean is rotated by
    45 degrees).
    """
    shape = (n_samples,) + stats.alpha_bar.shape
    ab, bt = stats.alpha_bar, stats.beta
    n1 = rng.standard_normal(shape)
    n2 = rng.standard_normal(shape)
    if convention == "moment":
        s = np.sqrt(bt / 2.0)
        return ab + s * n1 + 1j * s * n2
    if convention == "componentwise":
        s = np.sqrt(bt)
        return (ab + s * n1) + 1j * (ab + s * n2)
    raise ValueError(f"unknown convention {convention!r}")
