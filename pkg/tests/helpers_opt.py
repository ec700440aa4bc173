"""Shared small instances for the optimizer and baseline tests."""
import numpy as np

from leohandover.channel import stats_from_links
from leohandover.optimizer import AlgoConfig, eta_target

CFG = AlgoConfig()


def scalar_los(n_ant=4, target_power=100.0, rate=CFG.rate_min, tau=CFG.tau_ho, first=True):
    """One satellite, one user, no scatter; noise set so p* = target_power."""
    b = np.full((1, 1, n_ant), 0.5 + 0j) * np.exp(1j * np.linspace(0, 1, n_ant))
    gamma = np.array([[2.0]])  # alpha_bar = 1
    eta = float(eta_target(rate, tau)) if first else 2.0 ** rate - 1.0
    bb = float(np.sum(np.abs(b) ** 2))
    noise = target_power * bb / eta  # from p* = eta sigma^2 / (abar^2 ||b||^2)
    s = stats_from_links(gamma, np.array([[np.inf]]), b, noise)
    return s, eta * noise / bb


def desk_instance(seed, L=3, U=3, N=2, snr_db=0.0):
    """Random moderate-interference instance scaled to the default power budget."""
    rng = np.random.default_rng(seed)
    gamma = rng.uniform(0.5, 2.0, (L, U))
    k = 10 ** (rng.uniform(1.5, 2.0, (L, U)))
    b = rng.standard_normal((L, U, N)) + 1j * rng.standard_normal((L, U, N))
    noise = CFG.p_rad / 10 ** (snr_db / 10)
    return stats_from_links(gamma, k, b, noise)
