import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leohandover.channel import (
    array_response,
    db_to_linear,
    noise_variance,
    path_gain,
    psd_factor,
    rician_params,
    sample_instantaneous,
    stats_from_links,
    steering_vector,
)

from conftest import random_stats


def test_noise_variance_table_values():
    s2 = noise_variance(-173.855, 250e6, 4.0)
    assert 10 * math.log10(s2) + 30 == pytest.approx(-85.876, abs=1e-3)
    assert s2 == pytest.approx(2.585e-12, rel=1e-3)


def test_free_space_loss_590km():
    g = path_gain(590e3, 0.0, 12e9)
    assert -10 * math.log10(g) == pytest.approx(169.45, abs=0.01)
    assert path_gain(2 * 590e3) == pytest.approx(g / 4, rel=1e-12)
    assert path_gain(590e3, visible=False) == 0.0
    with pytest.raises(ValueError):
        path_gain(0.0)


def test_rician_params_closed_form():
    ab, be = rician_params(1.0, 1.0)
    assert (float(ab), float(be)) == pytest.approx((0.5, 0.25))
    ab, be = rician_params(3.0, 1e12)
    assert float(ab) == pytest.approx(math.sqrt(1.5), rel=1e-6)
    assert float(be) == pytest.approx(0.0, abs=1e-6)
    assert tuple(map(float, rician_params(0.0, 5.0))) == (0.0, 0.0)


def test_steering_vector_cases():
    np.testing.assert_allclose(steering_vector(0.3, 0.2, 1, 1), [1.0])
    np.testing.assert_allclose(steering_vector(0.0, math.pi / 2, 4, 4), np.ones(16), atol=1e-12)
    # phi_h = 0.5 cos(az) cos(el) = 0.25 with az=0, el=pi/3
    np.testing.assert_allclose(steering_vector(0.0, math.pi / 3, 2, 1), [1, np.exp(-1j * np.pi / 2)],
                               atol=1e-12)


def test_array_response_pattern():
    b0 = array_response(0.4, 0.7, 0.0, 4, 4)
    assert np.sum(np.abs(b0) ** 2) == pytest.approx(16 * 3 / (2 * math.pi))
    np.testing.assert_array_equal(array_response(0.4, 0.7, math.pi / 2, 4, 4), 0)
    b = array_response(0.4, 0.7, math.pi / 3, 4, 4)
    assert np.sum(np.abs(b) ** 2) == pytest.approx(16 * 3 / (2 * math.pi) * 0.25)


def test_scalar_stats():
    s = stats_from_links([[2.0]], [[3.0]], [[[1.0 + 0j]]], noise_var=1.0)
    beta = 2.0 / 8
    np.testing.assert_allclose(s.Omega[0], [[beta]])
    np.testing.assert_allclose(s.Q[0], [[beta]])
    np.testing.assert_allclose(s.Psi[0], [[math.sqrt(beta)]])


def test_pure_los_singular_factor():
    rng = np.random.default_rng(2)
    L, U = 2, 2
    s = stats_from_links(np.ones((L, U)), np.full((L, U), np.inf), rng.standard_normal((L, U, 2)) + 0j, 1.0)
    assert np.all(s.beta == 0) and np.all(s.Q == 0)
    for u in range(U):
        np.testing.assert_allclose(s.Psi[u].T @ s.Psi[u], s.Omega[u], atol=1e-12)


def test_psd_factor_rejects_indefinite():
    from leohandover.channel import FactorizationError
    with pytest.raises(FactorizationError):
        psd_factor(np.diag([1.0, -1.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_psi_reconstruction(L, U, seed):
    s = random_stats(np.random.default_rng(seed), L, U, 2)
    for u in range(U):
        err = np.linalg.norm(s.Psi[u].conj().T @ s.Psi[u] - s.Omega[u])
        assert err <= 1e-10 * max(1.0, np.linalg.norm(s.Omega[u]))


def test_sampler_deterministic_los():
    s = stats_from_links([[2.0]], [[np.inf]], [[[1.0 + 0j]]], 1.0)
    a = sample_instantaneous(s, np.random.default_rng(0), 5, convention="componentwise")
    np.testing.assert_allclose(a, np.broadcast_to(s.alpha_bar * (1 + 1j), a.shape))
    m = sample_instantaneous(s, np.random.default_rng(0), 5)
    np.testing.assert_allclose(m, np.broadcast_to(s.alpha_bar + 0j, m.shape))


def test_sampler_clt_and_power():
    s = stats_from_links([[1.0]], [[db_to_linear(15.0)]], [[[1.0 + 0j]]], 1.0)
    n = 10**6
    a = sample_instantaneous(s, np.random.default_rng(1), n, convention="componentwise")[:, 0, 0]
    ab, be = s.alpha_bar[0, 0], s.beta[0, 0]
    assert abs(a.real.mean() - ab) <= 4 * math.sqrt(be / n)
    assert np.mean(np.abs(a) ** 2) == pytest.approx(1.0, rel=0.01)
    m = sample_instantaneous(s, np.random.default_rng(1), n)[:, 0, 0]
    assert abs(m.mean() - ab) <= 4 * math.sqrt(be / n)
    assert np.var(m) == pytest.approx(be, rel=0.01)


def test_sampler_unknown_convention():
    s = random_stats(np.random.default_rng(0), 1, 1, 1)
    with pytest.raises(ValueError):
        sample_instantaneous(s, np.random.default_rng(0), 2, convention="bogus")
