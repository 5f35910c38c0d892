import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def toeplitz_cov(h, n):
    """fGN covariance built term by term (no shared code with the package)."""
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            k = abs(i - j)
            out[i, j] = 0.5 * ((k + 1) ** (2 * h) - 2 * k ** (2 * h) + abs(k - 1) ** (2 * h))
    return out


def kalman_loglik(y, theta, sigma, level, tau2, x0=0.0):
    """Exact log-likelihood of the Euler chain observed at unit times (H = 1/2).

    One unit of the scheme is x -> c^m x + noise with c = 1 - theta * delta and
    noise variance sigma^2 * delta * sum_k c^(2k).
    """
    m = 2**level
    delta = 1.0 / m
    c = 1.0 - theta * delta
    a = c**m
    q = sigma**2 * delta * sum(c ** (2 * k) for k in range(m))
    mean, var = x0, 0.0
    ll = 0.0
    for obs in y:
        mean, var = a * mean, a * a * var + q
        s = var + tau2
        ll += -0.5 * (np.log(2 * np.pi * s) + (obs - mean) ** 2 / s)
        gain = var / s
        mean, var = mean + gain * (obs - mean), (1 - gain) * var
    return ll


def davies_harte_reference(h, m, z):
    # full-length Hermitian coefficients and a complex inverse FFT
    gam = np.array([0.5 * ((k + 1) ** (2 * h) - 2 * k ** (2 * h) + abs(k - 1) ** (2 * h)) for k in range(m + 1)])
    row = np.concatenate([gam, gam[-2:0:-1]])
    lam = np.clip(np.fft.fft(row).real, 0, None)
    w = np.zeros(2 * m, dtype=complex)
    w[0] = np.sqrt(lam[0] / (2 * m)) * z[0]
    w[m] = np.sqrt(lam[m] / (2 * m)) * z[1]
    for k in range(1, m):
        w[k] = np.sqrt(lam[k] / (4 * m)) * (z[2 * k] + 1j * z[2 * k + 1])
        w[2 * m - k] = np.conj(w[k])
    return (np.fft.ifft(w) * (2 * m)).real[:m]


def straight_line_paths(h, noise, level):
    """Pseudo and exact increments via dense linear algebra, one record ``(T, 2m)``."""
    m = 2**level
    T = noise.shape[0]
    delta = 1.0 / m
    unit = np.concatenate([davies_harte_reference(h, m, z) for z in noise])
    big = np.linalg.cholesky(toeplitz_cov(h, T * m))
    small_inv = np.linalg.inv(np.linalg.cholesky(toeplitz_cov(h, m)))
    exact = big @ np.kron(np.eye(T), small_inv) @ unit
    return unit * delta**h, exact * delta**h


def euler_ou_skeleton(theta, sigma, incr, m, x0=0.0):
    x, out = x0, []
    delta = 1.0 / m
    for k, d in enumerate(incr, start=1):
        x = x - theta * x * delta + sigma * d
        if k % m == 0:
            out.append(x)
    return np.array(out)
