import math

import numpy as np
import pytest

from sgpnav.gp_core import Dataset, GPHyperparams, KernelParams


# ---------------------------------------------------------------------------
# Dense oracles: textbook formulas with explicit inverses and loops
# ---------------------------------------------------------------------------


def oracle_rq(a, b, s2, ell, gamma):
    d2 = float(np.sum((np.asarray(a) - np.asarray(b)) ** 2))
    return s2 * (1.0 + d2 / (2.0 * gamma * ell * ell)) ** (-gamma)


def oracle_gram(xa, xb, s2, ell, gamma):
    return np.array([[oracle_rq(p, q, s2, ell, gamma) for q in xb] for p in xa])


def oracle_posterior(x, y, hyper, q):
    k = hyper.kernel
    kxx = oracle_gram(x, x, k.signal_variance, k.lengthscale, k.mixture)
    kxq = oracle_gram(x, q, k.signal_variance, k.lengthscale, k.mixture)
    inv = np.linalg.inv(kxx + hyper.noise_variance * np.eye(len(x)))
    mean = kxq.T @ inv @ y
    var = k.signal_variance - np.sum(kxq * (inv @ kxq), axis=0)
    return mean, var


def oracle_lml(x, y, hyper):
    k = hyper.kernel
    c = oracle_gram(x, x, k.signal_variance, k.lengthscale, k.mixture) + hyper.noise_variance * np.eye(len(x))
    sign, logdet = np.linalg.slogdet(c)
    assert sign > 0
    return float(-0.5 * y @ np.linalg.inv(c) @ y - 0.5 * logdet - 0.5 * len(x) * math.log(2 * math.pi))


def central_diff(f, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[i] = h
        g.flat[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def random_dataset(rng, n, scale=0.5, noise=0.1):
    x = rng.uniform(-scale, scale, size=(n, 2))
    y = np.sin(3 * x[:, 0]) + 0.5 * np.cos(2 * x[:, 1]) + noise * rng.standard_normal(n)
    return Dataset(x, y)


def random_hyper(rng):
    return GPHyperparams(
        KernelParams(
            signal_variance=float(rng.uniform(0.3, 3.0)),
            lengthscale=float(rng.uniform(0.1, 1.0)),
            mixture=float(rng.uniform(0.3, 5.0)),
        ),
        noise_variance=float(rng.uniform(0.01, 0.5)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# Trajectory oracles: dense trapezoidal integration of analytic rates
# ---------------------------------------------------------------------------


def trapezoid_abs_rate(rate, t0, t1, n=400001):
    """(1/T) * integral of |rate(t)| over [t0, t1] by the trapezoid rule."""
    t = np.linspace(t0, t1, n)
    return float(np.trapezoid(np.abs(rate(t)), t) / (t1 - t0))


def synthetic_log(t, **cols):
    """TrajectoryLog from column callables of t; missing columns are zero, v defaults to 1."""
    from sgpnav.metrics import LOG_COLUMNS, TrajectoryLog

    t = np.asarray(t, dtype=float)
    data = {"t": t, "v": np.ones_like(t)}
    for name in LOG_COLUMNS[1:]:
        if name in cols:
            data[name] = np.broadcast_to(cols[name](t), t.shape).astype(float)
        else:
            data.setdefault(name, np.zeros_like(t))
    return TrajectoryLog(**data)


def refine_midpoints(log):
    """Insert the linear midpoint of every interval."""
    from sgpnav.metrics import TrajectoryLog

    arr = log.as_array()
    mid = 0.5 * (arr[:-1] + arr[1:])
    out = np.empty((2 * len(arr) - 1, arr.shape[1]))
    out[0::2] = arr
    out[1::2] = mid
    return TrajectoryLog.from_array(out)
