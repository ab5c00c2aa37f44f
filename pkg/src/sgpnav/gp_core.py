"""Exact GP regression on (azimuth, elevation) inputs with a Rational Quadratic kernel.

The exact model is small-n only. It acts as the reference the sparse model
is checked against, and it is used directly when a dataset is tiny.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import (
    InvalidArgumentError,
    NumericalConditioningError,
    OptimizationDivergedError,
)

LOG_2PI = math.log(2.0 * math.pi)


def _require_positive_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class KernelParams:
    """Rational Quadratic kernel parameters.

    signal_variance is in occupancy units squared, lengthscale in radians,
    mixture (the RQ shape parameter) is dimensionless.
    """

    signal_variance: float = 1.0
    lengthscale: float = 0.1
    mixture: float = 1.0

    def __post_init__(self):
        for name in ("signal_variance", "lengthscale", "mixture"):
            object.__setattr__(self, name, _require_positive_finite(name, getattr(self, name)))


@dataclass(frozen=True)
class GPHyperparams:
    kernel: KernelParams = field(default_factory=KernelParams)
    noise_variance: float = 0.01

    def __post_init__(self):
        object.__setattr__(
            self, "noise_variance", _require_positive_finite("noise_variance", self.noise_variance)
        )

    def to_log_vector(self) -> np.ndarray:
        """Unconstrained vector (log sigma^2, log ell, log gamma, log noise)."""
        k = self.kernel
        return np.log([k.signal_variance, k.lengthscale, k.mixture, self.noise_variance])

    @classmethod
    def from_log_vector(cls, theta: np.ndarray) -> "GPHyperparams":
        v = np.exp(np.asarray(theta, dtype=float))
        return cls(KernelParams(v[0], v[1], v[2]), v[3])

    def to_dict(self) -> dict:
        k = self.kernel
        return {
            "signal_variance": k.signal_variance,
            "lengthscale": k.lengthscale,
            "mixture": k.mixture,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPHyperparams":
        return cls(
            KernelParams(d["signal_variance"], d["lengthscale"], d["mixture"]),
            d["noise_variance"],
        )


@dataclass(frozen=True)
class Dataset:
    """Training inputs (n, 2) in radians and targets (n,) in meters."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float).reshape(-1, 2)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"inputs ({x.shape[0]}) and targets ({y.shape[0]}) differ in length"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.targets.shape[0]


class PosteriorPrediction(NamedTuple):
    """Predictive mean and variance; arrays broadcast over the query set."""

    mean: np.ndarray
    variance: np.ndarray


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def _as_points(a) -> np.ndarray:
    pts = np.asarray(a, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or (pts.shape[0] > 0 and pts.shape[1] != 2):
        raise InvalidArgumentError(f"expected a list of 2-vectors, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("non-finite kernel input")
    return pts.reshape(-1, 2)


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, exact for identical points."""
    d2 = np.subtract.outer(a[:, 0], b[:, 0])
    d2 *= d2
    dy = np.subtract.outer(a[:, 1], b[:, 1])
    dy *= dy
    d2 += dy
    return d2


def rq_from_sqdist(d2: np.ndarray, params: KernelParams) -> np.ndarray:
    g = params.mixture
    u = 1.0 + d2 / (2.0 * g * params.lengthscale**2)
    return params.signal_variance * np.exp(-g * np.log(u))


def rq_kernel(z, z_prime, params: KernelParams) -> float:
    z = _as_points(z)
    zp = _as_points(z_prime)
    if z.shape[0] != 1 or zp.shape[0] != 1:
        raise InvalidArgumentError("rq_kernel takes two single 2-vectors")
    return float(rq_from_sqdist(sq_dist(z, zp), params)[0, 0])


def kernel_matrix(a, b, params: KernelParams) -> np.ndarray:
    return rq_from_sqdist(sq_dist(_as_points(a), _as_points(b)), params)


def rq_log_param_grads(d2: np.ndarray, params: KernelParams) -> tuple[np.ndarray, ...]:
    """Kernel values and derivatives w.r.t. log sigma^2, log ell, log gamma and d^2."""
    s2, ell, g = params.signal_variance, params.lengthscale, params.mixture
    r = d2 / (2.0 * g * ell**2)
    log_u = np.log1p(r)
    k = s2 * np.exp(-g * log_u)
    k_over_u = k / (1.0 + r)
    dk_dlog_s2 = k
    dk_dlog_ell = 2.0 * g * r * k_over_u
    dk_dlog_g = g * k * (r / (1.0 + r) - log_u)
    dk_dd2 = -k_over_u / (2.0 * ell**2)
    return k, dk_dlog_s2, dk_dlog_ell, dk_dlog_g, dk_dd2


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def jittered_cholesky(
    mat: np.ndarray, rel_jitter: float = 1e-10, retries: int = 3
) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``mat + jitter*I``.

    The plain factorization is tried first. On failure the jitter starts at
    ``rel_jitter * trace/n`` and grows tenfold on each further failure, for at
    most ``retries`` jittered attempts. Returns the lower factor and the
    jitter actually used.
    """
    n = mat.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    base = float(np.trace(mat)) / n
    if not math.isfinite(base):
        raise NumericalConditioningError("matrix has non-finite diagonal")
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = rel_jitter * max(base, np.finfo(float).tiny)
    eye = np.eye(n)
    for _ in range(retries):
        try:
            return np.linalg.cholesky(mat + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalConditioningError(
        f"Cholesky failed after {retries} jitter escalations (final jitter {jitter / 10:.3e})"
    )


def _chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return cho_solve((chol, True), rhs, check_finite=False)


# ---------------------------------------------------------------------------
# Posterior and marginal likelihood
# ---------------------------------------------------------------------------


def gp_posterior(
    data: Dataset,
    hyper: GPHyperparams,
    queries: Sequence,
    include_noise: bool = False,
) -> PosteriorPrediction:
    """Zero-mean GP predictive mean and (latent) variance at ``queries``."""
    q = _as_points(queries)
    kp = hyper.kernel
    prior_var = np.full(q.shape[0], kp.signal_variance)
    if len(data) == 0:
        var = prior_var + (hyper.noise_variance if include_noise else 0.0)
        return PosteriorPrediction(np.zeros(q.shape[0]), var)
    x, y = data.inputs, data.targets
    k_nn = kernel_matrix(x, x, kp) + hyper.noise_variance * np.eye(len(data))
    chol, _ = jittered_cholesky(k_nn)
    k_nq = kernel_matrix(x, q, kp)
    alpha = _chol_solve(chol, y)
    mean = k_nq.T @ alpha
    v = solve_triangular(chol, k_nq, lower=True, check_finite=False)
    var = np.maximum(prior_var - np.einsum("ij,ij->j", v, v), 0.0)
    if include_noise:
        var = var + hyper.noise_variance
    return PosteriorPrediction(mean, var)


def _lml_terms(data: Dataset, hyper: GPHyperparams):
    n = len(data)
    if n < 1:
        raise InvalidArgumentError("log marginal likelihood needs at least one observation")
    d2 = sq_dist(data.inputs, data.inputs)
    grads = rq_log_param_grads(d2, hyper.kernel)
    k_nn = grads[0] + hyper.noise_variance * np.eye(n)
    chol, _ = jittered_cholesky(k_nn)
    alpha = _chol_solve(chol, data.targets)
    lml = (
        -0.5 * float(data.targets @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * n * LOG_2PI
    )
    return lml, chol, alpha, grads


def log_marginal_likelihood(data: Dataset, hyper: GPHyperparams) -> float:
    return _lml_terms(data, hyper)[0]


def lml_and_grad(data: Dataset, hyper: GPHyperparams) -> tuple[float, np.ndarray]:
    """LML and its gradient w.r.t. ``hyper.to_log_vector()``."""
    lml, chol, alpha, (_, dk_s2, dk_ell, dk_g, _) = _lml_terms(data, hyper)
    n = len(data)
    k_inv = _chol_solve(chol, np.eye(n))
    w = np.outer(alpha, alpha) - k_inv
    grad = 0.5 * np.array(
        [
            np.sum(w * dk_s2),
            np.sum(w * dk_ell),
            np.sum(w * dk_g),
            hyper.noise_variance * np.trace(w),
        ]
    )
    return lml, grad


def optimize_hyperparams(
    data: Dataset,
    init: GPHyperparams,
    budget: int,
    step: float = 0.1,
    max_halvings: int = 30,
) -> GPHyperparams:
    """Maximize the LML by backtracking gradient ascent in log-parameter space.

    A step is accepted only if it does not decrease the LML, so the result
    is never worse than ``init``. The step grows by 1.5x after an accepted
    move and halves on rejection; the rule is deterministic.
    """
    if len(data) < 2:
        raise InvalidArgumentError("hyperparameter optimization needs n >= 2")
    if budget < 1:
        raise InvalidArgumentError("budget must be >= 1")
    theta = init.to_log_vector()
    current = init
    value, grad = lml_and_grad(data, current)
    for _ in range(budget):
        if not np.all(np.isfinite(grad)):
            raise OptimizationDivergedError("non-finite LML gradient", last_valid=current)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        direction = grad / max(1.0, gnorm)
        accepted = False
        for _ in range(max_halvings):
            trial_theta = theta + step * direction
            try:
                trial = GPHyperparams.from_log_vector(trial_theta)
                trial_value, trial_grad = lml_and_grad(data, trial)
            except (NumericalConditioningError, InvalidArgumentError, FloatingPointError):
                trial_value = -math.inf
            if math.isfinite(trial_value) and trial_value >= value:
                theta, current, value, grad = trial_theta, trial, trial_value, trial_grad
                step = min(step * 1.5, 1.0)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return current
