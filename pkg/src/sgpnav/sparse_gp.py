"""Variational sparse GP regression with inducing points.

The variational distribution over the inducing outputs is a full Gaussian
``N(mean, L L^T)`` in the unwhitened parameterization. The evidence lower
bound is the uncollapsed form

    sum_i E_q[log N(y_i | f_i, noise)] - KL(q(u) || p(u)),

which reduces to the collapsed bound when ``q`` is at its optimum and to
the exact log marginal likelihood when the inducing inputs coincide with
the training inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgumentError, NumericalConditioningError, OptimizationDivergedError
from .gp_core import (
    LOG_2PI,
    Dataset,
    GPHyperparams,
    PosteriorPrediction,
    _as_points,
    rq_from_sqdist,
    rq_log_param_grads,
    sq_dist,
)

MODEL_FORMAT_VERSION = 1
INDUCING_JITTER = 1e-10


@dataclass(frozen=True)
class SparseGPModel:
    hyper: GPHyperparams
    inducing_inputs: np.ndarray
    variational_mean: np.ndarray
    variational_chol: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.inducing_inputs, dtype=float).reshape(-1, 2)
        mu = np.asarray(self.variational_mean, dtype=float).reshape(-1)
        chol = np.tril(np.asarray(self.variational_chol, dtype=float))
        m = z.shape[0]
        if m < 1:
            raise InvalidArgumentError("a sparse model needs at least one inducing input")
        if mu.shape != (m,) or chol.shape != (m, m):
            raise InvalidArgumentError("variational parameters do not match inducing count")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(chol))):
            raise InvalidArgumentError("sparse model contains non-finite values")
        object.__setattr__(self, "inducing_inputs", z)
        object.__setattr__(self, "variational_mean", mu)
        object.__setattr__(self, "variational_chol", chol)

    @property
    def num_inducing(self) -> int:
        return self.inducing_inputs.shape[0]

    @property
    def variational_cov(self) -> np.ndarray:
        return self.variational_chol @ self.variational_chol.T

    @classmethod
    def prior(cls, hyper: GPHyperparams, inducing_inputs) -> "SparseGPModel":
        """Untrained model: q(u) equals the prior p(u)."""
        z = np.asarray(inducing_inputs, dtype=float).reshape(-1, 2)
        chol = _inducing_cholesky(hyper, z)
        return cls(hyper, z, np.zeros(z.shape[0]), chol)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "sgpnav.sparse_gp",
            "version": MODEL_FORMAT_VERSION,
            "hyper": self.hyper.to_dict(),
            "inducing_inputs": self.inducing_inputs.tolist(),
            "variational_mean": self.variational_mean.tolist(),
            "variational_chol": self.variational_chol.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseGPModel":
        if d.get("format") != "sgpnav.sparse_gp":
            raise InvalidArgumentError("not a serialized sparse GP model")
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported model version {d.get('version')!r}")
        return cls(
            GPHyperparams.from_dict(d["hyper"]),
            np.array(d["inducing_inputs"], dtype=float),
            np.array(d["variational_mean"], dtype=float),
            np.array(d["variational_chol"], dtype=float),
        )

    def save(self, path) -> None:
        # repr-precision floats keep the round trip bitwise exact
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "SparseGPModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SgpFitConfig:
    num_inducing: int = 100
    max_iterations: int = 20
    convergence_tol: float = 1e-6
    seed: int = 0
    warm_start: Optional[SparseGPModel] = None
    optimize_hyper: bool = True
    optimize_inducing: bool = True
    # initial step (log-units for hyperparameters, radians for inducing inputs)
    step_hyper: float = 0.1
    step_inducing: float = 0.01
    step_decay: float = 0.05
    # optional (lo, hi) per hyperparameter in natural units, ordered as
    # GPHyperparams.to_log_vector(); steps are projected onto the box
    hyper_bounds: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.num_inducing < 1:
            raise InvalidArgumentError("num_inducing must be >= 1")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if self.hyper_bounds is not None:
            b = tuple((float(lo), float(hi)) for lo, hi in self.hyper_bounds)
            if len(b) != 4 or any(not (0 < lo <= hi) for lo, hi in b):
                raise InvalidArgumentError("hyper_bounds needs 4 pairs with 0 < lo <= hi")
            object.__setattr__(self, "hyper_bounds", b)

    def log_bounds(self) -> Optional[tuple[np.ndarray, np.ndarray]]:
        if self.hyper_bounds is None:
            return None
        arr = np.log(np.array(self.hyper_bounds))
        return arr[:, 0], arr[:, 1]


# ---------------------------------------------------------------------------
# Internals
# ---------------------------------------------------------------------------


def _inducing_cholesky(hyper: GPHyperparams, z: np.ndarray, retries: int = 3) -> np.ndarray:
    """Cholesky of K(Z, Z) + jitter*I with jitter proportional to sigma^2."""
    kmm = rq_from_sqdist(sq_dist(z, z), hyper.kernel)
    return _jittered_kmm(kmm, hyper.kernel.signal_variance, retries)[0]


def _jittered_kmm(kmm: np.ndarray, s2: float, retries: int = 3):
    jitter = INDUCING_JITTER * s2
    eye = np.eye(kmm.shape[0])
    for _ in range(retries + 1):
        try:
            return np.linalg.cholesky(kmm + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalConditioningError("inducing kernel matrix is not positive definite")


def _lower_inverse(chol: np.ndarray) -> np.ndarray:
    return solve_triangular(chol, np.eye(chol.shape[0]), lower=True, check_finite=False)


@dataclass
class _Frame:
    """Quantities shared by the bound, its gradient and the optimal q(u)."""

    hyper: GPHyperparams
    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    log_u: np.ndarray  # log(1 + d^2 / (2 gamma ell^2))
    kmn: np.ndarray
    kmn_over_u: np.ndarray  # K / (1 + r), the common factor of dK/dell and dK/dd^2
    kmm: np.ndarray  # includes jitter
    lm: np.ndarray
    lm_inv: np.ndarray
    a_aug: np.ndarray  # rows 0..m-1: Lm^-1 Kmn; row m: free slot for the residual
    aat: np.ndarray  # a_white a_white^T

    @property
    def a_white(self) -> np.ndarray:
        return self.a_aug[:-1]


class _Workspace:
    """Preallocated (m, n) buffers; reusing them avoids page-faulting fresh
    allocations on every optimizer iteration."""

    def __init__(self, m: int, n: int):
        shape = (m, n)
        self.log_u = np.empty(shape)
        self.kmn = np.empty(shape)
        self.kmn_over_u = np.empty(shape)
        self.a_aug = np.empty((m + 1, n))


def _frame(hyper: GPHyperparams, z: np.ndarray, data: Dataset, ws: _Workspace | None = None) -> _Frame:
    kp = hyper.kernel
    g = kp.mixture
    x = data.inputs
    n = x.shape[0]
    if ws is None:
        ws = _Workspace(z.shape[0], n)
    # 1 + c*|z - x|^2 as one rank-4 product; c = 1 / (2 gamma ell^2)
    c = 0.5 / (g * kp.lengthscale**2)
    left = np.column_stack([1.0 + c * np.einsum("ij,ij->i", z, z), -2.0 * c * z, np.full(z.shape[0], c)])
    right = np.vstack([np.ones(n), x.T, np.einsum("ij,ij->i", x, x)])
    # round-off may leave u a few ulps below 1 for coincident points; harmless
    u = np.matmul(left, right, out=ws.kmn_over_u)
    log_u = np.log(u, out=ws.log_u)
    kmn = np.multiply(log_u, -g, out=ws.kmn)
    np.exp(kmn, out=kmn)
    kmn *= kp.signal_variance
    kmn_over_u = np.divide(kmn, u, out=u)
    kmm_raw = rq_from_sqdist(sq_dist(z, z), kp)
    lm, jitter = _jittered_kmm(kmm_raw, kp.signal_variance)
    lm_inv = _lower_inverse(lm)
    kmm = kmm_raw + jitter * np.eye(z.shape[0])
    a_aug = ws.a_aug
    a_white = np.matmul(lm_inv, kmn, out=a_aug[:-1])
    return _Frame(
        hyper, z, x, data.targets, log_u, kmn, kmn_over_u, kmm, lm, lm_inv, a_aug,
        a_white @ a_white.T,
    )


def _optimal_q(fr: _Frame) -> tuple[np.ndarray, np.ndarray, float]:
    """Optimal variational mean/Cholesky and the collapsed bound value."""
    noise = fr.hyper.noise_variance
    m, n = fr.a_white.shape
    b = np.eye(m) + fr.aat / noise
    try:
        lb = np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError("collapsed-bound matrix is not positive definite") from exc
    c = solve_triangular(lb, fr.a_white @ fr.y, lower=True, check_finite=False) / noise
    lb_inv = _lower_inverse(lb)
    m_mat = fr.lm @ lb_inv.T
    mean = m_mat @ c
    r = np.linalg.qr(m_mat.T, mode="r")
    chol = r.T * np.sign(np.diag(r))[None, :]
    s2 = fr.hyper.kernel.signal_variance
    bound = (
        -0.5 * n * (LOG_2PI + math.log(noise))
        - float(np.sum(np.log(np.diag(lb))))
        - 0.5 * float(fr.y @ fr.y) / noise
        + 0.5 * float(c @ c)
        - 0.5 * n * s2 / noise
        + 0.5 * float(np.trace(fr.aat)) / noise
    )
    return mean, chol, bound


def _elbo_value(fr: _Frame, mu: np.ndarray, chol_s: np.ndarray) -> float:
    noise = fr.hyper.noise_variance
    s2 = fr.hyper.kernel.signal_variance
    m, n = fr.kmn.shape
    u = fr.lm_inv @ mu  # Lm^-1 mu
    f_mean = fr.a_white.T @ u
    res = fr.y - f_mean
    q_diag = np.einsum("ij,ij->j", fr.a_white, fr.a_white)
    t = fr.lm_inv @ chol_s  # Lm^-1 Ls
    kinv_a = fr.lm_inv.T @ fr.a_white  # Kmm^-1 Kmn
    sa = chol_s.T @ kinv_a
    s_diag = np.einsum("ij,ij->j", sa, sa)
    exp_ll = -0.5 * n * (LOG_2PI + math.log(noise)) - 0.5 / noise * (
        float(res @ res) + n * s2 - float(q_diag.sum()) + float(s_diag.sum())
    )
    diag_s = np.abs(np.diag(chol_s))
    kl = 0.5 * (
        float(np.sum(t * t))
        + float(u @ u)
        - m
        + 2.0 * float(np.sum(np.log(np.diag(fr.lm))))
        - 2.0 * float(np.sum(np.log(diag_s)))
    )
    return exp_ll - kl


def _elbo_grad(
    fr: _Frame,
    mu: np.ndarray,
    chol_s: np.ndarray,
    with_q: bool = True,
    scratch: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Gradient of the bound.

    Returns (d/dlog-hyper (4,), d/dZ (m, 2), d/dmu (m,), d/dL (m, m) lower)
    where the diagonal of d/dL is taken w.r.t. log L_ii.
    """
    hyper = fr.hyper
    kp = hyper.kernel
    noise = hyper.noise_variance
    beta = 1.0 / noise
    s2, ell, g = kp.signal_variance, kp.lengthscale, kp.mixture
    m, n = fr.kmn.shape

    kinv = fr.lm_inv.T @ fr.lm_inv
    w = kinv @ mu
    s_mat = chol_s @ chol_s.T
    c_mat = kinv @ s_mat  # Kmm^-1 S
    res = fr.y - fr.kmn.T @ w
    p = fr.lm_inv.T @ (fr.a_white @ res)  # Kmm^-1 Kmn r
    b_mat = fr.lm_inv.T @ fr.aat @ fr.lm_inv  # A A^T with A = Kmm^-1 Kmn

    # d/dKmn = beta (E A + w r^T) with E = (I - C) Kmm^-1 Lm, evaluated as one
    # product against [Lm^-1 Kmn; r^T]
    if scratch is None:
        scratch = (np.empty((m, n)), np.empty((m, n)))
    g_mn, gu = scratch
    e_aug = np.empty((m, m + 1))
    e_aug[:, :m] = (np.eye(m) - c_mat) @ fr.lm_inv.T
    e_aug[:, m] = w
    e_aug *= beta
    fr.a_aug[m] = res
    np.matmul(e_aug, fr.a_aug, out=g_mn)
    g_mm = (
        -beta * np.outer(p, w)
        - 0.5 * beta * b_mat
        + 0.5 * beta * (b_mat @ c_mat.T + c_mat @ b_mat)
        + 0.5 * c_mat @ kinv
        + 0.5 * np.outer(w, w)
        - 0.5 * kinv
    )
    g_mm = 0.5 * (g_mm + g_mm.T)

    # chain through the kernel: cross block; K r / (1 + r) = K - K / (1 + r)
    np.multiply(g_mn, fr.kmn_over_u, out=gu)
    gu_rows = gu.sum(axis=1)
    gk = float(np.vdot(g_mn, fr.kmn))
    gu_r = gk - float(gu_rows.sum())
    gkl = float(np.einsum("ij,ij,ij->", g_mn, fr.kmn, fr.log_u))
    grad_hyper = np.array([gk, 2.0 * g * gu_r, g * (gu_r - gkl), 0.0])
    # G * dk/dd2 = -gu / (2 ell^2)
    grad_z = (-1.0 / ell**2) * (fr.z * gu_rows[:, None] - gu @ fr.x)

    # inducing block; jitter scales with sigma^2 so dKmm/dlog s2 is the full matrix
    d2_mm = sq_dist(fr.z, fr.z)
    k_mm, _, dk_ell, dk_g, dk_dd2 = rq_log_param_grads(d2_mm, kp)
    grad_hyper[0] += float(np.sum(g_mm * fr.kmm))
    grad_hyper[1] += float(np.sum(g_mm * dk_ell))
    grad_hyper[2] += float(np.sum(g_mm * dk_g))
    h_mm = g_mm * dk_dd2
    grad_z += 4.0 * (fr.z * h_mm.sum(axis=1)[:, None] - h_mm @ fr.z)

    # diagonal of Knn enters only through sigma^2
    grad_hyper[0] += -0.5 * beta * n * s2

    # noise
    q_sum = float(np.trace(fr.aat))
    quad = float(res @ res) + n * s2 - q_sum + float(np.vdot(s_mat, b_mat))
    grad_hyper[3] = -0.5 * n + 0.5 * beta * quad

    if not with_q:
        return grad_hyper, grad_z, None, None

    grad_mu = beta * p - w
    g_s = -0.5 * beta * b_mat - 0.5 * kinv
    grad_l = np.tril(2.0 * g_s @ chol_s)
    diag = np.diag(chol_s)
    grad_l[np.diag_indices(m)] = np.diag(grad_l) * diag + 1.0
    return grad_hyper, grad_z, grad_mu, grad_l


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def elbo(model: SparseGPModel, data: Dataset) -> float:
    if len(data) < 1:
        raise InvalidArgumentError("the bound needs at least one observation")
    fr = _frame(model.hyper, model.inducing_inputs, data)
    return _elbo_value(fr, model.variational_mean, model.variational_chol)


def elbo_and_grad(model: SparseGPModel, data: Dataset) -> tuple[float, dict]:
    """Bound value and analytic gradient.

    Gradient keys: ``hyper`` (w.r.t. ``hyper.to_log_vector()``),
    ``inducing_inputs``, ``variational_mean`` and ``variational_chol``
    (lower triangle; diagonal w.r.t. log of the diagonal entries).
    """
    fr = _frame(model.hyper, model.inducing_inputs, data)
    value = _elbo_value(fr, model.variational_mean, model.variational_chol)
    gh, gz, gmu, gl = _elbo_grad(fr, model.variational_mean, model.variational_chol)
    return value, {
        "hyper": gh,
        "inducing_inputs": gz,
        "variational_mean": gmu,
        "variational_chol": gl,
    }


def optimal_variational(model: SparseGPModel, data: Dataset) -> SparseGPModel:
    """Replace q(u) by its closed-form optimum for the model's hyper and Z."""
    fr = _frame(model.hyper, model.inducing_inputs, data)
    mean, chol, _ = _optimal_q(fr)
    return replace(model, variational_mean=mean, variational_chol=chol)


def select_inducing(data: Dataset, num_inducing: int, seed: int) -> np.ndarray:
    """Seeded stratified subsample of the training inputs.

    The input order is cut into ``m`` equal strata and one point is drawn
    from each, so ordered scans get even coverage.
    """
    n = len(data)
    m = min(num_inducing, n)
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, n, m + 1).astype(np.intp)
    idx = rng.integers(edges[:-1], np.maximum(edges[1:], edges[:-1] + 1))
    return data.inputs[idx].copy()


def fit(data: Dataset, config: SgpFitConfig, init_hyper: GPHyperparams) -> SparseGPModel:
    """Maximize the bound over hyperparameters, inducing inputs and q(u).

    Each iteration sets q(u) to its closed-form optimum and then takes one
    gradient step on (log-hyperparameters, inducing inputs). A step is kept
    only if the bound does not decrease; the step size grows after an
    accepted move, halves after a rejected one and follows a fixed
    ``1/(1 + decay*t)`` schedule, so the result is fully determined by the
    inputs.
    """
    if len(data) < 1:
        raise InvalidArgumentError("cannot fit a sparse GP to an empty dataset")

    if config.warm_start is not None:
        warm = config.warm_start
        hyper, z = warm.hyper, warm.inducing_inputs.copy()
        start_q = (warm.variational_mean, warm.variational_chol)
    else:
        hyper = init_hyper
        z = select_inducing(data, config.num_inducing, config.seed)
        start_q = None
    bounds = config.log_bounds()
    if bounds is not None:
        hyper = GPHyperparams.from_log_vector(np.clip(hyper.to_log_vector(), bounds[0], bounds[1]))

    m, n = z.shape[0], len(data)
    spaces = [_Workspace(m, n), _Workspace(m, n)]
    scratch = (np.empty((m, n)), np.empty((m, n)))
    fr = _frame(hyper, z, data, spaces[0])
    if start_q is None:
        start_q = (np.zeros(m), fr.lm.copy())
    initial_value = _elbo_value(fr, *start_q)

    mu, chol, value = _optimal_q(fr)
    if not math.isfinite(value):
        raise OptimizationDivergedError("non-finite initial bound", last_valid=None)
    best = SparseGPModel(hyper, z, mu, chol)
    if value < initial_value:
        # the closed-form q is the maximizer; this only guards against round-off
        best = SparseGPModel(hyper, z, *start_q)
        value = initial_value

    if not (config.optimize_hyper or config.optimize_inducing):
        return best

    theta = hyper.to_log_vector()
    gain = 1.0
    current = 0
    grads = _elbo_grad(fr, best.variational_mean, best.variational_chol, False, scratch)
    for it in range(config.max_iterations):
        gh, gz = grads[0], grads[1]
        if not (np.all(np.isfinite(gh)) and np.all(np.isfinite(gz))):
            raise OptimizationDivergedError("non-finite bound gradient", last_valid=best)
        schedule = gain / (1.0 + config.step_decay * it)
        new_theta, new_z = theta, z
        if config.optimize_hyper:
            if bounds is not None:
                # drop components pushing against an active bound
                gh = np.where(((theta <= bounds[0]) & (gh < 0)) | ((theta >= bounds[1]) & (gh > 0)), 0.0, gh)
            norm = float(np.linalg.norm(gh))
            if norm > 0:
                new_theta = theta + config.step_hyper * schedule * gh / norm
                if bounds is not None:
                    new_theta = np.clip(new_theta, bounds[0], bounds[1])
        if config.optimize_inducing:
            gmax = float(np.max(np.abs(gz)))
            if gmax > 0:
                new_z = z + config.step_inducing * schedule * gz / gmax
        try:
            trial_hyper = GPHyperparams.from_log_vector(new_theta)
            trial_fr = _frame(trial_hyper, new_z, data, spaces[1 - current])
            t_mu, t_chol, t_value = _optimal_q(trial_fr)
        except (NumericalConditioningError, InvalidArgumentError):
            t_value = -math.inf
        if not (math.isfinite(t_value) and t_value >= value):
            gain *= 0.5
            if gain < 1e-6:
                break
            continue
        improvement = t_value - value
        theta, z, hyper, fr, value = new_theta, new_z, trial_hyper, trial_fr, t_value
        current = 1 - current
        best = SparseGPModel(hyper, z, t_mu, t_chol)
        gain = min(gain * 1.2, 4.0)
        if improvement < config.convergence_tol or it == config.max_iterations - 1:
            break
        grads = _elbo_grad(fr, t_mu, t_chol, False, scratch)
    return best


def predict(model: SparseGPModel, queries, include_noise: bool = False) -> PosteriorPrediction:
    """Predictive mean and latent variance of q(f) at ``queries``."""
    q = _as_points(queries)
    kp = model.hyper.kernel
    z = model.inducing_inputs
    lm = _inducing_cholesky(model.hyper, z)
    lm_inv = _lower_inverse(lm)
    kmq = rq_from_sqdist(sq_dist(z, q), kp)
    v = lm_inv @ kmq
    w = lm_inv.T @ (lm_inv @ model.variational_mean)
    mean = kmq.T @ w
    proj = (model.variational_chol.T @ lm_inv.T) @ v  # Ls^T Kmm^-1 Kmq
    var = kp.signal_variance - np.einsum("ij,ij->j", v, v) + np.einsum("ij,ij->j", proj, proj)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + model.hyper.noise_variance
    return PosteriorPrediction(mean, var)
