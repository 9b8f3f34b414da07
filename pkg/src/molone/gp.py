"""Gaussian process regression for the multi-output outcome surrogate.

Independent GPs per output with ARD Matern-5/2 (or squared-exponential)
kernels.  Hyperparameters maximize the log marginal likelihood via
multi-start L-BFGS on log-parameters with analytic gradients.  Targets are
standardized per output internally; predictions are returned on the raw
scale.  The posterior mean is analytically differentiable, which is the
primitive behind the local sensitivity scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import kernels as kb
from .errors import ConditioningError, ContractError, DataError
from .rng import RngStream

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class Kernel:
    kind: str  # "matern52" | "sqexp"
    lengthscales: np.ndarray  # (d,), all > 0
    output_scale: float  # signal variance, > 0

    def __post_init__(self):
        if self.kind not in kb.KIND_CODES:
            raise ContractError(f"unknown kernel kind {self.kind!r}")
        if np.any(np.asarray(self.lengthscales) <= 0) or self.output_scale <= 0:
            raise ContractError("kernel hyperparameters must be positive")


@dataclass
class FitConfig:
    kernel: str = "matern52"
    restarts: int = 8
    seed: int = 0
    lengthscale_bounds: tuple[float, float] = (1e-3, 10.0)
    noise_bounds: tuple[float, float] = (1e-6, 1e-1)
    signal_bounds: tuple[float, float] = (1e-3, 1e3)
    max_iter: int = 100
    standardize: bool = True


def chol_with_jitter(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a`` with escalating diagonal jitter."""
    jitter = 0.0
    scale = max(abs(float(np.mean(np.diag(a)))), 1e-12)
    while True:
        try:
            return cholesky(a + jitter * np.eye(a.shape[0]), lower=True,
                            check_finite=False), jitter
        except np.linalg.LinAlgError:
            pass
        jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * scale:
            raise ConditioningError("Cholesky failed after jitter escalation")


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray  # (k,)
    std: np.ndarray  # (k,), >= 0


class GPModel:
    """Fitted multi-output GP; immutable once constructed."""

    def __init__(
        self,
        train_x: np.ndarray,
        train_y: np.ndarray,
        kernels: list[Kernel],
        noise_variance: np.ndarray,
        y_center: np.ndarray,
        y_scale: np.ndarray,
    ):
        self.train_x = np.atleast_2d(np.asarray(train_x, dtype=float))
        self.train_y = np.atleast_2d(np.asarray(train_y, dtype=float))
        self.kernels = kernels
        self.noise_variance = np.asarray(noise_variance, dtype=float)
        self.y_center = np.asarray(y_center, dtype=float)
        self.y_scale = np.asarray(y_scale, dtype=float)
        n = self.train_x.shape[0]
        self._y_std = (self.train_y - self.y_center) / self.y_scale
        self._chol: list[np.ndarray] = []
        self._alpha: list[np.ndarray] = []
        for m, kern in enumerate(kernels):
            k = kb.cross(kern.kind, self.train_x, self.train_x, kern.lengthscales,
                         kern.output_scale)
            k[np.diag_indices(n)] += self.noise_variance[m]
            l, _ = chol_with_jitter(k)
            self._chol.append(l)
            self._alpha.append(cho_solve((l, True), self._y_std[:, m],
                                         check_finite=False))

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.train_y.shape[1]

    def describe(self) -> dict:
        """Hyperparameters in a JSON-friendly shape, for run metadata."""
        return {
            "kernel": self.kernels[0].kind,
            "n_train": self.n_train,
            "lengthscales": [k.lengthscales.tolist() for k in self.kernels],
            "output_scale": [k.output_scale for k in self.kernels],
            "noise_variance": self.noise_variance.tolist(),
        }


def _neg_lml_and_grad(theta, d2, y, kind, n, d):
    """Negative log marginal likelihood and gradient on log-parameters.

    theta = [log lengthscales (d), log signal variance, log noise variance].
    d2 is the (d, n, n) tensor of per-dimension squared coordinate differences.
    """
    ls = np.exp(theta[:d])
    s2 = np.exp(theta[d])
    noise = np.exp(theta[d + 1])

    inv_l2 = 1.0 / (ls * ls)
    r2 = np.tensordot(inv_l2, d2, axes=1)
    if kind == "sqexp":
        m = np.exp(-0.5 * r2)
        dm_factor = m  # dM/dlog ls_j = M * D2_j / ls_j^2
    else:
        r = np.sqrt(np.maximum(r2, 0.0))
        e = np.exp(-np.sqrt(5.0) * r)
        m = (1.0 + np.sqrt(5.0) * r + (5.0 / 3.0) * r2) * e
        dm_factor = (5.0 / 3.0) * (1.0 + np.sqrt(5.0) * r) * e

    k = s2 * m
    k[np.diag_indices(n)] += noise
    try:
        l = cholesky(k, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((l, True), y, check_finite=False)
    nll = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(l)))) \
        + 0.5 * n * np.log(2.0 * np.pi)

    kinv = cho_solve((l, True), np.eye(n), check_finite=False)
    t = kinv - np.outer(alpha, alpha)  # d nll / d theta_i = 0.5 tr(t dK/dtheta_i)
    grad = np.empty_like(theta)
    base = s2 * dm_factor
    for j in range(d):
        grad[j] = 0.5 * np.sum(t * (base * d2[j] * inv_l2[j]))
    grad[d] = 0.5 * np.sum(t * (s2 * m))
    grad[d + 1] = 0.5 * noise * np.trace(t)
    return nll, grad


def _fit_single_output(x, y, config: FitConfig, gen: np.random.Generator,
                       warm: tuple[Kernel, float] | None):
    n, d = x.shape
    d2 = np.empty((d, n, n))
    for j in range(d):
        diff = x[:, j][:, None] - x[:, j][None, :]
        d2[j] = diff * diff

    lo = np.log([config.lengthscale_bounds[0]] * d
                + [config.signal_bounds[0], config.noise_bounds[0]])
    hi = np.log([config.lengthscale_bounds[1]] * d
                + [config.signal_bounds[1], config.noise_bounds[1]])
    bounds = list(zip(lo, hi))

    starts = [np.log(np.r_[np.full(d, 0.5), 1.0, 1e-3])]
    if warm is not None:
        starts.append(np.log(np.r_[warm[0].lengthscales, warm[0].output_scale, warm[1]]))
    while len(starts) < max(config.restarts, 1):
        starts.append(np.log(np.r_[
            np.exp(gen.uniform(np.log(0.05), np.log(2.0), size=d)),
            np.exp(gen.uniform(np.log(0.2), np.log(5.0))),
            np.exp(gen.uniform(np.log(1e-6), np.log(1e-2))),
        ]))

    best = None
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        res = minimize(
            _neg_lml_and_grad, x0, args=(d2, y, config.kernel, n, d),
            jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": config.max_iter},
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    kern = Kernel(config.kernel, np.exp(theta[:d]), float(np.exp(theta[d])))
    return kern, float(np.exp(theta[d + 1]))


def fit(train_x: np.ndarray, train_y: np.ndarray, config: FitConfig | None = None,
        warm: GPModel | None = None) -> GPModel:
    """Fit one independent GP per output column of ``train_y``."""
    config = config or FitConfig()
    x = np.atleast_2d(np.asarray(train_x, dtype=float))
    y = np.asarray(train_y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise DataError("training data contains non-finite values")
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise ContractError("train_x and train_y must share n >= 1 rows")

    if config.standardize:
        center = y.mean(axis=0)
        scale = y.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
    else:
        center = np.zeros(y.shape[1])
        scale = np.ones(y.shape[1])
    y_std = (y - center) / scale

    kerns: list[Kernel] = []
    noises = np.empty(y.shape[1])
    for m in range(y.shape[1]):
        gen = RngStream(config.seed, f"gp-fit-{m}").generator()
        prev = (warm.kernels[m], float(warm.noise_variance[m])) if warm is not None else None
        kern, noise = _fit_single_output(x, y_std[:, m], config, gen, prev)
        kerns.append(kern)
        noises[m] = noise
    return GPModel(x, y, kerns, noises, center, scale)


def make_fixed_model(train_x, train_y, kernels: list[Kernel], noise_variance,
                     standardize: bool = False) -> GPModel:
    """Model with pinned hyperparameters (no fitting); used by closed-form tests."""
    x = np.atleast_2d(np.asarray(train_x, dtype=float))
    y = np.asarray(train_y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if standardize:
        center = y.mean(axis=0)
        scale = np.where(y.std(axis=0) > 1e-12, y.std(axis=0), 1.0)
    else:
        center = np.zeros(y.shape[1])
        scale = np.ones(y.shape[1])
    noise = np.broadcast_to(np.asarray(noise_variance, dtype=float), (y.shape[1],))
    return GPModel(x, y, kernels, noise, center, scale)


def posterior_batch(model: GPModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and marginal std of the latent function at ``xs`` (nq, d)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    nq = xs.shape[0]
    mean = np.empty((nq, model.output_dim))
    std = np.empty((nq, model.output_dim))
    for m, kern in enumerate(model.kernels):
        kx = kb.cross(kern.kind, xs, model.train_x, kern.lengthscales, kern.output_scale)
        mean[:, m] = kx @ model._alpha[m]
        v = solve_triangular(model._chol[m], kx.T, lower=True, check_finite=False)
        var = np.maximum(kern.output_scale - np.sum(v * v, axis=0), 0.0)
        std[:, m] = np.sqrt(var)
    return mean * model.y_scale + model.y_center, std * model.y_scale


def posterior(model: GPModel, x: np.ndarray) -> PosteriorSummary:
    mean, std = posterior_batch(model, np.asarray(x, dtype=float)[None, :])
    return PosteriorSummary(mean=mean[0], std=std[0])


def posterior_mean_gradient_batch(model: GPModel, xs: np.ndarray) -> np.ndarray:
    """Analytic gradients of the posterior means: (nq, k, d)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    out = np.empty((xs.shape[0], model.output_dim, model.input_dim))
    for m, kern in enumerate(model.kernels):
        g = kb.grad_mean(kern.kind, xs, model.train_x, kern.lengthscales,
                         kern.output_scale, model._alpha[m])
        out[:, m, :] = g * model.y_scale[m]
    return out


def posterior_mean_gradient(model: GPModel, x: np.ndarray) -> np.ndarray:
    """d mu_m / d x_j for all outputs m and input dims j: (k, d)."""
    return posterior_mean_gradient_batch(model, np.asarray(x, dtype=float)[None, :])[0]


def posterior_cov(model: GPModel, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Posterior cross-covariance per output on the raw scale: (k, n1, n2)."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    out = np.empty((model.output_dim, x1.shape[0], x2.shape[0]))
    for m, kern in enumerate(model.kernels):
        k12 = kb.cross(kern.kind, x1, x2, kern.lengthscales, kern.output_scale)
        v1 = solve_triangular(
            model._chol[m],
            kb.cross(kern.kind, model.train_x, x1, kern.lengthscales, kern.output_scale),
            lower=True, check_finite=False)
        v2 = solve_triangular(
            model._chol[m],
            kb.cross(kern.kind, model.train_x, x2, kern.lengthscales, kern.output_scale),
            lower=True, check_finite=False)
        out[m] = (k12 - v1.T @ v2) * (model.y_scale[m] ** 2)
    return out


def posterior_sample(model: GPModel, xs: np.ndarray, rng: RngStream) -> np.ndarray:
    """One joint posterior draw at ``xs`` per output; returns (len(xs), k)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    gen = rng.generator()
    mean, _ = posterior_batch(model, xs)
    cov = posterior_cov(model, xs, xs)
    out = np.empty_like(mean)
    for m in range(model.output_dim):
        l, _ = chol_with_jitter(cov[m] + 1e-12 * np.eye(xs.shape[0]))
        out[:, m] = mean[:, m] + l @ gen.standard_normal(xs.shape[0])
    return out
