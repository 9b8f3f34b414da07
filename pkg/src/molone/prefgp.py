"""Pairwise-comparison preference GP over outcome space.

A zero-mean GP prior on latent utilities at the outcomes that appeared in
comparisons, a probit likelihood P(winner > loser | u) = Phi((u_w - u_l) /
(sqrt(2) * lam)), and a Laplace approximation around the MAP latent vector.
Kernel hyperparameters maximize the Laplace-approximate marginal likelihood.
Outcomes are standardized per dimension internally; predicted utilities live
on the latent (standardized) scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.optimize import minimize
from scipy.special import log_ndtr

from . import kernels as kb
from .errors import ContractError, InferenceError
from .gp import Kernel, chol_with_jitter
from .rng import RngStream

DEDUP_TOL = 1e-9
PRIOR_JITTER = 1e-7  # relative to the signal variance; near-duplicate
# predicted outcomes land in the support, so the Gram needs real headroom
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ComparisonRecord:
    winner: np.ndarray  # (k,)
    loser: np.ndarray  # (k,)
    source: str = "simulated_agent"  # simulated_agent | human | seed_random


@dataclass
class PrefFitConfig:
    kernel: str = "sqexp"
    restarts: int = 3
    seed: int = 0
    noise_scale: float = 1.0  # lam, fixed: unidentifiable jointly with output_scale
    lengthscale_bounds: tuple[float, float] = (5e-2, 2e1)
    signal_bounds: tuple[float, float] = (5e-2, 5e1)
    max_iter: int = 40
    newton_max_iter: int = 100
    newton_tol: float = 1e-9
    warm_theta: np.ndarray | None = None  # log-hyperparameters of a previous fit


def _probit_loglik(u: np.ndarray, comps: np.ndarray, c: float) -> float:
    z = (u[comps[:, 0]] - u[comps[:, 1]]) / c
    return float(np.sum(log_ndtr(z)))


def _probit_terms(u: np.ndarray, comps: np.ndarray, c: float, n: int):
    """Log-likelihood, gradient and (negative) Hessian of the probit terms."""
    z = (u[comps[:, 0]] - u[comps[:, 1]]) / c
    log_phi = log_ndtr(z)
    ll = float(np.sum(log_phi))
    # rho = pdf/cdf, computed in log space to survive very negative z
    rho = np.exp(-0.5 * z * z - 0.5 * _LOG_2PI - log_phi)
    omega = np.maximum(rho * rho + z * rho, 0.0)

    grad = (np.bincount(comps[:, 0], weights=rho, minlength=n)
            - np.bincount(comps[:, 1], weights=rho, minlength=n)) / c

    oc2 = omega / (c * c)
    w = np.zeros(n * n)
    np.add.at(w, comps[:, 0] * n + comps[:, 1], -oc2)
    w = w.reshape(n, n)
    w += w.T  # symmetric off-diagonal contributions
    diag = np.bincount(comps[:, 0], weights=oc2, minlength=n) \
        + np.bincount(comps[:, 1], weights=oc2, minlength=n)
    w.flat[:: n + 1] += diag
    return ll, grad, w


def _laplace_mode(kinv, comps, c, n, max_iter, tol, u0=None):
    """Newton iterations to the MAP latent vector; returns (u, grad_ll, W, psi)."""
    u = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float).copy()
    kinv_u = kinv @ u
    ll, grad, w = _probit_terms(u, comps, c, n)
    psi = ll - 0.5 * float(u @ kinv_u)
    for _ in range(max_iter):
        g = grad - kinv_u
        if np.max(np.abs(g)) < tol:
            return u, grad, w, psi
        h = w + kinv
        h.flat[:: n + 1] += 1e-12
        try:
            lh = cholesky(h, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise InferenceError("Laplace Newton system not positive definite")
        step = cho_solve((lh, True), g, check_finite=False)
        t = 1.0
        for _ in range(20):
            u_new = u + t * step
            kinv_u_new = kinv @ u_new
            psi_new = _probit_loglik(u_new, comps, c) \
                - 0.5 * float(u_new @ kinv_u_new)
            # Relative acceptance band: near the optimum the Newton step is
            # tiny and psi changes sit at floating-point noise level.
            if psi_new >= psi - 1e-10 * (1.0 + abs(psi)):
                break
            t *= 0.5
        u, kinv_u, psi = u_new, kinv_u_new, psi_new
        ll, grad, w = _probit_terms(u, comps, c, n)
    g = grad - kinv_u
    if np.max(np.abs(g)) < 1e-6:
        return u, grad, w, psi
    raise InferenceError("Laplace Newton iterations did not converge")


class PreferenceModel:
    """Laplace-approximate preference GP; immutable once constructed."""

    def __init__(self, outcome_dim: int, kernel: Kernel, noise_scale: float,
                 train_outcomes=None, comparisons=None, records=None,
                 y_center=None, y_scale=None):
        self.outcome_dim = outcome_dim
        self.kernel = kernel
        self.noise_scale = noise_scale
        self.records = records or []
        self.train_outcomes = (np.zeros((0, outcome_dim)) if train_outcomes is None
                               else np.asarray(train_outcomes, dtype=float))
        self.comparisons = (np.zeros((0, 2), dtype=int) if comparisons is None
                            else np.asarray(comparisons, dtype=int))
        self.y_center = np.zeros(outcome_dim) if y_center is None else y_center
        self.y_scale = np.ones(outcome_dim) if y_scale is None else y_scale
        self._z_std = (self.train_outcomes - self.y_center) / self.y_scale
        self.laplace_mode = np.zeros(self.train_outcomes.shape[0])
        self._beta = np.zeros(self.train_outcomes.shape[0])
        self._k_chol = None
        self._a_chol = None
        self.fitted_theta = None
        if self.train_outcomes.shape[0] > 0:
            self._factorize()

    @classmethod
    def prior(cls, outcome_dim: int, kernel_kind: str = "sqexp") -> "PreferenceModel":
        """Comparison-free model: zero-mean prior with unit signal variance."""
        kern = Kernel(kernel_kind, np.ones(outcome_dim), 1.0)
        return cls(outcome_dim, kern, 1.0)

    @property
    def is_prior(self) -> bool:
        return self.train_outcomes.shape[0] == 0

    def _factorize(self, u0=None):
        n = self._z_std.shape[0]
        k = kb.cross(self.kernel.kind, self._z_std, self._z_std,
                     self.kernel.lengthscales, self.kernel.output_scale)
        k[np.diag_indices(n)] += PRIOR_JITTER * self.kernel.output_scale
        self._k_chol, _ = chol_with_jitter(k)
        kinv = cho_solve((self._k_chol, True), np.eye(n), check_finite=False)
        c = np.sqrt(2.0) * self.noise_scale
        u, grad_ll, w, _ = _laplace_mode(kinv, self.comparisons, c, n, 100, 1e-9,
                                         u0=u0)
        self.laplace_mode = u
        self._beta = grad_ll  # stationarity: K^{-1} u_hat == grad log-lik
        a = w + kinv
        a[np.diag_indices(n)] += 1e-12
        self._a_chol, _ = chol_with_jitter(a)

    def describe(self) -> dict:
        return {
            "kernel": self.kernel.kind,
            "n_support": int(self.train_outcomes.shape[0]),
            "n_comparisons": int(self.comparisons.shape[0]),
            "lengthscales": self.kernel.lengthscales.tolist(),
            "output_scale": self.kernel.output_scale,
            "noise_scale": self.noise_scale,
        }

    # -- prediction ------------------------------------------------------

    def _cross_std(self, ys: np.ndarray) -> np.ndarray:
        ys_std = (np.atleast_2d(ys) - self.y_center) / self.y_scale
        return kb.cross(self.kernel.kind, self._z_std, ys_std,
                        self.kernel.lengthscales, self.kernel.output_scale)

    def predictive_mean(self, ys: np.ndarray) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        if self.is_prior:
            return np.zeros(ys.shape[0])
        return self._cross_std(ys).T @ self._beta

    def predictive_cov(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """Laplace predictive covariance of latent utilities, (n1, n2)."""
        y1 = np.atleast_2d(np.asarray(y1, dtype=float))
        y2 = np.atleast_2d(np.asarray(y2, dtype=float))
        y1_std = (y1 - self.y_center) / self.y_scale
        y2_std = (y2 - self.y_center) / self.y_scale
        k12 = kb.cross(self.kernel.kind, y1_std, y2_std,
                       self.kernel.lengthscales, self.kernel.output_scale)
        if self.is_prior:
            return k12
        k1 = self._cross_std(y1)
        k2 = self._cross_std(y2)
        q1 = cho_solve((self._k_chol, True), k1, check_finite=False)
        q2 = cho_solve((self._k_chol, True), k2, check_finite=False)
        return k12 - k1.T @ q2 + q1.T @ cho_solve((self._a_chol, True), q2, check_finite=False)


def fit_preference(comparisons: list[ComparisonRecord],
                   config: PrefFitConfig | None = None) -> PreferenceModel:
    """Fit the preference GP; with no comparisons this degrades to the prior."""
    config = config or PrefFitConfig()
    if not comparisons:
        raise ContractError("fit_preference requires at least one comparison; "
                            "use PreferenceModel.prior for the empty case")
    k_dim = np.asarray(comparisons[0].winner).shape[0]
    for rec in comparisons:
        if (np.asarray(rec.winner).shape != (k_dim,)
                or np.asarray(rec.loser).shape != (k_dim,)):
            raise ContractError("comparison outcome vectors must share length k")

    support: list[np.ndarray] = []

    def _index_of(y: np.ndarray) -> int:
        if support:
            d = np.linalg.norm(np.asarray(support) - y, axis=1)
            hit = int(np.argmin(d))
            if d[hit] <= DEDUP_TOL:
                return hit
        support.append(y)
        return len(support) - 1

    comps = np.array(
        [[_index_of(np.asarray(r.winner, dtype=float)),
          _index_of(np.asarray(r.loser, dtype=float))] for r in comparisons],
        dtype=int,
    )
    z = np.vstack(support)
    center = z.mean(axis=0)
    scale = z.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    z_std = (z - center) / scale
    n = z.shape[0]
    c = np.sqrt(2.0) * config.noise_scale

    eye = np.eye(n)
    warm_mode = {"u": None}

    def neg_evidence(theta):
        ls = np.exp(theta[:k_dim])
        s2 = float(np.exp(theta[k_dim]))
        k = kb.cross(config.kernel, z_std, z_std, ls, s2)
        k[np.diag_indices(n)] += PRIOR_JITTER * s2
        try:
            lk = cholesky(k, lower=True, check_finite=False)
            kinv = cho_solve((lk, True), eye, check_finite=False)
            u, _, w, psi = _laplace_mode(kinv, comps, c, n,
                                         config.newton_max_iter, config.newton_tol,
                                         u0=warm_mode["u"])
        except (np.linalg.LinAlgError, InferenceError):
            return 1e25
        warm_mode["u"] = u
        sign, logdet = np.linalg.slogdet(eye + k @ w)
        if sign <= 0:
            return 1e25
        return -(psi - 0.5 * logdet)

    lo = np.log([config.lengthscale_bounds[0]] * k_dim + [config.signal_bounds[0]])
    hi = np.log([config.lengthscale_bounds[1]] * k_dim + [config.signal_bounds[1]])
    bounds = list(zip(lo, hi))
    gen = RngStream(config.seed, "pref-fit").generator()
    starts = [np.log(np.r_[np.full(k_dim, 1.0), 4.0])]
    if config.warm_theta is not None:
        starts.insert(0, np.asarray(config.warm_theta, dtype=float))
    while len(starts) < max(config.restarts, 1):
        starts.append(np.r_[gen.uniform(np.log(0.3), np.log(5.0), size=k_dim),
                            gen.uniform(np.log(0.5), np.log(20.0))])

    best_val, best_theta = np.inf, starts[0]
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        res = minimize(neg_evidence, x0, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": config.max_iter, "eps": 1e-4})
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x

    kern = Kernel(config.kernel, np.exp(best_theta[:k_dim]),
                  float(np.exp(best_theta[k_dim])))
    model = PreferenceModel(k_dim, kern, config.noise_scale,
                            train_outcomes=z, comparisons=comps,
                            records=list(comparisons), y_center=center, y_scale=scale)
    model.fitted_theta = best_theta
    return model


def utility_posterior(model: PreferenceModel, y: np.ndarray) -> tuple[float, float]:
    """Predictive mean and std of the latent utility at one outcome vector."""
    y = np.asarray(y, dtype=float)[None, :]
    mean = float(model.predictive_mean(y)[0])
    var = float(model.predictive_cov(y, y)[0, 0])
    return mean, float(np.sqrt(max(var, 0.0)))


def utility_posterior_batch(model: PreferenceModel, ys: np.ndarray):
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    mean = model.predictive_mean(ys)
    var = np.empty(ys.shape[0])
    if model.is_prior:
        var[:] = model.kernel.output_scale
    else:
        k = model._cross_std(ys)
        q = cho_solve((model._k_chol, True), k, check_finite=False)
        var = (model.kernel.output_scale - np.sum(k * q, axis=0)
               + np.sum(q * cho_solve((model._a_chol, True), q, check_finite=False), axis=0))
    return mean, np.sqrt(np.maximum(var, 0.0))


def utility_mean_gradient(model: PreferenceModel, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of the predictive utility mean w.r.t. the outcome dims."""
    return utility_mean_gradient_batch(model, np.asarray(y, dtype=float)[None, :])[0]


def utility_mean_gradient_batch(model: PreferenceModel, ys: np.ndarray) -> np.ndarray:
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if model.is_prior:
        return np.zeros_like(ys)
    ys_std = (ys - model.y_center) / model.y_scale
    g = kb.grad_mean(model.kernel.kind, ys_std, model._z_std,
                     model.kernel.lengthscales, model.kernel.output_scale, model._beta)
    return g / model.y_scale


def utility_sample(model: PreferenceModel, ys: np.ndarray, rng: RngStream) -> np.ndarray:
    """One joint draw from the Laplace predictive distribution at ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    mean = model.predictive_mean(ys)
    cov = model.predictive_cov(ys, ys)
    l, _ = chol_with_jitter(cov + 1e-12 * np.eye(ys.shape[0]))
    return mean + l @ rng.generator().standard_normal(ys.shape[0])
