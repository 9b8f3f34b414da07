import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import log_ndtr

from molone import prefgp
from molone.errors import ContractError
from molone.gp import Kernel
from molone.prefgp import (ComparisonRecord, PreferenceModel, PrefFitConfig,
                           fit_preference, utility_mean_gradient,
                           utility_posterior, utility_posterior_batch,
                           utility_sample)
from molone.rng import RngStream


def _sqexp(a, b, ls, s2):
    out = np.empty((len(a), len(b)))
    for i, u in enumerate(a):
        for j, v in enumerate(b):
            out[i, j] = s2 * np.exp(-0.5 * np.sum(((u - v) / ls) ** 2))
    return out


def _brute_force_mode(z, comps, ls, s2, lam):
    """MAP latent utilities by generic numerical optimization (oracle)."""
    k = _sqexp(z, z, ls, s2) + prefgp.PRIOR_JITTER * s2 * np.eye(len(z))
    kinv = np.linalg.inv(k)
    c = np.sqrt(2.0) * lam

    def neg_psi(u):
        zz = (u[comps[:, 0]] - u[comps[:, 1]]) / c
        val = -(np.sum(log_ndtr(zz)) - 0.5 * u @ kinv @ u)
        rho = np.exp(-0.5 * zz * zz - 0.5 * np.log(2 * np.pi) - log_ndtr(zz))
        g = np.zeros(len(u))
        np.add.at(g, comps[:, 0], rho / c)
        np.add.at(g, comps[:, 1], -rho / c)
        return val, -(g - kinv @ u)

    res = minimize(neg_psi, np.zeros(len(z)), method="BFGS", jac=True,
                   options={"gtol": 1e-12, "maxiter": 1000})
    return res.x


def _fixed_model(z, comps, ls=None, s2=4.0, lam=1.0):
    z = np.asarray(z, dtype=float)
    ls = np.ones(z.shape[1]) if ls is None else np.asarray(ls, dtype=float)
    kern = Kernel("sqexp", ls, s2)
    return PreferenceModel(z.shape[1], kern, lam, train_outcomes=z,
                           comparisons=np.asarray(comps, dtype=int))


def test_mode_matches_brute_force():
    gen = np.random.default_rng(0)
    z = gen.uniform(size=(6, 2))
    comps = np.array([[0, 1], [2, 3], [4, 5], [0, 3], [2, 5]])
    model = _fixed_model(z, comps, ls=[1.0, 1.0], s2=4.0)
    # Direct construction pins the outcomes as-is (no standardization).
    oracle = _brute_force_mode(z, comps, np.array([1.0, 1.0]), 4.0, 1.0)
    assert np.allclose(model.laplace_mode, oracle, atol=1e-6)


def test_single_comparison_orders_utilities():
    a = np.array([2.0, 0.0])
    b = np.array([-2.0, 0.0])
    model = _fixed_model([a, b], [[0, 1]])
    mu_a, _ = utility_posterior(model, a)
    mu_b, _ = utility_posterior(model, b)
    assert mu_a > mu_b


def test_symmetric_duel_ties():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    model = _fixed_model([a, b], [[0, 1], [1, 0]])
    mu_a, _ = utility_posterior(model, a)
    mu_b, _ = utility_posterior(model, b)
    assert abs(mu_a - mu_b) < 1e-6


def test_two_point_predictive_hand_solved():
    # Dense evaluation of the Laplace predictive equations on a 2x2 system.
    a = np.array([1.5, 0.0])
    b = np.array([-1.5, 0.0])
    model = _fixed_model([a, b], [[0, 1]], s2=2.0)
    z_std = model._z_std
    k = _sqexp(z_std, z_std, model.kernel.lengthscales, 2.0) \
        + prefgp.PRIOR_JITTER * 2.0 * np.eye(2)
    kinv = np.linalg.inv(k)
    u = model.laplace_mode
    beta = kinv @ u
    c = np.sqrt(2.0)
    zz = (u[0] - u[1]) / c
    rho = np.exp(-0.5 * zz**2 - 0.5 * np.log(2 * np.pi) - log_ndtr(zz))
    omega = rho**2 + zz * rho
    w = (omega / c**2) * np.array([[1.0, -1.0], [-1.0, 1.0]])
    a_mat = kinv + w

    yq = np.array([0.7, 0.3])
    yq_std = (yq - model.y_center) / model.y_scale
    ks = _sqexp(yq_std[None], z_std, model.kernel.lengthscales, 2.0)[0]
    expected_mean = float(ks @ beta)
    q1 = kinv @ ks
    expected_var = 2.0 - ks @ q1 + q1 @ np.linalg.inv(a_mat) @ q1

    mu, std = utility_posterior(model, yq)
    assert mu == pytest.approx(expected_mean, rel=1e-8, abs=1e-10)
    assert std**2 == pytest.approx(expected_var, rel=1e-6)


def test_prior_model_fallbacks():
    model = PreferenceModel.prior(3)
    mu, std = utility_posterior(model, np.array([0.1, 0.2, 0.3]))
    assert mu == 0.0
    assert std == pytest.approx(1.0)
    grad = utility_mean_gradient(model, np.array([0.1, 0.2, 0.3]))
    assert np.allclose(grad, 0.0)
    draw = utility_sample(model, np.array([[0.1, 0.2, 0.3]]), RngStream(0, "p"))
    assert draw.shape == (1,)


def test_far_query_reverts_to_prior():
    gen = np.random.default_rng(1)
    z = gen.uniform(size=(6, 2))
    comps = np.array([[0, 1], [2, 3]])
    model = _fixed_model(z, comps, ls=[0.3, 0.3], s2=3.0)
    mu, std = utility_posterior(model, np.array([500.0, -500.0]))
    assert mu == pytest.approx(0.0, abs=1e-8)
    assert std == pytest.approx(np.sqrt(3.0), rel=1e-6)


def test_gradient_matches_finite_differences():
    gen = np.random.default_rng(2)
    z = gen.uniform(size=(8, 3))
    comps = np.array([[0, 1], [2, 3], [4, 5], [6, 7], [0, 4]])
    model = _fixed_model(z, comps, ls=[0.8, 1.1, 0.9], s2=2.5)
    h = 1e-5
    for _ in range(20):
        y = gen.uniform(size=3)
        grad = utility_mean_gradient(model, y)
        for j in range(3):
            yp, ym = y.copy(), y.copy()
            yp[j] += h
            ym[j] -= h
            fd = (model.predictive_mean(yp[None])[0]
                  - model.predictive_mean(ym[None])[0]) / (2 * h)
            assert grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_fit_preference_single_dimension_drives_utility():
    gen = np.random.default_rng(3)
    records = []
    for _ in range(12):
        a = gen.uniform(size=2)
        b = gen.uniform(size=2)
        if abs(a[0] - b[0]) < 0.2:
            continue
        w, l = (a, b) if a[0] > b[0] else (b, a)
        records.append(ComparisonRecord(w, l))
    model = fit_preference(records, PrefFitConfig(seed=4))
    ys = gen.uniform(size=(20, 2))
    grads = np.abs(prefgp.utility_mean_gradient_batch(model, ys))
    assert grads[:, 0].max() > grads[:, 1].max()


def test_fit_determinism():
    gen = np.random.default_rng(5)
    records = [
        ComparisonRecord(gen.uniform(size=2), gen.uniform(size=2)) for _ in range(6)
    ]
    cfg = PrefFitConfig(seed=11, restarts=2)
    m1 = fit_preference(records, cfg)
    m2 = fit_preference(records, cfg)
    assert np.array_equal(m1.laplace_mode, m2.laplace_mode)
    assert np.array_equal(m1.kernel.lengthscales, m2.kernel.lengthscales)


def test_mode_is_centered():
    # Translation invariance of the likelihood: the zero-mean prior pins the
    # level, which makes the mode exactly centered in the prior metric
    # (1' K^-1 u = 0); the arithmetic mean is only approximately zero.
    from scipy.linalg import cho_solve

    gen = np.random.default_rng(6)
    records = [
        ComparisonRecord(gen.uniform(size=3), gen.uniform(size=3)) for _ in range(10)
    ]
    model = fit_preference(records, PrefFitConfig(seed=7, restarts=2))
    kinv_u = cho_solve((model._k_chol, True), model.laplace_mode)
    assert abs(np.sum(kinv_u)) < 1e-6
    spread = np.max(np.abs(model.laplace_mode)) + 1e-12
    assert abs(np.mean(model.laplace_mode)) < 0.5 * spread


def test_mode_stationarity():
    gen = np.random.default_rng(7)
    records = [
        ComparisonRecord(gen.uniform(size=2), gen.uniform(size=2)) for _ in range(8)
    ]
    model = fit_preference(records, PrefFitConfig(seed=8, restarts=2))
    # grad psi = grad loglik - K^{-1} u must vanish at the mode.
    from scipy.linalg import cho_solve

    kinv_u = cho_solve((model._k_chol, True), model.laplace_mode)
    c = np.sqrt(2.0) * model.noise_scale
    zz = (model.laplace_mode[model.comparisons[:, 0]]
          - model.laplace_mode[model.comparisons[:, 1]]) / c
    rho = np.exp(-0.5 * zz * zz - 0.5 * np.log(2 * np.pi) - log_ndtr(zz))
    grad = np.zeros(len(model.laplace_mode))
    np.add.at(grad, model.comparisons[:, 0], rho / c)
    np.add.at(grad, model.comparisons[:, 1], -rho / c)
    assert np.max(np.abs(grad - kinv_u)) < 1e-6


def test_dedup_of_repeated_outcomes():
    a = np.array([0.5, 0.5])
    b = np.array([0.1, 0.9])
    c = np.array([0.9, 0.1])
    records = [ComparisonRecord(a, b), ComparisonRecord(a.copy(), c),
               ComparisonRecord(a + 1e-12, b.copy())]
    model = fit_preference(records, PrefFitConfig(restarts=1))
    assert model.train_outcomes.shape[0] == 3
    assert model.comparisons.shape[0] == 3


def test_contradictory_duplicates_accepted():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    records = [ComparisonRecord(a, b), ComparisonRecord(b, a), ComparisonRecord(a, b)]
    model = fit_preference(records, PrefFitConfig(restarts=1))
    mu_a, _ = utility_posterior(model, a)
    mu_b, _ = utility_posterior(model, b)
    assert mu_a > mu_b  # 2-1 majority for a


def test_utility_sample_determinism_and_marginals():
    gen = np.random.default_rng(8)
    z = gen.uniform(size=(6, 2))
    comps = np.array([[0, 1], [2, 3], [4, 5]])
    model = _fixed_model(z, comps, ls=[0.7, 0.7], s2=2.0)
    ys = gen.uniform(size=(3, 2))
    s1 = utility_sample(model, ys, RngStream(31, "u"))
    s2 = utility_sample(model, ys, RngStream(31, "u"))
    assert np.array_equal(s1, s2)

    draws = np.stack([
        utility_sample(model, ys, RngStream(32, f"d{i}")) for i in range(10000)
    ])
    _, std = utility_posterior_batch(model, ys)
    emp = draws.std(axis=0)
    assert np.allclose(emp, std, rtol=0.05)


def test_empty_fit_rejected():
    with pytest.raises(ContractError):
        fit_preference([], PrefFitConfig())


def test_transitivity_statistical():
    # Chains a > b > c on well-separated outcomes should almost always give
    # mu(a) > mu(c); Laplace inference does not guarantee it, so this is a
    # statistical property rather than an invariant.
    gen = np.random.default_rng(9)
    ok = 0
    trials = 40
    for _ in range(trials):
        base = gen.uniform(0.0, 0.3, size=2)
        a = base + np.array([1.6, 0.0])
        b = base + np.array([0.8, 0.0])
        c = base
        records = [ComparisonRecord(a, b), ComparisonRecord(b, c)]
        model = fit_preference(records, PrefFitConfig(restarts=1, seed=13))
        if model.predictive_mean(a[None])[0] > model.predictive_mean(c[None])[0]:
            ok += 1
    assert ok / trials >= 0.95
