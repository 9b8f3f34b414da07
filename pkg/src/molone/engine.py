"""Preference-based Bayesian optimization loop.

A session alternates preference-exploration rounds (candidate pairs chosen
by a Monte-Carlo expected-utility-of-the-best-option score over a Sobol
pool) with experimentation batches (sequential-greedy batch noisy expected
improvement, integrating over both the outcome-model and utility-model
posteriors via common-random-number path draws).  All randomness derives
from one root seed, so an entire run replays bit-for-bit from its seed and
choice sequence.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import benchmarks, gp, prefgp
from .errors import ContractError, StateError, StalePairError
from .explain import ExplainConfig, ExplanationBundle, explain_pair
from .gp import FitConfig, GPModel, chol_with_jitter
from .prefgp import ComparisonRecord, PreferenceModel, PrefFitConfig
from .rng import RngStream
from .sampling import sobol

AWAITING_CHOICE = "awaiting_choice"
EXPERIMENTING = "experimenting"
DONE = "done"


@dataclass
class EngineConfig:
    benchmark: str = "dtlz2"
    seed: int = 0
    n_init: int = 20
    n_seed_comparisons: int = 4
    stages: int = 4
    rounds_per_stage: int = 8
    q: int = 4
    total_comparisons: int | None = None  # defaults to stages * rounds_per_stage
    pair_pool: int = 256
    pair_mc_draws: int = 64
    batch_pool: int = 128
    batch_mc_draws: int = 128
    refine_starts: int = 16
    refine_sweeps: int = 2
    refine_step: float = 0.05
    explanations: bool = False
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    gp_kernel: str = "matern52"
    gp_restarts: int = 8
    pref_kernel: str = "sqexp"
    pref_restarts: int = 3
    comparison_source: str = "simulated_agent"

    @property
    def comparison_budget(self) -> int:
        if self.total_comparisons is not None:
            return self.total_comparisons
        return self.stages * self.rounds_per_stage

    def resolved(self) -> dict:
        d = asdict(self)
        d["total_comparisons"] = self.comparison_budget
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "EngineConfig":
        raw = dict(raw or {})
        explain_raw = raw.pop("explain", None)
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        if explain_raw is not None:
            allowed = {f.name for f in ExplainConfig.__dataclass_fields__.values()}
            bad = set(explain_raw) - allowed
            if bad:
                raise ContractError(f"unknown explain config keys: {sorted(bad)}")
            cfg = replace(cfg, explain=ExplainConfig(**explain_raw))
        return cfg


@dataclass(frozen=True)
class Candidate:
    x: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    y_true: np.ndarray  # engine-side ground truth; never serialized to clients


@dataclass(frozen=True)
class CandidatePair:
    pair_id: int
    a: Candidate
    b: Candidate


@dataclass
class PendingPair:
    pair: CandidatePair
    bundle: ExplanationBundle | None


@dataclass
class SessionState:
    problem: benchmarks.BenchmarkProblem
    config: EngineConfig
    rng: RngStream
    observations_x: np.ndarray
    observations_y: np.ndarray
    comparisons: list[ComparisonRecord]
    model: GPModel
    pref_model: PreferenceModel
    stage_index: int = 0
    round_index: int = 0
    comparisons_done: int = 0
    pair_counter: int = 0
    phase: str = AWAITING_CHOICE
    pending: PendingPair | None = None
    trajectory: list[float] = field(default_factory=list)

    def snapshot(self) -> dict:
        return {
            "phase": self.phase,
            "stage_index": self.stage_index,
            "round_index": self.round_index,
            "comparisons_done": self.comparisons_done,
            "n_observations": int(self.observations_x.shape[0]),
            "n_comparisons": len(self.comparisons),
        }


def _gp_config(config: EngineConfig, rng: RngStream, tag: str) -> FitConfig:
    return FitConfig(kernel=config.gp_kernel, restarts=config.gp_restarts,
                     seed=rng.child(tag).integer_seed())


def _pref_config(config: EngineConfig, rng: RngStream, tag: str,
                 warm_theta=None) -> PrefFitConfig:
    # Warm refits start from the previous optimum plus the heuristic start;
    # extra random restarts and long optimizer runs only pay off cold.
    restarts = 2 if warm_theta is not None else config.pref_restarts
    max_iter = 8 if warm_theta is not None else 30
    return PrefFitConfig(kernel=config.pref_kernel, restarts=restarts,
                         seed=rng.child(tag).integer_seed(), warm_theta=warm_theta,
                         max_iter=max_iter)


def _fit_pref(comparisons, config, rng, tag, warm_theta=None,
              outcome_dim=None) -> PreferenceModel:
    if not comparisons:
        return PreferenceModel.prior(outcome_dim, config.pref_kernel)
    return prefgp.fit_preference(comparisons,
                                 _pref_config(config, rng, tag, warm_theta))


def initialize(config: EngineConfig) -> SessionState:
    """Evaluate the Sobol initialization, bootstrap both models, issue pair 1."""
    problem = benchmarks.get_problem(config.benchmark)
    rng = RngStream(config.seed, "session")
    x0 = sobol(config.n_init, problem.input_dim, rng.child("init"))
    y0 = benchmarks.evaluate(problem, x0)
    model = gp.fit(x0, y0, _gp_config(config, rng, "gp-fit-0"))

    comparisons: list[ComparisonRecord] = []
    gen = rng.child("seed-comparisons").generator()
    for _ in range(config.n_seed_comparisons):
        i, j = gen.choice(config.n_init, size=2, replace=False)
        ui = benchmarks.true_utility(problem, y0[i])
        uj = benchmarks.true_utility(problem, y0[j])
        w, l = (i, j) if ui >= uj else (j, i)
        comparisons.append(ComparisonRecord(y0[w].copy(), y0[l].copy(),
                                            source="seed_random"))
    pref = _fit_pref(comparisons, config, rng, "pref-fit-0",
                     outcome_dim=problem.output_dim)

    state = SessionState(
        problem=problem, config=config, rng=rng,
        observations_x=x0, observations_y=y0,
        comparisons=comparisons, model=model, pref_model=pref,
    )
    _issue_pair(state)
    return state


def generate_pair(state: SessionState) -> CandidatePair:
    """Candidate pair maximizing the MC expected utility of the best option."""
    if state.phase == DONE:
        raise StateError("session is done; no further pairs")
    config = state.config
    problem = state.problem
    stream = state.rng.child(f"pair-{state.pair_counter}")
    pool = sobol(config.pair_pool, problem.input_dim, stream.child("pool"))
    mu, sigma = gp.posterior_batch(state.model, pool)

    spread = float(np.max(np.ptp(mu, axis=0))) if pool.shape[0] > 1 else 0.0
    if spread < 1e-12:
        # Degenerate predictions: fall back to the most distant design pair.
        d2 = np.sum((pool[:, None, :] - pool[None, :, :]) ** 2, axis=-1)
        i, j = np.unravel_index(np.argmax(d2), d2.shape)
        i, j = min(i, j), max(i, j)
    else:
        i, j = _eubo_select(mu, state.pref_model, config.pair_mc_draws,
                            stream.child("draws"))

    def _candidate(idx: int) -> Candidate:
        x = pool[idx]
        return Candidate(x=x, y_mean=mu[idx], y_std=sigma[idx],
                         y_true=benchmarks.evaluate(problem, x))

    return CandidatePair(pair_id=state.pair_counter + 1,
                         a=_candidate(i), b=_candidate(j))


def _eubo_select(mu: np.ndarray, pref: PreferenceModel, n_draws: int,
                 stream: RngStream) -> tuple[int, int]:
    """Pair with the best MC expected utility of the better option.

    Scores every unordered pool pair with joint utility draws.  The max
    operator rewards both high predicted utility and diversity, so winning
    pairs are usually one strong candidate plus one informative one rather
    than two near-identical leaders.  Ties break toward the smallest index
    pair.
    """
    n = mu.shape[0]
    mean_u = pref.predictive_mean(mu)
    cov_u = pref.predictive_cov(mu, mu)
    l, _ = chol_with_jitter(cov_u + 1e-12 * np.eye(n))
    z = stream.generator().standard_normal((n_draws, n))
    draws = mean_u[None, :] + z @ l.T  # (S, P)
    scores = np.zeros((n, n))
    for s in range(n_draws):
        scores += np.maximum(draws[s][:, None], draws[s][None, :])
    scores /= n_draws
    scores[np.tril_indices(n)] = -np.inf  # keep i < j only
    i, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
    return int(i), int(j)


def _issue_pair(state: SessionState) -> None:
    pair = generate_pair(state)
    state.pair_counter += 1
    bundle = None
    if state.config.explanations:
        bundle = explain_pair(
            pair.a.x, pair.b.x, state.model, state.pref_model,
            state.config.explain, state.rng.child(f"explain-{pair.pair_id}"))
    state.pending = PendingPair(pair, bundle)
    state.phase = AWAITING_CHOICE


def submit_choice(state: SessionState, pair_id: int, choice: str) -> SessionState:
    """Record a preference, refit the utility model, advance the state machine."""
    if state.phase != AWAITING_CHOICE:
        raise StateError(f"choice not accepted in phase {state.phase!r}")
    if state.pending is None or state.pending.pair.pair_id != pair_id:
        raise StalePairError(f"pair {pair_id} is not the pending pair")
    if choice not in ("A", "B"):
        raise ContractError("choice must be 'A' or 'B'")

    pair = state.pending.pair
    winner, loser = (pair.a, pair.b) if choice == "A" else (pair.b, pair.a)
    state.comparisons.append(ComparisonRecord(
        winner.y_mean.copy(), loser.y_mean.copy(),
        source=state.config.comparison_source))

    warm = getattr(state.pref_model, "fitted_theta", None)
    state.pref_model = _fit_pref(
        state.comparisons, state.config, state.rng,
        f"pref-fit-{state.comparisons_done + 1}", warm_theta=warm,
        outcome_dim=state.problem.output_dim)

    state.comparisons_done += 1
    state.round_index += 1
    state.pending = None

    if state.round_index >= state.config.rounds_per_stage:
        experimentation_batch(state)

    state.trajectory.append(best_so_far(state))

    if (state.comparisons_done >= state.config.comparison_budget
            or state.stage_index >= state.config.stages):
        state.phase = DONE
        state.pending = None
    else:
        _issue_pair(state)
    return state


def best_so_far(state: SessionState) -> float:
    """Best ground-truth utility across all evaluated observations."""
    if state.observations_y.shape[0] < 1:
        raise ContractError("no observations recorded")
    return float(np.max(benchmarks.true_utility(state.problem,
                                                state.observations_y)))


# -- experimentation batch (pathwise MC noisy-EI with utility uncertainty) --


def _pairwise_kernel_batched(kind: str, ls, s2: float, a: np.ndarray,
                             b: np.ndarray) -> np.ndarray:
    """Stationary kernel between per-draw point sets: (S,m,k),(S,n,k)->(S,m,n)."""
    diff = (a[:, :, None, :] - b[:, None, :, :]) / ls
    r2 = np.einsum("smnk,smnk->smn", diff, diff)
    if kind == "sqexp":
        return s2 * np.exp(-0.5 * r2)
    r = np.sqrt(np.maximum(r2, 0.0))
    return s2 * (1.0 + np.sqrt(5.0) * r + (5.0 / 3.0) * r2) * np.exp(-np.sqrt(5.0) * r)


class _BatchAcquisition:
    """Common-random-number evaluator for the batch acquisition surface.

    Holds S coupled path draws of the outcome model at the baseline designs
    and of the utility model at those drawn outcomes; candidate designs are
    scored by conditioning both paths on the shared draws, so the whole
    surface is a deterministic function of the candidate coordinates.
    """

    CHUNK = 32

    def __init__(self, model: GPModel, pref: PreferenceModel,
                 baseline_x: np.ndarray, n_draws: int, stream: RngStream,
                 max_absorb: int = 16):
        self.model = model
        self.pref = pref
        self.n_draws = n_draws
        gen = stream.generator()
        cap = baseline_x.shape[0] + max_absorb
        self._z_cand_f = gen.standard_normal((n_draws, model.output_dim))
        self._z_cand_u = gen.standard_normal(n_draws)
        self._z_base_f = gen.standard_normal((n_draws, model.output_dim, cap))
        self._z_base_u = gen.standard_normal((n_draws, cap))
        self._set_paths(baseline_x, None, None)
        self.beta = self.util_base.max(axis=1)  # incumbent utility per draw
        self.running = np.full(n_draws, -np.inf)

    def _set_paths(self, baseline_x, f_draws, util_draws) -> None:
        """(Re)build conditioning caches; draw path values where not supplied."""
        model, pref = self.model, self.pref
        s, k = self.n_draws, model.output_dim
        nb = baseline_x.shape[0]
        self.baseline_x = baseline_x
        mean_b, _ = gp.posterior_batch(model, baseline_x)
        cov_b = gp.posterior_cov(model, baseline_x, baseline_x)
        self._f_chol = []
        self._f_weights = []  # per output: (nb, S) conditioning weights
        if f_draws is None:
            f_draws = np.empty((s, nb, k))
            for m in range(k):
                l, _ = chol_with_jitter(cov_b[m] + 1e-10 * np.eye(nb))
                self._f_chol.append(l)
                f_draws[:, :, m] = mean_b[:, m][None, :] \
                    + self._z_base_f[:, m, :nb] @ l.T
        else:
            for m in range(k):
                l, _ = chol_with_jitter(cov_b[m] + 1e-10 * np.eye(nb))
                self._f_chol.append(l)
        for m in range(k):
            dev = (f_draws[:, :, m] - mean_b[:, m][None, :]).T  # (nb, S)
            w = solve_triangular(self._f_chol[m], dev, lower=True, check_finite=False)
            self._f_weights.append(solve_triangular(
                self._f_chol[m], w, lower=True, trans="T", check_finite=False))
        self.f_base = f_draws

        yb_std = (f_draws - pref.y_center) / pref.y_scale  # (S, nb, k)
        kern = pref.kernel
        prior_bb = _pairwise_kernel_batched(kern.kind, kern.lengthscales,
                                            kern.output_scale, yb_std, yb_std)
        if pref.is_prior:
            mu_b = np.zeros((s, nb))
            cov_bb = prior_bb
            self._q1b = np.zeros((s, 0, nb))
            self._q2b = np.zeros((s, 0, nb))
            self._kzb = np.zeros((s, 0, nb))
        else:
            nz = pref._z_std.shape[0]
            flat = yb_std.reshape(s * nb, k)
            kzb = prefgp.kb.cross(kern.kind, pref._z_std, flat,
                                  kern.lengthscales, kern.output_scale)
            q1 = cho_solve((pref._k_chol, True), kzb, check_finite=False)
            q2 = cho_solve((pref._a_chol, True), q1, check_finite=False)
            self._kzb = kzb.reshape(nz, s, nb).transpose(1, 0, 2)
            self._q1b = q1.reshape(nz, s, nb).transpose(1, 0, 2)
            self._q2b = q2.reshape(nz, s, nb).transpose(1, 0, 2)
            mu_b = np.einsum("szb,z->sb", self._kzb, pref._beta)
            cov_bb = (prior_bb
                      - np.matmul(self._kzb.transpose(0, 2, 1), self._q1b)
                      + np.matmul(self._q1b.transpose(0, 2, 1), self._q2b))

        eye = np.eye(nb)
        self._u_chol_inv = np.empty((s, nb, nb))
        self._u_weights = np.empty((s, nb))
        drawn = util_draws is None
        if drawn:
            util_draws = np.empty((s, nb))
        for si in range(s):
            l, _ = chol_with_jitter(cov_bb[si] + 1e-10 * eye)
            li = solve_triangular(l, eye, lower=True, check_finite=False)
            self._u_chol_inv[si] = li
            if drawn:
                util_draws[si] = mu_b[si] + l @ self._z_base_u[si, :nb]
            dev = util_draws[si] - mu_b[si]
            self._u_weights[si] = li.T @ (li @ dev)
        self.util_base = util_draws

    def evaluate(self, x_cand: np.ndarray, return_draws: bool = False):
        """Acquisition value per candidate row; optionally the path draws."""
        x_cand = np.atleast_2d(x_cand)
        vals = np.empty(x_cand.shape[0])
        draws_f: list[np.ndarray] = []
        draws_u: list[np.ndarray] = []
        for lo in range(0, x_cand.shape[0], self.CHUNK):
            chunk = x_cand[lo:lo + self.CHUNK]
            a, fd, ud = self._evaluate_chunk(chunk)
            vals[lo:lo + self.CHUNK] = a
            if return_draws:
                draws_f.append(fd)
                draws_u.append(ud)
        if return_draws:
            return (vals, np.concatenate(draws_f, axis=1),
                    np.concatenate(draws_u, axis=1))
        return vals

    def _evaluate_chunk(self, x_cand: np.ndarray):
        model, pref = self.model, self.pref
        s = self.n_draws
        m_c = x_cand.shape[0]
        k = model.output_dim

        mean_x, std_x = gp.posterior_batch(model, x_cand)
        cov_xb = gp.posterior_cov(model, x_cand, self.baseline_x)  # (k, m, nb)
        f_draw = np.empty((s, m_c, k))
        for m in range(k):
            cond_mean = mean_x[:, m][:, None] + cov_xb[m] @ self._f_weights[m]
            t = solve_triangular(self._f_chol[m], cov_xb[m].T, lower=True,
                                 check_finite=False)
            cond_var = np.clip(std_x[:, m] ** 2 - np.sum(t * t, axis=0), 0.0, None)
            f_draw[:, :, m] = cond_mean.T + np.sqrt(cond_var)[None, :] \
                * self._z_cand_f[:, m][:, None]

        yc_std = (f_draw - pref.y_center) / pref.y_scale
        kern = pref.kernel
        prior_cb = _pairwise_kernel_batched(
            kern.kind, kern.lengthscales, kern.output_scale, yc_std,
            (self.f_base - pref.y_center) / pref.y_scale)  # (S, m, nb)
        if pref.is_prior:
            mu_u = np.zeros((s, m_c))
            var_u = np.full((s, m_c), kern.output_scale)
            cov_cb = prior_cb
        else:
            nz = pref._z_std.shape[0]
            flat = yc_std.reshape(s * m_c, k)
            kzc = prefgp.kb.cross(kern.kind, pref._z_std, flat,
                                  kern.lengthscales, kern.output_scale)
            q1c = cho_solve((pref._k_chol, True), kzc, check_finite=False)
            q2c = cho_solve((pref._a_chol, True), q1c, check_finite=False)
            kzc_r = kzc.reshape(nz, s, m_c).transpose(1, 0, 2)
            q1c_r = q1c.reshape(nz, s, m_c).transpose(1, 0, 2)
            q2c_r = q2c.reshape(nz, s, m_c).transpose(1, 0, 2)
            mu_u = np.einsum("szm,z->sm", kzc_r, pref._beta)
            var_u = (kern.output_scale
                     - np.sum(kzc_r * q1c_r, axis=1)
                     + np.sum(q1c_r * q2c_r, axis=1))
            cov_cb = (prior_cb
                      - np.matmul(kzc_r.transpose(0, 2, 1), self._q1b)
                      + np.matmul(q1c_r.transpose(0, 2, 1), self._q2b))

        cond_mean_u = mu_u + np.matmul(cov_cb, self._u_weights[:, :, None])[:, :, 0]
        t = np.matmul(self._u_chol_inv, cov_cb.transpose(0, 2, 1))  # (S, nb, m)
        cond_var_u = np.clip(var_u - np.sum(t * t, axis=1), 0.0, None)
        u_draw = cond_mean_u + np.sqrt(cond_var_u) * self._z_cand_u[:, None]

        lifted = np.maximum(u_draw, self.running[:, None])
        improvement = np.clip(lifted - self.beta[:, None], 0.0, None)
        return improvement.mean(axis=0), f_draw, u_draw

    def absorb(self, x_new: np.ndarray) -> None:
        """Add a selected design to the conditioning paths (sequential greedy)."""
        _, f_new, u_new = self.evaluate(x_new[None, :], return_draws=True)
        self.running = np.maximum(self.running, u_new[:, 0])
        if self._z_base_u.shape[1] < self.baseline_x.shape[0] + 1:
            raise StateError("batch size exceeded preallocated draw buffer")
        self._set_paths(
            np.vstack([self.baseline_x, x_new[None, :]]),
            np.concatenate([self.f_base, f_new], axis=1),
            np.concatenate([self.util_base, u_new], axis=1))


def experimentation_batch(state: SessionState) -> SessionState:
    """Select, evaluate and absorb q new designs; refit the outcome model."""
    if state.round_index < state.config.rounds_per_stage:
        raise StateError("experimentation batch requires a completed stage")
    config = state.config
    stream = state.rng.child(f"batch-{state.stage_index}")
    state.phase = EXPERIMENTING
    state.pending = None

    acq = _BatchAcquisition(state.model, state.pref_model, state.observations_x,
                            config.batch_mc_draws, stream.child("paths"),
                            max_absorb=config.q + 1)
    pool = sobol(config.batch_pool, state.problem.input_dim, stream.child("pool"))
    picks = []
    for _ in range(config.q):
        vals = acq.evaluate(pool)
        order = np.argsort(-vals, kind="stable")
        try:
            x_best, _ = _refine(acq, pool[order[: config.refine_starts]],
                                vals[order[: config.refine_starts]], config)
        except Exception:
            # Optimizer failure: fall back to the best pool point by value.
            x_best = pool[order[0]]
        picks.append(x_best)
        acq.absorb(x_best)
    x_new = np.vstack(picks)
    y_new = benchmarks.evaluate(state.problem, x_new)

    state.observations_x = np.vstack([state.observations_x, x_new])
    state.observations_y = np.vstack([state.observations_y, y_new])
    state.model = gp.fit(state.observations_x, state.observations_y,
                         _gp_config(config, state.rng,
                                    f"gp-fit-{state.stage_index + 1}"),
                         warm=state.model)
    state.stage_index += 1
    state.round_index = 0
    return state


def _refine(acq: _BatchAcquisition, starts: np.ndarray, start_vals: np.ndarray,
            config: EngineConfig):
    """Coordinate-wise local refinement of the MC acquisition with CRN draws."""
    cur_x = starts.copy()
    cur_v = start_vals.copy()
    n, d = cur_x.shape
    for _ in range(config.refine_sweeps):
        for j in range(d):
            up = cur_x.copy()
            up[:, j] = np.clip(up[:, j] + config.refine_step, 0.0, 1.0)
            down = cur_x.copy()
            down[:, j] = np.clip(down[:, j] - config.refine_step, 0.0, 1.0)
            vals = acq.evaluate(np.vstack([up, down]))
            v_up, v_down = vals[:n], vals[n:]
            take_up = (v_up > cur_v) & (v_up >= v_down)
            take_down = (v_down > cur_v) & (v_down > v_up)
            cur_x[take_up] = up[take_up]
            cur_v[take_up] = v_up[take_up]
            cur_x[take_down] = down[take_down]
            cur_v[take_down] = v_down[take_down]
    best = int(np.argmax(cur_v))
    return cur_x[best], float(cur_v[best])
