"""Simulated preference-selection agents.

Three decision policies for fidelity experiments: an ideal agent that sums
the relevant true outcome dimensions, a noisy agent that inverts the ideal
decision on a precomputed schedule of comparison indices, and an
explanation-guided agent that sums the outcome importances of the same
dimensions and never looks at ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .benchmarks import BenchmarkProblem
from .engine import CandidatePair
from .errors import ContractError
from .explain import ExplanationBundle
from .rng import RngStream

IDEAL = "ideal"
NOISY = "noisy"
GUIDED = "molone_guided"


@dataclass(frozen=True)
class AgentPolicy:
    kind: str
    relevant_dims: tuple[int, ...]
    wrong_count: int = 0
    flip_schedule: frozenset = frozenset()

    @property
    def name(self) -> str:
        if self.kind == NOISY:
            return f"noisy:{self.wrong_count}"
        return "molone" if self.kind == GUIDED else self.kind


def make_flip_schedule(total: int, wrong_count: int, rng: RngStream) -> frozenset:
    """Uniform sample without replacement of the comparisons to get wrong."""
    if wrong_count > total or wrong_count < 0:
        raise ContractError("wrong_count must lie in [0, total]")
    picks = rng.generator().choice(total, size=wrong_count, replace=False)
    return frozenset(int(i) for i in picks)


def make_policy(spec: str, problem: BenchmarkProblem, total_comparisons: int,
                rng: RngStream) -> AgentPolicy:
    """Parse an agent spec: "ideal" | "noisy:<wrong>" | "molone"."""
    spec = spec.strip().lower()
    dims = problem.utility_dims
    if spec == "ideal":
        return AgentPolicy(IDEAL, dims)
    if spec == "molone":
        return AgentPolicy(GUIDED, dims)
    if spec.startswith("noisy:"):
        wrong = int(spec.split(":", 1)[1])
        schedule = make_flip_schedule(total_comparisons, wrong, rng.child("flips"))
        return AgentPolicy(NOISY, dims, wrong_count=wrong, flip_schedule=schedule)
    raise ContractError(f"unknown agent spec {spec!r}")


def _ideal_choice(policy: AgentPolicy, pair: CandidatePair) -> str:
    dims = list(policy.relevant_dims)
    sum_a = float(np.sum(pair.a.y_true[dims]))
    sum_b = float(np.sum(pair.b.y_true[dims]))
    return "A" if sum_a >= sum_b else "B"


def choose(policy: AgentPolicy, pair: CandidatePair,
           bundle: ExplanationBundle | None, comparison_index: int,
           rng: RngStream | None = None) -> str:
    """Pick "A" or "B" for the comparison at ``comparison_index`` (0-based)."""
    if policy.kind == IDEAL:
        return _ideal_choice(policy, pair)
    if policy.kind == NOISY:
        base = _ideal_choice(policy, pair)
        if comparison_index in policy.flip_schedule:
            return "B" if base == "A" else "A"
        return base
    if policy.kind == GUIDED:
        if bundle is None:
            raise ContractError("guided agent requires an explanation bundle")
        dims = list(policy.relevant_dims)
        score_a = float(np.sum(bundle.phi_y_a.values[dims]))
        score_b = float(np.sum(bundle.phi_y_b.values[dims]))
        return "A" if score_a >= score_b else "B"
    raise ContractError(f"unknown agent kind {policy.kind!r}")
