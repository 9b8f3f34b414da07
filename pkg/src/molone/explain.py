"""Comparative why/why-not explanations for candidate pairs.

For each candidate, a local explanation set is drawn inside an adaptive-
radius sphere; surrogate sensitivities over that set yield an input-feature
importance vector (max |posterior-mean gradient| per input dimension,
across samples and outputs) and an outcome importance vector (max
|utility-mean gradient| per outcome dimension).  Importances of the two
candidates are compared per dimension into high/low labels, which populate
a 2x2 matrix of why / why-not statements per sample.  The matrix never
carries a recommendation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import gp, prefgp
from .errors import ContractError
from .rng import RngStream
from .sampling import ExplanationSet, adaptive_radius, lhs_sphere

HIGH_FOR_A = "high_for_A"
HIGH_FOR_B = "high_for_B"
TIE = "tie"

INPUT_TEXT = "{name} has higher influence on the predicted outcomes here"
OUTCOME_TEXT = "{name} contributes more to utility here"


@dataclass
class ExplainConfig:
    n_samples: int = 64
    r0: float = 0.2
    r_min: float = 0.01
    eps_tie: float = 1e-6  # relative to the pair's largest importance


@dataclass(frozen=True)
class ImportanceVector:
    kind: str  # "input" | "outcome"
    values: np.ndarray  # non-negative


@dataclass(frozen=True)
class ImportanceComparison:
    kind: str
    labels: tuple[str, ...]
    margins: np.ndarray  # phi_a - phi_b per dimension


@dataclass(frozen=True)
class Statement:
    kind: str
    dim_index: int
    dim_name: str
    margin: float
    text: str


@dataclass(frozen=True)
class SampleCard:
    label: str  # "A" | "B"
    x: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray


@dataclass(frozen=True)
class MatrixRow:
    sample: str
    why: tuple[Statement, ...]
    why_not: tuple[Statement, ...]


@dataclass(frozen=True)
class ComparativeMatrix:
    sample_a: SampleCard
    sample_b: SampleCard
    rows: tuple[MatrixRow, MatrixRow]


@dataclass(frozen=True)
class ExplanationBundle:
    matrix: ComparativeMatrix
    phi_x_a: ImportanceVector
    phi_x_b: ImportanceVector
    phi_y_a: ImportanceVector
    phi_y_b: ImportanceVector
    metadata: dict = field(default_factory=dict)


def input_feature_importance(model: gp.GPModel, xset: ExplanationSet) -> ImportanceVector:
    """Max absolute posterior-mean sensitivity per input dim over the set."""
    if xset.points.shape[0] < 2:
        raise ContractError("explanation set needs at least two points")
    grads = gp.posterior_mean_gradient_batch(model, xset.points)  # (n, k, d)
    return ImportanceVector("input", np.abs(grads).max(axis=(0, 1)))


def outcome_importance(pref_model: prefgp.PreferenceModel,
                       predicted_outcomes: np.ndarray) -> ImportanceVector:
    """Max absolute utility-mean sensitivity per outcome dim over the set."""
    grads = prefgp.utility_mean_gradient_batch(pref_model, predicted_outcomes)
    return ImportanceVector("outcome", np.abs(grads).max(axis=0))


def compare_importance(phi_a: ImportanceVector, phi_b: ImportanceVector,
                       eps_tie: float) -> ImportanceComparison:
    """Per-dimension high/low labels with an absolute tie band of eps_tie."""
    if phi_a.kind != phi_b.kind or phi_a.values.shape != phi_b.values.shape:
        raise ContractError("importance vectors must share kind and length")
    margins = phi_a.values - phi_b.values
    labels = tuple(
        HIGH_FOR_A if m > eps_tie else (HIGH_FOR_B if m < -eps_tie else TIE)
        for m in margins
    )
    return ImportanceComparison(phi_a.kind, labels, margins)


def _dim_name(kind: str, index: int) -> str:
    return ("x" if kind == "input" else "y") + str(index + 1)


def _statement(kind: str, index: int, margin: float) -> Statement:
    name = _dim_name(kind, index)
    template = INPUT_TEXT if kind == "input" else OUTCOME_TEXT
    return Statement(kind, index, name, float(margin), template.format(name=name))


def build_matrix(comp_x: ImportanceComparison, comp_y: ImportanceComparison,
                 samples: tuple[SampleCard, SampleCard]) -> ComparativeMatrix:
    """Assemble the 2x2 matrix; mirrored cells carry negated margins."""
    why_a: list[Statement] = []
    why_not_a: list[Statement] = []
    why_b: list[Statement] = []
    why_not_b: list[Statement] = []
    for comp in (comp_x, comp_y):
        for j, label in enumerate(comp.labels):
            if label == TIE:
                continue
            m = comp.margins[j]
            if label == HIGH_FOR_A:
                why_a.append(_statement(comp.kind, j, m))
                why_not_b.append(_statement(comp.kind, j, -m))
            else:
                why_b.append(_statement(comp.kind, j, -m))
                why_not_a.append(_statement(comp.kind, j, m))
    return ComparativeMatrix(
        sample_a=samples[0],
        sample_b=samples[1],
        rows=(
            MatrixRow("A", tuple(why_a), tuple(why_not_a)),
            MatrixRow("B", tuple(why_b), tuple(why_not_b)),
        ),
    )


def _coords_digest(x: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(x, dtype=np.float64).tobytes(),
                           digest_size=8).hexdigest()


def _local_importance(x, model, pref_model, config, rng):
    # The sub-stream is keyed on the point's coordinates, so identical
    # candidates get identical explanation sets (and therefore exact ties).
    stream = rng.child(f"local-{_coords_digest(x)}")
    radius = adaptive_radius(x, config.r0, config.n_samples,
                             stream.child("radius"), config.r_min)
    xset = lhs_sphere(x, radius, config.n_samples, stream.child("set"))
    mu_f, sigma_f = gp.posterior_batch(model, xset.points)
    phi_x = input_feature_importance(model, xset)
    mu_g, sigma_g = prefgp.utility_posterior_batch(pref_model, mu_f)
    phi_y = outcome_importance(pref_model, mu_f)
    return radius, phi_x, phi_y, float(np.mean(sigma_f)), float(np.mean(sigma_g))


def explain_pair(x_a: np.ndarray, x_b: np.ndarray, model: gp.GPModel,
                 pref_model: prefgp.PreferenceModel,
                 config: ExplainConfig | None = None,
                 rng: RngStream | None = None) -> ExplanationBundle:
    """Full explanation pipeline for one candidate pair."""
    config = config or ExplainConfig()
    rng = rng or RngStream(0, "explain")
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)

    rad_a, phi_x_a, phi_y_a, sf_a, sg_a = _local_importance(
        x_a, model, pref_model, config, rng)
    rad_b, phi_x_b, phi_y_b, sf_b, sg_b = _local_importance(
        x_b, model, pref_model, config, rng)

    def _eps(va: ImportanceVector, vb: ImportanceVector) -> float:
        scale = max(float(va.values.max(initial=0.0)),
                    float(vb.values.max(initial=0.0)))
        return config.eps_tie * scale if scale > 0 else config.eps_tie

    comp_x = compare_importance(phi_x_a, phi_x_b, _eps(phi_x_a, phi_x_b))
    comp_y = compare_importance(phi_y_a, phi_y_b, _eps(phi_y_a, phi_y_b))

    post_a = gp.posterior(model, x_a)
    post_b = gp.posterior(model, x_b)
    cards = (
        SampleCard("A", x_a, post_a.mean, post_a.std),
        SampleCard("B", x_b, post_b.mean, post_b.std),
    )
    matrix = build_matrix(comp_x, comp_y, cards)
    metadata = {
        "n_samples": config.n_samples,
        "r0": config.r0,
        "r_min": config.r_min,
        "eps_tie": config.eps_tie,
        "radius_a": rad_a,
        "radius_b": rad_b,
        "seed": rng.seed,
        "stream": rng.stream_label,
        "mean_outcome_std": {"a": sf_a, "b": sf_b},
        "mean_utility_std": {"a": sg_a, "b": sg_b},
    }
    return ExplanationBundle(matrix, phi_x_a, phi_x_b, phi_y_a, phi_y_b, metadata)


# -- serialization ---------------------------------------------------------

def statement_to_json(s: Statement) -> dict:
    return {
        "kind": s.kind,
        "dim_index": s.dim_index,
        "dim_name": s.dim_name,
        "margin": s.margin,
        "text": s.text,
    }


def matrix_to_json(matrix: ComparativeMatrix) -> dict:
    return {
        "rows": [
            {
                "sample": row.sample,
                "why": [statement_to_json(s) for s in row.why],
                "why_not": [statement_to_json(s) for s in row.why_not],
            }
            for row in matrix.rows
        ]
    }


def bundle_to_json(bundle: ExplanationBundle) -> dict:
    return {
        "matrix": matrix_to_json(bundle.matrix),
        "input_importance": {
            "a": bundle.phi_x_a.values.tolist(),
            "b": bundle.phi_x_b.values.tolist(),
        },
        "outcome_importance": {
            "a": bundle.phi_y_a.values.tolist(),
            "b": bundle.phi_y_b.values.tolist(),
        },
        "metadata": bundle.metadata,
    }


def render_matrix_text(matrix: ComparativeMatrix) -> str:
    """Plain-text 2x2 rendering for the CLI."""
    def _cell(statements: tuple[Statement, ...]) -> list[str]:
        if not statements:
            return ["(no distinguishing factors)"]
        return [f"+ {s.text}" if s.margin > 0 else f"- {s.text}" for s in statements]

    lines: list[str] = []
    for card in (matrix.sample_a, matrix.sample_b):
        x_txt = ", ".join(f"{v:.4f}" for v in card.x)
        y_txt = ", ".join(
            f"{m:.4f}±{s:.4f}" for m, s in zip(card.y_mean, card.y_std))
        lines.append(f"Sample {card.label}: x = [{x_txt}]")
        lines.append(f"          y_pred = [{y_txt}]")
    lines.append("")
    for row in matrix.rows:
        lines.append(f"Sample {row.sample} | Why:")
        lines.extend(f"    {t}" for t in _cell(row.why))
        lines.append(f"Sample {row.sample} | Why not:")
        lines.extend(f"    {t}" for t in _cell(row.why_not))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
