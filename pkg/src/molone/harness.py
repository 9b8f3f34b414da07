"""Batch experiment runner: multi-seed agent simulations with CSV output.

Executes every (benchmark, agent, seed) cell of a plan through the
optimization engine, records per-comparison trajectories, and aggregates
summary statistics.  Trajectory CSVs are byte-stable across reruns of the
same plan; wall-clock timings go to the metadata file instead so they never
break reproducibility checks.
"""

from __future__ import annotations

import json
import os
import time
import traceback
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from . import __version__, engine
from .agents import choose, make_policy
from .benchmarks import true_utility
from .engine import EngineConfig
from .errors import ContractError, DataError
from .rng import RngStream

TRAJECTORY_COLUMNS = ("run_seed", "benchmark", "agent", "comparison_index",
                      "best_utility_so_far", "selected_utility",
                      "best_selected_utility")

SUMMARY_STATS = ("mean", "std", "median", "min", "max")


@dataclass
class ExperimentPlan:
    benchmarks: list[str]
    agents: list[str]
    n_runs: int = 10
    base_seed: int = 0
    seeds: list[int] | None = None
    engine_overrides: dict = field(default_factory=dict)

    def run_seeds(self) -> list[int]:
        if self.seeds is not None:
            if len(set(self.seeds)) != len(self.seeds):
                raise ContractError("plan seeds must be distinct")
            return list(self.seeds)
        return [self.base_seed + i for i in range(self.n_runs)]

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentPlan":
        raw = dict(raw)
        known = {"benchmarks", "agents", "runs", "base_seed", "seeds", "engine"}
        unknown = set(raw) - known
        if unknown:
            raise ContractError(f"unknown plan keys: {sorted(unknown)}")
        if not raw.get("benchmarks") or not raw.get("agents"):
            raise ContractError("plan needs non-empty benchmarks and agents")
        plan = cls(
            benchmarks=list(raw["benchmarks"]),
            agents=list(raw["agents"]),
            n_runs=int(raw.get("runs", 10)),
            base_seed=int(raw.get("base_seed", 0)),
            seeds=list(raw["seeds"]) if raw.get("seeds") is not None else None,
            engine_overrides=dict(raw.get("engine", {})),
        )
        if plan.n_runs < 1:
            raise ContractError("plan needs runs >= 1")
        plan.run_seeds()  # validates seed distinctness eagerly
        return plan


def run_cell(benchmark: str, agent_spec: str, seed: int,
             engine_overrides: dict | None = None) -> dict:
    """One full simulated session; returns trajectory rows plus metadata."""
    overrides = dict(engine_overrides or {})
    overrides["benchmark"] = benchmark
    overrides["seed"] = seed
    needs_bundle = agent_spec.strip().lower() == "molone"
    overrides.setdefault("explanations", needs_bundle)
    config = EngineConfig.from_dict(overrides)

    t0 = time.perf_counter()
    state = engine.initialize(config)
    policy = make_policy(agent_spec, state.problem, config.comparison_budget,
                         RngStream(seed, "agent"))
    rows = []
    best_selected = -np.inf
    index = 0
    while state.phase == engine.AWAITING_CHOICE:
        pair = state.pending.pair
        decision = choose(policy, pair, state.pending.bundle, index)
        winner = pair.a if decision == "A" else pair.b
        selected = float(true_utility(state.problem, winner.y_true))
        best_selected = max(best_selected, selected)
        engine.submit_choice(state, pair.pair_id, decision)
        index += 1
        rows.append((index, state.trajectory[-1], selected, best_selected))
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return {
        "benchmark": benchmark,
        "agent": policy.name,
        "seed": seed,
        "rows": rows,
        "wall_time_ms": wall_ms,
        "config": config.resolved(),
        "final_best_utility": rows[-1][1] if rows else None,
        "mean_selected_utility": float(np.mean([r[2] for r in rows])) if rows else None,
        "final_best_selected": rows[-1][3] if rows else None,
    }


def _cell_file_name(benchmark: str, agent: str, seed: int) -> str:
    return f"{benchmark}__{agent.replace(':', '-')}__seed{seed}.csv"


def _write_atomic(path: str, content: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(content)
    os.replace(tmp, path)


def trajectory_csv(result: dict) -> str:
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for index, best, selected, best_selected in result["rows"]:
        lines.append(
            f"{result['seed']},{result['benchmark']},{result['agent']},"
            f"{index},{best:.9f},{selected:.9f},{best_selected:.9f}")
    return "\n".join(lines) + "\n"


def _run_cell_entry(args):
    benchmark, agent, seed, overrides = args
    try:
        return ("ok", run_cell(benchmark, agent, seed, overrides))
    except Exception:
        return ("error", {
            "benchmark": benchmark, "agent": agent, "seed": seed,
            "traceback": traceback.format_exc(),
        })


def run_experiment(plan: ExperimentPlan, out_dir: str, jobs: int = 1) -> dict:
    """Execute the whole plan; returns {n_ok, n_failed, failed_cells}."""
    seeds = plan.run_seeds()
    cells = [(b, a, s, plan.engine_overrides)
             for b in plan.benchmarks for a in plan.agents for s in seeds]
    runs_dir = os.path.join(out_dir, "runs")
    os.makedirs(runs_dir, exist_ok=True)

    if jobs > 1:
        with Pool(processes=jobs) as pool:
            outcomes = pool.map(_run_cell_entry, cells)
    else:
        outcomes = [_run_cell_entry(c) for c in cells]

    failures = []
    timings = {}
    resolved_config = None
    for status, payload in outcomes:
        if status == "error":
            failures.append(payload)
            continue
        name = _cell_file_name(payload["benchmark"], payload["agent"],
                               payload["seed"])
        _write_atomic(os.path.join(runs_dir, name), trajectory_csv(payload))
        timings[name] = round(payload["wall_time_ms"], 3)
        resolved_config = payload["config"]

    metadata = {
        "version": __version__,
        "plan": {
            "benchmarks": plan.benchmarks,
            "agents": plan.agents,
            "seeds": seeds,
            "engine": plan.engine_overrides,
        },
        "resolved_engine_config": resolved_config,
        "wall_time_ms": timings,
        "n_ok": len(cells) - len(failures),
        "n_failed": len(failures),
    }
    with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
    if failures:
        with open(os.path.join(out_dir, "failures.json"), "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2)

    rows = summarize(out_dir) if len(failures) < len(cells) else []
    if rows:
        _write_atomic(os.path.join(out_dir, "summary.csv"), summary_csv(rows))
    return {"n_ok": len(cells) - len(failures), "n_failed": len(failures),
            "failures": failures, "out_dir": out_dir}


def load_trajectories(results_dir: str) -> list[dict]:
    runs_dir = os.path.join(results_dir, "runs")
    if not os.path.isdir(runs_dir):
        raise DataError(f"no runs directory under {results_dir}")
    rows = []
    for name in sorted(os.listdir(runs_dir)):
        if not name.endswith(".csv"):
            continue
        with open(os.path.join(runs_dir, name), encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                rec = dict(zip(header, line.strip().split(",")))
                rec["run_seed"] = int(rec["run_seed"])
                rec["comparison_index"] = int(rec["comparison_index"])
                rec["best_utility_so_far"] = float(rec["best_utility_so_far"])
                rec["selected_utility"] = float(rec["selected_utility"])
                rec["best_selected_utility"] = float(rec["best_selected_utility"])
                rows.append(rec)
    if not rows:
        raise DataError(f"no trajectory rows found under {results_dir}")
    return rows


def summarize(results_dir: str) -> list[dict]:
    """Per (benchmark, agent, comparison_index) statistics over runs."""
    rows = load_trajectories(results_dir)
    groups: dict[tuple, dict[str, list[float]]] = {}
    for rec in rows:
        key = (rec["benchmark"], rec["agent"], rec["comparison_index"])
        g = groups.setdefault(key, {"best": [], "achieved": [], "selected": []})
        g["best"].append(rec["best_utility_so_far"])
        g["achieved"].append(rec["selected_utility"])
        g["selected"].append(rec["best_selected_utility"])

    out = []
    for (benchmark, agent, index) in sorted(groups):
        g = groups[(benchmark, agent, index)]
        row = {"benchmark": benchmark, "agent": agent,
               "comparison_index": index, "n_runs": len(g["best"])}
        for metric, values in (("best_utility", g["best"]),
                               ("utility_achieved", g["achieved"]),
                               ("best_selected", g["selected"])):
            arr = np.asarray(values)
            row[f"{metric}_mean"] = float(arr.mean())
            row[f"{metric}_std"] = float(arr.std())
            row[f"{metric}_median"] = float(np.median(arr))
            row[f"{metric}_min"] = float(arr.min())
            row[f"{metric}_max"] = float(arr.max())
        out.append(row)
    return out


def summary_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            v = row[col]
            cells.append(f"{v:.9f}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def final_ranking(rows: list[dict], benchmark: str,
                  metric: str = "best_selected_mean") -> list[tuple[str, float]]:
    """Agents ordered by the chosen metric at the last comparison index."""
    last = {}
    for row in rows:
        if row["benchmark"] != benchmark:
            continue
        key = row["agent"]
        if key not in last or row["comparison_index"] > last[key]["comparison_index"]:
            last[key] = row
    ranked = sorted(((agent, row[metric]) for agent, row in last.items()),
                    key=lambda kv: -kv[1])
    return ranked
