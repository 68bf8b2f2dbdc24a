"""Experiment orchestration: seeds fan out to threads, results land in CSVs.

Output layout under ``out``::

    episodes.csv    seed, episode, time_steps, total_reward, epsilon, wall_ms
    summary.csv     one row per seed plus an ``all`` row
    mask_stats.csv  only when an action mask is used
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import Agent, AgentConfig, PretrainReport, RunRecord, pretrain_network, random_agent, train
from .building import BuildingGraph, max_degree, read_config
from .env import FireEvacuationEnv
from .nn import LARGE_HIDDEN
from .reduction import ActionImportance, build_importance
from .tabular import apply_noise, train_qmatrix

AGENTS = {"dqn": "DQN", "ddqn": "DDQN", "dueling": "DUELING", "random": "RANDOM"}
LARGE_GRAPH = 30
EPISODES = 500
FULL_SCALE_EPISODES = 5000
TRAILING = 100
FAILED = "FAILED"


@dataclass
class ExperimentSpec:
    config: str
    agent: str = "dueling"
    pretrain: bool = True
    sigma: float = 10.0
    # None: mask only large buildings; "auto": k = max degree; 0 disables
    k: int | str | None = None
    seeds: tuple[int, ...] = (0,)
    # None: 500, or 5000 for a large building at full scale
    episodes: int | None = None
    out: str | Path | None = None
    p_override: float | None = None
    full_scale: bool = False
    record_timing: bool = False
    agent_overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.agent = self.agent.lower()
        if self.agent not in AGENTS:
            raise ValueError(f"agent must be one of {sorted(AGENTS)}, got {self.agent!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.episodes is not None and self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.agent == "random":
            self.pretrain = False

    @property
    def label(self) -> str:
        name = AGENTS[self.agent]
        return f"QMP-{name}" if self.pretrain else name


def parse_variant(name: str) -> tuple[str, bool]:
    """``"qmp-dueling"`` -> ``("dueling", True)``; ``"dqn"`` -> ``("dqn", False)``."""
    key = name.lower()
    pre = key.startswith("qmp-")
    agent = key[4:] if pre else key
    if agent not in AGENTS or (pre and agent == "random"):
        raise ValueError(f"unknown variant {name!r}")
    return agent, pre


def load_graph(spec: ExperimentSpec) -> BuildingGraph:
    g = read_config(spec.config)
    return g if spec.p_override is None else g.with_uncertainty(spec.p_override)


def resolve_k(spec: ExperimentSpec, g: BuildingGraph) -> int | None:
    k = spec.k
    if k is None:
        return max_degree(g) if g.n > LARGE_GRAPH else None
    if isinstance(k, str):
        if k.lower() == "auto":
            return max_degree(g)
        if k.lower() == "none":
            return None
        k = int(k)
    return None if k == 0 else int(k)


def resolve_episodes(spec: ExperimentSpec, g: BuildingGraph) -> int:
    if spec.episodes is not None:
        return spec.episodes
    return FULL_SCALE_EPISODES if spec.full_scale and g.n > LARGE_GRAPH else EPISODES


def agent_config(spec: ExperimentSpec, g: BuildingGraph, masked: bool) -> AgentConfig:
    overrides: dict = {"episodes": resolve_episodes(spec, g)}
    if g.n > LARGE_GRAPH:
        if spec.full_scale:
            overrides["hidden"] = LARGE_HIDDEN
        elif masked:
            overrides["compact_mask"] = True
    overrides |= spec.agent_overrides
    if spec.agent != "random":
        overrides["variant"] = AGENTS[spec.agent]
    return AgentConfig(**overrides)


@dataclass
class SeedResult:
    seed: int
    record: RunRecord
    pretrain: PretrainReport | None = None
    error: BaseException | None = None


def run_seed(spec: ExperimentSpec, seed: int, g: BuildingGraph | None = None,
             mask: ActionImportance | None = None) -> SeedResult:
    """Pretrain (optionally) and train one agent; failures are captured, not raised."""
    g = load_graph(spec) if g is None else g
    cfg = agent_config(spec, g, mask is not None)
    env = FireEvacuationEnv(g)
    record = RunRecord()
    result = SeedResult(seed, record)
    try:
        if spec.agent == "random":
            random_agent(env, cfg.episodes, seed, cfg.max_steps, record=record)
            return result
        agent = Agent(g.n, cfg, seed=seed, mask=None if mask is None else mask.mask)
        if spec.pretrain:
            q = apply_noise(train_qmatrix(g, seed=seed), spec.sigma)
            result.pretrain = pretrain_network(agent.net, q, cfg, columns=agent.output_columns)
            agent.sync_target()
        train(agent, env, cfg, seed=seed, record=record)
    except Exception as exc:  # reported through the failure marker row
        result.error = exc
    return result


def worker_count(jobs: int) -> int:
    cap = os.environ.get("EVACSIM_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(jobs, limit))


@dataclass
class MetricsSummary:
    label: str
    average: float
    minimum: int
    trailing_mean: float
    mean_wall_ms: float
    per_seed: list[dict]
    episodes: int

    @classmethod
    def from_records(cls, label: str, records: dict[int, RunRecord], trailing: int = TRAILING) -> MetricsSummary:
        per_seed = []
        for seed, rec in records.items():
            if len(rec) == 0:
                continue
            per_seed.append({
                "seed": seed,
                "episodes": len(rec),
                "average": rec.mean_steps,
                "minimum": rec.min_steps,
                "trailing_mean": rec.trailing_mean(trailing),
                "mean_wall_ms": float(np.mean(rec.wall_ms)),
            })
        steps = [s for rec in records.values() for s in rec.time_steps]
        walls = [w for rec in records.values() for w in rec.wall_ms]
        if not steps:
            nan = float("nan")
            return cls(label, nan, -1, nan, nan, per_seed, 0)
        tails = [row["trailing_mean"] for row in per_seed]
        return cls(
            label,
            float(np.mean(steps)),
            int(min(steps)),
            float(np.mean(tails)),
            float(np.mean(walls)),
            per_seed,
            len(steps),
        )

    def seed_row(self, seed: int) -> dict:
        return next(row for row in self.per_seed if row["seed"] == seed)


SUMMARY_FIELDS = ["label", "seed", "episodes", "average", "minimum", "trailing_mean", "mean_wall_ms"]


def write_episodes(path: Path, results: list[SeedResult], timing: bool) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "episode", "time_steps", "total_reward", "epsilon", "wall_ms"])
        for res in results:
            for row in res.record.rows(timing):
                w.writerow([res.seed, *row])
            if res.error is not None:
                w.writerow([res.seed, FAILED, type(res.error).__name__, str(res.error), "", ""])


def write_summary(path: Path, summary: MetricsSummary, timing: bool) -> None:
    def wall(v: float) -> str:
        return f"{v:.3f}" if timing else ""

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for row in summary.per_seed:
            w.writerow([summary.label, row["seed"], row["episodes"], repr(row["average"]),
                        row["minimum"], repr(row["trailing_mean"]), wall(row["mean_wall_ms"])])
        w.writerow([summary.label, "all", summary.episodes, repr(summary.average),
                    summary.minimum, repr(summary.trailing_mean), wall(summary.mean_wall_ms)])


def write_mask_stats(path: Path, g: BuildingGraph, ai: ActionImportance) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rooms", "k", "actions", "retained", "reduction_pct"])
        w.writerow([g.n, ai.k, ai.n_actions, ai.retained, f"{100 * ai.reduction:.1f}"])


class ExperimentError(RuntimeError):
    def __init__(self, summary: MetricsSummary, failures: dict[int, BaseException]):
        self.summary = summary
        self.failures = failures
        detail = "; ".join(f"seed {s}: {type(e).__name__}: {e}" for s, e in failures.items())
        super().__init__(f"{summary.label} failed ({detail})")


@dataclass
class ExperimentResult:
    summary: MetricsSummary
    records: dict[int, RunRecord]
    mask: ActionImportance | None = None


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run every seed of ``spec``; write CSVs under ``spec.out`` when set.

    Seeds run in worker threads and are merged in seed order. A failing seed
    still gets its completed episodes written, followed by a ``FAILED`` row,
    and the failure is then raised as ``ExperimentError``.
    """
    g = load_graph(spec)
    k = resolve_k(spec, g)
    mask = build_importance(g, k) if k is not None and spec.agent != "random" else None
    with ThreadPoolExecutor(max_workers=worker_count(len(spec.seeds))) as pool:
        results = list(pool.map(lambda s: run_seed(spec, s, g, mask), spec.seeds))
    records = {r.seed: r.record for r in results}
    summary = MetricsSummary.from_records(spec.label, records)
    if spec.out is not None:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        write_episodes(out / "episodes.csv", results, spec.record_timing)
        write_summary(out / "summary.csv", summary, spec.record_timing)
        if mask is not None:
            write_mask_stats(out / "mask_stats.csv", g, mask)
    failures = {r.seed: r.error for r in results if r.error is not None}
    if failures:
        raise ExperimentError(summary, failures)
    return ExperimentResult(summary, records, mask)


def read_episodes(path: str | Path) -> dict[int, RunRecord]:
    """Rebuild per-seed run records from an ``episodes.csv``."""
    records: dict[int, RunRecord] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["episode"] == FAILED:
                continue
            rec = records.setdefault(int(row["seed"]), RunRecord())
            wall = float(row["wall_ms"]) if row["wall_ms"] else 0.0
            rec.append(int(row["time_steps"]), float(row["total_reward"]), float(row["epsilon"]), wall)
    return records


def compare(variants: list[str], spec: ExperimentSpec) -> dict[str, ExperimentResult]:
    """Run each variant under the same seeds and config as ``spec``.

    Writes ``comparison.csv`` (one time-steps column per variant and seed) plus
    per-variant subdirectories when ``spec.out`` is set.
    """
    out = None if spec.out is None else Path(spec.out)
    results: dict[str, ExperimentResult] = {}
    for name in variants:
        agent, pre = parse_variant(name)
        sub = ExperimentSpec(
            config=spec.config, agent=agent, pretrain=pre, sigma=spec.sigma, k=spec.k,
            seeds=spec.seeds, episodes=spec.episodes, p_override=spec.p_override,
            full_scale=spec.full_scale, record_timing=spec.record_timing,
            agent_overrides=dict(spec.agent_overrides),
            out=None if out is None else out / name.lower(),
        )
        results[sub.label] = run_experiment(sub)
    if out is not None:
        write_comparison(out / "comparison.csv", results, spec.seeds)
    return results


def write_comparison(path: Path, results: dict[str, ExperimentResult], seeds) -> None:
    columns = [(label, s) for label in results for s in seeds]
    length = max(len(results[label].records[s]) for label, s in columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", *(f"{label}/seed{s}" for label, s in columns)])
        for ep in range(length):
            row = [ep]
            for label, s in columns:
                steps = results[label].records[s].time_steps
                row.append(steps[ep] if ep < len(steps) else "")
            w.writerow(row)
