"""Seeded experiment sweeps, aggregation, CSV/JSON output and plots.

A sweep is the product of the ``n_agents``, ``d`` and ``horizon`` lists with
every seed. Each (point, seed) run is self-contained: the seed alone fixes
the instance and every random draw, so results do not depend on the order
of the sweep or on the number of workers.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .baseline import dislinucb_baseline
from .config import ALGORITHMS, RunConfig, load_mapping, run_config_from_mapping
from .decbe import run_decbe
from .disbe import run_disbe
from .environment import make_instance
from .errors import BanditError, ConfigError

log = logging.getLogger(__name__)

OUT_DIR_ENV = "DISTBANDIT_OUT_DIR"
DEFAULT_CHECKPOINTS = 200

# wall time is kept out of the CSV so that reruns are byte-identical
CSV_COLUMNS = [
    "algorithm", "variant", "graph", "n_agents", "d", "horizon", "seed",
    "t", "cum_regret", "per_agent_regret",
    "final_regret", "comm_scalars", "comm_bits", "m_batches", "error",
]

# keys forwarded to RunConfig for every run
_RUN_KEYS = (
    "k_arms", "delta", "support_size", "noise_sigma", "clip_rewards", "variant", "eps_m", "eps0",
    "m_batches", "comm_convention", "graph", "comm_scheme", "consensus_eps", "sync_threshold",
)


def _as_list(v) -> list:
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


@dataclass
class ExperimentConfig:
    algorithm: str = "disbe"
    n_agents: list = field(default_factory=lambda: [2])
    d: list = field(default_factory=lambda: [4])
    horizon: list = field(default_factory=lambda: [10_000])
    seeds: list = field(default_factory=lambda: [0])
    params: dict = field(default_factory=lambda: {"k_arms": 20, "delta": 0.01})
    out_dir: str | None = None
    checkpoints: int = DEFAULT_CHECKPOINTS
    per_round_csv: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        for axis in ("n_agents", "d", "horizon", "seeds"):
            if not getattr(self, axis):
                raise ConfigError(f"sweep axis {axis} is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.checkpoints < 1:
            raise ConfigError("checkpoints must be positive")
        unknown = set(self.params) - set(_RUN_KEYS)
        if unknown:
            raise ConfigError(f"unknown parameters: {sorted(unknown)}")
        # build every run config once so bad values surface before any run
        for rc in self.run_configs():
            rc.validate()
        return self

    def points(self):
        return list(itertools.product(self.n_agents, self.d, self.horizon))

    def run_configs(self) -> list[RunConfig]:
        out = []
        for (n, d, t), seed in itertools.product(self.points(), self.seeds):
            data = dict(self.params)
            data.update(n_agents=n, d=d, horizon=t, seed=seed)
            out.append(run_config_from_mapping(data))
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def experiment_from_mapping(data: dict) -> ExperimentConfig:
    data = dict(data)
    seeds = data.pop("seeds", [0])
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    params = dict(data.pop("params", {}))
    kwargs: dict[str, Any] = {"seeds": [int(s) for s in _as_list(seeds)]}
    for axis in ("n_agents", "d", "horizon"):
        if axis in data:
            kwargs[axis] = [int(v) for v in _as_list(data.pop(axis))]
    for key in ("algorithm", "out_dir", "checkpoints", "per_round_csv"):
        if key in data:
            kwargs[key] = data.pop(key)
    data.pop("workers", None)
    params.update(data)
    params.setdefault("k_arms", 20)
    params.setdefault("delta", 0.01)
    kwargs["params"] = params
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_experiment(path) -> ExperimentConfig:
    return experiment_from_mapping(load_mapping(path))


@dataclass
class RunResult:
    algorithm: str
    variant: str
    graph: str
    n_agents: int
    d: int
    horizon: int
    seed: int
    checkpoints: list = field(default_factory=list)
    cum_regret: list = field(default_factory=list)
    final_regret: float = float("nan")
    comm_scalars: int = 0
    comm_bits: int = 0
    m_batches: int = 0
    wall_time: float = 0.0
    anomalies: dict = field(default_factory=dict)
    error: str = ""

    @property
    def key(self) -> tuple:
        return (self.algorithm, self.variant, self.graph, self.n_agents, self.d, self.horizon, self.seed)

    @property
    def point(self) -> tuple:
        return self.key[:-1]

    @property
    def ok(self) -> bool:
        return not self.error


def checkpoint_rounds(horizon: int, n_points: int = DEFAULT_CHECKPOINTS) -> np.ndarray:
    """1-based rounds kept in a trace: every ceil(T / n)-th round, plus T."""
    stride = max(1, math.ceil(horizon / n_points))
    ts = np.arange(stride, horizon + stride, stride)
    ts[-1] = horizon
    return np.minimum(ts, horizon)


def _graph_label(rc: RunConfig, algorithm: str) -> str:
    if algorithm != "decbe":
        return ""
    g = rc.graph
    return g if isinstance(g, str) else json.dumps(g, sort_keys=True)


def run_one(algorithm: str, rc: RunConfig, checkpoints: int = DEFAULT_CHECKPOINTS, per_round_dir: str | None = None) -> RunResult:
    res = RunResult(algorithm, rc.variant, _graph_label(rc, algorithm), rc.n_agents, rc.d, rc.horizon, rc.seed)
    t0 = time.perf_counter()
    try:
        support, gt = make_instance(rc.seed, rc.d, rc.k_arms, rc.support_size, rc.noise_sigma, rc.clip_rewards)
        if algorithm == "disbe":
            out = run_disbe(gt, support, rc)
        elif algorithm == "decbe":
            out = run_decbe(gt, support, rc.graph, rc)
        else:
            out = dislinucb_baseline(gt, support, rc)
    except (BanditError, ValueError, np.linalg.LinAlgError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        res.wall_time = time.perf_counter() - t0
        return res
    ts = checkpoint_rounds(rc.horizon, checkpoints)
    cum = out.regret.cumulative_total()
    res.checkpoints = ts.tolist()
    res.cum_regret = cum[ts - 1].tolist()
    res.final_regret = float(cum[-1])
    res.comm_scalars = int(out.comm.total(rc.comm_convention))
    res.comm_bits = int(out.comm.bits_sent)
    res.m_batches = out.trace.grid.m_batches if out.trace.grid is not None else 0
    res.anomalies = dict(out.trace.anomalies)
    res.wall_time = time.perf_counter() - t0
    if per_round_dir is not None:
        from .disbe import write_round_csv

        Path(per_round_dir).mkdir(parents=True, exist_ok=True)
        write_round_csv(Path(per_round_dir) / f"{algorithm}_N{rc.n_agents}_d{rc.d}_T{rc.horizon}_s{rc.seed}.csv", out)
    return res


def _job(args):
    return run_one(*args)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> list[RunResult]:
    cfg.validate()
    per_round = None
    if cfg.per_round_csv:
        per_round = str(Path(cfg.out_dir or default_out_dir()) / "rounds")
    jobs = [(cfg.algorithm, rc, cfg.checkpoints, per_round) for rc in cfg.run_configs()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    for r in results:
        if r.error:
            log.warning("run %s failed: %s", r.key, r.error)
    return sorted(results, key=lambda r: r.key)


# ---------------------------------------------------------------------------
# Aggregation and output
# ---------------------------------------------------------------------------


def _stats(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def aggregate(results: list[RunResult]) -> list[dict]:
    """Mean and sample standard deviation per sweep point over successful seeds."""
    groups: dict = {}
    for r in results:
        groups.setdefault(r.point, []).append(r)
    rows = []
    for point in sorted(groups):
        runs = [r for r in groups[point] if r.ok]
        algorithm, variant, graph, n, d, t = point
        row = {
            "algorithm": algorithm, "variant": variant, "graph": graph,
            "n_agents": n, "d": d, "horizon": t,
            "seeds": [r.seed for r in runs],
            "failed_seeds": [r.seed for r in groups[point] if not r.ok],
        }
        for name, vals in (
            ("final_regret", [r.final_regret for r in runs]),
            ("per_agent_regret", [r.final_regret / n for r in runs]),
            ("comm_scalars", [r.comm_scalars for r in runs]),
            ("comm_bits", [r.comm_bits for r in runs]),
        ):
            row[f"{name}_mean"], row[f"{name}_std"] = _stats(vals)
        if runs:
            curves = np.array([r.cum_regret for r in runs]) / n
            row["checkpoints"] = runs[0].checkpoints
            row["per_agent_curve_mean"] = curves.mean(axis=0).tolist()
            row["per_agent_curve_std"] = (curves.std(axis=0, ddof=1) if len(runs) > 1 else np.zeros(curves.shape[1])).tolist()
        rows.append(row)
    return rows


def write_runs_csv(results: list[RunResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            head = [r.algorithm, r.variant, r.graph, r.n_agents, r.d, r.horizon, r.seed]
            tail = [repr(r.final_regret), r.comm_scalars, r.comm_bits, r.m_batches, r.error]
            if not r.ok:
                w.writerow(head + ["", "", ""] + tail)
                continue
            for t, c in zip(r.checkpoints, r.cum_regret):
                w.writerow(head + [t, repr(c), repr(c / r.n_agents)] + tail)


def read_runs_csv(path) -> list[RunResult]:
    results: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["algorithm"], row["variant"], row["graph"], int(row["n_agents"]), int(row["d"]), int(row["horizon"]), int(row["seed"]))
            r = results.get(key)
            if r is None:
                r = RunResult(*key)
                r.final_regret = float(row["final_regret"])
                r.comm_scalars = int(row["comm_scalars"])
                r.comm_bits = int(row["comm_bits"])
                r.m_batches = int(row["m_batches"])
                r.error = row["error"]
                results[key] = r
            if row["t"]:
                r.checkpoints.append(int(row["t"]))
                r.cum_regret.append(float(row["cum_regret"]))
    return [results[k] for k in sorted(results)]


def emit_plots(agg: list[dict], out_dir) -> dict:
    """Three PNGs; returns the plotted series so callers can check them."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    data = {"regret_vs_t": [], "comm_vs_n": {}, "comm_vs_d": {}}
    rows = [a for a in agg if "checkpoints" in a]

    fig, ax = plt.subplots(figsize=(6, 4))
    for a in rows:
        t = np.asarray(a["checkpoints"])
        m = np.asarray(a["per_agent_curve_mean"])
        s = np.asarray(a["per_agent_curve_std"])
        label = f"{a['algorithm']} N={a['n_agents']} d={a['d']}"
        ax.plot(t, m, label=label)
        ax.fill_between(t, m - s, m + s, alpha=0.2)
        data["regret_vs_t"].append((label, t.tolist(), m.tolist()))
    ax.set_xlabel("round t")
    ax.set_ylabel("per-agent cumulative regret")
    if rows:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "regret_vs_t.png", dpi=120)
    plt.close(fig)

    for axis, other, name in (("n_agents", "d", "comm_vs_n"), ("d", "n_agents", "comm_vs_d")):
        fig, ax = plt.subplots(figsize=(6, 4))
        series: dict = {}
        for a in rows:
            series.setdefault((a["algorithm"], a[other], a["horizon"]), []).append((a[axis], a["comm_scalars_mean"]))
        for (alg, fixed, t), pts in sorted(series.items()):
            pts.sort()
            xs, ys = zip(*pts)
            label = f"{alg} {other}={fixed} T={t}"
            ax.plot(xs, ys, marker="o", label=label)
            data[name][label] = (list(xs), list(ys))
        ax.set_xlabel(axis)
        ax.set_ylabel("communicated scalars")
        if series:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_dir / f"{name}.png", dpi=120)
        plt.close(fig)
    return data


def emit_outputs(results: list[RunResult], out_dir, cfg: ExperimentConfig | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_runs_csv(results, out_dir / "runs.csv")
    agg = aggregate(results)
    summary = {
        "n_runs": len(results),
        "n_failed": sum(not r.ok for r in results),
        "points": agg,
        "runs": [
            {
                "key": list(r.key),
                "final_regret": r.final_regret,
                "comm_scalars": r.comm_scalars,
                "comm_bits": r.comm_bits,
                "m_batches": r.m_batches,
                "wall_time": r.wall_time,
                "anomalies": r.anomalies,
                "error": r.error,
            }
            for r in results
        ],
    }
    if cfg is not None:
        summary["config"] = cfg.to_dict()
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    if not results:
        log.warning("no results; wrote headers only")
        return {}
    return emit_plots(agg, out_dir)


def default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, "results")
