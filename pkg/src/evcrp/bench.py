"""Method comparison harness: approximation ratios and wall times.

Each (instance, method) cell is solved independently; instances fan out to
a thread pool and results are gathered in instance order, so the report
does not depend on the number of workers.
"""
from __future__ import annotations

import csv
import glob
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import Instance, Solution, check_feasibility, load_instance
from .gen import GenParams, generate_synthetic
from .greedy import greedy_u
from .lp import ptas_star, solve_lp_relaxation
from .neuro import Network, load_model
from .oracle import SearchLimits, solve_exact
from .postproc import SORT_KEYS, learned_solve

METHODS = ("exact", "greedy-u", "ptas-star", "dclevernet")
REFERENCES = ("exact", "best-known")
RATIO_TOL = 1e-9
# label files written next to instance files
SCHEDULE_SUFFIX = ".schedule.json"


def approx_ratio(solution, reference) -> float:
    """``objective / reference``; NaN when the reference is not positive."""
    obj = solution.objective if isinstance(solution, Solution) else float(solution)
    ref = reference.objective if isinstance(reference, Solution) else float(reference)
    if not ref > 0:
        return math.nan
    return obj / ref


def derive_seeds(seed: int, n: int) -> List[int]:
    """Independent per-instance seeds from one root seed."""
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class BenchConfig:
    gen: Optional[GenParams] = None
    instance_glob: Optional[str] = None
    num_instances: int = 10
    user_counts: Tuple[int, ...] = ()
    methods: Tuple[str, ...] = ("exact", "greedy-u", "ptas-star")
    reference: str = "exact"
    repetitions: int = 3
    seed: int = 0
    ptas_guesses: int = 250
    exact_backend: str = "milp"
    exact_time_budget: float = 60.0
    lp_bound: bool = False
    postproc_sort: str = "gain"
    model_path: Optional[str] = None
    workers: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "user_counts", tuple(int(u) for u in self.user_counts))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if self.reference == "exact" and "exact" not in self.methods:
            raise ValueError("reference 'exact' needs the exact method in the method list")
        if (self.gen is None) == (self.instance_glob is None):
            raise ValueError("give exactly one of gen and instance_glob")
        if self.postproc_sort not in SORT_KEYS:
            raise ValueError(f"postproc_sort must be one of {SORT_KEYS}")
        if self.repetitions < 1 or self.workers < 1:
            raise ValueError("repetitions and workers must be >= 1")


@dataclass
class BenchRow:
    instance: str
    num_users: int
    method: str
    objective: float
    ratio: float
    ratio_lp: float
    wall_time: float
    feasible: bool
    reference: float
    reference_kind: str
    lp_bound: float


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def aggregates(self) -> Dict[str, dict]:
        """Per ``"<num_users>/<method>"`` summary; undefined ratios are skipped."""
        groups: Dict[Tuple[int, str], List[BenchRow]] = {}
        for r in self.rows:
            groups.setdefault((r.num_users, r.method), []).append(r)
        out = {}
        for (n, m), rows in sorted(groups.items()):
            ratios = [r.ratio for r in rows if not math.isnan(r.ratio)]
            lp = [r.ratio_lp for r in rows if not math.isnan(r.ratio_lp)]
            out[f"{n}/{m}"] = {
                "num_users": n,
                "method": m,
                "runs": len(rows),
                "mean_ratio": statistics.fmean(ratios) if ratios else math.nan,
                "min_ratio": min(ratios) if ratios else math.nan,
                "max_ratio": max(ratios) if ratios else math.nan,
                "mean_ratio_lp": statistics.fmean(lp) if lp else math.nan,
                "mean_time": statistics.fmean(r.wall_time for r in rows),
                "infeasible": sum(not r.feasible for r in rows),
            }
        return out

    def mean_ratio(self, method: str, num_users: Optional[int] = None, against_lp: bool = False) -> float:
        vals = [r.ratio_lp if against_lp else r.ratio for r in self.rows
                if r.method == method and (num_users is None or r.num_users == num_users)]
        vals = [v for v in vals if not math.isnan(v)]
        return statistics.fmean(vals) if vals else math.nan

    def write_csv(self, path) -> None:
        names = list(BenchRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=names)
            w.writeheader()
            for r in self.rows:
                w.writerow(asdict(r))

    def write_json(self, path) -> None:
        doc = {"config": self.config, "aggregates": self.aggregates()}
        Path(path).write_text(json.dumps(_strict(doc), indent=1, sort_keys=True))


def _strict(o):
    # NaN is not valid JSON; undefined ratios become null
    if isinstance(o, float) and math.isnan(o):
        return None
    if isinstance(o, dict):
        return {k: _strict(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_strict(v) for v in o]
    return o


def _instances(cfg: BenchConfig) -> List[Tuple[str, Instance]]:
    if cfg.instance_glob is not None:
        paths = sorted(p for p in glob.glob(cfg.instance_glob) if not p.endswith(SCHEDULE_SUFFIX))
        if not paths:
            raise FileNotFoundError(f"no instance files match {cfg.instance_glob}")
        return [(p, load_instance(p)) for p in paths]
    counts = cfg.user_counts or (cfg.gen.num_users,)
    out = []
    for n in counts:
        for j, s in enumerate(derive_seeds(cfg.seed + 7919 * n, cfg.num_instances)):
            params = replace(cfg.gen, num_users=n, seed=s)
            out.append((f"gen-{n}-{j}", generate_synthetic(params)))
    return out


class _Runner:
    def __init__(self, cfg: BenchConfig, model: Optional[Network]):
        self.cfg = cfg
        self.model = model

    def solve(self, method: str, inst: Instance, seed: int) -> Solution:
        cfg = self.cfg
        if method == "exact":
            return solve_exact(inst, SearchLimits(time_budget=cfg.exact_time_budget), backend=cfg.exact_backend)
        if method == "greedy-u":
            return greedy_u(inst)
        if method == "ptas-star":
            return ptas_star(inst, num_guesses=cfg.ptas_guesses, seed=seed,
                             method="highs" if len(inst.requests) > 150 else "simplex")
        return learned_solve(inst, self.model, sort=cfg.postproc_sort)

    def timed(self, method: str, inst: Instance, seed: int):
        times, sol = [], None
        for _ in range(self.cfg.repetitions):
            t0 = time.perf_counter()
            s = self.solve(method, inst, seed)
            times.append(time.perf_counter() - t0)
            if sol is not None and s.objective != sol.objective:
                raise RuntimeError(f"{method} is not deterministic on a repeated run")
            sol = s
        return sol, statistics.median(times)

    def run_instance(self, name: str, inst: Instance, seed: int) -> List[BenchRow]:
        sols = {m: self.timed(m, inst, seed) for m in self.cfg.methods}
        kind = "exact"
        if self.cfg.reference == "exact" and sols["exact"][0].optimal:
            ref = sols["exact"][0].objective
        else:
            kind = "best-known"
            ref = max(s.objective for s, _ in sols.values())
        lp = solve_lp_relaxation(inst, method="highs").objective if self.cfg.lp_bound else math.nan
        rows = []
        for m, (sol, t) in sols.items():
            rows.append(BenchRow(name, len(inst.requests), m, sol.objective, approx_ratio(sol, ref),
                                 approx_ratio(sol, lp) if self.cfg.lp_bound else math.nan, t,
                                 check_feasibility(inst, sol.schedule).feasible, ref, kind, lp))
        return rows


def run_benchmark(cfg: BenchConfig, model: Optional[Network] = None) -> BenchReport:
    """Solve every instance with every configured method.

    Objectives depend only on the config (seeds included); wall times are
    the median over ``repetitions`` after one untimed warm-up call per method.
    """
    if "dclevernet" in cfg.methods and model is None:
        if not cfg.model_path:
            raise ValueError("dclevernet needs a trained model (model_path)")
        model = load_model(cfg.model_path)
    items = _instances(cfg)
    seeds = derive_seeds(cfg.seed, len(items))
    runner = _Runner(cfg, model)
    if items:
        for m in cfg.methods:
            runner.solve(m, items[0][1], seeds[0])
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(runner.run_instance, name, inst, s) for (name, inst), s in zip(items, seeds)]
        per_instance = [f.result() for f in futures]
    report = BenchReport([r for rows in per_instance for r in rows], _config_dict(cfg))
    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "bench.csv")
        report.write_json(out / "bench.json")
    return report


def _config_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    if cfg.gen is not None:
        d["gen"] = asdict(cfg.gen)
    return d


def config_from_dict(doc: dict, **overrides) -> BenchConfig:
    doc = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
    if isinstance(doc.get("gen"), dict):
        doc["gen"] = GenParams(**doc["gen"])
    known = set(BenchConfig.__dataclass_fields__)
    extra = set(doc) - known
    if extra:
        raise ValueError(f"unknown bench config keys {sorted(extra)}")
    return BenchConfig(**doc)
