"""Command-line entry point.

Every subcommand prints one JSON summary line on stdout.  Exit codes:
0 ok, 1 usage, 2 malformed input, 3 infeasible or failed solve,
4 codec or model mismatch.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import os
import sys
import zlib
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .bench import SCHEDULE_SUFFIX, BenchConfig, _strict, config_from_dict, derive_seeds, run_benchmark
from .codec import CodecMismatch, CodecParams, build_dataset, load_dataset, save_dataset
from .core import InstanceError, Schedule, check_feasibility, load_instance, save_instance
from .gen import GenParams, IngestReport, generate_synthetic, ingest_acn
from .greedy import greedy_u
from .lp import LPInfeasible, ptas_star
from .neuro import DESK_HIDDEN, FULL_HIDDEN, Hyperparams, ModelFileError, init_network, load_model, save_model, train
from .oracle import SearchLimits, solve_exact
from .postproc import learned_solve

log = logging.getLogger("evcrp")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SOLVE, EXIT_CODEC = 0, 1, 2, 3, 4
ENV_OUTPUT = "EVCRP_OUTPUT_DIR"
ENV_WORKERS = "EVCRP_WORKERS"


class UsageError(Exception):
    pass


class SolveFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def stage_seed(seed: int, stage: str) -> int:
    """Seed for one pipeline stage, independent of the other stages."""
    ss = np.random.SeedSequence([seed, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InstanceError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InstanceError(f"config {path} must hold a JSON object")
    return doc


def _merge(section: dict, **flags) -> dict:
    return {**section, **{k: v for k, v in flags.items() if v is not None}}


def _build(cls, doc: dict):
    known = {f.name for f in fields(cls)}
    extra = set(doc) - known
    if extra:
        raise InstanceError(f"unknown {cls.__name__} keys {sorted(extra)}")
    return cls(**doc)


def _out_dir(args, cfg: dict) -> Path:
    # flag beats environment beats config file
    out = args.out or os.environ.get(ENV_OUTPUT) or cfg.get("output_dir") or "."
    return Path(out)


def _workers(cfg: dict) -> int:
    return int(os.environ.get(ENV_WORKERS) or cfg.get("workers") or 1)


def _paths(patterns: List[str]) -> List[str]:
    found = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        if not hits:
            raise InstanceError(f"no files match {p}")
        found.extend(h for h in hits if not h.endswith(SCHEDULE_SUFFIX))
    return found


def _schedule_path(instance_path: str) -> Path:
    p = Path(instance_path)
    return p.with_name(p.name[:-5] + SCHEDULE_SUFFIX if p.name.endswith(".json") else p.name + SCHEDULE_SUFFIX)


def _gen_params(cfg: dict, args, seed: int) -> GenParams:
    doc = _merge(cfg.get("gen", {}), num_users=getattr(args, "users", None), capacity_kw=getattr(args, "capacity", None),
                 num_slots=getattr(args, "slots", None), slot_hours=getattr(args, "slot_hours", None),
                 load_profile=getattr(args, "profile", None), utility_mode=getattr(args, "utility", None),
                 num_evse=getattr(args, "evse", None))
    doc.setdefault("num_users", 100)
    doc["seed"] = seed
    return _build(GenParams, doc)


def _codec(cfg: dict, args) -> CodecParams:
    return _build(CodecParams, _merge(cfg.get("codec", {}), Q=getattr(args, "Q", None), L=getattr(args, "L", None),
                                      V=getattr(args, "V", None), demand_norm=getattr(args, "demand_norm", None)))


# --- subcommands ------------------------------------------------------------

def cmd_generate(args, cfg):
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    count = args.count or cfg.get("num_instances", 1)
    seeds = [args.seed] if count == 1 else derive_seeds(args.seed, count)
    files = []
    for j, s in enumerate(seeds):
        inst = generate_synthetic(_gen_params(cfg, args, s))
        path = out / f"instance_{j:05d}.json"
        save_instance(inst, path)
        files.append(str(path))
    return {"instances": len(files), "out": str(out)}


def cmd_ingest(args, cfg):
    rep = IngestReport()
    params = _gen_params(cfg, args, args.seed)
    inst = ingest_acn(args.csv, params, rep)
    out = Path(args.out or "acn_instance.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(inst, out)
    return {"requests": len(inst.requests), "rows": rep.rows, "skipped": len(rep.skipped),
            "no_option": rep.no_option, "out": str(out)}


def cmd_label(args, cfg):
    lab = cfg.get("label", {})
    backend = args.backend or lab.get("backend", "milp")
    budget = args.time_budget or lab.get("time_budget", math.inf)
    total, objective = 0, 0.0
    for path in _paths(args.instances):
        inst = load_instance(path)
        sol = solve_exact(inst, SearchLimits(time_budget=budget), backend=backend)
        if not sol.optimal:
            raise SolveFailed(f"{path}: optimality not proven within {budget} s")
        _schedule_path(path).write_text(json.dumps({"method": "exact", "objective": sol.objective,
                                                    "assignment": sol.schedule.to_json()}, sort_keys=True))
        total += 1
        objective += sol.objective
    return {"labelled": total, "mean_objective": objective / max(total, 1)}


def cmd_encode(args, cfg):
    params = _codec(cfg, args)
    insts, scheds, sources = [], [], []
    for path in _paths(args.instances):
        sp = _schedule_path(path)
        if not sp.exists():
            raise InstanceError(f"{path}: no label file {sp.name}; run `evcrp label` first")
        insts.append(load_instance(path))
        scheds.append(Schedule.from_json(json.loads(sp.read_text())["assignment"]))
        sources.append(Path(path).name)
    ds = build_dataset(insts, scheds, params, sources=sources, label_method="exact")
    out = Path(args.out or _out_dir(args, cfg) / "dataset.npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    return {"records": len(ds), "features": ds.features.shape[1], "labels": ds.labels.shape[1], "out": str(out)}


def _hidden(choice) -> tuple:
    if choice in (None, "desk"):
        return DESK_HIDDEN
    if choice == "full":
        return FULL_HIDDEN
    if isinstance(choice, (list, tuple)):
        return tuple(int(w) for w in choice)
    return tuple(int(w) for w in str(choice).split(","))


def cmd_train(args, cfg):
    tcfg = dict(cfg.get("train", {}))
    hidden = _hidden(args.hidden or tcfg.pop("hidden", None))
    tcfg.pop("hidden", None)
    ds = load_dataset(args.dataset)
    hp = _build(Hyperparams, _merge(tcfg, epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                                   seed=stage_seed(args.seed, "train")))
    net = init_network([ds.features.shape[1], *hidden, ds.labels.shape[1]], seed=stage_seed(args.seed, "init"),
                       codec=ds.sidecar)
    rep = train(net, ds, hp, log=lambda e, tr, va: log.info("epoch %d train %.6g val %.6g", e, tr, va))
    out = Path(args.out or _out_dir(args, cfg) / "model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, out)
    return {"epochs": hp.epochs, "train_loss": rep.train_loss[-1], "val_loss": rep.val_loss[-1],
            "initial_val_loss": rep.initial_val_loss, "checksum": rep.checksum, "out": str(out)}


def _solve_one(inst, method, args, cfg, model=None):
    if method == "exact":
        sol = solve_exact(inst, SearchLimits(time_budget=cfg.get("label", {}).get("time_budget", math.inf)),
                          backend=cfg.get("label", {}).get("backend", "milp"))
    elif method == "greedy-u":
        sol = greedy_u(inst)
    elif method == "ptas-star":
        sol = ptas_star(inst, num_guesses=args.guesses or cfg.get("ptas_guesses", 250),
                        seed=stage_seed(args.seed, "ptas"))
    else:
        sol = learned_solve(inst, model, sort=getattr(args, "sort", None) or cfg.get("postproc_sort", "gain"))
    return sol


def cmd_solve(args, cfg):
    inst = load_instance(args.instance)
    model = None
    if args.method == "dclevernet":
        if not args.model:
            raise UsageError("--model is required for dclevernet")
        expect = None
        if any(v is not None for v in (args.Q, args.L, args.V, args.demand_norm)) or "codec" in cfg:
            expect = _codec(cfg, args).sidecar(inst.horizon.num_slots, len(inst.stations))
        model = load_model(args.model, expect_codec=expect)
    sol = _solve_one(inst, args.method, args, cfg, model)
    report = check_feasibility(inst, sol.schedule)
    if not report.feasible:
        raise SolveFailed(f"{args.method} produced an infeasible schedule: {report.violations[:3]}")
    doc = {"method": sol.method, "objective": sol.objective, "assignment": sol.schedule.to_json()}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, sort_keys=True))
    return {"method": sol.method, "objective": sol.objective, "assigned": len(sol.schedule.assigned()),
            "optimal": sol.optimal, "out": args.out}


def _bench_config(args, cfg) -> BenchConfig:
    doc = dict(cfg.get("bench", {}))
    if "gen" not in doc and "instance_glob" not in doc and args.instances is None:
        doc["gen"] = asdict(_gen_params(cfg, args, 0))
    if args.instances is not None:
        doc.pop("gen", None)
        doc["instance_glob"] = args.instances
    doc["seed"] = args.seed
    if "postproc_sort" in cfg:
        doc.setdefault("postproc_sort", cfg["postproc_sort"])
    if args.model:
        doc["model_path"] = args.model
    if args.methods:
        doc["methods"] = args.methods.split(",")
    doc["output"] = str(_out_dir(args, cfg) / "bench")
    doc["workers"] = _workers(cfg)
    return config_from_dict(doc)


def cmd_bench(args, cfg):
    bc = _bench_config(args, cfg)
    rep = run_benchmark(bc)
    agg = rep.aggregates()
    bad = sum(a["infeasible"] for a in agg.values())
    if bad:
        raise SolveFailed(f"{bad} benchmark runs returned infeasible schedules")
    return {"rows": len(rep.rows), "mean_ratio": {m: rep.mean_ratio(m) for m in bc.methods}, "out": bc.output}


def cmd_pipeline(args, cfg):
    """generate -> label -> encode -> train -> solve -> bench from one config."""
    out = _out_dir(args, cfg)
    ns = argparse.Namespace
    inst_dir = out / "instances"
    steps = {}
    steps["generate"] = cmd_generate(ns(out=str(inst_dir), count=None, seed=stage_seed(args.seed, "generate"),
                                        users=None, capacity=None, slots=None, slot_hours=None, profile=None,
                                        utility=None, evse=None), cfg)
    pattern = str(inst_dir / "instance_*.json")
    steps["label"] = cmd_label(ns(instances=[pattern], backend=None, time_budget=None), cfg)
    ds_path = out / "dataset.npz"
    steps["encode"] = cmd_encode(ns(instances=[pattern], out=str(ds_path), Q=None, L=None, V=None,
                                    demand_norm=None), cfg)
    model_path = out / "model.json"
    steps["train"] = cmd_train(ns(dataset=str(ds_path), hidden=None, epochs=None, lr=None, batch_size=None,
                                  seed=args.seed, out=str(model_path)), cfg)
    first = sorted(glob.glob(pattern))[0]
    steps["solve"] = cmd_solve(ns(instance=first, method="dclevernet", model=str(model_path), Q=None, L=None,
                                  V=None, demand_norm=None, guesses=None, seed=args.seed,
                                  out=str(out / "solve" / "dclevernet.json")), cfg)
    bench_cfg = dict(cfg)
    bench_cfg.setdefault("bench", {}).setdefault("methods", ["exact", "greedy-u", "ptas-star", "dclevernet"])
    steps["bench"] = cmd_bench(ns(instances=None, seed=stage_seed(args.seed, "bench"), model=str(model_path),
                                  methods=None, out=str(out), users=None, capacity=None, slots=None,
                                  slot_hours=None, profile=None, utility=None, evse=None), bench_cfg)
    return {"stages": list(steps), "val_loss": steps["train"]["val_loss"], "bench": steps["bench"]["mean_ratio"],
            "out": str(out)}


# --- argument parsing ---------------------------------------------------------

def _add_gen_flags(p):
    p.add_argument("--users", type=int, help="requests per instance")
    p.add_argument("--capacity", type=float, help="network capacity in kW")
    p.add_argument("--slots", type=int, help="slots in the horizon")
    p.add_argument("--slot-hours", type=float, dest="slot_hours")
    p.add_argument("--profile", type=int, choices=(1, 2, 3), help="bundled load profile")
    p.add_argument("--utility", choices=("linear", "random"))
    p.add_argument("--evse", type=int, help="chargers per station")


def _add_codec_flags(p):
    p.add_argument("--Q", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--V", type=int)
    p.add_argument("--demand-norm", dest="demand_norm", choices=("group-max", "capacity"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="evcrp", description="EV charging reservation scheduling toolkit")
    parser.add_argument("--version", action="version", version=f"evcrp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="synthetic instances")
    _add_gen_flags(p)
    p.add_argument("--count", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest-acn", parents=[common], help="instance from an ACN session CSV")
    p.add_argument("csv")
    _add_gen_flags(p)
    p.add_argument("--out", help="output instance file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", parents=[common], help="optimal schedules for instance files")
    p.add_argument("instances", nargs="+", help="instance files or globs")
    p.add_argument("--backend", choices=("milp", "bnb"))
    p.add_argument("--time-budget", type=float, dest="time_budget")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("encode", parents=[common], help="dataset from labelled instances")
    p.add_argument("instances", nargs="+")
    _add_codec_flags(p)
    p.add_argument("--out", help="dataset .npz path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", parents=[common], help="fit the network to a dataset")
    p.add_argument("dataset")
    p.add_argument("--hidden", help="'desk', 'full' or comma-separated widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--out", help="model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", parents=[common], help="schedule one instance")
    p.add_argument("instance")
    p.add_argument("--method", required=True, choices=("exact", "greedy-u", "ptas-star", "dclevernet"))
    p.add_argument("--model")
    p.add_argument("--guesses", type=int)
    p.add_argument("--sort", choices=("gain", "utility"), help="candidate order inside a cell")
    _add_codec_flags(p)
    p.add_argument("--out", help="schedule JSON path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", parents=[common], help="compare methods")
    _add_gen_flags(p)
    p.add_argument("--instances", help="instance file glob instead of generated instances")
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--model")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage from one config")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    summary = {"command": args.command, "seed": args.seed}
    try:
        cfg = _read_config(args.config)
        summary.update(args.func(args, cfg))
        code = EXIT_OK
    except UsageError as exc:
        code, summary["error"] = EXIT_USAGE, str(exc)
    except (CodecMismatch,) as exc:
        code, summary["error"] = EXIT_CODEC, str(exc)
    except (SolveFailed, LPInfeasible, RuntimeError) as exc:
        code, summary["error"] = EXIT_SOLVE, str(exc)
    except (InstanceError, ModelFileError, OSError, ValueError, KeyError, TypeError) as exc:
        code, summary["error"] = EXIT_INPUT, f"{type(exc).__name__}: {exc}"
    summary["status"] = code
    print(json.dumps(_strict(summary), sort_keys=True, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
