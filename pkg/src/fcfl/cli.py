"""Config-driven experiment front end.

Subcommands::

    fcfl run <config>
    fcfl budget-sweep <config> --w 1.0 0.8 ...
    fcfl compare <config>

Exit codes: 0 success, 2 when a run ends with a violated fairness budget,
3 on configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
import yaml

from . import data as D
from . import records
from .fedsim import EmptySplitError, FederatedProblem, split_by_key, split_by_predicate
from .model import ClientShard
from .optimizer import OptimizerConfig, run
from .smf import SmoothingState
from .synthetic import SyntheticPairProvider, SyntheticProblem, as_problem

log = logging.getLogger("fcfl")

CONFIG_VERSION = 1
EXIT_OK, EXIT_MCF, EXIT_CONFIG = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


@dataclass
class RunConfig:
    experiment: str
    budgets: dict
    metric: str = "dp"
    seed: int = 0
    output_dir: str = "out"
    optimizer: dict = None
    synthetic: dict = None
    tabular: dict = None
    compare: dict = None
    client_workers: int = 1
    config_version: int = CONFIG_VERSION

    def echo(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}


def _require(cond, field, message):
    if not cond:
        raise ConfigError(field, message)


def parse_config(raw: dict, base_dir: str = ".") -> RunConfig:
    """Validate a config mapping; every error names the offending field."""
    _require(isinstance(raw, dict), "<root>", "config must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        _require(key in known, key, "unknown field")
    _require(raw.get("config_version") == CONFIG_VERSION, "config_version", f"must be {CONFIG_VERSION}")
    exp = raw.get("experiment")
    _require(exp in ("synthetic", "tabular"), "experiment", "must be 'synthetic' or 'tabular'")
    _require(raw.get("metric", "dp") in ("dp", "eo"), "metric", "must be 'dp' or 'eo'")
    _require(isinstance(raw.get("seed", 0), int), "seed", "must be an integer")

    budgets = raw.get("budgets")
    _require(isinstance(budgets, dict), "budgets", "must be a mapping")
    _require(len(budgets) == 1 and next(iter(budgets)) in ("uniform", "client_specific"),
             "budgets", "exactly one of 'uniform' or 'client_specific'")
    if "uniform" in budgets:
        eps = budgets["uniform"]
        _require(isinstance(eps, (int, float)) and eps >= 0, "budgets.uniform", "must be a non-negative number")
    else:
        cs = budgets["client_specific"]
        _require(isinstance(cs, dict), "budgets.client_specific", "must be a mapping")
        w = cs.get("w", 1.0)
        _require(isinstance(w, (int, float)) and w >= 0, "budgets.client_specific.w", "must be a non-negative number")
        ref = cs.get("baseline_run_ref")
        if ref is not None:
            path = os.path.join(base_dir, ref)
            _require(os.path.exists(path), "budgets.client_specific.baseline_run_ref", f"path {ref!r} does not exist")

    opt = dict(raw.get("optimizer") or {})
    try:
        OptimizerConfig(**{**opt, "smoothing": SmoothingState(**(opt.get("smoothing") or {}))})
    except TypeError as exc:
        raise ConfigError("optimizer", str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("optimizer", str(exc)) from exc

    if exp == "synthetic":
        syn = raw.get("synthetic") or {}
        _require(isinstance(syn, dict), "synthetic", "must be a mapping")
        _require(syn.get("problem", "constrained") in ("constrained", "pair"), "synthetic.problem",
                 "must be 'constrained' or 'pair'")
        if syn.get("problem", "constrained") == "constrained":
            _require("uniform" in budgets, "budgets", "synthetic constrained runs take budgets.uniform as epsilon")
            _require(0 < budgets["uniform"] < 1, "budgets.uniform", "synthetic epsilon must lie in (0, 1)")
    else:
        tab = raw.get("tabular")
        _require(isinstance(tab, dict), "tabular", "required for tabular experiments")
        source = tab.get("source")
        _require(source in ("planted", "file"), "tabular.source", "must be 'planted' or 'file'")
        if source == "planted":
            _require(isinstance(tab.get("planted"), dict), "tabular.planted", "must be a mapping")
            try:
                D.PlantedSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in tab["planted"].items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError("tabular.planted", str(exc)) from exc
        else:
            f = tab.get("file")
            _require(isinstance(f, dict), "tabular.file", "must be a mapping")
            _require(isinstance(f.get("path"), str), "tabular.file.path", "must be a string")
            _require(os.path.exists(os.path.join(base_dir, f["path"])), "tabular.file.path",
                     f"path {f['path']!r} does not exist")
            _require(isinstance(f.get("schema"), dict), "tabular.file.schema", "must be a mapping")
            try:
                D.TableSchema(**f["schema"])
            except (TypeError, ValueError) as exc:
                raise ConfigError("tabular.file.schema", str(exc)) from exc
            split = f.get("split")
            _require(isinstance(split, dict) and len(split) == 1 and next(iter(split)) in ("predicate", "key"),
                     "tabular.file.split", "exactly one of 'predicate' or 'key'")
            tf = f.get("test_fraction", 0.0)
            _require(isinstance(tf, (int, float)) and 0 <= tf < 1, "tabular.file.test_fraction", "must lie in [0, 1)")
    cfg = RunConfig(**{k: copy.deepcopy(v) for k, v in raw.items()})
    cfg.optimizer = opt
    return cfg


def load_config(path) -> tuple:
    if not os.path.exists(path):
        raise ConfigError("<path>", f"config file {path!r} does not exist")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"not valid YAML: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    return parse_config(raw, base), base


def optimizer_config(cfg: RunConfig, **overrides) -> OptimizerConfig:
    opt = dict(cfg.optimizer or {})
    opt["smoothing"] = SmoothingState(**(opt.get("smoothing") or {}))
    opt.setdefault("seed", cfg.seed)
    opt.update(overrides)
    return OptimizerConfig(**opt)


# problem construction


def _planted_shards(tab: dict, seed: int) -> list:
    spec = {k: tuple(v) if isinstance(v, list) else v for k, v in tab["planted"].items()}
    spec.setdefault("seed", seed)
    return D.generate_planted(D.PlantedSpec(**spec)), []


def _file_shards(tab: dict, seed: int, base_dir: str):
    f = tab["file"]
    schema = D.TableSchema(**f["schema"])
    raw = D.load_table(os.path.join(base_dir, f["path"]), schema, sep=f.get("sep", ","))
    frame = raw.frame
    tf = float(f.get("test_fraction", 0.0))
    if tf > 0:
        tr, te = D.stratified_indices(
            schema.label_of(frame[schema.label_column]), schema.sensitive_of(frame[schema.sensitive_column]), tf, seed
        )
        train, test = frame.iloc[tr].reset_index(drop=True), frame.iloc[te].reset_index(drop=True)
    else:
        train, test = frame, None
    stats = D.fit_stats(train, schema)

    def parts(fr):
        split = f["split"]
        if "key" in split:
            return split_by_key(fr, split["key"])
        pred = split["predicate"]
        try:
            return list(split_by_predicate(fr, pred["column"], pred["value"], tuple(pred.get("ids", ("1", "0")))))
        except KeyError as exc:
            raise ConfigError("tabular.file.split.predicate", str(exc)) from exc

    def shards(fr):
        out = []
        for part in parts(fr):
            enc = D.encode(part, schema, stats)
            out.append(ClientShard(enc.features, enc.label, enc.sensitive, part.attrs["client_id"]))
        return out

    return shards(train), ([] if test is None else shards(test))


def build_problem(cfg: RunConfig, base_dir: str = ".", budgets=None):
    """Return (problem, test_shards) with ``budgets`` overriding the configured ones."""
    if cfg.experiment == "synthetic":
        syn = cfg.synthetic or {}
        n = int(syn.get("n", 20))
        if syn.get("problem", "constrained") == "pair":
            weights = tuple(syn.get("weights", (0.5, 0.5)))
            b = np.ones(2) if budgets is None else np.asarray(budgets, float)
            return SyntheticPairProvider(n=n, weights=weights, noise=syn.get("noise", 0.01), seed=cfg.seed,
                                         budgets=b), []
        eps = float(cfg.budgets["uniform"] if budgets is None else np.asarray(budgets).ravel()[0])
        sp = SyntheticProblem(n=n, epsilon=eps, feasible_init=bool(syn.get("feasible_init", False)),
                              noise=float(syn.get("noise", 0.01)), seed=cfg.seed)
        return as_problem(sp), []
    tab = cfg.tabular
    if tab["source"] == "planted":
        train, test = _planted_shards(tab, cfg.seed)
    else:
        train, test = _file_shards(tab, cfg.seed, base_dir)
    if budgets is None:
        budgets = np.full(len(train), float(cfg.budgets["uniform"])) if "uniform" in cfg.budgets else np.ones(len(train))
    problem = FederatedProblem(train, budgets, cfg.metric, workers=cfg.client_workers)
    return problem, test


def _with_test_metrics(report, problem, test):
    if test:
        report.extra["test_clients"] = problem.client_metrics(np.asarray(report.theta), test)
    return report


def execute(cfg: RunConfig, base_dir: str = ".", budgets=None, **overrides):
    problem, test = build_problem(cfg, base_dir, budgets)
    report = run(problem, optimizer_config(cfg, **overrides))
    return _with_test_metrics(report, problem, test)


def write_report(report, cfg: RunConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    traj = os.path.join(out_dir, "trajectory.jsonl")
    records.write_jsonl(traj, report.trajectory)
    summary = report.summary()
    summary["trajectory_path"] = "trajectory.jsonl"
    summary["run_config"] = cfg.echo()
    records.write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _baseline_disparities(cfg: RunConfig, base_dir: str) -> np.ndarray:
    ref = cfg.budgets["client_specific"].get("baseline_run_ref")
    if ref is not None:
        summary = records.read_jsonl(os.path.join(base_dir, ref))[-1]
        return np.array([c["soft_disparity"] for c in summary["clients"]])
    problem, _ = build_problem(cfg, base_dir)
    report = run(problem.with_budgets(np.ones(problem.num_clients)), optimizer_config(cfg))
    return np.array([c["soft_disparity"] for c in report.clients])


def _client_specific_budgets(cfg: RunConfig, base_dir: str, w: float, baseline=None) -> np.ndarray:
    if baseline is None:
        baseline = _baseline_disparities(cfg, base_dir)
    return w * baseline


# commands


def cmd_run(cfg: RunConfig, base_dir: str, out_dir: str) -> int:
    budgets = None
    if "client_specific" in cfg.budgets:
        _require(cfg.experiment == "tabular", "budgets.client_specific", "only tabular experiments")
        budgets = _client_specific_budgets(cfg, base_dir, float(cfg.budgets["client_specific"].get("w", 1.0)))
    report = execute(cfg, base_dir, budgets)
    summary = write_report(report, cfg, out_dir)
    _print_clients(summary["clients"])
    print(f"flags: {summary['flags']}  transition_iter: {summary['transition_iter']}  output: {out_dir}")
    return EXIT_MCF if report.flags["mcf_violated"] else EXIT_OK


def _sweep_member(args):
    cfg, base_dir, budgets, out_dir = args
    report = execute(cfg, base_dir, budgets)
    write_report(report, cfg, out_dir)
    return report.clients, report.flags


def cmd_budget_sweep(cfg: RunConfig, base_dir: str, out_dir: str, ws, workers: int = 1) -> int:
    _require("client_specific" in cfg.budgets, "budgets", "budget-sweep needs budgets.client_specific")
    _require(cfg.experiment == "tabular", "experiment", "budget-sweep needs a tabular experiment")
    _require(ws is not None and len(ws) > 0, "--w", "at least one w value is required")
    for w in ws:
        _require(w >= 0, "--w", "w values must be non-negative")
    baseline = _baseline_disparities(cfg, base_dir)
    jobs = []
    for w in ws:
        member = copy.deepcopy(cfg)
        member.budgets = {"client_specific": {**cfg.budgets["client_specific"], "w": float(w)}}
        jobs.append((member, base_dir, w * baseline, os.path.join(out_dir, f"w_{w:g}")))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]
    rows = []
    for w, (clients, flags) in zip(ws, results):
        rows.append({
            "record": "sweep",
            "w": float(w),
            "max_hard_disparity": max(c["hard_disparity"] for c in clients),
            "max_soft_disparity": max(c["soft_disparity"] for c in clients),
            "min_accuracy": min(c["accuracy"] for c in clients),
            "mcf_violated": flags["mcf_violated"],
        })
    os.makedirs(out_dir, exist_ok=True)
    records.write_jsonl(os.path.join(out_dir, "sweep.jsonl"), rows)
    print(f"{'w':>6} {'max_hard_disp':>14} {'max_soft_disp':>14} {'min_acc':>8}")
    for r in rows:
        print(f"{r['w']:>6.2f} {r['max_hard_disparity']:>14.4f} {r['max_soft_disparity']:>14.4f} {r['min_accuracy']:>8.4f}")
    return EXIT_MCF if any(r["mcf_violated"] for r in rows) else EXIT_OK


def cmd_compare(cfg: RunConfig, base_dir: str, out_dir: str) -> int:
    cmp = cfg.compare or {}
    modes = list(cmp.get("modes", ["fcfl", "fedave_fairreg"]))
    for m in modes:
        _require(m in ("fcfl", "fedave_fairreg"), "compare.modes", f"unknown mode {m!r}")
    budgets = None
    if "client_specific" in cfg.budgets:
        budgets = _client_specific_budgets(cfg, base_dir, float(cfg.budgets["client_specific"].get("w", 1.0)))
    rows = []
    for i, mode in enumerate(modes):
        overrides = {"mode": mode}
        if mode == "fedave_fairreg":
            overrides["fairreg_weight"] = float(cmp.get("fairreg_weight", 0.0))
            if cmp.get("baseline_weights") is not None:
                overrides["baseline_weights"] = tuple(cmp["baseline_weights"])
        report = execute(cfg, base_dir, budgets, **overrides)
        write_report(report, cfg, os.path.join(out_dir, f"{i}_{mode}"))
        for c in report.clients:
            rows.append({"record": "comparison", "run": i, "mode": mode, **c})
    os.makedirs(out_dir, exist_ok=True)
    records.write_jsonl(os.path.join(out_dir, "comparison.jsonl"), rows)
    ids = list(dict.fromkeys(r["client_id"] for r in rows))
    head = f"{'client':>8}" + "".join(f" {f'{i}:{m}':>24}" for i, m in enumerate(modes))
    print(head + "   (loss / hard disparity)")
    for cid in ids:
        line = f"{cid:>8}"
        for i in range(len(modes)):
            r = next(r for r in rows if r["run"] == i and r["client_id"] == cid)
            line += f" {r['loss']:>11.4f} / {r['hard_disparity']:>10.4f}"
        print(line)
    return EXIT_OK


def _print_clients(clients) -> None:
    print(f"{'client':>8} {'loss':>10} {'accuracy':>10} {'hard_disp':>10} {'soft_disp':>10}")
    for c in clients:
        acc = c.get("accuracy", float("nan"))
        print(f"{c['client_id']:>8} {c['loss']:>10.4f} {acc:>10.4f} {c['hard_disparity']:>10.4f} {c['soft_disparity']:>10.4f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="override the config output_dir")
    common.add_argument("--workers", type=int, default=1, help="parallel sweep members")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="fcfl", description="Fairness-constrained federated optimization runs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one experiment")
    sweep = sub.add_parser("budget-sweep", parents=[common], help="client-specific budget sweep")
    sweep.add_argument("--w", type=float, nargs="*", default=None, help="budget multipliers")
    sub.add_parser("compare", parents=[common], help="fcfl versus the scalarised baseline")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, base_dir = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        _require(args.workers >= 1, "--workers", "must be at least 1")
        out_dir = cfg.output_dir
        if args.command == "run":
            return cmd_run(cfg, base_dir, out_dir)
        if args.command == "budget-sweep":
            return cmd_budget_sweep(cfg, base_dir, out_dir, args.w, args.workers)
        return cmd_compare(cfg, base_dir, out_dir)
    except (ConfigError, D.SchemaError, D.DataFormatError, EmptySplitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
