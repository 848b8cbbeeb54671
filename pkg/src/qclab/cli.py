"""Command-line front end.

    qclab tau --delta 0.01 --d 500
    qclab boundary-dump --m 20 --z 2 --seed 0 --resolution 200 -o boundary.csv
    qclab run config.yaml

A config file has top-level keys ``kind``, ``seed``, ``output`` (a
directory), ``workers`` and a ``params`` section for the chosen kind.
Results go to ``results.csv`` and ``results.json``; the wall-clock
timestamp and worker count go to ``run-info.json`` so replays stay
byte-identical.  ``QCLAB_WORKERS`` overrides the worker count.

Exit codes: 0 ok, 2 config or domain error, 3 budget violation,
4 non-finite numerical result.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .adversaries import cap_adversary_deterministic, cap_adversary_randomized, emulate_general, emulate_iid
from .classifiers import BudgetExceeded, OneNNClassifier, implant_classifier, sample_cap_error
from .defense import axis_flip_bound, defense_wrap, flip_probability
from .geometry import cap_fraction, cap_threshold, make_rng, sample_uniform_sphere
from .harness import NumericalFailure, QCExperimentConfig, atomic_write_text, run_qc_experiment
from .intervals import grid_reach, two_intervals_ar_exact
from .metrics import estimate_ar_of_perturbation, estimate_ar_opt, estimate_preimage_mass, estimate_risk
from .tasks import ConcentricSpheresTask, TwoIntervalsTask, sample_two_intervals_poisson

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    def __init__(self, msg: str, mark=None):
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        super().__init__(where + msg)


# ---------------------------------------------------------------------------
# parameter sections


@dataclass
class TauParams:
    delta: float = 0.01
    d: int = 500
    model: str = "exact"


@dataclass
class CapAttackParams:
    d: int = 200
    delta: float = 0.01
    s: int = 800
    trials: int = 200
    deterministic: bool = False
    query_seed: int = 12345
    split_spheres: bool = False
    n_eval: int = 20000
    alpha: float = 0.5


@dataclass
class EmulateParams:
    mode: str = "iid"
    d: int = 200
    delta: float = 0.01
    k: int = 2
    s: int = 3200
    trials: int = 300
    n_eval: int = 20000
    split_spheres: bool = True


@dataclass
class TwoIntervalsParams:
    m: float = 500.0
    z: float = 3.0
    datasets: int = 50
    grid_step: float | None = None


@dataclass
class DefenseParams:
    d: int = 20
    s: float = 0.3
    displacements: list[float] = field(default_factory=lambda: [0.03, 0.075, 0.15, 0.3, 0.45])
    n_shifts: int = 2000
    delta: float = 0.05
    risk_shifts: int = 50
    n_eval: int = 20000


@dataclass
class BoundaryParams:
    m: float = 20.0
    z: float = 2.0
    resolution: int = 200


@dataclass
class QCParams:
    setting: str = "cap"
    adversary: str = "cap-randomized"
    budgets: list[int] = field(default_factory=lambda: [50, 200, 800, 3200])
    trials: int = 20
    alpha: float = 0.5
    kappa: float = 0.1
    d: int = 200
    delta: float = 0.01
    k: int = 1
    split_spheres: bool = False
    query_seed: int = 12345
    m: float = 1000.0
    z: float = 2.0
    quadrature_step: float | None = None
    eps: float | None = None
    n_eval: int = 20000


KINDS = {
    "tau": TauParams,
    "cap-attack": CapAttackParams,
    "emulate": EmulateParams,
    "two-intervals": TwoIntervalsParams,
    "qc-curve": QCParams,
    "defense-eval": DefenseParams,
    "boundary-dump": BoundaryParams,
}
TOP_KEYS = {"kind", "seed", "output", "workers", "params"}


@dataclass
class RunConfig:
    kind: str
    seed: int
    output: str
    workers: int
    params: object

    def resolved(self) -> dict:
        """The config as run; worker count is excluded since it cannot change results."""
        return {"kind": self.kind, "seed": self.seed, "params": dataclasses.asdict(self.params)}


def _mapping_marks(node) -> dict[str, object]:
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: (k.start_mark, v) for k, v in node.value}


def _coerce(name: str, value, typ, mark):
    """Check a YAML scalar against a dataclass field annotation."""
    t = str(typ)
    optional = "None" in t
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{name} must not be null", mark)
    if "list[int]" in t:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of integers", mark)
        return list(value)
    if "list[float]" in t:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of numbers", mark)
        return [float(v) for v in value]
    if t.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false", mark)
        return value
    if t.startswith("int"):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name} must be an integer", mark)
        return value
    if t.startswith("float"):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{name} must be a number", mark)
        return float(value)
    if t.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string", mark)
        return value
    return value


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc.problem}", exc.problem_mark) from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping", getattr(node, "start_mark", None))
    top = _mapping_marks(node)
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}", top[key][0])
    if "kind" not in doc:
        raise ConfigError("missing key 'kind'", node.start_mark)
    kind = doc["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}", top["kind"][0])
    seed = _coerce("seed", doc.get("seed", 0), "int", top.get("seed", (None,))[0])
    if seed < 0:
        raise ConfigError("seed must be non-negative", top["seed"][0])
    output = _coerce("output", doc.get("output", f"results/{kind}"), "str", top.get("output", (None,))[0])
    workers = _coerce("workers", doc.get("workers", 1), "int", top.get("workers", (None,))[0])
    if env.get("QCLAB_WORKERS"):
        try:
            workers = int(env["QCLAB_WORKERS"])
        except ValueError:
            raise ConfigError("QCLAB_WORKERS must be an integer") from None
    if workers < 1:
        raise ConfigError("workers must be >= 1", top.get("workers", (None,))[0])
    cls = KINDS[kind]
    raw = doc.get("params") or {}
    if not isinstance(raw, dict):
        raise ConfigError("params must be a mapping", top["params"][0])
    pmarks = _mapping_marks(top["params"][1]) if "params" in top else {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for kind {kind!r}", pmarks[key][0])
        kwargs[key] = _coerce(key, value, fields[key].type, pmarks[key][0])
    try:
        params = cls(**kwargs)
        if kind == "qc-curve":
            QCExperimentConfig(seed=seed, **dataclasses.asdict(params))
    except ValueError as exc:
        raise ConfigError(str(exc), top.get("params", (node.start_mark,))[0]) from None
    return RunConfig(kind, seed, output, workers, params)


# ---------------------------------------------------------------------------
# experiments; each returns (header, rows, summary)


def _check_finite(rows, summary):
    for row in rows:
        for v in row:
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericalFailure(f"non-finite value in row {row}")
    for k, v in summary.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise NumericalFailure(f"non-finite summary value {k}")


def tau_report(delta: float, d: int, model: str = "exact") -> dict:
    tau = cap_threshold(delta, d, model)
    out = {"delta": delta, "d": d, "model": model, "tau": tau, "sqrt_d_tau": math.sqrt(d) * tau}
    if model == "exact":
        out["residual"] = cap_fraction(tau, d) - delta
    return out


def _run_tau(cfg: RunConfig, workers: int):
    p = cfg.params
    rep = tau_report(p.delta, p.d, p.model)
    header = list(rep)
    return header, [[rep[k] for k in header]], {}


def _run_cap_attack(cfg: RunConfig, workers: int):
    p = cfg.params
    task = ConcentricSpheresTask(p.d)
    eps = cap_threshold(p.delta, p.d)
    qm = qp = None
    if p.deterministic:
        qrng = make_rng(p.query_seed, 0)
        qm = sample_uniform_sphere(p.d, 1.0, qrng, p.s)
        qp = sample_uniform_sphere(p.d, 1.3, qrng, p.s)
    rows = []
    for t in range(p.trials):
        rng = make_rng(cfg.seed, t)
        E = sample_cap_error(p.delta, 1, p.d, rng)
        oracle = implant_classifier(task.ground_truth, E, p.d, budget=2 * p.s)
        if p.deterministic:
            rep = cap_adversary_deterministic(oracle, qm, qp, eps, split_spheres=p.split_spheres)
        else:
            rep = cap_adversary_randomized(oracle, p.s, eps, rng, split_spheres=p.split_spheres)
        X = task.sample_support(p.n_eval, rng)
        pre = estimate_preimage_mass(oracle, rep.perturbation, task, X=X)
        ar_p = estimate_ar_of_perturbation(oracle, rep.perturbation, task, X=X)
        ar_opt = estimate_ar_opt(oracle, task, eps, X=X)
        # 1/6 of the sphere holding the cap is 1/12 of the full distribution
        ok = pre.value >= 1 / 12 and ar_p.value >= p.alpha * ar_opt.value
        rows.append([t, rep.queries_used, int(rep.info["hits"]), pre.value, ar_p.value, ar_opt.value, int(ok)])
    rate = float(np.mean([r[-1] for r in rows]))
    return ["trial", "queries_used", "hits", "preimage_mass", "ar_p", "ar_opt", "success"], rows, \
        {"success_rate": rate, "eps": eps}


def _inner_cap(s: int, eps: float, split: bool):
    def inner(oracle, rng):
        return cap_adversary_randomized(oracle, s, eps, rng, split_spheres=split)
    return inner


def _run_emulate(cfg: RunConfig, workers: int):
    p = cfg.params
    if p.mode not in ("iid", "general"):
        raise ConfigError(f"unknown emulate mode {p.mode!r}")
    task = ConcentricSpheresTask(p.d)
    eps = cap_threshold(p.delta / p.k, p.d)
    inner = _inner_cap(p.s, eps, p.split_spheres)
    rows = []
    for t in range(p.trials):
        rng = make_rng(cfg.seed, t)
        E = sample_cap_error(p.delta / p.k, 1, p.d, rng)
        oracle = implant_classifier(task.ground_truth, E, p.d)
        if p.mode == "iid":
            rep = emulate_iid(oracle, inner, p.delta, p.k, rng)
            inner_q, free = rep.info["inner"].queries_used, rep.info["free_queries"]
        else:
            G = lambda r: sample_uniform_sphere(p.d, 1.0, r, p.k)
            rep = emulate_general(oracle, inner, G, p.k, rng)
            inner_q, free = rep.info["inner_queries"], 0
        X = task.sample_support(p.n_eval, rng)
        ar_p = estimate_ar_of_perturbation(oracle, rep.perturbation, task, X=X, rng=rng).value
        ar_opt = estimate_ar_opt(oracle, task, eps, X=X).value
        ratio = ar_p / ar_opt if ar_opt > 0 else 1.0
        rows.append([t, rep.queries_used, inner_q, free, ar_p, ar_opt, ratio, int(ratio >= 1 / (2 * p.k))])
    rate = float(np.mean([r[-1] for r in rows]))
    return ["trial", "real_queries", "inner_queries", "free_queries", "ar_p", "ar_opt", "ratio", "success"], \
        rows, {"success_rate": rate, "eps": eps}


def _run_two_intervals(cfg: RunConfig, workers: int):
    p = cfg.params
    step = p.grid_step or p.z / 2000.0
    eps = p.z / 10.0
    rows = []
    for i in range(p.datasets):
        ds = sample_two_intervals_poisson(p.m, p.z, make_rng(cfg.seed, i))
        exact = two_intervals_ar_exact(ds, p.m, p.z, eps, end_step=step)
        line = grid_reach(ds, p.m, p.z, eps, step, model="line").total
        nn = grid_reach(ds, p.m, p.z, eps, step, model="samples").total
        rel = lambda b: abs(exact.length - b) / b if b > 0 else (0.0 if exact.length == 0 else math.inf)
        rows.append([i, len(ds), exact.gap_length, exact.end_length, exact.fraction,
                     line / (2 * p.m), nn / (2 * p.m), rel(line), rel(nn)])
    return ["dataset", "n_samples", "gap_length", "end_length", "exact_fraction", "grid_line_fraction",
            "grid_1nn_fraction", "rel_err_line", "rel_err_1nn"], rows, \
        {"max_rel_err_line": max(r[7] for r in rows), "max_rel_err_1nn": max(r[8] for r in rows)}


def _run_defense(cfg: RunConfig, workers: int):
    p = cfg.params
    rng = make_rng(cfg.seed, 0)
    task = ConcentricSpheresTask(p.d)
    E = sample_cap_error(p.delta, 1, p.d, rng)
    base = implant_classifier(task.ground_truth, E, p.d)
    rows = []
    for j, dist in enumerate(p.displacements):
        x = task.sample_sphere(-1, 1, rng)[0]
        e = np.zeros(p.d)
        e[j % p.d] = dist
        axis = flip_probability(base.rule, p.s, x, x + e, p.n_shifts, rng)
        u = sample_uniform_sphere(p.d, dist, rng)
        gen = flip_probability(base.rule, p.s, x, x + u, p.n_shifts, rng)
        rows.append([dist, axis.value, axis.stderr, min(dist / p.s, 1.0), gen.value, gen.stderr,
                     axis_flip_bound(u, p.s)])
    X = task.sample_support(p.n_eval, rng)
    r0 = estimate_risk(base.rule, task, X=X).value
    infl = [estimate_risk(defense_wrap(base.rule, p.s, rng, p.d), task, X=X).value / r0 for _ in range(p.risk_shifts)]
    return ["displacement", "axis_flip", "axis_stderr", "axis_bound", "general_flip", "general_stderr",
            "general_bound"], rows, {"base_risk": r0, "median_risk_inflation": float(np.median(infl))}


def boundary_rows(m: float, z: float, seed: int, resolution: int):
    if resolution < 10:
        raise ValueError("resolution must be >= 10")
    task = TwoIntervalsTask(m, z)
    f = OneNNClassifier(sample_two_intervals_poisson(m, z, make_rng(seed, 0)))
    nx = max(resolution, int(round(resolution * m / z)))
    xs = np.linspace(0.0, m, nx)
    ys = np.linspace(0.0, z, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    lab = np.asarray(f(pts))
    err = lab != task.ground_truth(pts)
    return pts, lab, err


def boundary_csv(m: float, z: float, seed: int, resolution: int) -> str:
    pts, lab, err = boundary_rows(m, z, seed, resolution)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "label", "in_error_set"])
    for (x, y), l, e in zip(pts, lab, err):
        w.writerow([format(x, ".17g"), format(y, ".17g"), int(l), int(e)])
    return buf.getvalue()


def _run_boundary(cfg: RunConfig, workers: int):
    p = cfg.params
    pts, lab, err = boundary_rows(p.m, p.z, cfg.seed, p.resolution)
    rows = [[float(x), float(y), int(l), int(e)] for (x, y), l, e in zip(pts, lab, err)]
    return ["x", "y", "label", "in_error_set"], rows, {"error_cells": int(err.sum())}


def _run_qc(cfg: RunConfig, workers: int):
    res = run_qc_experiment(QCExperimentConfig(seed=cfg.seed, **dataclasses.asdict(cfg.params)), workers)
    rows = [[r.budget, r.trial, r.queries_used, r.ar_p, r.ar_opt, int(r.success)] for r in res.records]
    summary = {str(b): list(v) for b, v in res.rates().items()}
    return ["budget", "trial", "queries_used", "ar_p", "ar_opt", "success"], rows, \
        {"rates": summary, "empirical_qc": res.empirical_qc, "budget_violations": res.budget_violations}


RUNNERS = {
    "tau": _run_tau,
    "cap-attack": _run_cap_attack,
    "emulate": _run_emulate,
    "two-intervals": _run_two_intervals,
    "qc-curve": _run_qc,
    "defense-eval": _run_defense,
    "boundary-dump": _run_boundary,
}


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def execute(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Run one config and write its result files; returns the summary."""
    header, rows, summary = RUNNERS[cfg.kind](cfg, cfg.workers)
    _check_finite(rows, summary)
    out = Path(out_dir if out_dir is not None else cfg.output)
    atomic_write_text(out / "results.csv", render_csv(header, rows))
    doc = {"config": cfg.resolved(), "summary": summary, "version": __version__}
    atomic_write_text(out / "results.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    info = {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "workers": cfg.workers}
    atomic_write_text(out / "run-info.json", json.dumps(info, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# entry points


def cmd_tau(args) -> int:
    try:
        rep = tau_report(args.delta, args.d, args.model)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"tau            {rep['tau']:.12g}")
    print(f"sqrt(d)*tau    {rep['sqrt_d_tau']:.12g}")
    if "residual" in rep:
        print(f"residual       {rep['residual']:.3e}")
    return EXIT_OK


def cmd_boundary_dump(args) -> int:
    try:
        text = boundary_csv(args.m, args.z, args.seed, args.resolution)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(args.output, text)
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        if args.workers is not None:
            cfg.workers = args.workers
        summary = execute(cfg, args.output)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BudgetExceeded as exc:
        print(f"budget violation: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key, value in summary.items():
        print(f"{key:<20} {value}")
    if summary.get("budget_violations"):
        return EXIT_BUDGET
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qclab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tau", help="cap threshold for a given cap fraction")
    t.add_argument("--delta", type=float, required=True)
    t.add_argument("--d", type=int, required=True)
    t.add_argument("--model", choices=["exact", "gaussian"], default="exact")
    t.set_defaults(func=cmd_tau)

    b = sub.add_parser("boundary-dump", help="1-NN label raster on the two-intervals task")
    b.add_argument("--m", type=float, default=20.0)
    b.add_argument("--z", type=float, default=2.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--resolution", type=int, default=200)
    b.add_argument("-o", "--output", default="-")
    b.set_defaults(func=cmd_boundary_dump)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("-o", "--output", default=None, help="override the output directory")
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
