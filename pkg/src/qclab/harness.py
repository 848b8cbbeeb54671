"""Query-complexity experiments: success rate as a function of query budget.

Every trial draws its own generator from (seed, budget index, trial index),
so results do not depend on how trials are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from scipy.stats import binomtest

from .adversaries import (
    IdentityPerturbation,
    binary_search_line_attack,
    cap_adversary_deterministic,
    cap_adversary_randomized,
    probe_scan_attack,
)
from .classifiers import BudgetExceeded, ClassifierOracle, OneNNClassifier, implant_classifier, sample_cap_error, train_linear_erm
from .geometry import cap_threshold, make_rng, sample_uniform_sphere
from .metrics import estimate_ar_of_perturbation, estimate_ar_opt, success_event
from .tasks import ConcentricSpheresTask, TwoIntervalsTask, sample_two_intervals_poisson

__all__ = [
    "QCExperimentConfig",
    "TrialRecord",
    "QCExperimentResult",
    "NumericalFailure",
    "run_qc_experiment",
    "run_trial",
    "atomic_write_text",
]

SETTINGS = {
    "cap": ("cap-randomized", "cap-deterministic"),
    "intervals-linear": ("binary-search",),
    "intervals-1nn": ("probe-scan",),
}


class NumericalFailure(RuntimeError):
    pass


@dataclass
class QCExperimentConfig:
    setting: str = "cap"
    adversary: str = "cap-randomized"
    budgets: list[int] = field(default_factory=lambda: [50, 200, 800])
    trials: int = 20
    seed: int = 0
    alpha: float = 0.5
    kappa: float = 0.1
    # concentric spheres
    d: int = 200
    delta: float = 0.01
    k: int = 1
    split_spheres: bool = False
    query_seed: int = 12345
    # two intervals
    m: float = 1000.0
    z: float = 2.0
    quadrature_step: float | None = None
    eps: float | None = None
    n_eval: int = 20000

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; choose from {sorted(SETTINGS)}")
        if self.adversary not in SETTINGS[self.setting]:
            raise ValueError(f"adversary {self.adversary!r} does not apply to setting {self.setting!r}")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.kappa <= 1.0:
            raise ValueError("alpha and kappa must lie in [0, 1]")
        if not self.budgets or any(b < 0 for b in self.budgets):
            raise ValueError("budgets must be non-negative")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ValueError("budgets must be strictly increasing")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def resolved_eps(self) -> float:
        if self.eps is not None:
            return float(self.eps)
        if self.setting == "cap":
            return cap_threshold(self.delta / self.k, self.d)
        return self.z / 10.0


@dataclass(frozen=True)
class TrialRecord:
    budget: int
    trial: int
    queries_used: int
    ar_p: float
    ar_opt: float
    success: bool
    budget_violation: bool = False


@dataclass
class QCExperimentResult:
    config: QCExperimentConfig
    records: list[TrialRecord]

    def rates(self) -> dict[int, tuple[float, float, float]]:
        out = {}
        for b in self.config.budgets:
            rs = [r for r in self.records if r.budget == b]
            k = sum(r.success for r in rs)
            ci = binomtest(k, len(rs)).proportion_ci(method="wilson")
            out[b] = (k / len(rs), float(ci.low), float(ci.high))
        return out

    @property
    def empirical_qc(self) -> int | None:
        """Least budget whose success rate reaches 1 - kappa."""
        for b, (rate, _, _) in self.rates().items():
            if rate >= 1.0 - self.config.kappa:
                return b
        return None

    @property
    def budget_violations(self) -> int:
        return sum(r.budget_violation for r in self.records)

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["budget", "trial", "queries_used", "ar_p", "ar_opt", "success"])
        for r in self.records:
            w.writerow([r.budget, r.trial, r.queries_used, format(r.ar_p, ".17g"), format(r.ar_opt, ".17g"),
                        int(r.success)])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {
            "config": asdict(self.config),
            "summary": {str(b): list(v) for b, v in self.rates().items()},
            "empirical_qc": self.empirical_qc,
            "budget_violations": self.budget_violations,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# trials


def _frozen_queries(cfg: QCExperimentConfig, s: int):
    rng = make_rng(cfg.query_seed, 0)
    return sample_uniform_sphere(cfg.d, 1.0, rng, s), sample_uniform_sphere(cfg.d, 1.3, rng, s)


def _attack(cfg: QCExperimentConfig, oracle, budget: int, eps: float, rng):
    if cfg.adversary == "cap-randomized":
        s = budget // 2
        if s < 1:
            return IdentityPerturbation(eps, radial=True), 0
        rep = cap_adversary_randomized(oracle, s, eps, rng, split_spheres=cfg.split_spheres)
    elif cfg.adversary == "cap-deterministic":
        s = budget // 2
        if s < 1:
            return IdentityPerturbation(eps, radial=True), 0
        qm, qp = _frozen_queries(cfg, s)
        rep = cap_adversary_deterministic(oracle, qm, qp, eps, split_spheres=cfg.split_spheres)
    elif cfg.adversary == "binary-search":
        steps = budget // 2
        if steps < 1:
            return IdentityPerturbation(eps), 0
        rep = binary_search_line_attack(oracle, cfg.m, cfg.z, cfg.z / 2.0**steps, eps)
    else:
        if budget < 2:
            return IdentityPerturbation(eps), 0
        rep = probe_scan_attack(oracle, cfg.m, cfg.z, eps, budget)
    return rep.perturbation, rep.queries_used


def run_trial(cfg: QCExperimentConfig, budget_index: int, trial: int) -> TrialRecord:
    budget = cfg.budgets[budget_index]
    rng = make_rng(cfg.seed, (budget_index << 32) + trial)
    eps = cfg.resolved_eps()
    if cfg.setting == "cap":
        task = ConcentricSpheresTask(cfg.d)
        E = sample_cap_error(cfg.delta, cfg.k, cfg.d, rng)
        oracle = implant_classifier(task.ground_truth, E, cfg.d, budget=budget)
        X = task.sample_support(cfg.n_eval, rng)
    else:
        task = TwoIntervalsTask(cfg.m, cfg.z)
        S = sample_two_intervals_poisson(cfg.m, cfg.z, rng)
        rule = train_linear_erm(S, rng) if cfg.setting == "intervals-linear" else OneNNClassifier(S)
        oracle = ClassifierOracle(rule, 2, budget=budget)
        if cfg.setting == "intervals-1nn":
            X = task.quadrature_points(cfg.quadrature_step or cfg.z / 500.0)
        else:
            X = task.sample_support(cfg.n_eval, rng)
    violation = False
    try:
        pert, used = _attack(cfg, oracle, budget, eps, rng)
    except BudgetExceeded:
        pert, used, violation = IdentityPerturbation(eps), oracle.query_count, True
    ar_opt = estimate_ar_opt(oracle, task, eps, X=X)
    ar_p = estimate_ar_of_perturbation(oracle, pert, task, X=X, rng=rng)
    if not (math.isfinite(ar_p.value) and math.isfinite(ar_opt.value)):
        raise NumericalFailure(f"non-finite estimate in trial {trial} at budget {budget}")
    ok = (not violation) and success_event(ar_p, ar_opt, cfg.alpha)
    return TrialRecord(budget, trial, used, ar_p.value, ar_opt.value, bool(ok), violation)


def _run_packed(args):
    cfg, bi, t = args
    return run_trial(cfg, bi, t)


def run_qc_experiment(cfg: QCExperimentConfig, workers: int = 1) -> QCExperimentResult:
    jobs = [(cfg, bi, t) for bi in range(len(cfg.budgets)) for t in range(cfg.trials)]
    if workers <= 1:
        records = [_run_packed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_packed, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    records.sort(key=lambda r: (cfg.budgets.index(r.budget), r.trial))
    return QCExperimentResult(cfg, records)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
